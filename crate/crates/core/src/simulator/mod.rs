//! Deterministic scenario generation.
//!
//! Stands in for the sensor front-end: ground-truth ego and object
//! trajectories are generated from piecewise constant-velocity /
//! constant-turn segments, and per-frame measurements (noisy odometry plus
//! noisy ego-frame detections with misses and clutter) are derived from
//! them. Measurement synthesis for frame `t` is a pure function of
//! (seed, spec, t), so streams are bit-reproducible and frames can be
//! generated in any order.
//!
//! Motion is planar (z = 0, roll = pitch = 0) so oracles stay
//! hand-checkable; the estimation pipeline itself runs on full SE(3).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, Twist};
use crate::tracking::{FrameId, ObjectClass};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Template {
    Highway,
    Intersection,
    StaticUrban,
}

impl std::fmt::Display for Template {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Template::Highway => "highway",
            Template::Intersection => "intersection",
            Template::StaticUrban => "static-urban",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Template {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "highway" => Ok(Template::Highway),
            "intersection" => Ok(Template::Intersection),
            "static-urban" => Ok(Template::StaticUrban),
            other => Err(format!(
                "unknown template `{other}` (expected highway, intersection or static-urban)"
            )),
        }
    }
}

/// Measurement noise model. Sigmas are standard deviations; odometry noise
/// is applied as a right-multiplied exp of a zero-mean twist, detection
/// noise likewise on the ego-frame pose.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Odometry yaw noise (rad per frame).
    pub odo_rot_sigma: f64,
    /// Odometry position noise per axis (m per frame).
    pub odo_pos_sigma: f64,
    /// Detection position noise per axis (m).
    pub det_pos_sigma: f64,
    /// Detection yaw noise (rad).
    pub det_yaw_sigma: f64,
    /// Probability a visible object yields no detection.
    pub miss_prob: f64,
    /// Expected clutter detections per frame (Poisson rate).
    pub clutter_rate: f64,
    /// Planar detection range (m).
    pub detection_range: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            odo_rot_sigma: 0.004,
            odo_pos_sigma: 0.05,
            det_pos_sigma: 0.05,
            det_yaw_sigma: 0.01,
            miss_prob: 0.05,
            clutter_rate: 0.2,
            detection_range: 40.0,
        }
    }
}

impl NoiseSpec {
    /// All noise off: measurements are exactly consistent with the ground
    /// truth.
    pub fn noise_free() -> Self {
        NoiseSpec {
            odo_rot_sigma: 0.0,
            odo_pos_sigma: 0.0,
            det_pos_sigma: 0.0,
            det_yaw_sigma: 0.0,
            miss_prob: 0.0,
            clutter_rate: 0.0,
            detection_range: 40.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub template: Template,
    pub seed: u64,
    pub frames: usize,
    /// Number of objects to place (templates round this to their layout).
    pub objects: usize,
    pub noise: NoiseSpec,
}

impl ScenarioSpec {
    pub fn new(template: Template, seed: u64) -> Self {
        let (frames, objects) = match template {
            Template::Highway => (100, 6),
            Template::Intersection => (60, 4),
            Template::StaticUrban => (100, 12),
        };
        ScenarioSpec {
            template,
            seed,
            frames,
            objects,
            noise: NoiseSpec::default(),
        }
    }

    fn validate(&self) -> Result<(), SimulatorError> {
        let mut problems = Vec::new();
        let n = &self.noise;
        for (name, v) in [
            ("odo_rot_sigma", n.odo_rot_sigma),
            ("odo_pos_sigma", n.odo_pos_sigma),
            ("det_pos_sigma", n.det_pos_sigma),
            ("det_yaw_sigma", n.det_yaw_sigma),
            ("clutter_rate", n.clutter_rate),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                problems.push(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&n.miss_prob) {
            problems.push(format!("miss_prob must be in [0, 1], got {}", n.miss_prob));
        }
        if !(n.detection_range > 0.0) {
            problems.push(format!(
                "detection_range must be > 0, got {}",
                n.detection_range
            ));
        }
        if self.frames == 0 {
            problems.push("frames must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SimulatorError::InvalidSpec { problems })
        }
    }
}

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("invalid scenario spec: {problems:?}")]
    InvalidSpec { problems: Vec<String> },
}

/// Ground truth of one object over the whole run.
#[derive(Clone, Debug)]
pub struct ObjectTruth {
    pub id: u64,
    pub class: ObjectClass,
    pub is_static: bool,
    pub poses: Vec<Pose>,
}

/// Ground-truth world plus the noise model: the source of all measurements
/// and the oracle for the tests.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub ego: Vec<Pose>,
    pub objects: Vec<ObjectTruth>,
}

/// One simulated detection, in the canonical planar scalars (x, y, z, yaw)
/// the dataset files carry, so exported streams re-import bit-identically.
#[derive(Clone, Debug, Serialize)]
pub struct SimDetection {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub class: ObjectClass,
    pub score: f64,
    /// Ground-truth object id; `None` for clutter.
    pub truth_id: Option<u64>,
}

impl SimDetection {
    /// Ego-frame pose of the detection.
    pub fn body_pose(&self) -> Pose {
        Pose::from_xyz_yaw(self.x, self.y, self.z, self.yaw)
    }
}

/// Measurements of one frame.
#[derive(Clone, Debug, Serialize)]
pub struct FrameMeasurement {
    pub frame: FrameId,
    /// Relative transform from the previous frame; `None` at frame 0.
    pub odometry: Option<Pose>,
    pub detections: Vec<SimDetection>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(stream)))
}

/// Unicycle integration: (speed m/frame, yaw rate rad/frame) segments.
fn integrate(start: (f64, f64, f64), segments: &[(usize, f64, f64)], frames: usize) -> Vec<Pose> {
    let (mut x, mut y, mut yaw) = start;
    let mut poses = Vec::with_capacity(frames);
    poses.push(Pose::from_xyz_yaw(x, y, 0.0, yaw));
    let mut plan = segments.iter().flat_map(|&(n, v, w)| {
        std::iter::repeat((v, w)).take(n)
    });
    let mut last = (0.0, 0.0);
    for _ in 1..frames {
        let (v, w) = plan.next().unwrap_or(last);
        last = (v, w);
        yaw += w;
        x += v * yaw.cos();
        y += v * yaw.sin();
        poses.push(Pose::from_xyz_yaw(x, y, 0.0, yaw));
    }
    poses
}

/// Build the ground-truth world for a spec.
pub fn build_scenario(spec: &ScenarioSpec) -> Result<Scenario, SimulatorError> {
    spec.validate()?;
    let mut rng = derived_rng(spec.seed, 0xC0FFEE);
    let frames = spec.frames;
    let (ego, objects) = match spec.template {
        Template::Highway => highway(spec, frames, &mut rng),
        Template::Intersection => intersection(spec, frames, &mut rng),
        Template::StaticUrban => static_urban(spec, frames, &mut rng),
    };
    Ok(Scenario {
        spec: *spec,
        ego,
        objects,
    })
}

/// Ego on a mostly straight road surrounded by moving cars in neighboring
/// lanes, most going the same direction plus occasional oncoming traffic.
fn highway(
    spec: &ScenarioSpec,
    frames: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Pose>, Vec<ObjectTruth>) {
    let straight = frames * 3 / 5;
    let ego = integrate(
        (0.0, 0.0, 0.0),
        &[(straight, 1.2, 0.0), (frames - straight, 1.2, 0.0015)],
        frames,
    );
    let lanes = [-3.5, 3.5, -7.0, 7.0];
    let objects = (0..spec.objects as u64)
        .map(|id| {
            let lane = lanes[id as usize % lanes.len()] + rng.random_range(-0.4..0.4);
            let oncoming = id % 4 == 3;
            let (x0, speed, heading) = if oncoming {
                (
                    rng.random_range(50.0..90.0),
                    rng.random_range(1.0..2.0),
                    std::f64::consts::PI,
                )
            } else {
                (rng.random_range(-12.0..25.0), rng.random_range(0.8..1.6), 0.0)
            };
            ObjectTruth {
                id,
                class: ObjectClass::Car,
                is_static: false,
                poses: integrate((x0, lane, heading), &[(frames, speed, 0.0)], frames),
            }
        })
        .collect();
    (ego, objects)
}

/// Ego slowly approaching a crossing while pairs of objects pass each other
/// head-on; their paths cross within the association gate, the situation
/// that trips nearest-last-position matching.
fn intersection(
    spec: &ScenarioSpec,
    frames: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Pose>, Vec<ObjectTruth>) {
    let ego = integrate((-18.0, 0.0, 0.0), &[(frames, 0.35, 0.0)], frames);
    let mut objects = Vec::new();
    let pairs = (spec.objects.max(2) + 1) / 2;
    for p in 0..pairs {
        let crossing_x = 2.0 + 7.0 * p as f64 + rng.random_range(-1.5..1.5);
        let lateral = rng.random_range(0.25..0.9);
        let meet = rng.random_range((frames as f64 * 0.35)..(frames as f64 * 0.6));
        let (class, va, vb) = if p % 2 == 1 {
            (ObjectClass::Pedestrian, rng.random_range(0.5..0.8), rng.random_range(0.5..0.8))
        } else {
            (ObjectClass::Car, rng.random_range(1.2..1.8), rng.random_range(1.2..1.8))
        };
        // southbound object
        objects.push(ObjectTruth {
            id: (2 * p) as u64,
            class,
            is_static: false,
            poses: integrate(
                (crossing_x - lateral / 2.0, va * meet, -std::f64::consts::FRAC_PI_2),
                &[(frames, va, 0.0)],
                frames,
            ),
        });
        // northbound object on an almost coincident line
        objects.push(ObjectTruth {
            id: (2 * p + 1) as u64,
            class,
            is_static: false,
            poses: integrate(
                (crossing_x + lateral / 2.0, -vb * meet, std::f64::consts::FRAC_PI_2),
                &[(frames, vb, 0.0)],
                frames,
            ),
        });
    }
    (ego, objects)
}

/// Ego driving past parked vehicles: every object is a fixed landmark.
fn static_urban(
    spec: &ScenarioSpec,
    frames: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Pose>, Vec<ObjectTruth>) {
    let straight = frames / 2;
    let ego = integrate(
        (0.0, 0.0, 0.0),
        &[(straight, 1.0, 0.0), (frames - straight, 1.0, 0.001)],
        frames,
    );
    let objects = (0..spec.objects as u64)
        .map(|id| {
            let along = 6.0 + 7.5 * id as f64 + rng.random_range(-2.0..2.0);
            let side = if id % 2 == 0 { 1.0 } else { -1.0 };
            let offset = side * rng.random_range(4.0..8.0);
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let pose = Pose::from_xyz_yaw(along, offset, 0.0, yaw);
            ObjectTruth {
                id,
                class: ObjectClass::Car,
                is_static: true,
                poses: vec![pose; frames],
            }
        })
        .collect();
    (ego, objects)
}

impl Scenario {
    pub fn frames(&self) -> usize {
        self.spec.frames
    }

    /// All measurements of the run, in frame order.
    pub fn emit_all(&self) -> Vec<FrameMeasurement> {
        (0..self.spec.frames).map(|t| emit_frame(self, t)).collect()
    }
}

fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * sigma
}

/// Measurements of frame `t`: noisy odometry and the noisy, range-limited
/// detection list with misses and Poisson clutter.
pub fn emit_frame(scenario: &Scenario, t: usize) -> FrameMeasurement {
    assert!(t < scenario.spec.frames, "frame {t} out of range");
    let noise = &scenario.spec.noise;
    let mut rng = derived_rng(scenario.spec.seed, t as u64 + 1);

    let odometry = (t > 0).then(|| {
        let gt = scenario.ego[t - 1].between(&scenario.ego[t]);
        let twist = Twist::new(
            nalgebra::Vector3::new(0.0, 0.0, gauss(&mut rng, noise.odo_rot_sigma)),
            nalgebra::Vector3::new(
                gauss(&mut rng, noise.odo_pos_sigma),
                gauss(&mut rng, noise.odo_pos_sigma),
                0.0,
            ),
        );
        gt.retract(&twist)
    });

    let ego = &scenario.ego[t];
    let mut detections = Vec::new();
    for object in &scenario.objects {
        let world = &object.poses[t];
        if (world.xy() - ego.xy()).norm() > noise.detection_range {
            continue;
        }
        let body_gt = ego.between(world);
        let twist = Twist::new(
            nalgebra::Vector3::new(0.0, 0.0, gauss(&mut rng, noise.det_yaw_sigma)),
            nalgebra::Vector3::new(
                gauss(&mut rng, noise.det_pos_sigma),
                gauss(&mut rng, noise.det_pos_sigma),
                0.0,
            ),
        );
        let missed = rng.random::<f64>() < noise.miss_prob;
        if missed {
            continue;
        }
        let noisy = body_gt.retract(&twist);
        detections.push(SimDetection {
            x: noisy.x(),
            y: noisy.y(),
            z: noisy.z(),
            yaw: noisy.yaw(),
            class: object.class,
            score: 1.0,
            truth_id: Some(object.id),
        });
    }
    if noise.clutter_rate > 0.0 {
        let count = rng.sample(Poisson::new(noise.clutter_rate).expect("validated rate")) as usize;
        for _ in 0..count {
            let radius = noise.detection_range * rng.random::<f64>().sqrt();
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let class = match rng.random_range(0..3) {
                0 => ObjectClass::Car,
                1 => ObjectClass::Pedestrian,
                _ => ObjectClass::Cyclist,
            };
            detections.push(SimDetection {
                x: radius * angle.cos(),
                y: radius * angle.sin(),
                z: 0.0,
                yaw,
                class,
                score: 0.5,
                truth_id: None,
            });
        }
    }
    FrameMeasurement {
        frame: t as FrameId,
        odometry,
        detections,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::window_graph::{
        residual_constant_velocity, residual_observation, residual_odometry, residual_pose_change,
    };

    fn spec(template: Template, seed: u64) -> ScenarioSpec {
        ScenarioSpec::new(template, seed)
    }

    #[test]
    fn zero_objects_straight_ego_is_valid() {
        let mut s = spec(Template::Highway, 1);
        s.objects = 0;
        let scenario = build_scenario(&s).unwrap();
        assert_eq!(scenario.ego.len(), s.frames);
        assert!(scenario.objects.is_empty());
    }

    #[test]
    fn same_seed_gives_bit_identical_streams() {
        let s = spec(Template::Highway, 42);
        let a = build_scenario(&s).unwrap().emit_all();
        let b = build_scenario(&s).unwrap().emit_all();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        // and frames can be generated out of order
        let scenario = build_scenario(&s).unwrap();
        let f7 = emit_frame(&scenario, 7);
        let _ = emit_frame(&scenario, 3);
        let f7_again = emit_frame(&scenario, 7);
        assert_eq!(
            serde_json::to_string(&f7).unwrap(),
            serde_json::to_string(&f7_again).unwrap()
        );
    }

    #[test]
    fn intersection_paths_cross_within_gate_radius() {
        for seed in 0..10 {
            let scenario = build_scenario(&spec(Template::Intersection, seed)).unwrap();
            let mut min_dist = f64::INFINITY;
            for (i, a) in scenario.objects.iter().enumerate() {
                for b in scenario.objects.iter().skip(i + 1) {
                    for t in 0..scenario.frames() {
                        let d = (a.poses[t].xy() - b.poses[t].xy()).norm();
                        min_dist = min_dist.min(d);
                    }
                }
            }
            assert!(
                min_dist < 2.0,
                "seed {seed}: closest approach {min_dist} not inside gate radius"
            );
        }
    }

    #[test]
    fn noise_free_measurements_are_exactly_consistent() {
        let mut s = spec(Template::Highway, 5);
        s.noise = NoiseSpec::noise_free();
        let scenario = build_scenario(&s).unwrap();
        let frames = scenario.emit_all();
        for t in 1..scenario.frames() {
            let odo = frames[t].odometry.as_ref().unwrap();
            assert!(
                residual_odometry(&scenario.ego[t - 1], &scenario.ego[t], odo).norm() < 1e-9
            );
        }
        // observation, pose-change and constant-velocity residuals are zero
        // at the ground truth
        for t in 2..scenario.frames() {
            for det in &frames[t].detections {
                let id = det.truth_id.unwrap();
                let object = &scenario.objects[id as usize];
                assert!(residual_observation(
                    &scenario.ego[t],
                    &object.poses[t],
                    &det.body_pose()
                )
                .norm()
                    < 1e-9);
                let c_prev = object.poses[t - 2].between(&object.poses[t - 1]);
                let c_curr = object.poses[t - 1].between(&object.poses[t]);
                assert!(
                    residual_pose_change(&object.poses[t - 1], &object.poses[t], &c_curr).norm()
                        < 1e-9
                );
                assert!(residual_constant_velocity(&c_prev, &c_curr).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn miss_probability_one_gives_empty_detections() {
        let mut s = spec(Template::Highway, 3);
        s.noise.miss_prob = 1.0;
        s.noise.clutter_rate = 0.0;
        let scenario = build_scenario(&s).unwrap();
        for frame in scenario.emit_all() {
            assert!(frame.detections.is_empty());
        }
    }

    #[test]
    fn detection_noise_std_matches_sigma() {
        let mut s = spec(Template::StaticUrban, 11);
        s.frames = 1500;
        s.objects = 8;
        s.noise = NoiseSpec {
            det_pos_sigma: 0.1,
            miss_prob: 0.0,
            clutter_rate: 0.0,
            odo_rot_sigma: 0.0,
            odo_pos_sigma: 0.0,
            det_yaw_sigma: 0.0,
            detection_range: 1.0e6,
        };
        let scenario = build_scenario(&s).unwrap();
        let mut errors = Vec::new();
        for t in 0..scenario.frames() {
            let frame = emit_frame(&scenario, t);
            for det in frame.detections {
                let id = det.truth_id.unwrap();
                let gt = scenario.ego[t].between(&scenario.objects[id as usize].poses[t]);
                let err = gt.between(&det.body_pose()).log();
                errors.push(err.trans.x);
                errors.push(err.trans.y);
            }
        }
        assert!(errors.len() >= 10_000, "samples: {}", errors.len());
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        let var =
            errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (errors.len() - 1) as f64;
        let std = var.sqrt();
        assert!(
            (std - 0.1).abs() < 0.01,
            "empirical std {std} outside 10% of 0.1"
        );
    }

    #[test]
    fn invalid_spec_lists_offending_fields() {
        let mut s = spec(Template::Highway, 0);
        s.noise.miss_prob = 1.5;
        s.noise.detection_range = -3.0;
        let err = build_scenario(&s).unwrap_err();
        let SimulatorError::InvalidSpec { problems } = err;
        assert_eq!(problems.len(), 2);
        assert!(problems.iter().any(|p| p.contains("miss_prob")));
        assert!(problems.iter().any(|p| p.contains("detection_range")));
    }
}
