//! The unified sliding-window optimization.
//!
//! Ego poses, object poses and object pose-changes over the last `k` frames
//! are free variables; odometry, observation, pose-change and
//! constant-velocity factors tie them together and a Levenberg-Marquardt
//! loop minimizes the summed squared Mahalanobis residuals. When the window
//! slides, the departing frame's variables are eliminated by Schur
//! complement and their information is retained as a dense prior over the
//! remaining boundary variables.
//!
//! Static objects are held as a single landmark vertex constrained by one
//! observation factor per frame; dynamic objects get one pose vertex per
//! observed frame, pose-change vertices between consecutive observations
//! and constant-velocity factors between consecutive pose changes, so a
//! constant-velocity factor never exists without both flanking pose-change
//! factors.

mod factors;
mod marginal;
mod solve;

pub use factors::{
    residual_constant_velocity, residual_observation, residual_odometry, residual_pose_change,
    Factor, FactorKind, VertexKey,
};
pub use marginal::{marginalize_information, MarginalPrior};

use std::collections::{BTreeMap, VecDeque};

use nalgebra::Matrix6;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::Pose;
use crate::tracking::{FrameId, MotionClass, Track};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("window already holds k frames; slide before adding frame {frame}")]
    WindowFull { frame: FrameId },
    #[error("frame {frame} is not newer than the latest frame {last}")]
    NonMonotonicFrame { frame: FrameId, last: FrameId },
    #[error("odometry missing for frame {frame}")]
    MissingOdometry { frame: FrameId },
    #[error("object of track {track} reached the graph without a motion class")]
    UnclassifiedObject { track: u64 },
    #[error("covariance {which} is not positive definite")]
    InvalidCovariance { which: String },
    #[error("normal system is rank deficient over variables {keys:?}")]
    RankDeficient { keys: Vec<VertexKey> },
    #[error("graph has no factors to optimize")]
    EmptyGraph,
}

/// Measurement covariances of the four factor types, as 6x6 matrices over
/// [rotation (rad^2); translation (m^2)] twist coordinates.
#[derive(Clone, Copy, Debug)]
pub struct NoiseConfig {
    pub odometry: Matrix6<f64>,
    pub observation: Matrix6<f64>,
    pub pose_change: Matrix6<f64>,
    pub constant_velocity: Matrix6<f64>,
}

/// Uniform diagonal covariance.
pub fn isotropic_covariance(variance: f64) -> Matrix6<f64> {
    Matrix6::identity() * variance
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            odometry: isotropic_covariance(0.01),
            observation: isotropic_covariance(0.05),
            pose_change: isotropic_covariance(0.02),
            constant_velocity: isotropic_covariance(0.1),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct NoiseInformation {
    odometry: Matrix6<f64>,
    observation: Matrix6<f64>,
    pose_change: Matrix6<f64>,
    constant_velocity: Matrix6<f64>,
}

impl NoiseConfig {
    /// Invert the covariances; fails on a non-positive-definite matrix.
    pub(crate) fn information(&self) -> Result<NoiseInformation, GraphError> {
        let invert = |m: &Matrix6<f64>, which: &str| {
            nalgebra::Cholesky::new(*m)
                .map(|c| c.inverse())
                .ok_or_else(|| GraphError::InvalidCovariance {
                    which: which.to_string(),
                })
        };
        Ok(NoiseInformation {
            odometry: invert(&self.odometry, "odometry")?,
            observation: invert(&self.observation, "observation")?,
            pose_change: invert(&self.pose_change, "pose_change")?,
            constant_velocity: invert(&self.constant_velocity, "constant_velocity")?,
        })
    }
}

/// Levenberg-Marquardt settings.
#[derive(Clone, Copy, Debug)]
pub struct LmConfig {
    pub lambda_init: f64,
    pub lambda_factor: f64,
    pub lambda_max: f64,
    pub max_iterations: usize,
    /// Relative cost-drop threshold: |dcost| / cost.
    pub cost_rel_tol: f64,
    /// Infinity-norm threshold on the accepted step.
    pub step_inf_tol: f64,
    /// Infinity-norm threshold on the gradient.
    pub gradient_tol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            lambda_init: 1e-4,
            lambda_factor: 10.0,
            lambda_max: 1e10,
            max_iterations: 50,
            cost_rel_tol: 1e-8,
            step_inf_tol: 1e-10,
            gradient_tol: 1e-12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientConverged,
    CostConverged,
    StepConverged,
    MaxIterations,
    LambdaExhausted,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct OptimizeReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Accepted steps.
    pub iterations: usize,
    /// Linear systems solved (including rejected attempts).
    pub solves: usize,
    pub termination: Termination,
}

/// One initialized object handed to the graph for the current frame.
#[derive(Clone, Copy, Debug)]
pub struct ObjectObservation {
    pub track_id: u64,
    pub motion: MotionClass,
    /// Detection pose in the ego frame (b).
    pub body_pose: Pose,
}

/// States departing the window during a slide, recorded before removal.
#[derive(Clone, Debug)]
pub struct SlideRecord {
    pub frame: FrameId,
    pub departed: Vec<(VertexKey, Pose)>,
}

/// Preliminary static/dynamic judgment from the track's in-window history:
/// the object is static iff the largest planar displacement between any two
/// history poses is strictly below `d_static`.
pub fn classify_motion(track: &Track, d_static: f64) -> MotionClass {
    debug_assert!(track.initialized, "classification expects an initialized track");
    let mut max_disp2: f64 = 0.0;
    for (i, (_, a)) in track.history.iter().enumerate() {
        for (_, b) in track.history.iter().skip(i + 1) {
            max_disp2 = max_disp2.max((a.xy() - b.xy()).norm_squared());
        }
    }
    if max_disp2 < d_static * d_static {
        MotionClass::Static
    } else {
        MotionClass::Dynamic
    }
}

#[derive(Clone, Debug)]
pub struct WindowGraph {
    window_size: usize,
    frames: VecDeque<FrameId>,
    values: BTreeMap<VertexKey, Pose>,
    fixed: BTreeMap<VertexKey, Pose>,
    factors: Vec<Factor>,
    prior: Option<MarginalPrior>,
    info: NoiseInformation,
}

impl WindowGraph {
    pub fn new(window_size: usize, noise: &NoiseConfig) -> Result<Self, GraphError> {
        Ok(WindowGraph {
            window_size,
            frames: VecDeque::new(),
            values: BTreeMap::new(),
            fixed: BTreeMap::new(),
            factors: Vec::new(),
            prior: None,
            info: noise.information()?,
        })
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn frames(&self) -> impl Iterator<Item = FrameId> + '_ {
        self.frames.iter().copied()
    }

    pub fn is_full(&self) -> bool {
        self.frames.len() == self.window_size
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn prior(&self) -> Option<&MarginalPrior> {
        self.prior.as_ref()
    }

    /// Estimate of a vertex, free or fixed.
    pub fn estimate(&self, key: &VertexKey) -> Option<Pose> {
        self.values.get(key).or_else(|| self.fixed.get(key)).copied()
    }

    pub fn vertex_keys(&self) -> impl Iterator<Item = &VertexKey> {
        self.values.keys().chain(self.fixed.keys())
    }

    pub fn latest_ego(&self) -> Option<(FrameId, Pose)> {
        let frame = *self.frames.back()?;
        Some((frame, self.estimate(&VertexKey::Ego { frame })?))
    }

    /// Cost of the current estimates under all factors plus the prior.
    pub fn total_cost(&self) -> f64 {
        solve::total_cost(&self.values, &self.fixed, &self.factors, self.prior.as_ref())
    }

    /// Add the current frame: ego vertex (initialized by composing the
    /// odometry onto the previous estimate) plus its odometry factor, then
    /// per initialized object an observation factor and, for dynamic
    /// objects with a pose vertex at the previous frame, the pose-change
    /// vertex and factor, and the constant-velocity factor once two
    /// consecutive pose changes exist.
    ///
    /// The very first frame anchors the world: its ego pose is held fixed
    /// at the identity and any odometry passed with it is ignored.
    pub fn update(
        &mut self,
        frame: FrameId,
        odometry: Option<&Pose>,
        observations: &[ObjectObservation],
    ) -> Result<(), GraphError> {
        if self.is_full() {
            return Err(GraphError::WindowFull { frame });
        }
        let ego_key = VertexKey::Ego { frame };
        match self.frames.back().copied() {
            None => {
                self.fixed.insert(ego_key, Pose::identity());
            }
            Some(last) => {
                if frame <= last {
                    return Err(GraphError::NonMonotonicFrame { frame, last });
                }
                let odometry = *odometry.ok_or(GraphError::MissingOdometry { frame })?;
                let prev_key = VertexKey::Ego { frame: last };
                let prev = self.estimate(&prev_key).expect("previous ego exists");
                self.values.insert(ego_key, prev.compose(&odometry));
                self.factors.push(Factor {
                    kind: FactorKind::Odometry {
                        prev: prev_key,
                        curr: ego_key,
                        measured: odometry,
                    },
                    information: self.info.odometry,
                });
            }
        }
        let ego_pose = self.estimate(&ego_key).expect("ego just added");

        for obs in observations {
            let world = ego_pose.compose(&obs.body_pose);
            match obs.motion {
                MotionClass::Unknown => {
                    return Err(GraphError::UnclassifiedObject {
                        track: obs.track_id,
                    })
                }
                MotionClass::Static => {
                    let key = VertexKey::Landmark {
                        track: obs.track_id,
                    };
                    self.values.entry(key).or_insert(world);
                    self.factors.push(Factor {
                        kind: FactorKind::Observation {
                            ego: ego_key,
                            object: key,
                            measured: obs.body_pose,
                        },
                        information: self.info.observation,
                    });
                }
                MotionClass::Dynamic => {
                    let key = VertexKey::Object {
                        track: obs.track_id,
                        frame,
                    };
                    self.values.insert(key, world);
                    self.factors.push(Factor {
                        kind: FactorKind::Observation {
                            ego: ego_key,
                            object: key,
                            measured: obs.body_pose,
                        },
                        information: self.info.observation,
                    });
                    let prev_pose = frame.checked_sub(1).and_then(|prev_frame| {
                        self.values
                            .get(&VertexKey::Object {
                                track: obs.track_id,
                                frame: prev_frame,
                            })
                            .copied()
                    });
                    if let Some(prev_pose) = prev_pose {
                        let prev_obj = VertexKey::Object {
                            track: obs.track_id,
                            frame: frame - 1,
                        };
                        let change_key = VertexKey::Change {
                            track: obs.track_id,
                            frame,
                        };
                        self.values.insert(change_key, prev_pose.between(&world));
                        self.factors.push(Factor {
                            kind: FactorKind::PoseChange {
                                prev: prev_obj,
                                curr: key,
                                change: change_key,
                            },
                            information: self.info.pose_change,
                        });
                        let prev_change = VertexKey::Change {
                            track: obs.track_id,
                            frame: frame - 1,
                        };
                        if self.values.contains_key(&prev_change) {
                            self.factors.push(Factor {
                                kind: FactorKind::ConstantVelocity {
                                    prev: prev_change,
                                    curr: change_key,
                                },
                                information: self.info.constant_velocity,
                            });
                        }
                    }
                }
            }
        }
        self.frames.push_back(frame);
        Ok(())
    }

    /// Marginalize the oldest frame out of the window.
    ///
    /// Every factor touching the departing variables (plus the previous
    /// prior, which is always consumed and re-expressed) is linearized at
    /// the current estimates; the departing variables are eliminated by
    /// Schur complement and the result installed as the new dense prior
    /// over their Markov blanket.
    pub fn slide(&mut self) -> Result<SlideRecord, GraphError> {
        let frame = *self.frames.front().ok_or(GraphError::EmptyGraph)?;
        let departing: Vec<VertexKey> = self
            .values
            .keys()
            .filter(|key| match key {
                VertexKey::Ego { frame: f } => *f == frame,
                VertexKey::Object { frame: f, .. } => *f == frame,
                VertexKey::Change { frame: f, .. } => *f <= frame + 1,
                VertexKey::Landmark { .. } => false,
            })
            .copied()
            .collect();
        let ego_key = VertexKey::Ego { frame };
        let mut departing_all: std::collections::BTreeSet<VertexKey> =
            departing.iter().copied().collect();
        departing_all.insert(ego_key);

        let (removed, kept): (Vec<Factor>, Vec<Factor>) = self
            .factors
            .drain(..)
            .partition(|f| f.keys().iter().any(|k| departing_all.contains(k)));
        self.factors = kept;

        // Markov blanket: free variables of the removed factors and of the
        // consumed prior that are not departing themselves.
        let mut blanket: std::collections::BTreeSet<VertexKey> = std::collections::BTreeSet::new();
        for factor in &removed {
            for key in factor.keys() {
                if self.values.contains_key(&key) && !departing_all.contains(&key) {
                    blanket.insert(key);
                }
            }
        }
        if let Some(prior) = &self.prior {
            for key in &prior.scope {
                if self.values.contains_key(key) && !departing_all.contains(key) {
                    blanket.insert(*key);
                }
            }
        }

        let departing_free: Vec<VertexKey> = departing.clone();
        let blanket: Vec<VertexKey> = blanket.into_iter().collect();
        let local_keys: Vec<VertexKey> = departing_free
            .iter()
            .chain(blanket.iter())
            .copied()
            .collect();
        let local_index: BTreeMap<VertexKey, usize> = local_keys
            .iter()
            .enumerate()
            .map(|(i, k)| (*k, i))
            .collect();

        let n = local_keys.len();
        let mut h = nalgebra::DMatrix::<f64>::zeros(6 * n, 6 * n);
        let mut g = nalgebra::DVector::<f64>::zeros(6 * n);
        let mut scatter = |i: usize, j: usize, block: &Matrix6<f64>| {
            let mut view = h.fixed_view_mut::<6, 6>(i * 6, j * 6);
            view += block;
            if i != j {
                let mut view = h.fixed_view_mut::<6, 6>(j * 6, i * 6);
                view += block.transpose();
            }
        };
        for factor in &removed {
            let keys = factor.keys();
            let poses: Vec<Pose> = keys
                .iter()
                .map(|k| self.estimate(k).expect("factor vertex exists"))
                .collect();
            let eval = factor.evaluate(&poses);
            let w = factor.information;
            let free: Vec<(usize, &Matrix6<f64>)> = keys
                .iter()
                .zip(eval.jacobians.iter())
                .filter_map(|(k, jac)| local_index.get(k).map(|&i| (i, jac)))
                .collect();
            for &(i, ji) in &free {
                let mut gi = g.fixed_rows_mut::<6>(i * 6);
                gi += ji.transpose() * w * eval.residual;
                for &(j, jj) in &free {
                    if i <= j {
                        scatter(i, j, &(ji.transpose() * w * jj));
                    }
                }
            }
        }
        if let Some(prior) = self.prior.take() {
            let poses: Vec<Pose> = prior
                .scope
                .iter()
                .map(|k| self.estimate(k).expect("prior vertex exists"))
                .collect();
            let scope_idx: Vec<usize> = prior
                .scope
                .iter()
                .map(|k| local_index[k])
                .collect();
            let (mut hess_updates, mut grad_updates) = (Vec::new(), Vec::new());
            prior.accumulate(
                &poses,
                |i, j, block| hess_updates.push((scope_idx[i], scope_idx[j], block)),
                |i, block| grad_updates.push((scope_idx[i], block)),
            );
            for (i, j, block) in hess_updates {
                if i <= j {
                    scatter(i, j, &block);
                } else {
                    scatter(j, i, &block.transpose());
                }
            }
            for (i, block) in grad_updates {
                let mut gi = g.fixed_rows_mut::<6>(i * 6);
                gi += block;
            }
        }

        let record = SlideRecord {
            frame,
            departed: departing_all
                .iter()
                .filter_map(|k| self.estimate(k).map(|p| (*k, p)))
                .collect(),
        };

        if !blanket.is_empty() {
            let (information, gradient) =
                marginalize_information(&h, &g, 6 * departing_free.len()).ok_or(
                    GraphError::RankDeficient {
                        keys: departing_free.clone(),
                    },
                )?;
            let lin_points: Vec<Pose> = blanket
                .iter()
                .map(|k| self.estimate(k).expect("blanket vertex exists"))
                .collect();
            self.prior = Some(MarginalPrior {
                scope: blanket,
                lin_points,
                information,
                gradient,
            });
        }

        for key in &departing_free {
            self.values.remove(key);
        }
        self.fixed.remove(&ego_key);
        self.frames.pop_front();
        Ok(record)
    }

    /// Levenberg-Marquardt minimization of the joint objective. Accepted
    /// steps never increase the cost.
    pub fn optimize(&mut self, cfg: &LmConfig) -> Result<OptimizeReport, GraphError> {
        if self.factors.is_empty() && self.prior.is_none() {
            return Err(GraphError::EmptyGraph);
        }
        let mut sys = solve::build_system(
            &self.values,
            &self.fixed,
            &self.factors,
            self.prior.as_ref(),
        );
        let initial_cost = sys.cost;
        let mut cost = initial_cost;
        let mut iterations = 0;
        let mut solves = 0;
        if self.values.is_empty() || sys.gradient_inf_norm() < cfg.gradient_tol {
            return Ok(OptimizeReport {
                initial_cost,
                final_cost: cost,
                iterations,
                solves,
                termination: Termination::GradientConverged,
            });
        }
        let part = solve::partition(&sys, self.prior.as_ref());
        let mut lambda = cfg.lambda_init;
        let termination = 'outer: loop {
            if iterations >= cfg.max_iterations {
                break Termination::MaxIterations;
            }
            // find an acceptable step, inflating lambda on rejection
            let (candidate, new_cost, step_inf) = loop {
                let deltas = solve::solve_damped(&sys, &part, lambda)?;
                solves += 1;
                let mut candidate = self.values.clone();
                let mut step_inf: f64 = 0.0;
                for (value, delta) in candidate.values_mut().zip(deltas.iter()) {
                    *value = value.retract(delta);
                    step_inf = step_inf.max(delta.inf_norm());
                }
                let new_cost = solve::total_cost(
                    &candidate,
                    &self.fixed,
                    &self.factors,
                    self.prior.as_ref(),
                );
                if new_cost <= cost {
                    break (candidate, new_cost, step_inf);
                }
                lambda *= cfg.lambda_factor;
                if lambda > cfg.lambda_max {
                    break 'outer Termination::LambdaExhausted;
                }
            };
            self.values = candidate;
            iterations += 1;
            lambda = (lambda / cfg.lambda_factor).max(1e-15);
            let drop = cost - new_cost;
            cost = new_cost;
            if step_inf < cfg.step_inf_tol {
                break Termination::StepConverged;
            }
            if drop <= cfg.cost_rel_tol * cost.max(1e-30) {
                break Termination::CostConverged;
            }
            sys = solve::build_system(
                &self.values,
                &self.fixed,
                &self.factors,
                self.prior.as_ref(),
            );
            if sys.gradient_inf_norm() < cfg.gradient_tol {
                break Termination::GradientConverged;
            }
        };
        Ok(OptimizeReport {
            initial_cost,
            final_cost: cost,
            iterations,
            solves,
            termination,
        })
    }

    /// JSON-serializable dump of the graph state.
    pub fn snapshot(&self) -> GraphSnapshot {
        GraphSnapshot {
            frames: self.frames.iter().copied().collect(),
            vertices: self
                .values
                .iter()
                .map(|(k, p)| VertexSnapshot { key: *k, pose: *p })
                .collect(),
            fixed: self
                .fixed
                .iter()
                .map(|(k, p)| VertexSnapshot { key: *k, pose: *p })
                .collect(),
            factors: self.factors.iter().map(|f| f.kind.clone()).collect(),
            prior: self.prior.as_ref().map(|p| PriorSnapshot {
                scope: p.scope.clone(),
                lin_points: p.lin_points.clone(),
                information: p
                    .information
                    .row_iter()
                    .map(|r| r.iter().copied().collect())
                    .collect(),
                gradient: p.gradient.iter().copied().collect(),
            }),
            cost: self.total_cost(),
        }
    }

    #[cfg(test)]
    pub(crate) fn values_mut(&mut self) -> &mut BTreeMap<VertexKey, Pose> {
        &mut self.values
    }

    #[doc(hidden)]
    pub fn debug_solve_deltas(&self, lambda: f64) -> Result<(Vec<VertexKey>, Vec<crate::geometry::Twist>, Vec<crate::geometry::Twist>), GraphError> {
        let sys = solve::build_system(
            &self.values,
            &self.fixed,
            &self.factors,
            self.prior.as_ref(),
        );
        let part = solve::partition(&sys, self.prior.as_ref());
        let structured = solve::solve_damped(&sys, &part, lambda)?;
        let dense = solve::solve_damped_dense(&sys, lambda)?;
        Ok((sys.keys.clone(), structured, dense))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VertexSnapshot {
    pub key: VertexKey,
    pub pose: Pose,
}

#[derive(Clone, Debug, Serialize)]
pub struct PriorSnapshot {
    pub scope: Vec<VertexKey>,
    pub lin_points: Vec<Pose>,
    pub information: Vec<Vec<f64>>,
    pub gradient: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GraphSnapshot {
    pub frames: Vec<FrameId>,
    pub vertices: Vec<VertexSnapshot>,
    pub fixed: Vec<VertexSnapshot>,
    pub factors: Vec<FactorKind>,
    pub prior: Option<PriorSnapshot>,
    pub cost: f64,
}
