//! Sliding-window trajectory association.
//!
//! Each track's recent world positions are fitted with a per-axis cubic;
//! the fit predicts where the object should be at the current frame, a
//! gate on squared planar distance turns predictions and detections into a
//! binary score matrix, and an optimal assignment resolves it. Tracks with
//! too little history fall back to last-position association, and the
//! track lifecycle (spawning, initialization after `g` frames, termination
//! after consecutive misses) lives in [`step_tracks`].

mod hungarian;

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;

/// Frame index within a run.
pub type FrameId = u64;

/// Detector label. Tracks never associate across classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Cyclist,
    Unknown,
}

impl std::fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ObjectClass::Car => "car",
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Cyclist => "cyclist",
            ObjectClass::Unknown => "unknown",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ObjectClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "car" => Ok(ObjectClass::Car),
            "pedestrian" => Ok(ObjectClass::Pedestrian),
            "cyclist" => Ok(ObjectClass::Cyclist),
            "unknown" => Ok(ObjectClass::Unknown),
            other => Err(format!("unknown object class `{other}`")),
        }
    }
}

/// Whether an object is treated as a fixed landmark or a moving body.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionClass {
    Unknown,
    Static,
    Dynamic,
}

/// One object observation in the ego frame at one frame.
#[derive(Clone, Copy, Debug)]
pub struct Detection {
    pub frame: FrameId,
    pub body_pose: Pose,
    pub class: ObjectClass,
}

/// A detection lifted into the world frame with the current ego estimate.
#[derive(Clone, Copy, Debug)]
pub struct LiftedDetection {
    pub detection: Detection,
    pub world_pose: Pose,
}

/// One object's identity plus its in-window pose history and lifecycle
/// flags.
#[derive(Clone, Debug)]
pub struct Track {
    pub id: u64,
    pub class: ObjectClass,
    /// (frame, world pose), frames strictly increasing, at most `window`
    /// entries.
    pub history: Vec<(FrameId, Pose)>,
    pub initialized: bool,
    pub consecutive_misses: u32,
    pub motion_class: MotionClass,
}

impl Track {
    pub fn last_position(&self) -> Option<Vector2<f64>> {
        self.history.last().map(|(_, p)| p.xy())
    }

    pub fn last_frame(&self) -> Option<FrameId> {
        self.history.last().map(|(f, _)| *f)
    }
}

/// Per-axis cubic coefficients for position prediction, in frame time
/// re-based so the first fitted frame is 0 (keeps the Vandermonde system
/// well conditioned; predictions are unchanged by the re-basing).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryFit {
    pub base_frame: FrameId,
    /// [t^3, t^2, t, 1] coefficients for x.
    pub x: [f64; 4],
    /// [t^3, t^2, t, 1] coefficients for y.
    pub y: [f64; 4],
}

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("cubic fit needs at least 4 history points, have {have}")]
    InsufficientHistory { have: usize },
}

/// Least-squares cubic fit of the track's in-window history, per axis.
pub fn fit_trajectory(track: &Track) -> Result<TrajectoryFit, FitError> {
    let n = track.history.len();
    if n < 4 {
        return Err(FitError::InsufficientHistory { have: n });
    }
    let base = track.history[0].0;
    let mut a = DMatrix::zeros(n, 4);
    let mut bx = DVector::zeros(n);
    let mut by = DVector::zeros(n);
    for (row, (frame, pose)) in track.history.iter().enumerate() {
        let t = (frame - base) as f64;
        a[(row, 0)] = t * t * t;
        a[(row, 1)] = t * t;
        a[(row, 2)] = t;
        a[(row, 3)] = 1.0;
        bx[row] = pose.x();
        by[row] = pose.y();
    }
    let svd = a.svd(true, true);
    let cx = svd.solve(&bx, 1e-12).expect("svd computed with u and v");
    let cy = svd.solve(&by, 1e-12).expect("svd computed with u and v");
    Ok(TrajectoryFit {
        base_frame: base,
        x: [cx[0], cx[1], cx[2], cx[3]],
        y: [cy[0], cy[1], cy[2], cy[3]],
    })
}

/// Evaluate the fit at a frame.
pub fn predict_position(fit: &TrajectoryFit, frame: FrameId) -> Vector2<f64> {
    let t = frame as f64 - fit.base_frame as f64;
    let horner = |c: &[f64; 4]| ((c[0] * t + c[1]) * t + c[2]) * t + c[3];
    Vector2::new(horner(&fit.x), horner(&fit.y))
}

/// Gated squared-distance matrix between per-track predictions and
/// detections. Entry (u, v) is matchable iff the squared planar distance is
/// strictly below the gate.
#[derive(Clone, Debug)]
pub struct ScoreMatrix {
    gate: f64,
    dist2: DMatrix<f64>,
}

impl ScoreMatrix {
    pub fn rows(&self) -> usize {
        self.dist2.nrows()
    }

    pub fn cols(&self) -> usize {
        self.dist2.ncols()
    }

    /// The binary entry m_{u,v}.
    pub fn gated(&self, u: usize, v: usize) -> bool {
        self.dist2[(u, v)] < self.gate
    }

    /// Raw squared distance behind the binary entry.
    pub fn distance2(&self, u: usize, v: usize) -> f64 {
        self.dist2[(u, v)]
    }
}

/// Build the score matrix from predicted and detected planar positions.
pub fn build_score_matrix(
    predictions: &[Vector2<f64>],
    detections: &[Vector2<f64>],
    gate: f64,
) -> ScoreMatrix {
    let dist2 = DMatrix::from_fn(predictions.len(), detections.len(), |u, v| {
        (predictions[u] - detections[v]).norm_squared()
    });
    ScoreMatrix { gate, dist2 }
}

/// Result of [`assign`]: a one-to-one matching over gated pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// (row, column) pairs, i.e. (track index, detection index).
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
    /// Summed squared distance over the matched pairs.
    pub total_cost: f64,
}

/// Canonical cost of a pair set: sorted before summing so equal sets give
/// bit-identical totals regardless of which solver produced them.
pub fn assignment_cost(matrix: &ScoreMatrix, pairs: &[(usize, usize)]) -> f64 {
    let mut sorted: Vec<_> = pairs.to_vec();
    sorted.sort_unstable();
    sorted.iter().map(|&(u, v)| matrix.distance2(u, v)).sum()
}

/// Optimal assignment restricted to gated entries: maximizes the number of
/// matched pairs, then minimizes total squared distance among them. Rows or
/// columns whose every candidate is gated out stay unmatched.
pub fn assign(matrix: &ScoreMatrix) -> Assignment {
    let (rows, cols) = (matrix.rows(), matrix.cols());
    if rows == 0 || cols == 0 {
        return Assignment {
            pairs: Vec::new(),
            unmatched_rows: (0..rows).collect(),
            unmatched_cols: (0..cols).collect(),
            total_cost: 0.0,
        };
    }
    let n = rows.max(cols);
    let mut max_gated: f64 = 0.0;
    for u in 0..rows {
        for v in 0..cols {
            if matrix.gated(u, v) {
                max_gated = max_gated.max(matrix.distance2(u, v));
            }
        }
    }
    // larger than any sum of n real costs, so unmatched slots are only taken
    // when no gated completion exists
    let forbidden = max_gated * n as f64 + 1.0;
    let cost = DMatrix::from_fn(n, n, |u, v| {
        if u < rows && v < cols && matrix.gated(u, v) {
            matrix.distance2(u, v)
        } else {
            forbidden
        }
    });
    let row_to_col = hungarian::solve_square(&cost);
    let mut pairs = Vec::new();
    for u in 0..rows {
        let v = row_to_col[u];
        if v < cols && matrix.gated(u, v) {
            pairs.push((u, v));
        }
    }
    let matched_rows: Vec<bool> = {
        let mut m = vec![false; rows];
        for &(u, _) in &pairs {
            m[u] = true;
        }
        m
    };
    let matched_cols: Vec<bool> = {
        let mut m = vec![false; cols];
        for &(_, v) in &pairs {
            m[v] = true;
        }
        m
    };
    let total_cost = assignment_cost(matrix, &pairs);
    Assignment {
        pairs,
        unmatched_rows: (0..rows).filter(|&u| !matched_rows[u]).collect(),
        unmatched_cols: (0..cols).filter(|&v| !matched_cols[v]).collect(),
        total_cost,
    }
}

/// How a track's current position is predicted during association.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionMode {
    /// Cubic trajectory fit once the track has more than `g` observations.
    Polynomial,
    /// Always use the last observed position.
    LastPosition,
}

#[derive(Clone, Copy, Debug)]
pub struct TrackingConfig {
    /// Sliding window length k (frames of history kept per track).
    pub window: usize,
    /// Initialization threshold g: a track initializes once observed in
    /// more than `g` window frames.
    pub init_threshold: usize,
    /// Gate on squared planar distance (m^2).
    pub gate: f64,
    /// Tracks unmatched for more than this many consecutive frames are
    /// terminated.
    pub miss_limit: u32,
    pub prediction: PredictionMode,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        TrackingConfig {
            window: 10,
            init_threshold: 4,
            gate: 4.0,
            miss_limit: 3,
            prediction: PredictionMode::Polynomial,
        }
    }
}

/// Owned collection of live tracks.
#[derive(Clone, Debug, Default)]
pub struct TrackStore {
    tracks: Vec<Track>,
    next_id: u64,
}

impl TrackStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn get(&self, id: u64) -> Option<&Track> {
        self.tracks.iter().find(|t| t.id == id)
    }

    pub fn get_mut(&mut self, id: u64) -> Option<&mut Track> {
        self.tracks.iter_mut().find(|t| t.id == id)
    }

    pub fn tracks_mut(&mut self) -> impl Iterator<Item = &mut Track> {
        self.tracks.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }
}

/// Per-frame association output, one JSON line per frame when exported.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssociationRecord {
    pub frame: FrameId,
    /// (track id, detection index) for detections matched to live tracks.
    pub pairs: Vec<(u64, usize)>,
    /// (track id, detection index) for detections that spawned new tracks.
    pub spawned: Vec<(u64, usize)>,
    /// Ids of tracks terminated at this frame.
    pub terminated: Vec<u64>,
}

/// One association round: predict, gate, assign, then apply the lifecycle
/// rules. Detections must already be lifted into the world frame.
pub fn step_tracks(
    store: &mut TrackStore,
    frame: FrameId,
    detections: &[LiftedDetection],
    cfg: &TrackingConfig,
) -> AssociationRecord {
    // Predictions, per live track. Tracks observed in more than g window
    // frames use the cubic fit; shorter ones their last observed position.
    let predictions: Vec<Option<Vector2<f64>>> = store
        .tracks
        .iter()
        .map(|track| {
            if track.history.is_empty() {
                return None;
            }
            let use_fit = cfg.prediction == PredictionMode::Polynomial
                && track.history.len() > cfg.init_threshold;
            if use_fit {
                if let Ok(fit) = fit_trajectory(track) {
                    return Some(predict_position(&fit, frame));
                }
            }
            track.last_position()
        })
        .collect();

    // Associate per object class; cross-class pairs are never matchable.
    let mut classes: Vec<ObjectClass> = store
        .tracks
        .iter()
        .map(|t| t.class)
        .chain(detections.iter().map(|d| d.detection.class))
        .collect();
    classes.sort_unstable();
    classes.dedup();

    let mut matched_pairs: Vec<(usize, usize)> = Vec::new(); // (track idx, det idx)
    for class in classes {
        let track_idx: Vec<usize> = store
            .tracks
            .iter()
            .enumerate()
            .filter(|(i, t)| t.class == class && predictions[*i].is_some())
            .map(|(i, _)| i)
            .collect();
        let det_idx: Vec<usize> = detections
            .iter()
            .enumerate()
            .filter(|(_, d)| d.detection.class == class)
            .map(|(i, _)| i)
            .collect();
        if track_idx.is_empty() || det_idx.is_empty() {
            continue;
        }
        let preds: Vec<Vector2<f64>> = track_idx.iter().map(|&i| predictions[i].unwrap()).collect();
        let dets: Vec<Vector2<f64>> = det_idx
            .iter()
            .map(|&i| detections[i].world_pose.xy())
            .collect();
        let matrix = build_score_matrix(&preds, &dets, cfg.gate);
        let assignment = assign(&matrix);
        for (u, v) in assignment.pairs {
            matched_pairs.push((track_idx[u], det_idx[v]));
        }
    }
    matched_pairs.sort_unstable();

    let mut record = AssociationRecord {
        frame,
        pairs: Vec::new(),
        spawned: Vec::new(),
        terminated: Vec::new(),
    };

    let mut det_matched = vec![false; detections.len()];
    let mut track_matched = vec![false; store.tracks.len()];
    for (ti, di) in matched_pairs {
        let track = &mut store.tracks[ti];
        track.history.push((frame, detections[di].world_pose));
        track.consecutive_misses = 0;
        if !track.initialized && track.history.len() > cfg.init_threshold {
            track.initialized = true;
        }
        det_matched[di] = true;
        track_matched[ti] = true;
        record.pairs.push((track.id, di));
    }

    // Misses and termination.
    for (ti, track) in store.tracks.iter_mut().enumerate() {
        if !track_matched[ti] {
            track.consecutive_misses += 1;
        }
    }
    let miss_limit = cfg.miss_limit;
    record.terminated = store
        .tracks
        .iter()
        .filter(|t| t.consecutive_misses > miss_limit)
        .map(|t| t.id)
        .collect();
    store.tracks.retain(|t| t.consecutive_misses <= miss_limit);

    // Unmatched detections spawn new tracks.
    for (di, det) in detections.iter().enumerate() {
        if det_matched[di] {
            continue;
        }
        let id = store.next_id;
        store.next_id += 1;
        store.tracks.push(Track {
            id,
            class: det.detection.class,
            history: vec![(frame, det.world_pose)],
            initialized: false,
            consecutive_misses: 0,
            motion_class: MotionClass::Unknown,
        });
        record.spawned.push((id, di));
    }

    // Clip histories to the window: keep frames in (frame - k, frame].
    for track in store.tracks.iter_mut() {
        track
            .history
            .retain(|(f, _)| *f + cfg.window as FrameId > frame);
    }

    record
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn track_from_positions(points: &[(FrameId, f64, f64)]) -> Track {
        Track {
            id: 0,
            class: ObjectClass::Car,
            history: points
                .iter()
                .map(|&(f, x, y)| (f, Pose::from_translation(x, y, 0.0)))
                .collect(),
            initialized: true,
            consecutive_misses: 0,
            motion_class: MotionClass::Unknown,
        }
    }

    fn lifted(frame: FrameId, x: f64, y: f64) -> LiftedDetection {
        let pose = Pose::from_translation(x, y, 0.0);
        LiftedDetection {
            detection: Detection {
                frame,
                body_pose: pose,
                class: ObjectClass::Car,
            },
            world_pose: pose,
        }
    }

    #[test]
    fn fit_recovers_exact_cubic() {
        let points: Vec<(FrameId, f64, f64)> =
            (0..6).map(|t| (t, (t as f64).powi(3), 0.0)).collect();
        let fit = fit_trajectory(&track_from_positions(&points)).unwrap();
        assert_relative_eq!(fit.x[0], 1.0, epsilon = 1e-9);
        for c in [fit.x[1], fit.x[2], fit.x[3]] {
            assert!(c.abs() < 1e-9);
        }
        for c in fit.y {
            assert!(c.abs() < 1e-9);
        }
    }

    #[test]
    fn fit_constant_position() {
        let points: Vec<(FrameId, f64, f64)> = (10..16).map(|t| (t, 5.0, 2.0)).collect();
        let fit = fit_trajectory(&track_from_positions(&points)).unwrap();
        assert_relative_eq!(fit.x[3], 5.0, epsilon = 1e-9);
        assert_relative_eq!(fit.y[3], 2.0, epsilon = 1e-9);
        for c in [fit.x[0], fit.x[1], fit.x[2], fit.y[0], fit.y[1], fit.y[2]] {
            assert!(c.abs() < 1e-9);
        }
        // prediction at any frame is the constant
        let p = predict_position(&fit, 20);
        assert_relative_eq!(p, Vector2::new(5.0, 2.0), epsilon = 1e-8);
    }

    #[test]
    fn fit_requires_four_points() {
        let points: Vec<(FrameId, f64, f64)> = (0..3).map(|t| (t, t as f64, 0.0)).collect();
        let err = fit_trajectory(&track_from_positions(&points)).unwrap_err();
        assert_eq!(err, FitError::InsufficientHistory { have: 3 });
    }

    /// Independent oracle: solve the 4x4 normal equations directly.
    fn normal_equations_fit(points: &[(FrameId, f64, f64)]) -> ([f64; 4], [f64; 4]) {
        let base = points[0].0;
        let n = points.len();
        let mut a = DMatrix::zeros(n, 4);
        let mut bx = DVector::zeros(n);
        let mut by = DVector::zeros(n);
        for (row, &(f, x, y)) in points.iter().enumerate() {
            let t = (f - base) as f64;
            a[(row, 0)] = t * t * t;
            a[(row, 1)] = t * t;
            a[(row, 2)] = t;
            a[(row, 3)] = 1.0;
            bx[row] = x;
            by[row] = y;
        }
        let ata = a.transpose() * &a;
        let inv = ata.try_inverse().unwrap();
        let cx = &inv * (a.transpose() * bx);
        let cy = &inv * (a.transpose() * by);
        ([cx[0], cx[1], cx[2], cx[3]], [cy[0], cy[1], cy[2], cy[3]])
    }

    #[test]
    fn noisy_fit_matches_normal_equations_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let points: Vec<(FrameId, f64, f64)> = (0..10)
            .map(|t| {
                (
                    t,
                    0.8 * t as f64 + 1.0 + rng.random_range(-0.1..0.1),
                    -0.3 * t as f64 + rng.random_range(-0.1..0.1),
                )
            })
            .collect();
        let fit = fit_trajectory(&track_from_positions(&points)).unwrap();
        let (ox, oy) = normal_equations_fit(&points);
        for k in 0..4 {
            assert_relative_eq!(fit.x[k], ox[k], epsilon = 1e-9, max_relative = 1e-6);
            assert_relative_eq!(fit.y[k], oy[k], epsilon = 1e-9, max_relative = 1e-6);
        }
    }

    #[test]
    fn predict_linear_motion() {
        let fit = TrajectoryFit {
            base_frame: 0,
            x: [0.0, 0.0, 1.0, 0.0],
            y: [0.0, 0.0, 0.0, 0.0],
        };
        assert_relative_eq!(predict_position(&fit, 7).x, 7.0, epsilon = 1e-12);
    }

    #[test]
    fn score_matrix_gate_is_strict() {
        let m = build_score_matrix(
            &[Vector2::new(0.0, 0.0)],
            &[Vector2::new(3.0, 4.0)],
            25.0,
        );
        assert_relative_eq!(m.distance2(0, 0), 25.0, epsilon = 1e-12);
        assert!(!m.gated(0, 0), "boundary distance must be gated out");

        let exact = build_score_matrix(&[Vector2::new(1.0, 2.0)], &[Vector2::new(1.0, 2.0)], 1e-6);
        assert!(exact.gated(0, 0));
    }

    #[test]
    fn score_matrix_degenerate_dims() {
        let m = build_score_matrix(&[], &[Vector2::new(0.0, 0.0)], 1.0);
        assert_eq!((m.rows(), m.cols()), (0, 1));
        let a = assign(&m);
        assert!(a.pairs.is_empty());
        assert_eq!(a.unmatched_cols, vec![0]);
    }

    #[test]
    fn assign_single_pair() {
        let m = build_score_matrix(&[Vector2::new(0.0, 0.0)], &[Vector2::new(0.1, 0.0)], 1.0);
        let a = assign(&m);
        assert_eq!(a.pairs, vec![(0, 0)]);
    }

    #[test]
    fn assign_two_by_two_prefers_diagonal() {
        // distances [[1,2],[2,1]]: optimal total 2 via (0,0),(1,1)
        let m = build_score_matrix(
            &[Vector2::new(0.0, 0.0), Vector2::new(3.0, 0.0)],
            &[Vector2::new(1.0, 0.0), Vector2::new(2.0, 0.0)],
            100.0,
        );
        let a = assign(&m);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_relative_eq!(a.total_cost, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn assign_leaves_fully_gated_rows_unmatched() {
        let m = build_score_matrix(
            &[Vector2::new(0.0, 0.0), Vector2::new(100.0, 0.0)],
            &[Vector2::new(0.1, 0.0)],
            4.0,
        );
        let a = assign(&m);
        assert_eq!(a.pairs, vec![(0, 0)]);
        assert_eq!(a.unmatched_rows, vec![1]);
    }

    #[test]
    fn step_spawns_tracks_for_new_detections() {
        let mut store = TrackStore::new();
        let dets = vec![lifted(0, 0.0, 0.0), lifted(0, 5.0, 0.0), lifted(0, 0.0, 5.0)];
        let rec = step_tracks(&mut store, 0, &dets, &TrackingConfig::default());
        assert_eq!(store.len(), 3);
        assert_eq!(rec.spawned.len(), 3);
        assert!(rec.pairs.is_empty());
        assert!(store.tracks().iter().all(|t| !t.initialized));
    }

    #[test]
    fn step_matches_constant_velocity_track() {
        let mut store = TrackStore::new();
        let cfg = TrackingConfig::default();
        // 6 noise-free constant-velocity observations
        for t in 0..6 {
            let dets = vec![lifted(t, t as f64 * 1.5, 0.0)];
            step_tracks(&mut store, t, &dets, &cfg);
        }
        assert_eq!(store.len(), 1);
        assert!(store.tracks()[0].initialized);
        // detection at the extrapolated point matches and extends history
        let dets = vec![lifted(6, 9.0, 0.0)];
        let rec = step_tracks(&mut store, 6, &dets, &cfg);
        assert_eq!(rec.pairs.len(), 1);
        assert_eq!(store.tracks()[0].history.len(), 7);
    }

    #[test]
    fn step_terminates_after_miss_limit() {
        let mut store = TrackStore::new();
        let cfg = TrackingConfig::default();
        step_tracks(&mut store, 0, &[lifted(0, 0.0, 0.0)], &cfg);
        let id = store.tracks()[0].id;
        let mut terminated_at = None;
        for t in 1..=(cfg.miss_limit as FrameId + 1) {
            let rec = step_tracks(&mut store, t, &[], &cfg);
            if rec.terminated.contains(&id) {
                terminated_at = Some(t);
            }
        }
        assert_eq!(terminated_at, Some(cfg.miss_limit as FrameId + 1));
        assert!(store.is_empty());
    }

    #[test]
    fn step_keeps_classes_apart() {
        let mut store = TrackStore::new();
        let cfg = TrackingConfig::default();
        step_tracks(&mut store, 0, &[lifted(0, 0.0, 0.0)], &cfg);
        // a pedestrian detection at the same spot must not match a car track
        let ped = LiftedDetection {
            detection: Detection {
                frame: 1,
                body_pose: Pose::from_translation(0.0, 0.0, 0.0),
                class: ObjectClass::Pedestrian,
            },
            world_pose: Pose::from_translation(0.0, 0.0, 0.0),
        };
        let rec = step_tracks(&mut store, 1, &[ped], &cfg);
        assert!(rec.pairs.is_empty());
        assert_eq!(rec.spawned.len(), 1);
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn history_is_clipped_to_window() {
        let mut store = TrackStore::new();
        let cfg = TrackingConfig::default();
        for t in 0..20 {
            step_tracks(&mut store, t, &[lifted(t, t as f64 * 0.5, 0.0)], &cfg);
        }
        let track = &store.tracks()[0];
        assert_eq!(track.history.len(), cfg.window);
        assert_eq!(track.history.first().unwrap().0, 10);
        let frames: Vec<FrameId> = track.history.iter().map(|(f, _)| *f).collect();
        let mut sorted = frames.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(frames, sorted, "frames strictly increasing");
    }
}
