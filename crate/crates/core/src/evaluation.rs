//! Trajectory and tracking metrics.
//!
//! RTE / RRE are the mean translational / rotational magnitudes of the
//! per-frame-pair relative error between estimated and ground-truth
//! trajectories; both are invariant to a global rigid offset of either
//! trajectory. ATE is the RMS translation error after aligning the first
//! pose. Association accuracy joins the tracker's per-frame match records
//! with the simulator's ground-truth detection ids and counts identity
//! switches.

use serde::Serialize;
use thiserror::Error;

use crate::geometry::Pose;
use crate::tracking::{AssociationRecord, FrameId};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("trajectories share fewer than 2 frames")]
    TooFewCommonFrames,
    #[error("frame indices must be strictly increasing (offender: {frame})")]
    NonMonotonicFrames { frame: FrameId },
}

/// An estimated or ground-truth trajectory: ordered (frame, pose) pairs.
#[derive(Clone, Debug)]
pub struct TrajectoryEstimate {
    poses: Vec<(FrameId, Pose)>,
}

impl TrajectoryEstimate {
    pub fn new(poses: Vec<(FrameId, Pose)>) -> Result<Self, EvaluationError> {
        for pair in poses.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(EvaluationError::NonMonotonicFrames { frame: pair[1].0 });
            }
        }
        Ok(TrajectoryEstimate { poses })
    }

    /// Poses indexed 0..n with consecutive frames.
    pub fn from_poses(poses: &[Pose]) -> Self {
        TrajectoryEstimate {
            poses: poses
                .iter()
                .enumerate()
                .map(|(i, p)| (i as FrameId, *p))
                .collect(),
        }
    }

    pub fn poses(&self) -> &[(FrameId, Pose)] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn get(&self, frame: FrameId) -> Option<&Pose> {
        self.poses
            .binary_search_by_key(&frame, |(f, _)| *f)
            .ok()
            .map(|i| &self.poses[i].1)
    }
}

/// Error of one consecutive common frame pair.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RelativeErrorSample {
    pub frame_a: FrameId,
    pub frame_b: FrameId,
    pub translation_m: f64,
    pub rotation_rad: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricReport {
    /// Mean translation norm of the per-pair relative error (m).
    pub rte_m: f64,
    /// Mean rotation angle of the per-pair relative error (rad).
    pub rre_rad: f64,
    /// Same in degrees.
    pub rre_deg: f64,
    /// RMS translation error after aligning the first pose (m).
    pub ate_m: f64,
    pub pairs: usize,
    pub per_frame: Vec<RelativeErrorSample>,
}

impl MetricReport {
    /// Aligned plain-text table; the combined cell uses the same
    /// "RTE / RRE" form as the usual benchmark tables.
    pub fn format_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<12} {:>12}\n", "metric", "value"));
        out.push_str(&format!("{:<12} {:>12.4}\n", "RTE (m)", self.rte_m));
        out.push_str(&format!("{:<12} {:>12.6}\n", "RRE (rad)", self.rre_rad));
        out.push_str(&format!("{:<12} {:>12.4}\n", "RRE (deg)", self.rre_deg));
        out.push_str(&format!("{:<12} {:>12.4}\n", "ATE (m)", self.ate_m));
        out.push_str(&format!(
            "{:<12} {:>7.2} / {:.3}\n",
            "RTE / RRE", self.rte_m, self.rre_rad
        ));
        out
    }
}

/// Relative and absolute trajectory errors over the common frame set.
///
/// For each consecutive pair (i, j) of common frames the error pose is
/// `E = between(between(gt_i, gt_j), between(est_i, est_j))`; RTE and RRE
/// average its translation norm and rotation angle. ATE rigidly aligns the
/// estimate's first common pose onto the ground truth and takes the RMS of
/// the remaining translation errors.
pub fn relative_errors(
    estimate: &TrajectoryEstimate,
    ground_truth: &TrajectoryEstimate,
) -> Result<MetricReport, EvaluationError> {
    let common: Vec<(FrameId, &Pose, &Pose)> = estimate
        .poses()
        .iter()
        .filter_map(|(f, est)| ground_truth.get(*f).map(|gt| (*f, est, gt)))
        .collect();
    if common.len() < 2 {
        return Err(EvaluationError::TooFewCommonFrames);
    }

    let mut per_frame = Vec::with_capacity(common.len() - 1);
    for pair in common.windows(2) {
        let (fa, est_a, gt_a) = pair[0];
        let (fb, est_b, gt_b) = pair[1];
        let error = gt_a.between(gt_b).between(&est_a.between(est_b));
        per_frame.push(RelativeErrorSample {
            frame_a: fa,
            frame_b: fb,
            translation_m: error.translation().norm(),
            rotation_rad: error.rotation_angle(),
        });
    }
    let pairs = per_frame.len();
    let rte = per_frame.iter().map(|s| s.translation_m).sum::<f64>() / pairs as f64;
    let rre = per_frame.iter().map(|s| s.rotation_rad).sum::<f64>() / pairs as f64;

    // align the first pose, then RMS position error
    let align = common[0].2.compose(&common[0].1.inverse());
    let sq_sum: f64 = common
        .iter()
        .map(|(_, est, gt)| {
            (align.compose(est).translation() - gt.translation()).norm_squared()
        })
        .sum();
    let ate = (sq_sum / common.len() as f64).sqrt();

    Ok(MetricReport {
        rte_m: rte,
        rre_rad: rre,
        rre_deg: rre.to_degrees(),
        ate_m: ate,
        pairs,
        per_frame,
    })
}

/// Association quality against ground-truth detection identities.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct AssociationAccuracy {
    /// Matched detections whose ground-truth id equals the id their track
    /// first locked onto, over all true detections.
    pub correct_match_rate: f64,
    /// Frames where a track's matched ground-truth id differs from its
    /// previously matched id.
    pub id_switches: usize,
    pub matches: usize,
    pub total_truth_detections: usize,
}

/// Count id switches and the correct-match rate.
///
/// `truth_ids[frame][detection index]` gives the ground-truth object id of
/// each detection (`None` for clutter). Spawning counts as the new track's
/// first match.
pub fn association_accuracy(
    records: &[AssociationRecord],
    truth_ids: &[Vec<Option<u64>>],
) -> AssociationAccuracy {
    let total_truth_detections = truth_ids
        .iter()
        .map(|frame| frame.iter().filter(|id| id.is_some()).count())
        .sum();

    // per track, the time-ordered ground-truth ids it matched
    let mut per_track: std::collections::BTreeMap<u64, Vec<u64>> =
        std::collections::BTreeMap::new();
    let mut matches = 0usize;
    let mut correct = 0usize;
    let mut first_truth: std::collections::BTreeMap<u64, u64> = std::collections::BTreeMap::new();
    for record in records {
        let frame = record.frame as usize;
        for (track, det) in record.pairs.iter().chain(record.spawned.iter()) {
            matches += 1;
            let truth = truth_ids
                .get(frame)
                .and_then(|f| f.get(*det))
                .copied()
                .flatten();
            if let Some(truth) = truth {
                per_track.entry(*track).or_default().push(truth);
                let owner = *first_truth.entry(*track).or_insert(truth);
                if truth == owner {
                    correct += 1;
                }
            }
        }
    }
    let id_switches = per_track
        .values()
        .map(|ids| ids.windows(2).filter(|w| w[0] != w[1]).count())
        .sum();
    let correct_match_rate = if total_truth_detections == 0 {
        0.0
    } else {
        correct as f64 / total_truth_detections as f64
    };
    AssociationAccuracy {
        correct_match_rate,
        id_switches,
        matches,
        total_truth_detections,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn straight(n: usize, step: f64) -> Vec<Pose> {
        (0..n)
            .map(|i| Pose::from_translation(i as f64 * step, 0.0, 0.0))
            .collect()
    }

    #[test]
    fn identical_trajectories_have_zero_errors() {
        let traj = TrajectoryEstimate::from_poses(&straight(10, 1.0));
        let report = relative_errors(&traj, &traj).unwrap();
        assert_relative_eq!(report.rte_m, 0.0, epsilon = 1e-12);
        assert_relative_eq!(report.rre_rad, 0.0, epsilon = 1e-12);
        assert_relative_eq!(report.ate_m, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_rigid_offset_is_invisible_to_relative_errors() {
        let gt = TrajectoryEstimate::from_poses(&straight(10, 1.0));
        let offset = Pose::from_xyz_yaw(5.0, -2.0, 0.0, 0.8);
        let est = TrajectoryEstimate::from_poses(
            &gt.poses().iter().map(|(_, p)| offset.compose(p)).collect::<Vec<_>>(),
        );
        let report = relative_errors(&est, &gt).unwrap();
        assert_relative_eq!(report.rte_m, 0.0, epsilon = 1e-12);
        assert_relative_eq!(report.rre_rad, 0.0, epsilon = 1e-12);
        // first-pose alignment also removes the offset entirely here
        assert_relative_eq!(report.ate_m, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn global_left_transform_of_both_trajectories_changes_nothing() {
        let gt_poses = straight(8, 1.0);
        let est_poses: Vec<Pose> = gt_poses
            .iter()
            .enumerate()
            .map(|(i, p)| p.retract(&crate::geometry::Twist::new(
                nalgebra::Vector3::new(0.0, 0.0, 0.01 * i as f64),
                nalgebra::Vector3::new(0.05 * i as f64, 0.0, 0.0),
            )))
            .collect();
        let world = Pose::from_xyz_yaw(-3.0, 7.0, 0.0, 1.1);
        let a = relative_errors(
            &TrajectoryEstimate::from_poses(&est_poses),
            &TrajectoryEstimate::from_poses(&gt_poses),
        )
        .unwrap();
        let b = relative_errors(
            &TrajectoryEstimate::from_poses(
                &est_poses.iter().map(|p| world.compose(p)).collect::<Vec<_>>(),
            ),
            &TrajectoryEstimate::from_poses(
                &gt_poses.iter().map(|p| world.compose(p)).collect::<Vec<_>>(),
            ),
        )
        .unwrap();
        assert_relative_eq!(a.rte_m, b.rte_m, epsilon = 1e-12);
        assert_relative_eq!(a.rre_rad, b.rre_rad, epsilon = 1e-12);
    }

    #[test]
    fn stretched_steps_show_up_as_rte() {
        // each estimated step stretched by +0.1 m along the motion direction
        let gt = TrajectoryEstimate::from_poses(&straight(10, 1.0));
        let est = TrajectoryEstimate::from_poses(&straight(10, 1.1));
        let report = relative_errors(&est, &gt).unwrap();
        assert_relative_eq!(report.rte_m, 0.1, epsilon = 1e-12);
        assert_relative_eq!(report.rre_rad, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn disjoint_frame_sets_error_out() {
        let a = TrajectoryEstimate::new(vec![(0, Pose::identity()), (1, Pose::identity())])
            .unwrap();
        let b = TrajectoryEstimate::new(vec![(5, Pose::identity()), (6, Pose::identity())])
            .unwrap();
        assert!(matches!(
            relative_errors(&a, &b),
            Err(EvaluationError::TooFewCommonFrames)
        ));
    }

    fn record(frame: FrameId, pairs: &[(u64, usize)]) -> AssociationRecord {
        AssociationRecord {
            frame,
            pairs: pairs.to_vec(),
            spawned: vec![],
            terminated: vec![],
        }
    }

    #[test]
    fn perfect_association_has_no_switches() {
        let truth = vec![vec![Some(0), Some(1)]; 5];
        let records: Vec<AssociationRecord> = (0..5)
            .map(|f| {
                let mut r = record(f, &[(10, 0), (11, 1)]);
                if f == 0 {
                    r.spawned = r.pairs.clone();
                    r.pairs.clear();
                }
                r
            })
            .collect();
        let acc = association_accuracy(&records, &truth);
        assert_eq!(acc.id_switches, 0);
        assert_relative_eq!(acc.correct_match_rate, 1.0);
    }

    #[test]
    fn full_swap_counts_two_switches() {
        let truth = vec![vec![Some(0), Some(1)]; 4];
        let records = vec![
            record(0, &[(10, 0), (11, 1)]),
            record(1, &[(10, 0), (11, 1)]),
            // swap at the crossing
            record(2, &[(10, 1), (11, 0)]),
            record(3, &[(10, 1), (11, 0)]),
        ];
        let acc = association_accuracy(&records, &truth);
        assert_eq!(acc.id_switches, 2);
    }

    #[test]
    fn empty_output_has_zero_rate() {
        let truth = vec![vec![Some(0)]; 3];
        let acc = association_accuracy(&[], &truth);
        assert_eq!(acc.matches, 0);
        assert_relative_eq!(acc.correct_match_rate, 0.0);
        assert_eq!(acc.total_truth_detections, 3);
    }
}
