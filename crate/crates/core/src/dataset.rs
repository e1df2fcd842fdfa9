//! Dataset bundle: the on-disk form of a run's inputs.
//!
//! A bundle directory holds the offline front-end outputs the pipeline
//! consumes, all versioned with a header line:
//!
//! - `meta.txt`          key=value metadata
//! - `odometry.txt`      one row-major 3x4 pose line per frame (frame 0 is
//!                       the identity), the KITTI odometry line layout
//! - `detections.jsonl`  one JSON object per detection:
//!                       {frame, class, x, y, z, yaw, score[, gt_id]}
//! - `groundtruth.txt`   optional ego ground-truth poses, same line layout
//! - `objects.jsonl`     optional per-frame object ground truth
//!
//! Floats are written with the shortest round-trip representation, so a
//! simulator-exported bundle re-imports bit-identically.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::simulator::{FrameMeasurement, Scenario, SimDetection};
use crate::tracking::{Detection, FrameId, ObjectClass};

const META_HEADER: &str = "# slot-bundle v1";
const ODOMETRY_HEADER: &str = "# odometry 3x4 v1";
const TRAJECTORY_HEADER: &str = "# trajectory 3x4 v1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error("bundle inconsistent: {message}")]
    Inconsistent { message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One detection line of `detections.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame: FrameId,
    pub class: ObjectClass,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub score: f64,
    /// Ground-truth object id when the bundle came from the simulator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_id: Option<u64>,
}

impl DetectionRecord {
    pub fn body_pose(&self) -> Pose {
        Pose::from_xyz_yaw(self.x, self.y, self.z, self.yaw)
    }

    pub fn to_detection(&self) -> Detection {
        Detection {
            frame: self.frame,
            body_pose: self.body_pose(),
            class: self.class,
        }
    }

    fn from_sim(frame: FrameId, det: &SimDetection) -> Self {
        DetectionRecord {
            frame,
            class: det.class,
            x: det.x,
            y: det.y,
            z: det.z,
            yaw: det.yaw,
            score: det.score,
            gt_id: det.truth_id,
        }
    }
}

/// One line of `objects.jsonl`: ground-truth world pose of an object at a
/// frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectTruthRecord {
    pub frame: FrameId,
    pub id: u64,
    pub class: ObjectClass,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    #[serde(rename = "static")]
    pub is_static: bool,
}

impl ObjectTruthRecord {
    pub fn world_pose(&self) -> Pose {
        Pose::from_xyz_yaw(self.x, self.y, self.z, self.yaw)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub name: String,
    pub frames: usize,
    pub frame_rate_hz: f64,
}

/// In-memory form of a bundle directory.
#[derive(Clone, Debug)]
pub struct DatasetBundle {
    pub meta: BundleMeta,
    /// Relative pose per frame; entry 0 is the identity by convention.
    pub odometry: Vec<Pose>,
    /// Detections grouped by frame, `detections[frame]`.
    pub detections: Vec<Vec<DetectionRecord>>,
    pub ego_truth: Option<Vec<Pose>>,
    pub object_truth: Option<Vec<ObjectTruthRecord>>,
}

impl DatasetBundle {
    pub fn frames(&self) -> usize {
        self.meta.frames
    }

    pub fn detections_at(&self, frame: FrameId) -> &[DetectionRecord] {
        &self.detections[frame as usize]
    }

    /// Ground-truth id per detection per frame, for association scoring.
    pub fn truth_id_table(&self) -> Vec<Vec<Option<u64>>> {
        self.detections
            .iter()
            .map(|frame| frame.iter().map(|d| d.gt_id).collect())
            .collect()
    }

    /// Whether any detection carries a ground-truth id.
    pub fn has_truth_ids(&self) -> bool {
        self.detections
            .iter()
            .any(|frame| frame.iter().any(|d| d.gt_id.is_some()))
    }

    /// Convert a scenario's measurement stream into a bundle (shared code
    /// path for simulated and file-based runs).
    pub fn from_scenario(scenario: &Scenario, name: &str) -> Self {
        let frames = scenario.frames();
        let measurements = scenario.emit_all();
        let odometry = measurements
            .iter()
            .map(|m| m.odometry.unwrap_or_else(Pose::identity))
            .collect();
        let detections = measurements
            .iter()
            .map(|m: &FrameMeasurement| {
                m.detections
                    .iter()
                    .map(|d| DetectionRecord::from_sim(m.frame, d))
                    .collect()
            })
            .collect();
        let object_truth = scenario
            .objects
            .iter()
            .flat_map(|object| {
                object.poses.iter().enumerate().map(move |(t, pose)| ObjectTruthRecord {
                    frame: t as FrameId,
                    id: object.id,
                    class: object.class,
                    x: pose.x(),
                    y: pose.y(),
                    z: pose.z(),
                    yaw: pose.yaw(),
                    is_static: object.is_static,
                })
            })
            .collect::<Vec<_>>();
        DatasetBundle {
            meta: BundleMeta {
                name: name.to_string(),
                frames,
                frame_rate_hz: 10.0,
            },
            odometry,
            detections,
            ego_truth: Some(scenario.ego.clone()),
            object_truth: Some(object_truth),
        }
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let frames = self.meta.frames;
        if self.odometry.len() != frames {
            return Err(DatasetError::Inconsistent {
                message: format!(
                    "odometry has {} entries for {} frames; every frame needs one",
                    self.odometry.len(),
                    frames
                ),
            });
        }
        if self.detections.len() != frames {
            return Err(DatasetError::Inconsistent {
                message: format!(
                    "detection table covers {} frames, metadata says {}",
                    self.detections.len(),
                    frames
                ),
            });
        }
        if let Some(gt) = &self.ego_truth {
            if gt.len() != frames {
                return Err(DatasetError::Inconsistent {
                    message: format!("ground truth has {} poses for {} frames", gt.len(), frames),
                });
            }
        }
        Ok(())
    }
}

fn format_pose_line(pose: &Pose) -> String {
    let v = pose.to_row_major_3x4();
    let mut line = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            line.push(' ');
        }
        let _ = write!(line, "{x}");
    }
    line
}

fn parse_pose_line(file: &Path, line_no: usize, line: &str) -> Result<Pose, DatasetError> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 12 {
        return Err(DatasetError::Parse {
            file: file.to_path_buf(),
            line: line_no,
            message: format!(
                "expected 12 whitespace-separated numbers (row-major 3x4 pose), got {}",
                parts.len()
            ),
        });
    }
    let mut v = [0.0f64; 12];
    for (i, part) in parts.iter().enumerate() {
        v[i] = part.parse().map_err(|_| DatasetError::Parse {
            file: file.to_path_buf(),
            line: line_no,
            message: format!("`{part}` is not a number"),
        })?;
    }
    let pose = Pose::from_row_major_3x4(&v);
    let err = pose.orthonormality_error();
    let det = pose.rotation().determinant();
    if err > 1e-3 || det <= 0.0 {
        return Err(DatasetError::Parse {
            file: file.to_path_buf(),
            line: line_no,
            message: "rotation part is not orthonormal with determinant +1".to_string(),
        });
    }
    if err > 1e-9 {
        // repair mild rounding from third-party files
        return Ok(Pose::from_parts(pose.rotation(), pose.translation()));
    }
    Ok(pose)
}

/// Read a pose-per-line trajectory file (KITTI layout; `#` lines ignored).
pub fn read_trajectory_file(path: &Path) -> Result<Vec<Pose>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut poses = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        poses.push(parse_pose_line(path, idx + 1, trimmed)?);
    }
    Ok(poses)
}

/// Write a pose-per-line trajectory file with a version header.
pub fn write_trajectory_file(path: &Path, poses: &[Pose]) -> Result<(), DatasetError> {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for pose in poses {
        out.push_str(&format_pose_line(pose));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(io_err(path))
}

fn write_jsonl<T: Serialize>(
    path: &Path,
    header: &serde_json::Value,
    items: impl Iterator<Item = T>,
) -> Result<(), DatasetError> {
    let mut out = serde_json::to_string(header).expect("header serializes");
    out.push('\n');
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(io_err(path))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(
    path: &Path,
    expected_format: &str,
) -> Result<Vec<T>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| DatasetError::Parse {
        file: path.to_path_buf(),
        line: 1,
        message: "empty file (expected a header line)".to_string(),
    })?;
    let header: serde_json::Value =
        serde_json::from_str(header).map_err(|e| DatasetError::Parse {
            file: path.to_path_buf(),
            line: 1,
            message: format!("bad header: {e}"),
        })?;
    if header["format"] != expected_format {
        return Err(DatasetError::Parse {
            file: path.to_path_buf(),
            line: 1,
            message: format!("expected format `{expected_format}`, got {}", header["format"]),
        });
    }
    let mut items = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            file: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(items)
}

/// Write a bundle directory.
pub fn save_bundle(dir: &Path, bundle: &DatasetBundle) -> Result<(), DatasetError> {
    bundle.validate()?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;

    let mut meta = String::from(META_HEADER);
    meta.push('\n');
    let _ = writeln!(meta, "name={}", bundle.meta.name);
    let _ = writeln!(meta, "frames={}", bundle.meta.frames);
    let _ = writeln!(meta, "frame_rate_hz={}", bundle.meta.frame_rate_hz);
    std::fs::write(dir.join("meta.txt"), meta).map_err(io_err(&dir.join("meta.txt")))?;

    let odo_path = dir.join("odometry.txt");
    let mut odo = String::from(ODOMETRY_HEADER);
    odo.push('\n');
    for pose in &bundle.odometry {
        odo.push_str(&format_pose_line(pose));
        odo.push('\n');
    }
    std::fs::write(&odo_path, odo).map_err(io_err(&odo_path))?;

    write_jsonl(
        &dir.join("detections.jsonl"),
        &serde_json::json!({"format": "detections", "version": 1}),
        bundle.detections.iter().flatten(),
    )?;

    if let Some(gt) = &bundle.ego_truth {
        write_trajectory_file(&dir.join("groundtruth.txt"), gt)?;
    }
    if let Some(objects) = &bundle.object_truth {
        write_jsonl(
            &dir.join("objects.jsonl"),
            &serde_json::json!({"format": "objects", "version": 1}),
            objects.iter(),
        )?;
    }
    Ok(())
}

/// Load a bundle directory written by [`save_bundle`] (or assembled by
/// hand in the same layout).
pub fn load_bundle(dir: &Path) -> Result<DatasetBundle, DatasetError> {
    let meta_path = dir.join("meta.txt");
    let meta_text = std::fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let mut name = String::new();
    let mut frames: Option<usize> = None;
    let mut frame_rate_hz = 10.0;
    for (idx, line) in meta_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| DatasetError::Parse {
            file: meta_path.clone(),
            line: idx + 1,
            message: "expected key=value".to_string(),
        })?;
        match key.trim() {
            "name" => name = value.trim().to_string(),
            "frames" => {
                frames = Some(value.trim().parse().map_err(|_| DatasetError::Parse {
                    file: meta_path.clone(),
                    line: idx + 1,
                    message: format!("`{value}` is not a frame count"),
                })?)
            }
            "frame_rate_hz" => {
                frame_rate_hz = value.trim().parse().map_err(|_| DatasetError::Parse {
                    file: meta_path.clone(),
                    line: idx + 1,
                    message: format!("`{value}` is not a number"),
                })?
            }
            other => {
                return Err(DatasetError::Parse {
                    file: meta_path.clone(),
                    line: idx + 1,
                    message: format!("unknown key `{other}`"),
                })
            }
        }
    }
    let frames = frames.ok_or(DatasetError::Inconsistent {
        message: "meta.txt does not declare frames".to_string(),
    })?;

    let odometry = read_trajectory_file(&dir.join("odometry.txt"))?;

    let records: Vec<DetectionRecord> = read_jsonl(&dir.join("detections.jsonl"), "detections")?;
    let mut detections: Vec<Vec<DetectionRecord>> = vec![Vec::new(); frames];
    for record in records {
        let frame = record.frame as usize;
        if frame >= frames {
            return Err(DatasetError::Inconsistent {
                message: format!("detection references frame {frame}, bundle has {frames}"),
            });
        }
        detections[frame].push(record);
    }

    let gt_path = dir.join("groundtruth.txt");
    let ego_truth = if gt_path.exists() {
        Some(read_trajectory_file(&gt_path)?)
    } else {
        None
    };
    let obj_path = dir.join("objects.jsonl");
    let object_truth = if obj_path.exists() {
        Some(read_jsonl(&obj_path, "objects")?)
    } else {
        None
    };

    let bundle = DatasetBundle {
        meta: BundleMeta {
            name,
            frames,
            frame_rate_hz,
        },
        odometry,
        detections,
        ego_truth,
        object_truth,
    };
    bundle.validate()?;
    Ok(bundle)
}
