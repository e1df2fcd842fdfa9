//! Back-end library for joint ego-trajectory and object-trajectory
//! estimation: odometry and object detections are fused in a sliding-window
//! factor-graph optimization, with a deterministic scenario simulator
//! standing in for the sensor front-end.
//!
//! Modules:
//! - [`geometry`]: SE(3) poses, twists and tangent-space Jacobians.
//! - [`tracking`]: sliding-window trajectory association (cubic fit,
//!   gating, optimal assignment, track lifecycle).
//! - [`window_graph`]: the sliding-window factor graph, its residuals,
//!   the Levenberg-Marquardt solver and Schur-complement marginalization.
//! - [`simulator`]: deterministic scenario generation and measurement
//!   synthesis.
//! - [`evaluation`]: trajectory metrics (RTE / RRE / ATE) and association
//!   accuracy.
//! - [`dataset`], [`config`], [`pipeline`]: file formats, configuration and
//!   the frame loop tying everything together.

pub mod config;
pub mod dataset;
pub mod evaluation;
pub mod geometry;
pub mod pipeline;
pub mod simulator;
pub mod tracking;
pub mod window_graph;

pub use config::PipelineConfig;
pub use dataset::DatasetBundle;
pub use evaluation::{MetricReport, TrajectoryEstimate};
pub use geometry::{Pose, Twist};
pub use pipeline::{run_pipeline, PipelineOutput};
pub use simulator::{build_scenario, Scenario, ScenarioSpec, Template};
pub use tracking::{Detection, MotionClass, ObjectClass, Track, TrajectoryFit};
pub use window_graph::{NoiseConfig, WindowGraph};
