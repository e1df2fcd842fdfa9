//! Pipeline configuration and its plain-text key=value file format.

use thiserror::Error;

use crate::tracking::{PredictionMode, TrackingConfig};
use crate::window_graph::{LmConfig, NoiseConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid config: {message}")]
    Invalid { message: String },
}

/// Everything a run needs beyond the dataset itself.
#[derive(Clone, Copy, Debug)]
pub struct PipelineConfig {
    /// Sliding window size k (frames).
    pub window: usize,
    /// Track initialization threshold g (frames).
    pub init_threshold: usize,
    /// Association gate on squared planar distance (m^2).
    pub gate: f64,
    /// Consecutive misses before a track is terminated.
    pub miss_limit: u32,
    /// Static/dynamic displacement threshold over the window (m).
    pub d_static: f64,
    pub noise: NoiseConfig,
    pub lm: LmConfig,
    pub seed: u64,
    pub association: PredictionMode,
    /// With object factors disabled the graph degenerates to the odometry
    /// chain, i.e. pure dead reckoning: the comparison baseline.
    pub object_factors: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window: 10,
            init_threshold: 4,
            gate: 4.0,
            miss_limit: 3,
            d_static: 0.5,
            noise: NoiseConfig::default(),
            lm: LmConfig::default(),
            seed: 0,
            association: PredictionMode::Polynomial,
            object_factors: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.window < 3 {
            return Err(ConfigError::Invalid {
                message: format!("window must be >= 3, got {}", self.window),
            });
        }
        if self.init_threshold < 4 {
            return Err(ConfigError::Invalid {
                message: format!("init_threshold must be >= 4, got {}", self.init_threshold),
            });
        }
        if !(self.gate > 0.0) {
            return Err(ConfigError::Invalid {
                message: format!("gate must be > 0, got {}", self.gate),
            });
        }
        if !(self.d_static > 0.0) {
            return Err(ConfigError::Invalid {
                message: format!("d_static must be > 0, got {}", self.d_static),
            });
        }
        if !(self.lm.lambda_init > 0.0) || self.lm.max_iterations == 0 {
            return Err(ConfigError::Invalid {
                message: "lm_lambda_init must be > 0 and lm_max_iterations >= 1".to_string(),
            });
        }
        self.noise.information().map_err(|e| ConfigError::Invalid {
            message: e.to_string(),
        })?;
        Ok(())
    }

    pub fn tracking(&self) -> TrackingConfig {
        TrackingConfig {
            window: self.window,
            init_threshold: self.init_threshold,
            gate: self.gate,
            miss_limit: self.miss_limit,
            prediction: self.association,
        }
    }
}

fn parse_covariance(value: &str) -> Result<nalgebra::Matrix6<f64>, String> {
    let parts: Vec<f64> = value
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("`{p}` is not a number")))
        .collect::<Result<_, _>>()?;
    let diag: [f64; 6] = match parts.len() {
        1 => [parts[0]; 6],
        6 => [parts[0], parts[1], parts[2], parts[3], parts[4], parts[5]],
        n => return Err(format!("expected 1 or 6 comma-separated variances, got {n}")),
    };
    let mut m = nalgebra::Matrix6::zeros();
    for (i, v) in diag.iter().enumerate() {
        m[(i, i)] = *v;
    }
    Ok(m)
}

fn format_covariance(m: &nalgebra::Matrix6<f64>) -> String {
    (0..6)
        .map(|i| m[(i, i)].to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Parse a key=value config file. `#` starts a comment, unknown keys are
/// errors, omitted keys keep their defaults. Covariances are given as
/// diagonal variances over [rot_x, rot_y, rot_z, trans_x, trans_y,
/// trans_z], either one value for all six or a 6-element list.
pub fn parse_config(text: &str) -> Result<PipelineConfig, ConfigError> {
    let mut cfg = PipelineConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let parse_err = |message: String| ConfigError::Parse {
            line: line_no,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err("expected key=value".to_string()))?;
        let (key, value) = (key.trim(), value.trim());
        let num = |v: &str| -> Result<f64, ConfigError> {
            v.parse().map_err(|_| parse_err(format!("`{v}` is not a number")))
        };
        match key {
            "window" => cfg.window = num(value)? as usize,
            "init_threshold" => cfg.init_threshold = num(value)? as usize,
            "gate" => cfg.gate = num(value)?,
            "miss_limit" => cfg.miss_limit = num(value)? as u32,
            "d_static" => cfg.d_static = num(value)?,
            "cov_odometry" => cfg.noise.odometry = parse_covariance(value).map_err(parse_err)?,
            "cov_observation" => {
                cfg.noise.observation = parse_covariance(value).map_err(parse_err)?
            }
            "cov_pose_change" => {
                cfg.noise.pose_change = parse_covariance(value).map_err(parse_err)?
            }
            "cov_constant_velocity" => {
                cfg.noise.constant_velocity = parse_covariance(value).map_err(parse_err)?
            }
            "lm_lambda_init" => cfg.lm.lambda_init = num(value)?,
            "lm_lambda_factor" => cfg.lm.lambda_factor = num(value)?,
            "lm_lambda_max" => cfg.lm.lambda_max = num(value)?,
            "lm_max_iterations" => cfg.lm.max_iterations = num(value)? as usize,
            "lm_cost_rel_tol" => cfg.lm.cost_rel_tol = num(value)?,
            "lm_step_inf_tol" => cfg.lm.step_inf_tol = num(value)?,
            "lm_gradient_tol" => cfg.lm.gradient_tol = num(value)?,
            "seed" => {
                cfg.seed = value
                    .parse()
                    .map_err(|_| parse_err(format!("`{value}` is not a seed")))?
            }
            "association" => {
                cfg.association = match value {
                    "polynomial" => PredictionMode::Polynomial,
                    "last-position" => PredictionMode::LastPosition,
                    other => {
                        return Err(parse_err(format!(
                            "association must be `polynomial` or `last-position`, got `{other}`"
                        )))
                    }
                }
            }
            "object_factors" => {
                cfg.object_factors = match value {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(parse_err(format!(
                            "object_factors must be true or false, got `{other}`"
                        )))
                    }
                }
            }
            other => return Err(parse_err(format!("unknown key `{other}`"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Render a config as the same key=value format [`parse_config`] reads.
pub fn format_config(cfg: &PipelineConfig) -> String {
    let association = match cfg.association {
        PredictionMode::Polynomial => "polynomial",
        PredictionMode::LastPosition => "last-position",
    };
    format!(
        "window={}\n\
         init_threshold={}\n\
         gate={}\n\
         miss_limit={}\n\
         d_static={}\n\
         cov_odometry={}\n\
         cov_observation={}\n\
         cov_pose_change={}\n\
         cov_constant_velocity={}\n\
         lm_lambda_init={}\n\
         lm_lambda_factor={}\n\
         lm_lambda_max={}\n\
         lm_max_iterations={}\n\
         lm_cost_rel_tol={}\n\
         lm_step_inf_tol={}\n\
         lm_gradient_tol={}\n\
         seed={}\n\
         association={}\n\
         object_factors={}\n",
        cfg.window,
        cfg.init_threshold,
        cfg.gate,
        cfg.miss_limit,
        cfg.d_static,
        format_covariance(&cfg.noise.odometry),
        format_covariance(&cfg.noise.observation),
        format_covariance(&cfg.noise.pose_change),
        format_covariance(&cfg.noise.constant_velocity),
        cfg.lm.lambda_init,
        cfg.lm.lambda_factor,
        cfg.lm.lambda_max,
        cfg.lm.max_iterations,
        cfg.lm.cost_rel_tol,
        cfg.lm.step_inf_tol,
        cfg.lm.gradient_tol,
        cfg.seed,
        association,
        cfg.object_factors,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::window_graph::isotropic_covariance;

    #[test]
    fn round_trips_through_text() {
        let mut cfg = PipelineConfig::default();
        cfg.window = 8;
        cfg.gate = 9.0;
        cfg.noise.observation = isotropic_covariance(0.07);
        cfg.seed = 123;
        cfg.association = PredictionMode::LastPosition;
        cfg.object_factors = false;
        let text = format_config(&cfg);
        let back = parse_config(&text).unwrap();
        assert_eq!(back.window, 8);
        assert_eq!(back.gate, 9.0);
        assert_eq!(back.noise.observation, cfg.noise.observation);
        assert_eq!(back.seed, 123);
        assert_eq!(back.association, PredictionMode::LastPosition);
        assert!(!back.object_factors);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = parse_config("# comment\n\nwindow = 5 # trailing\n").unwrap();
        assert_eq!(cfg.window, 5);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = parse_config("windw=5\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"));
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(parse_config("window=2\n").is_err());
        assert!(parse_config("init_threshold=3\n").is_err());
        assert!(parse_config("gate=0\n").is_err());
        assert!(parse_config("cov_odometry=-1\n").is_err());
    }
}
