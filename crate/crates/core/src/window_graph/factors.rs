//! Factor types of the sliding-window graph and their residuals.
//!
//! All four residuals have the shape log(Z) for a product Z of poses, and
//! are zero exactly when the states are consistent with the measurement:
//!
//! - odometry:          log((X_prev^-1 X_curr)^-1 T)
//! - observation:       log((X^-1 o)^-1 b)
//! - pose change:       log((o_prev^-1 o_curr)^-1 c)
//! - constant velocity: log(c_prev^-1 c_curr)
//!
//! Jacobians are with respect to right perturbations of each variable and
//! come from two identities: log(Z exp(e)) ~ log(Z) + Jr^-1(log Z) e and
//! exp(d) M = M exp(Ad(M^-1) d).

use nalgebra::{Matrix6, Vector6};
use serde::Serialize;

use crate::geometry::jacobians::{adjoint, right_jacobian_inv};
use crate::geometry::{Pose, Twist};
use crate::tracking::FrameId;

/// Identifies one state variable of the window graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VertexKey {
    /// Ego pose X_t.
    Ego { frame: FrameId },
    /// World pose of a dynamic object at one frame.
    Object { track: u64, frame: FrameId },
    /// World pose of a static object (single landmark vertex).
    Landmark { track: u64 },
    /// Pose change of a dynamic object between `frame - 1` and `frame`.
    Change { track: u64, frame: FrameId },
}

impl VertexKey {
    /// Track id for object-related vertices.
    pub fn track(&self) -> Option<u64> {
        match self {
            VertexKey::Ego { .. } => None,
            VertexKey::Object { track, .. }
            | VertexKey::Landmark { track }
            | VertexKey::Change { track, .. } => Some(*track),
        }
    }
}

/// Residual of the odometry factor between consecutive ego poses.
pub fn residual_odometry(x_prev: &Pose, x_curr: &Pose, odometry: &Pose) -> Twist {
    x_prev.between(x_curr).inverse().compose(odometry).log()
}

/// Residual of the observation factor tying an ego pose, an object pose and
/// the ego-frame detection together; zero iff o = X * b.
pub fn residual_observation(ego: &Pose, object: &Pose, body: &Pose) -> Twist {
    ego.between(object).inverse().compose(body).log()
}

/// Residual between consecutive object poses and the pose-change vertex;
/// zero iff c = o_prev^-1 * o_curr.
pub fn residual_pose_change(o_prev: &Pose, o_curr: &Pose, change: &Pose) -> Twist {
    o_prev.between(o_curr).inverse().compose(change).log()
}

/// Residual between consecutive pose-change vertices (constant speed
/// assumption over a short period); zero iff they are equal.
pub fn residual_constant_velocity(c_prev: &Pose, c_curr: &Pose) -> Twist {
    c_prev.between(c_curr).log()
}

/// One evaluated factor: residual vector plus the Jacobian block per
/// involved variable, aligned with [`Factor::keys`].
pub(crate) struct FactorEval {
    pub residual: Vector6<f64>,
    pub jacobians: Vec<Matrix6<f64>>,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FactorKind {
    Odometry {
        prev: VertexKey,
        curr: VertexKey,
        measured: Pose,
    },
    Observation {
        ego: VertexKey,
        object: VertexKey,
        measured: Pose,
    },
    PoseChange {
        prev: VertexKey,
        curr: VertexKey,
        change: VertexKey,
    },
    ConstantVelocity {
        prev: VertexKey,
        curr: VertexKey,
    },
}

/// A factor plus its information matrix (inverse measurement covariance).
#[derive(Clone, Debug)]
pub struct Factor {
    pub kind: FactorKind,
    pub information: Matrix6<f64>,
}

impl Factor {
    pub fn keys(&self) -> Vec<VertexKey> {
        match &self.kind {
            FactorKind::Odometry { prev, curr, .. } => vec![*prev, *curr],
            FactorKind::Observation { ego, object, .. } => vec![*ego, *object],
            FactorKind::PoseChange { prev, curr, change } => vec![*prev, *curr, *change],
            FactorKind::ConstantVelocity { prev, curr } => vec![*prev, *curr],
        }
    }

    pub fn touches(&self, key: &VertexKey) -> bool {
        self.keys().contains(key)
    }

    /// Residual at the given variable values (order as [`Factor::keys`]).
    pub fn residual(&self, values: &[Pose]) -> Twist {
        match &self.kind {
            FactorKind::Odometry { measured, .. } => {
                residual_odometry(&values[0], &values[1], measured)
            }
            FactorKind::Observation { measured, .. } => {
                residual_observation(&values[0], &values[1], measured)
            }
            FactorKind::PoseChange { .. } => {
                residual_pose_change(&values[0], &values[1], &values[2])
            }
            FactorKind::ConstantVelocity { .. } => {
                residual_constant_velocity(&values[0], &values[1])
            }
        }
    }

    /// Residual and analytic Jacobians at the given variable values.
    pub(crate) fn evaluate(&self, values: &[Pose]) -> FactorEval {
        match &self.kind {
            FactorKind::Odometry { measured, .. } => {
                // Z = X_curr^-1 X_prev T
                let z = values[1].inverse().compose(&values[0]).compose(measured);
                let r = z.log();
                let jr_inv = right_jacobian_inv(&r);
                FactorEval {
                    residual: r.as_vector(),
                    jacobians: vec![
                        jr_inv * adjoint(&measured.inverse()),
                        -jr_inv * adjoint(&z.inverse()),
                    ],
                }
            }
            FactorKind::Observation { measured, .. } => {
                // Z = o^-1 X b
                let z = values[1].inverse().compose(&values[0]).compose(measured);
                let r = z.log();
                let jr_inv = right_jacobian_inv(&r);
                FactorEval {
                    residual: r.as_vector(),
                    jacobians: vec![
                        jr_inv * adjoint(&measured.inverse()),
                        -jr_inv * adjoint(&z.inverse()),
                    ],
                }
            }
            FactorKind::PoseChange { .. } => {
                // Z = o_curr^-1 o_prev c
                let z = values[1].inverse().compose(&values[0]).compose(&values[2]);
                let r = z.log();
                let jr_inv = right_jacobian_inv(&r);
                FactorEval {
                    residual: r.as_vector(),
                    jacobians: vec![
                        jr_inv * adjoint(&values[2].inverse()),
                        -jr_inv * adjoint(&z.inverse()),
                        jr_inv,
                    ],
                }
            }
            FactorKind::ConstantVelocity { .. } => {
                // Z = c_prev^-1 c_curr
                let z = values[0].between(&values[1]);
                let r = z.log();
                let jr_inv = right_jacobian_inv(&r);
                FactorEval {
                    residual: r.as_vector(),
                    jacobians: vec![-jr_inv * adjoint(&z.inverse()), jr_inv],
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // rotation components kept moderate so products of several poses stay
    // clear of the log branch at angle pi, where finite differences of the
    // residual are meaningless
    fn random_pose(rng: &mut impl Rng) -> Pose {
        Pose::exp(&Twist::new(
            Vector3::new(
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.6..0.6),
            ),
            Vector3::new(
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
            ),
        ))
    }

    #[test]
    fn residuals_vanish_at_consistent_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let x_prev = random_pose(&mut rng);
            let t = random_pose(&mut rng);
            let x_curr = x_prev.compose(&t);
            assert!(residual_odometry(&x_prev, &x_curr, &t).norm() < 1e-9);

            let x = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let o = x.compose(&b);
            assert!(residual_observation(&x, &o, &b).norm() < 1e-9);

            let o_prev = random_pose(&mut rng);
            let o_curr = random_pose(&mut rng);
            let c = o_prev.between(&o_curr);
            assert!(residual_pose_change(&o_prev, &o_curr, &c).norm() < 1e-9);

            assert!(residual_constant_velocity(&c, &c).norm() < 1e-9);
        }
    }

    #[test]
    fn trivial_identity_cases() {
        let id = Pose::identity();
        assert_eq!(residual_odometry(&id, &id, &id).as_vector(), Vector6::zeros());
        assert_eq!(
            residual_constant_velocity(&id, &id).as_vector(),
            Vector6::zeros()
        );
        let b = Pose::from_translation(2.0, -1.0, 0.5);
        assert!(residual_observation(&id, &b, &b).norm() < 1e-12);
    }

    #[test]
    fn observation_offset_has_unit_translation_residual() {
        // X = identity, o offset from b by 1m in x: residual translation
        // magnitude is 1 with the sign fixed by the (X^-1 o)^-1 b convention.
        let b = Pose::from_translation(3.0, 0.0, 0.0);
        let o = Pose::from_translation(4.0, 0.0, 0.0);
        let r = residual_observation(&Pose::identity(), &o, &b);
        // oracle: log(o^-1 * b) has translation (-1, 0, 0)
        assert_relative_eq!(r.trans, Vector3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);
        assert!(r.rot.norm() < 1e-12);
    }

    #[test]
    fn odometry_residual_first_order_in_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x_prev = random_pose(&mut rng);
        let t = random_pose(&mut rng);
        let delta = Twist::new(
            Vector3::new(1e-4, -2e-4, 5e-5),
            Vector3::new(2e-4, 1e-4, -1e-4),
        );
        let x_curr = x_prev.compose(&t).retract(&delta);
        let r = residual_odometry(&x_prev, &x_curr, &t);
        // |r| equals |delta| to first order
        assert_relative_eq!(r.norm(), delta.norm(), max_relative = 1e-3);
    }

    #[test]
    fn constant_turn_rate_keeps_constant_velocity_residual_zero() {
        // circular motion: constant pose change includes rotation
        let c = Pose::from_xyz_yaw(1.0, 0.0, 0.0, 0.2);
        let mut o = Pose::from_xyz_yaw(5.0, -2.0, 0.0, 0.4);
        let mut changes = Vec::new();
        for _ in 0..5 {
            let next = o.compose(&c);
            changes.push(o.between(&next));
            o = next;
        }
        for pair in changes.windows(2) {
            assert!(residual_constant_velocity(&pair[0], &pair[1]).norm() < 1e-12);
        }
    }

    fn numeric_jacobians(factor: &Factor, values: &[Pose]) -> Vec<Matrix6<f64>> {
        let h = 1e-6;
        (0..values.len())
            .map(|vi| {
                let mut jac = Matrix6::zeros();
                for k in 0..6 {
                    let mut e = Vector6::zeros();
                    e[k] = h;
                    let mut plus = values.to_vec();
                    plus[vi] = plus[vi].retract(&Twist::from_vector(&e));
                    e[k] = -h;
                    let mut minus = values.to_vec();
                    minus[vi] = minus[vi].retract(&Twist::from_vector(&e));
                    let col = (factor.residual(&plus).as_vector()
                        - factor.residual(&minus).as_vector())
                        / (2.0 * h);
                    jac.set_column(k, &col);
                }
                jac
            })
            .collect()
    }

    #[test]
    fn analytic_jacobians_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let ego = VertexKey::Ego { frame: 0 };
        let ego2 = VertexKey::Ego { frame: 1 };
        let obj = VertexKey::Object { track: 0, frame: 1 };
        let obj2 = VertexKey::Object { track: 0, frame: 2 };
        let chg = VertexKey::Change { track: 0, frame: 2 };
        for _ in 0..25 {
            let factors: Vec<(Factor, Vec<Pose>)> = vec![
                (
                    Factor {
                        kind: FactorKind::Odometry {
                            prev: ego,
                            curr: ego2,
                            measured: random_pose(&mut rng),
                        },
                        information: Matrix6::identity(),
                    },
                    vec![random_pose(&mut rng), random_pose(&mut rng)],
                ),
                (
                    Factor {
                        kind: FactorKind::Observation {
                            ego,
                            object: obj,
                            measured: random_pose(&mut rng),
                        },
                        information: Matrix6::identity(),
                    },
                    vec![random_pose(&mut rng), random_pose(&mut rng)],
                ),
                (
                    Factor {
                        kind: FactorKind::PoseChange {
                            prev: obj,
                            curr: obj2,
                            change: chg,
                        },
                        information: Matrix6::identity(),
                    },
                    vec![
                        random_pose(&mut rng),
                        random_pose(&mut rng),
                        random_pose(&mut rng),
                    ],
                ),
                (
                    Factor {
                        kind: FactorKind::ConstantVelocity { prev: obj, curr: obj2 },
                        information: Matrix6::identity(),
                    },
                    vec![random_pose(&mut rng), random_pose(&mut rng)],
                ),
            ];
            for (factor, values) in &factors {
                let eval = factor.evaluate(values);
                let numeric = numeric_jacobians(factor, values);
                for (a, n) in eval.jacobians.iter().zip(numeric.iter()) {
                    let denom = n.norm().max(1.0);
                    assert!(
                        (a - n).norm() / denom < 1e-5,
                        "jacobian mismatch:\nanalytic {a}\nnumeric {n}"
                    );
                }
            }
        }
    }
}
