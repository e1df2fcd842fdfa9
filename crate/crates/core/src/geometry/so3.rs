//! Rotation helpers on SO(3): hat/vee, Rodrigues exponential, logarithm and
//! the left Jacobian pair that the SE(3) maps are built from.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

/// Below this angle the closed forms switch to their Taylor expansions.
const SMALL_ANGLE: f64 = 1e-4;

/// Skew-symmetric matrix of `w`, i.e. hat(w) * v == w x v.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -w.z, w.y, //
        w.z, 0.0, -w.x, //
        -w.y, w.x, 0.0,
    )
}

/// Inverse of [`hat`] restricted to skew-symmetric input.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues formula: rotation matrix for the rotation vector `w`.
pub fn exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let w_hat = hat(w);
    let (a, b) = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        // sin(t)/t and (1-cos(t))/t^2
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + a * w_hat + b * (w_hat * w_hat)
}

/// Rotation vector of a rotation matrix.
///
/// Goes through the unit quaternion, which stays well conditioned at every
/// angle including pi. The returned angle is always in [0, pi]. At exactly
/// pi the axis and its negation describe the same rotation; the branch is
/// fixed deterministically by negating the axis when its first nonzero
/// component is negative.
pub fn log(rot: &Matrix3<f64>) -> Vector3<f64> {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*rot));
    let (w, mut v) = (q.w, q.imag());
    let w = if w < 0.0 {
        v = -v;
        -w
    } else {
        w
    };
    let vn = v.norm();
    if vn == 0.0 {
        return Vector3::zeros();
    }
    let theta = 2.0 * vn.atan2(w);
    let mut axis = v / vn;
    if w == 0.0 {
        // angle is exactly pi: pick the canonical axis sign
        for k in 0..3 {
            if axis[k] != 0.0 {
                if axis[k] < 0.0 {
                    axis = -axis;
                }
                break;
            }
        }
    }
    axis * theta
}

/// Left Jacobian of SO(3).
pub fn left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let w_hat = hat(w);
    let (a, b) = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        // (1-cos(t))/t^2 and (t-sin(t))/t^3
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() + a * w_hat + b * (w_hat * w_hat)
}

/// Inverse of the left Jacobian of SO(3).
///
/// Uses the cot(theta/2) form which is finite at theta = pi; the closed form
/// is singular only at theta = 2*pi, outside the range [`log`] can produce.
pub fn left_jacobian_inv(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let w_hat = hat(w);
    let eta = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let theta = theta2.sqrt();
        let half = 0.5 * theta;
        1.0 / theta2 - (half.cos() / half.sin()) / (2.0 * theta)
    };
    Matrix3::identity() - 0.5 * w_hat + eta * (w_hat * w_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn exp_log_round_trip() {
        let samples = [
            Vector3::new(0.3, 0.0, 0.0),
            Vector3::new(0.0, -1.2, 0.4),
            Vector3::new(1.0, 1.0, 1.0),
            Vector3::new(1e-7, -2e-7, 3e-8),
            Vector3::new(0.0, 0.0, 3.14),
        ];
        for w in samples {
            let back = log(&exp(&w));
            assert_relative_eq!(w, back, epsilon = 1e-9);
        }
    }

    #[test]
    fn log_identity_is_zero() {
        assert_eq!(log(&Matrix3::identity()), Vector3::zeros());
    }

    #[test]
    fn log_at_pi_is_deterministic() {
        // Rotation by pi about z: both (0,0,pi) and (0,0,-pi) are valid; the
        // canonical branch picks the positive leading component.
        let r = exp(&Vector3::new(0.0, 0.0, PI));
        let w = log(&r);
        assert_relative_eq!(w.norm(), PI, epsilon = 1e-12);
        assert!(w.z > 0.0);
        // and it still round-trips through exp
        assert_relative_eq!(exp(&w), r, epsilon = 1e-12);
    }

    #[test]
    fn jacobian_times_inverse_is_identity() {
        for w in [
            Vector3::new(0.2, -0.1, 0.7),
            Vector3::new(1e-6, 2e-6, -1e-6),
            Vector3::new(0.0, 3.0, 0.0),
        ] {
            let prod = left_jacobian(&w) * left_jacobian_inv(&w);
            assert_relative_eq!(prod, Matrix3::identity(), epsilon = 1e-10);
        }
    }

    #[test]
    fn left_jacobian_matches_exp_expansion() {
        // exp(w + d) ~ exp(Jl(w) d) * exp(w) for small d
        let w = Vector3::new(0.4, -0.2, 0.9);
        let d = Vector3::new(1e-6, 2e-6, -1.5e-6);
        let lhs = exp(&(w + d));
        let rhs = exp(&(left_jacobian(&w) * d)) * exp(&w);
        assert_relative_eq!(lhs, rhs, epsilon = 1e-10);
    }
}
