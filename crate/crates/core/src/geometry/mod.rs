//! SE(3) pose algebra.
//!
//! Every state in the pipeline (ego pose, object world pose, ego-frame
//! observation, odometry increment and object pose change) is a [`Pose`].
//! Optimization updates and residuals live in the tangent space as
//! [`Twist`]s with [rotation; translation] ordering, and states are updated
//! by right perturbation: `p.retract(d) = p * exp(d)`. That convention is
//! fixed here once and the Jacobians in [`jacobians`] follow it.

pub mod jacobians;
pub mod so3;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector6};
use serde::{Deserialize, Serialize};

/// Rigid transform in SE(3): an orthonormal rotation and a translation in
/// meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Serialized form: the row-major 3x4 matrix [R | t], the same layout as a
/// KITTI odometry ground-truth line.
#[derive(Serialize, Deserialize)]
struct PoseRepr([f64; 12]);

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        PoseRepr(p.to_row_major_3x4())
    }
}

impl From<PoseRepr> for Pose {
    fn from(r: PoseRepr) -> Self {
        Pose::from_row_major_3x4(&r.0)
    }
}

/// Minimal local parameterization: rotation vector (radians) and translation
/// (meters), stacked as [rot; trans] when flattened to a 6-vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist {
    pub rot: Vector3<f64>,
    pub trans: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Twist {
            rot: Vector3::zeros(),
            trans: Vector3::zeros(),
        }
    }

    pub fn new(rot: Vector3<f64>, trans: Vector3<f64>) -> Self {
        Twist { rot, trans }
    }

    pub fn as_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.rot.x,
            self.rot.y,
            self.rot.z,
            self.trans.x,
            self.trans.y,
            self.trans.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Twist {
            rot: Vector3::new(v[0], v[1], v[2]),
            trans: Vector3::new(v[3], v[4], v[5]),
        }
    }

    /// Max absolute component, used for step-size termination checks.
    pub fn inf_norm(&self) -> f64 {
        self.as_vector().amax()
    }

    pub fn norm(&self) -> f64 {
        self.as_vector().norm()
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Build from parts. The rotation is re-orthonormalized, so callers may
    /// hand in a matrix with small numerical drift.
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation: orthonormalize(&rotation),
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Planar pose: translation plus a rotation about z.
    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Pose {
            rotation: so3::exp(&Vector3::new(0.0, 0.0, yaw)),
            translation: Vector3::new(x, y, z),
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.rotation
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn x(&self) -> f64 {
        self.translation.x
    }

    pub fn y(&self) -> f64 {
        self.translation.y
    }

    pub fn z(&self) -> f64 {
        self.translation.z
    }

    /// Heading about the z axis.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// Planar position (x, y).
    pub fn xy(&self) -> nalgebra::Vector2<f64> {
        nalgebra::Vector2::new(self.translation.x, self.translation.y)
    }

    /// Rotation angle in [0, pi].
    pub fn rotation_angle(&self) -> f64 {
        so3::log(&self.rotation).norm()
    }

    /// `self` applied after `other`: the `*` operator on rigid transforms.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: orthonormalize(&(self.rotation * other.rotation)),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rot_t = self.rotation.transpose();
        Pose {
            rotation: rot_t,
            translation: -(rot_t * self.translation),
        }
    }

    /// Relative transform from `self` to `other`: self^-1 * other.
    pub fn between(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    /// Apply the transform to a point.
    pub fn act(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    /// Exponential map from a twist.
    pub fn exp(xi: &Twist) -> Pose {
        Pose {
            rotation: so3::exp(&xi.rot),
            translation: so3::left_jacobian(&xi.rot) * xi.trans,
        }
    }

    /// Logarithm map. Rotation angles land in [0, pi]; the branch at exactly
    /// pi is the deterministic one documented on [`so3::log`].
    pub fn log(&self) -> Twist {
        let rot = so3::log(&self.rotation);
        let trans = so3::left_jacobian_inv(&rot) * self.translation;
        Twist { rot, trans }
    }

    /// Right-perturbation state update: self * exp(delta).
    pub fn retract(&self, delta: &Twist) -> Pose {
        self.compose(&Pose::exp(delta))
    }

    /// Homogeneous 4x4 matrix, mainly for oracle-style checks.
    pub fn matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 3x4 [R | t] flattening, the KITTI odometry line layout.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    pub fn from_row_major_3x4(v: &[f64; 12]) -> Pose {
        let rotation = Matrix3::new(
            v[0], v[1], v[2], //
            v[4], v[5], v[6], //
            v[8], v[9], v[10],
        );
        Pose {
            rotation,
            translation: Vector3::new(v[3], v[7], v[11]),
        }
    }

    /// Frobenius distance of R^T R from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }
}

/// Gram-Schmidt on the columns; keeps long composition chains orthonormal.
fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let c0 = m.column(0).normalize();
    let mut c1 = m.column(1) - m.column(1).dot(&c0) * c0;
    c1.normalize_mut();
    let c2 = c0.cross(&c1);
    Matrix3::from_columns(&[c0, c1, c2])
}
