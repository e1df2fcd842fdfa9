//! SE(3) adjoint and tangent-space Jacobians.
//!
//! Twist coordinates are ordered [rotation; translation]. The residual
//! Jacobians of the factor graph are all products of [`adjoint`] and
//! [`right_jacobian_inv`], so getting these two right (they are checked
//! against central finite differences in the tests) validates the whole
//! chain rule downstream.

use nalgebra::{Matrix3, Matrix6, Vector3};

use super::so3;
use super::{Pose, Twist};

/// Below this angle the Q-matrix coefficients switch to Taylor expansions.
const SMALL_ANGLE: f64 = 1e-4;

fn set_block(m: &mut Matrix6<f64>, row: usize, col: usize, b: &Matrix3<f64>) {
    m.fixed_view_mut::<3, 3>(row, col).copy_from(b);
}

/// Adjoint of a pose: Ad(P) with P * exp(xi) * P^-1 = exp(Ad(P) * xi).
///
/// With [rot; trans] ordering the blocks are [[R, 0], [hat(t) R, R]].
pub fn adjoint(p: &Pose) -> Matrix6<f64> {
    let r = p.rotation();
    let t_hat_r = so3::hat(&p.translation()) * r;
    let mut ad = Matrix6::zeros();
    set_block(&mut ad, 0, 0, &r);
    set_block(&mut ad, 3, 3, &r);
    set_block(&mut ad, 3, 0, &t_hat_r);
    ad
}

/// The coupling block Q(rho, phi) of the SE(3) left Jacobian.
pub fn q_matrix(rho: &Vector3<f64>, phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let (c2, c3, c4) = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        (
            1.0 / 6.0 - theta2 / 120.0,
            -1.0 / 24.0 + theta2 / 720.0,
            -1.0 / 120.0 + theta2 / 2520.0,
        )
    } else {
        let theta = theta2.sqrt();
        let theta3 = theta2 * theta;
        let theta4 = theta2 * theta2;
        let theta5 = theta4 * theta;
        let (s, c) = (theta.sin(), theta.cos());
        let c2 = (theta - s) / theta3;
        let c3 = (1.0 - 0.5 * theta2 - c) / theta4;
        let c4 = 0.5 * (c3 - 3.0 * (theta - s - theta3 / 6.0) / theta5);
        (c2, c3, c4)
    };
    let rx = so3::hat(rho);
    let px = so3::hat(phi);
    let px_rx = px * rx;
    let rx_px = rx * px;
    let px_rx_px = px_rx * px;
    0.5 * rx + c2 * (px_rx + rx_px + px_rx_px)
        - c3 * (px * px_rx + rx_px * px - 3.0 * px_rx_px)
        - c4 * (px_rx_px * px + px * px_rx_px)
}

/// Left Jacobian of SE(3): exp(xi + d) ~ exp(Jl(xi) d) * exp(xi).
pub fn left_jacobian(xi: &Twist) -> Matrix6<f64> {
    let jl = so3::left_jacobian(&xi.rot);
    let q = q_matrix(&xi.trans, &xi.rot);
    let mut m = Matrix6::zeros();
    set_block(&mut m, 0, 0, &jl);
    set_block(&mut m, 3, 3, &jl);
    set_block(&mut m, 3, 0, &q);
    m
}

/// Inverse of the SE(3) left Jacobian.
pub fn left_jacobian_inv(xi: &Twist) -> Matrix6<f64> {
    let jl_inv = so3::left_jacobian_inv(&xi.rot);
    let q = q_matrix(&xi.trans, &xi.rot);
    let coupling = -jl_inv * q * jl_inv;
    let mut m = Matrix6::zeros();
    set_block(&mut m, 0, 0, &jl_inv);
    set_block(&mut m, 3, 3, &jl_inv);
    set_block(&mut m, 3, 0, &coupling);
    m
}

/// Inverse of the SE(3) right Jacobian: log(exp(xi) exp(e)) ~ xi + Jr^-1(xi) e.
pub fn right_jacobian_inv(xi: &Twist) -> Matrix6<f64> {
    left_jacobian_inv(&Twist {
        rot: -xi.rot,
        trans: -xi.trans,
    })
}
