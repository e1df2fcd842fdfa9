//! Schur-complement marginalization and the dense prior it leaves behind.
//!
//! When a frame slides out of the window, every factor touching its
//! variables is linearized at the current estimates and condensed into an
//! information form (H, g). Eliminating the departing variables by Schur
//! complement yields a dense quadratic over their Markov blanket which is
//! kept as the [`MarginalPrior`]; on linear-Gaussian problems this is an
//! exact, information-preserving reduction.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};

use crate::geometry::jacobians::right_jacobian_inv;
use crate::geometry::Pose;

use super::factors::VertexKey;

/// Eliminate the leading `marg_dims` coordinates of an information system.
///
/// Given the quadratic cost `x^T H x / 2 + g^T x` over `[m; k]` with the
/// first block of size `marg_dims`, returns the equivalent quadratic over
/// `k` alone: `H' = H_kk - H_km H_mm^-1 H_mk` and `g' = g_k - H_km H_mm^-1
/// g_m`. Returns `None` when the eliminated block is not positive definite.
pub fn marginalize_information(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    marg_dims: usize,
) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let n = h.nrows();
    assert_eq!(n, h.ncols());
    assert_eq!(n, g.len());
    assert!(marg_dims <= n);
    let keep = n - marg_dims;
    if marg_dims == 0 {
        return Some((h.clone(), g.clone()));
    }
    let h_mm = h.view((0, 0), (marg_dims, marg_dims)).into_owned();
    let h_mk = h.view((0, marg_dims), (marg_dims, keep)).into_owned();
    let h_kk = h.view((marg_dims, marg_dims), (keep, keep)).into_owned();
    let g_m = g.rows(0, marg_dims).into_owned();
    let g_k = g.rows(marg_dims, keep).into_owned();

    let chol = nalgebra::Cholesky::new(h_mm)?;
    let h_mm_inv_h_mk = chol.solve(&h_mk);
    let h_mm_inv_g_m = chol.solve(&g_m);

    let mut h_prime = h_kk - h_mk.transpose() * h_mm_inv_h_mk;
    // keep the reduced information exactly symmetric
    let sym = (&h_prime + h_prime.transpose()) * 0.5;
    h_prime = sym;
    let g_prime = g_k - h_mk.transpose() * h_mm_inv_g_m;
    Some((h_prime, g_prime))
}

/// Dense prior over the retained boundary variables of past
/// marginalizations.
///
/// Stores the Gauss-Newton information matrix and gradient of the condensed
/// factors, both expressed in right-perturbation coordinates around the
/// linearization points. Its cost contribution is `d^T H d + 2 g^T d` with
/// `d_i = log(lin_i^-1 x_i)`, matching the squared-Mahalanobis convention
/// of the factor costs.
#[derive(Clone, Debug)]
pub struct MarginalPrior {
    pub scope: Vec<VertexKey>,
    pub lin_points: Vec<Pose>,
    pub information: DMatrix<f64>,
    pub gradient: DVector<f64>,
}

impl MarginalPrior {
    pub fn dim(&self) -> usize {
        6 * self.scope.len()
    }

    /// Local coordinates of the current estimates around the linearization
    /// points.
    fn local_coords(&self, values: &[Pose]) -> DVector<f64> {
        let mut d = DVector::zeros(self.dim());
        for (i, (lin, value)) in self.lin_points.iter().zip(values).enumerate() {
            d.rows_mut(i * 6, 6)
                .copy_from(&lin.between(value).log().as_vector());
        }
        d
    }

    /// Cost contribution at the given estimates (ordered as `scope`).
    pub fn cost(&self, values: &[Pose]) -> f64 {
        let d = self.local_coords(values);
        (d.transpose() * &self.information * &d)[(0, 0)] + 2.0 * self.gradient.dot(&d)
    }

    /// Gauss-Newton contribution at the given estimates: per-block gradient
    /// and per-block-pair Hessian terms, via `visit(i, j, block)` for the
    /// Hessian (upper triangle, i <= j) and `visit_grad(i, block)`.
    pub(crate) fn accumulate<FH, FG>(&self, values: &[Pose], mut visit: FH, mut visit_grad: FG)
    where
        FH: FnMut(usize, usize, Matrix6<f64>),
        FG: FnMut(usize, Vector6<f64>),
    {
        let d = self.local_coords(values);
        // residual Jacobian of log(lin^-1 x) wrt a right perturbation of x
        let jacs: Vec<Matrix6<f64>> = self
            .lin_points
            .iter()
            .zip(values)
            .map(|(lin, value)| right_jacobian_inv(&lin.between(value).log()))
            .collect();
        let lambda_d_plus_g = &self.information * &d + &self.gradient;
        for i in 0..self.scope.len() {
            let gi = jacs[i].transpose() * lambda_d_plus_g.fixed_rows::<6>(i * 6).into_owned();
            visit_grad(i, gi);
            for j in i..self.scope.len() {
                let lambda_ij = self
                    .information
                    .fixed_view::<6, 6>(i * 6, j * 6)
                    .into_owned();
                visit(i, j, jacs[i].transpose() * lambda_ij * jacs[j]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eliminating_nothing_is_identity() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 3.0]);
        let g = DVector::from_vec(vec![1.0, -2.0]);
        let (h2, g2) = marginalize_information(&h, &g, 0).unwrap();
        assert_eq!(h2, h);
        assert_eq!(g2, g);
    }

    #[test]
    fn schur_matches_direct_block_formula() {
        let h = DMatrix::from_row_slice(
            4,
            4,
            &[
                10.0, 2.0, 1.0, 0.5, //
                2.0, 10.0, 0.5, 1.0, //
                1.0, 0.5, 10.0, 2.0, //
                0.5, 1.0, 2.0, 10.0,
            ],
        );
        let g = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let (hp, gp) = marginalize_information(&h, &g, 2).unwrap();

        let h_mm = h.view((0, 0), (2, 2)).into_owned();
        let h_mk = h.view((0, 2), (2, 2)).into_owned();
        let h_kk = h.view((2, 2), (2, 2)).into_owned();
        let inv = h_mm.try_inverse().unwrap();
        let want_h = &h_kk - h_mk.transpose() * &inv * &h_mk;
        let want_g =
            g.rows(2, 2).into_owned() - h_mk.transpose() * &inv * g.rows(0, 2).into_owned();
        assert_relative_eq!(hp, want_h, epsilon = 1e-12);
        assert_relative_eq!(gp, want_g, epsilon = 1e-12);
    }

    /// Marginalization preserves the minimizer: solving the reduced system
    /// gives the same kept-block solution as solving the full system.
    #[test]
    fn reduced_solution_matches_full_solution() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let n = 8;
            let m = 3;
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let h = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
            let g = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));

            let full = h.clone().cholesky().unwrap().solve(&(-&g));
            let (hp, gp) = marginalize_information(&h, &g, m).unwrap();
            let reduced = hp.cholesky().unwrap().solve(&(-&gp));
            assert_relative_eq!(
                full.rows(m, n - m).into_owned(),
                reduced,
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn singular_marginal_block_is_reported() {
        let h = DMatrix::zeros(4, 4);
        let g = DVector::zeros(4);
        assert!(marginalize_information(&h, &g, 2).is_none());
    }
}
