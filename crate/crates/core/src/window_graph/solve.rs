//! Normal-equation assembly and the damped block solve behind the
//! Levenberg-Marquardt loop.
//!
//! Variables split into a dense set (ego poses plus everything covered by
//! the marginal prior) and per-track groups. Tracks never share factors
//! with each other, only with ego poses; eliminating each track's block by
//! Schur complement reduces the solve to a small dense system over the ego
//! states plus prior scope, followed by per-track back-substitution. This
//! keeps per-frame optimization near-linear in the number of objects.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};

use crate::geometry::{Pose, Twist};

use super::factors::{Factor, VertexKey};
use super::marginal::MarginalPrior;
use super::GraphError;

/// Diagonal floor for damping so rank-deficient directions still get
/// regularized as lambda grows.
const DIAG_FLOOR: f64 = 1e-6;

/// Gauss-Newton system in block form, plus the total cost at the
/// linearization point.
pub(crate) struct BlockSystem {
    pub keys: Vec<VertexKey>,
    pub index: BTreeMap<VertexKey, usize>,
    /// Upper-triangle blocks (i <= j) of J^T W J.
    pub hess: BTreeMap<(usize, usize), Matrix6<f64>>,
    /// Blocks of J^T W r.
    pub grad: Vec<Vector6<f64>>,
    pub cost: f64,
}

fn lookup(values: &BTreeMap<VertexKey, Pose>, fixed: &BTreeMap<VertexKey, Pose>, key: &VertexKey) -> Pose {
    values
        .get(key)
        .or_else(|| fixed.get(key))
        .copied()
        .unwrap_or_else(|| panic!("factor references unknown vertex {key:?}"))
}

/// Total cost (sum of squared Mahalanobis residuals plus the prior
/// quadratic) at the given estimates.
pub(crate) fn total_cost(
    values: &BTreeMap<VertexKey, Pose>,
    fixed: &BTreeMap<VertexKey, Pose>,
    factors: &[Factor],
    prior: Option<&MarginalPrior>,
) -> f64 {
    let mut cost = 0.0;
    for factor in factors {
        let poses: Vec<Pose> = factor.keys().iter().map(|k| lookup(values, fixed, k)).collect();
        let r = factor.residual(&poses).as_vector();
        cost += (r.transpose() * factor.information * r)[(0, 0)];
    }
    if let Some(prior) = prior {
        let poses: Vec<Pose> = prior.scope.iter().map(|k| lookup(values, fixed, k)).collect();
        cost += prior.cost(&poses);
    }
    cost
}

/// Linearize all factors and the prior at the current estimates.
pub(crate) fn build_system(
    values: &BTreeMap<VertexKey, Pose>,
    fixed: &BTreeMap<VertexKey, Pose>,
    factors: &[Factor],
    prior: Option<&MarginalPrior>,
) -> BlockSystem {
    let keys: Vec<VertexKey> = values.keys().copied().collect();
    let index: BTreeMap<VertexKey, usize> =
        keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let mut sys = BlockSystem {
        hess: BTreeMap::new(),
        grad: vec![Vector6::zeros(); keys.len()],
        cost: 0.0,
        keys,
        index,
    };

    let add_hess = |hess: &mut BTreeMap<(usize, usize), Matrix6<f64>>,
                    i: usize,
                    j: usize,
                    block: Matrix6<f64>| {
        if i <= j {
            *hess.entry((i, j)).or_insert_with(Matrix6::zeros) += block;
        } else {
            *hess.entry((j, i)).or_insert_with(Matrix6::zeros) += block.transpose();
        }
    };

    for factor in factors {
        let factor_keys = factor.keys();
        let poses: Vec<Pose> = factor_keys.iter().map(|k| lookup(values, fixed, k)).collect();
        let eval = factor.evaluate(&poses);
        let w = factor.information;
        sys.cost += (eval.residual.transpose() * w * eval.residual)[(0, 0)];
        // free variables only; fixed vertices contribute no Jacobian blocks
        let free: Vec<(usize, &Matrix6<f64>)> = factor_keys
            .iter()
            .zip(eval.jacobians.iter())
            .filter_map(|(k, jac)| sys.index.get(k).map(|&i| (i, jac)))
            .collect();
        for &(i, ji) in &free {
            sys.grad[i] += ji.transpose() * w * eval.residual;
            for &(j, jj) in &free {
                if sys.keys[i] <= sys.keys[j] {
                    add_hess(&mut sys.hess, i, j, ji.transpose() * w * jj);
                }
            }
        }
    }

    if let Some(prior) = prior {
        let poses: Vec<Pose> = prior.scope.iter().map(|k| lookup(values, fixed, k)).collect();
        sys.cost += prior.cost(&poses);
        let scope_idx: Vec<usize> = prior
            .scope
            .iter()
            .map(|k| *sys.index.get(k).expect("prior scope variable not in graph"))
            .collect();
        let (mut hess_updates, mut grad_updates) = (Vec::new(), Vec::new());
        prior.accumulate(
            &poses,
            |i, j, block| hess_updates.push((scope_idx[i], scope_idx[j], block)),
            |i, block| grad_updates.push((scope_idx[i], block)),
        );
        for (i, j, block) in hess_updates {
            add_hess(&mut sys.hess, i, j, block);
        }
        for (i, block) in grad_updates {
            sys.grad[i] += block;
        }
    }

    sys
}

impl BlockSystem {
    pub fn gradient_inf_norm(&self) -> f64 {
        self.grad.iter().map(|g| g.amax()).fold(0.0, f64::max)
    }
}

/// Partition of the free variables for the structured solve.
pub(crate) struct Partition {
    /// System indices solved densely (ego poses and prior scope).
    dense: Vec<usize>,
    /// Track id -> system indices eliminated per track.
    groups: BTreeMap<u64, Vec<usize>>,
}

pub(crate) fn partition(sys: &BlockSystem, prior: Option<&MarginalPrior>) -> Partition {
    let in_prior: std::collections::BTreeSet<VertexKey> = prior
        .map(|p| p.scope.iter().copied().collect())
        .unwrap_or_default();
    let mut dense = Vec::new();
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, key) in sys.keys.iter().enumerate() {
        match key.track() {
            Some(track) if !in_prior.contains(key) => groups.entry(track).or_default().push(i),
            _ => dense.push(i),
        }
    }
    Partition { dense, groups }
}

fn damped_diag(block: Option<&Matrix6<f64>>, lambda: f64) -> Matrix6<f64> {
    let mut d = Matrix6::zeros();
    for k in 0..6 {
        let h = block.map(|b| b[(k, k)]).unwrap_or(0.0);
        d[(k, k)] = lambda * h.max(DIAG_FLOOR);
    }
    d
}

/// Solve (H + lambda * diag(H)) delta = -g with per-track elimination.
pub(crate) fn solve_damped(
    sys: &BlockSystem,
    part: &Partition,
    lambda: f64,
) -> Result<Vec<Twist>, GraphError> {
    let nd = part.dense.len();
    let dense_slot: BTreeMap<usize, usize> = part
        .dense
        .iter()
        .enumerate()
        .map(|(slot, &i)| (i, slot))
        .collect();

    let block = |i: usize, j: usize| -> Option<Matrix6<f64>> {
        if i <= j {
            sys.hess.get(&(i, j)).copied()
        } else {
            sys.hess.get(&(j, i)).map(|b| b.transpose())
        }
    };

    // Dense part of the normal system.
    let mut s = DMatrix::<f64>::zeros(6 * nd, 6 * nd);
    let mut rhs = DVector::<f64>::zeros(6 * nd);
    for (a, &i) in part.dense.iter().enumerate() {
        rhs.fixed_rows_mut::<6>(a * 6).copy_from(&(-sys.grad[i]));
        for (b, &j) in part.dense.iter().enumerate() {
            if let Some(h) = block(i, j) {
                s.fixed_view_mut::<6, 6>(a * 6, b * 6).copy_from(&h);
            }
        }
        let damp = damped_diag(sys.hess.get(&(i, i)), lambda);
        let mut diag = s.fixed_view_mut::<6, 6>(a * 6, a * 6);
        diag += damp;
    }

    struct GroupSolve {
        vars: Vec<usize>,
        touched: Vec<usize>, // dense slots
        chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
        coupling: DMatrix<f64>, // E: group dims x touched dims
        grad: DVector<f64>,
    }

    let mut group_solves = Vec::new();
    for (_track, vars) in &part.groups {
        let ng = vars.len();
        let local: BTreeMap<usize, usize> = vars.iter().enumerate().map(|(l, &i)| (i, l)).collect();
        let mut h_gg = DMatrix::<f64>::zeros(6 * ng, 6 * ng);
        let mut g_g = DVector::<f64>::zeros(6 * ng);
        let mut touched: Vec<usize> = Vec::new();
        for (l, &i) in vars.iter().enumerate() {
            g_g.fixed_rows_mut::<6>(l * 6).copy_from(&sys.grad[i]);
            for (m, &j) in vars.iter().enumerate() {
                if let Some(h) = block(i, j) {
                    h_gg.fixed_view_mut::<6, 6>(l * 6, m * 6).copy_from(&h);
                }
            }
            let damp = damped_diag(sys.hess.get(&(i, i)), lambda);
            let mut diag = h_gg.fixed_view_mut::<6, 6>(l * 6, l * 6);
            diag += damp;
        }
        // dense variables this group actually couples to
        for (&(i, j), _) in sys.hess.iter() {
            let (gi, dj) = if local.contains_key(&i) && dense_slot.contains_key(&j) {
                (i, j)
            } else if local.contains_key(&j) && dense_slot.contains_key(&i) {
                (j, i)
            } else {
                continue;
            };
            let _ = gi;
            let slot = dense_slot[&dj];
            if !touched.contains(&slot) {
                touched.push(slot);
            }
        }
        touched.sort_unstable();
        let touched_col: BTreeMap<usize, usize> =
            touched.iter().enumerate().map(|(c, &slot)| (slot, c)).collect();
        let mut coupling = DMatrix::<f64>::zeros(6 * ng, 6 * touched.len());
        for (l, &i) in vars.iter().enumerate() {
            for (&slot, &c) in &touched_col {
                let j = part.dense[slot];
                if let Some(h) = block(i, j) {
                    coupling.fixed_view_mut::<6, 6>(l * 6, c * 6).copy_from(&h);
                }
            }
        }
        let chol = nalgebra::Cholesky::new(h_gg).ok_or_else(|| GraphError::RankDeficient {
            keys: vars.iter().map(|&i| sys.keys[i]).collect(),
        })?;
        if !touched.is_empty() {
            // S -= E^T Hgg^-1 E, rhs += E^T Hgg^-1 g
            let x = chol.solve(&coupling);
            let reduction = coupling.transpose() * &x;
            let lift = coupling.transpose() * chol.solve(&g_g);
            for (a, &slot_a) in touched.iter().enumerate() {
                for (b, &slot_b) in touched.iter().enumerate() {
                    let mut view = s.fixed_view_mut::<6, 6>(slot_a * 6, slot_b * 6);
                    view -= reduction.fixed_view::<6, 6>(a * 6, b * 6);
                }
                let mut rv = rhs.fixed_rows_mut::<6>(slot_a * 6);
                rv += lift.fixed_rows::<6>(a * 6);
            }
        }
        group_solves.push(GroupSolve {
            vars: vars.clone(),
            touched,
            chol,
            coupling,
            grad: g_g,
        });
    }

    let chol_s = nalgebra::Cholesky::new(s).ok_or_else(|| GraphError::RankDeficient {
        keys: part.dense.iter().map(|&i| sys.keys[i]).collect(),
    })?;
    let delta_dense = chol_s.solve(&rhs);

    let mut deltas = vec![Twist::zero(); sys.keys.len()];
    for (a, &i) in part.dense.iter().enumerate() {
        deltas[i] = Twist::from_vector(&delta_dense.fixed_rows::<6>(a * 6).into_owned());
    }
    for group in &group_solves {
        let mut rhs_g = -&group.grad;
        if !group.touched.is_empty() {
            let mut d_touched = DVector::<f64>::zeros(6 * group.touched.len());
            for (c, &slot) in group.touched.iter().enumerate() {
                d_touched
                    .fixed_rows_mut::<6>(c * 6)
                    .copy_from(&delta_dense.fixed_rows::<6>(slot * 6).into_owned());
            }
            rhs_g -= &group.coupling * d_touched;
        }
        let delta_g = group.chol.solve(&rhs_g);
        for (l, &i) in group.vars.iter().enumerate() {
            deltas[i] = Twist::from_vector(&delta_g.fixed_rows::<6>(l * 6).into_owned());
        }
    }
    Ok(deltas)
}

/// Reference solve of the same damped system as one dense Cholesky, used to
/// cross-check the partitioned path.
#[doc(hidden)]
pub(crate) fn solve_damped_dense(
    sys: &BlockSystem,
    lambda: f64,
) -> Result<Vec<Twist>, GraphError> {
    let n = sys.keys.len();
    let mut h = DMatrix::<f64>::zeros(6 * n, 6 * n);
    let mut rhs = DVector::<f64>::zeros(6 * n);
    for i in 0..n {
        rhs.fixed_rows_mut::<6>(i * 6).copy_from(&(-sys.grad[i]));
    }
    for (&(i, j), blockv) in sys.hess.iter() {
        h.fixed_view_mut::<6, 6>(i * 6, j * 6).copy_from(blockv);
        if i != j {
            h.fixed_view_mut::<6, 6>(j * 6, i * 6)
                .copy_from(&blockv.transpose());
        }
    }
    for i in 0..n {
        let damp = damped_diag(sys.hess.get(&(i, i)), lambda);
        let mut diag = h.fixed_view_mut::<6, 6>(i * 6, i * 6);
        diag += damp;
    }
    let chol = nalgebra::Cholesky::new(h).ok_or_else(|| GraphError::RankDeficient {
        keys: sys.keys.clone(),
    })?;
    let delta = chol.solve(&rhs);
    Ok((0..n)
        .map(|i| Twist::from_vector(&delta.fixed_rows::<6>(i * 6).into_owned()))
        .collect())
}
