//! Factor recovery error and objective cost.

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::error::{arg, Error, Result};
use crate::gradient::sampled_objective;
use crate::losses::LossSpec;
use crate::tensor::{extract_fibers, fiber_start, khatri_rao_rows, num_fibers, FactorModel, Tensor};

fn normalized_columns(a: &Array2<f64>, which: &str, mode: usize) -> Result<Array2<f64>> {
    let mut out = a.clone();
    for (r, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let norm = col.dot(&col).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return arg(format!(
                "{which} factor {mode} column {} has norm {norm}; normalization is undefined",
                r + 1
            ));
        }
        col /= norm;
    }
    Ok(out)
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials, `O(n³)`). Returns `assign[row] = column`.
pub fn hungarian(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "cost matrix must be square");
    // 1-based arrays; index 0 is the virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    assign
}

/// Per-column costs `C(r, s) = Σ_n ‖â_{n,s} − a_{n,r}‖²` between unit-norm
/// truth column `r` and estimate column `s`.
pub fn matching_cost(estimate: &FactorModel, truth: &FactorModel) -> Result<Array2<f64>> {
    if estimate.shape() != truth.shape() || estimate.rank() != truth.rank() {
        return arg(format!(
            "estimate {:?} rank {} does not match truth {:?} rank {}",
            estimate.shape(),
            estimate.rank(),
            truth.shape(),
            truth.rank()
        ));
    }
    let rank = truth.rank();
    let mut cost = Array2::zeros((rank, rank));
    for n in 0..truth.ndim() {
        let e = normalized_columns(estimate.factor(n), "estimate", n)?;
        let t = normalized_columns(truth.factor(n), "truth", n)?;
        for r in 0..rank {
            for s in 0..rank {
                let d = &t.column(r) - &e.column(s);
                cost[[r, s]] += d.dot(&d);
            }
        }
    }
    Ok(cost)
}

/// Mean squared error between unit-norm factor columns after resolving the
/// permutation ambiguity with one column permutation shared by all modes.
/// The result lies in `[0, 4]`.
pub fn factor_mse(estimate: &FactorModel, truth: &FactorModel) -> Result<f64> {
    let cost = matching_cost(estimate, truth)?;
    let assign = hungarian(&cost);
    let total: f64 = assign.iter().enumerate().map(|(r, &s)| cost[[r, s]]).sum();
    Ok(total / (truth.ndim() * truth.rank()) as f64)
}

const CHUNK: usize = 256;

/// `(1/|I|) Σ_i ℓ(X_i, M_i)` over every entry, or the sampled average over
/// the given `(mode, fibers)` when `subsample` is set.
pub fn objective_cost(
    tensor: &Tensor,
    model: &FactorModel,
    loss: &LossSpec,
    subsample: Option<(usize, &[usize])>,
) -> Result<f64> {
    if tensor.shape() != model.shape().as_slice() {
        return arg(format!(
            "tensor shape {:?} does not match model shape {:?}",
            tensor.shape(),
            model.shape()
        ));
    }
    if let Some((mode, fibers)) = subsample {
        if fibers.is_empty() {
            return arg("subsample needs at least one fiber");
        }
        let x = extract_fibers(tensor, mode, fibers)?;
        let h = khatri_rao_rows(model, mode, fibers)?;
        return sampled_objective(loss, x.view(), h.view(), model.factor(mode).view());
    }
    let shape = tensor.shape();
    let jn = num_fibers(shape, 0);
    let starts: Vec<usize> = (0..jn).step_by(CHUNK).collect();
    let partial: Vec<Result<f64>> = starts
        .par_iter()
        .map(|&start| {
            let fibers: Vec<usize> = (start + 1..=(start + CHUNK).min(jn)).collect();
            let x = extract_fibers(tensor, 0, &fibers)?;
            let h = khatri_rao_rows(model, 0, &fibers)?;
            let m = h.dot(&model.factor(0).t());
            let mut s = 0.0;
            for ((row, i), &mv) in m.indexed_iter() {
                let xv = x[[row, i]];
                s += loss.value(xv, mv).map_err(|e| {
                    let mut idx = fiber_start(shape, 0, fibers[row]).unwrap_or_default();
                    if let Some(first) = idx.first_mut() {
                        *first = i + 1;
                    }
                    Error::Domain(format!("entry {idx:?}: {e}"))
                })?;
            }
            Ok(s)
        })
        .collect();
    let mut total = 0.0;
    for p in partial {
        total += p?;
    }
    let cost = total / tensor.len() as f64;
    if !cost.is_finite() {
        return Err(Error::NonFinite(format!("objective cost {cost}")));
    }
    Ok(cost)
}
