//! Bregman proximal stationarity measure `D_φ(Â, A)`, where
//! `Â = argmin_B F(B) + (1/(2λ)) D_φ(B, A)` over the constraint sets and
//! `F` is the full objective. It vanishes exactly at stationary points.

use ndarray::Array2;
use rand::Rng;

use super::config::StationarityOptions;
use crate::bregman::MirrorMap;
use crate::error::{arg, Error, Result};
use crate::gradient::sampled_gradient;
use crate::losses::LossSpec;
use crate::metrics::objective_cost;
use crate::sampler::stream_rng;
use crate::tensor::{khatri_rao_rows, num_fibers, unfold, FactorModel, Tensor};

/// Result of a stationarity evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct StationarityReport {
    pub measure: f64,
    pub lambda: f64,
    pub l_hat: f64,
    pub inner_iterations: usize,
}

/// Full-batch objective and gradients, with the unfoldings cached.
struct FullBatch<'a> {
    tensor: &'a Tensor,
    loss: &'a LossSpec,
    unfoldings: Vec<Array2<f64>>,
}

impl<'a> FullBatch<'a> {
    fn new(tensor: &'a Tensor, loss: &'a LossSpec) -> Result<Self> {
        let unfoldings = (0..tensor.ndim()).map(|n| unfold(tensor, n)).collect::<Result<_>>()?;
        Ok(Self {
            tensor,
            loss,
            unfoldings,
        })
    }

    fn value(&self, model: &FactorModel) -> Result<f64> {
        objective_cost(self.tensor, model, self.loss, None)
    }

    /// `∇_{A_n} F` for every mode.
    fn gradient(&self, model: &FactorModel) -> Result<Vec<Array2<f64>>> {
        let shape = self.tensor.shape();
        (0..shape.len())
            .map(|n| {
                let all: Vec<usize> = (1..=num_fibers(shape, n)).collect();
                let h = khatri_rao_rows(model, n, &all)?;
                sampled_gradient(self.loss, self.unfoldings[n].view(), h.view(), model.factor(n).view())
            })
            .collect()
    }
}

fn divergence(mirrors: &[MirrorMap], a: &FactorModel, b: &FactorModel) -> Result<f64> {
    let mut total = 0.0;
    for (n, m) in mirrors.iter().enumerate() {
        total += m.divergence(a.factor(n).view(), b.factor(n).view())?;
    }
    Ok(total)
}

/// Point `W` with `∇φ(W) = (α ∇φ(A) + κ ∇φ(Y)) / (α + κ)`.
fn blend(mirror: &MirrorMap, alpha: f64, a: &Array2<f64>, kappa: f64, y: &Array2<f64>) -> Result<Array2<f64>> {
    let g = mirror.generator;
    let mut out = Array2::zeros(a.dim());
    for ((idx, o), (&av, &yv)) in out.indexed_iter_mut().zip(a.iter().zip(y)) {
        let t = (alpha * g.dphi(av) + kappa * g.dphi(yv)) / (alpha + kappa);
        *o = g
            .dphi_inv(t)
            .ok_or_else(|| Error::Domain(format!("mirror blend left the domain at {:?}", (idx.0 + 1, idx.1 + 1))))?;
    }
    Ok(out)
}

/// Minimizes `F(B) + α D_φ(B, A)` (with `α = 0`: `F` alone) by full-batch
/// mirror descent on all blocks at once, backtracking the curvature `κ`
/// until `F(B⁺) ≤ F(B) + ⟨∇F(B), B⁺ − B⟩ + κ D_φ(B⁺, B)`.
///
/// Stops when the largest entrywise change relative to the largest entry is
/// at most `tol`; gives up with [`Error::NotConverged`] after `max_iters`.
#[allow(clippy::too_many_arguments)]
pub fn full_batch_md(
    tensor: &Tensor,
    loss: &LossSpec,
    mirrors: &[MirrorMap],
    anchor: &FactorModel,
    alpha: f64,
    start: &FactorModel,
    tol: f64,
    max_iters: usize,
) -> Result<(FactorModel, usize)> {
    if mirrors.len() != anchor.ndim() {
        return arg(format!("expected {} mirror maps, got {}", anchor.ndim(), mirrors.len()));
    }
    let fb = FullBatch::new(tensor, loss)?;
    let mut b = start.clone();
    let mut f_b = fb.value(&b)?;
    let mut kappa = 1.0;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        let grads = fb.gradient(&b)?;
        let mut tries = 0;
        let (next, f_next) = loop {
            tries += 1;
            if tries > 200 {
                return Err(Error::NotConverged {
                    iterations: it,
                    residual,
                });
            }
            let mut factors = Vec::with_capacity(b.ndim());
            let mut exited = false;
            for (n, mirror) in mirrors.iter().enumerate() {
                let w = if alpha > 0.0 {
                    blend(mirror, alpha, anchor.factor(n), kappa, b.factor(n))?
                } else {
                    b.factor(n).clone()
                };
                let gamma = Array2::from_elem(w.dim(), alpha + kappa);
                match mirror.md_update(w.view(), grads[n].view(), gamma.view()) {
                    Ok(a) => factors.push(a),
                    Err(Error::DomainExit { .. }) => {
                        exited = true;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            if exited {
                kappa *= 2.0;
                continue;
            }
            let cand = FactorModel::new(factors)?;
            let f_cand = match fb.value(&cand) {
                Ok(v) => v,
                Err(Error::Domain(_)) | Err(Error::NonFinite(_)) => {
                    kappa *= 2.0;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let lin: f64 = grads
                .iter()
                .enumerate()
                .map(|(n, g)| (g * &(cand.factor(n) - b.factor(n))).sum())
                .sum();
            let bound = f_b + lin + kappa * divergence(mirrors, &cand, &b)?;
            if f_cand <= bound + 1e-14 * f_b.abs().max(1.0) {
                break (cand, f_cand);
            }
            kappa *= 2.0;
        };
        let scale = next
            .factors()
            .iter()
            .flat_map(|f| f.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let change = next
            .factors()
            .iter()
            .zip(b.factors())
            .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q).abs()))
            .fold(0.0f64, f64::max);
        residual = change / scale.max(1e-300);
        b = next;
        f_b = f_next;
        if residual <= tol {
            return Ok((b, it));
        }
        kappa = (kappa / 2.0).max(1e-12);
    }
    Err(Error::NotConverged {
        iterations: max_iters,
        residual,
    })
}

/// Heuristic relative-smoothness constant: the largest of `probes` random
/// coordinate curvature ratios `(1/|I|) Σ_j |ℓ''| ‖H(j,:)‖² / φ''(A(i,r))`.
pub fn estimate_l_hat(
    tensor: &Tensor,
    model: &FactorModel,
    loss: &LossSpec,
    mirrors: &[MirrorMap],
    probes: usize,
    seed: u64,
) -> Result<f64> {
    let shape = tensor.shape().to_vec();
    let total = tensor.len() as f64;
    let mut rng = stream_rng(seed, 7);
    let mut best = 0.0f64;
    let mut unfoldings: Vec<Option<(Array2<f64>, Array2<f64>)>> = vec![None; shape.len()];
    for _ in 0..probes {
        let n = rng.random_range(0..shape.len());
        let i = rng.random_range(0..shape[n]);
        let r = rng.random_range(0..model.rank());
        if unfoldings[n].is_none() {
            let all: Vec<usize> = (1..=num_fibers(&shape, n)).collect();
            unfoldings[n] = Some((unfold(tensor, n)?, khatri_rao_rows(model, n, &all)?));
        }
        let (x, h) = unfoldings[n].as_ref().expect("filled above");
        let a = model.factor(n);
        let mut curv = 0.0;
        for j in 0..x.nrows() {
            let hj = h.row(j);
            let m = hj.dot(&a.row(i));
            curv += loss.second(x[[j, i]], m)?.abs() * hj.dot(&hj);
        }
        let ratio = curv / total / mirrors[n].generator.d2phi(a[[i, r]]);
        if ratio.is_finite() {
            best = best.max(ratio);
        }
    }
    Ok(best)
}

/// `D_φ(Â, A)` at `model`. `mirrors` holds one map per mode.
pub fn stationarity_measure(
    tensor: &Tensor,
    model: &FactorModel,
    loss: &LossSpec,
    mirrors: &[MirrorMap],
    opts: &StationarityOptions,
) -> Result<StationarityReport> {
    let l_hat = estimate_l_hat(tensor, model, loss, mirrors, opts.probes, opts.probe_seed)?;
    let lambda = match opts.lambda {
        Some(l) if l > 0.0 && l.is_finite() => l,
        Some(l) => return arg(format!("λ must be positive, got {l}")),
        None => 1.0 / (4.0 * l_hat.max(1e-12)),
    };
    let alpha = 1.0 / (2.0 * lambda);
    let (prox, iters) = full_batch_md(tensor, loss, mirrors, model, alpha, model, opts.tol, opts.max_iters)?;
    Ok(StationarityReport {
        measure: divergence(mirrors, &prox, model)?,
        lambda,
        l_hat,
        inner_iterations: iters,
    })
}
