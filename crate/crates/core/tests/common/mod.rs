//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use itertools::Itertools;
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use smartcpd::bregman::{Constraint, Generator, MirrorMap};
use smartcpd::losses::{LossKind, LossSpec, XDomain};
use smartcpd::stepsize::{jensen_gamma, jensen_generator};
use smartcpd::tensor::{DenseTensor, FactorModel};
use smartcpd::Error;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every loss of the catalog, with β-divergence at a few representative β.
pub fn all_losses() -> Vec<LossSpec> {
    [
        "euclidean",
        "is",
        "beta:0.5",
        "beta:1.5",
        "beta:2",
        "beta:3",
        "beta:-1",
        "gen-kl",
        "poisson-exp",
        "bernoulli-odds",
        "logistic",
    ]
    .iter()
    .map(|s| s.parse::<LossKind>().unwrap().into())
    .collect()
}

/// A random observation from the loss's data domain.
pub fn random_x(loss: &LossSpec, rng: &mut impl Rng) -> f64 {
    match loss.kind.x_domain() {
        XDomain::Reals => rng.random_range(-2.0..2.0),
        XDomain::Nonnegative => rng.random_range(0.05..3.0),
        XDomain::Count => rng.random_range(0..6) as f64,
        XDomain::Binary => rng.random_range(0..2) as f64,
    }
}

/// 1-based multi-indices of `shape`, first index fastest.
pub fn all_indices(shape: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = shape.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![1; shape.len()];
    for _ in 0..total {
        out.push(idx.clone());
        for (k, i) in idx.iter_mut().enumerate() {
            if *i < shape[k] {
                *i += 1;
                break;
            }
            *i = 1;
        }
    }
    out
}

/// `(1/|I|) Σ_i ℓ(X_i, M_i)` by direct summation over entries.
pub fn brute_objective(loss: &LossSpec, x: &DenseTensor, model: &FactorModel) -> f64 {
    let idx = all_indices(x.shape());
    let total: f64 = idx
        .iter()
        .map(|i| loss.value(x.get(i).unwrap(), model.cpd_entry(i).unwrap()).unwrap())
        .sum();
    total / idx.len() as f64
}

/// `∂/∂A_n (1/|I|) Σ_i ℓ(X_i, M_i)` by the chain rule on each entry.
pub fn brute_gradient(loss: &LossSpec, x: &DenseTensor, model: &FactorModel, mode: usize) -> Array2<f64> {
    let shape = x.shape();
    let idx = all_indices(shape);
    let mut g = Array2::zeros((shape[mode], model.rank()));
    for i in &idx {
        let d = loss.grad(x.get(i).unwrap(), model.cpd_entry(i).unwrap()).unwrap();
        for r in 0..model.rank() {
            let mut prod = 1.0;
            for (k, &ik) in i.iter().enumerate() {
                if k != mode {
                    prod *= model.factor(k)[[ik - 1, r]];
                }
            }
            g[[i[mode] - 1, r]] += d * prod;
        }
    }
    g / idx.len() as f64
}

/// Central differences of `f` at `a`, entry by entry, with a relative step.
pub fn central_difference(a: &Array2<f64>, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut out = Array2::zeros(a.dim());
    for (idx, o) in out.indexed_iter_mut() {
        let h = 1e-5 * a[idx].abs().max(1.0);
        let mut p = a.clone();
        p[idx] += h;
        let fp = f(&p);
        p[idx] -= 2.0 * h;
        let fm = f(&p);
        *o = (fp - fm) / (2.0 * h);
    }
    out
}

pub fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|v| v * v).sum().sqrt();
    let scale = b.mapv(|v| v * v).sum().sqrt();
    diff / scale.max(1e-300)
}

/// Root of an increasing function on `[lo, hi]` by bisection; returns an
/// endpoint when the sign does not change.
pub fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    if f(lo) >= 0.0 {
        return lo;
    }
    if f(hi) <= 0.0 {
        return hi;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Minimizer of a unimodal `f` on `[lo, hi]` by golden-section search.
pub fn golden_section(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - ratio * (hi - lo);
    let mut d = lo + ratio * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..300 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - ratio * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + ratio * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Outcome of the numeric proximal oracle.
#[derive(Debug, Clone, PartialEq)]
pub enum Prox {
    Min(Array2<f64>),
    /// The objective decreases without bound along some coordinate.
    Unbounded,
}

/// Numeric `argmin_A ⟨G, A⟩ + Σ Γ D_φ(A, A_t)` over the constraint set,
/// with positive-domain entries kept at or above `floor`.
///
/// Separable cases solve `g + Γ(φ'(a) − φ'(a_t)) = 0` per entry by
/// bisection. The simplex case bisects on the multiplier of the column sum,
/// solving each entry's stationarity condition by an inner bisection.
pub fn prox_oracle(mirror: &MirrorMap, a_t: &Array2<f64>, g: &Array2<f64>, gamma: &Array2<f64>) -> Prox {
    let phi = mirror.generator;
    let floor = mirror.domain_floor;
    let entry = |at: f64, gv: f64, gm: f64, shift: f64| -> Option<f64> {
        let d = |a: f64| gv + shift + gm * (phi.dphi(a) - phi.dphi(at));
        match (phi, mirror.constraint) {
            (Generator::Quadratic, Constraint::Unconstrained) => {
                let w = (gv + shift).abs() / gm + 1.0;
                Some(bisect(at - w, at + w, d))
            }
            (Generator::Quadratic, _) => {
                let w = (gv + shift).abs() / gm + 1.0;
                Some(bisect(0.0, at + w, d))
            }
            _ => {
                // Work in log space so the bracket spans many decades.
                let top = 1e12 * at.max(1.0);
                if d(top) < 0.0 {
                    return None;
                }
                let u = bisect(floor.ln(), top.ln(), |u| d(u.exp()));
                Some(u.exp())
            }
        }
    };
    let (rows, cols) = a_t.dim();
    let mut out = Array2::zeros((rows, cols));
    if mirror.constraint == Constraint::Simplex {
        for r in 0..cols {
            let column = |mu: f64| -> Vec<f64> {
                (0..rows)
                    .map(|i| entry(a_t[[i, r]], g[[i, r]], gamma[[i, r]], mu).unwrap())
                    .collect()
            };
            // The column sum decreases in μ; find where it crosses one.
            let mut lo = -1.0;
            while column(lo).iter().sum::<f64>() < 1.0 {
                lo *= 2.0;
            }
            let mut hi = 1.0;
            while column(hi).iter().sum::<f64>() > 1.0 {
                hi *= 2.0;
            }
            let mu = bisect(lo, hi, |mu| 1.0 - column(mu).iter().sum::<f64>());
            for (i, v) in column(mu).into_iter().enumerate() {
                out[[i, r]] = v;
            }
        }
        return Prox::Min(out);
    }
    for ((i, r), o) in out.indexed_iter_mut() {
        match entry(a_t[[i, r]], g[[i, r]], gamma[[i, r]], 0.0) {
            Some(v) => *o = v,
            None => return Prox::Unbounded,
        }
    }
    Prox::Min(out)
}

/// `⟨G, A⟩ + Σ Γ D_φ(A, A_t)`.
pub fn prox_objective(phi: Generator, a: &Array2<f64>, a_t: &Array2<f64>, g: &Array2<f64>, gamma: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for (idx, &v) in a.indexed_iter() {
        total += g[idx] * (v - a_t[idx]) + gamma[idx] * phi.div(v, a_t[idx]);
    }
    total
}

fn unit_columns(a: &Array2<f64>) -> Array2<f64> {
    let mut out = a.clone();
    for mut c in out.columns_mut() {
        let n = c.dot(&c).sqrt();
        c /= n;
    }
    out
}

/// Factor MSE with the column permutation found by trying all of them.
pub fn brute_mse(estimate: &FactorModel, truth: &FactorModel) -> f64 {
    let rank = truth.rank();
    let est: Vec<Array2<f64>> = estimate.factors().iter().map(unit_columns).collect();
    let tru: Vec<Array2<f64>> = truth.factors().iter().map(unit_columns).collect();
    (0..rank)
        .permutations(rank)
        .map(|perm| {
            let mut total = 0.0;
            for (e, t) in est.iter().zip(&tru) {
                for (r, &s) in perm.iter().enumerate() {
                    let d = &t.column(r) - &e.column(s);
                    total += d.dot(&d);
                }
            }
            total / (truth.ndim() * rank) as f64
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn random_model(shape: &[usize], rank: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> FactorModel {
    FactorModel::new(
        shape
            .iter()
            .map(|&i| Array2::from_shape_simple_fn((i, rank), || rng.random_range(lo..hi)))
            .collect(),
    )
    .unwrap()
}

/// Full-batch multiplicative updates for the generalized KL loss
/// (`A ← A ⊙ ((X/M) H) / (1ᵀH)` per mode), the classic majorization-
/// minimization scheme for nonnegative Poisson CP.
pub fn kl_multiplicative_updates(x: &smartcpd::tensor::Tensor, init: &FactorModel, sweeps: usize) -> FactorModel {
    multiplicative_updates(x, init, sweeps, |_| 1.0)
}

/// The same scheme for the Bernoulli-odds likelihood `log(1 + m) − x log m`,
/// whose denominator is `(1/(1 + M))ᵀ H`.
pub fn odds_multiplicative_updates(x: &smartcpd::tensor::Tensor, init: &FactorModel, sweeps: usize) -> FactorModel {
    multiplicative_updates(x, init, sweeps, |m| 1.0 / (1.0 + m))
}

fn multiplicative_updates(
    x: &smartcpd::tensor::Tensor,
    init: &FactorModel,
    sweeps: usize,
    weight: impl Fn(f64) -> f64,
) -> FactorModel {
    use smartcpd::tensor::{khatri_rao_rows, num_fibers, unfold};
    let mut model = init.clone();
    let ndim = x.ndim();
    let unfolded: Vec<Array2<f64>> = (0..ndim).map(|n| unfold(x, n).unwrap()).collect();
    for _ in 0..sweeps {
        for (n, xn) in unfolded.iter().enumerate() {
            let all: Vec<usize> = (1..=num_fibers(x.shape(), n)).collect();
            let h = khatri_rao_rows(&model, n, &all).unwrap();
            let a = model.factor(n).clone();
            let m = h.dot(&a.t());
            let ratio = ndarray::Zip::from(xn).and(&m).map_collect(|&x, &m| x / (m + 1e-9));
            let num = ratio.t().dot(&h);
            let den = m.mapv(&weight).t().dot(&h);
            let next = Array2::from_shape_fn(a.dim(), |(i, r)| (a[[i, r]] * num[[i, r]] / den[[i, r]]).max(1e-12));
            model.set_factor(n, next).unwrap();
        }
    }
    model
}

/// Every supported (generator, constraint) pair.
pub fn pairs() -> Vec<MirrorMap> {
    let g = |s: &str| s.parse::<Generator>().unwrap();
    [
        (g("quadratic"), Constraint::Unconstrained),
        (g("quadratic"), Constraint::Nonneg),
        (g("entropy"), Constraint::Nonneg),
        (g("entropy"), Constraint::Simplex),
        (g("neglog"), Constraint::Nonneg),
        (g("power:2"), Constraint::Nonneg),
        (g("power:3"), Constraint::Nonneg),
        (g("power:1.5"), Constraint::Nonneg),
        (g("power:-1"), Constraint::Nonneg),
        (g("power:-0.5"), Constraint::Nonneg),
    ]
    .into_iter()
    .map(|(g, c)| MirrorMap::new(g, c).unwrap())
    .collect()
}

pub struct Instance {
    pub a_t: Array2<f64>,
    pub g: Array2<f64>,
    pub gamma: Array2<f64>,
}

/// A random 5×3 proximal problem whose iterate is feasible for `mirror`.
pub fn instance(mirror: &MirrorMap, rng: &mut impl Rng, uniform_gamma: bool) -> Instance {
    let (rows, cols) = (5, 3);
    let mut a_t = Array2::from_shape_simple_fn((rows, cols), || match mirror.constraint {
        Constraint::Unconstrained => rng.random_range(-2.0..2.0),
        _ => rng.random_range(0.05..2.0),
    });
    if mirror.constraint == Constraint::Simplex {
        for mut c in a_t.columns_mut() {
            let s = c.sum();
            c /= s;
        }
    }
    let g = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0));
    let base: f64 = rng.random_range(0.5..4.0);
    let gamma = Array2::from_shape_simple_fn((rows, cols), || {
        if uniform_gamma {
            base
        } else {
            rng.random_range(0.5..4.0)
        }
    });
    Instance { a_t, g, gamma }
}

/// Compares the closed-form step with the numeric oracle.
pub fn check_prox(mirror: &MirrorMap, inst: &Instance, tol: f64) -> std::result::Result<(), String> {
    let got = mirror.md_update(inst.a_t.view(), inst.g.view(), inst.gamma.view());
    match (got, prox_oracle(mirror, &inst.a_t, &inst.g, &inst.gamma)) {
        (Ok(a), Prox::Min(b)) => {
            let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let err = (&a - &b).iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale;
            if err > tol {
                return Err(format!("{mirror}: closed form {a:?} vs oracle {b:?}"));
            }
            let fa = prox_objective(mirror.generator, &a, &inst.a_t, &inst.g, &inst.gamma);
            let fb = prox_objective(mirror.generator, &b, &inst.a_t, &inst.g, &inst.gamma);
            if fa > fb + 1e-9 * fb.abs().max(1.0) {
                return Err(format!("{mirror}: closed form value {fa} above oracle {fb}"));
            }
            Ok(())
        }
        (Err(Error::DomainExit { .. }), Prox::Unbounded) => Ok(()),
        (got, want) => Err(format!("{mirror}: closed form {got:?}, oracle {want:?}")),
    }
}

/// Losses that have a Jensen step size.
pub fn jensen_losses() -> Vec<LossSpec> {
    [
        "euclidean",
        "is",
        "beta:0.5",
        "beta:-1",
        "beta:2",
        "beta:3",
        "gen-kl",
        "bernoulli-odds",
    ]
    .iter()
    .map(|s| s.parse::<LossKind>().unwrap().into())
    .collect()
}

/// `(loss, surrogate)` at `a` for a single fiber row anchored at `anchor`.
pub fn majorizer(loss: &LossSpec, x: f64, h: &[f64], anchor: &[f64], a: &[f64]) -> (f64, f64) {
    let rank = h.len();
    let hm = Array2::from_shape_vec((1, rank), h.to_vec()).unwrap();
    let am = Array2::from_shape_vec((1, rank), anchor.to_vec()).unwrap();
    let xm = Array2::from_elem((1, 1), x);
    let gamma = jensen_gamma(loss, xm.view(), hm.view(), am.view(), 1e-300).unwrap();
    let phi = jensen_generator(loss).unwrap();
    let dot = |v: &[f64]| h.iter().zip(v).map(|(p, q)| p * q).sum::<f64>();
    let (m_bar, m) = (dot(anchor), dot(a));
    let mut s = loss.value(x, m_bar).unwrap() + loss.grad(x, m_bar).unwrap() * (m - m_bar);
    for r in 0..rank {
        s += gamma[[0, r]] * phi.div(a[r], anchor[r]);
    }
    (loss.value(x, m).unwrap(), s)
}

pub fn random_tuple(loss: &LossSpec, rng: &mut impl Rng) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
    let rank = rng.random_range(1..=4);
    let mut v = |lo: f64, hi: f64| (0..rank).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>();
    let h = v(0.1, 2.0);
    let anchor = v(0.05, 3.0);
    let a = v(0.05, 3.0);
    (random_x(loss, rng), h, anchor, a)
}
