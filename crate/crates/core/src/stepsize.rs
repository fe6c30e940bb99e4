//! Step-size matrices `Γ` for the mirror step: Adagrad accumulation,
//! Jensen majorization scalings and scalar schedules.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::bregman::Generator;
use crate::error::{arg, Error, Result};
use crate::losses::{LossKind, LossSpec};

pub const DEFAULT_ADAGRAD_B: f64 = 1e-5;
pub const DEFAULT_GAMMA_MIN: f64 = 1e-8;
pub const DEFAULT_SWITCH_TOL: f64 = 1e-4;
pub const DEFAULT_ETA0: f64 = 1.0;
pub const DEFAULT_ALPHA: f64 = 0.6;

/// How `Γ` is chosen at each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ScheduleSpec {
    /// `Γ = 1/η` everywhere.
    Constant(f64),
    /// `Γ = √T` for a horizon of `T` iterations.
    SqrtHorizon(usize),
    /// `Γ = (1 + t)^α / η₀`.
    Diminishing { eta0: f64, alpha: f64 },
    /// `Γ = sqrt(Σ G² + b)` per coordinate, summed over every gradient seen
    /// so far including the current one.
    Adagrad { b: f64 },
    /// Majorization scalings matched to the loss.
    Jensen,
    /// Jensen until the epoch cost stalls, then Adagrad with the quadratic map.
    Mixed { switch_tol: f64, b: f64 },
}

impl fmt::Display for ScheduleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleSpec::Constant(eta) => write!(f, "constant:{eta}"),
            ScheduleSpec::SqrtHorizon(t) => write!(f, "sqrt-horizon:{t}"),
            ScheduleSpec::Diminishing { eta0, alpha } => {
                write!(f, "diminishing:eta0={eta0},alpha={alpha}")
            }
            ScheduleSpec::Adagrad { b } => write!(f, "adagrad:b={b}"),
            ScheduleSpec::Jensen => f.write_str("jensen"),
            ScheduleSpec::Mixed { switch_tol, b } => write!(f, "mixed:tol={switch_tol},b={b}"),
        }
    }
}

/// Parses `key=value` pairs; a bare value is stored under `first_key`.
fn params(body: &str, first_key: &str, allowed: &[&str]) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for (pos, part) in body.split(',').filter(|p| !p.trim().is_empty()).enumerate() {
        let (k, v) = match part.split_once('=') {
            Some((k, v)) => (k.trim(), v.trim()),
            None if pos == 0 => (first_key, part.trim()),
            None => return Err(Error::Parse(format!("expected key=value, got `{part}`"))),
        };
        if !allowed.contains(&k) {
            return Err(Error::Parse(format!("unknown parameter `{k}`")));
        }
        let v: f64 = v
            .parse()
            .map_err(|_| Error::Parse(format!("invalid number `{v}` for `{k}`")))?;
        out.push((k.to_string(), v));
    }
    Ok(out)
}

fn lookup(ps: &[(String, f64)], key: &str) -> Option<f64> {
    ps.iter().rev().find(|(k, _)| k == key).map(|&(_, v)| v)
}

impl FromStr for ScheduleSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, body) = s.split_once(':').unwrap_or((s, ""));
        let spec = match name {
            "constant" => {
                let ps = params(body, "eta", &["eta"])?;
                ScheduleSpec::Constant(
                    lookup(&ps, "eta").ok_or_else(|| Error::Parse("constant needs a step size".into()))?,
                )
            }
            "sqrt-horizon" => {
                let ps = params(body, "T", &["T"])?;
                let t = lookup(&ps, "T").ok_or_else(|| Error::Parse("sqrt-horizon needs T".into()))?;
                if t.fract() != 0.0 || t < 1.0 {
                    return Err(Error::Parse(format!("horizon must be a positive integer, got {t}")));
                }
                ScheduleSpec::SqrtHorizon(t as usize)
            }
            "diminishing" => {
                let ps = params(body, "eta0", &["eta0", "alpha"])?;
                ScheduleSpec::Diminishing {
                    eta0: lookup(&ps, "eta0").unwrap_or(DEFAULT_ETA0),
                    alpha: lookup(&ps, "alpha").unwrap_or(DEFAULT_ALPHA),
                }
            }
            "adagrad" => {
                let ps = params(body, "b", &["b"])?;
                ScheduleSpec::Adagrad {
                    b: lookup(&ps, "b").unwrap_or(DEFAULT_ADAGRAD_B),
                }
            }
            "jensen" if body.is_empty() => ScheduleSpec::Jensen,
            "mixed" => {
                let ps = params(body, "tol", &["tol", "b"])?;
                ScheduleSpec::Mixed {
                    switch_tol: lookup(&ps, "tol").unwrap_or(DEFAULT_SWITCH_TOL),
                    b: lookup(&ps, "b").unwrap_or(DEFAULT_ADAGRAD_B),
                }
            }
            _ => return Err(Error::Parse(format!("unknown schedule `{s}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<ScheduleSpec> for String {
    fn from(s: ScheduleSpec) -> Self {
        s.to_string()
    }
}

impl TryFrom<String> for ScheduleSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        match *self {
            ScheduleSpec::Constant(eta) if !pos(eta) => arg(format!("step size must be positive, got {eta}")),
            ScheduleSpec::SqrtHorizon(0) => arg("horizon must be at least 1"),
            ScheduleSpec::Diminishing { eta0, .. } if !pos(eta0) => arg(format!("eta0 must be positive, got {eta0}")),
            ScheduleSpec::Diminishing { alpha, .. } if !(alpha > 0.5 && alpha <= 1.0) => {
                arg(format!("alpha must lie in (0.5, 1], got {alpha}"))
            }
            ScheduleSpec::Adagrad { b } | ScheduleSpec::Mixed { b, .. } if !pos(b) => {
                arg(format!("b must be positive, got {b}"))
            }
            ScheduleSpec::Mixed { switch_tol, .. } if !pos(switch_tol) => {
                arg(format!("switch tolerance must be positive, got {switch_tol}"))
            }
            _ => Ok(()),
        }
    }

    /// The scalar step `η_t` for scalar schedules, `None` otherwise.
    pub fn eta(&self, t: usize) -> Option<f64> {
        match *self {
            ScheduleSpec::Constant(eta) => Some(eta),
            ScheduleSpec::SqrtHorizon(horizon) => Some(1.0 / (horizon as f64).sqrt()),
            ScheduleSpec::Diminishing { eta0, alpha } => Some(eta0 / (1.0 + t as f64).powf(alpha)),
            _ => None,
        }
    }
}

/// `η_t` for a scalar schedule. Errors for adaptive schedules.
pub fn scalar_eta(spec: &ScheduleSpec, t: usize) -> Result<f64> {
    spec.eta(t)
        .ok_or_else(|| Error::Argument(format!("schedule `{spec}` has no scalar step size")))
}

/// Per-mode Adagrad accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct AdagradState {
    acc: Vec<Array2<f64>>,
    b: f64,
}

impl AdagradState {
    /// One zero accumulator of shape `(rows, rank)` per entry of `rows`.
    pub fn new(rows: &[usize], rank: usize, b: f64) -> Result<Self> {
        if !(b > 0.0 && b.is_finite()) {
            return arg(format!("b must be positive, got {b}"));
        }
        Ok(Self {
            acc: rows.iter().map(|&i| Array2::zeros((i, rank))).collect(),
            b,
        })
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn accumulator(&self, mode: usize) -> &Array2<f64> {
        &self.acc[mode]
    }

    fn slot(&mut self, mode: usize, g: ArrayView2<f64>) -> Result<&mut Array2<f64>> {
        let acc = self
            .acc
            .get_mut(mode)
            .ok_or_else(|| Error::Argument(format!("no accumulator for mode {mode}")))?;
        if acc.dim() != g.dim() {
            return arg(format!(
                "gradient shape {:?} does not match accumulator {:?}",
                g.dim(),
                acc.dim()
            ));
        }
        Ok(acc)
    }

    /// Returns `sqrt(acc + b)` from the accumulator before this call, then
    /// adds `G²` into it. The first call returns `√b` everywhere.
    pub fn gamma(&mut self, mode: usize, g: ArrayView2<f64>) -> Result<Array2<f64>> {
        let b = self.b;
        let acc = self.slot(mode, g)?;
        let gamma = acc.mapv(|a| (a + b).sqrt());
        acc.zip_mut_with(&g, |a, &g| *a += g * g);
        Ok(gamma)
    }

    /// Adds `G²` into the accumulator without producing step sizes.
    pub fn accumulate(&mut self, mode: usize, g: ArrayView2<f64>) -> Result<()> {
        self.slot(mode, g)?.zip_mut_with(&g, |a, &g| *a += g * g);
        Ok(())
    }

    /// Adds `G²` into the accumulator, then returns `sqrt(acc + b)`.
    ///
    /// This is the form the solver uses: it keeps `|G / Γ| ≤ 1`, so a single
    /// entropic step changes an entry by at most a factor `e`. With the
    /// lagged form and a small `b` the first steps are `exp(±G/√b)`.
    pub fn gamma_with_current(&mut self, mode: usize, g: ArrayView2<f64>) -> Result<Array2<f64>> {
        let b = self.b;
        let acc = self.slot(mode, g)?;
        acc.zip_mut_with(&g, |a, &g| *a += g * g);
        Ok(acc.mapv(|a| (a + b).sqrt()))
    }
}

/// The generator whose divergence majorizes the convex part of `loss`
/// after Jensen's inequality.
pub fn jensen_generator(loss: &LossSpec) -> Result<Generator> {
    match loss.kind {
        LossKind::Euclidean => Ok(Generator::Quadratic),
        LossKind::IsDiv => Ok(Generator::Power(-1.0)),
        LossKind::GenKl | LossKind::BernoulliOdds => Ok(Generator::NegLog),
        LossKind::BetaDiv(b) if b < 1.0 => Ok(Generator::Power(b - 1.0)),
        LossKind::BetaDiv(b) if b >= 2.0 => Ok(Generator::Power(b)),
        LossKind::BetaDiv(b) => arg(format!(
            "β = {b} in (1, 2) has no Jensen step size: both parts of the loss are convex"
        )),
        LossKind::PoissonExpLink | LossKind::Logistic => Err(Error::NoSplit(loss.kind.to_string())),
    }
}

/// Jensen scalings `Γ` (`I_n × R`) for the sampled objective
/// `(1/(|F| I_n)) Σ_{j,i} ℓ(X̂(j,i), (Ĥ A_tᵀ)(j,i))`, paired with
/// [`jensen_generator`]. Entries are floored at `gamma_min`.
///
/// With `m̃ = Ĥ A_tᵀ + ε` and `p = 1/(|F| I_n)`:
///
/// | loss | `Γ(i,r)` |
/// |---|---|
/// | euclidean | `p Σ_j Ĥ(j,r) m(j,i) / A(i,r)` |
/// | is | `p A(i,r)² Σ_j X̂ Ĥ(j,r) / m̃²` |
/// | gen-kl, bernoulli-odds | `p A(i,r) Σ_j X̂ Ĥ(j,r) / m̃` |
/// | β < 1 | `p A(i,r)^(2−β)/(1−β) Σ_j X̂ Ĥ(j,r) m̃^(β−2)` |
/// | β ≥ 2 | `p A(i,r)^(1−β)/β Σ_j Ĥ(j,r) m̃^(β−1)` |
pub fn jensen_gamma(
    loss: &LossSpec,
    x: ArrayView2<f64>,
    h: ArrayView2<f64>,
    a_t: ArrayView2<f64>,
    gamma_min: f64,
) -> Result<Array2<f64>> {
    jensen_generator(loss)?;
    let (nf, len) = x.dim();
    let (rows, rank) = a_t.dim();
    if h.dim() != (nf, rank) || rows != len {
        return arg(format!(
            "shape mismatch: X̂ {:?}, Ĥ {:?}, A_t {:?}",
            x.dim(),
            h.dim(),
            a_t.dim()
        ));
    }
    if let Some(((i, r), v)) = a_t.indexed_iter().find(|(_, &v)| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!(
            "Jensen step sizes need positive factors, A_t({}, {}) = {v}",
            i + 1,
            r + 1
        )));
    }
    let m = h.dot(&a_t.t());
    if let Some(((j, i), v)) = m.indexed_iter().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::Domain(format!(
            "Jensen step sizes need a positive model, got {v} at fiber row {}, position {}",
            j + 1,
            i + 1
        )));
    }
    let eps = loss.epsilon;
    // w(j, i) such that Γ(i, r) = p · a(i, r)^k · Σ_j w(j, i) Ĥ(j, r).
    let (w, power, scale) = match loss.kind {
        LossKind::Euclidean => (m.clone(), -1.0, 1.0),
        LossKind::IsDiv => (
            ndarray::Zip::from(&x)
                .and(&m)
                .map_collect(|&x, &m| x / ((m + eps) * (m + eps))),
            2.0,
            1.0,
        ),
        LossKind::GenKl | LossKind::BernoulliOdds => (
            ndarray::Zip::from(&x).and(&m).map_collect(|&x, &m| x / (m + eps)),
            1.0,
            1.0,
        ),
        LossKind::BetaDiv(b) if b < 1.0 => (
            ndarray::Zip::from(&x)
                .and(&m)
                .map_collect(|&x, &m| x * (m + eps).powf(b - 2.0)),
            2.0 - b,
            1.0 / (1.0 - b),
        ),
        LossKind::BetaDiv(b) => (m.mapv(|m| (m + eps).powf(b - 1.0)), 1.0 - b, 1.0 / b),
        LossKind::PoissonExpLink | LossKind::Logistic => unreachable!(),
    };
    let pref = 1.0 / (nf as f64 * len as f64);
    let s = w.t().dot(&h);
    let mut gamma = s;
    ndarray::Zip::from(&mut gamma).and(&a_t).for_each(|g, &a| {
        let ak = if power == 1.0 { a } else { a.powf(power) };
        *g = (pref * scale * ak * *g).max(gamma_min);
    });
    Ok(gamma)
}
