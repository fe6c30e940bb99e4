//! Bregman generators, divergences and closed-form mirror-descent steps.
//!
//! A step minimizes `Σ_{i,r} G(i,r)·A(i,r) + Γ(i,r)·D_φ(A(i,r), A_t(i,r))`
//! over the constraint set. For separable constraints the first-order
//! condition `φ'(a) = φ'(a_t) − g/γ` is solved entrywise.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};

/// Iterates of strictly-positive generators are floored here after each step.
pub const DEFAULT_DOMAIN_FLOOR: f64 = 1e-12;

/// A separable strictly convex generator `φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Generator {
    /// `½a²`
    Quadratic,
    /// `−log a`
    NegLog,
    /// `a log a`
    Entropy,
    /// `a^c` with `c > 1` or `c < 0`
    Power(f64),
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Generator::Quadratic => f.write_str("quadratic"),
            Generator::NegLog => f.write_str("neglog"),
            Generator::Entropy => f.write_str("entropy"),
            Generator::Power(c) => write!(f, "power:{c}"),
        }
    }
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let g = match s.trim() {
            "quadratic" | "euclidean" => Generator::Quadratic,
            "neglog" | "burg" => Generator::NegLog,
            "entropy" | "kl" => Generator::Entropy,
            other => {
                let c = other
                    .strip_prefix("power:")
                    .ok_or_else(|| Error::Parse(format!("unknown mirror map `{other}`")))?;
                let c = c
                    .parse()
                    .map_err(|_| Error::Parse(format!("invalid exponent in `{other}`")))?;
                Generator::power(c)?
            }
        };
        Ok(g)
    }
}

impl From<Generator> for String {
    fn from(g: Generator) -> Self {
        g.to_string()
    }
}

impl TryFrom<String> for Generator {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl Generator {
    pub fn power(c: f64) -> Result<Self> {
        if !c.is_finite() || (0.0..=1.0).contains(&c) {
            return arg(format!("power generator needs c > 1 or c < 0, got {c}"));
        }
        Ok(Generator::Power(c))
    }

    /// Whether the generator is only defined for `a > 0`.
    pub fn positive_domain(&self) -> bool {
        !matches!(self, Generator::Quadratic)
    }

    pub fn phi(&self, a: f64) -> f64 {
        match *self {
            Generator::Quadratic => 0.5 * a * a,
            Generator::NegLog => -a.ln(),
            Generator::Entropy => a * a.ln(),
            Generator::Power(c) => a.powf(c),
        }
    }

    pub fn dphi(&self, a: f64) -> f64 {
        match *self {
            Generator::Quadratic => a,
            Generator::NegLog => -1.0 / a,
            Generator::Entropy => a.ln() + 1.0,
            Generator::Power(c) => c * a.powf(c - 1.0),
        }
    }

    pub fn d2phi(&self, a: f64) -> f64 {
        match *self {
            Generator::Quadratic => 1.0,
            Generator::NegLog => 1.0 / (a * a),
            Generator::Entropy => 1.0 / a,
            Generator::Power(c) => c * (c - 1.0) * a.powf(c - 2.0),
        }
    }

    /// Inverse of `φ'`, or `None` when `y` is outside the range of `φ'`.
    pub fn dphi_inv(&self, y: f64) -> Option<f64> {
        match *self {
            Generator::Quadratic => Some(y),
            Generator::NegLog => (y < 0.0).then(|| -1.0 / y),
            Generator::Entropy => Some((y - 1.0).exp()),
            Generator::Power(c) => {
                let base = y / c;
                (base > 0.0).then(|| base.powf(1.0 / (c - 1.0)))
            }
        }
    }

    /// Scalar divergence `D_φ(a, b)`, written to avoid cancellation.
    pub fn div(&self, a: f64, b: f64) -> f64 {
        match *self {
            Generator::Quadratic => 0.5 * (a - b) * (a - b),
            Generator::NegLog => {
                let q = a / b;
                q - 1.0 - q.ln()
            }
            Generator::Entropy => a * (a / b).ln() - a + b,
            Generator::Power(c) => a.powf(c) - b.powf(c) - c * b.powf(c - 1.0) * (a - b),
        }
    }

    fn in_domain(&self, a: f64) -> bool {
        a.is_finite() && (!self.positive_domain() || a > 0.0)
    }
}

/// The feasible set for a factor matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Constraint {
    Unconstrained,
    Nonneg,
    /// Each column nonnegative and summing to one.
    Simplex,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Constraint::Unconstrained => "none",
            Constraint::Nonneg => "nonneg",
            Constraint::Simplex => "simplex",
        })
    }
}

impl FromStr for Constraint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" | "unconstrained" => Ok(Constraint::Unconstrained),
            "nonneg" | "nonnegative" => Ok(Constraint::Nonneg),
            "simplex" => Ok(Constraint::Simplex),
            other => Err(Error::Parse(format!("unknown constraint `{other}`"))),
        }
    }
}

impl From<Constraint> for String {
    fn from(c: Constraint) -> Self {
        c.to_string()
    }
}

impl TryFrom<String> for Constraint {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// A generator paired with a constraint set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorMap {
    pub generator: Generator,
    pub constraint: Constraint,
    pub domain_floor: f64,
}

impl MirrorMap {
    pub fn new(generator: Generator, constraint: Constraint) -> Result<Self> {
        match (generator, constraint) {
            (Generator::Quadratic, Constraint::Simplex) => {
                arg("the simplex constraint has a closed-form step only with the entropy mirror map")
            }
            (Generator::Quadratic, _) | (Generator::Entropy, Constraint::Simplex) => Ok(()),
            (_, Constraint::Simplex) => arg(format!(
                "the simplex constraint has a closed-form step only with the entropy mirror map, got `{generator}`"
            )),
            (_, Constraint::Unconstrained) => arg(format!(
                "mirror map `{generator}` is defined on positive values only; use the nonneg constraint"
            )),
            _ => Ok(()),
        }?;
        Ok(Self {
            generator,
            constraint,
            domain_floor: DEFAULT_DOMAIN_FLOOR,
        })
    }

    pub fn with_floor(mut self, floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor.is_finite()) {
            return arg(format!("domain floor must be positive, got {floor}"));
        }
        self.domain_floor = floor;
        Ok(self)
    }

    fn check_domain(&self, a: ArrayView2<f64>, what: &str) -> Result<()> {
        if let Some(((i, r), v)) = a.indexed_iter().find(|(_, &v)| !self.generator.in_domain(v)) {
            return Err(Error::Domain(format!(
                "{what} entry ({}, {}) = {v} is outside the domain of `{}`",
                i + 1,
                r + 1,
                self.generator
            )));
        }
        Ok(())
    }

    /// Whether `a` lies in the constraint set and the generator domain.
    /// Simplex columns must sum to one within `tol`.
    pub fn is_feasible(&self, a: ArrayView2<f64>, tol: f64) -> bool {
        let entries_ok = a.iter().all(|&v| {
            v.is_finite()
                && match (self.generator.positive_domain(), self.constraint) {
                    (true, _) => v > 0.0,
                    (false, Constraint::Unconstrained) => true,
                    (false, _) => v >= 0.0,
                }
        });
        entries_ok
            && (self.constraint != Constraint::Simplex || a.sum_axis(Axis(0)).iter().all(|s| (s - 1.0).abs() <= tol))
    }

    /// `D_φ(A, B) = Σ φ(a) − φ(b) − φ'(b)(a − b)`.
    pub fn divergence(&self, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
        if a.dim() != b.dim() {
            return arg(format!("shape mismatch: {:?} vs {:?}", a.dim(), b.dim()));
        }
        self.check_domain(a, "first argument")?;
        self.check_domain(b, "second argument")?;
        Ok(Zip::from(a)
            .and(b)
            .fold(0.0, |acc, &x, &y| acc + self.generator.div(x, y)))
    }

    /// One mirror-descent step from `a_t` with gradient `g` and entrywise
    /// step-size matrix `gamma` (the inverse step).
    ///
    /// Returns [`Error::DomainExit`] when the minimizer does not exist
    /// (the objective is unbounded below); a larger `gamma` always fixes it.
    pub fn md_update(&self, a_t: ArrayView2<f64>, g: ArrayView2<f64>, gamma: ArrayView2<f64>) -> Result<Array2<f64>> {
        if a_t.dim() != g.dim() || a_t.dim() != gamma.dim() {
            return arg(format!(
                "shape mismatch: A_t {:?}, G {:?}, Γ {:?}",
                a_t.dim(),
                g.dim(),
                gamma.dim()
            ));
        }
        if let Some(v) = gamma.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return arg(format!("step-size entries must be positive and finite, got {v}"));
        }
        if let Some(v) = g.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {v}")));
        }
        self.check_domain(a_t, "iterate")?;
        if self.constraint == Constraint::Simplex {
            return Ok(self.simplex_entropy(a_t, g, gamma));
        }
        let floor = self.domain_floor;
        let mut out = Array2::zeros(a_t.dim());
        for ((i, r), o) in out.indexed_iter_mut() {
            let (at, gr, gm) = (a_t[[i, r]], g[[i, r]], gamma[[i, r]]);
            let exit = |base: f64| Error::DomainExit {
                row: i + 1,
                col: r + 1,
                base,
            };
            *o = match self.generator {
                Generator::Quadratic => {
                    let v = at - gr / gm;
                    if self.constraint == Constraint::Nonneg {
                        v.max(0.0)
                    } else {
                        v
                    }
                }
                Generator::Entropy => (at * (-gr / gm).exp()).max(floor),
                Generator::NegLog => {
                    let base = 1.0 + gr * at / gm;
                    if base <= 0.0 {
                        return Err(exit(base));
                    }
                    (at / base).max(floor)
                }
                Generator::Power(c) => {
                    let base = at.powf(c - 1.0) - gr / (c * gm);
                    if base > 0.0 {
                        base.powf(1.0 / (c - 1.0)).max(floor)
                    } else if c > 1.0 {
                        // φ'(0) = 0, so the constrained minimizer sits on the
                        // boundary.
                        floor
                    } else {
                        return Err(exit(base));
                    }
                }
            };
        }
        Ok(out)
    }

    /// Entropy step on each column simplex. With `λ_i = 1/Γ_i` the KKT
    /// conditions give `a_i = exp(s_i − μ λ_i)`, `s_i = log a_t,i − g_i λ_i`,
    /// with the multiplier `μ` fixed by `Σ a_i = 1`. `log Σ exp(s_i − μ λ_i)`
    /// is convex and decreasing in `μ`, so Newton from a point left of the
    /// root converges monotonically.
    fn simplex_entropy(&self, a_t: ArrayView2<f64>, g: ArrayView2<f64>, gamma: ArrayView2<f64>) -> Array2<f64> {
        let (rows, cols) = a_t.dim();
        let mut out = Array2::zeros((rows, cols));
        let mut s = vec![0.0; rows];
        let mut lam = vec![0.0; rows];
        for r in 0..cols {
            for i in 0..rows {
                lam[i] = 1.0 / gamma[[i, r]];
                s[i] = a_t[[i, r]].ln() - g[[i, r]] * lam[i];
            }
            let uniform = lam.iter().all(|&l| l == lam[0]);
            let mu = if uniform {
                0.0
            } else {
                let mut mu = s.iter().zip(&lam).map(|(s, l)| s / l).fold(f64::NEG_INFINITY, f64::max);
                for _ in 0..200 {
                    let shift = s
                        .iter()
                        .zip(&lam)
                        .map(|(s, l)| s - mu * l)
                        .fold(f64::NEG_INFINITY, f64::max);
                    let (mut sum, mut dsum) = (0.0, 0.0);
                    for (s, l) in s.iter().zip(&lam) {
                        let w = (s - mu * l - shift).exp();
                        sum += w;
                        dsum += w * l;
                    }
                    let val = shift + sum.ln();
                    let step = val * sum / dsum;
                    mu += step;
                    if val.abs() < 1e-15 || step.abs() <= 1e-15 * mu.abs().max(1.0) {
                        break;
                    }
                }
                mu
            };
            let shift = s
                .iter()
                .zip(&lam)
                .map(|(s, l)| s - mu * l)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut col = out.column_mut(r);
            for i in 0..rows {
                col[i] = (s[i] - mu * lam[i] - shift).exp();
            }
            let total: f64 = col.sum();
            col.mapv_inplace(|v| (v / total).max(self.domain_floor));
            let total: f64 = col.sum();
            col.mapv_inplace(|v| v / total);
        }
        out
    }
}

impl fmt::Display for MirrorMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.generator, self.constraint)
    }
}
