//! Elementwise losses `ℓ(x, m)` between an observation `x` and a model
//! value `m`, their first two derivatives in `m`, and convex-concave splits.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default ε shift for losses with a `log m` or `m^p` singularity at zero.
pub const DEFAULT_EPSILON: f64 = 1e-9;

/// Largest argument for which `exp` is finite.
const EXP_MAX: f64 = 709.78;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum LossKind {
    /// `½(x − m)²`
    Euclidean,
    /// Itakura-Saito: `x/(m+ε) + log(m+ε)`
    IsDiv,
    /// `(m+ε)^β/β − x(m+ε)^(β−1)/(β−1)`, `β ∉ {0, 1}`
    BetaDiv(f64),
    /// Generalized KL: `m − x log(m+ε)`
    GenKl,
    /// Poisson with exponential link: `e^m − x m`
    PoissonExpLink,
    /// Bernoulli with odds link: `log(m+1) − x log(m+ε)`
    BernoulliOdds,
    /// Bernoulli with logit link: `log(1+e^m) − x m`
    Logistic,
}

/// Where model values may live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MDomain {
    Reals,
    Nonnegative,
}

/// Where observations may live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XDomain {
    Reals,
    Nonnegative,
    Count,
    Binary,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Euclidean => f.write_str("euclidean"),
            LossKind::IsDiv => f.write_str("is"),
            LossKind::BetaDiv(b) => write!(f, "beta:{b}"),
            LossKind::GenKl => f.write_str("gen-kl"),
            LossKind::PoissonExpLink => f.write_str("poisson-exp"),
            LossKind::BernoulliOdds => f.write_str("bernoulli-odds"),
            LossKind::Logistic => f.write_str("logistic"),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.trim() {
            "euclidean" | "ls" => LossKind::Euclidean,
            "is" | "is-div" | "itakura-saito" => LossKind::IsDiv,
            "gen-kl" | "kl" => LossKind::GenKl,
            "poisson-exp" => LossKind::PoissonExpLink,
            "bernoulli-odds" => LossKind::BernoulliOdds,
            "logistic" | "bernoulli-logit" => LossKind::Logistic,
            other => {
                let beta = other
                    .strip_prefix("beta:")
                    .ok_or_else(|| Error::Parse(format!("unknown loss `{other}`")))?;
                let beta: f64 = beta
                    .parse()
                    .map_err(|_| Error::Parse(format!("invalid β in `{other}`")))?;
                LossKind::BetaDiv(beta)
            }
        };
        kind.validate()?;
        Ok(kind)
    }
}

impl From<LossKind> for String {
    fn from(k: LossKind) -> Self {
        k.to_string()
    }
}

impl TryFrom<String> for LossKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl LossKind {
    fn validate(&self) -> Result<()> {
        if let LossKind::BetaDiv(b) = *self {
            if !b.is_finite() || b == 0.0 || b == 1.0 {
                return Err(Error::Argument(format!(
                    "β-divergence needs a finite β outside {{0, 1}}, got {b} (use `is` or `gen-kl`)"
                )));
            }
        }
        Ok(())
    }

    pub fn m_domain(&self) -> MDomain {
        match self {
            LossKind::Euclidean | LossKind::PoissonExpLink | LossKind::Logistic => MDomain::Reals,
            _ => MDomain::Nonnegative,
        }
    }

    pub fn x_domain(&self) -> XDomain {
        match self {
            LossKind::Euclidean => XDomain::Reals,
            LossKind::IsDiv | LossKind::BetaDiv(_) | LossKind::GenKl => XDomain::Nonnegative,
            LossKind::PoissonExpLink => XDomain::Count,
            LossKind::BernoulliOdds | LossKind::Logistic => XDomain::Binary,
        }
    }
}

/// A loss together with its ε shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub epsilon: f64,
    /// Add the `x`-only constant `x^β/(β(β−1))` to β-divergence values so
    /// they are zero at `m = x`. Gradients are unaffected.
    #[serde(default)]
    pub include_constant: bool,
}

impl From<LossKind> for LossSpec {
    fn from(kind: LossKind) -> Self {
        LossSpec {
            kind,
            epsilon: DEFAULT_EPSILON,
            include_constant: false,
        }
    }
}

impl FromStr for LossSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(s.parse::<LossKind>()?.into())
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.kind.fmt(f)
    }
}

fn softplus(m: f64) -> f64 {
    m.max(0.0) + (-m.abs()).exp().ln_1p()
}

fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

impl LossSpec {
    pub fn new(kind: LossKind, epsilon: f64) -> Result<Self> {
        kind.validate()?;
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Argument(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(LossSpec {
            kind,
            epsilon,
            include_constant: false,
        })
    }

    pub fn with_constant(mut self, include: bool) -> Self {
        self.include_constant = include;
        self
    }

    /// Checks that `(x, m)` lies in the loss domain.
    pub fn check(&self, x: f64, m: f64) -> Result<()> {
        let x_ok = match self.kind.x_domain() {
            XDomain::Reals => x.is_finite(),
            XDomain::Nonnegative => x.is_finite() && x >= 0.0,
            XDomain::Count => x.is_finite() && x >= 0.0 && x.fract() == 0.0,
            XDomain::Binary => x == 0.0 || x == 1.0,
        };
        if !x_ok {
            return Err(Error::Argument(format!(
                "observation {x} is outside the {:?} domain of loss `{}`",
                self.kind.x_domain(),
                self.kind
            )));
        }
        let m_ok = match self.kind.m_domain() {
            MDomain::Reals => m.is_finite(),
            MDomain::Nonnegative => m.is_finite() && m >= 0.0,
        };
        if !m_ok {
            return Err(Error::Argument(format!(
                "model value {m} is outside the {:?} domain of loss `{}`",
                self.kind.m_domain(),
                self.kind
            )));
        }
        if self.kind == LossKind::PoissonExpLink && m > EXP_MAX {
            return Err(Error::Domain(format!("exp({m}) overflows")));
        }
        if let (LossKind::BetaDiv(b), true) = (self.kind, self.include_constant) {
            if b < 0.0 && x == 0.0 {
                return Err(Error::Domain(format!(
                    "the β-divergence constant x^β is infinite at x = 0 for β = {b}"
                )));
            }
        }
        Ok(())
    }

    /// `ℓ(x, m)` with domain checks.
    pub fn value(&self, x: f64, m: f64) -> Result<f64> {
        self.check(x, m)?;
        Ok(self.value_unchecked(x, m))
    }

    /// `∂ℓ/∂m` with domain checks.
    pub fn grad(&self, x: f64, m: f64) -> Result<f64> {
        self.check(x, m)?;
        Ok(self.grad_unchecked(x, m))
    }

    /// `∂²ℓ/∂m²` with domain checks.
    pub fn second(&self, x: f64, m: f64) -> Result<f64> {
        self.check(x, m)?;
        Ok(self.second_unchecked(x, m))
    }

    /// `ℓ(x, m)` without domain checks.
    pub fn value_unchecked(&self, x: f64, m: f64) -> f64 {
        let eps = self.epsilon;
        match self.kind {
            LossKind::Euclidean => 0.5 * (x - m) * (x - m),
            LossKind::IsDiv => x / (m + eps) + (m + eps).ln(),
            LossKind::BetaDiv(b) => {
                let me = m + eps;
                let v = me.powf(b) / b - x * me.powf(b - 1.0) / (b - 1.0);
                if self.include_constant {
                    v + beta_constant(x, b)
                } else {
                    v
                }
            }
            LossKind::GenKl => m - x * (m + eps).ln(),
            LossKind::PoissonExpLink => m.exp() - x * m,
            LossKind::BernoulliOdds => m.ln_1p() - x * (m + eps).ln(),
            LossKind::Logistic => softplus(m) - x * m,
        }
    }

    /// `∂ℓ/∂m` without domain checks.
    pub fn grad_unchecked(&self, x: f64, m: f64) -> f64 {
        let eps = self.epsilon;
        match self.kind {
            LossKind::Euclidean => m - x,
            LossKind::IsDiv => {
                let me = m + eps;
                (me - x) / (me * me)
            }
            LossKind::BetaDiv(b) => (m + eps).powf(b - 2.0) * (m - x + eps),
            LossKind::GenKl => 1.0 - x / (m + eps),
            LossKind::PoissonExpLink => m.exp() - x,
            LossKind::BernoulliOdds => 1.0 / (m + 1.0) - x / (m + eps),
            LossKind::Logistic => sigmoid(m) - x,
        }
    }

    /// `∂²ℓ/∂m²` without domain checks.
    pub fn second_unchecked(&self, x: f64, m: f64) -> f64 {
        let eps = self.epsilon;
        match self.kind {
            LossKind::Euclidean => 1.0,
            LossKind::IsDiv => {
                let me = m + eps;
                (2.0 * x - me) / (me * me * me)
            }
            LossKind::BetaDiv(b) => {
                let me = m + eps;
                (b - 1.0) * me.powf(b - 2.0) - x * (b - 2.0) * me.powf(b - 3.0)
            }
            LossKind::GenKl => x / ((m + eps) * (m + eps)),
            LossKind::PoissonExpLink => m.exp(),
            LossKind::BernoulliOdds => x / ((m + eps) * (m + eps)) - 1.0 / ((m + 1.0) * (m + 1.0)),
            LossKind::Logistic => {
                let s = sigmoid(m);
                s * (1.0 - s)
            }
        }
    }

    /// Splits `ℓ(x, ·)` into a convex and a concave part on the nonnegative
    /// half-line.
    pub fn split(&self) -> Result<ConvexConcaveSplit> {
        match self.kind {
            LossKind::PoissonExpLink | LossKind::Logistic => Err(Error::NoSplit(self.kind.to_string())),
            _ => Ok(ConvexConcaveSplit { spec: *self }),
        }
    }
}

fn beta_constant(x: f64, b: f64) -> f64 {
    if x == 0.0 {
        if b > 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        x.powf(b) / (b * (b - 1.0))
    }
}

/// `ℓ = ℓ̌ + ℓ̂` with `ℓ̌` convex and `ℓ̂` concave in `m`.
#[derive(Debug, Clone, Copy)]
pub struct ConvexConcaveSplit {
    spec: LossSpec,
}

impl ConvexConcaveSplit {
    pub fn spec(&self) -> &LossSpec {
        &self.spec
    }

    /// The convex part `ℓ̌(x, m)`.
    pub fn convex(&self, x: f64, m: f64) -> f64 {
        self.spec.value_unchecked(x, m) - self.concave(x, m)
    }

    /// The concave part `ℓ̂(x, m)`.
    pub fn concave(&self, x: f64, m: f64) -> f64 {
        let eps = self.spec.epsilon;
        match self.spec.kind {
            LossKind::Euclidean => 0.0,
            LossKind::IsDiv => (m + eps).ln(),
            LossKind::BetaDiv(b) if b < 1.0 => (m + eps).powf(b) / b,
            LossKind::BetaDiv(b) if b < 2.0 => 0.0,
            LossKind::BetaDiv(b) => -x * (m + eps).powf(b - 1.0) / (b - 1.0),
            LossKind::GenKl => m,
            LossKind::BernoulliOdds => m.ln_1p(),
            LossKind::PoissonExpLink | LossKind::Logistic => unreachable!("no split"),
        }
    }
}
