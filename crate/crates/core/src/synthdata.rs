//! Synthetic ground-truth factors and noisy observations.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::sampler::stream_rng;
use crate::tensor::{DenseTensor, FactorModel};

/// How observations are drawn from the model tensor `M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Observation {
    /// `X ~ Poisson(M)`
    Poisson,
    /// `X ~ Bernoulli(M / (1 + M))`
    BernoulliOdds,
    /// `X = M ⊛ N` with `N ~ Gamma(k, 1/k)`, `k = 10^(snr_db/10)`.
    Gamma { snr_db: f64 },
    /// `X = M + σ Z` with `σ² = ‖M‖²/(|I| 10^(snr_db/10))`.
    Gaussian { snr_db: f64 },
    /// `X = M`
    None,
}

impl Observation {
    /// Parses `poisson`, `bernoulli`, `gamma`, `gaussian` or `none`; the noisy
    /// kinds take `snr_db`.
    pub fn parse(name: &str, snr_db: Option<f64>) -> Result<Self> {
        let need_snr = || snr_db.ok_or_else(|| Error::Argument(format!("observation `{name}` needs an SNR in dB")));
        let obs = match name {
            "poisson" => Observation::Poisson,
            "bernoulli" | "bernoulli-odds" => Observation::BernoulliOdds,
            "gamma" => Observation::Gamma { snr_db: need_snr()? },
            "gaussian" => Observation::Gaussian { snr_db: need_snr()? },
            "none" => Observation::None,
            other => return Err(Error::Parse(format!("unknown observation model `{other}`"))),
        };
        Ok(obs)
    }
}

impl fmt::Display for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observation::Poisson => f.write_str("poisson"),
            Observation::BernoulliOdds => f.write_str("bernoulli"),
            Observation::Gamma { snr_db } => write!(f, "gamma({snr_db} dB)"),
            Observation::Gaussian { snr_db } => write!(f, "gaussian({snr_db} dB)"),
            Observation::None => f.write_str("none"),
        }
    }
}

impl FromStr for Observation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((name, snr)) => {
                let snr = snr.parse().map_err(|_| Error::Parse(format!("invalid SNR in `{s}`")))?;
                Observation::parse(name, Some(snr))
            }
            None => Observation::parse(s, None),
        }
    }
}

/// Parameters of a synthetic instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub shape: Vec<usize>,
    pub rank: usize,
    pub a_max: f64,
    /// Fraction of entries per column redrawn from `U(0, heavy_scale·a_max)`.
    pub heavy_frac: f64,
    pub heavy_scale: f64,
    pub observation: Observation,
    pub seed: u64,
    /// Normalize factor columns to sum to one.
    pub simplex: bool,
}

impl GeneratorSpec {
    /// Defaults: `a_max = 0.5`, 5% heavy entries at 10× scale, Poisson
    /// observations, seed 0.
    pub fn new(shape: Vec<usize>, rank: usize) -> Self {
        Self {
            shape,
            rank,
            a_max: 0.5,
            heavy_frac: 0.05,
            heavy_scale: 10.0,
            observation: Observation::Poisson,
            seed: 0,
            simplex: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.len() < 2 || self.shape.contains(&0) {
            return arg(format!("invalid shape {:?}", self.shape));
        }
        if self.rank == 0 {
            return arg("rank must be at least 1");
        }
        if !(self.a_max > 0.0 && self.a_max.is_finite()) {
            return arg(format!("a_max must be positive, got {}", self.a_max));
        }
        if !(0.0..=1.0).contains(&self.heavy_frac) {
            return arg(format!("heavy_frac must lie in [0, 1], got {}", self.heavy_frac));
        }
        if !(self.heavy_scale > 0.0 && self.heavy_scale.is_finite()) {
            return arg(format!("heavy_scale must be positive, got {}", self.heavy_scale));
        }
        if let Observation::Gamma { snr_db } | Observation::Gaussian { snr_db } = self.observation {
            if !snr_db.is_finite() {
                return arg(format!("SNR must be finite, got {snr_db}"));
            }
        }
        Ok(())
    }
}

/// Ground-truth factors: entries `U(0, a_max)`, then per column
/// `⌈heavy_frac · I_n⌉` random entries redrawn from `U(0, heavy_scale · a_max)`.
pub fn gen_factors(spec: &GeneratorSpec) -> Result<FactorModel> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, 0);
    let mut factors = Vec::with_capacity(spec.shape.len());
    for &rows in &spec.shape {
        let mut a = Array2::from_shape_simple_fn((rows, spec.rank), || rng.random::<f64>() * spec.a_max);
        let heavy = (spec.heavy_frac * rows as f64).ceil() as usize;
        if heavy > 0 {
            for r in 0..spec.rank {
                for i in rand::seq::index::sample(&mut rng, rows, heavy.min(rows)) {
                    a[[i, r]] = rng.random::<f64>() * spec.heavy_scale * spec.a_max;
                }
            }
        }
        if spec.simplex {
            for mut col in a.axis_iter_mut(Axis(1)) {
                let s = col.sum();
                col /= s;
            }
        }
        factors.push(a);
    }
    FactorModel::new(factors)
}

/// Draws an observed tensor from `model` under `spec.observation`.
pub fn observe(model: &FactorModel, spec: &GeneratorSpec) -> Result<DenseTensor> {
    spec.validate()?;
    let mut m = model.to_dense();
    let mut rng = stream_rng(spec.seed, 1);
    let needs_nonneg = !matches!(spec.observation, Observation::Gaussian { .. } | Observation::None);
    if needs_nonneg {
        if let Some(v) = m.values().iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!(
                "observation model `{}` needs a nonnegative model tensor, found {v}",
                spec.observation
            )));
        }
    }
    match spec.observation {
        Observation::Poisson => {
            for v in m.values_mut() {
                *v = if *v == 0.0 {
                    0.0
                } else {
                    Poisson::new(*v)
                        .map_err(|e| Error::Domain(format!("Poisson rate {v}: {e}")))?
                        .sample(&mut rng)
                };
            }
        }
        Observation::BernoulliOdds => {
            for v in m.values_mut() {
                let p = *v / (1.0 + *v);
                *v = f64::from(rng.random::<f64>() < p);
            }
        }
        Observation::Gamma { snr_db } => {
            let k = 10f64.powf(snr_db / 10.0);
            let noise = Gamma::new(k, 1.0 / k).map_err(|e| Error::Argument(e.to_string()))?;
            for v in m.values_mut() {
                let n: f64 = noise.sample(&mut rng);
                *v *= n;
            }
        }
        Observation::Gaussian { snr_db } => {
            let power: f64 = m.values().iter().map(|v| v * v).sum::<f64>() / m.values().len() as f64;
            let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
            for v in m.values_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += sigma * z;
            }
        }
        Observation::None => {}
    }
    Ok(m)
}

/// `10 log10(‖M‖² / ‖X − M‖²)`.
pub fn realized_snr_db(model: &DenseTensor, observed: &DenseTensor) -> Result<f64> {
    if model.shape() != observed.shape() {
        return arg("model and observation shapes differ");
    }
    let signal: f64 = model.values().iter().map(|v| v * v).sum();
    let noise: f64 = model
        .values()
        .iter()
        .zip(observed.values())
        .map(|(m, x)| (x - m) * (x - m))
        .sum();
    Ok(10.0 * (signal / noise).log10())
}
