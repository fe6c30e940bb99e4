//! Two-coordinate majorizers of `ℓ(x, hᵀa)` for the generalized KL loss,
//! evaluated on a grid for plotting.
//!
//! Around an anchor `ā`, with weights `λ_r = h_r ā_r / (hᵀā + ε)`, the
//! surrogate is
//! `ℓ(x, hᵀā) + ℓ'(x, hᵀā) hᵀ(a − ā) + Σ_r Γ_r D_φ(a_r, ā_r)`.
//! The convex part `−x log(·)` has curvature `λ_r x / a_r²` in `a_r`, so
//! `Γ_r = λ_r x` for `φ = −log a`; for `φ = ½a²` and `φ = a log a` the
//! curvature must be dominated on the whole grid, giving
//! `Γ_r = λ_r x / a_min²` and `Γ_r = λ_r x / a_min`.

use crate::bregman::Generator;
use crate::error::{arg, Result};
use crate::losses::{LossKind, LossSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub x: f64,
    pub h: [f64; 2],
    pub anchor: [f64; 2],
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            x: 3.0,
            h: [1.0, 1.0],
            anchor: [5.0, 5.0],
            lo: 0.5,
            hi: 10.0,
            step: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateRow {
    pub phi: Generator,
    pub a1: f64,
    pub a2: f64,
    pub loss: f64,
    pub surrogate: f64,
}

/// Step sizes `Γ_r` that make `φ` majorize the loss for `a_r ≥ a_min`.
pub fn surrogate_gammas(phi: Generator, loss: &LossSpec, x: f64, h: &[f64], anchor: &[f64], a_min: f64) -> Vec<f64> {
    let m = h.iter().zip(anchor).map(|(h, a)| h * a).sum::<f64>() + loss.epsilon;
    h.iter()
        .zip(anchor)
        .map(|(h, a)| {
            let lam = h * a / m;
            match phi {
                Generator::NegLog => lam * x,
                Generator::Quadratic => lam * x / (a_min * a_min),
                Generator::Entropy => lam * x / a_min,
                Generator::Power(_) => unreachable!("not offered on the grid"),
            }
        })
        .collect()
}

/// Loss and surrogate over the grid for `φ ∈ {½a², −log a, a log a}`.
pub fn surrogate_grid(spec: &GridSpec) -> Result<Vec<SurrogateRow>> {
    if !(spec.lo > 0.0 && spec.hi >= spec.lo && spec.step > 0.0) {
        return arg(format!(
            "grid needs 0 < lo <= hi and step > 0, got lo={}, hi={}, step={}",
            spec.lo, spec.hi, spec.step
        ));
    }
    if spec.h.iter().chain(&spec.anchor).any(|&v| !(v > 0.0)) || !(spec.x >= 0.0) {
        return arg("x must be nonnegative, h and the anchor positive");
    }
    let loss = LossSpec::from(LossKind::GenKl);
    let count = ((spec.hi - spec.lo) / spec.step + 1e-9).floor() as usize + 1;
    let points: Vec<f64> = (0..count).map(|k| spec.lo + k as f64 * spec.step).collect();
    let a_min = spec.lo.min(spec.anchor[0]).min(spec.anchor[1]);
    let m_bar = spec.h[0] * spec.anchor[0] + spec.h[1] * spec.anchor[1];
    let f_bar = loss.value(spec.x, m_bar)?;
    let g_bar = loss.grad(spec.x, m_bar)?;
    let mut rows = Vec::with_capacity(3 * count * count);
    for phi in [Generator::Quadratic, Generator::NegLog, Generator::Entropy] {
        let gammas = surrogate_gammas(phi, &loss, spec.x, &spec.h, &spec.anchor, a_min);
        for &a1 in &points {
            for &a2 in &points {
                let a = [a1, a2];
                let m = spec.h[0] * a1 + spec.h[1] * a2;
                let mut s = f_bar + g_bar * (m - m_bar);
                for r in 0..2 {
                    s += gammas[r] * phi.div(a[r], spec.anchor[r]);
                }
                rows.push(SurrogateRow {
                    phi,
                    a1,
                    a2,
                    loss: loss.value(spec.x, m)?,
                    surrogate: s,
                });
            }
        }
    }
    Ok(rows)
}
