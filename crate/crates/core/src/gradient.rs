//! The sampled block gradient and objective on a set of fibers.
//!
//! With `X̂ = X_n(F, :)`, `Ĥ = H_n(F, :)` and `M̂ = Ĥ A_tᵀ`, the sampled
//! objective is `(1/(|F| I_n)) Σ_{j,i} ℓ(X̂(j,i), M̂(j,i))` and its gradient
//! in `A_n` is `(1/(|F| I_n)) Dᵀ Ĥ` with `D(j,i) = ∂ℓ/∂m (X̂(j,i), M̂(j,i))`.

use ndarray::{Array2, ArrayView2};

use crate::error::{arg, Error, Result};
use crate::losses::{LossKind, LossSpec, MDomain};

fn check_shapes(x: ArrayView2<f64>, h: ArrayView2<f64>, a_t: ArrayView2<f64>) -> Result<()> {
    let (nf, len) = x.dim();
    if h.nrows() != nf || a_t.nrows() != len || h.ncols() != a_t.ncols() || nf == 0 {
        return arg(format!(
            "shape mismatch: X̂ {:?}, Ĥ {:?}, A_t {:?}",
            x.dim(),
            h.dim(),
            a_t.dim()
        ));
    }
    Ok(())
}

fn located(loss: &LossSpec, x: f64, m: f64, j: usize, i: usize) -> Error {
    let detail = match loss.check(x, m) {
        Err(e) => e.to_string(),
        Ok(()) => format!("loss derivative is not finite at x = {x}, m = {m}"),
    };
    Error::Domain(format!("fiber row {}, position {}: {detail}", j + 1, i + 1))
}

fn prefactor(x: ArrayView2<f64>) -> f64 {
    1.0 / (x.nrows() as f64 * x.ncols() as f64)
}

/// Fills `d` with `∂ℓ/∂m` at `(x, m)` using one fused loop per loss.
fn fused_derivative(loss: &LossSpec, x: ArrayView2<f64>, m: &mut Array2<f64>) -> Result<()> {
    let eps = loss.epsilon;
    macro_rules! kernel {
        (|$x:ident, $m:ident| $body:expr) => {{
            for ((j, i), slot) in m.indexed_iter_mut() {
                let $x = x[[j, i]];
                let $m = *slot;
                let d = $body;
                let bad = !d.is_finite() || (loss.kind.m_domain() == MDomain::Nonnegative && !($m >= 0.0));
                if bad {
                    return Err(located(loss, $x, $m, j, i));
                }
                *slot = d;
            }
        }};
    }
    match loss.kind {
        LossKind::Euclidean => kernel!(|x, m| m - x),
        LossKind::IsDiv => kernel!(|x, m| {
            let me = m + eps;
            (me - x) / (me * me)
        }),
        LossKind::BetaDiv(b) => kernel!(|x, m| (m + eps).powf(b - 2.0) * (m - x + eps)),
        LossKind::GenKl => kernel!(|x, m| 1.0 - x / (m + eps)),
        LossKind::PoissonExpLink => kernel!(|x, m| m.exp() - x),
        LossKind::BernoulliOdds => kernel!(|x, m| 1.0 / (m + 1.0) - x / (m + eps)),
        LossKind::Logistic => kernel!(|x, m| {
            let s = if m >= 0.0 {
                1.0 / (1.0 + (-m).exp())
            } else {
                let e = m.exp();
                e / (1.0 + e)
            };
            s - x
        }),
    }
    Ok(())
}

/// The sampled gradient `Ĝ` (`I_n × R`) using fused per-loss kernels.
pub fn sampled_gradient(
    loss: &LossSpec,
    x: ArrayView2<f64>,
    h: ArrayView2<f64>,
    a_t: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_shapes(x, h, a_t)?;
    let mut d = h.dot(&a_t.t());
    fused_derivative(loss, x, &mut d)?;
    let mut g = d.t().dot(&h);
    g *= prefactor(x);
    Ok(g)
}

/// The sampled gradient computed entry by entry through
/// [`LossSpec::grad`]. Slower than [`sampled_gradient`]; kept as a
/// reference.
pub fn sampled_gradient_generic(
    loss: &LossSpec,
    x: ArrayView2<f64>,
    h: ArrayView2<f64>,
    a_t: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_shapes(x, h, a_t)?;
    let m = h.dot(&a_t.t());
    let mut d = Array2::zeros(m.dim());
    for ((j, i), v) in d.indexed_iter_mut() {
        *v = loss
            .grad(x[[j, i]], m[[j, i]])
            .map_err(|e| Error::Domain(format!("fiber row {}, position {}: {e}", j + 1, i + 1)))?;
    }
    let (rows, rank) = a_t.dim();
    let mut g = Array2::zeros((rows, rank));
    for i in 0..rows {
        for r in 0..rank {
            let s: f64 = (0..x.nrows()).map(|j| d[[j, i]] * h[[j, r]]).sum();
            g[[i, r]] = s * prefactor(x);
        }
    }
    Ok(g)
}

/// The sampled objective `(1/(|F| I_n)) Σ_{j,i} ℓ(X̂(j,i), (Ĥ A_tᵀ)(j,i))`.
pub fn sampled_objective(loss: &LossSpec, x: ArrayView2<f64>, h: ArrayView2<f64>, a_t: ArrayView2<f64>) -> Result<f64> {
    check_shapes(x, h, a_t)?;
    let m = h.dot(&a_t.t());
    let mut total = 0.0;
    for ((j, i), &mv) in m.indexed_iter() {
        total += loss
            .value(x[[j, i]], mv)
            .map_err(|e| Error::Domain(format!("fiber row {}, position {}: {e}", j + 1, i + 1)))?;
    }
    Ok(total * prefactor(x))
}
