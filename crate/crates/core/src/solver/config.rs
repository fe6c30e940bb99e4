use serde::{Deserialize, Serialize};

use crate::bregman::{Constraint, Generator, MirrorMap};
use crate::error::{arg, Result};
use crate::losses::{LossKind, LossSpec, MDomain};
use crate::stepsize::{jensen_generator, ScheduleSpec, DEFAULT_GAMMA_MIN};

/// Diagnostic settings for the stationarity measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityOptions {
    /// Proximal parameter; `None` uses `1/(4 L̂)`.
    pub lambda: Option<f64>,
    /// Relative change of the inner iterate at which the inner solve stops.
    pub tol: f64,
    pub max_iters: usize,
    /// Seed for the curvature probes behind `L̂`.
    pub probe_seed: u64,
    pub probes: usize,
}

impl Default for StationarityOptions {
    fn default() -> Self {
        Self {
            lambda: None,
            tol: 1e-9,
            max_iters: 20_000,
            probe_seed: 0,
            probes: 100,
        }
    }
}

/// Run parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rank: usize,
    pub loss: LossSpec,
    /// One mirror map per mode, or a single map shared by all modes.
    pub mirrors: Vec<MirrorMap>,
    pub schedule: ScheduleSpec,
    /// Fibers per iteration; `None` means `2R`.
    pub batch_fibers: Option<usize>,
    /// Gradient and mirror steps per sampled fiber set.
    pub inner_iters: usize,
    pub max_epochs: usize,
    /// Optional cap on outer iterations.
    pub max_iters: Option<usize>,
    /// Stop when the relative epoch-to-epoch cost change falls below this.
    pub stop_tol: f64,
    pub seed: u64,
    /// Extra trace rows every this many iterations (rows are always written
    /// at the start, at epoch boundaries and at the end).
    pub eval_every: Option<usize>,
    pub gamma_min: f64,
    /// Step rejections (with `Γ` doubled) allowed on a domain exit.
    pub max_retries: usize,
    /// Fraction of mode-1 fibers held out for the cheap cost estimate.
    pub holdout_frac: f64,
    /// Full cost is computed at epoch boundaries only up to this many entries.
    pub full_cost_limit: usize,
    /// Record the stationarity measure at every trace row.
    pub stationarity: Option<StationarityOptions>,
}

impl SolverConfig {
    /// A configuration with defaults: batch `2R`, one inner iteration,
    /// 100 epochs, `stop_tol = 1e-3`, seed 0.
    pub fn new(rank: usize, loss: LossSpec, mirror: MirrorMap, schedule: ScheduleSpec) -> Self {
        Self {
            rank,
            loss,
            mirrors: vec![mirror],
            schedule,
            batch_fibers: None,
            inner_iters: 1,
            max_epochs: 100,
            max_iters: None,
            stop_tol: 1e-3,
            seed: 0,
            eval_every: None,
            gamma_min: DEFAULT_GAMMA_MIN,
            max_retries: 20,
            holdout_frac: 0.01,
            full_cost_limit: 10_000_000,
            stationarity: None,
        }
    }

    pub fn batch(&self) -> usize {
        self.batch_fibers.unwrap_or(2 * self.rank)
    }

    /// The mirror map of `mode`.
    pub fn mirror(&self, mode: usize) -> MirrorMap {
        if self.mirrors.len() == 1 {
            self.mirrors[0]
        } else {
            self.mirrors[mode]
        }
    }

    /// Checks parameters and the (loss, mirror, schedule) combination for an
    /// `ndim`-way tensor.
    pub fn validate(&self, ndim: usize) -> Result<()> {
        if self.rank == 0 {
            return arg("rank must be at least 1");
        }
        if self.inner_iters == 0 {
            return arg("inner_iters must be at least 1");
        }
        if self.batch() == 0 {
            return arg("batch_fibers must be at least 1");
        }
        if !(self.stop_tol > 0.0) {
            return arg(format!("stop_tol must be positive, got {}", self.stop_tol));
        }
        if !(self.gamma_min > 0.0) {
            return arg(format!("gamma_min must be positive, got {}", self.gamma_min));
        }
        if !(self.holdout_frac > 0.0 && self.holdout_frac <= 1.0) {
            return arg(format!("holdout_frac must lie in (0, 1], got {}", self.holdout_frac));
        }
        if self.mirrors.len() != 1 && self.mirrors.len() != ndim {
            return arg(format!("expected 1 or {ndim} mirror maps, got {}", self.mirrors.len()));
        }
        self.schedule.validate()?;
        for mode in 0..ndim {
            check_pair(&self.loss, &self.mirror(mode), &self.schedule)?;
        }
        Ok(())
    }
}

fn incompatible(loss: &LossSpec, mirror: &MirrorMap, why: &str) -> Result<()> {
    arg(format!(
        "incompatible loss `{}` and mirror map `{mirror}`: {why}",
        loss.kind
    ))
}

/// Whether `mirror` can drive `loss` under `schedule`.
pub fn check_pair(loss: &LossSpec, mirror: &MirrorMap, schedule: &ScheduleSpec) -> Result<()> {
    if matches!(loss.kind, LossKind::PoissonExpLink | LossKind::Logistic) && mirror.generator != Generator::Quadratic {
        return incompatible(
            loss,
            mirror,
            "this loss is defined over all reals and pairs with the quadratic map only",
        );
    }
    if loss.kind.m_domain() == MDomain::Nonnegative && mirror.constraint == Constraint::Unconstrained {
        return incompatible(
            loss,
            mirror,
            "this loss needs a nonnegative model; use the nonneg or simplex constraint",
        );
    }
    if let ScheduleSpec::Jensen | ScheduleSpec::Mixed { .. } = schedule {
        let g = jensen_generator(loss)?;
        if mirror.generator != g {
            return incompatible(
                loss,
                mirror,
                &format!("Jensen step sizes for this loss require the `{g}` mirror map"),
            );
        }
        if mirror.constraint == Constraint::Simplex {
            return incompatible(loss, mirror, "Jensen step sizes have no closed-form simplex step");
        }
    }
    Ok(())
}
