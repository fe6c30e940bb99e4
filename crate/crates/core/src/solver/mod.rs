//! The fiber-sampled stochastic mirror descent loop.
//!
//! Each iteration samples a mode `n` and a fiber set `F`, forms the sampled
//! gradient of block `n`, and takes one or more mirror steps on `A_n` with
//! the sampled fibers held fixed. All other blocks are left untouched.

mod config;
mod stationarity;

use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use config::{check_pair, SolverConfig, StationarityOptions};
pub use stationarity::{estimate_l_hat, full_batch_md, stationarity_measure, StationarityReport};

use crate::bregman::{Constraint, Generator, MirrorMap};
use crate::error::{arg, Error, Result};
use crate::gradient::sampled_gradient;
use crate::metrics::{factor_mse, objective_cost};
use crate::sampler::{stream_rng, Sampler};
use crate::stepsize::{jensen_gamma, jensen_generator, AdagradState, ScheduleSpec};
use crate::tensor::{extract_fibers, khatri_rao_rows, num_fibers, FactorModel, Tensor};

/// One row of the convergence trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    /// Tensor entries consumed so far; divide by `|I|` for epochs.
    pub samples: u64,
    pub seconds: f64,
    /// Full objective when `full_cost` is set, else the held-out estimate.
    pub cost: f64,
    pub full_cost: bool,
    pub mse: Option<f64>,
    pub stationarity: Option<f64>,
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    MaxEpochs,
    MaxIters,
}

/// Output of [`Solver::run`].
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub model: FactorModel,
    pub trace: Vec<TraceRecord>,
    pub stop: StopReason,
    /// Iteration at which a mixed schedule switched to Adagrad.
    pub switched_at: Option<usize>,
}

#[derive(Debug, Clone)]
enum Phase {
    Scalar,
    Adagrad(AdagradState),
    /// Jensen scalings; a mixed schedule also feeds the Adagrad accumulator
    /// so that the switch picks up the whole gradient history.
    Jensen(Option<AdagradState>),
}

/// Default starting point: entries `U(0.1, 1.1)`, or for simplex-constrained
/// modes `U(0, 1)` with columns normalized to sum to one.
pub fn default_init(shape: &[usize], config: &SolverConfig) -> Result<FactorModel> {
    config.validate(shape.len())?;
    let mut rng = stream_rng(config.seed, 3);
    let factors = shape
        .iter()
        .enumerate()
        .map(|(n, &rows)| {
            if config.mirror(n).constraint == Constraint::Simplex {
                let mut a = Array2::from_shape_simple_fn((rows, config.rank), || rng.random_range(f64::EPSILON..1.0));
                for mut col in a.axis_iter_mut(Axis(1)) {
                    let s = col.sum();
                    col /= s;
                }
                a
            } else {
                Array2::from_shape_simple_fn((rows, config.rank), || rng.random_range(0.1..1.1))
            }
        })
        .collect();
    FactorModel::new(factors)
}

fn validate_data(tensor: &Tensor, config: &SolverConfig) -> Result<()> {
    let mut bad = None;
    tensor.for_each_stored(|x| {
        if bad.is_none() && config.loss.check(x, 1.0).is_err() {
            bad = Some(x);
        }
    });
    match bad {
        Some(x) => arg(format!(
            "tensor value {x} is outside the data domain of loss `{}`",
            config.loss.kind
        )),
        None => Ok(()),
    }
}

/// Stateful solver; [`Solver::step`] runs one outer iteration.
pub struct Solver<'a> {
    tensor: &'a Tensor,
    config: SolverConfig,
    model: FactorModel,
    mirrors: Vec<MirrorMap>,
    sampler: Sampler,
    phase: Phase,
    iteration: usize,
    samples: u64,
    holdout: Vec<usize>,
    truth: Option<&'a FactorModel>,
    started: Instant,
    switched_at: Option<usize>,
}

impl<'a> Solver<'a> {
    pub fn new(tensor: &'a Tensor, config: SolverConfig, init: FactorModel) -> Result<Self> {
        let shape = tensor.shape().to_vec();
        config.validate(shape.len())?;
        if init.shape() != shape || init.rank() != config.rank {
            return arg(format!(
                "initial model {:?} rank {} does not match tensor {:?} rank {}",
                init.shape(),
                init.rank(),
                shape,
                config.rank
            ));
        }
        let mirrors: Vec<MirrorMap> = (0..shape.len()).map(|n| config.mirror(n)).collect();
        for (n, m) in mirrors.iter().enumerate() {
            if !m.is_feasible(init.factor(n).view(), 1e-9) {
                return arg(format!("initial factor {n} is not feasible for mirror map `{m}`"));
            }
        }
        validate_data(tensor, &config)?;
        let batch = config.batch();
        if let Some(n) = (0..shape.len()).find(|&n| batch > num_fibers(&shape, n)) {
            return arg(format!(
                "batch of {batch} fibers exceeds the {} fibers of mode {n}",
                num_fibers(&shape, n)
            ));
        }
        let phase = match config.schedule {
            ScheduleSpec::Adagrad { b } => Phase::Adagrad(AdagradState::new(&shape, config.rank, b)?),
            ScheduleSpec::Jensen => Phase::Jensen(None),
            ScheduleSpec::Mixed { b, .. } => Phase::Jensen(Some(AdagradState::new(&shape, config.rank, b)?)),
            _ => Phase::Scalar,
        };
        let j0 = num_fibers(&shape, 0);
        let held = ((config.holdout_frac * j0 as f64).ceil() as usize).clamp(1, j0);
        let holdout = Sampler::new(stream_rng(config.seed, 2).random()).sample_fibers(j0, held)?;
        Ok(Self {
            tensor,
            sampler: Sampler::new(config.seed),
            config,
            model: init,
            mirrors,
            phase,
            iteration: 0,
            samples: 0,
            holdout,
            truth: None,
            started: Instant::now(),
            switched_at: None,
        })
    }

    /// Records factor MSE against `truth` in the trace.
    pub fn with_truth(mut self, truth: &'a FactorModel) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn model(&self) -> &FactorModel {
        &self.model
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// The mirror map each mode currently uses.
    pub fn mirrors(&self) -> &[MirrorMap] {
        &self.mirrors
    }

    /// Entries consumed so far divided by `|I|`.
    pub fn epochs(&self) -> f64 {
        self.samples as f64 / self.tensor.len() as f64
    }

    /// One outer iteration: sample a block and fibers, then take
    /// `inner_iters` mirror steps on that block. Returns the mode updated.
    pub fn step(&mut self) -> Result<usize> {
        let t = self.iteration;
        let n = self.sampler.sample_block(self.model.ndim())?;
        let wrap = |e: Error| Error::Iteration {
            iteration: t,
            mode: n,
            source: Box::new(e),
        };
        let shape = self.tensor.shape();
        let fibers = self.sampler.sample_fibers(num_fibers(shape, n), self.config.batch())?;
        let x = extract_fibers(self.tensor, n, &fibers)?;
        let h = khatri_rao_rows(&self.model, n, &fibers)?;
        let mirror = self.mirrors[n];
        let mut a = self.model.factor(n).clone();
        for _ in 0..self.config.inner_iters {
            let g = sampled_gradient(&self.config.loss, x.view(), h.view(), a.view()).map_err(wrap)?;
            let mut gamma = match &mut self.phase {
                Phase::Adagrad(state) => state.gamma_with_current(n, g.view())?,
                Phase::Jensen(history) => {
                    if let Some(state) = history {
                        state.accumulate(n, g.view())?;
                    }
                    jensen_gamma(&self.config.loss, x.view(), h.view(), a.view(), self.config.gamma_min)
                        .map_err(wrap)?
                }
                Phase::Scalar => {
                    let eta = self.config.schedule.eta(t).expect("scalar schedule");
                    Array2::from_elem(a.dim(), 1.0 / eta)
                }
            };
            // Steps that leave the domain or overflow are rejected and
            // retried with Γ doubled.
            let mut retries = 0;
            a = loop {
                let rejected = match mirror.md_update(a.view(), g.view(), gamma.view()) {
                    Ok(next) => match next.iter().find(|v| !v.is_finite()) {
                        None => break next,
                        Some(v) => Error::NonFinite(format!("factor entry {v} after the mirror step")),
                    },
                    Err(e @ Error::DomainExit { .. }) => e,
                    Err(e) => return Err(wrap(e)),
                };
                if retries == self.config.max_retries {
                    return Err(wrap(rejected));
                }
                retries += 1;
                gamma *= 2.0;
            };
        }
        self.model.set_factor(n, a)?;
        self.iteration += 1;
        self.samples += (fibers.len() * shape[n]) as u64;
        Ok(n)
    }

    fn holdout_cost(&self) -> Result<f64> {
        objective_cost(self.tensor, &self.model, &self.config.loss, Some((0, &self.holdout)))
    }

    /// Tracked cost: the full objective when the tensor is small enough and
    /// `full` is requested, otherwise the held-out estimate.
    fn cost(&self, full: bool) -> Result<(f64, bool)> {
        let use_full = full && self.tensor.len() <= self.config.full_cost_limit;
        let c = if use_full {
            objective_cost(self.tensor, &self.model, &self.config.loss, None)?
        } else {
            self.holdout_cost()?
        };
        if !c.is_finite() {
            return Err(Error::NonFinite(format!("cost {c} at iteration {}", self.iteration)));
        }
        Ok((c, use_full))
    }

    fn record(&self, full: bool) -> Result<TraceRecord> {
        let (cost, full_cost) = self.cost(full)?;
        let mse = self.truth.map(|t| factor_mse(&self.model, t)).transpose()?;
        let stationarity = match &self.config.stationarity {
            Some(opts) => {
                Some(stationarity_measure(self.tensor, &self.model, &self.config.loss, &self.mirrors, opts)?.measure)
            }
            None => None,
        };
        Ok(TraceRecord {
            iter: self.iteration,
            samples: self.samples,
            seconds: self.started.elapsed().as_secs_f64(),
            cost,
            full_cost,
            mse,
            stationarity,
        })
    }

    fn switch_to_adagrad(&mut self) -> Result<()> {
        let Phase::Jensen(Some(state)) = &self.phase else {
            return arg("only a mixed schedule can switch to Adagrad");
        };
        self.phase = Phase::Adagrad(state.clone());
        for m in &mut self.mirrors {
            *m = MirrorMap::new(Generator::Quadratic, m.constraint)?;
        }
        self.switched_at = Some(self.iteration);
        log::info!("mixed schedule: switched to Adagrad at iteration {}", self.iteration);
        Ok(())
    }

    /// Runs to completion, calling `on_record` with each trace row as it is
    /// produced.
    pub fn run_with(mut self, mut on_record: impl FnMut(&TraceRecord) -> Result<()>) -> Result<SolveResult> {
        self.started = Instant::now();
        let total = self.tensor.len() as u64;
        let max_samples = total.saturating_mul(self.config.max_epochs as u64);
        let mut trace = Vec::new();
        let mut emit = |rec: TraceRecord, trace: &mut Vec<TraceRecord>| -> Result<()> {
            on_record(&rec)?;
            trace.push(rec);
            Ok(())
        };
        let first = self.record(true)?;
        let mut prev_epoch_cost = first.cost;
        emit(first, &mut trace)?;
        let mut epoch = 0u64;
        let stop = loop {
            if self.samples >= max_samples {
                break StopReason::MaxEpochs;
            }
            if self.config.max_iters.is_some_and(|m| self.iteration >= m) {
                break StopReason::MaxIters;
            }
            self.step()?;
            let boundary = self.samples / total > epoch;
            let periodic = self
                .config
                .eval_every
                .is_some_and(|k| k > 0 && self.iteration.is_multiple_of(k));
            if !boundary && !periodic {
                continue;
            }
            let rec = self.record(boundary)?;
            let cost = rec.cost;
            emit(rec, &mut trace)?;
            if !boundary {
                continue;
            }
            epoch = self.samples / total;
            let change = (cost - prev_epoch_cost).abs();
            if let (ScheduleSpec::Mixed { switch_tol, .. }, Phase::Jensen(_)) = (self.config.schedule, &self.phase) {
                if change / prev_epoch_cost.abs().max(1.0) < switch_tol {
                    self.switch_to_adagrad()?;
                }
            }
            let converged = change <= self.config.stop_tol * prev_epoch_cost.abs();
            prev_epoch_cost = cost;
            if converged {
                break StopReason::Converged;
            }
        };
        if trace.last().map(|r| r.iter) != Some(self.iteration) {
            let rec = self.record(true)?;
            emit(rec, &mut trace)?;
        }
        Ok(SolveResult {
            model: self.model,
            trace,
            stop,
            switched_at: self.switched_at,
        })
    }

    pub fn run(self) -> Result<SolveResult> {
        self.run_with(|_| Ok(()))
    }
}

/// Runs the solver from `init` to completion.
pub fn smartcpd(tensor: &Tensor, config: SolverConfig, init: FactorModel) -> Result<SolveResult> {
    Solver::new(tensor, config, init)?.run()
}

/// The mirror map the schedule starts with for `loss`: the Jensen generator
/// for Jensen-based schedules, otherwise `fallback`.
pub fn starting_generator(config: &SolverConfig, fallback: Generator) -> Result<Generator> {
    match config.schedule {
        ScheduleSpec::Jensen | ScheduleSpec::Mixed { .. } => jensen_generator(&config.loss),
        _ => Ok(fallback),
    }
}
