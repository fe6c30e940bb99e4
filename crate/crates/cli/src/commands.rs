use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};

use smartcpd::bregman::{Constraint, Generator, MirrorMap};
use smartcpd::io::{read_factors, read_json, read_tns_file, write_factors, write_json, write_tns_file};
use smartcpd::losses::LossSpec;
use smartcpd::metrics::{factor_mse, objective_cost};
use smartcpd::solver::{default_init, stationarity_measure, Solver, SolverConfig, StationarityOptions};
use smartcpd::surrogate::{surrogate_grid as grid_rows, GridSpec};
use smartcpd::synthdata::{gen_factors, observe, realized_snr_db, GeneratorSpec, Observation};
use smartcpd::tensor::{FactorModel, Tensor};

use crate::args::{EvalArgs, FitArgs, GridArgs, SynthArgs};
use crate::{Classify, Failure};

pub const TRACE_HEADER: &str = "iter,samples,seconds,cost,mse,stationarity";

/// Everything needed to repeat a `fit` run.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    tensor: PathBuf,
    init: PathBuf,
    truth: Option<PathBuf>,
    config: SolverConfig,
}

#[derive(Debug, Serialize)]
struct SynthManifest {
    spec: GeneratorSpec,
    tensor: &'static str,
    truth: &'static str,
    /// `10 log10(‖M‖² / ‖X − M‖²)` of the draw, for noisy observations.
    realized_snr_db: Option<f64>,
}

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow!("{msg}"))
}

fn absolute(p: &Path) -> Result<PathBuf, Failure> {
    fs::canonicalize(p)
        .with_context(|| format!("cannot resolve {}", p.display()))
        .usage()
}

fn load_tensor(p: &Path) -> Result<Tensor, Failure> {
    read_tns_file(p)
        .with_context(|| format!("cannot read tensor {}", p.display()))
        .map(Tensor::from)
        .usage()
}

fn load_factors(p: &Path) -> Result<FactorModel, Failure> {
    read_factors(p)
        .with_context(|| format!("cannot read factors from {}", p.display()))
        .usage()
}

pub fn synth(a: SynthArgs) -> Result<(), Failure> {
    let spec = GeneratorSpec {
        shape: a.shape,
        rank: a.rank,
        a_max: a.a_max,
        heavy_frac: a.heavy_frac,
        heavy_scale: a.heavy_scale,
        observation: Observation::parse(&a.obs, a.snr_db).usage()?,
        seed: a.seed,
        simplex: a.simplex,
    };
    spec.validate().usage()?;
    let truth = gen_factors(&spec).runtime()?;
    let x = observe(&truth, &spec).runtime()?;
    let realized_snr_db = match spec.observation {
        Observation::Gamma { .. } | Observation::Gaussian { .. } => {
            Some(realized_snr_db(&truth.to_dense(), &x).runtime()?)
        }
        _ => None,
    };

    fs::create_dir_all(&a.out)
        .with_context(|| format!("cannot create {}", a.out.display()))
        .usage()?;
    let manifest = SynthManifest {
        spec,
        tensor: "tensor.tns",
        truth: "truth",
        realized_snr_db,
    };
    write_tns_file(&x.into(), a.out.join(manifest.tensor))
        .context("cannot write the tensor")
        .usage()?;
    write_factors(&truth, a.out.join(manifest.truth))
        .context("cannot write the factors")
        .usage()?;
    write_json(&manifest, a.out.join("manifest.json"))
        .context("cannot write the manifest")
        .usage()?;
    Ok(())
}

/// One map per mode from comma-separated generator and constraint lists.
fn mirror_maps(mirror: &str, constraint: &str) -> Result<Vec<MirrorMap>, Failure> {
    let gens: Vec<Generator> = mirror.split(',').map(str::parse).collect::<Result<_, _>>().usage()?;
    let cons: Vec<Constraint> = constraint
        .split(',')
        .map(str::parse)
        .collect::<Result<_, _>>()
        .usage()?;
    let n = gens.len().max(cons.len());
    if (gens.len() != 1 && gens.len() != n) || (cons.len() != 1 && cons.len() != n) {
        return Err(usage(format!(
            "{} mirror maps and {} constraints cannot be paired",
            gens.len(),
            cons.len()
        )));
    }
    (0..n)
        .map(|k| {
            let g = gens[if gens.len() == 1 { 0 } else { k }];
            let c = cons[if cons.len() == 1 { 0 } else { k }];
            MirrorMap::new(g, c).usage()
        })
        .collect()
}

fn config_from_flags(a: &FitArgs) -> Result<SolverConfig, Failure> {
    let rank = a.rank.ok_or_else(|| usage("--rank is required"))?;
    let loss: LossSpec = a.loss.parse().usage()?;
    let mirrors = mirror_maps(&a.mirror, &a.constraint)?;
    let mut config = SolverConfig::new(rank, loss, mirrors[0], a.schedule.parse().usage()?);
    config.mirrors = mirrors;
    config.batch_fibers = match a.batch_fibers.as_str() {
        "auto" => None,
        s => match s.parse::<usize>() {
            Ok(b) if b > 0 => Some(b),
            _ => {
                return Err(usage(format!(
                    "--batch-fibers must be `auto` or a positive integer, got `{s}`"
                )))
            }
        },
    };
    config.inner_iters = a.inner_iters;
    config.max_epochs = a.max_epochs;
    config.max_iters = a.max_iters;
    config.stop_tol = a.stop_tol;
    config.seed = a.seed;
    config.eval_every = a.eval_every;
    config.max_retries = a.max_retries;
    if a.stationarity {
        config.stationarity = Some(StationarityOptions::default());
    }
    Ok(config)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn fit(a: FitArgs) -> Result<(), Failure> {
    let (manifest, tensor, init) = match &a.manifest {
        Some(p) => {
            let m: RunManifest = read_json(p)
                .with_context(|| format!("cannot read manifest {}", p.display()))
                .usage()?;
            let tensor = load_tensor(&m.tensor)?;
            let init = load_factors(&m.init)?;
            (m, tensor, init)
        }
        None => {
            let path = a.tensor.as_deref().ok_or_else(|| usage("--tensor is required"))?;
            let tensor = load_tensor(path)?;
            let config = config_from_flags(&a)?;
            let init = match &a.init {
                Some(p) => load_factors(p)?,
                None => default_init(tensor.shape(), &config).usage()?,
            };
            let init_dir = a.out.join("init");
            write_factors(&init, &init_dir)
                .context("cannot write the starting factors")
                .usage()?;
            let m = RunManifest {
                tensor: absolute(path)?,
                init: absolute(&init_dir)?,
                truth: a.truth.as_deref().map(absolute).transpose()?,
                config,
            };
            (m, tensor, init)
        }
    };
    let truth = manifest.truth.as_deref().map(load_factors).transpose()?;

    let solver = Solver::new(&tensor, manifest.config.clone(), init).usage()?;
    let solver = match &truth {
        Some(t) => solver.with_truth(t),
        None => solver,
    };
    fs::create_dir_all(&a.out)
        .with_context(|| format!("cannot create {}", a.out.display()))
        .usage()?;
    write_json(&manifest, a.out.join("run.json"))
        .context("cannot write run.json")
        .usage()?;

    let trace_path = a.out.join("trace.csv");
    let mut trace = BufWriter::new(File::create(&trace_path).context("cannot create trace.csv").usage()?);
    writeln!(trace, "{TRACE_HEADER}").and_then(|()| trace.flush()).usage()?;
    let result = solver
        .run_with(|r| {
            writeln!(
                trace,
                "{},{},{},{},{},{}",
                r.iter,
                r.samples,
                r.seconds,
                r.cost,
                fmt_opt(r.mse),
                fmt_opt(r.stationarity)
            )?;
            trace.flush()?;
            Ok(())
        })
        .runtime()?;

    write_factors(&result.model, a.out.join("factors"))
        .context("cannot write the factors")
        .runtime()?;
    let last = result.trace.last().expect("a run records at least one row");
    let mut summary = format!(
        "stop: {:?}, iterations: {}, cost: {}",
        result.stop, last.iter, last.cost
    );
    if let Some(m) = last.mse {
        summary += &format!(", mse: {m}");
    }
    if let Some(at) = result.switched_at {
        summary += &format!(", switched to Adagrad at iteration {at}");
    }
    println!("{summary}");
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    cost: f64,
    mse: Option<f64>,
    stationarity: Option<f64>,
}

pub fn eval(a: EvalArgs) -> Result<(), Failure> {
    let loss: LossSpec = a.loss.parse().usage()?;
    let tensor = load_tensor(&a.tensor)?;
    let model = load_factors(&a.factors)?;
    let truth = a.truth.as_deref().map(load_factors).transpose()?;
    let mirrors = a.mirror.as_deref().map(|m| mirror_maps(m, &a.constraint)).transpose()?;

    let cost = objective_cost(&tensor, &model, &loss, None).usage()?;
    let mse = truth.as_ref().map(|t| factor_mse(&model, t)).transpose().usage()?;
    let stationarity = match mirrors {
        Some(mut m) => {
            if m.len() == 1 {
                m = vec![m[0]; model.ndim()];
            }
            let report = stationarity_measure(&tensor, &model, &loss, &m, &StationarityOptions::default()).runtime()?;
            Some(report.measure)
        }
        None => None,
    };
    let report = EvalReport {
        cost,
        mse,
        stationarity,
    };
    println!("{}", serde_json::to_string_pretty(&report).runtime()?);
    Ok(())
}

pub fn surrogate_grid(a: GridArgs) -> Result<(), Failure> {
    let pair = |v: &[f64], name: &str| -> Result<[f64; 2], Failure> {
        v.try_into()
            .map_err(|_| usage(format!("--{name} takes two comma-separated values")))
    };
    let spec = GridSpec {
        x: a.x,
        h: pair(&a.h, "h")?,
        anchor: pair(&a.anchor, "anchor")?,
        lo: a.lo,
        hi: a.hi,
        step: a.step,
    };
    let rows = grid_rows(&spec).usage()?;
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p)
                .with_context(|| format!("cannot create {}", p.display()))
                .usage()?,
        )),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "phi,a1,a2,loss,surrogate")?;
        for r in &rows {
            writeln!(out, "{},{},{},{},{}", r.phi, r.a1, r.a2, r.loss, r.surrogate)?;
        }
        out.flush()
    };
    write().runtime()
}
