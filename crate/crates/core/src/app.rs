//! Batch runs driven by a [`RunConfig`]: each mode writes its CSVs and a
//! `manifest.json` into the output directory.
//!
//! Worker count for replica fan-out comes from `TANGLE_WORKERS` (default: one
//! per core). Outputs do not depend on it.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use toml::{Table, Value};

use crate::analysis::{self, SweepConfig};
use crate::config::{self, ConfigErrors, ConfigIssue, Mode, RunConfig};
use crate::coupling::{self, CouplingRecord};
use crate::fluid;
use crate::tangle::{self, ModelParams};
use crate::{Error, Result};

pub const WORKERS_ENV: &str = "TANGLE_WORKERS";

/// Tolerances for the structural checks of `fluid` runs.
pub const LEMMA1_TOL: f64 = 1e-6;
pub const LEMMA1_TOL_QUAD: f64 = 1e-4;
/// Slack on the relaxation bound used by `decay` runs.
pub const DECAY_TOL: f64 = 1e-9;
/// Accepted range of the log-log slope of sweep medians.
pub const SLOPE_BAND: (f64, f64) = (-0.75, -0.30);

/// Command-line overrides; `None` keeps the config value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub lambda: Option<Vec<f64>>,
    pub h: Option<f64>,
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
    pub replicas: Option<u64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Merges an optional config document with the subcommand's mode and the
/// flag overrides, then validates the result.
pub fn load_config(
    mode: Mode,
    text: Option<&str>,
    ov: &Overrides,
) -> std::result::Result<RunConfig, ConfigErrors> {
    let mut table: Table = match text {
        Some(t) => t.parse().map_err(|e: toml::de::Error| {
            ConfigErrors(vec![ConfigIssue {
                key: "<document>".into(),
                message: e.message().to_string(),
            }])
        })?,
        None => Table::new(),
    };
    if let Some(Value::String(existing)) = table.get("mode") {
        if existing != mode.as_str() {
            return Err(ConfigErrors(vec![ConfigIssue {
                key: "mode".into(),
                message: format!("config says {existing:?} but subcommand is {mode}"),
            }]));
        }
    }
    table.insert("mode".into(), Value::String(mode.as_str().into()));
    if let Some(ls) = &ov.lambda {
        let arr = ls.iter().map(|&l| Value::Float(l)).collect();
        table.insert("lambda".into(), Value::Array(arr));
    }
    for (key, val) in [("h", ov.h), ("T", ov.t_end), ("dt", ov.dt)] {
        if let Some(v) = val {
            table.insert(key.into(), Value::Float(v));
        }
    }
    for (key, val) in [("replicas", ov.replicas), ("base_seed", ov.seed)] {
        if let Some(v) = val {
            let v = i64::try_from(v).map_err(|_| {
                ConfigErrors(vec![ConfigIssue {
                    key: key.into(),
                    message: format!("{v} does not fit a signed 64-bit integer"),
                }])
            })?;
            table.insert(key.into(), Value::Integer(v));
        }
    }
    if let Some(out) = &ov.out {
        table.insert("out".into(), Value::String(out.display().to_string()));
    }
    config::from_table(&table)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub mode: Mode,
    pub base_seed: u64,
    pub config: RunConfig,
    pub files: Vec<String>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub success: bool,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
}

impl RunOutcome {
    pub fn success(&self) -> bool {
        self.manifest.success
    }

    pub fn failed_checks(&self) -> Vec<&Check> {
        self.manifest.checks.iter().filter(|c| !c.passed).collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("output directory {0} exists and is not empty (use --force to overwrite)")]
    OutputExists(PathBuf),
    #[error("no output directory given (set `out` or pass --out)")]
    NoOutputDir,
    #[error(transparent)]
    Model(#[from] Error),
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Model(e.into())
    }
}

fn prepare_out_dir(cfg: &RunConfig, force: bool) -> std::result::Result<PathBuf, RunError> {
    let dir = cfg.out.clone().ok_or(RunError::NoOutputDir)?;
    if dir.exists() {
        let non_empty = fs::read_dir(&dir)?.next().is_some();
        if non_empty && !force {
            return Err(RunError::OutputExists(dir));
        }
    } else {
        fs::create_dir_all(&dir)?;
    }
    Ok(dir)
}

fn create(dir: &Path, name: &str, files: &mut Vec<String>) -> Result<BufWriter<File>> {
    files.push(name.to_string());
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Worker pool sized from `TANGLE_WORKERS`, if set.
fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParam(format!("{WORKERS_ENV}={v:?} is not a count")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidParam(format!("cannot start worker pool: {e}")))
}

/// Executes a validated config and writes its artifacts.
pub fn run(cfg: &RunConfig, force: bool) -> std::result::Result<RunOutcome, RunError> {
    let started = Instant::now();
    let dir = prepare_out_dir(cfg, force)?;
    let mut warnings = Vec::new();
    if cfg.a_h < cfg.h / 100.0 {
        let msg = format!(
            "a_h = {} is below h/100; convergence constants degrade as min(h, a_h) shrinks",
            cfg.a_h
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let mut files = Vec::new();
    let pool = worker_pool()?;
    let checks = pool.install(|| match cfg.mode {
        Mode::Simulate => run_simulate(cfg, &dir, &mut files),
        Mode::Fluid => run_fluid(cfg, &dir, &mut files),
        Mode::Sweep => run_sweep(cfg, &dir, &mut files),
        Mode::Decay => run_decay(cfg, &dir, &mut files),
    })?;
    let success = checks.iter().all(|c| c.passed);
    files.push("manifest.json".into());
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        mode: cfg.mode,
        base_seed: cfg.base_seed,
        config: cfg.clone(),
        files,
        checks,
        warnings,
        success,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    let f = BufWriter::new(File::create(dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(f, &manifest).map_err(std::io::Error::from)?;
    Ok(RunOutcome {
        out_dir: dir,
        manifest,
    })
}

fn lambda_label(lambda: f64) -> String {
    lambda.to_string().replace('.', "p")
}

fn run_simulate(cfg: &RunConfig, dir: &Path, files: &mut Vec<String>) -> Result<Vec<Check>> {
    let init = cfg.init();
    let jobs: Vec<(usize, usize)> = (0..cfg.lambdas.len())
        .flat_map(|li| (0..cfg.replicas).map(move |r| (li, r)))
        .collect();
    type Job = (CouplingRecord, Option<(tangle::Trace, Vec<String>)>);
    let results: Vec<Result<Job>> = jobs
        .par_iter()
        .map(|&(li, r)| {
            let lambda = cfg.lambdas[li];
            let params = ModelParams::new(lambda, cfg.h)?;
            let seed = analysis::replica_seed(cfg.base_seed, li, r);
            let mut stream = crate::rng::from_seed(seed);
            let xi_alpha = coupling::targets(&init, lambda)?.xi_alpha;
            match coupling::sample_in_f(&init, lambda, &mut stream, cfg.max_tries) {
                Ok(c) => {
                    let last_n = (lambda * cfg.t_end - 1e-9).ceil() as u64;
                    let steps = last_n.saturating_sub(params.m() as u64);
                    let trace = tangle::run(&params, &c.init, steps, &mut stream)?;
                    let violations = trace.invariant_violations();
                    Ok((
                        CouplingRecord {
                            lambda,
                            xi_alpha,
                            tries: c.tries,
                            accepted: true,
                            sup_dev_init: Some(c.sup_dev_init),
                        },
                        Some((trace, violations)),
                    ))
                }
                Err(Error::SamplingExhausted { tries }) => Ok((
                    CouplingRecord {
                        lambda,
                        xi_alpha,
                        tries,
                        accepted: false,
                        sup_dev_init: None,
                    },
                    None,
                )),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut rows = Vec::new();
    let mut violations = 0usize;
    let mut rejected = 0usize;
    for (&(li, r), res) in jobs.iter().zip(results) {
        let (rec, trace) = res?;
        if let Some((trace, v)) = trace {
            violations += v.len();
            let name = format!("trace_lambda{}_r{r:03}.csv", lambda_label(cfg.lambdas[li]));
            trace.write_csv(create(dir, &name, files)?)?;
        } else {
            rejected += 1;
        }
        rows.push(rec);
    }
    analysis::write_records(create(dir, "coupling.csv", files)?, &rows)?;
    Ok(vec![
        Check::new(
            "trace_invariants",
            violations == 0,
            format!("{violations} violations"),
        ),
        Check::new(
            "coupling_accepted",
            rejected == 0,
            format!("{rejected} replicas found no member of F within {} tries", cfg.max_tries),
        ),
    ])
}

fn run_fluid(cfg: &RunConfig, dir: &Path, files: &mut Vec<String>) -> Result<Vec<Check>> {
    let sol = fluid::solve(&cfg.init(), cfg.t_end, cfg.dt)?;
    sol.write_csv(create(dir, "fluid.csv", files)?)?;
    let rep = fluid::verify_lemma1(&sol, LEMMA1_TOL, LEMMA1_TOL_QUAD);
    Ok(vec![Check::new(
        "lemma1",
        rep.passed(),
        format!(
            "worst residuals {:?} (tol {LEMMA1_TOL}, quadrature tol {LEMMA1_TOL_QUAD})",
            rep.residuals
        ),
    )])
}

fn run_sweep(cfg: &RunConfig, dir: &Path, files: &mut Vec<String>) -> Result<Vec<Check>> {
    let init = cfg.init();
    let sol = fluid::solve(&init, cfg.t_end, cfg.dt)?;
    let report = analysis::lambda_sweep(
        &init,
        &sol,
        &SweepConfig {
            lambdas: cfg.lambdas.clone(),
            t_end: cfg.t_end,
            replicas: cfg.replicas,
            base_seed: cfg.base_seed,
            max_tries: cfg.max_tries,
        },
    )?;
    report.write_sweep_csv(create(dir, "sweep.csv", files)?)?;
    report.write_summary_csv(create(dir, "summary.csv", files)?)?;

    let skipped = report.skipped.len();
    let mut checks = vec![Check::new(
        "replicas_skipped",
        true,
        format!("{skipped} replicas skipped"),
    )];
    if cfg.lambdas.len() >= 2 {
        checks.push(Check::new(
            "medians_decreasing",
            report.medians_strictly_decreasing(),
            format!(
                "medians {:?}",
                report.summaries.iter().map(|s| s.median_a).collect::<Vec<_>>()
            ),
        ));
        let (lo, hi) = SLOPE_BAND;
        let check = match report.slope() {
            Ok(s) => Check::new("slope_band", (lo..=hi).contains(&s), format!("slope {s}")),
            Err(e) => Check::new("slope_band", false, e.to_string()),
        };
        checks.push(check);
    }
    Ok(checks)
}

fn run_decay(cfg: &RunConfig, dir: &Path, files: &mut Vec<String>) -> Result<Vec<Check>> {
    let init = cfg.init();
    let sol = fluid::solve(&init, cfg.t_end, cfg.dt)?;
    let rep = analysis::decay_check(&init, &sol, DECAY_TOL)?;
    rep.write_csv(create(dir, "decay.csv", files)?)?;
    let c = rep.constants;
    Ok(vec![
        Check::new(
            "decay_bound",
            rep.bound_holds(),
            format!(
                "C1 {} kappa {} mu {}; {} violations, worst margin {}",
                c.c1, c.kappa, c.mu, rep.violations, rep.worst_margin
            ),
        ),
        Check::new(
            "decay_rate",
            rep.rate_ok(),
            format!("fitted rate {:?} vs mu {}", rep.fitted_rate, c.mu),
        ),
    ])
}
