//! Stochastic-vs-fluid deviation sweeps and fluid relaxation checks.
//!
//! Deviations are evaluated on the union of the trace arrival times and the
//! solver nodes inside the window. Between those points `A` is constant and
//! `|a'| <= 1`, so the continuum supremum exceeds the reported one by at most
//! `2 * max(1/lambda, dt)`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::{self, RescaledTrace};
use crate::fluid::{DdeInit, FluidSolution};
use crate::rng;
use crate::tangle::{self, ModelParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    /// `|A - a|`, free tips.
    A,
    /// `|B - b|`, all tips.
    B,
}

/// `sup |A(t) - a(t)|` (or `|B - b|`) over `[t0, t1]`.
pub fn sup_deviation(
    rt: &RescaledTrace,
    sol: &FluidSolution,
    t0: f64,
    t1: f64,
    component: Component,
) -> Result<f64> {
    rt.covers(t0, t1)?;
    if t0 < sol.t0() - 1e-12 || t1 > sol.t_end() + 1e-12 {
        return Err(Error::TimeOutOfRange {
            t: if t0 < sol.t0() { t0 } else { t1 },
            lo: sol.t0(),
            hi: sol.t_end(),
        });
    }
    let diff = |t: f64| -> Result<f64> {
        Ok(match component {
            Component::A => (rt.a_at(t)? - sol.a_at(t)?).abs(),
            Component::B => (rt.b_at(t)? - sol.b_at(t)?).abs(),
        })
    };
    let mut worst = 0.0f64;
    for i in 0..rt.len() {
        let t = rt.t(i);
        if t < t0 || t > t1 {
            continue;
        }
        worst = worst.max(diff(t)?);
    }
    let first = sol.node_at_or_before(t0);
    for k in first..sol.len() {
        let t = sol.t(k);
        if t > t1 {
            break;
        }
        if t >= t0 {
            worst = worst.max(diff(t)?);
        }
    }
    Ok(worst)
}

/// One replica of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationRecord {
    pub lambda: f64,
    pub replica: usize,
    pub seed: u64,
    pub tries: usize,
    #[serde(rename = "sup_dev_A")]
    pub sup_dev_a: f64,
    #[serde(rename = "sup_dev_B")]
    pub sup_dev_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub lambda: f64,
    #[serde(rename = "median_A")]
    pub median_a: f64,
    #[serde(rename = "q75_A")]
    pub q75_a: f64,
    pub n_ok: usize,
    pub n_skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedReplica {
    pub lambda: f64,
    pub replica: usize,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    /// Ordered by (lambda index, replica).
    pub records: Vec<DeviationRecord>,
    pub summaries: Vec<SweepSummary>,
    pub skipped: Vec<SkippedReplica>,
}

impl SweepReport {
    /// Log-log slope of the per-lambda medians, when at least two lambdas
    /// have a positive median.
    pub fn slope(&self) -> Result<f64> {
        let pts: Vec<(f64, f64)> = self
            .summaries
            .iter()
            .filter(|s| s.n_ok > 0)
            .map(|s| (s.lambda, s.median_a))
            .collect();
        fit_slope(&pts)
    }

    pub fn medians_strictly_decreasing(&self) -> bool {
        self.summaries
            .windows(2)
            .all(|w| w[1].median_a < w[0].median_a)
    }

    /// Header `lambda,replica,seed,tries,sup_dev_A,sup_dev_B`.
    pub fn write_sweep_csv<W: Write>(&self, out: W) -> Result<()> {
        write_records(out, &self.records)
    }

    /// Header `lambda,median_A,q75_A,n_ok,n_skipped`.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        write_records(out, &self.summaries)
    }
}

pub(crate) fn write_records<W: Write, T: Serialize>(out: W, records: &[T]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
    pub t_end: f64,
    pub replicas: usize,
    pub base_seed: u64,
    pub max_tries: usize,
}

/// Seed of replica `r` at the `li`-th arrival rate.
pub fn replica_seed(base_seed: u64, lambda_index: usize, replica: usize) -> u64 {
    rng::stream_seed(base_seed, rng::replica_stream_id(lambda_index, replica))
}

/// Runs one replica: couple, simulate to `ceil(lambda T)`, rescale, measure.
pub fn run_replica(
    init: &DdeInit,
    lambda: f64,
    t_end: f64,
    seed: u64,
    max_tries: usize,
) -> Result<(usize, RescaledTrace)> {
    let h = init.h();
    let params = ModelParams::new(lambda, h)?;
    let mut stream = rng::from_seed(seed);
    let coupled = coupling::sample_in_f(init, lambda, &mut stream, max_tries)?;
    let last_n = (lambda * t_end - 1e-9).ceil() as u64;
    let steps = last_n.saturating_sub(params.m() as u64);
    let trace = tangle::run(&params, &coupled.init, steps, &mut stream)?;
    Ok((coupled.tries, coupling::rescale(&trace)))
}

/// Convergence sweep: for each arrival rate and replica, the sup-norm
/// deviation of the rescaled process from the shared fluid solution.
///
/// Replicas run on the current rayon pool; results are folded in
/// `(lambda, replica)` order so the report depends only on the inputs.
pub fn lambda_sweep(init: &DdeInit, sol: &FluidSolution, cfg: &SweepConfig) -> Result<SweepReport> {
    let h = init.h();
    if cfg.t_end < 2.0 * h {
        return Err(Error::InvalidParam(format!("T = {} < 2h", cfg.t_end)));
    }
    if sol.t_end() < cfg.t_end - 1e-12 {
        return Err(Error::InvalidParam(format!(
            "fluid solution ends at {} before T = {}",
            sol.t_end(),
            cfg.t_end
        )));
    }
    for &l in &cfg.lambdas {
        tangle::delay_steps(l, h)?;
    }

    let jobs: Vec<(usize, usize)> = (0..cfg.lambdas.len())
        .flat_map(|li| (0..cfg.replicas).map(move |r| (li, r)))
        .collect();

    let outcomes: Vec<Result<std::result::Result<DeviationRecord, SkippedReplica>>> = jobs
        .par_iter()
        .map(|&(li, r)| {
            let lambda = cfg.lambdas[li];
            let seed = replica_seed(cfg.base_seed, li, r);
            match run_replica(init, lambda, cfg.t_end, seed, cfg.max_tries) {
                Ok((tries, rt)) => {
                    let sup_dev_a = sup_deviation(&rt, sol, h, cfg.t_end, Component::A)?;
                    let sup_dev_b = sup_deviation(&rt, sol, 2.0 * h, cfg.t_end, Component::B)?;
                    Ok(Ok(DeviationRecord {
                        lambda,
                        replica: r,
                        seed,
                        tries,
                        sup_dev_a,
                        sup_dev_b,
                    }))
                }
                Err(e @ Error::SamplingExhausted { .. }) => Ok(Err(SkippedReplica {
                    lambda,
                    replica: r,
                    seed,
                    reason: e.to_string(),
                })),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o? {
            Ok(rec) => records.push(rec),
            Err(skip) => skipped.push(skip),
        }
    }

    let summaries = cfg
        .lambdas
        .iter()
        .map(|&lambda| {
            let mut devs: Vec<f64> = records
                .iter()
                .filter(|r| r.lambda == lambda)
                .map(|r| r.sup_dev_a)
                .collect();
            devs.sort_by(f64::total_cmp);
            SweepSummary {
                lambda,
                median_a: quantile_sorted(&devs, 0.5),
                q75_a: quantile_sorted(&devs, 0.75),
                n_ok: devs.len(),
                n_skipped: skipped.iter().filter(|s| s.lambda == lambda).count(),
            }
        })
        .collect();

    Ok(SweepReport {
        records,
        summaries,
        skipped,
    })
}

/// Linear-interpolation quantile of sorted data; NaN when empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Ordinary least squares slope of `log y` against `log x`.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<f64> {
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 2 {
        return Err(Error::DegenerateFit("need at least two distinct x values".into()));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::DegenerateFit(
            "all points need positive x and y (zero median?)".into(),
        ));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    Ok(ols_slope(&logs))
}

fn ols_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Constants of the exponential relaxation bound
/// `|a(t) - h| <= C1 kappa(C1/2)^{-3/2} exp(-mu t)`, `t >= 4h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theorem2Constants {
    pub h: f64,
    /// `sup_{h <= s <= 2h} |a(s) - h|`
    pub c1: f64,
    /// `kappa(C1 / 2)`
    pub kappa: f64,
    /// `-log(kappa) / (2h)`
    pub mu: f64,
}

impl Theorem2Constants {
    pub fn bound(&self, t: f64) -> f64 {
        self.c1 * self.kappa.powf(-1.5) * (-self.mu * t).exp()
    }
}

/// `kappa(u) = max(3/4, exp(-h / (3 (u + h))))`.
pub fn kappa(u: f64, h: f64) -> f64 {
    f64::max(0.75, (-h / (3.0 * (u + h))).exp())
}

pub fn theorem2_constants(init: &DdeInit, sol: &FluidSolution) -> Result<Theorem2Constants> {
    let h = init.h();
    if sol.t_end() < 2.0 * h - 1e-12 {
        return Err(Error::InvalidParam("solution does not cover [h, 2h]".into()));
    }
    let c1 = sol.a_vals()[..=sol.steps_per_h()]
        .iter()
        .map(|a| (a - h).abs())
        .fold(0.0, f64::max);
    Ok(constants_from_c1(c1, h))
}

pub fn constants_from_c1(c1: f64, h: f64) -> Theorem2Constants {
    let kappa = kappa(c1 / 2.0, h);
    Theorem2Constants {
        h,
        c1,
        kappa,
        mu: -kappa.ln() / (2.0 * h),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayRow {
    pub t: f64,
    pub abs_a_minus_h: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub constants: Theorem2Constants,
    /// Nodes in `[4h, T]`.
    pub rows: Vec<DecayRow>,
    /// Nodes in `[4h, T - h]` where `|a - h| > bound + tol`.
    pub violations: usize,
    /// `max(|a - h| - bound)` over `[4h, T - h]`; negative when the bound holds.
    pub worst_margin: f64,
    /// `max ||b(t + h) - 2h| - |a(t) - h||` over the same nodes.
    pub identity_residual: f64,
    /// `-slope` of `log |a - h|` over nodes in `[4h, T]` with `|a - h| > 1e-12`.
    pub fitted_rate: Option<f64>,
    pub tol: f64,
}

impl DecayReport {
    pub fn bound_holds(&self) -> bool {
        self.violations == 0
    }

    pub fn rate_ok(&self) -> bool {
        match self.fitted_rate {
            Some(r) => r >= self.constants.mu - 0.01 / self.constants.h,
            None => true,
        }
    }

    /// Header `t,abs_a_minus_h,bound`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_records(out, &self.rows)
    }
}

pub const DECAY_FIT_FLOOR: f64 = 1e-12;

pub fn decay_check(init: &DdeInit, sol: &FluidSolution, tol: f64) -> Result<DecayReport> {
    let h = init.h();
    let t_end = sol.t_end();
    if t_end < 5.0 * h - 1e-9 {
        return Err(Error::InvalidParam(format!(
            "decay check needs T >= 5h, solution ends at {t_end}"
        )));
    }
    let constants = theorem2_constants(init, sol)?;
    let n = sol.steps_per_h();
    let start = 3 * n; // t = 4h
    let mut rows = Vec::new();
    let mut violations = 0;
    let mut worst_margin = f64::NEG_INFINITY;
    let mut identity_residual = 0.0f64;
    let mut fit_pts = Vec::new();
    for k in start..sol.len() {
        let t = sol.t(k);
        let dev = (sol.a_vals()[k] - h).abs();
        let bound = constants.bound(t);
        rows.push(DecayRow {
            t,
            abs_a_minus_h: dev,
            bound,
        });
        if dev > DECAY_FIT_FLOOR {
            fit_pts.push((t, dev.ln()));
        }
        if k + n < sol.len() {
            let margin = dev - bound;
            worst_margin = worst_margin.max(margin);
            if margin > tol {
                violations += 1;
            }
            let b_dev = (sol.b_vals()[k + n] - 2.0 * h).abs();
            identity_residual = identity_residual.max((b_dev - dev).abs());
        }
    }
    let fitted_rate = (fit_pts.len() >= 2).then(|| -ols_slope(&fit_pts));
    Ok(DecayReport {
        constants,
        rows,
        violations,
        worst_margin,
        identity_residual,
        fitted_rate,
        tol,
    })
}
