//! End-to-end acceptance suite. Runs every criterion, prints one line each and
//! exits non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use num_rational::Ratio;
use rand::Rng;

use tangle_fluid::analysis::{self, SweepConfig};
use tangle_fluid::app;
use tangle_fluid::config::parse_config;
use tangle_fluid::coupling;
use tangle_fluid::fluid::{self, DdeInit, FluidSolution};
use tangle_fluid::rng::{self, StreamRng};
use tangle_fluid::tangle::{self, DiscreteInit, ModelParams};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

const SUITE_SEED: u64 = 0x5EED_0001;
const SWEEP_SEED: u64 = 20240917;
const DELAYS: [usize; 5] = [1, 2, 4, 5, 10];

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn first(v: &[String]) -> String {
    v.first().map(|s| format!(" (first: {s})")).unwrap_or_default()
}

/// Random valid fluid initial condition with a_h in [h/4, 4h], u_i in [0, 2]
/// and K drawn from `DELAYS`.
fn random_init_with_h(rng: &mut StreamRng, h: f64) -> DdeInit {
    let k = DELAYS[rng.gen_range(0..DELAYS.len())];
    let a_h = rng.gen_range(0.25 * h..=4.0 * h);
    let u = (0..k).map(|_| rng.gen_range(0.0..=2.0)).collect();
    DdeInit::new(a_h, h, u).expect("valid random init")
}

fn random_init(rng: &mut StreamRng) -> DdeInit {
    let h = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
    random_init_with_h(rng, h)
}

fn suite(n: usize, seed: u64) -> Vec<DdeInit> {
    let mut rng = rng::from_seed(seed);
    (0..n).map(|_| random_init(&mut rng)).collect()
}

/// Enumerates all ordered tip pairs, `x` free and `w` pending, counting the
/// distinct free tips hit.
fn enumerate_counts(x: u64, w: u64) -> [u64; 3] {
    let l = x + w;
    let mut counts = [0u64; 3];
    for i in 0..l {
        for j in 0..l {
            let hit = (i < x) as usize + (j < x && j != i) as usize;
            counts[hit] += 1;
        }
    }
    counts
}

fn c1_kernel_oracle() -> Outcome {
    let mut cases = 0;
    for total in 1..=6u64 {
        for x in 0..=total {
            let w = total - x;
            let counts = enumerate_counts(x, w);
            let denom = total * total;
            let weights = tangle::u_weights(x, w).map_err(|e| e.to_string())?;
            let p = tangle::u_distribution(x, w).map_err(|e| e.to_string())?.as_array();
            for k in 0..3 {
                let want = Ratio::new(counts[k], denom);
                let got = Ratio::new(weights[k], denom);
                // Probabilities must be the correctly rounded rationals.
                let rounded = *want.numer() as f64 / *want.denom() as f64;
                if got != want || p[k] != rounded {
                    return Err(format!("mismatch at X={x}, W={w}, U={k}"));
                }
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} states match enumeration exactly"))
}

fn c2_closure_mean() -> Outcome {
    let mut rng = rng::from_seed(SUITE_SEED ^ 2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x: u64 = rng.gen_range(1..=1_000_000);
        let w: u64 = rng.gen_range(0..=1_000_000);
        let p = tangle::u_distribution(x, w).map_err(|e| e.to_string())?.as_array();
        let closure = (p[0] + p[1] + p[2] - 1.0).abs();
        let mean = tangle::expected_u(x, w).map_err(|e| e.to_string())?;
        let direct = p[1] + 2.0 * p[2];
        worst = worst.max(closure).max((mean - direct).abs() / mean);
    }
    ensure(worst <= 1e-12, format!("max relative error {worst:.3e}"))
}

fn c3_discrete_invariants() -> Outcome {
    let lambdas = [10.0, 100.0, 1000.0];
    let mut rng = rng::from_seed(SUITE_SEED ^ 3);
    let mut violations = Vec::new();
    for i in 0..100 {
        let lambda = lambdas[i % 3];
        let fluid_init = random_init_with_h(&mut rng, 1.0);
        let tg = coupling::targets(&fluid_init, lambda).map_err(|e| e.to_string())?;
        let v = coupling::sample_v(&tg, &mut rng);
        let seed = DiscreteInit::new(tg.xi_alpha, v).map_err(|e| e.to_string())?;
        let params = ModelParams::new(lambda, 1.0).map_err(|e| e.to_string())?;
        let m = params.m();
        let mut stream = rng::stream(SUITE_SEED, i as u64);
        let trace = tangle::run(&params, &seed, 10 * m as u64, &mut stream)
            .map_err(|e| e.to_string())?;
        violations.extend(trace.invariant_violations());
        for j in 0..=m {
            let want = tangle::l_from_init(j, &seed).map_err(|e| e.to_string())?;
            let got = trace.row((m + j) as u64).map(|r| r.l);
            if got != Some(want) {
                violations.push(format!("trace {i}: L_(m+{j}) = {got:?}, seed data give {want}"));
            }
        }
    }
    ensure(
        violations.is_empty(),
        format!("{} violations over 100 traces{}", violations.len(), first(&violations)),
    )
}

fn c4_fixed_point() -> Outcome {
    let mut worst_a = 0.0f64;
    let mut worst_b = 0.0f64;
    for h in [1.0, 2.5] {
        let init = DdeInit::fixed_point(h).map_err(|e| e.to_string())?;
        let sol = fluid::solve(&init, 20.0 * h, h / 100.0).map_err(|e| e.to_string())?;
        for (&a, &b) in sol.a_vals().iter().zip(sol.b_vals()) {
            worst_a = worst_a.max((a - h).abs());
            worst_b = worst_b.max((b - 2.0 * h).abs());
        }
    }
    ensure(
        worst_a <= 1e-8 && worst_b <= 1e-8,
        format!("sup|a-h| = {worst_a:.3e}, sup|b-2h| = {worst_b:.3e}"),
    )
}

fn c5_lemma1(inits: &[DdeInit]) -> Outcome {
    let mut worst = [0.0f64; 5];
    let mut failed = Vec::new();
    for (i, init) in inits.iter().enumerate() {
        let h = init.h();
        let sol = fluid::solve(init, 10.0 * h, h / 200.0).map_err(|e| e.to_string())?;
        let rep = fluid::verify_lemma1(&sol, 1e-6, 1e-4);
        for (w, r) in worst.iter_mut().zip(rep.residuals) {
            *w = w.max(r);
        }
        if !rep.passed() {
            failed.push(format!("init {i}: properties {:?}", rep.failed_properties()));
        }
    }
    ensure(
        failed.is_empty(),
        format!(
            "worst residuals [{}]{}",
            worst.map(|r| format!("{r:.2e}")).join(", "),
            first(&failed)
        ),
    )
}

fn node_error(coarse: &FluidSolution, reference: &FluidSolution) -> f64 {
    let stride = reference.steps_per_h() / coarse.steps_per_h();
    coarse
        .a_vals()
        .iter()
        .enumerate()
        .map(|(k, &a)| (a - reference.a_vals()[k * stride]).abs())
        .fold(0.0, f64::max)
}

fn c6_solver_order() -> Outcome {
    let mut rng = rng::from_seed(SUITE_SEED ^ 6);
    let mut ratios = Vec::new();
    for _ in 0..5 {
        // Far from equilibrium with alternating u, so the error sits well
        // above rounding.
        let h = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
        let k = DELAYS[rng.gen_range(0..DELAYS.len())];
        let a_h = if rng.gen_bool(0.5) {
            rng.gen_range(0.25 * h..=0.5 * h)
        } else {
            rng.gen_range(2.5 * h..=4.0 * h)
        };
        let u = (0..k).map(|i| if i % 2 == 0 { 2.0 } else { 0.0 }).collect();
        let init = DdeInit::new(a_h, h, u).map_err(|e| e.to_string())?;
        let t_end = 10.0 * h;
        let solve = |n| fluid::solve_with_steps(&init, t_end, n).map_err(|e| e.to_string());
        let reference = solve(1600)?;
        let e1 = node_error(&solve(100)?, &reference);
        let e2 = node_error(&solve(200)?, &reference);
        ratios.push(e1 / e2);
    }
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    ensure(min >= 4.0, format!("error ratios {ratios:.2?}"))
}

fn c7_bootstrap_oracle() -> Outcome {
    let inits = suite(10, SUITE_SEED ^ 7);
    let mut worst = 0.0f64;
    for init in &inits {
        let h = init.h();
        let sol = fluid::solve(init, 2.0 * h, h / 1000.0).map_err(|e| e.to_string())?;
        let n = sol.steps_per_h();
        for k in (0..=n).step_by(5) {
            let oracle = init.bootstrap_a_oracle(sol.t(k)).map_err(|e| e.to_string())?;
            worst = worst.max((sol.a_vals()[k] - oracle).abs());
        }
    }
    ensure(worst <= 1e-8, format!("max |a - oracle| = {worst:.3e} on [h, 2h]"))
}

fn c8_decay(inits: &[DdeInit]) -> Outcome {
    let mut failures = Vec::new();
    let mut worst_margin = f64::NEG_INFINITY;
    let mut min_excess = f64::INFINITY;
    for (i, init) in inits.iter().enumerate() {
        let h = init.h();
        let sol = fluid::solve(init, 40.0 * h, h / 200.0).map_err(|e| e.to_string())?;
        let rep = analysis::decay_check(init, &sol, 1e-9).map_err(|e| e.to_string())?;
        worst_margin = worst_margin.max(rep.worst_margin);
        if !rep.bound_holds() {
            failures.push(format!("init {i}: {} nodes above bound", rep.violations));
        }
        if rep.constants.c1 > 1e-6 {
            if let Some(r) = rep.fitted_rate {
                min_excess = min_excess.min((r - rep.constants.mu) * h);
            }
            if !rep.rate_ok() {
                failures.push(format!("init {i}: fitted rate {:?} < mu", rep.fitted_rate));
            }
        }
    }
    ensure(
        failures.is_empty(),
        format!(
            "worst margin {worst_margin:.3e}, min (rate - mu)*h {min_excess:.3}{}",
            first(&failures)
        ),
    )
}

fn c9_scaling() -> Outcome {
    let init = DdeInit::fixed_point(1.0).map_err(|e| e.to_string())?;
    let sol = fluid::solve(&init, 6.0, 1e-3).map_err(|e| e.to_string())?;
    let cfg = SweepConfig {
        lambdas: vec![100.0, 400.0, 1600.0, 6400.0],
        t_end: 6.0,
        replicas: 50,
        base_seed: SWEEP_SEED,
        max_tries: 64,
    };
    let report = analysis::lambda_sweep(&init, &sol, &cfg).map_err(|e| e.to_string())?;
    let medians: Vec<f64> = report.summaries.iter().map(|s| s.median_a).collect();
    let slope = report.slope().map_err(|e| e.to_string())?;
    ensure(
        report.medians_strictly_decreasing() && (-0.75..=-0.30).contains(&slope),
        format!("medians {medians:.4?}, slope {slope:.3}, skipped {}", report.skipped.len()),
    )
}

fn c10_acceptance_rate() -> Outcome {
    let init = DdeInit::fixed_point(1.0).map_err(|e| e.to_string())?;
    let draws = 500;
    let mut accepted = 0;
    for i in 0..draws {
        let mut stream = rng::stream(SUITE_SEED ^ 10, i);
        if coupling::sample_in_f(&init, 1000.0, &mut stream, 1).is_ok() {
            accepted += 1;
        }
    }
    let rate = accepted as f64 / draws as f64;
    ensure(rate >= 0.70, format!("accepted {accepted}/{draws} = {rate:.3}"))
}

fn c11_reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out = tmp.path().join(format!("run{run}"));
        let text = format!(
            "mode = \"sweep\"\nlambda = [100, 400, 1600, 6400]\nh = 1.0\nT = 6.0\n\
             replicas = 50\nbase_seed = {SWEEP_SEED}\na_h = 1.0\nu = [1.0]\nout = {:?}\n",
            out.display().to_string()
        );
        let cfg = parse_config(&text).map_err(|e| e.to_string())?;
        app::run(&cfg, false).map_err(|e| e.to_string())?;
        let mut files = Vec::new();
        for name in ["sweep.csv", "summary.csv"] {
            files.push(std::fs::read(out.join(name)).map_err(|e| e.to_string())?);
        }
        outputs.push(files);
    }
    let bytes: usize = outputs[0].iter().map(Vec::len).sum();
    ensure(
        outputs[0] == outputs[1],
        format!("sweep.csv and summary.csv identical, {bytes} bytes"),
    )
}

fn main() -> ExitCode {
    let init_suite = suite(20, SUITE_SEED);
    let criteria: Vec<Criterion> = vec![
        ("kernel oracle equivalence", Box::new(c1_kernel_oracle)),
        ("probability closure and mean", Box::new(c2_closure_mean)),
        ("discrete invariants", Box::new(c3_discrete_invariants)),
        ("fluid fixed point", Box::new(c4_fixed_point)),
        ("fluid structural properties", Box::new(|| c5_lemma1(&init_suite))),
        ("solver order", Box::new(c6_solver_order)),
        ("bootstrap oracle agreement", Box::new(c7_bootstrap_oracle)),
        ("relaxation bound", Box::new(|| c8_decay(&init_suite))),
        ("deviation scaling", Box::new(c9_scaling)),
        ("F acceptance rate", Box::new(c10_acceptance_rate)),
        ("reproducibility", Box::new(c11_reproducibility)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = check();
        let secs = started.elapsed().as_secs_f64();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] {:>2}. {name}: {detail} ({secs:.2}s)", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
