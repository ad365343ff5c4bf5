//! Bridge between a fluid initial condition and the discrete process.
//!
//! A DDE initial condition `alpha = (a(h), u)` is turned into discrete seed data
//! `(xi_alpha, v)` with `xi_alpha = max(floor(lambda a(h)), 1)` and `v` drawn
//! slot by slot so that `E[v_j] = x_j = lambda int_{t_{j-1}}^{t_j} u`. Draws are
//! rejected until the rescaled tip count `B_v` stays within
//! `4 sqrt(h / lambda) + 1 / lambda` of the fluid `b` on `[h, 2h]` (the set
//! `F(alpha, lambda)`). At least 3/4 of the draws are accepted.

use rand::Rng;
use serde::Serialize;

use crate::fluid::DdeInit;
use crate::tangle::{self, DiscreteInit, Trace};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingTargets {
    pub lambda: f64,
    pub xi_alpha: u64,
    /// Per-slot means `x_1..x_m`, each in `[0, 2]`.
    pub x: Vec<f64>,
}

impl CouplingTargets {
    pub fn m(&self) -> usize {
        self.x.len()
    }
}

pub fn targets(init: &DdeInit, lambda: f64) -> Result<CouplingTargets> {
    let m = tangle::delay_steps(lambda, init.h())?;
    let h = init.h();
    let slot = |j: usize| h * j as f64 / m as f64;
    let x = (1..=m)
        .map(|j| snap(lambda * init.u_integral(slot(j - 1), slot(j))).clamp(0.0, 2.0))
        .collect();
    let xi_alpha = ((lambda * init.a_h()).floor() as u64).max(1);
    Ok(CouplingTargets { lambda, xi_alpha, x })
}

/// Round-off in `lambda * integral` must not turn an integral mean (a
/// zero-variance slot) into a random one.
fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-12 {
        r
    } else {
        x
    }
}

/// Independent `v_j` on `{floor(x_j), ceil(x_j)}` with
/// `P(v_j = ceil(x_j)) = frac(x_j)`, the minimum-variance law on `{0,1,2}`
/// with mean `x_j`. One uniform draw per slot.
pub fn sample_v<R: Rng + ?Sized>(targets: &CouplingTargets, rng: &mut R) -> Vec<u8> {
    targets
        .x
        .iter()
        .map(|&x| {
            let lo = x.floor();
            let up = rng.gen::<f64>() < x - lo;
            (lo as u8 + up as u8).min(2)
        })
        .collect()
}

/// Radius `4 sqrt(h) / sqrt(lambda) + 1 / lambda` of `F(alpha, lambda)`.
pub fn f_radius(h: f64, lambda: f64) -> f64 {
    4.0 * h.sqrt() / lambda.sqrt() + 1.0 / lambda
}

/// `sup_{m <= n <= 2m} |L_n / lambda - b(t_n)|` where `L_{m+j}` follows from
/// `(xi_alpha, v)` and `b` is the closed-form fluid `b` on `[h, 2h]`.
pub fn init_deviation(v: &[u8], xi_alpha: u64, init: &DdeInit, lambda: f64) -> Result<f64> {
    let h = init.h();
    let m = tangle::delay_steps(lambda, h)?;
    if v.len() != m {
        return Err(Error::InvalidParam(format!(
            "v has length {} but m = {m}",
            v.len()
        )));
    }
    // tail = sum_{i > j} v_i, walking j upwards.
    let mut tail: u64 = v.iter().map(|&x| x as u64).sum();
    let mut worst = 0.0f64;
    for j in 0..=m {
        if j > 0 {
            tail -= v[j - 1] as u64;
        }
        let l = xi_alpha + j as u64 + tail;
        let t = h + h * j as f64 / m as f64;
        let b = init.bootstrap_b(t)?;
        worst = worst.max((l as f64 / lambda - b).abs());
    }
    Ok(worst)
}

pub fn membership_f(v: &[u8], init: &DdeInit, lambda: f64) -> Result<bool> {
    let xi = targets(init, lambda)?.xi_alpha;
    Ok(init_deviation(v, xi, init, lambda)? <= f_radius(init.h(), lambda))
}

/// Discrete seed data drawn from `F(alpha, lambda)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledInit {
    pub init: DiscreteInit,
    pub tries: usize,
    pub sup_dev_init: f64,
}

/// Rejection sampling of `v` until it lands in `F(alpha, lambda)`.
pub fn sample_in_f<R: Rng + ?Sized>(
    init: &DdeInit,
    lambda: f64,
    rng: &mut R,
    max_tries: usize,
) -> Result<CoupledInit> {
    if max_tries == 0 {
        return Err(Error::InvalidParam("max_tries must be at least 1".into()));
    }
    let tg = targets(init, lambda)?;
    let radius = f_radius(init.h(), lambda);
    for tries in 1..=max_tries {
        let v = sample_v(&tg, rng);
        let dev = init_deviation(&v, tg.xi_alpha, init, lambda)?;
        if dev <= radius {
            return Ok(CoupledInit {
                init: DiscreteInit::new(tg.xi_alpha, v)?,
                tries,
                sup_dev_init: dev,
            });
        }
    }
    Err(Error::SamplingExhausted { tries: max_tries })
}

/// One row of the coupling report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingRecord {
    pub lambda: f64,
    pub xi_alpha: u64,
    pub tries: usize,
    pub accepted: bool,
    /// Empty when no member of `F` was found.
    pub sup_dev_init: Option<f64>,
}

/// Step functions `A(t) = X_{n(t)} / lambda`, `B(t) = L_{n(t)} / lambda` with
/// `n(t) = floor(lambda t)`, stored at the arrival times `t_n = n / lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledTrace {
    pub lambda: f64,
    pub start_n: u64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl RescaledTrace {
    pub fn t(&self, i: usize) -> f64 {
        (self.start_n + i as u64) as f64 / self.lambda
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn t_start(&self) -> f64 {
        self.t(0)
    }

    /// End of the last covered interval `[t_N, t_{N+1})`.
    pub fn t_end(&self) -> f64 {
        self.t(self.len() - 1)
    }

    /// `floor(lambda t)`; arrival times computed as `n / lambda` may land a few
    /// ulps below `n`, so a 1e-9 step slack is applied before flooring.
    pub fn step_index(&self, t: f64) -> i64 {
        (self.lambda * t + 1e-9).floor() as i64
    }

    fn index(&self, t: f64) -> Result<usize> {
        let n = self.step_index(t);
        let first = self.start_n as i64;
        let last = first + self.len() as i64 - 1;
        if n < first || n > last {
            return Err(Error::TimeOutOfRange {
                t,
                lo: self.t_start(),
                hi: self.t_end(),
            });
        }
        Ok((n - first) as usize)
    }

    pub fn a_at(&self, t: f64) -> Result<f64> {
        Ok(self.a[self.index(t)?])
    }

    pub fn b_at(&self, t: f64) -> Result<f64> {
        Ok(self.b[self.index(t)?])
    }

    pub fn covers(&self, t0: f64, t1: f64) -> Result<()> {
        self.index(t0)?;
        self.index(t1)?;
        Ok(())
    }
}

pub fn rescale(trace: &Trace) -> RescaledTrace {
    let lambda = trace.params.lambda();
    RescaledTrace {
        lambda,
        start_n: trace.start_n,
        a: trace.rows.iter().map(|r| r.x as f64 / lambda).collect(),
        b: trace.rows.iter().map(|r| r.l as f64 / lambda).collect(),
    }
}
