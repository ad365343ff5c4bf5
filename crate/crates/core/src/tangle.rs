//! Exact simulation of the tangle tip-count process under random tip growth.
//!
//! Transactions arrive at `t_n = n / lambda`. Each one picks two tips
//! independently and uniformly (with replacement) and links to them after the
//! proof-of-work delay `h`, i.e. `m = lambda * h` steps later. Only counts are
//! tracked:
//!
//! * `X_n` free tips,
//! * `W_n` pending tips (selected by an in-flight proof of work),
//! * `L_n = W_n + X_n` tips,
//! * `U_n` number of distinct free tips picked at step `n`.
//!
//! The state is carried from `n = m` onward; `X_0..X_{m-1}` play no role.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;

use crate::{Error, Result};

/// Arrival rate and proof-of-work delay. `m = lambda * h` must be an integer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    lambda: f64,
    h: f64,
    m: usize,
}

impl ModelParams {
    /// The product `lambda * h` is evaluated in `f64` and must be exactly
    /// integral; no rounding is applied.
    pub fn new(lambda: f64, h: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidParam(format!("lambda must be positive, got {lambda}")));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidParam(format!("h must be positive, got {h}")));
        }
        let m = delay_steps(lambda, h)?;
        Ok(Self { lambda, h, m })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Arrival time of step `n`.
    pub fn time(&self, n: u64) -> f64 {
        n as f64 / self.lambda
    }
}

/// `lambda * h` as an integer step count, rejecting non-integral products.
pub fn delay_steps(lambda: f64, h: f64) -> Result<usize> {
    let prod = lambda * h;
    if !prod.is_finite() || prod.fract() != 0.0 || prod < 1.0 {
        return Err(Error::InvalidParam(format!(
            "lambda*h = {prod} is not a positive integer"
        )));
    }
    Ok(prod as usize)
}

/// Seed data `(xi_m, u_1..u_m)` for the discrete process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteInit {
    pub xi_m: u64,
    pub u: Vec<u8>,
}

impl DiscreteInit {
    pub fn new(xi_m: u64, u: Vec<u8>) -> Result<Self> {
        let init = Self { xi_m, u };
        init.validate()?;
        Ok(init)
    }

    fn validate(&self) -> Result<()> {
        if self.xi_m < 1 {
            return Err(Error::InvalidParam("xi_m must be >= 1".into()));
        }
        if let Some(i) = self.u.iter().position(|&v| v > 2) {
            return Err(Error::InvalidParam(format!(
                "u_{} = {} not in {{0,1,2}}",
                i + 1,
                self.u[i]
            )));
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.u.len()
    }
}

/// Conditional law of `U_{n+1}` given the current counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UDistribution {
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
}

impl UDistribution {
    pub fn as_array(&self) -> [f64; 3] {
        [self.p0, self.p1, self.p2]
    }
}

/// Integer weights `(W^2, 2WX + X, X(X-1))` of `U = 0, 1, 2`; they sum to `L^2`.
///
/// Counting ordered pairs of uniformly chosen tips: both picks land on pending
/// tips (`W^2`), both on the same free tip or one free and one pending
/// (`X + 2WX`), or on two distinct free tips (`X(X-1)`).
pub fn u_weights(x: u64, w: u64) -> Result<[u64; 3]> {
    if x + w == 0 {
        return Err(Error::EmptyTipSet);
    }
    Ok([w * w, 2 * w * x + x, x * x.saturating_sub(1)])
}

pub fn u_distribution(x: u64, w: u64) -> Result<UDistribution> {
    let [w0, w1, w2] = u_weights(x, w)?;
    let l2 = ((x + w) * (x + w)) as f64;
    Ok(UDistribution {
        p0: w0 as f64 / l2,
        p1: w1 as f64 / l2,
        p2: w2 as f64 / l2,
    })
}

/// `E[U_{n+1} | F_n] = 2X/L - X/L^2`.
pub fn expected_u(x: u64, w: u64) -> Result<f64> {
    let l = x + w;
    if l == 0 {
        return Err(Error::EmptyTipSet);
    }
    let (x, l) = (x as f64, l as f64);
    Ok(2.0 * x / l - x / (l * l))
}

/// `L_{m+j} = xi_m + j + sum_{i=j+1}^{m} u_i`, fixed by the seed data alone.
pub fn l_from_init(j: usize, init: &DiscreteInit) -> Result<u64> {
    let m = init.m();
    if j > m {
        return Err(Error::IndexOutOfRange { index: j, max: m });
    }
    let tail: u64 = init.u[j..].iter().map(|&v| v as u64).sum();
    Ok(init.xi_m + j as u64 + tail)
}

/// Discrete state at step `n >= m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TangleState {
    n: u64,
    x: u64,
    w: u64,
    /// `U_{n-m+1}, ..., U_n`, oldest first.
    ring: VecDeque<u8>,
}

impl TangleState {
    /// Builds a state from raw parts. `x >= 1` and every ring entry in `{0,1,2}`.
    pub fn from_parts(n: u64, x: u64, ring: Vec<u8>) -> Result<Self> {
        if x < 1 {
            return Err(Error::InvalidParam("free-tip count X must be >= 1".into()));
        }
        if ring.is_empty() {
            return Err(Error::InvalidParam("ring must hold m >= 1 entries".into()));
        }
        if ring.iter().any(|&v| v > 2) {
            return Err(Error::InvalidParam("ring entries must lie in {0,1,2}".into()));
        }
        let w = ring.iter().map(|&v| v as u64).sum();
        Ok(Self {
            n,
            x,
            w,
            ring: ring.into(),
        })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn x(&self) -> u64 {
        self.x
    }

    pub fn w(&self) -> u64 {
        self.w
    }

    pub fn l(&self) -> u64 {
        self.w + self.x
    }

    /// Most recent selection `U_n`.
    pub fn last_u(&self) -> u8 {
        *self.ring.back().expect("ring is never empty")
    }

    pub fn ring(&self) -> impl Iterator<Item = u8> + '_ {
        self.ring.iter().copied()
    }

    pub fn distribution(&self) -> UDistribution {
        u_distribution(self.x, self.w).expect("valid state has L >= 1")
    }

    /// Draws `U_{n+1}` by inverse CDF over the exact integer weights: one
    /// uniform integer `r` in `1..=L^2`, `U = 0` if `r <= W^2`, `U = 1` if
    /// `r <= W^2 + 2WX + X`, else `U = 2`. Boundary ties go to the lower
    /// category.
    pub fn sample_u<R: Rng + ?Sized>(&self, rng: &mut R) -> u8 {
        let [w0, w1, _] = u_weights(self.x, self.w).expect("valid state has L >= 1");
        let l = self.l();
        let r = rng.gen_range(1..=l * l);
        if r <= w0 {
            0
        } else if r <= w0 + w1 {
            1
        } else {
            2
        }
    }

    /// Applies a given `U_{n+1}`. Fails when `u` has zero probability in the
    /// current state.
    pub fn advance(&mut self, u: u8) -> Result<()> {
        let weights = u_weights(self.x, self.w)?;
        if u > 2 || weights[u as usize] == 0 {
            return Err(Error::InvalidParam(format!(
                "U = {u} impossible from X = {}, W = {}",
                self.x, self.w
            )));
        }
        self.apply(u);
        Ok(())
    }

    fn apply(&mut self, u: u8) {
        let dropped = self.ring.pop_front().expect("ring is never empty");
        self.ring.push_back(u);
        self.w = self.w + u as u64 - dropped as u64;
        self.x = self.x + 1 - u as u64;
        self.n += 1;
        debug_assert!(self.x >= 1);
    }

    /// One RTG step; returns the sampled `U_{n+1}`.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> u8 {
        let u = self.sample_u(rng);
        self.apply(u);
        u
    }
}

/// State at `n = m`: `X_m = xi_m`, `W_m = sum u_i`, ring `u_1..u_m`.
pub fn init_state(params: &ModelParams, init: &DiscreteInit) -> Result<TangleState> {
    init.validate()?;
    if init.m() != params.m() {
        return Err(Error::InvalidParam(format!(
            "seed sequence has length {} but m = {}",
            init.m(),
            params.m()
        )));
    }
    TangleState::from_parts(params.m() as u64, init.xi_m, init.u.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRow {
    pub n: u64,
    pub x: u64,
    pub w: u64,
    pub l: u64,
    pub u: u8,
}

impl TraceRow {
    fn of(state: &TangleState) -> Self {
        Self {
            n: state.n(),
            x: state.x(),
            w: state.w(),
            l: state.l(),
            u: state.last_u(),
        }
    }
}

/// Recorded path starting at `n = m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub params: ModelParams,
    pub start_n: u64,
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn end_n(&self) -> u64 {
        self.start_n + self.rows.len() as u64 - 1
    }

    pub fn row(&self, n: u64) -> Option<&TraceRow> {
        n.checked_sub(self.start_n)
            .and_then(|i| self.rows.get(i as usize))
    }

    /// Checks the path identities that hold for every realisation:
    /// `L = W + X`, `X_{n+1} = X_n + 1 - U_{n+1}`, `X >= 1`, and for `n >= 2m`
    /// both `L_n = X_{n-m} + m` and `L_n >= m + 1`. Returns one message per
    /// violation.
    pub fn invariant_violations(&self) -> Vec<String> {
        let m = self.params.m() as u64;
        let mut out = Vec::new();
        for (i, r) in self.rows.iter().enumerate() {
            if r.l != r.w + r.x {
                out.push(format!("n={}: L={} != W+X={}", r.n, r.l, r.w + r.x));
            }
            if r.x < 1 {
                out.push(format!("n={}: X=0", r.n));
            }
            if i > 0 {
                let prev = &self.rows[i - 1];
                if r.x + r.u as u64 != prev.x + 1 {
                    out.push(format!("n={}: X update broken", r.n));
                }
            }
            if r.n >= 2 * m {
                match self.row(r.n - m) {
                    Some(back) if back.x + m != r.l => {
                        out.push(format!("n={}: L={} != X_(n-m)+m={}", r.n, r.l, back.x + m))
                    }
                    _ => {}
                }
                if r.l < m + 1 {
                    out.push(format!("n={}: L={} < m+1", r.n, r.l));
                }
            }
        }
        out
    }

    /// Header `n,t,X,W,L,U`; `t = n / lambda` printed at round-trip precision.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["n", "t", "X", "W", "L", "U"])?;
        for r in &self.rows {
            wtr.write_record([
                r.n.to_string(),
                self.params.time(r.n).to_string(),
                r.x.to_string(),
                r.w.to_string(),
                r.l.to_string(),
                r.u.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Simulates `n_steps` transitions from the seed data; the trace has
/// `n_steps + 1` rows.
pub fn run<R: Rng + ?Sized>(
    params: &ModelParams,
    init: &DiscreteInit,
    n_steps: u64,
    rng: &mut R,
) -> Result<Trace> {
    let mut state = init_state(params, init)?;
    let mut rows = Vec::with_capacity(n_steps as usize + 1);
    rows.push(TraceRow::of(&state));
    for _ in 0..n_steps {
        state.step(rng);
        rows.push(TraceRow::of(&state));
    }
    Ok(Trace {
        params: *params,
        start_n: params.m() as u64,
        rows,
    })
}
