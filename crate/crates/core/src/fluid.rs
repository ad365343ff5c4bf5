//! Fluid limit of the tangle process: the delay system
//!
//! ```text
//! a'(t) = 1 - 2 a(t) / b(t)
//! b'(t) = 1 - 2 a(t-h) / b(t-h)
//! ```
//!
//! seeded by `a(h) > 0` and a piecewise-constant `u` on `[0, h]` with values in
//! `[0, 2]`. On `[h, 2h]` the function `b` has the closed form
//! `b(t) = a(h) + (t - h) + int_{t-h}^{h} u`, and for `t >= 2h` it is
//! `b(t) = a(t - h) + h`. The solver proceeds interval by interval (method of
//! steps) with classical RK4 on a fixed grid `t_k = h + k dt`; delayed values of
//! `a` at half steps come from cubic Hermite interpolation of stored `(a, a')`.
//!
//! `dt` must divide the width `h / K` of the cells of `u`, so every breakpoint
//! of `u` (and every point where a derivative jump propagates to) is a node.

use std::io::Write;

use crate::{Error, Result};

/// Relative slack when checking that a step divides an interval.
const DIVIDES_RTOL: f64 = 1e-9;

/// Default number of solver steps per delay interval.
pub const DEFAULT_STEPS_PER_H: usize = 1000;

/// `(a(h), u)` with `u` stored as `K` values on equal cells of `[0, h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DdeInit {
    a_h: f64,
    h: f64,
    u: Vec<f64>,
}

impl DdeInit {
    pub fn new(a_h: f64, h: f64, u: Vec<f64>) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidParam(format!("h must be positive, got {h}")));
        }
        if !(a_h.is_finite() && a_h > 0.0) {
            return Err(Error::InvalidParam(format!("a(h) must be positive, got {a_h}")));
        }
        if u.is_empty() {
            return Err(Error::InvalidParam("u needs at least one cell".into()));
        }
        if let Some((i, v)) = u
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=2.0).contains(*v)))
        {
            return Err(Error::InvalidParam(format!("u[{i}] = {v} not in [0, 2]")));
        }
        Ok(Self { a_h, h, u })
    }

    /// The stationary initial condition `a(h) = h`, `u = 1`.
    pub fn fixed_point(h: f64) -> Result<Self> {
        Self::new(h, h, vec![1.0])
    }

    pub fn a_h(&self) -> f64 {
        self.a_h
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn cells(&self) -> usize {
        self.u.len()
    }

    pub fn cell_width(&self) -> f64 {
        self.h / self.u.len() as f64
    }

    /// Exact `int_{s0}^{s1} u`, clamped to `[0, h]`; negative if `s1 < s0`.
    pub fn u_integral(&self, s0: f64, s1: f64) -> f64 {
        if s1 < s0 {
            return -self.u_integral(s1, s0);
        }
        let s0 = s0.clamp(0.0, self.h);
        let s1 = s1.clamp(0.0, self.h);
        let width = self.cell_width();
        let k = self.u.len();
        let first = ((s0 / width).floor() as usize).min(k - 1);
        let mut total = 0.0;
        for (i, &v) in self.u.iter().enumerate().skip(first) {
            let lo = (i as f64 * width).max(s0);
            let hi = if i + 1 == k { self.h } else { (i + 1) as f64 * width }.min(s1);
            if hi <= lo {
                if lo >= s1 {
                    break;
                }
                continue;
            }
            total += v * (hi - lo);
        }
        total
    }

    /// `b(h) = a(h) + int_0^h u`.
    pub fn b_initial(&self) -> f64 {
        self.a_h + self.u_integral(0.0, self.h)
    }

    /// Closed-form `b(t)` on `[h, 2h]`.
    pub fn bootstrap_b(&self, t: f64) -> Result<f64> {
        let h = self.h;
        let t = clamp_time(t, h, 2.0 * h)?;
        Ok(self.bootstrap_b_unchecked(t))
    }

    fn bootstrap_b_unchecked(&self, t: f64) -> f64 {
        let h = self.h;
        let s = (t - h).clamp(0.0, h);
        self.a_h + s + self.u_integral(s, h)
    }

    /// `a(t)` on `[h, 2h]` from the integrating-factor formula
    /// `a(t) = P(h,t)^{-1} (a(h) + int_h^t P(h,s) ds)` with
    /// `P(h,s) = exp(2 int_h^s 1/b)`, using the closed-form `b` and composite
    /// Simpson quadrature (default 4000 cells per `h`, split at the kinks of `b`).
    ///
    /// Independent of [`solve`]; serves as its reference on the first interval.
    pub fn bootstrap_a_oracle(&self, t: f64) -> Result<f64> {
        self.bootstrap_a_oracle_with(t, 4000)
    }

    pub fn bootstrap_a_oracle_with(&self, t: f64, cells_per_h: usize) -> Result<f64> {
        let h = self.h;
        let t = clamp_time(t, h, 2.0 * h)?;
        if t == h {
            return Ok(self.a_h);
        }
        let cells_per_h = cells_per_h.max(2);
        // Kinks of b sit at h + i*h/K.
        let mut knots = vec![h];
        let width = self.cell_width();
        for i in 1..self.cells() {
            let kink = h + i as f64 * width;
            if kink < t {
                knots.push(kink);
            }
        }
        knots.push(t);

        let mut log_p = 0.0f64; // int_h^s 2/b
        let mut outer = 0.0; // int_h^s P(h, .)
        for seg in knots.windows(2) {
            let (lo, hi) = (seg[0], seg[1]);
            let len = hi - lo;
            let mut cells = ((len / h) * cells_per_h as f64).ceil() as usize;
            cells = cells.max(2);
            if cells % 2 == 1 {
                cells += 1;
            }
            let dx = len / cells as f64;
            let mut p_vals = Vec::with_capacity(cells + 1);
            p_vals.push(log_p.exp());
            for c in 0..cells {
                let x0 = lo + c as f64 * dx;
                let x1 = if c + 1 == cells { hi } else { x0 + dx };
                let xm = 0.5 * (x0 + x1);
                let f = |x: f64| 2.0 / self.bootstrap_b_unchecked(x);
                log_p += (x1 - x0) / 6.0 * (f(x0) + 4.0 * f(xm) + f(x1));
                p_vals.push(log_p.exp());
            }
            outer += simpson(&p_vals, dx);
        }
        let p = log_p.exp();
        Ok((self.a_h + outer) / p)
    }
}

fn clamp_time(t: f64, lo: f64, hi: f64) -> Result<f64> {
    let slack = 1e-12 * hi.abs().max(1.0);
    if !(t >= lo - slack && t <= hi + slack) {
        return Err(Error::TimeOutOfRange { t, lo, hi });
    }
    Ok(t.clamp(lo, hi))
}

/// Composite Simpson over equally spaced samples; an odd panel count closes
/// with Simpson's 3/8 rule on the last three panels.
pub(crate) fn simpson(f: &[f64], dx: f64) -> f64 {
    let n = f.len().saturating_sub(1);
    match n {
        0 => 0.0,
        1 => 0.5 * dx * (f[0] + f[1]),
        _ => {
            let even_end = if n.is_multiple_of(2) { n } else { n - 3 };
            let mut s = 0.0;
            for i in (0..even_end).step_by(2) {
                s += f[i] + 4.0 * f[i + 1] + f[i + 2];
            }
            s *= dx / 3.0;
            if n % 2 == 1 {
                let i = n - 3;
                s += 3.0 * dx / 8.0 * (f[i] + 3.0 * f[i + 1] + 3.0 * f[i + 2] + f[i + 3]);
            }
            s
        }
    }
}

/// `(a, b, a')` sampled at `t_k = h + k dt` for `k = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidSolution {
    h: f64,
    dt: f64,
    steps_per_h: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    da: Vec<f64>,
}

impl FluidSolution {
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps_per_h(&self) -> usize {
        self.steps_per_h
    }

    pub fn t0(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn t(&self, k: usize) -> f64 {
        self.h + k as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.t(self.len() - 1)
    }

    pub fn a_vals(&self) -> &[f64] {
        &self.a
    }

    pub fn b_vals(&self) -> &[f64] {
        &self.b
    }

    pub fn da_vals(&self) -> &[f64] {
        &self.da
    }

    /// Index of the last node at or before `t`.
    pub fn node_at_or_before(&self, t: f64) -> usize {
        let k = ((t - self.h) / self.dt + 1e-9).floor();
        (k.max(0.0) as usize).min(self.len() - 1)
    }

    fn covers(&self, t: f64) -> Result<f64> {
        clamp_time(t, self.h, self.t_end())
    }

    /// Cubic Hermite interpolation of `a` from node values and slopes.
    pub fn a_at(&self, t: f64) -> Result<f64> {
        let t = self.covers(t)?;
        let k = self.node_at_or_before(t).min(self.len().saturating_sub(2));
        if self.len() == 1 {
            return Ok(self.a[0]);
        }
        let s = ((t - self.t(k)) / self.dt).clamp(0.0, 1.0);
        Ok(hermite(self.a[k], self.da[k], self.a[k + 1], self.da[k + 1], self.dt, s))
    }

    /// `b(t)`: linear between nodes on `[h, 2h]` (exact, since `b` is piecewise
    /// linear with kinks at nodes there), `a(t - h) + h` afterwards.
    pub fn b_at(&self, t: f64) -> Result<f64> {
        let t = self.covers(t)?;
        let two_h = 2.0 * self.h;
        if t >= two_h {
            return Ok(self.a_at(t - self.h)? + self.h);
        }
        let k = self.node_at_or_before(t).min(self.steps_per_h - 1);
        let s = ((t - self.t(k)) / self.dt).clamp(0.0, 1.0);
        Ok(self.b[k] + s * (self.b[k + 1] - self.b[k]))
    }

    /// Header `t,a,b,da`, one row per node.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["t", "a", "b", "da"])?;
        for k in 0..self.len() {
            wtr.write_record([
                self.t(k).to_string(),
                self.a[k].to_string(),
                self.b[k].to_string(),
                self.da[k].to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn hermite(y0: f64, d0: f64, y1: f64, d1: f64, dt: f64, s: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    h00 * y0 + h10 * dt * d0 + h01 * y1 + h11 * dt * d1
}

/// Number of steps of size `dt` in `h`; `dt` must also divide the cell width
/// of `u`.
pub fn steps_per_h(init: &DdeInit, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParam(format!("dt must be positive, got {dt}")));
    }
    let per_cell = init.cell_width() / dt;
    let rounded = per_cell.round();
    if rounded < 1.0 || (per_cell - rounded).abs() > DIVIDES_RTOL * per_cell {
        return Err(Error::InvalidParam(format!(
            "dt = {dt} does not divide the u cell width h/K = {}",
            init.cell_width()
        )));
    }
    Ok(rounded as usize * init.cells())
}

/// Method-of-steps solution on `[h, t_end]`, `t_end >= 2h`.
pub fn solve(init: &DdeInit, t_end: f64, dt: f64) -> Result<FluidSolution> {
    let n_per_h = steps_per_h(init, dt)?;
    solve_with_steps(init, t_end, n_per_h)
}

/// As [`solve`] with `dt = h / steps_per_h`. The grid is extended to the first
/// node at or after `t_end`.
pub fn solve_with_steps(init: &DdeInit, t_end: f64, steps_per_h: usize) -> Result<FluidSolution> {
    let h = init.h();
    if steps_per_h == 0 || !steps_per_h.is_multiple_of(init.cells()) {
        return Err(Error::InvalidParam(format!(
            "{steps_per_h} steps per h is not a multiple of the {} cells of u",
            init.cells()
        )));
    }
    if !(t_end >= 2.0 * h * (1.0 - 1e-12)) {
        return Err(Error::InvalidParam(format!(
            "horizon T = {t_end} is shorter than 2h = {}",
            2.0 * h
        )));
    }
    let dt = h / steps_per_h as f64;
    let n_steps = (((t_end - h) / dt) - 1e-9).ceil().max(steps_per_h as f64) as usize;

    let rhs = |a: f64, b: f64| 1.0 - 2.0 * a / b;

    let mut a = Vec::with_capacity(n_steps + 1);
    let mut b = Vec::with_capacity(n_steps + 1);
    let mut da = Vec::with_capacity(n_steps + 1);
    a.push(init.a_h());
    b.push(init.b_initial());
    da.push(rhs(a[0], b[0]));

    for k in 0..n_steps {
        let t = h + k as f64 * dt;
        let ak = a[k];
        // b at t, t + dt/2, t + dt.
        let (b0, bm, b1) = if k < steps_per_h {
            (
                b[k],
                init.bootstrap_b_unchecked(t + 0.5 * dt),
                init.bootstrap_b_unchecked(t + dt),
            )
        } else {
            let j = k - steps_per_h;
            let mid = hermite(a[j], da[j], a[j + 1], da[j + 1], dt, 0.5);
            (b[k], mid + h, a[j + 1] + h)
        };
        let k1 = rhs(ak, b0);
        let k2 = rhs(ak + 0.5 * dt * k1, bm);
        let k3 = rhs(ak + 0.5 * dt * k2, bm);
        let k4 = rhs(ak + dt * k3, b1);
        let next = ak + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        a.push(next);
        b.push(b1);
        da.push(rhs(next, b1));
    }

    Ok(FluidSolution {
        h,
        dt,
        steps_per_h,
        a,
        b,
        da,
    })
}

/// `P(x, y) = exp(2 int_x^y 1/b)` on the solution, by Simpson's rule on each
/// grid cell (or partial cell) between `x` and `y`.
pub fn integrating_factor(sol: &FluidSolution, x: f64, y: f64) -> Result<f64> {
    if y < x {
        return Err(Error::InvalidParam(format!("need x <= y, got x = {x}, y = {y}")));
    }
    let x = sol.covers(x)?;
    let y = sol.covers(y)?;
    if x == y {
        return Ok(1.0);
    }
    let mut cuts = vec![x];
    let first = sol.node_at_or_before(x) + 1;
    for k in first..sol.len() {
        let tk = sol.t(k);
        if tk >= y {
            break;
        }
        if tk > x {
            cuts.push(tk);
        }
    }
    cuts.push(y);
    let mut integral = 0.0;
    for w in cuts.windows(2) {
        let (p, q) = (w[0], w[1]);
        let bp = sol.b_at(p)?;
        let bm = sol.b_at(0.5 * (p + q))?;
        let bq = sol.b_at(q)?;
        if bp <= 0.0 || bm <= 0.0 || bq <= 0.0 {
            return Err(Error::NonPositiveB { x, y });
        }
        integral += (q - p) / 6.0 * (1.0 / bp + 4.0 / bm + 1.0 / bq);
    }
    Ok((2.0 * integral).exp())
}

/// Worst residual of each structural property over nodes `t >= 2h`:
///
/// 1. `a >= 0`
/// 2. `b(t) = a(t - h) + h`
/// 3. `b >= h`
/// 4. `b(t) - a(t) = int_{t-h}^{t} 2a/b` (Simpson on stored samples)
/// 5. `0 <= b - a <= 2h`
///
/// One-sided properties report how far the inequality is violated (0 if not).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Report {
    pub residuals: [f64; 5],
    pub tol: f64,
    pub tol_quad: f64,
}

impl Lemma1Report {
    pub fn holds(&self, property: usize) -> bool {
        let tol = if property == 4 { self.tol_quad } else { self.tol };
        self.residuals[property - 1] <= tol
    }

    pub fn passed(&self) -> bool {
        (1..=5).all(|p| self.holds(p))
    }

    pub fn failed_properties(&self) -> Vec<usize> {
        (1..=5).filter(|&p| !self.holds(p)).collect()
    }
}

pub fn verify_lemma1(sol: &FluidSolution, tol: f64, tol_quad: f64) -> Lemma1Report {
    let h = sol.h();
    let n = sol.steps_per_h();
    let mut res = [0.0f64; 5];
    let ratio: Vec<f64> = sol
        .a
        .iter()
        .zip(&sol.b)
        .map(|(&a, &b)| 2.0 * a / b)
        .collect();
    for k in n..sol.len() {
        let (a, b) = (sol.a[k], sol.b[k]);
        res[0] = res[0].max(-a);
        res[1] = res[1].max((b - h - sol.a[k - n]).abs());
        res[2] = res[2].max(h - b);
        let integral = simpson(&ratio[k - n..=k], sol.dt());
        res[3] = res[3].max((b - a - integral).abs());
        res[4] = res[4].max(a - b).max(b - a - 2.0 * h);
    }
    Lemma1Report {
        residuals: res,
        tol,
        tol_quad,
    }
}

/// Overwrite hook for negative-control tests.
#[doc(hidden)]
pub fn perturb_b(sol: &mut FluidSolution, k: usize, delta: f64) {
    sol.b[k] += delta;
}
