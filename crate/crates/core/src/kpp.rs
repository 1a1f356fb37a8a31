//! Fisher-KPP solver for `u(x, t) = P(M_t > x)`,
//! `u_t = u_xx / 2 + u - u^2`, `u(x, 0) = 1{x < 0}`.
//!
//! The solution is factored as `u = U v`, where `U` is the exact solution of
//! the linearised equation `U_t = U_xx / 2 + U` with the same initial data
//! (`U = e^t P(N(0, t) > x)` for the step). The correction `v` solves
//!
//! ```text
//! v_t = v_xx / 2 + (U_x / U) v_x - U v^2
//! ```
//!
//! is bounded by 1, and stays of order one in the far tail, where
//! `v(sqrt2 rho t, t) -> sqrt(4 pi) C(rho)`. So `log u = log U + log v` is
//! available to full relative precision at `u ~ e^{-(rho^2 - 1) t}`, far below
//! the underflow threshold, without regularising the step in log space.
//!
//! Time stepping is Strang splitting: an exact half step of the reaction
//! (`1/v` grows by `int U dt`, integrated with Simpson's rule), a TR-BDF2 step
//! of the linear advection-diffusion part, and another reaction half step. The
//! advection uses central differences where the cell Peclet number is at most
//! one and upwind differences elsewhere. Left boundary: `u = 1`; right
//! boundary: outflow (the drift `U_x / U` is negative everywhere).

use crate::error::{ensure, Error, Result};
use crate::numerics::{log_normal_sf, normal_hazard, normal_sf, solve_tridiagonal, INV_SQRT_4PI, SQRT_2};
use crate::par::map_replicas;
use crate::spine::EstimatorResult;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

/// Initial condition, through the linearised solution `U` it induces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Envelope {
    /// `u(x, 0) = 1{x < 0}`.
    Step,
    /// `u(x, 0) = P(N(shift, tau) > x)`.
    SmoothedStep { tau: f64, shift: f64 },
    /// `u(x, 0) = u0` everywhere.
    Uniform { u0: f64 },
}

impl Envelope {
    fn log_lin(&self, x: f64, t: f64) -> f64 {
        match *self {
            Envelope::Step => t + log_normal_sf(x / t.sqrt()),
            Envelope::SmoothedStep { tau, shift } => t + log_normal_sf((x - shift) / (t + tau).sqrt()),
            Envelope::Uniform { u0 } => u0.ln() + t,
        }
    }

    fn drift(&self, x: f64, t: f64) -> f64 {
        match *self {
            Envelope::Step => -normal_hazard(x / t.sqrt()) / t.sqrt(),
            Envelope::SmoothedStep { tau, shift } => {
                let s = (t + tau).sqrt();
                -normal_hazard((x - shift) / s) / s
            }
            Envelope::Uniform { .. } => 0.0,
        }
    }

    fn initial_v(&self, x: f64, t0: f64) -> f64 {
        match *self {
            // logistic growth of the heat-smoothed step over [0, t0]
            Envelope::Step => 1.0 / (1.0 + normal_sf(x / t0.sqrt()) * t0.exp_m1()),
            _ => 1.0,
        }
    }

    fn shift(&self) -> f64 {
        match *self {
            Envelope::SmoothedStep { shift, .. } => shift,
            _ => 0.0,
        }
    }

    /// Step-like data has `u = 1` far to the left.
    fn saturates_left(&self) -> bool {
        !matches!(self, Envelope::Uniform { .. })
    }

    fn singular_at_zero(&self) -> bool {
        matches!(self, Envelope::Step)
    }
}

/// Grid, time stepping and output times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KppParams {
    pub dx: f64,
    /// Largest time step.
    pub dt: f64,
    pub t_max: f64,
    /// Fastest probe speed; the grid extends to `sqrt2 rho_max t_max + 8`.
    pub rho_max: f64,
    /// Start time for the step initial condition (the data at `t_start` is the
    /// logistic transform of the heat-smoothed step, exact to `O(t_start^2)`).
    pub t_start: f64,
    /// Steps are at most `growth * t` while `t` is small.
    pub growth: f64,
    pub checkpoints: Vec<f64>,
    pub envelope: Envelope,
    /// `false` switches off the `u^2` term (solver verification mode).
    pub nonlinear: bool,
}

impl Default for KppParams {
    fn default() -> Self {
        Self {
            dx: 0.05,
            dt: 0.005,
            t_max: 12.0,
            rho_max: 4.0,
            t_start: 1e-4,
            growth: 0.05,
            checkpoints: vec![4.0, 6.0, 8.0, 10.0, 12.0],
            envelope: Envelope::Step,
            nonlinear: true,
        }
    }
}

pub const LEFT_MARGIN: f64 = 8.0;
pub const RIGHT_MARGIN: f64 = 8.0;

impl KppParams {
    pub fn validate(&self) -> Result<()> {
        ensure(self.dx > 0.0 && self.dx <= 0.5, || {
            format!("dx must lie in (0, 0.5], got {}", self.dx)
        })?;
        ensure(self.dt > 0.0 && self.dt <= 0.1, || {
            format!("dt must lie in (0, 0.1], got {}", self.dt)
        })?;
        ensure(self.t_max > 0.0 && self.t_max.is_finite(), || {
            format!("t_max must be > 0, got {}", self.t_max)
        })?;
        ensure(self.rho_max >= 1.0 && self.rho_max.is_finite(), || {
            format!("rho_max must be >= 1, got {}", self.rho_max)
        })?;
        ensure(self.growth > 0.0 && self.growth <= 0.5, || {
            format!("growth must lie in (0, 0.5], got {}", self.growth)
        })?;
        ensure(self.t_start > 0.0 && self.t_start < self.t_max, || {
            format!("t_start must lie in (0, t_max), got {}", self.t_start)
        })?;
        match self.envelope {
            Envelope::SmoothedStep { tau, shift } => {
                ensure(tau > 0.0 && shift.is_finite(), || "smoothed step needs tau > 0".into())?
            }
            Envelope::Uniform { u0 } => ensure(u0 > 0.0 && u0 <= 1.0, || format!("u0 must lie in (0, 1], got {u0}"))?,
            Envelope::Step => {}
        }
        let t0 = self.start_time();
        ensure(self.checkpoints.windows(2).all(|w| w[0] < w[1]), || {
            "checkpoints must increase".into()
        })?;
        ensure(self.checkpoints.iter().all(|&c| c > t0 && c <= self.t_max), || {
            format!("checkpoints must lie in ({t0}, {}]", self.t_max)
        })?;
        let n = self.grid_len();
        ensure(n <= 2_000_000, || format!("grid of {n} points is too large"))
    }

    fn start_time(&self) -> f64 {
        if self.envelope.singular_at_zero() {
            self.t_start
        } else {
            0.0
        }
    }

    fn x_lo(&self) -> f64 {
        -LEFT_MARGIN + self.envelope.shift()
    }

    fn grid_len(&self) -> usize {
        let x_hi = SQRT_2 * self.rho_max * self.t_max + RIGHT_MARGIN + self.envelope.shift().max(0.0);
        ((x_hi - self.x_lo()) / self.dx).ceil() as usize + 1
    }
}

/// Stored state at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: f64,
    /// `log v` on the grid.
    pub log_v: Vec<f64>,
}

/// Log tail probabilities on a space-time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KppField {
    pub x_lo: f64,
    pub dx: f64,
    pub len: usize,
    pub envelope: Envelope,
    pub checkpoints: Vec<Checkpoint>,
    pub dt: f64,
    pub steps: u64,
    pub method: String,
}

impl KppField {
    pub fn x(&self, i: usize) -> f64 {
        self.x_lo + i as f64 * self.dx
    }

    pub fn x_hi(&self) -> f64 {
        self.x(self.len - 1)
    }

    fn checkpoint(&self, t: f64) -> Result<&Checkpoint> {
        self.checkpoints
            .iter()
            .find(|c| (c.t - t).abs() <= 1e-9 * t.max(1.0))
            .ok_or_else(|| Error::InvalidArgument(format!("{t} is not a stored checkpoint")))
    }

    /// `w = log u` at every grid point of checkpoint `t`.
    pub fn w(&self, t: f64) -> Result<Vec<f64>> {
        let c = self.checkpoint(t)?;
        Ok(c.log_v
            .iter()
            .enumerate()
            .map(|(i, lv)| self.envelope.log_lin(self.x(i), c.t) + lv)
            .collect())
    }

    /// `log u(x, t)`: cubic interpolation of `log v` plus the exact `log U`.
    pub fn log_tail_at(&self, x: f64, t: f64) -> Result<f64> {
        let c = self.checkpoint(t)?;
        let s = (x - self.x_lo) / self.dx;
        let i = s.floor() as i64;
        ensure(s.is_finite() && i >= 4 && i + 5 < self.len as i64, || {
            format!(
                "probe {x} is not inside [{}, {}] with a 4-point margin",
                self.x_lo,
                self.x_hi()
            )
        })?;
        let i = i as usize;
        let f = s - i as f64;
        let y = &c.log_v[i - 1..i + 3];
        // Lagrange cubic through nodes -1, 0, 1, 2
        let l = [
            -f * (f - 1.0) * (f - 2.0) / 6.0,
            (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0,
            -(f + 1.0) * f * (f - 2.0) / 2.0,
            (f + 1.0) * f * (f - 1.0) / 6.0,
        ];
        let lv: f64 = l.iter().zip(y).map(|(a, b)| a * b).sum();
        Ok(self.envelope.log_lin(x, c.t) + lv)
    }

    /// `x` at which `u = 1/2` at checkpoint `t` (linear interpolation).
    pub fn median_front(&self, t: f64) -> Result<f64> {
        let w = self.w(t)?;
        let target = 0.5f64.ln();
        for i in 1..w.len() {
            if w[i - 1] >= target && w[i] < target {
                let f = (w[i - 1] - target) / (w[i - 1] - w[i]);
                return Ok(self.x(i - 1) + f * self.dx);
            }
        }
        Err(Error::NumericalFailure(format!("no u = 1/2 level at t = {t}")))
    }

    /// CSV dump with columns `t,x,w`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,x,w")?;
        for c in &self.checkpoints {
            for (i, lv) in c.log_v.iter().enumerate() {
                let x = self.x(i);
                writeln!(out, "{},{},{}", c.t, x, self.envelope.log_lin(x, c.t) + lv)?;
            }
        }
        Ok(())
    }
}

struct Operator {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Operator {
    fn new(n: usize) -> Self {
        Self {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
        }
    }

    /// Advection-diffusion operator at time `t`; row 0 is left empty for the
    /// reaction-only boundary node, the last row is first-order outflow.
    fn assemble(&mut self, env: &Envelope, x_lo: f64, dx: f64, t: f64) {
        let n = self.diag.len();
        let d = 0.5 / (dx * dx);
        for i in 1..n {
            let b = env.drift(x_lo + i as f64 * dx, t);
            if i == n - 1 {
                self.lower[i] = -b / dx;
                self.diag[i] = b / dx;
                self.upper[i] = 0.0;
            } else if b.abs() * dx <= 1.0 {
                self.lower[i] = d - b / (2.0 * dx);
                self.diag[i] = -2.0 * d;
                self.upper[i] = d + b / (2.0 * dx);
            } else {
                // b < 0: information comes from the left
                self.lower[i] = d - b / dx;
                self.diag[i] = -2.0 * d + b / dx;
                self.upper[i] = d;
            }
        }
        self.lower[0] = 0.0;
        self.diag[0] = 0.0;
        self.upper[0] = 0.0;
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = v.len();
        out[0] = 0.0;
        for i in 1..n {
            let mut s = self.lower[i] * v[i - 1] + self.diag[i] * v[i];
            if i + 1 < n {
                s += self.upper[i] * v[i + 1];
            }
            out[i] = s;
        }
    }
}

struct Solver<'a> {
    p: &'a KppParams,
    x_lo: f64,
    n: usize,
    op: Operator,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    rhs: Vec<f64>,
    tmp: Vec<f64>,
    stage: Vec<f64>,
    scratch: Vec<f64>,
}

const GAMMA: f64 = 2.0 - SQRT_2;

impl<'a> Solver<'a> {
    fn new(p: &'a KppParams) -> Self {
        let n = p.grid_len();
        Self {
            p,
            x_lo: p.x_lo(),
            n,
            op: Operator::new(n),
            a: vec![0.0; n],
            b: vec![0.0; n],
            c: vec![0.0; n],
            rhs: vec![0.0; n],
            tmp: vec![0.0; n],
            stage: vec![0.0; n],
            scratch: Vec::new(),
        }
    }

    fn x(&self, i: usize) -> f64 {
        self.x_lo + i as f64 * self.p.dx
    }

    /// Exact reaction flow over `[t, t + h]`: `1/v += int U`.
    fn react(&self, v: &mut [f64], t: f64, h: f64) {
        if !self.p.nonlinear {
            return;
        }
        let env = &self.p.envelope;
        for (i, vi) in v.iter_mut().enumerate() {
            let x = self.x(i);
            let integral = h / 6.0
                * (env.log_lin(x, t).exp() + 4.0 * env.log_lin(x, t + 0.5 * h).exp() + env.log_lin(x, t + h).exp());
            *vi = 1.0 / (1.0 / *vi + integral);
        }
    }

    /// Solves `(I - k L(t)) y = rhs`; result in `rhs`.
    fn implicit_solve(&mut self, t: f64, k: f64) {
        self.op.assemble(&self.p.envelope, self.x_lo, self.p.dx, t);
        for i in 0..self.n {
            self.a[i] = -k * self.op.lower[i];
            self.b[i] = 1.0 - k * self.op.diag[i];
            self.c[i] = -k * self.op.upper[i];
        }
        self.a[0] = 0.0;
        self.b[0] = 1.0;
        self.c[0] = 0.0;
        solve_tridiagonal(&self.a, &self.b, &self.c, &mut self.rhs, &mut self.scratch);
    }

    /// TR-BDF2 step of the advection-diffusion part.
    fn transport(&mut self, v: &mut [f64], t: f64, h: f64) {
        let env = self.p.envelope;
        self.op.assemble(&env, self.x_lo, self.p.dx, t);
        self.op.apply(v, &mut self.tmp);
        for ((r, &vi), &ai) in self.rhs.iter_mut().zip(v.iter()).zip(&self.tmp) {
            *r = vi + 0.5 * GAMMA * h * ai;
        }
        self.rhs[0] = v[0];
        let tg = t + GAMMA * h;
        self.implicit_solve(tg, 0.5 * GAMMA * h);
        self.stage.copy_from_slice(&self.rhs);
        let w1 = 1.0 / (GAMMA * (2.0 - GAMMA));
        let w0 = (1.0 - GAMMA) * (1.0 - GAMMA) / (GAMMA * (2.0 - GAMMA));
        for ((r, &si), &vi) in self.rhs.iter_mut().zip(&self.stage).zip(v.iter()) {
            *r = w1 * si - w0 * vi;
        }
        self.rhs[0] = v[0];
        let t1 = t + h;
        self.implicit_solve(t1, (1.0 - GAMMA) / (2.0 - GAMMA) * h);
        v.copy_from_slice(&self.rhs);
    }

    fn check(&self, v: &[f64], step: u64, t: f64) -> Result<()> {
        if let Some((i, vi)) = v.iter().enumerate().find(|(_, x)| !x.is_finite() || **x <= 0.0) {
            return Err(Error::NumericalFailure(format!(
                "step {step}, t = {t}: v = {vi} at x = {} (dx = {}, dt = {})",
                self.x(i),
                self.p.dx,
                self.p.dt
            )));
        }
        Ok(())
    }

    fn check_tail(&self, log_v: &[f64], t: f64) -> Result<()> {
        let env = &self.p.envelope;
        let start = self.n - (self.n / 10).max(2);
        let mut prev = env.log_lin(self.x(start), t) + log_v[start];
        for (i, lv) in log_v.iter().enumerate().skip(start + 1) {
            let w = env.log_lin(self.x(i), t) + lv;
            if w - prev > 1e-6 {
                return Err(Error::NumericalFailure(format!(
                    "log-tail increases by {} at x = {}, t = {t}",
                    w - prev,
                    self.x(i)
                )));
            }
            prev = w;
        }
        Ok(())
    }

    fn run(mut self) -> Result<KppField> {
        let p = self.p;
        let mut t = p.start_time();
        let mut v: Vec<f64> = (0..self.n).map(|i| p.envelope.initial_v(self.x(i), t)).collect();
        let mut checkpoints = Vec::with_capacity(p.checkpoints.len());
        let mut next = 0;
        let mut steps = 0u64;
        while next < p.checkpoints.len() {
            let target = p.checkpoints[next];
            let mut h = p.dt;
            if p.envelope.singular_at_zero() {
                h = h.min(p.growth * t);
            }
            if t + h >= target - 1e-12 * target {
                h = target - t;
            }
            self.react(&mut v, t, 0.5 * h);
            self.transport(&mut v, t, h);
            self.react(&mut v, t + 0.5 * h, 0.5 * h);
            t = if t + h >= target - 1e-12 * target {
                target
            } else {
                t + h
            };
            if p.envelope.saturates_left() {
                v[0] = (-p.envelope.log_lin(self.x_lo, t)).exp();
            }
            steps += 1;
            self.check(&v, steps, t)?;
            if t == target {
                let log_v: Vec<f64> = v.iter().map(|x| x.ln()).collect();
                self.check_tail(&log_v, t)?;
                checkpoints.push(Checkpoint { t, log_v });
                next += 1;
            }
        }
        Ok(KppField {
            x_lo: self.x_lo,
            dx: p.dx,
            len: self.n,
            envelope: p.envelope,
            checkpoints,
            dt: p.dt,
            steps,
            method: "factored-strang-trbdf2".into(),
        })
    }
}

/// Solves the Fisher-KPP equation and stores `log u` at the checkpoints.
pub fn solve_kpp(params: &KppParams) -> Result<KppField> {
    params.validate()?;
    Solver::new(params).run()
}

/// Independent solves (e.g. refinement runs) on the worker pool.
pub fn solve_many(params: &[KppParams]) -> Vec<Result<KppField>> {
    map_replicas(params.len() as u64, |k| solve_kpp(&params[k as usize]))
}

/// `log P(M_t > sqrt2 rho t)` at checkpoint `t`.
pub fn front_tail(field: &KppField, rho: f64, t: f64) -> Result<f64> {
    ensure(rho >= 1.0, || format!("rho must be >= 1, got {rho}"))?;
    field.log_tail_at(SQRT_2 * rho * t, t)
}

/// `c(t) = rho sqrt(t) exp((rho^2 - 1) t + log u(sqrt2 rho t, t))`.
pub fn c_of_t(field: &KppField, rho: f64, t: f64) -> Result<f64> {
    let w = front_tail(field, rho, t)?;
    Ok(rho * t.sqrt() * ((rho * rho - 1.0) * t + w).exp())
}

fn richardson(t0: f64, c0: f64, t1: f64, c1: f64) -> f64 {
    // C + a/t through two points
    (t1 * c1 - t0 * c0) / (t1 - t0)
}

/// Extrapolates `c(t)` to `t = inf` with the model `C + a/t` fitted on the
/// last three checkpoints of `t_list`. The uncertainty is the spread of the
/// last two pairwise extrapolations.
pub fn estimate_c_pde(field: &KppField, rho: f64, t_list: &[f64]) -> Result<EstimatorResult> {
    ensure(rho > 1.0, || format!("rho must be > 1, got {rho}"))?;
    ensure(t_list.len() >= 2, || "need at least two checkpoints".into())?;
    ensure(t_list.windows(2).all(|w| w[0] < w[1]), || {
        "checkpoint times must increase".into()
    })?;
    let cs = t_list
        .iter()
        .map(|&t| c_of_t(field, rho, t))
        .collect::<Result<Vec<_>>>()?;
    for k in 2..cs.len() {
        let d1 = (cs[k - 1] - cs[k - 2]).abs() / (t_list[k - 1] - t_list[k - 2]);
        let d2 = (cs[k] - cs[k - 1]).abs() / (t_list[k] - t_list[k - 1]);
        // growing changes are tolerated while they stay below 1e-3 of c per unit time
        if d2 > d1 * (1.0 + 1e-6) && d2 > 1e-3 * cs[k].abs() {
            return Err(Error::NumericalFailure(format!(
                "c(t) not converging at rho = {rho}: successive changes {d1:e}, {d2:e} per unit time near t = {}",
                t_list[k]
            )));
        }
    }
    let m = cs.len();
    let (estimate, stderr) = if m == 2 {
        let r = richardson(t_list[0], cs[0], t_list[1], cs[1]);
        (r, (r - cs[1]).abs())
    } else {
        let ts = &t_list[m - 3..];
        let ys = &cs[m - 3..];
        let xs: Vec<f64> = ts.iter().map(|t| 1.0 / t).collect();
        let (_, intercept, _) = crate::stats::linear_fit(&xs, ys);
        let r1 = richardson(ts[0], ys[0], ts[1], ys[1]);
        let r2 = richardson(ts[1], ys[1], ts[2], ys[2]);
        (intercept, (r2 - r1).abs())
    };
    Ok(EstimatorResult {
        estimate,
        stderr,
        n_samples: m as u64,
        n_accepted: m as u64,
        pruned_mass: 0.0,
        warning: None,
    })
}

/// `Phi(2 rho) = C sqrt(4 pi) / rho`, the other normalisation of the same constant.
pub fn phi_conversion(c_value: f64, rho: f64) -> Result<f64> {
    ensure(rho > 1.0, || format!("rho must be > 1, got {rho}"))?;
    Ok(c_value * (4.0 * PI).sqrt() / rho)
}

/// Inverse of [`phi_conversion`].
pub fn c_from_phi(phi: f64, rho: f64) -> Result<f64> {
    ensure(rho > 1.0, || format!("rho must be > 1, got {rho}"))?;
    Ok(phi * rho * INV_SQRT_4PI)
}
