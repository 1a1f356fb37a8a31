//! Special functions, quadrature and a tridiagonal solver.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;
pub const SQRT_2PI: f64 = 2.506_628_274_631_000_7;
/// `1/sqrt(4 pi)`, the value of C at infinity.
pub const INV_SQRT_4PI: f64 = 0.282_094_791_773_878_14;

/// Standard normal density.
#[inline]
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_2PI
}

/// `P(Z >= z)` for a standard normal `Z`.
#[inline]
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

/// `P(Z <= z)`.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    normal_sf(-z)
}

// Laplace continued fraction for Phi_bar(z)/phi(z), good for z >= 6.
fn mills_ratio_cf(z: f64) -> f64 {
    let mut acc = z;
    for k in (1..=60).rev() {
        acc = z + k as f64 / acc;
    }
    1.0 / acc
}

/// `log P(Z >= z)`, accurate far into both tails.
pub fn log_normal_sf(z: f64) -> f64 {
    if z > 8.0 {
        -0.5 * z * z - (SQRT_2PI).ln() + mills_ratio_cf(z).ln()
    } else if z < -8.0 {
        (-normal_sf(-z)).ln_1p()
    } else {
        normal_sf(z).ln()
    }
}

/// Inverse Mills ratio `phi(z) / P(Z >= z)`.
pub fn normal_hazard(z: f64) -> f64 {
    if z > 8.0 {
        1.0 / mills_ratio_cf(z)
    } else {
        normal_pdf(z) / normal_sf(z)
    }
}

/// Nodes and weights of Gauss-Legendre quadrature on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1);
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let p = if n == 1 { x } else { p1 };
                let pm1 = if n == 1 { 1.0 } else { p0 };
                dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Integral over `[a, b]` split into `panels` equal panels.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64, panels: usize) -> f64 {
        if b <= a {
            return 0.0;
        }
        let h = (b - a) / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let lo = a + p as f64 * h;
            let mid = lo + 0.5 * h;
            let mut s = 0.0;
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                s += w * f(mid + 0.5 * h * x);
            }
            total += 0.5 * h * s;
        }
        total
    }
}

/// `E[f(mean + sd * Z)]` by piecewise Gauss-Legendre over +-14 sd, splitting
/// at `breaks` (discontinuities of `f`).
pub fn gaussian_expectation<F: Fn(f64) -> f64>(f: F, mean: f64, sd: f64, breaks: &[f64]) -> f64 {
    if sd <= 0.0 {
        return f(mean);
    }
    thread_local! {
        static RULE: GaussLegendre = GaussLegendre::new(24);
    }
    let lo = mean - 14.0 * sd;
    let hi = mean + 14.0 * sd;
    let mut cuts = vec![lo];
    cuts.extend(breaks.iter().copied().filter(|b| *b > lo && *b < hi));
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    RULE.with(|rule| {
        cuts.windows(2)
            .map(|w| {
                let panels = (((w[1] - w[0]) / sd).ceil() as usize).clamp(1, 64);
                rule.integrate(|x| f(x) * normal_pdf((x - mean) / sd) / sd, w[0], w[1], panels)
            })
            .sum()
    })
}

/// Solves `a_i x_{i-1} + b_i x_i + c_i x_{i+1} = d_i` in place (Thomas algorithm).
/// `a[0]` and `c[n-1]` are ignored. The solution overwrites `d`.
pub fn solve_tridiagonal(a: &[f64], b: &[f64], c: &[f64], d: &mut [f64], scratch: &mut Vec<f64>) {
    let n = d.len();
    scratch.clear();
    scratch.resize(n, 0.0);
    let cp = scratch;
    cp[0] = c[0] / b[0];
    d[0] /= b[0];
    for i in 1..n {
        let m = b[i] - a[i] * cp[i - 1];
        cp[i] = if i + 1 < n { c[i] / m } else { 0.0 };
        d[i] = (d[i] - a[i] * d[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        d[i] -= cp[i] * d[i + 1];
    }
}
