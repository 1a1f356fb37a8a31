//! Exact Gaussian and Ornstein-Uhlenbeck transition laws, normalisation
//! constants, covariances and analytic tail bounds.
//!
//! Every formula with a `2 mu s` (or `2 gamma`) denominator goes through
//! [`rel_expm1`], which switches to a 4th-order Taylor expansion for arguments
//! below [`TAYLOR_THRESHOLD`] so that `mu = 0` is the exact Brownian limit
//! rather than `0/0`.

use crate::error::{ensure, invalid, Result};
use crate::numerics::SQRT_2PI;
use crate::rng::StreamRng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Below this value of `|2 mu s|` the Taylor branch is used.
pub const TAYLOR_THRESHOLD: f64 = 1e-6;

/// `expm1(a) / a`, continuous through `a = 0`.
pub fn rel_expm1(a: f64) -> f64 {
    if a.abs() < TAYLOR_THRESHOLD {
        1.0 + a / 2.0 * (1.0 + a / 3.0 * (1.0 + a / 4.0 * (1.0 + a / 5.0)))
    } else {
        a.exp_m1() / a
    }
}

/// A real number or `+infinity`, kept apart so that code dividing or dilating
/// by it must branch explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Extended {
    Finite(f64),
    Infinite,
}

impl Extended {
    pub fn from_f64(x: f64) -> Self {
        if x == f64::INFINITY {
            Extended::Infinite
        } else {
            Extended::Finite(x)
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Extended::Finite(x) => Some(x),
            Extended::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Extended::Infinite)
    }

    pub fn to_f64(self) -> f64 {
        match self {
            Extended::Finite(x) => x,
            Extended::Infinite => f64::INFINITY,
        }
    }
}

impl std::fmt::Display for Extended {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Extended::Finite(x) => write!(f, "{x}"),
            Extended::Infinite => f.write_str("inf"),
        }
    }
}

/// Spring constant and horizon of a branching OU run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpringParams {
    pub mu: f64,
    pub horizon_t: f64,
}

impl SpringParams {
    pub fn new(mu: f64, horizon_t: f64) -> Result<Self> {
        ensure(mu.is_finite() && mu >= 0.0, || {
            format!("spring constant must be finite and >= 0, got {mu}")
        })?;
        ensure(horizon_t.is_finite() && horizon_t > 0.0, || {
            format!("horizon must be finite and > 0, got {horizon_t}")
        })?;
        Ok(Self { mu, horizon_t })
    }

    /// Branching Brownian motion (`mu = 0`).
    pub fn brownian(horizon_t: f64) -> Result<Self> {
        Self::new(0.0, horizon_t)
    }

    /// `lambda_{mu t}`, the factor giving the normalised position variance `t`.
    pub fn normalization(&self) -> f64 {
        normalization_factor_unchecked(self.mu, self.horizon_t)
    }
}

/// `c_gamma` and `d_gamma` for a given `gamma = lim t mu_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaConstants {
    pub gamma: Extended,
    pub c_gamma: f64,
    pub d_gamma: Extended,
}

/// Lower and upper bounds on a Gaussian tail probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailBoundPair {
    pub lower: f64,
    pub upper: f64,
}

fn check_transition(mu: f64, s: f64) -> Result<()> {
    ensure(s >= 0.0 && s.is_finite(), || {
        format!("duration must be finite and >= 0, got {s}")
    })?;
    ensure(mu >= 0.0, || format!("spring constant must be >= 0, got {mu}"))
}

/// OU transition variance over a duration `s`, without argument checks.
#[inline]
pub(crate) fn ou_variance(mu: f64, s: f64) -> f64 {
    if mu == f64::INFINITY {
        return 0.0;
    }
    s * rel_expm1(-2.0 * mu * s)
}

/// Mean and variance of `X_s` given `X_0 = x` for `dX = -mu X ds + dB`.
///
/// `mu = +inf` is accepted and gives the degenerate law at 0 for `s > 0`.
pub fn ou_transition(x: f64, mu: f64, s: f64) -> Result<(f64, f64)> {
    check_transition(mu, s)?;
    if s == 0.0 {
        return Ok((x, 0.0));
    }
    Ok((x * (-mu * s).exp(), ou_variance(mu, s)))
}

/// One exact draw from the OU transition.
pub fn sample_ou_step(x: f64, mu: f64, s: f64, rng: &mut StreamRng) -> Result<f64> {
    let (m, v) = ou_transition(x, mu, s)?;
    if v == 0.0 {
        return Ok(m);
    }
    Ok(m + v.sqrt() * rng.normal())
}

#[inline]
pub(crate) fn normalization_factor_unchecked(mu: f64, t: f64) -> f64 {
    1.0 / rel_expm1(-2.0 * mu * t).sqrt()
}

/// `lambda_{mu t} = sqrt(2 mu t / (1 - e^{-2 mu t}))`.
pub fn normalization_factor(mu: f64, t: f64) -> Result<f64> {
    ensure(t > 0.0 && t.is_finite(), || format!("duration must be > 0, got {t}"))?;
    ensure(mu >= 0.0 && mu.is_finite(), || {
        format!("spring constant must be finite and >= 0, got {mu}")
    })?;
    Ok(normalization_factor_unchecked(mu, t))
}

#[inline]
pub(crate) fn pair_covariance_unchecked(mu: f64, t: f64, tau: f64) -> f64 {
    if tau == t {
        return t;
    }
    // t (e^{2 mu tau} - 1) / (e^{2 mu t} - 1), written to avoid overflow
    tau * rel_expm1(-2.0 * mu * tau) / rel_expm1(-2.0 * mu * t) * (-2.0 * mu * (t - tau)).exp()
}

/// Covariance of the normalised positions of two particles whose most recent
/// common ancestor lived until time `tau`.
pub fn pair_covariance(mu: f64, t: f64, tau: f64) -> Result<f64> {
    ensure(t > 0.0 && t.is_finite(), || format!("duration must be > 0, got {t}"))?;
    ensure(mu >= 0.0 && mu.is_finite(), || {
        format!("spring constant must be finite and >= 0, got {mu}")
    })?;
    ensure((0.0..=t).contains(&tau), || {
        format!("split time {tau} outside [0, {t}]")
    })?;
    Ok(pair_covariance_unchecked(mu, t, tau))
}

/// `c_gamma = sqrt(2 gamma / (e^{2 gamma} - 1))`, `d_gamma = sqrt(2 gamma / (1 - e^{-2 gamma}))`.
pub fn gamma_constants(gamma: Extended) -> Result<GammaConstants> {
    match gamma {
        Extended::Infinite => Ok(GammaConstants {
            gamma,
            c_gamma: 0.0,
            d_gamma: Extended::Infinite,
        }),
        Extended::Finite(g) => {
            ensure(g > 0.0 && !g.is_nan(), || format!("gamma must be > 0, got {g}"))?;
            if g == f64::INFINITY {
                return gamma_constants(Extended::Infinite);
            }
            Ok(GammaConstants {
                gamma,
                c_gamma: 1.0 / rel_expm1(2.0 * g).sqrt(),
                d_gamma: Extended::Finite(1.0 / rel_expm1(-2.0 * g).sqrt()),
            })
        }
    }
}

/// Classical bounds on `P(Z >= x)` for `x > 0`.
pub fn gaussian_tail_bounds(x: f64) -> Result<TailBoundPair> {
    ensure(x > 0.0, || format!("level must be > 0, got {x}"))?;
    let upper = (-0.5 * x * x).exp() / (x * SQRT_2PI);
    let lower = ((1.0 - 1.0 / (x * x)) * upper).max(0.0);
    Ok(TailBoundPair { lower, upper })
}

/// Upper bound on `P(X1 >= x, X2 >= x)` for standard Gaussians with correlation `alpha`.
pub fn bivariate_tail_bound(x: f64, alpha: f64) -> Result<f64> {
    ensure(x > 0.0, || format!("level must be > 0, got {x}"))?;
    if alpha == 1.0 {
        return Err(invalid("correlation 1 is degenerate"));
    }
    ensure((-1.0..1.0).contains(&alpha), || {
        format!("correlation must lie in [-1, 1), got {alpha}")
    })?;
    if alpha == -1.0 {
        return Ok(0.0);
    }
    let a1 = 1.0 + alpha;
    Ok(a1 * a1 * (-x * x / a1).exp() / (2.0 * PI * x * x * (1.0 - alpha * alpha).sqrt()))
}
