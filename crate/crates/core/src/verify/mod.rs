//! Statistical checks of the moment identities and limit theorems.
//!
//! Every check reduces to one statistic compared with a threshold and returns
//! a [`CheckReport`]; `passed` is exactly `statistic <= threshold`. Replica
//! `k` of a check always uses `rng.split(k)`, so reports depend only on the
//! seed and the parameters.

mod limits;
mod moments;
mod suite;

pub use limits::{
    check_iid_limit, check_limit_process_void, check_slepian_monotonicity, check_spine_identity, check_yule_geometric,
    iid_laplace_target, limit_void_target, SpineFunctional,
};
pub use moments::{
    check_first_moment, check_many_to_one, check_many_to_two, check_max_limit_law, check_second_moment_gap,
    extremal_sample, first_moment_report, limit_cdf, many_to_one_target, many_to_two_target, max_law_trend_report,
    max_limit_report, second_moment_gap_report, ExtremalSample, FIRST_MOMENT_ALLOWANCE, GAP_SLOPE_ALLOWANCE,
    MAX_LAW_ALLOWANCE,
};
pub use suite::{iid_battery, moment_battery, run_suite, spine_battery, suite_names, Suite};

use crate::error::{ensure, Result};
use crate::measure::PointMeasure;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Passed,
    Failed,
    /// The statistic could not be formed (noise-dominated estimate).
    Inconclusive,
}

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub n: u64,
    pub passed: bool,
    pub status: Status,
    pub details: Value,
}

impl CheckReport {
    pub fn new(name: impl Into<String>, statistic: f64, threshold: f64, n: u64, details: Value) -> Self {
        let passed = statistic <= threshold;
        Self {
            name: name.into(),
            statistic,
            threshold,
            n,
            passed,
            status: if passed { Status::Passed } else { Status::Failed },
            details,
        }
    }

    /// A check whose statistic is undefined; `statistic` is NaN.
    pub fn inconclusive(name: impl Into<String>, threshold: f64, n: u64, details: Value) -> Self {
        Self {
            name: name.into(),
            statistic: f64::NAN,
            threshold,
            n,
            passed: false,
            status: Status::Inconclusive,
            details,
        }
    }

    pub fn failed(&self) -> bool {
        self.status == Status::Failed
    }
}

/// `|observed - target|` in units of `stderr`; a zero `stderr` gives 0 on
/// exact agreement and infinity otherwise.
pub(crate) fn z_score(observed: f64, target: f64, stderr: f64) -> f64 {
    let d = (observed - target).abs();
    if stderr > 0.0 {
        d / stderr
    } else if d == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Test functions with support bounded from the left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// 0 below `y`, `height` above `y + eps`, a cubic smoothstep in between.
    /// `y = -inf` gives the constant `height`.
    SmoothStep { y: f64, eps: f64, height: f64 },
    /// `e^{beta x}` for `x >= a`, 0 below.
    ExponentialWindow { beta: f64, a: f64 },
    /// `1{x >= a}`.
    Indicator { a: f64 },
}

impl TestFunction {
    pub fn smooth_step(y: f64, eps: f64) -> Self {
        TestFunction::SmoothStep { y, eps, height: 1.0 }
    }

    pub fn constant(c: f64) -> Self {
        TestFunction::SmoothStep {
            y: f64::NEG_INFINITY,
            eps: 1.0,
            height: c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TestFunction::SmoothStep { y, eps, height } => {
                ensure(y < f64::INFINITY && !y.is_nan(), || {
                    format!("smooth step location {y} invalid")
                })?;
                ensure(eps > 0.0 && eps.is_finite(), || {
                    format!("smooth step width must be > 0, got {eps}")
                })?;
                ensure(height >= 0.0 && height.is_finite(), || {
                    format!("plateau must be finite and >= 0, got {height}")
                })
            }
            TestFunction::ExponentialWindow { beta, a } => {
                ensure(beta.is_finite(), || format!("beta must be finite, got {beta}"))?;
                ensure(a < f64::INFINITY && !a.is_nan(), || format!("window start {a} invalid"))
            }
            TestFunction::Indicator { a } => ensure(a < f64::INFINITY && !a.is_nan(), || {
                format!("indicator level {a} invalid")
            }),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            TestFunction::SmoothStep { y, eps, height } => {
                if x <= y {
                    0.0
                } else if x >= y + eps {
                    height
                } else {
                    let u = (x - y) / eps;
                    height * u * u * (3.0 - 2.0 * u)
                }
            }
            TestFunction::ExponentialWindow { beta, a } => {
                if x >= a {
                    (beta * x).exp()
                } else {
                    0.0
                }
            }
            TestFunction::Indicator { a } => {
                if x >= a {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Infimum of the support.
    pub fn support_start(&self) -> f64 {
        match *self {
            TestFunction::SmoothStep { y, .. } => y,
            TestFunction::ExponentialWindow { a, .. } | TestFunction::Indicator { a } => a,
        }
    }

    /// Points where the function or its derivative jumps.
    pub fn breaks(&self) -> Vec<f64> {
        let v = match *self {
            TestFunction::SmoothStep { y, eps, .. } => vec![y, y + eps],
            TestFunction::ExponentialWindow { a, .. } | TestFunction::Indicator { a } => vec![a],
        };
        v.into_iter().filter(|b| b.is_finite()).collect()
    }

    pub fn is_nondecreasing(&self) -> bool {
        match *self {
            TestFunction::SmoothStep { .. } | TestFunction::Indicator { .. } => true,
            TestFunction::ExponentialWindow { beta, .. } => beta >= 0.0,
        }
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TestFunction::SmoothStep { y, eps, height } => write!(f, "smooth_step(y={y},eps={eps},h={height})"),
            TestFunction::ExponentialWindow { beta, a } => write!(f, "exponential_window(beta={beta},a={a})"),
            TestFunction::Indicator { a } => write!(f, "indicator(a={a})"),
        }
    }
}

/// `exp(-sum_atoms phi(atom))`.
pub fn laplace_functional(measure: &PointMeasure, phi: &TestFunction) -> f64 {
    let a = phi.support_start();
    let s: f64 = measure.atoms()[measure.len() - measure.count_above(a)..]
        .iter()
        .map(|&x| phi.eval(x))
        .sum();
    (-s).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn laplace_examples() {
        let phi = TestFunction::smooth_step(-1.0, 0.5);
        assert_eq!(laplace_functional(&PointMeasure::empty(), &phi), 1.0);
        let below = PointMeasure::from_atoms(vec![-5.0, -2.0]).unwrap();
        assert_eq!(laplace_functional(&below, &phi), 1.0);
        let zero = PointMeasure::from_atoms(vec![0.0]).unwrap();
        assert!((laplace_functional(&zero, &phi) - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn constant_function_counts_atoms() {
        let m = PointMeasure::from_atoms(vec![-100.0, 0.0, 3.0]).unwrap();
        let v = laplace_functional(&m, &TestFunction::constant(0.5));
        assert!((v - (-1.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn report_passes_iff_below_threshold() {
        assert!(CheckReport::new("a", 1.0, 1.0, 1, Value::Null).passed);
        assert!(!CheckReport::new("a", 1.1, 1.0, 1, Value::Null).passed);
        let r = CheckReport::inconclusive("b", 1.0, 1, Value::Null);
        assert!(!r.passed && !r.failed());
    }

    proptest! {
        #[test]
        fn smooth_step_shape(y in -5f64..5.0, eps in 0.01f64..3.0, h in 0f64..10.0, a in -10f64..10.0, b in -10f64..10.0) {
            let phi = TestFunction::SmoothStep { y, eps, height: h };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(phi.eval(lo) <= phi.eval(hi) + 1e-12);
            prop_assert!(phi.eval(y - 0.1) == 0.0);
            prop_assert!(phi.eval(y + eps + 0.1) == h);
            prop_assert!((0.0..=h).contains(&phi.eval(a)));
        }

        #[test]
        fn laplace_bounded(xs in prop::collection::vec(-10f64..10.0, 0..40), beta in 0f64..2.0, a in -3f64..3.0) {
            let m = PointMeasure::from_atoms(xs).unwrap();
            for phi in [TestFunction::ExponentialWindow { beta, a }, TestFunction::Indicator { a }, TestFunction::smooth_step(a, 1.0)] {
                let v = laplace_functional(&m, &phi);
                prop_assert!((0.0..=1.0).contains(&v));
                let direct = (-m.atoms().iter().map(|&x| phi.eval(x)).sum::<f64>()).exp();
                prop_assert!((v - direct).abs() <= 1e-12);
            }
        }
    }
}
