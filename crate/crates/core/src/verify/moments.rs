//! Moment identities and the centred maximum.

use super::{z_score, CheckReport, TestFunction};
use crate::cloud::{default_node_budget, walk, LineageVisitor, DEFAULT_HORIZON_CAP};
use crate::error::{ensure, Result};
use crate::measure::{Centering, CenteringScheme};
use crate::numerics::{gaussian_expectation, GaussLegendre, SQRT_2};
use crate::par::try_map_replicas;
use crate::rng::StreamRng;
use crate::sampling::{pair_covariance, SpringParams};
use crate::stats::{ks_critical, ks_statistic, linear_fit, median, MeanVar};
use serde_json::json;

/// Finite-horizon allowance on the KS distance of the centred maximum.
pub const MAX_LAW_ALLOWANCE: f64 = 0.05;
/// Finite-horizon allowance on `|e^{sqrt2 z} E Z_t(z) - 1|`.
pub const FIRST_MOMENT_ALLOWANCE: f64 = 0.2;
/// Allowed deviation of the log-gap slope from `-2 sqrt2`.
pub const GAP_SLOPE_ALLOWANCE: f64 = 0.5;

fn check_horizon(t: f64, max: f64) -> Result<()> {
    ensure(t > 0.0 && t <= max, || {
        format!("horizon must lie in (0, {max}], got {t}")
    })
}

fn check_replicas(n: u64) -> Result<()> {
    ensure(n >= 2, || format!("need at least 2 replicas, got {n}"))
}

struct SumOf<'a> {
    f: &'a TestFunction,
    lam: f64,
    sum: f64,
}

impl LineageVisitor for SumOf<'_> {
    fn leaf(&mut self, x: f64) {
        self.sum += self.f.eval(self.lam * x);
    }
}

/// `sum_u f(lambda X_t(u))` for each replica.
fn replica_sums(mu: f64, t: f64, f: &TestFunction, n: u64, rng: &StreamRng) -> Result<Vec<f64>> {
    let spring = SpringParams::new(mu, t)?;
    let lam = spring.normalization();
    let budget = default_node_budget(t);
    try_map_replicas(n, |k| {
        let mut v = SumOf { f, lam, sum: 0.0 };
        walk(spring, 0.0, 0.0, &rng.split(k), budget, &mut v)?;
        Ok(v.sum)
    })
}

/// `e^t E[f(N(0, t))]`.
pub fn many_to_one_target(t: f64, f: &TestFunction) -> f64 {
    t.exp() * gaussian_expectation(|x| f.eval(x), 0.0, t.sqrt(), &f.breaks())
}

/// Replica mean of `sum_u f` (normalised positions) against `e^t E f(N(0, t))`.
pub fn check_many_to_one(mu: f64, t: f64, f: &TestFunction, n: u64, rng: &StreamRng) -> Result<CheckReport> {
    check_horizon(t, 6.0)?;
    check_replicas(n)?;
    f.validate()?;
    let acc: MeanVar = replica_sums(mu, t, f, n, rng)?.into_iter().collect();
    let target = many_to_one_target(t, f);
    Ok(CheckReport::new(
        format!("many_to_one[mu={mu},t={t},f={f}]"),
        z_score(acc.mean(), target, acc.stderr()),
        4.0,
        n,
        json!({ "mean": acc.mean(), "stderr": acc.stderr(), "target": target }),
    ))
}

/// `E[f(Y1) f(Y2)]` for centred normals with variance `t` and covariance `c`.
fn pair_moment(t: f64, c: f64, f: &TestFunction) -> f64 {
    let c = c.clamp(0.0, t);
    let (common, own) = (c.sqrt(), (t - c).sqrt());
    let breaks = f.breaks();
    gaussian_expectation(
        |w| {
            let g = gaussian_expectation(|x| f.eval(x), common * w, own, &breaks);
            g * g
        },
        0.0,
        1.0,
        &[],
    )
}

/// `e^t E[f^2] + 2 int_0^t e^{2t - s} E[f(Y1) f(Y2)] ds`, where the two
/// normalised positions split at time `s`.
pub fn many_to_two_target(mu: f64, t: f64, f: &TestFunction) -> Result<f64> {
    pair_covariance(mu, t, t)?;
    let breaks = f.breaks();
    let diag = t.exp() * gaussian_expectation(|x| f.eval(x).powi(2), 0.0, t.sqrt(), &breaks);
    let rule = GaussLegendre::new(24);
    let cross = rule.integrate(
        |s| {
            let c = pair_covariance(mu, t, s).unwrap_or(0.0);
            (2.0 * t - s).exp() * pair_moment(t, c, f)
        },
        0.0,
        t,
        4,
    );
    Ok(diag + 2.0 * cross)
}

/// Replica mean of `(sum_u f)^2` against [`many_to_two_target`].
pub fn check_many_to_two(mu: f64, t: f64, f: &TestFunction, n: u64, rng: &StreamRng) -> Result<CheckReport> {
    check_horizon(t, 2.0)?;
    check_replicas(n)?;
    f.validate()?;
    let acc: MeanVar = replica_sums(mu, t, f, n, rng)?.into_iter().map(|s| s * s).collect();
    let target = many_to_two_target(mu, t, f)?;
    Ok(CheckReport::new(
        format!("many_to_two[mu={mu},t={t},f={f}]"),
        z_score(acc.mean(), target, acc.stderr()),
        4.0,
        n,
        json!({ "mean": acc.mean(), "stderr": acc.stderr(), "target": target }),
    ))
}

/// Centred maxima and level counts `Z_t(z)` of independent clouds.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremalSample {
    pub mu: f64,
    pub t: f64,
    pub scheme: CenteringScheme,
    pub z_grid: Vec<f64>,
    pub maxima: Vec<f64>,
    /// `counts[k][j]` is the number of atoms `>= z_grid[j]` in replica `k`.
    pub counts: Vec<Vec<u32>>,
}

struct Extremes<'a> {
    lam: f64,
    m: f64,
    grid: &'a [f64],
    max: f64,
    counts: Vec<u32>,
}

impl LineageVisitor for Extremes<'_> {
    fn leaf(&mut self, x: f64) {
        let y = self.lam * x - self.m;
        self.max = self.max.max(y);
        for (c, &z) in self.counts.iter_mut().zip(self.grid) {
            *c += (y >= z) as u32;
        }
    }
}

/// Simulates `n` clouds and records the centred maximum and `Z_t(z)` on `z_grid`.
pub fn extremal_sample(
    mu: f64,
    t: f64,
    n: u64,
    z_grid: &[f64],
    scheme: CenteringScheme,
    rng: &StreamRng,
) -> Result<ExtremalSample> {
    check_horizon(t, DEFAULT_HORIZON_CAP)?;
    check_replicas(n)?;
    let spring = SpringParams::new(mu, t)?;
    let lam = spring.normalization();
    let m = Centering::new(scheme, t).value();
    let budget = default_node_budget(t);
    let rows = try_map_replicas(n, |k| {
        let mut v = Extremes {
            lam,
            m,
            grid: z_grid,
            max: f64::NEG_INFINITY,
            counts: vec![0; z_grid.len()],
        };
        walk(spring, 0.0, 0.0, &rng.split(k), budget, &mut v)?;
        Ok((v.max, v.counts))
    })?;
    let (maxima, counts) = rows.into_iter().unzip();
    Ok(ExtremalSample {
        mu,
        t,
        scheme,
        z_grid: z_grid.to_vec(),
        maxima,
        counts,
    })
}

/// `(1 + e^{-sqrt2 z})^{-1}`.
pub fn limit_cdf(z: f64) -> f64 {
    1.0 / (1.0 + (-SQRT_2 * z).exp())
}

fn ks_of(sample: &ExtremalSample) -> f64 {
    let mut m = sample.maxima.clone();
    ks_statistic(&mut m, limit_cdf)
}

/// KS distance of the centred maxima from [`limit_cdf`]. The empirical
/// distance exceeds the true one by at most the KS critical value, so the
/// threshold is `allowance` plus the 1% critical value.
pub fn max_limit_report(sample: &ExtremalSample, allowance: f64) -> CheckReport {
    let n = sample.maxima.len();
    let ks = ks_of(sample);
    let critical = ks_critical(n, 0.01);
    CheckReport::new(
        format!("max_limit_law[mu={},t={}]", sample.mu, sample.t),
        ks,
        allowance + critical,
        n as u64,
        json!({ "median": median(&sample.maxima), "ks_critical_1pct": critical, "allowance": allowance }),
    )
}

pub fn check_max_limit_law(mu: f64, t: f64, n: u64, rng: &StreamRng) -> Result<CheckReport> {
    ensure(mu > 0.0, || format!("spring constant must be > 0, got {mu}"))?;
    let s = extremal_sample(mu, t, n, &[], CenteringScheme::BouTilde, rng)?;
    Ok(max_limit_report(&s, MAX_LAW_ALLOWANCE))
}

/// Passes if the KS distance at the later horizon is below the earlier one.
pub fn max_law_trend_report(early: &ExtremalSample, late: &ExtremalSample) -> CheckReport {
    let (a, b) = (ks_of(early), ks_of(late));
    CheckReport::new(
        format!("max_limit_trend[mu={},t={}->{}]", late.mu, early.t, late.t),
        b - a,
        0.0,
        late.maxima.len() as u64,
        json!({ "ks_early": a, "ks_late": b }),
    )
}

fn count_stats(sample: &ExtremalSample, j: usize) -> (MeanVar, MeanVar) {
    let mut first = MeanVar::new();
    let mut gap = MeanVar::new();
    for row in &sample.counts {
        let z = row[j] as f64;
        first.push(z);
        gap.push(z * z - z);
    }
    (first, gap)
}

/// `max_z |e^{sqrt2 z} mean Z_t(z) - 1|` against `allowance` widened by three
/// standard errors of the largest one.
pub fn first_moment_report(sample: &ExtremalSample, allowance: f64) -> CheckReport {
    let mut worst = 0.0f64;
    let mut worst_se = 0.0;
    let mut rows = Vec::new();
    for (j, &z) in sample.z_grid.iter().enumerate() {
        let (acc, _) = count_stats(sample, j);
        let scale = (SQRT_2 * z).exp();
        let dev = (scale * acc.mean() - 1.0).abs();
        let se = scale * acc.stderr();
        if dev >= worst {
            worst = dev;
            worst_se = se;
        }
        rows.push(json!({ "z": z, "scaled_mean": scale * acc.mean(), "stderr": se }));
    }
    CheckReport::new(
        format!("first_moment[mu={},t={}]", sample.mu, sample.t),
        worst,
        allowance + 3.0 * worst_se,
        sample.maxima.len() as u64,
        json!({ "levels": rows, "allowance": allowance }),
    )
}

pub fn check_first_moment(mu: f64, t: f64, z_grid: &[f64], n: u64, rng: &StreamRng) -> Result<CheckReport> {
    ensure(!z_grid.is_empty(), || "empty level grid".into())?;
    ensure(z_grid.iter().all(|z| z.abs() <= t.powf(0.49)), || {
        format!("levels must satisfy |z| <= t^0.49 = {}", t.powf(0.49))
    })?;
    let s = extremal_sample(mu, t, n, z_grid, CenteringScheme::BouTilde, rng)?;
    Ok(first_moment_report(&s, FIRST_MOMENT_ALLOWANCE))
}

/// Slope of `log(E[Z^2] - E[Z])` against `z`, compared with `-2 sqrt2`.
/// A non-positive gap estimate makes the check inconclusive.
pub fn second_moment_gap_report(sample: &ExtremalSample) -> CheckReport {
    let name = format!("second_moment_gap[mu={},t={}]", sample.mu, sample.t);
    let n = sample.maxima.len() as u64;
    let mut logs = Vec::new();
    let mut rows = Vec::new();
    for (j, &z) in sample.z_grid.iter().enumerate() {
        let (_, gap) = count_stats(sample, j);
        rows.push(json!({ "z": z, "gap": gap.mean(), "stderr": gap.stderr() }));
        logs.push(gap.mean().ln());
    }
    if logs.iter().any(|l| !l.is_finite()) {
        return CheckReport::inconclusive(name, GAP_SLOPE_ALLOWANCE, n, json!({ "levels": rows }));
    }
    let (slope, _, se) = linear_fit(&sample.z_grid, &logs);
    CheckReport::new(
        name,
        (slope + 2.0 * SQRT_2).abs(),
        GAP_SLOPE_ALLOWANCE,
        n,
        json!({ "slope": slope, "slope_stderr": se, "levels": rows }),
    )
}

pub fn check_second_moment_gap(mu: f64, t: f64, z_grid: &[f64], n: u64, rng: &StreamRng) -> Result<CheckReport> {
    ensure(z_grid.len() >= 2, || "need at least two levels".into())?;
    ensure(z_grid.iter().all(|z| (0.5..=2.5).contains(z)), || {
        "levels must lie in [0.5, 2.5]".into()
    })?;
    let s = extremal_sample(mu, t, n, z_grid, CenteringScheme::BouTilde, rng)?;
    Ok(second_moment_gap_report(&s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn one_point_targets_in_closed_form() {
        let t: f64 = 3.0;
        let one = TestFunction::Indicator { a: f64::NEG_INFINITY };
        assert_relative_eq!(many_to_one_target(t, &one), t.exp(), max_relative = 1e-10);
        let beta = 0.7;
        let e = TestFunction::ExponentialWindow {
            beta,
            a: f64::NEG_INFINITY,
        };
        assert_relative_eq!(
            many_to_one_target(t, &e),
            (t + 0.5 * beta * beta * t).exp(),
            max_relative = 1e-10
        );
        let ind = TestFunction::Indicator { a: 1.0 };
        let exact = t.exp() * crate::numerics::normal_sf(1.0 / t.sqrt());
        assert_relative_eq!(many_to_one_target(t, &ind), exact, max_relative = 1e-10);
    }

    #[test]
    fn two_point_targets_in_closed_form() {
        let t: f64 = 1.5;
        let one = TestFunction::Indicator { a: f64::NEG_INFINITY };
        let yule = 2.0 * (2.0 * t).exp() - t.exp();
        assert_relative_eq!(many_to_two_target(1.0, t, &one).unwrap(), yule, max_relative = 1e-10);
        // exp(beta x): E[e^{beta(Y1 + Y2)}] = e^{beta^2 (t + c)}
        let beta: f64 = 0.5;
        let mu = 1.0;
        let e = TestFunction::ExponentialWindow {
            beta,
            a: f64::NEG_INFINITY,
        };
        let rule = GaussLegendre::new(40);
        let cross = rule.integrate(
            |s| (2.0 * t - s).exp() * (beta * beta * (t + pair_covariance(mu, t, s).unwrap())).exp(),
            0.0,
            t,
            8,
        );
        let exact = t.exp() * (2.0 * beta * beta * t).exp() + 2.0 * cross;
        assert_relative_eq!(many_to_two_target(mu, t, &e).unwrap(), exact, max_relative = 1e-9);
    }

    #[test]
    fn strong_spring_decorrelates() {
        // for large mu the cross term tends to the product of one-point moments
        let t: f64 = 1.5;
        let f = TestFunction::Indicator { a: 0.5 };
        let single = gaussian_expectation(|x| f.eval(x), 0.0, t.sqrt(), &f.breaks());
        let decoupled = t.exp() * single + 2.0 * ((2.0 * t).exp() - t.exp()) * single * single;
        let rel = |mu: f64| (many_to_two_target(mu, t, &f).unwrap() / decoupled - 1.0).abs();
        assert!(rel(50.0) < 0.01);
        assert!(rel(50.0) < rel(5.0) && rel(5.0) < rel(0.5));
    }

    #[test]
    fn limit_cdf_median() {
        assert_eq!(limit_cdf(0.0), 0.5);
    }

    #[test]
    fn many_to_one_passes() {
        let rng = StreamRng::new(21, 0);
        for f in [
            TestFunction::Indicator { a: f64::NEG_INFINITY },
            TestFunction::ExponentialWindow {
                beta: 0.5,
                a: f64::NEG_INFINITY,
            },
            TestFunction::Indicator { a: 1.0 },
        ] {
            let r = check_many_to_one(1.0, 2.0, &f, 20_000, &rng).unwrap();
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn many_to_two_passes() {
        let r = check_many_to_two(
            1.0,
            1.0,
            &TestFunction::Indicator { a: 0.0 },
            20_000,
            &StreamRng::new(22, 0),
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn preconditions() {
        let rng = StreamRng::new(0, 0);
        let f = TestFunction::Indicator { a: 0.0 };
        assert!(check_many_to_one(1.0, 7.0, &f, 10, &rng).is_err());
        assert!(check_many_to_two(1.0, 3.0, &f, 10, &rng).is_err());
        assert!(check_first_moment(1.0, 4.0, &[3.0], 10, &rng).is_err());
        assert!(check_second_moment_gap(1.0, 4.0, &[0.0, 1.0], 10, &rng).is_err());
    }

    #[test]
    fn empty_gap_is_inconclusive() {
        let s = ExtremalSample {
            mu: 1.0,
            t: 3.0,
            scheme: CenteringScheme::BouTilde,
            z_grid: vec![0.5, 2.5],
            maxima: vec![-1.0; 4],
            counts: vec![vec![1, 0]; 4],
        };
        let r = second_moment_gap_report(&s);
        assert_eq!(r.status, super::super::Status::Inconclusive);
        assert!(!r.failed());
    }
}
