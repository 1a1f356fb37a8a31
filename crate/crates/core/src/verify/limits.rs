//! Comparison and limit checks: Slepian ordering across spring constants, the
//! i.i.d. Gaussian limit, the spine identity and the limiting process.

use super::{laplace_functional, z_score, CheckReport, TestFunction};
use crate::cloud::{default_node_budget, walk, LineageVisitor, ParticleCloud, DEFAULT_HORIZON_CAP};
use crate::error::{ensure, Error, Result};
use crate::measure::{Centering, CenteringScheme, PointMeasure};
use crate::numerics::{normal_sf, GaussLegendre, INV_SQRT_4PI, SQRT_2, SQRT_2PI};
use crate::par::try_map_replicas;
use crate::rng::StreamRng;
use crate::sampling::{Extended, SpringParams};
use crate::spine::{sample_limit_process, sample_spine, LimitProcessConfig, SpineConfig};
use crate::stats::{chi_square, proportion, MeanVar};
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use serde_json::json;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Laplace functionals of the centred clouds for each spring constant in
/// `mu_list` (ascending, `inf` last if present), all on common Yule trees and
/// innovations. Passes if no adjacent pair increases by more than three
/// standard errors of the paired difference.
pub fn check_slepian_monotonicity(
    mu_list: &[Extended],
    phi: &TestFunction,
    t: f64,
    n: u64,
    rng: &StreamRng,
) -> Result<CheckReport> {
    ensure(!mu_list.is_empty(), || "empty spring constant list".into())?;
    ensure(mu_list.windows(2).all(|w| w[0].to_f64() < w[1].to_f64()), || {
        "spring constants must increase".into()
    })?;
    ensure(mu_list.iter().all(|m| m.to_f64() >= 0.0), || {
        "spring constants must be >= 0".into()
    })?;
    ensure(t > 0.0 && t <= DEFAULT_HORIZON_CAP, || {
        format!("horizon must lie in (0, {DEFAULT_HORIZON_CAP}]")
    })?;
    ensure(n >= 2, || "need at least 2 replicas".into())?;
    phi.validate()?;
    ensure(phi.is_nondecreasing(), || format!("{phi} is not non-decreasing"))?;
    let m = Centering::new(CenteringScheme::BouOnehalf, t).value();
    let rows = try_map_replicas(n, |k| {
        let base = ParticleCloud::simulate_capped(SpringParams::brownian(t)?, DEFAULT_HORIZON_CAP, &rng.split(k))?;
        mu_list
            .iter()
            .map(|mu| {
                let pos = match mu {
                    Extended::Infinite => base.iid_positions(),
                    Extended::Finite(mu) => base.repositioned(*mu)?.normalized_positions(),
                };
                let s: f64 = pos.iter().map(|x| phi.eval(x - m)).sum();
                Ok((-s).exp())
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let means: Vec<f64> = (0..mu_list.len())
        .map(|j| rows.iter().map(|r| r[j]).collect::<MeanVar>().mean())
        .collect();
    let mut worst = f64::NEG_INFINITY;
    let mut pairs = Vec::new();
    for j in 1..mu_list.len() {
        let d: MeanVar = rows.iter().map(|r| r[j] - r[j - 1]).collect();
        // an increase in mu must not increase the functional
        let z = if d.stderr() > 0.0 {
            d.mean() / d.stderr()
        } else if d.mean() > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        worst = worst.max(z);
        pairs.push(json!({ "from": mu_list[j - 1].to_string(), "to": mu_list[j].to_string(), "diff": d.mean(), "stderr": d.stderr() }));
    }
    let labels: Vec<String> = mu_list.iter().map(|m| m.to_string()).collect();
    Ok(CheckReport::new(
        format!("slepian[mu={},t={t},phi={phi}]", labels.join("|")),
        worst.max(0.0),
        3.0,
        n,
        json!({ "functionals": means, "pairs": pairs }),
    ))
}

/// `(1 + (2 pi)^{-1/2} int (1 - e^{-phi(y)}) e^{-sqrt2 y} dy)^{-1}`.
pub fn iid_laplace_target(phi: &TestFunction) -> Result<f64> {
    phi.validate()?;
    let a = phi.support_start();
    ensure(a.is_finite(), || {
        format!("{phi} must have support bounded from the left")
    })?;
    let rule = GaussLegendre::new(24);
    let mut cuts = vec![a];
    cuts.extend(phi.breaks().into_iter().filter(|&b| b > a));
    cuts.push(a + 40.0);
    let integral: f64 = cuts
        .windows(2)
        .map(|w| rule.integrate(|y| -(-phi.eval(y)).exp_m1() * (-SQRT_2 * y).exp(), w[0], w[1], 16))
        .sum();
    Ok(1.0 / (1.0 + integral / SQRT_2PI))
}

/// `N(0, 1)` conditioned to exceed `z0`.
fn tail_normal(z0: f64, r: &mut StreamRng) -> f64 {
    if z0 <= 0.5 {
        loop {
            let z = r.normal();
            if z >= z0 {
                return z;
            }
        }
    }
    // exponential proposal with the optimal rate
    let alpha = 0.5 * (z0 + (z0 * z0 + 4.0).sqrt());
    loop {
        let z = z0 + r.exp1() / alpha;
        if r.uniform() <= (-0.5 * (z - alpha) * (z - alpha)).exp() {
            return z;
        }
    }
}

/// Geometric leaf count on `{1, 2, ...}` with parameter `e^{-t}`.
fn yule_count(t: f64, r: &mut StreamRng) -> u64 {
    let u = 1.0 - r.uniform();
    1 + (u.ln() / (-(-t).exp()).ln_1p()).floor() as u64
}

/// Laplace functionals of the i.i.d. model (Yule leaf count, independent
/// `N(0, t)` positions, centring `sqrt2 t - log(t) / (2 sqrt2)`) against
/// [`iid_laplace_target`], within 0.05 absolute. Only the leaves above the
/// lowest support point of the battery are generated: their number is a
/// binomial thinning of the leaf count.
pub fn check_iid_limit(t: f64, n: u64, battery: &[TestFunction], rng: &StreamRng) -> Result<CheckReport> {
    ensure(t > 0.0 && t <= 700.0, || {
        format!("horizon must lie in (0, 700], got {t}")
    })?;
    ensure(n >= 2, || "need at least 2 replicas".into())?;
    ensure(!battery.is_empty(), || "empty battery".into())?;
    let targets = battery.iter().map(iid_laplace_target).collect::<Result<Vec<_>>>()?;
    let lo = battery.iter().map(|p| p.support_start()).fold(f64::INFINITY, f64::min);
    let m = Centering::new(CenteringScheme::BouOnehalf, t).value();
    let sd = t.sqrt();
    let z0 = (m + lo) / sd;
    let q = normal_sf(z0);
    let rows = try_map_replicas(n, |k| {
        let mut r = rng.split(k);
        let leaves = yule_count(t, &mut r);
        let above = Binomial::new(leaves, q)
            .map_err(|e| Error::NumericalFailure(format!("binomial({leaves}, {q}): {e}")))?
            .sample(&mut r);
        let atoms: Vec<f64> = (0..above).map(|_| sd * tail_normal(z0, &mut r) - m).collect();
        let measure = PointMeasure::from_atoms(atoms)?;
        Ok(battery
            .iter()
            .map(|p| laplace_functional(&measure, p))
            .collect::<Vec<f64>>())
    })?;
    let mut worst = 0.0f64;
    let mut items = Vec::new();
    for (j, phi) in battery.iter().enumerate() {
        let acc: MeanVar = rows.iter().map(|r| r[j]).collect();
        worst = worst.max((acc.mean() - targets[j]).abs());
        items.push(json!({ "phi": phi.to_string(), "mean": acc.mean(), "stderr": acc.stderr(), "target": targets[j] }));
    }
    Ok(CheckReport::new(
        format!("iid_limit[t={t}]"),
        worst,
        0.05,
        n,
        json!({ "battery": items }),
    ))
}

struct Count(u64);

impl LineageVisitor for Count {
    fn leaf(&mut self, _: f64) {
        self.0 += 1;
    }
}

/// Chi-square fit of simulated Yule leaf counts to the geometric law with
/// parameter `e^{-t}`, on about 20 equiprobable bins; threshold is the 99.9%
/// quantile.
pub fn check_yule_geometric(t: f64, n: u64, rng: &StreamRng) -> Result<CheckReport> {
    ensure(t > 0.0 && t <= DEFAULT_HORIZON_CAP, || {
        format!("horizon must lie in (0, {DEFAULT_HORIZON_CAP}]")
    })?;
    ensure(n >= 100, || "need at least 100 replicas".into())?;
    let spring = SpringParams::brownian(t)?;
    let budget = default_node_budget(t);
    let counts = try_map_replicas(n, |k| {
        let mut c = Count(0);
        walk(spring, 0.0, 0.0, &rng.split(k), budget, &mut c)?;
        Ok(c.0)
    })?;
    let q = -(-t).exp(); // log(1 - p) = ln_1p(-e^{-t})
    let log_keep = q.ln_1p();
    let cdf = |k: u64| -(k as f64 * log_keep).exp_m1();
    let bins = ((n as f64 / 5.0) as usize).clamp(2, 20);
    let mut edges: Vec<u64> = (1..bins)
        .map(|j| ((1.0 - j as f64 / bins as f64).ln() / log_keep).ceil().max(1.0) as u64)
        .collect();
    edges.dedup();
    // bins (edges[j-1], edges[j]] with edges[-1] = 0 and a final open bin
    let mut expected = Vec::with_capacity(edges.len() + 1);
    let mut prev = 0u64;
    for &e in &edges {
        expected.push(n as f64 * (cdf(e) - cdf(prev)));
        prev = e;
    }
    expected.push(n as f64 * (1.0 - cdf(prev)));
    let mut observed = vec![0u64; expected.len()];
    for &c in &counts {
        observed[edges.partition_point(|&e| e < c)] += 1;
    }
    let (stat, p) = chi_square(&observed, &expected, 0);
    let df = (expected.len() - 1) as f64;
    let threshold = ChiSquared::new(df)
        .map_err(|e| Error::NumericalFailure(format!("chi-square({df}): {e}")))?
        .inverse_cdf(0.999);
    Ok(CheckReport::new(
        format!("yule_geometric[t={t}]"),
        stat,
        threshold,
        n,
        json!({ "p_value": p, "bins": expected.len(), "mean_count": counts.iter().sum::<u64>() as f64 / n as f64 }),
    ))
}

/// Functionals of a point measure seen from its maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpineFunctional {
    One,
    /// `1{no atom in (lo, hi)}`.
    VoidInterval {
        lo: f64,
        hi: f64,
    },
    /// `exp(-sum phi)`.
    Laplace {
        phi: TestFunction,
    },
}

impl SpineFunctional {
    pub fn eval(&self, m: &PointMeasure) -> f64 {
        match self {
            SpineFunctional::One => 1.0,
            SpineFunctional::VoidInterval { lo, hi } => (m.count_open(*lo, *hi) == 0) as u8 as f64,
            SpineFunctional::Laplace { phi } => laplace_functional(m, phi),
        }
    }

    /// Lowest position the functional looks at.
    fn window(&self) -> f64 {
        match self {
            SpineFunctional::One => 0.0,
            SpineFunctional::VoidInterval { lo, .. } => *lo,
            SpineFunctional::Laplace { phi } => phi.support_start(),
        }
    }

    fn label(&self) -> String {
        match self {
            SpineFunctional::One => "one".into(),
            SpineFunctional::VoidInterval { lo, hi } => format!("void({lo},{hi})"),
            SpineFunctional::Laplace { phi } => format!("laplace({phi})"),
        }
    }
}

/// Both sides of the identity
/// `E[F(E*_t) 1{M_t >= sqrt2 rho t}] = e^{(1 - rho^2) t} E[e^{sqrt2 rho B_t} 1{B_t <= 0} F(D~_t) 1{D~_t(0, inf) = 0}]`,
/// where `E*_t` is the BBM seen from its maximum. Left: direct simulation;
/// right: the spine construction. Passes if every functional agrees within
/// four combined standard errors.
pub fn check_spine_identity(
    rho: f64,
    t: f64,
    battery: &[SpineFunctional],
    n: u64,
    rng: &StreamRng,
    cfg: &SpineConfig,
) -> Result<CheckReport> {
    ensure(rho >= 1.0 && rho.is_finite(), || format!("rho must be >= 1, got {rho}"))?;
    ensure(t > 0.0 && t <= 2.0, || format!("horizon must lie in (0, 2], got {t}"))?;
    ensure(n >= 2, || "need at least 2 replicas".into())?;
    ensure(!battery.is_empty(), || "empty battery".into())?;
    let window = battery.iter().map(|f| f.window()).fold(0.0f64, f64::min);
    ensure(window.is_finite(), || {
        "functionals must look at a bounded-below window".into()
    })?;
    let level = SQRT_2 * rho * t;
    let scale = (1.0 - rho * rho) * t;
    let spring = SpringParams::brownian(t)?;
    let rows = try_map_replicas(n, |k| {
        let r = rng.split(k);
        let cloud = ParticleCloud::simulate_capped(spring, DEFAULT_HORIZON_CAP, &r.split(0))?;
        let pos = cloud.leaf_positions();
        let top = pos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let left = if top >= level {
            let seen = PointMeasure::from_atoms(pos.iter().map(|x| x - top).filter(|&y| y >= window).collect())?;
            battery.iter().map(|f| f.eval(&seen)).collect()
        } else {
            vec![0.0; battery.len()]
        };
        let s = sample_spine(rho, t, window, &r.split(1), cfg)?;
        let b = s.spine_end;
        let right = if b <= 0.0 && s.count_above_zero == 0 {
            let w = (scale + SQRT_2 * rho * b).exp();
            battery.iter().map(|f| w * f.eval(&s.atoms)).collect()
        } else {
            vec![0.0; battery.len()]
        };
        Ok((left, right))
    })?;
    let mut worst = 0.0f64;
    let mut items = Vec::new();
    for (j, f) in battery.iter().enumerate() {
        let l: MeanVar = rows.iter().map(|r| r.0[j]).collect();
        let rr: MeanVar = rows.iter().map(|r| r.1[j]).collect();
        let se = (l.stderr().powi(2) + rr.stderr().powi(2)).sqrt();
        let z = z_score(l.mean(), rr.mean(), se);
        worst = worst.max(z);
        items.push(json!({
            "functional": f.label(),
            "direct": l.mean(), "direct_stderr": l.stderr(),
            "spine": rr.mean(), "spine_stderr": rr.stderr(),
        }));
    }
    Ok(CheckReport::new(
        format!("spine_identity[rho={rho},t={t}]"),
        worst,
        4.0,
        n,
        json!({ "battery": items }),
    ))
}

/// `P(no atom >= z) = (1 + e^{-sqrt2 z} / sqrt(4 pi))^{-1}` for the process
/// with intensity `sqrt2 W e^{-sqrt2 x} dx / sqrt(4 pi)`, `W ~ Exp(1)`.
pub fn limit_void_target(z: f64) -> f64 {
    1.0 / (1.0 + INV_SQRT_4PI * (-SQRT_2 * z).exp())
}

/// Empirical void probabilities of `sample_limit_process(inf, ...)` against
/// [`limit_void_target`], within three standard errors per level.
pub fn check_limit_process_void(z_grid: &[f64], n: u64, rng: &StreamRng) -> Result<CheckReport> {
    ensure(!z_grid.is_empty(), || "empty level grid".into())?;
    ensure(z_grid.iter().all(|z| z.is_finite()), || "levels must be finite".into())?;
    ensure(n >= 2, || "need at least 2 replicas".into())?;
    let window = z_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let cfg = LimitProcessConfig::default();
    let rows = try_map_replicas(n, |k| {
        let s = sample_limit_process(Extended::Infinite, window, &cfg, &rng.split(k))?;
        Ok(z_grid
            .iter()
            .map(|&z| s.atoms.count_above(z) == 0)
            .collect::<Vec<bool>>())
    })?;
    let mut worst = 0.0f64;
    let mut items = Vec::new();
    for (j, &z) in z_grid.iter().enumerate() {
        let hits = rows.iter().filter(|r| r[j]).count() as u64;
        let (p, se) = proportion(hits, n);
        let target = limit_void_target(z);
        let se = se.max((target * (1.0 - target) / n as f64).sqrt());
        worst = worst.max(z_score(p, target, se));
        items.push(json!({ "z": z, "empirical": p, "target": target }));
    }
    Ok(CheckReport::new(
        "limit_process_void[gamma=inf]",
        worst,
        3.0,
        n,
        json!({ "levels": items }),
    ))
}
