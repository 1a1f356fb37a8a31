use crate::args::*;
use crate::output::{num, open, Csv};
use branching_extremes::cloud::{additive_martingale, derivative_martingale, extremal_measure, simulate_cloud};
use branching_extremes::kpp::{c_of_t, estimate_c_pde, front_tail, phi_conversion, solve_kpp, KppParams};
use branching_extremes::measure::{Centering, CenteringScheme};
use branching_extremes::par::{map_replicas, try_map_replicas};
use branching_extremes::sampling::{gamma_constants, Extended, SpringParams};
use branching_extremes::spine::{
    estimate_c, estimate_c_curve, limit_process_c, sample_decoration, sample_limit_process, truncation_horizon,
    EstimatorResult, LimitProcessConfig, SpineConfig,
};
use branching_extremes::verify::{run_suite, Suite};
use branching_extremes::{Error, StreamRng};
use serde::Serialize;
use serde_json::{json, Value};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Failure of a command, mapped to an exit status by `main`.
#[derive(Debug)]
pub enum Failure {
    Core(Error),
    Io(std::io::Error),
    ChecksFailed(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

type Outcome = Result<(), Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Core(Error::InvalidArgument(msg.into()))
}

fn require(cond: bool, msg: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(invalid(msg()))
    }
}

/// Everything needed to reproduce an output: `--config` accepts this object.
fn echo<A: Serialize>(command: &str, seed: u64, args: &A) -> Value {
    let mut v = serde_json::to_value(args).expect("arguments serialize");
    let map = v.as_object_mut().expect("arguments are a struct");
    map.retain(|_, x| !x.is_null());
    map.insert("seed".into(), json!(seed));
    map.insert("command".into(), json!(command));
    v
}

pub struct Context {
    pub seed: u64,
    pub output: Option<PathBuf>,
}

impl Context {
    fn csv<A: Serialize>(&self, command: &str, args: &A, columns: &[&str]) -> std::io::Result<Csv> {
        Csv::new(open(self.output.as_deref())?, &echo(command, self.seed, args), columns)
    }

    fn rng(&self) -> StreamRng {
        StreamRng::from_seed(self.seed)
    }
}

fn write_summary(path: Option<&Path>, summary: &Value) -> Outcome {
    let text = serde_json::to_string_pretty(summary).expect("summary serializes");
    eprintln!("{text}");
    if let Some(p) = path {
        std::fs::write(p, text + "\n")?;
    }
    Ok(())
}

// estimate-c

fn rho_grid(a: &EstimateC) -> Result<Vec<f64>, Failure> {
    require(a.rho_min >= 1.0 && a.rho_min.is_finite(), || {
        format!("--rho-min must be >= 1, got {}", a.rho_min)
    })?;
    require(a.rho_max >= a.rho_min && a.rho_max.is_finite(), || {
        format!("--rho-max must be finite and >= --rho-min, got {}", a.rho_max)
    })?;
    require(a.steps >= 1, || "--steps must be >= 1".into())?;
    require(a.steps > 1 || a.rho_min == a.rho_max, || {
        "--steps 1 needs --rho-min equal to --rho-max".into()
    })?;
    if a.steps == 1 {
        return Ok(vec![a.rho_min]);
    }
    let h = (a.rho_max - a.rho_min) / (a.steps - 1) as f64;
    Ok((0..a.steps)
        .map(|i| {
            if i + 1 == a.steps {
                a.rho_max
            } else {
                a.rho_min + h * i as f64
            }
        })
        .collect())
}

/// Default horizon at `rho = 1`, where no finite truncation horizon exists.
const RHO_ONE_HORIZON: f64 = 10.0;

fn horizon_for(rho: f64, a: &EstimateC) -> Result<f64, Failure> {
    if let Some(t) = a.horizon {
        return Ok(t);
    }
    if rho == 1.0 {
        return Ok(RHO_ONE_HORIZON);
    }
    let t = truncation_horizon(rho, 0.0, a.horizon_eps)?;
    if t > a.max_horizon {
        return Err(Failure::Core(Error::ResourceLimit {
            what: format!("truncation horizon at rho = {rho} (raise --max-horizon or --horizon-eps)"),
            expected: t,
            limit: a.max_horizon,
        }));
    }
    Ok(t)
}

pub fn estimate_c_cmd(ctx: &Context, a: &EstimateC) -> Outcome {
    let grid = rho_grid(a)?;
    require(a.horizon_eps > 0.0 && a.horizon_eps < 1.0, || {
        format!("--horizon-eps must lie in (0, 1), got {}", a.horizon_eps)
    })?;
    if let Some(t) = a.horizon {
        require(t > 0.0 && t.is_finite(), || format!("--horizon must be > 0, got {t}"))?;
    }
    require(a.max_horizon > 0.0, || "--max-horizon must be > 0".into())?;
    require(a.replicas >= 1, || "--replicas must be >= 1".into())?;
    require(a.prune_delta > 0.0 && a.prune_delta < 1.0, || {
        format!("--prune-delta must lie in (0, 1), got {}", a.prune_delta)
    })?;
    let horizons = grid.iter().map(|&r| horizon_for(r, a)).collect::<Result<Vec<_>, _>>()?;
    let cfg = SpineConfig {
        prune_delta: a.prune_delta,
        ..SpineConfig::default()
    };
    let rng = ctx.rng();

    let rows: Vec<(f64, f64, EstimatorResult)> = if a.coupled {
        let t = horizons.iter().cloned().fold(0.0, f64::max);
        let curve = estimate_c_curve(&grid, t, a.replicas, &rng, &cfg)?;
        if curve.violations > 0 {
            return Err(Failure::Core(Error::NumericalFailure(format!(
                "{} realizations are not monotone in rho",
                curve.violations
            ))));
        }
        grid.iter().zip(curve.points).map(|(&r, p)| (r, t, p)).collect()
    } else {
        grid.iter()
            .zip(&horizons)
            .enumerate()
            .map(|(i, (&r, &t))| Ok((r, t, estimate_c(r, t, a.replicas, &rng.split(i as u64), &cfg)?)))
            .collect::<Result<_, Failure>>()?
    };

    let mut csv = ctx.csv(
        "estimate-c",
        a,
        &["rho", "c_estimate", "stderr", "n", "horizon_T", "accepted", "warning"],
    )?;
    for (rho, t, p) in rows {
        csv.row(&[
            num(rho),
            num(p.estimate),
            num(p.stderr),
            p.n_samples.to_string(),
            num(t),
            p.n_accepted.to_string(),
            p.warning.unwrap_or_default(),
        ])?;
    }
    Ok(csv.finish()?)
}

// kpp

fn default_checkpoints(t_max: f64) -> Vec<f64> {
    [0.5, 0.625, 0.75, 0.875, 1.0].iter().map(|f| f * t_max).collect()
}

pub fn kpp_cmd(ctx: &Context, a: &Kpp) -> Outcome {
    for &r in &a.rho {
        require(r > 1.0 && r.is_finite(), || {
            format!("--rho must be finite and > 1, got {r}")
        })?;
    }
    let mut a = a.clone();
    if a.checkpoints.is_empty() {
        a.checkpoints = default_checkpoints(a.t_max);
    }
    require(a.checkpoints.len() >= 2, || "need at least two checkpoints".into())?;
    let params = KppParams {
        dx: a.dx,
        dt: a.dt,
        t_max: a.t_max,
        rho_max: a.rho.iter().cloned().fold(1.0, f64::max),
        checkpoints: a.checkpoints.clone(),
        ..KppParams::default()
    };
    params.validate()?;
    let field = solve_kpp(&params)?;
    if let Some(p) = &a.field_dump {
        let mut out = open(Some(p))?;
        field.write_csv(&mut out)?;
        out.flush()?;
    }
    let mut csv = ctx.csv(
        "kpp",
        &a,
        &["rho", "t", "w_probe", "c_of_t", "c_extrapolated", "uncertainty", "phi"],
    )?;
    for &rho in &a.rho {
        let est = estimate_c_pde(&field, rho, &a.checkpoints)?;
        let phi = phi_conversion(est.estimate, rho)?;
        for &t in &a.checkpoints {
            csv.row(&[
                num(rho),
                num(t),
                num(front_tail(&field, rho, t)?),
                num(c_of_t(&field, rho, t)?),
                num(est.estimate),
                num(est.stderr),
                num(phi),
            ])?;
        }
    }
    Ok(csv.finish()?)
}

// simulate

fn scheme(c: CenteringArg) -> CenteringScheme {
    match c {
        CenteringArg::Bbm => CenteringScheme::BbmThreehalves,
        CenteringArg::Bou => CenteringScheme::BouOnehalf,
        CenteringArg::Tilde => CenteringScheme::BouTilde,
    }
}

pub fn simulate_cmd(ctx: &Context, a: &Simulate) -> Outcome {
    let spring = SpringParams::new(a.mu, a.t)?;
    require(a.replicas >= 1, || "--replicas must be >= 1".into())?;
    match a.emit {
        Emit::AtomsAbove => require(!a.above.is_nan(), || "--above must be a number".into())?,
        Emit::Martingales => {
            require(a.mu == 0.0, || format!("--emit martingales needs --mu 0, got {}", a.mu))?;
            require(!a.beta.is_empty() && a.beta.iter().all(|b| b.is_finite()), || {
                "--beta needs finite values".into()
            })?;
        }
        Emit::Max => {}
    }
    let rng = ctx.rng();
    let centering = Centering::new(scheme(a.centering), a.t);
    let rows: Vec<Vec<Vec<String>>> = try_map_replicas(a.replicas, |k| -> Result<_, Error> {
        let cloud = simulate_cloud(spring, &rng.split(k))?;
        let id = k.to_string();
        Ok(match a.emit {
            Emit::Max => vec![vec![id, num(extremal_measure(&cloud, centering)?.max())]],
            Emit::AtomsAbove => {
                let m = extremal_measure(&cloud, centering)?.restrict_above(a.above);
                m.atoms().iter().map(|&x| vec![id.clone(), num(x)]).collect()
            }
            Emit::Martingales => {
                let mut row = vec![id];
                for &b in &a.beta {
                    row.push(num(additive_martingale(&cloud, b)?));
                }
                row.push(num(derivative_martingale(&cloud)?));
                vec![row]
            }
        })
    })?;
    let beta_cols: Vec<String> = a.beta.iter().map(|b| format!("w_beta_{}", num(*b))).collect();
    let columns: Vec<&str> = match a.emit {
        Emit::Max => vec!["replica", "max"],
        Emit::AtomsAbove => vec!["replica", "atom"],
        Emit::Martingales => std::iter::once("replica")
            .chain(beta_cols.iter().map(|s| s.as_str()))
            .chain(std::iter::once("z"))
            .collect(),
    };
    let mut csv = ctx.csv("simulate", a, &columns)?;
    for row in rows.into_iter().flatten() {
        csv.row(&row)?;
    }
    Ok(csv.finish()?)
}

// decorate

pub fn decorate_cmd(ctx: &Context, a: &Decorate) -> Outcome {
    require(a.rho > 1.0 && a.rho.is_finite(), || {
        format!("--rho must be finite and > 1, got {}", a.rho)
    })?;
    require(a.window_a <= 0.0 && a.window_a.is_finite(), || {
        format!("--window-a must be finite and <= 0, got {}", a.window_a)
    })?;
    require(a.samples >= 1, || "--samples must be >= 1".into())?;
    require(a.max_attempts >= 1, || "--max-attempts must be >= 1".into())?;
    require(a.horizon_eps > 0.0 && a.horizon_eps < 1.0, || {
        format!("--horizon-eps must lie in (0, 1), got {}", a.horizon_eps)
    })?;
    require(a.prune_delta > 0.0 && a.prune_delta < 1.0, || {
        format!("--prune-delta must lie in (0, 1), got {}", a.prune_delta)
    })?;
    let cfg = SpineConfig {
        prune_delta: a.prune_delta,
        ..SpineConfig::default()
    };
    let t = truncation_horizon(a.rho, a.window_a, a.horizon_eps)?;
    let rng = ctx.rng();
    let draws = map_replicas(a.samples, |k| {
        sample_decoration(a.rho, t, a.window_a, a.max_attempts, &rng.split(k), &cfg)
    });

    let mut attempts = 0u64;
    let mut accepted = 0u64;
    let mut pruned = 0.0;
    let mut first_error = None;
    for d in &draws {
        match d {
            Ok(dec) => {
                attempts += dec.attempts;
                accepted += 1;
                pruned += dec.pruned_mass;
            }
            Err(Error::RejectionBudget { attempts: n, .. }) => attempts += n,
            Err(e) => {
                first_error.get_or_insert_with(|| e.clone());
            }
        }
    }
    if let Some(e) = first_error {
        return Err(e.into());
    }
    let acceptance = accepted as f64 / attempts as f64;
    let summary = json!({
        "rho": a.rho,
        "window_a": a.window_a,
        "horizon_T": t,
        "samples": a.samples,
        "accepted": accepted,
        "attempts": attempts,
        "acceptance_rate": acceptance,
        "pruned_mass": pruned / accepted.max(1) as f64,
    });
    write_summary(a.summary.as_deref(), &summary)?;
    if accepted < a.samples {
        return Err(Error::RejectionBudget { attempts, acceptance }.into());
    }
    let mut csv = ctx.csv("decorate", a, &["sample_id", "atom"])?;
    for (k, d) in draws.into_iter().enumerate() {
        let dec = d.expect("all draws accepted");
        for &x in dec.atoms.atoms().iter().rev() {
            csv.row(&[k.to_string(), num(x)])?;
        }
    }
    Ok(csv.finish()?)
}

// limit-process

fn parse_gamma(s: &str) -> Result<Extended, Failure> {
    let g = match s.trim() {
        "inf" | "infinity" | "+inf" => Extended::Infinite,
        other => Extended::Finite(
            other
                .parse::<f64>()
                .map_err(|_| invalid(format!("--gamma must be 'inf' or a number, got {other}")))?,
        ),
    };
    gamma_constants(g)?;
    Ok(g)
}

pub fn limit_process_cmd(ctx: &Context, a: &LimitProcess) -> Outcome {
    let gamma = parse_gamma(&a.gamma)?;
    require(a.window_a.is_finite(), || {
        format!("--window-a must be finite, got {}", a.window_a)
    })?;
    require(a.samples >= 1, || "--samples must be >= 1".into())?;
    require(a.max_attempts >= 1, || "--max-attempts must be >= 1".into())?;
    require(a.proxy_t > 0.0 && a.proxy_t <= 16.0, || {
        format!("--proxy-t must lie in (0, 16], got {}", a.proxy_t)
    })?;
    if let Some(c) = a.c_value {
        require(c > 0.0 && c.is_finite(), || format!("--c-value must be > 0, got {c}"))?;
    }
    let rng = ctx.rng();
    let mut cfg = LimitProcessConfig {
        proxy_t: a.proxy_t,
        c_value: a.c_value,
        max_attempts: a.max_attempts,
        ..Default::default()
    };
    let c = limit_process_c(gamma, a.window_a, &cfg, &rng.split(u64::MAX))?;
    cfg.c_value = Some(c);
    let draws = try_map_replicas(a.samples, |k| {
        sample_limit_process(gamma, a.window_a, &cfg, &rng.split(k))
    })?;

    let atoms: usize = draws.iter().map(|d| d.atoms.len()).sum();
    let voids = draws.iter().filter(|d| d.atoms.count_strictly_above(0.0) == 0).count();
    let mass: f64 = draws.iter().map(|d| d.intensity_mass).sum();
    let summary = json!({
        "gamma": gamma.to_string(),
        "window_a": a.window_a,
        "c_value": c,
        "samples": a.samples,
        "mean_atoms": atoms as f64 / a.samples as f64,
        "mean_intensity_mass": mass / a.samples as f64,
        "void_fraction_above_zero": voids as f64 / a.samples as f64,
    });
    write_summary(a.summary.as_deref(), &summary)?;
    let mut csv = ctx.csv("limit-process", a, &["sample_id", "atom"])?;
    for (k, d) in draws.iter().enumerate() {
        for &x in d.atoms.atoms().iter().rev() {
            csv.row(&[k.to_string(), num(x)])?;
        }
    }
    Ok(csv.finish()?)
}

// verify

pub fn verify_cmd(ctx: &Context, a: &Verify) -> Outcome {
    let suite = match a.suite {
        SuiteArg::Fast => Suite::Fast,
        SuiteArg::Full => Suite::Full,
    };
    let mut cfg = SpineConfig::default();
    if a.corrupt_drift_sign {
        cfg.drift_sign = 1.0;
    }
    let reports = run_suite(suite, ctx.seed, &cfg)?;
    let mut out = open(ctx.output.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &reports).map_err(std::io::Error::other)?;
    writeln!(out)?;
    out.flush()?;
    for r in &reports {
        eprintln!(
            "{:<13} {}  statistic={} threshold={}",
            format!("{:?}", r.status),
            r.name,
            num(r.statistic),
            num(r.threshold)
        );
    }
    let failed: Vec<String> = reports.iter().filter(|r| r.failed()).map(|r| r.name.clone()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::ChecksFailed(failed))
    }
}
