use clap::parser::ValueSource;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;
use std::ffi::OsString;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "extremes",
    version,
    about = "Extremes of branching Brownian and Ornstein-Uhlenbeck clouds"
)]
pub struct Cli {
    /// Master seed. Replica k of a run always uses the same stream.
    #[arg(long, env = "EXTREMES_SEED", default_value_t = 1, global = true)]
    pub seed: u64,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// JSON object of flag values (keys are long flag names); explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output file (default: stdout).
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Monte Carlo estimate of C(rho) from the spine representation.
    EstimateC(EstimateC),
    /// C(rho) from the Fisher-KPP equation.
    Kpp(Kpp),
    /// Simulate clouds and emit maxima, atoms or martingales.
    Simulate(Simulate),
    /// Rejection-sample decorations.
    Decorate(Decorate),
    /// Sample the limiting decorated Poisson process.
    LimitProcess(LimitProcess),
    /// Run a check suite and write a JSON report.
    Verify(Verify),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::EstimateC(_) => "estimate-c",
            Command::Kpp(_) => "kpp",
            Command::Simulate(_) => "simulate",
            Command::Decorate(_) => "decorate",
            Command::LimitProcess(_) => "limit-process",
            Command::Verify(_) => "verify",
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EstimateC {
    #[arg(long)]
    pub rho_min: f64,
    #[arg(long)]
    pub rho_max: f64,
    /// Number of grid points from rho-min to rho-max.
    #[arg(long, default_value_t = 1)]
    pub steps: usize,
    /// Truncation tolerance for the horizon T.
    #[arg(long, default_value_t = 1e-3)]
    pub horizon_eps: f64,
    /// Fixed horizon T (required for a certificate-free rho = 1 row; default 10 there).
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Largest horizon used when the truncation bound asks for more.
    #[arg(long, default_value_t = 200.0)]
    pub max_horizon: f64,
    #[arg(long, default_value_t = 10_000)]
    pub replicas: u64,
    /// Common random numbers across the grid; asserts monotonicity.
    #[arg(long)]
    pub coupled: bool,
    #[arg(long, default_value_t = 1e-7)]
    pub prune_delta: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Kpp {
    /// Probe speed (> 1), repeatable.
    #[arg(long, required = true)]
    pub rho: Vec<f64>,
    #[arg(long, default_value_t = 12.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 0.05)]
    pub dx: f64,
    #[arg(long, default_value_t = 0.005)]
    pub dt: f64,
    /// Checkpoint times (comma separated); default t-max times 0.5, 0.625, ..., 1.
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Vec<f64>,
    /// Also write the full field (t, x, w) to this CSV file.
    #[arg(long)]
    pub field_dump: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CenteringArg {
    Bbm,
    Bou,
    Tilde,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Emit {
    Max,
    AtomsAbove,
    Martingales,
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Simulate {
    #[arg(long)]
    pub mu: f64,
    #[arg(long)]
    pub t: f64,
    #[arg(long, default_value_t = 1_000)]
    pub replicas: u64,
    #[arg(long, value_enum, default_value_t = CenteringArg::Tilde)]
    pub centering: CenteringArg,
    #[arg(long, value_enum, default_value_t = Emit::Max)]
    pub emit: Emit,
    /// Lower cut for --emit atoms-above.
    #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
    pub above: f64,
    /// Parameters of the additive martingales for --emit martingales.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0])]
    pub beta: Vec<f64>,
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Decorate {
    #[arg(long)]
    pub rho: f64,
    #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
    pub window_a: f64,
    #[arg(long, default_value_t = 100)]
    pub samples: u64,
    #[arg(long, default_value_t = 100_000)]
    pub max_attempts: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub horizon_eps: f64,
    #[arg(long, default_value_t = 1e-7)]
    pub prune_delta: f64,
    /// Write the summary JSON here (it is always echoed on stderr).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct LimitProcess {
    /// `inf` or a positive number.
    #[arg(long)]
    pub gamma: String,
    #[arg(long, default_value_t = -2.0, allow_negative_numbers = true)]
    pub window_a: f64,
    #[arg(long, default_value_t = 100)]
    pub samples: u64,
    #[arg(long, default_value_t = 100_000)]
    pub max_attempts: u64,
    /// Known C(d_gamma); estimated when absent.
    #[arg(long)]
    pub c_value: Option<f64>,
    #[arg(long, default_value_t = 12.0)]
    pub proxy_t: f64,
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteArg {
    Fast,
    Full,
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Verify {
    #[arg(long, value_enum, default_value_t = SuiteArg::Fast)]
    pub suite: SuiteArg,
    /// Flip the sign of the spine drift (fixture for the mutation test).
    #[arg(long, hide = true)]
    pub corrupt_drift_sign: bool,
}

fn config_error(msg: String) -> clap::Error {
    Cli::command().error(clap::error::ErrorKind::InvalidValue, msg)
}

fn json_token(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Inserts the values of `--config` right after the subcommand name for every
/// argument the command line did not set explicitly.
pub fn merge_config(raw: Vec<OsString>) -> Result<Vec<OsString>, clap::Error> {
    let cmd = Cli::command();
    // required flags may come from the file, so the first pass is lenient
    let mut lenient = cmd.clone();
    let subs: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for s in subs {
        lenient = lenient.mut_subcommand(s, |c| c.mut_args(|a| a.required(false)));
    }
    let matches = lenient.try_get_matches_from(&raw)?;
    let Some(path) = matches.get_one::<PathBuf>("config") else {
        return Ok(raw);
    };
    let text =
        std::fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(config_error(format!("{} must hold a JSON object", path.display())));
    };
    let (sub_name, sub) = matches.subcommand().expect("subcommand is required");
    let sub_cmd = cmd.find_subcommand(sub_name).expect("known subcommand");
    let known =
        |id: &str| sub_cmd.get_arguments().any(|a| a.get_id() == id) || cmd.get_arguments().any(|a| a.get_id() == id);
    let mut tokens: Vec<OsString> = Vec::new();
    for (key, v) in &map {
        if key == "command" || key == "config" {
            continue;
        }
        let id = key.replace('-', "_");
        if !known(&id) {
            return Err(config_error(format!("unknown config key '{key}' for {sub_name}")));
        }
        if sub.value_source(&id) == Some(ValueSource::CommandLine) {
            continue;
        }
        let flag = format!("--{key}");
        match v {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => tokens.push(flag.into()),
            Value::Array(items) => {
                for item in items {
                    let tok = json_token(item).ok_or_else(|| config_error(format!("bad value in '{key}'")))?;
                    tokens.push(flag.clone().into());
                    tokens.push(tok.into());
                }
            }
            other => {
                let tok = json_token(other).ok_or_else(|| config_error(format!("bad value for '{key}'")))?;
                tokens.push(flag.into());
                tokens.push(tok.into());
            }
        }
    }
    let pos = raw
        .iter()
        .skip(1)
        .position(|a| a.to_str() == Some(sub_name))
        .map(|p| p + 2)
        .expect("subcommand appears on the command line");
    let mut out = raw;
    let tail = out.split_off(pos);
    // `--flag=value` keeps values like "-inf" from being read as flags
    let mut it = tokens.into_iter().peekable();
    while let Some(t) = it.next() {
        let s = t.to_string_lossy().into_owned();
        match it.peek() {
            Some(next) if !next.to_string_lossy().starts_with("--") => {
                out.push(format!("{s}={}", next.to_string_lossy()).into());
                it.next();
            }
            _ => out.push(t),
        }
    }
    out.extend(tail);
    Ok(out)
}
