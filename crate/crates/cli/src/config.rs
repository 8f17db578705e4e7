use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;

use saddle_core::sim::{IntegratorConfig, Method};

use crate::CliError;

/// Options shared by the analysis and simulation subcommands. Every flag can
/// also be given in a JSON file via `--config`; flags win.
#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// JSON file with any of the options below (snake_case keys)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in system name, or `polynomial` together with --poly-file
    #[arg(long)]
    pub system: Option<String>,
    /// System parameter, repeatable: --param a=2
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    /// Polynomial Hamiltonian: {"n": .., "terms": [{"coeff": .., "exps": [..]}]}
    #[arg(long)]
    pub poly_file: Option<PathBuf>,
    /// Starting point for the equilibrium search, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub guess: Option<Vec<f64>>,
    /// Use finite-difference derivatives even where analytic ones exist
    #[arg(long)]
    pub finite_difference: bool,
    /// Proportional gain c (default 2 lambda; for destabilize 2 omega_1)
    #[arg(long, allow_negative_numbers = true)]
    pub gain_c: Option<f64>,
    /// Damping gain, repeatable, one per degree of freedom (default 1)
    #[arg(long = "gain-d", allow_negative_numbers = true)]
    pub gain_d: Vec<f64>,
    /// rk4 | rkf45
    #[arg(long)]
    pub method: Option<String>,
    /// RK4 step, or initial RKF45 step
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long)]
    pub abs_tol: Option<f64>,
    /// Store every k-th integrator step
    #[arg(long)]
    pub record_stride: Option<usize>,
    /// Monte-Carlo initial conditions for the stability check
    #[arg(long)]
    pub samples: Option<usize>,
    /// Radius of the initial-condition ball around the equilibrium
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Distance to the equilibrium that counts as converged
    #[arg(long)]
    pub conv_tol: Option<f64>,
    /// Minimum converged fraction for stabilize to succeed
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Trajectory CSV files written by stabilize
    #[arg(long)]
    pub trajectories: Option<usize>,
    /// Initial state for simulate, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub ic: Option<Vec<f64>>,
    /// Grid resolution for the potential CSV written by analyze (2 dof only)
    #[arg(long)]
    pub grid: Option<usize>,
    /// Simulate the uncontrolled flow
    #[arg(long)]
    pub no_control: bool,
    /// Output directory for CSV/JSON files
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    system: Option<String>,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    poly_file: Option<PathBuf>,
    guess: Option<Vec<f64>>,
    #[serde(default)]
    finite_difference: bool,
    gain_c: Option<f64>,
    gain_d: Option<Vec<f64>>,
    method: Option<String>,
    dt: Option<f64>,
    t_final: Option<f64>,
    rel_tol: Option<f64>,
    abs_tol: Option<f64>,
    record_stride: Option<usize>,
    samples: Option<usize>,
    radius: Option<f64>,
    seed: Option<u64>,
    conv_tol: Option<f64>,
    threshold: Option<f64>,
    trajectories: Option<usize>,
    ic: Option<Vec<f64>>,
    grid: Option<usize>,
    #[serde(default)]
    no_control: bool,
    out: Option<PathBuf>,
}

/// Fully resolved settings for one command.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub system: String,
    pub params: BTreeMap<String, f64>,
    pub poly_file: Option<PathBuf>,
    pub guess: Option<Vec<f64>>,
    pub finite_difference: bool,
    pub gain_c: Option<f64>,
    pub gain_d: Option<Vec<f64>>,
    pub integrator: IntegratorConfig,
    pub samples: usize,
    pub radius: Option<f64>,
    pub seed: u64,
    pub conv_tol: f64,
    pub threshold: f64,
    pub trajectories: usize,
    pub ic: Option<Vec<f64>>,
    pub grid: Option<usize>,
    pub no_control: bool,
    pub out: Option<PathBuf>,
}

fn parse_param(s: &str) -> Result<(String, f64), CliError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--param expects KEY=VALUE, got '{s}'")))?;
    let value: f64 = v
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("parameter '{k}' has non-numeric value '{v}'")))?;
    Ok((k.trim().to_string(), value))
}

impl RunConfig {
    /// Merges flags over the optional config file. `default_t_final`
    /// depends on the command.
    pub fn resolve(opts: &Options, default_t_final: f64) -> Result<Self, CliError> {
        let file: FileConfig = match &opts.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };

        let mut params = file.params;
        for p in &opts.params {
            let (k, v) = parse_param(p)?;
            params.insert(k, v);
        }

        let method: Method = match opts.method.clone().or(file.method) {
            Some(m) => m.parse().map_err(|e: saddle_core::Error| CliError::Config(e.to_string()))?,
            None => Method::Rkf45,
        };
        let defaults = IntegratorConfig::default();
        let integrator = IntegratorConfig {
            method,
            dt: opts.dt.or(file.dt).unwrap_or(defaults.dt),
            rel_tol: opts.rel_tol.or(file.rel_tol).unwrap_or(defaults.rel_tol),
            abs_tol: opts.abs_tol.or(file.abs_tol).unwrap_or(defaults.abs_tol),
            t_final: opts.t_final.or(file.t_final).unwrap_or(default_t_final),
            record_stride: opts.record_stride.or(file.record_stride).unwrap_or(1),
        };
        integrator.validate().map_err(|e| CliError::Config(e.to_string()))?;

        let gain_d = if opts.gain_d.is_empty() { file.gain_d } else { Some(opts.gain_d.clone()) };
        let cfg = RunConfig {
            system: opts
                .system
                .clone()
                .or(file.system)
                .ok_or_else(|| CliError::Config("--system is required".into()))?,
            params,
            poly_file: opts.poly_file.clone().or(file.poly_file),
            guess: opts.guess.clone().or(file.guess),
            finite_difference: opts.finite_difference || file.finite_difference,
            gain_c: opts.gain_c.or(file.gain_c),
            gain_d,
            integrator,
            samples: opts.samples.or(file.samples).unwrap_or(100),
            radius: opts.radius.or(file.radius),
            seed: opts.seed.or(file.seed).unwrap_or(1),
            conv_tol: opts.conv_tol.or(file.conv_tol).unwrap_or(1e-6),
            threshold: opts.threshold.or(file.threshold).unwrap_or(0.99),
            trajectories: opts.trajectories.or(file.trajectories).unwrap_or(1),
            ic: opts.ic.clone().or(file.ic),
            grid: opts.grid.or(file.grid),
            no_control: opts.no_control || file.no_control,
            out: opts.out.clone().or(file.out),
        };
        if cfg.samples == 0 {
            return Err(CliError::Config("--samples must be positive".into()));
        }
        if let Some(r) = cfg.radius {
            if !(r > 0.0) {
                return Err(CliError::Config("--radius must be positive".into()));
            }
        }
        if let Some(path) = &cfg.poly_file {
            if !path.is_file() {
                return Err(CliError::Config(format!("polynomial file {} does not exist", path.display())));
            }
        }
        Ok(cfg)
    }
}
