//! `qnd`: model, simulate and analyze measurement-induced nuclear-spin
//! transitions during ancilla-mediated QND readout of high-spin qudits.
//!
//! Configuration layering: preset defaults, then the `--config` file
//! (flat `key = value` lines, `#` comments), then command-line flags.
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure;
//! errors are also written as JSON on stderr.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{expand_q_shorthand, Settings, SHARED_KEYS};
use qudit_qnd::{QndError, Result};

#[derive(Parser)]
#[command(name = "qnd", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenstate overlap matrices of the three ancilla manifolds
    Overlaps(CommonArgs),
    /// Coupling/decoupling/compounded transition matrices
    Transitions(CommonArgs),
    /// Monte-Carlo RR/AR protocol simulation and ancilla sweeps
    Simulate(SimulateArgs),
    /// Per-shot generator from a compounded transition matrix CSV
    ExtractGenerator(ExtractArgs),
    /// Fit the five-parameter quadrupole tensor to angular spectra
    FitQuadrupole(FitArgs),
    /// Forward-model spectra with optional Gaussian noise
    SynthSpectra(SynthArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Flat key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parameter preset: sb123 or ge73
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// csv, json or both
    #[arg(long)]
    format: Option<String>,
    /// Cap on worker threads (results do not depend on it)
    #[arg(long)]
    threads: Option<usize>,
    /// Magnetic field(s) in tesla, comma separated
    #[arg(long = "b0")]
    b0: Option<String>,
    /// Hyperfine coupling in kHz
    #[arg(long = "a-khz", alias = "A")]
    a_khz: Option<f64>,
    #[arg(long)]
    theta_deg: Option<f64>,
    /// Quadrupole tensor: zero, sb123, ge73-placeholder or qxx,qyy,qyz,qxz,qxy
    #[arg(long)]
    q: Option<String>,
    /// Tunnel events per QND cycle
    #[arg(long)]
    kappa: Option<f64>,
    /// Extra key=value overrides (applied before dedicated flags)
    #[arg(long = "set", value_parser = parse_key_value)]
    set: Vec<(String, String)>,
}

impl CommonArgs {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut out = self.set.clone();
        if let Some(v) = &self.preset {
            out.push(("preset".into(), v.clone()));
        }
        if let Some(v) = self.seed {
            out.push(("seed".into(), v.to_string()));
        }
        if let Some(v) = &self.output_dir {
            out.push(("output_dir".into(), v.display().to_string()));
        }
        if let Some(v) = &self.format {
            out.push(("format".into(), v.clone()));
        }
        if let Some(v) = self.threads {
            out.push(("threads".into(), v.to_string()));
        }
        if let Some(v) = &self.b0 {
            out.push(("b0_tesla".into(), v.clone()));
        }
        if let Some(v) = self.a_khz {
            out.push(("a_khz".into(), v.to_string()));
        }
        if let Some(v) = self.theta_deg {
            out.push(("theta_deg".into(), v.to_string()));
        }
        if let Some(v) = &self.q {
            out.extend(expand_q_shorthand(v)?);
        }
        if let Some(v) = self.kappa {
            out.push(("kappa".into(), v.to_string()));
        }
        Ok(out)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// rr, ar or both
    #[arg(long)]
    protocol: Option<String>,
    /// Single value "3" or inclusive range "1..10"
    #[arg(long)]
    n_shots: Option<String>,
    #[arg(long)]
    n_trials: Option<u64>,
    #[arg(long)]
    p_tp: Option<f64>,
    #[arg(long)]
    p_fp: Option<f64>,
    #[arg(long)]
    fp_tunnel_prob: Option<f64>,
    /// AR rejection threshold (default: ceil(n_shots / 2))
    #[arg(long)]
    threshold: Option<usize>,
    /// per_cycle or on_demand
    #[arg(long)]
    init_policy: Option<String>,
    /// continue or reset
    #[arg(long)]
    probe_order: Option<String>,
    #[arg(long)]
    max_restarts: Option<usize>,
    /// Ancilla fidelity grid ("0.85,0.9,0.95,0.99" or "0.85..0.99:4");
    /// switches the command to a full factorial sweep
    #[arg(long = "sweep-ancilla")]
    sweep_ancilla: Option<String>,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Compounded transition-matrix CSV (label header + rows)
    #[arg(long)]
    input: PathBuf,
    /// Tunneling events behind the observation
    #[arg(long)]
    n_tunnel: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Spectra CSV (theta_deg, transition_index, freq_khz, sigma_khz)
    #[arg(long)]
    input: PathBuf,
    /// Fit gamma_n B0 as a sixth nuisance parameter
    #[arg(long)]
    fit_larmor: bool,
    /// ionized or neutral
    #[arg(long)]
    charge: Option<String>,
    /// Initial tensor guess, same syntax as --q
    #[arg(long)]
    init_q: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Angles in degrees: comma list or "0..180:19"
    #[arg(long)]
    angles: Option<String>,
    #[arg(long)]
    noise_sigma_khz: Option<f64>,
    /// ionized or neutral
    #[arg(long)]
    charge: Option<String>,
}

fn parse_key_value(raw: &str) -> std::result::Result<(String, String), String> {
    raw.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected key=value, got {raw:?}"))
}

const SIMULATE_KEYS: &[&str] = &[
    "protocol",
    "n_shots",
    "n_trials",
    "p_tp",
    "p_fp",
    "fp_tunnel_prob",
    "threshold",
    "init_policy",
    "probe_order",
    "max_restarts",
    "ancilla_grid",
];
const EXTRACT_KEYS: &[&str] = &["n_tunnel"];
const FIT_KEYS: &[&str] = &[
    "fit_larmor",
    "charge_state",
    "init_qxx_khz",
    "init_qyy_khz",
    "init_qyz_khz",
    "init_qxz_khz",
    "init_qxy_khz",
];
const SYNTH_KEYS: &[&str] = &["angles_deg", "noise_sigma_khz", "charge_state"];

fn build_settings(
    common: &CommonArgs,
    extra_keys: &[&str],
    extra_overrides: Vec<(String, String)>,
) -> Result<Settings> {
    let mut overrides = common.overrides()?;
    overrides.extend(extra_overrides);
    let mut keys: Vec<&str> = SHARED_KEYS.to_vec();
    keys.extend_from_slice(extra_keys);
    let settings = Settings::resolve(&keys, common.config.as_deref(), &overrides)?;
    if let Some(n) = settings.threads()? {
        // a pool may already exist when tests call run twice; that is fine
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(settings)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Overlaps(common) => {
            let settings = build_settings(&common, &[], Vec::new())?;
            let ctx = commands::CommandContext::new("overlaps", settings)?;
            commands::cmd_overlaps(&ctx)
        }
        Command::Transitions(common) => {
            let settings = build_settings(&common, &[], Vec::new())?;
            let ctx = commands::CommandContext::new("transitions", settings)?;
            commands::cmd_transitions(&ctx)
        }
        Command::Simulate(args) => {
            let mut extra = Vec::new();
            if let Some(v) = &args.protocol {
                extra.push(("protocol".into(), v.clone()));
            }
            if let Some(v) = &args.n_shots {
                extra.push(("n_shots".into(), v.clone()));
            }
            if let Some(v) = args.n_trials {
                extra.push(("n_trials".into(), v.to_string()));
            }
            if let Some(v) = args.p_tp {
                extra.push(("p_tp".into(), v.to_string()));
            }
            if let Some(v) = args.p_fp {
                extra.push(("p_fp".into(), v.to_string()));
            }
            if let Some(v) = args.fp_tunnel_prob {
                extra.push(("fp_tunnel_prob".into(), v.to_string()));
            }
            if let Some(v) = args.threshold {
                extra.push(("threshold".into(), v.to_string()));
            }
            if let Some(v) = &args.init_policy {
                extra.push(("init_policy".into(), v.clone()));
            }
            if let Some(v) = &args.probe_order {
                extra.push(("probe_order".into(), v.clone()));
            }
            if let Some(v) = args.max_restarts {
                extra.push(("max_restarts".into(), v.to_string()));
            }
            if let Some(v) = &args.sweep_ancilla {
                extra.push(("ancilla_grid".into(), v.clone()));
            }
            let settings = build_settings(&args.common, SIMULATE_KEYS, extra)?;
            let ctx = commands::CommandContext::new("simulate", settings)?;
            commands::cmd_simulate(&ctx)
        }
        Command::ExtractGenerator(args) => {
            let mut extra = Vec::new();
            if let Some(v) = args.n_tunnel {
                extra.push(("n_tunnel".into(), v.to_string()));
            }
            let settings = build_settings(&args.common, EXTRACT_KEYS, extra)?;
            let ctx = commands::CommandContext::new("extract-generator", settings)?;
            commands::cmd_extract_generator(&ctx, &args.input)
        }
        Command::FitQuadrupole(args) => {
            let mut extra = Vec::new();
            if args.fit_larmor {
                extra.push(("fit_larmor".into(), "true".into()));
            }
            if let Some(v) = &args.charge {
                extra.push(("charge_state".into(), v.clone()));
            }
            if let Some(v) = &args.init_q {
                for (k, val) in expand_q_shorthand(v)? {
                    extra.push((format!("init_{k}"), val));
                }
            }
            let settings = build_settings(&args.common, FIT_KEYS, extra)?;
            let ctx = commands::CommandContext::new("fit-quadrupole", settings)?;
            commands::cmd_fit_quadrupole(&ctx, &args.input)
        }
        Command::SynthSpectra(args) => {
            let mut extra = Vec::new();
            if let Some(v) = &args.angles {
                extra.push(("angles_deg".into(), v.clone()));
            }
            if let Some(v) = args.noise_sigma_khz {
                extra.push(("noise_sigma_khz".into(), v.to_string()));
            }
            if let Some(v) = &args.charge {
                extra.push(("charge_state".into(), v.clone()));
            }
            let settings = build_settings(&args.common, SYNTH_KEYS, extra)?;
            let ctx = commands::CommandContext::new("synth-spectra", settings)?;
            commands::cmd_synth_spectra(&ctx)
        }
    }
}

fn error_kind(err: &QndError) -> &'static str {
    match err {
        QndError::InvalidDimension(_) | QndError::InvalidConfig(_) | QndError::EmptyGrid(_) => {
            "config"
        }
        QndError::DimensionMismatch(_, _) | QndError::MalformedInput { .. } => "input",
        QndError::Io(_) | QndError::Csv(_) | QndError::Json(_) => "io",
        QndError::NonEmbeddable(_) => "non-embeddable",
        QndError::FitNonConvergence(_) => "non-convergence",
        QndError::RankDeficient { .. } => "rank-deficient",
        QndError::Classification { .. } => "classification",
        QndError::LevelTracking { .. } => "level-tracking",
        QndError::NotHermitian { .. }
        | QndError::EigenConvergence
        | QndError::EigenResidual { .. }
        | QndError::NotStochastic { .. }
        | QndError::NotProbability { .. } => "numerical",
    }
}

fn exit_code_for(err: &QndError) -> u8 {
    match err {
        e if e.is_config() => 2,
        QndError::Io(_) | QndError::Csv(_) | QndError::Json(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code_for(&err);
            let doc = serde_json::json!({
                "error": {
                    "kind": error_kind(&err),
                    "message": err.to_string(),
                },
                "exit_code": code,
            });
            eprintln!("{doc}");
            ExitCode::from(code)
        }
    }
}
