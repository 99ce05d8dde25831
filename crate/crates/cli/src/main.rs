mod commands;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use files::{write_atomic, InputLog};

#[derive(Parser)]
#[command(name = "esnssm", version, about = "Echo state networks as state-space models")]
struct Cli {
    /// Seed for every random draw made by the command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the reservoir on an input sequence.
    Simulate(SimulateArgs),
    /// Fading-memory certificates and the memory horizon.
    Certify(CertifyArgs),
    /// Small-signal LTI model at an operating point.
    Linearize(LinearizeArgs),
    /// EDMD lift of the reservoir dynamics.
    Lift(LiftArgs),
    /// Continuous-time reservoir sampled by zero-order hold.
    Discretize(DiscretizeArgs),
    /// Impulse response of an LTI model.
    Kernel(KernelArgs),
    /// Singular values of the transfer function on the unit circle.
    Spectrum(SpectrumArgs),
    /// Parameter and readout estimation.
    #[command(subcommand)]
    Identify(IdentifyCommand),
    /// Build a reservoir from a memory target.
    Design(DesignArgs),
    /// Multi-step predictive distribution after filtering a history.
    Predict(PredictArgs),
}

#[derive(Args)]
pub struct InputSource {
    /// CSV with columns `t,u_1..u_m`; other columns are ignored.
    #[arg(long, conflicts_with = "steps")]
    pub inputs: Option<PathBuf>,
    /// Draw this many Gaussian inputs instead of reading a file.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub input_std: f64,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub source: InputSource,
    /// JSON file with `Q` and `R`; noise-free when absent.
    #[arg(long)]
    pub noise: Option<PathBuf>,
    /// Data CSV `t,u_1..u_m,y_1..y_p`.
    #[arg(long)]
    pub data_out: Option<PathBuf>,
    /// State CSV `t,x_1..x_n`.
    #[arg(long)]
    pub states_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CertifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 4096)]
    pub vertex_budget: usize,
    /// Tolerance for the memory horizon.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Input perturbation size for the memory horizon.
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
}

#[derive(Args)]
pub struct LinearizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// JSON `{"x_bar": [...], "u_bar": [...]}`; the origin when absent.
    #[arg(long)]
    pub point: Option<PathBuf>,
    /// Tube radius for the linearization error bound.
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub lti_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct LiftArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub source: InputSource,
    /// JSON dictionary, e.g. `{"monomials": {"max_degree": 2}}`.
    #[arg(long)]
    pub dictionary: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub ridge: f64,
    /// Rollout length for the error-bound check; the whole trajectory by default.
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Args)]
pub struct DiscretizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub tau: f64,
    #[arg(long)]
    pub dt: f64,
    /// Isotropic diffusion `Q_c = q·I`.
    #[arg(long, default_value_t = 0.0)]
    pub q_c: f64,
}

#[derive(Args)]
pub struct KernelArgs {
    #[arg(long)]
    pub lti: PathBuf,
    /// Fixed truncation; otherwise the shortest kernel whose tail bound meets `--tol`.
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub k_limit: usize,
    /// Kernel CSV `k,h_1_1,h_1_2,...`.
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub lti: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub points: usize,
    /// CSV `omega,sigma_1,...`.
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
}

#[derive(Subcommand)]
pub enum IdentifyCommand {
    /// EM for `A`, `B`, `Q`, `R` with optional reservoir structure.
    Em(EmArgs),
    /// Readout from reservoir states driven by the data inputs.
    Readout(ReadoutArgs),
    /// Ho–Kalman realization projected onto a reservoir family.
    Subspace(SubspaceArgs),
}

#[derive(Args)]
pub struct EmArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Write the final model and noise as `{"lti": ..., "noise": ...}`.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReadoutArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub ridge: f64,
    #[arg(long)]
    pub no_intercept: bool,
    /// Leading steps left out of the fit.
    #[arg(long, default_value_t = 0)]
    pub washout: usize,
    /// Prior precision; adds the Gaussian posterior over `C`.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SubspaceArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub order: usize,
    #[arg(long)]
    pub fir_len: usize,
    /// JSON `{"W_bar": [[...]], "L_sigma": 1.0}`.
    #[arg(long, required_unless_present = "model", conflicts_with = "model")]
    pub basis: Option<PathBuf>,
    /// Take `W̄` and `L_σ` from a model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub sv_floor: f64,
}

#[derive(Args)]
pub struct DesignArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub lti: PathBuf,
    #[arg(long)]
    pub noise: PathBuf,
    /// History CSV `t,u_1..u_m,y_1..y_p`.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON `{"mean": [...], "cov": [[...]]}`; `N(0, I)` when absent.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub horizon: usize,
    /// Inputs after the history, needed when the horizon exceeds 1.
    #[arg(long)]
    pub future: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Domain(esnssm::Error),
    Io(String),
    Schema(String),
}

impl From<esnssm::Error> for CliError {
    fn from(e: esnssm::Error) -> Self {
        CliError::Domain(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Io(_) | CliError::Schema(_) => 2,
        }
    }

    fn to_json(&self) -> Value {
        let (code, message) = match self {
            CliError::Domain(e) => (e.code(), e.to_string()),
            CliError::Io(m) => ("io_error", m.clone()),
            CliError::Schema(m) => ("schema_error", m.clone()),
        };
        json!({ "error": { "code": code, "message": message } })
    }
}

pub struct Ctx {
    pub seed: u64,
    pub log: InputLog,
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate(_) => "simulate",
        Command::Certify(_) => "certify",
        Command::Linearize(_) => "linearize",
        Command::Lift(_) => "lift",
        Command::Discretize(_) => "discretize",
        Command::Kernel(_) => "kernel",
        Command::Spectrum(_) => "spectrum",
        Command::Identify(IdentifyCommand::Em(_)) => "identify em",
        Command::Identify(IdentifyCommand::Readout(_)) => "identify readout",
        Command::Identify(IdentifyCommand::Subspace(_)) => "identify subspace",
        Command::Design(_) => "design",
        Command::Predict(_) => "predict",
    }
}

fn dispatch(cmd: &Command, ctx: &mut Ctx) -> Result<Value, CliError> {
    match cmd {
        Command::Simulate(a) => commands::simulate(a, ctx),
        Command::Certify(a) => commands::certify(a, ctx),
        Command::Linearize(a) => commands::linearize(a, ctx),
        Command::Lift(a) => commands::lift(a, ctx),
        Command::Discretize(a) => commands::discretize(a, ctx),
        Command::Kernel(a) => commands::kernel(a, ctx),
        Command::Spectrum(a) => commands::spectrum(a, ctx),
        Command::Identify(IdentifyCommand::Em(a)) => commands::identify_em(a, ctx),
        Command::Identify(IdentifyCommand::Readout(a)) => commands::identify_readout(a, ctx),
        Command::Identify(IdentifyCommand::Subspace(a)) => commands::identify_subspace(a, ctx),
        Command::Design(a) => commands::design(a, ctx),
        Command::Predict(a) => commands::predict(a, ctx),
    }
}

fn emit(report: &Option<PathBuf>, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    match report {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let start = Instant::now();
    let mut ctx = Ctx {
        seed: cli.seed,
        log: InputLog::default(),
    };
    let outcome = dispatch(&cli.command, &mut ctx);
    let inputs: Vec<Value> = ctx
        .log
        .entries
        .iter()
        .map(|(role, path, sha)| json!({ "role": role, "path": path, "sha256": sha }))
        .collect();
    match outcome {
        Ok(results) => {
            let report = json!({
                "tool": "esnssm",
                "version": env!("CARGO_PKG_VERSION"),
                "command": command_name(&cli.command),
                "seed": cli.seed,
                "inputs": inputs,
                "wall_time_s": start.elapsed().as_secs_f64(),
                "results": results,
            });
            match emit(&cli.report, &report) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("esnssm: {}", e.to_json()["error"]["message"]);
                    ExitCode::from(2)
                }
            }
        }
        Err(e) => {
            let mut body = e.to_json();
            body["command"] = json!(command_name(&cli.command));
            body["inputs"] = json!(inputs);
            eprintln!("esnssm: {}", body["error"]["message"].as_str().unwrap_or_default());
            println!("{}", serde_json::to_string_pretty(&body).unwrap_or_default());
            ExitCode::from(e.exit_code())
        }
    }
}
