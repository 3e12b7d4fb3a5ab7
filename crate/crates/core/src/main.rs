use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gradflow::config::{apply_override, ExperimentConfig};
use gradflow::io::{diff_outputs, read_bytes};
use gradflow::runner::{rerun, run, RunOutcome};
use gradflow::Error;

/// Gradient-flow integration, fixed-point search and benchmarks for small MLPs.
#[derive(Parser)]
#[command(name = "gradflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the gradient flow and save the trajectory.
    Integrate(RunArgs),
    /// Search a minimum with an optimizer.
    Minimize(RunArgs),
    /// Epoch-based convergence check.
    Protocol(RunArgs),
    /// Compare integrators against a reference trajectory at fixed CPU budgets.
    Bench(RunArgs),
    /// Train on the infinite-data (population) loss.
    Neti(RunArgs),
    /// Hessian eigenvalues at the initial parameters.
    Spectrum(RunArgs),
    /// Compare exact derivatives with finite differences.
    Gradcheck(RunArgs),
    /// Re-run the configuration stored in a run.json.
    Rerun {
        run_json: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report output files that differ from the original run.
        #[arg(long)]
        compare: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set mode.integrate.t_end=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Start from saved parameters (sets `init.file.path`).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Output directory; defaults to `$GRADFLOW_OUT/<mode>-<seed>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) | Error::EigenFailure { .. } => 2,
        _ => 1,
    }
}

fn default_out(mode: &str, seed: u64) -> PathBuf {
    let root = std::env::var_os("GRADFLOW_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    root.join(format!("{mode}-{seed}"))
}

fn load_config(mode: &str, args: &RunArgs) -> gradflow::Result<ExperimentConfig> {
    let mut value = match &args.config {
        Some(path) => serde_json::from_slice(&read_bytes(path)?)
            .map_err(|e| Error::Format { path: path.clone(), msg: e.to_string() })?,
        None if mode == "gradcheck" => ExperimentConfig::default_gradcheck(0).to_value(),
        None => return Err(Error::Config { key: "--config".into(), msg: format!("`{mode}` needs a config file") }),
    };
    for s in &args.set {
        apply_override(&mut value, s)?;
    }
    if let Some(p) = &args.params {
        value["init"] = serde_json::json!({ "file": { "path": p } });
    }
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::Config { key: "<root>".into(), msg: "config must be a JSON object".into() })?;
    match obj.get("mode").and_then(|m| m.as_object()) {
        None => {
            obj.insert("mode".into(), serde_json::json!({ mode: {} }));
        }
        Some(m) if m.len() == 1 && m.contains_key(mode) => {}
        Some(m) => {
            let found: Vec<&String> = m.keys().collect();
            return Err(Error::Config {
                key: "mode".into(),
                msg: format!("subcommand `{mode}` but config mode is {found:?}"),
            });
        }
    }
    ExperimentConfig::from_value(value)
}

fn report(outcome: &RunOutcome, out: &Path) -> u8 {
    println!("{}", outcome.summary);
    println!("outputs: {}", out.display());
    match &outcome.failure {
        Some(f) => {
            eprintln!("numerical failure: {f}");
            2
        }
        None => 0,
    }
}

fn main_inner(cli: Cli) -> Result<u8, Error> {
    let (mode, args) = match &cli.command {
        Command::Integrate(a) => ("integrate", a),
        Command::Minimize(a) => ("minimize", a),
        Command::Protocol(a) => ("protocol", a),
        Command::Bench(a) => ("bench", a),
        Command::Neti(a) => ("neti", a),
        Command::Spectrum(a) => ("spectrum", a),
        Command::Gradcheck(a) => ("gradcheck", a),
        Command::Rerun { run_json, out, compare } => {
            let out = out.clone().unwrap_or_else(|| default_out("rerun", 0));
            let outcome = rerun(run_json, &out)?;
            let code = report(&outcome, &out);
            if *compare {
                let original = run_json.parent().unwrap_or(Path::new("."));
                let diff = diff_outputs(original, &out)?;
                if !diff.is_empty() {
                    for d in &diff {
                        eprintln!("differs: {}", d.display());
                    }
                    return Ok(2);
                }
                println!("all non-timing outputs identical");
            }
            return Ok(code);
        }
    };
    let cfg = load_config(mode, args)?;
    let out = args.out.clone().unwrap_or_else(|| default_out(mode, cfg.seed));
    let outcome = run(&cfg, &out)?;
    Ok(report(&outcome, &out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
