//! `wfh`: command-line workflows over the wfh toolkit.
//!
//! Every command reads JSON, writes its artifact atomically to `--out` (or
//! to stdout without it) and prints one JSON summary line. Exit status is 0
//! on success, 1 for invalid input, 2 for domain errors and 3 for numerical
//! failures.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use wfh::rng::DEFAULT_SEED;

use commands::*;

#[derive(Parser)]
#[command(name = "wfh", version, about = "Weak-field-homodyne photon-counting tomography")]
struct Cli {
    /// Random seed; the default is fixed so runs repeat exactly.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Artifact path; without it the artifact goes to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide whether a configuration determines the twirled state.
    Feasibility {
        #[arg(long)]
        k: usize,
        /// Mode 1 shares its sector with other modes.
        #[arg(long)]
        s1_multi: bool,
        #[arg(long, default_value_t = 2)]
        counters: u8,
        /// Probe magnitude fixed, only the phase varies.
        #[arg(long)]
        fixed_magnitude: bool,
        /// Click (on/off) detectors instead of photon counters.
        #[arg(long)]
        click: bool,
        /// Balanced beam splitter.
        #[arg(long)]
        balanced: bool,
        /// Maximum total photon number.
        #[arg(long, default_value_t = 2)]
        n: usize,
    },
    /// Draw (N+1)² probes with a full-rank interpolation matrix.
    DesignGamma {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        max_tries: usize,
    },
    /// Rank test for informational completeness of a context.
    IcCheck {
        #[arg(long)]
        context: PathBuf,
    },
    /// Emit the POVM elements of a context.
    PovmDump {
        #[arg(long)]
        context: PathBuf,
        /// Only this setting (0-based).
        #[arg(long)]
        setting: Option<usize>,
    },
    /// Sample a counting dataset from a state.
    Simulate {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        context: PathBuf,
        /// Total samples, split evenly over the settings.
        #[arg(long)]
        m: u64,
        /// Write exact expected counts instead of sampling.
        #[arg(long)]
        expected: bool,
    },
    /// Maximum-likelihood reconstruction, from a dataset or over simulated trials.
    Reconstruct {
        #[arg(long)]
        context: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// ReconstructionParams JSON.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Parameter override `key=value`, repeatable.
        #[arg(long = "set")]
        overrides: Vec<String>,
        /// Reference state; adds a fidelity field to the report.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// True state for multi-trial runs.
        #[arg(long)]
        state: Option<PathBuf>,
        /// Total samples per trial.
        #[arg(long)]
        m: Option<u64>,
        /// Simulate and reconstruct this many independent trials.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Parametric bootstrap of the log-likelihood ratio.
    Bootstrap {
        #[arg(long)]
        context: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Estimate (block operator or reconstruct report); reconstructed from the data if absent.
        #[arg(long)]
        estimate: Option<PathBuf>,
        #[arg(long, default_value_t = 12)]
        n_boot: usize,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
    /// Fidelity of two states, or the truncation fidelity of a state family.
    Fidelity {
        #[arg(long)]
        a: Option<PathBuf>,
        #[arg(long)]
        b: Option<PathBuf>,
        #[arg(long, conflicts_with_all = ["a", "b"])]
        truncation: Option<PathBuf>,
    },
    /// Twirl a state family onto a partition, optionally against the Haar oracle.
    Twirl {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        partition: PathBuf,
        /// Sector of each mode, comma separated.
        #[arg(long, value_delimiter = ',')]
        assignment: Option<Vec<usize>>,
        #[arg(long)]
        mc_samples: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Feasibility { .. } => "feasibility",
            Command::DesignGamma { .. } => "design-gamma",
            Command::IcCheck { .. } => "ic-check",
            Command::PovmDump { .. } => "povm-dump",
            Command::Simulate { .. } => "simulate",
            Command::Reconstruct { .. } => "reconstruct",
            Command::Bootstrap { .. } => "bootstrap",
            Command::Fidelity { .. } => "fidelity",
            Command::Twirl { .. } => "twirl",
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let seed = cli.seed;
    match cli.command {
        Command::Feasibility { k, s1_multi, counters, fixed_magnitude, click, balanced, n } => {
            feasibility_cmd(&FeasibilityArgs { k, s1_multi, counters, fixed_magnitude, click, balanced, n })
        }
        Command::DesignGamma { n, max_tries } => design_gamma_cmd(n, max_tries, seed),
        Command::IcCheck { context } => ic_check_cmd(&context),
        Command::PovmDump { context, setting } => povm_dump_cmd(&context, setting),
        Command::Simulate { state, context, m, expected } => simulate_cmd(&state, &context, m, expected, seed),
        Command::Reconstruct { context, data, params, overrides, truth, state, m, trials } => reconstruct_cmd(
            &ReconstructArgs { context, data, params, overrides, truth, state, m, trials },
            seed,
        ),
        Command::Bootstrap { context, data, estimate, n_boot, params, overrides } => {
            bootstrap_cmd(&BootstrapArgs { context, data, estimate, n_boot, params, overrides }, seed)
        }
        Command::Fidelity { a, b, truncation } => fidelity_cmd(a.as_ref(), b.as_ref(), truncation.as_ref()),
        Command::Twirl { state, partition, assignment, mc_samples } => {
            twirl_cmd(&state, &partition, assignment, mc_samples, seed)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<wfh::Error>() {
        Some(wfh::Error::Domain(_)) => 2,
        Some(wfh::Error::Numerical(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(j) = cli.jobs {
        if j == 0 || rayon::ThreadPoolBuilder::new().num_threads(j).build_global().is_err() {
            eprintln!("error: invalid --jobs {j}");
            return ExitCode::from(1);
        }
    }
    let name = cli.command.name();
    let out = cli.out.clone();
    let result = run(cli).and_then(|o| {
        match &out {
            Some(p) => io::write_json_atomic(p, &o.artifact)?,
            None => println!("{}", serde_json::to_string(&o.artifact)?),
        }
        Ok(o)
    });
    match result {
        Ok(o) => {
            println!("{}", json!({"command": name, "status": "ok", "out": out, "summary": o.summary}));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e:#}");
            println!("{}", json!({"command": name, "status": "error", "exit_code": code, "error": format!("{e:#}")}));
            ExitCode::from(code)
        }
    }
}
