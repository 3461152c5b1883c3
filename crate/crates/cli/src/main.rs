//! `iclq`: uncertainty decomposition, evaluation and simulation for k-shot
//! in-context learning runs.

mod commands;
mod output;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use iclq_core::metrics::{DEFAULT_CORRECTNESS, DEFAULT_SCORE};
use iclq_core::synthetic::{SimulationMode, DEFAULT_BEAMS, DEFAULT_NUM_SETS, DEFAULT_REPEATED_BASE};

use settings::{Common, Runtime, Settings, UsageError};

#[derive(Parser)]
#[command(name = "iclq", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a manifest and records file against the schema
    Validate {
        manifest: PathBuf,
        records: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Per-question decomposition, per-run summary and TU histogram
    Uq {
        /// A manifest and its records file; repeat for several runs
        #[arg(long = "run", num_args = 2, value_names = ["MANIFEST", "RECORDS"], required = true)]
        runs: Vec<PathBuf>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = DEFAULT_CORRECTNESS)]
        correctness: String,
        /// Score used for the summary AUROC column
        #[arg(long, default_value = DEFAULT_SCORE)]
        score: String,
        #[command(flatten)]
        common: Common,
    },
    /// AUROC of an uncertainty score against correctness
    Auroc {
        manifest: PathBuf,
        records: PathBuf,
        /// tu, eu, au or conf
        #[arg(long, default_value = DEFAULT_SCORE)]
        score: String,
        #[arg(long, default_value = DEFAULT_CORRECTNESS)]
        correctness: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Uncertainty and accuracy shift between two shot counts
    Delta {
        #[arg(long, num_args = 2, value_names = ["MANIFEST", "RECORDS"], required = true)]
        baseline: Vec<PathBuf>,
        #[arg(long, num_args = 2, value_names = ["MANIFEST", "RECORDS"], required = true)]
        target: Vec<PathBuf>,
        #[arg(long, default_value = DEFAULT_SCORE)]
        score: String,
        #[arg(long, default_value = DEFAULT_CORRECTNESS)]
        correctness: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Project residual streams onto the candidate labels
    Lens {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        head: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Also write one averaged trajectory table per gold label
        #[arg(long)]
        group_by_gold: bool,
        #[arg(long, default_value = "unknown")]
        dataset: String,
        #[arg(long, default_value = "unknown")]
        model: String,
        #[arg(long)]
        k: Option<u64>,
        /// Max abs difference allowed against final_output_probs
        #[arg(long, default_value_t = 1e-3)]
        consistency_tol: f64,
        #[command(flatten)]
        runtime: Runtime,
    },
    /// Simulate runs from a latent-concept task and sweep the estimator
    Simulate {
        task: PathBuf,
        /// Demonstration counts, comma separated
        #[arg(long = "N", value_delimiter = ',', required = true)]
        shots: Vec<u64>,
        #[arg(long = "L", default_value_t = DEFAULT_NUM_SETS)]
        num_sets: usize,
        #[arg(long = "m", default_value_t = DEFAULT_BEAMS)]
        beams: usize,
        /// distinct or repeated
        #[arg(long, default_value = "distinct", value_parser = parse_sim_mode)]
        mode: SimulationMode,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[arg(long, default_value_t = 1)]
        questions: usize,
        /// Set size drawn once in repeated mode
        #[arg(long, default_value_t = DEFAULT_REPEATED_BASE)]
        n0: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        runtime: Runtime,
    },
    /// Parse a CSV written by this tool and print it in canonical form
    Report {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_sim_mode(s: &str) -> Result<SimulationMode, String> {
    s.parse().map_err(|e: iclq_core::Error| e.to_string())
}

fn runtime_only(runtime: &Runtime) -> anyhow::Result<Settings> {
    Settings::from_env(&Common {
        runtime: runtime.clone(),
        ..Default::default()
    })
}

fn init_pool(settings: &Settings) -> anyhow::Result<()> {
    if let Some(jobs) = settings.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let settings = match &cli.command {
        Command::Validate { common, .. }
        | Command::Uq { common, .. }
        | Command::Auroc { common, .. }
        | Command::Delta { common, .. } => Settings::from_env(common)?,
        Command::Lens { runtime, .. } | Command::Simulate { runtime, .. } => runtime_only(runtime)?,
        Command::Report { .. } => Settings::from_env(&Common::default())?,
    };
    init_pool(&settings)?;
    match &cli.command {
        Command::Validate { manifest, records, .. } => commands::validate(manifest, records),
        Command::Uq {
            runs,
            out,
            correctness,
            score,
            ..
        } => commands::uq(runs, out, correctness, score, &settings),
        Command::Auroc {
            manifest,
            records,
            score,
            correctness,
            out,
            ..
        } => commands::auroc(manifest, records, score, correctness, out.as_deref(), &settings),
        Command::Delta {
            baseline,
            target,
            score,
            correctness,
            out,
            ..
        } => commands::delta(baseline, target, score, correctness, out.as_deref(), &settings),
        Command::Lens {
            dump,
            head,
            out,
            group_by_gold,
            dataset,
            model,
            k,
            consistency_tol,
            ..
        } => commands::lens(&commands::LensArgs {
            dump,
            head,
            out,
            group_by_gold: *group_by_gold,
            dataset,
            model,
            k: *k,
            consistency_tol: *consistency_tol,
        }),
        Command::Simulate {
            task,
            shots,
            num_sets,
            beams,
            mode,
            repeats,
            questions,
            n0,
            seed,
            out,
            ..
        } => commands::simulate(&commands::SimulateArgs {
            task,
            shots,
            num_sets: *num_sets,
            beams: *beams,
            mode: *mode,
            repeats: *repeats,
            questions: *questions,
            repeated_base: *n0,
            seed: *seed,
            out,
        }),
        Command::Report { input, out } => commands::report(input, out.as_deref()),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|c| {
        c.downcast_ref::<UsageError>().is_some()
            || matches!(c.downcast_ref::<iclq_core::Error>(), Some(iclq_core::Error::UnknownStrategy { .. }))
    });
    if usage {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
