use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mmcse::commands::{self, DataKind};
use mmcse::experiment::Sweep;
use mmcse::selftest::SelftestOptions;
use mmcse::{CliError, Result, RunConfig};

/// Contrastive sentence-embedding training with optional image or audio
/// side tasks.
///
/// Commands that take a config accept trailing `--key value` overrides for
/// any config key, e.g. `mmcse train --modality image --max-steps 300`.
/// MMCSE_SEED and MMCSE_OUT_DIR override the seed and output directory.
#[derive(Parser)]
#[command(name = "mmcse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one arm; writes config, log, best checkpoint, report and plots.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
        overrides: Vec<String>,
    },
    /// Score a checkpoint on an sts dataset file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also record the top-k right sentences for every left sentence.
        #[arg(long)]
        retrieve_k: Option<usize>,
    },
    /// Gradient checks, oracle comparisons, identities, shapes, determinism.
    Selftest {
        /// Corrupt analytic gradients to demonstrate the checks fail.
        #[arg(long)]
        perturb_gradient: bool,
    },
    /// Run a sweep: noise, subsample, seeds or loss_variant.
    Ablate {
        #[arg(long)]
        sweep: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
        overrides: Vec<String>,
    },
    /// Print the k corpus sentences closest to a query.
    Retrieve {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A sentences dataset file.
        #[arg(long)]
        corpus: PathBuf,
        /// Space-separated token ids.
        #[arg(long)]
        query: String,
        #[arg(short, long, default_value_t = 3)]
        k: usize,
    },
    /// Write a generated dataset: sentences, triplets, dev-sts, test-sts, images or audio.
    GenData {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
        overrides: Vec<String>,
    },
    /// Write a checkpoint of the untrained encoder.
    Init {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
        overrides: Vec<String>,
    },
    /// Print every config key with its default and meaning.
    Keys,
}

fn run(command: Command) -> Result<String> {
    match command {
        Command::Train { config, overrides } => commands::train(&RunConfig::resolve(config.as_deref(), &overrides)?),
        Command::Eval { checkpoint, dataset, out, retrieve_k } => {
            commands::eval(&checkpoint, &dataset, out.as_deref(), retrieve_k)
        }
        Command::Selftest { perturb_gradient } => commands::selftest(&SelftestOptions {
            perturb_gradient,
            ..SelftestOptions::default()
        }),
        Command::Ablate { sweep, config, overrides } => {
            let sweep: Sweep = sweep.parse()?;
            commands::ablate(&RunConfig::resolve(config.as_deref(), &overrides)?, sweep)
        }
        Command::Retrieve { checkpoint, corpus, query, k } => commands::retrieve(&checkpoint, &corpus, &query, k),
        Command::GenData { kind, out, config, overrides } => {
            let kind: DataKind = kind.parse()?;
            commands::gen_data(&RunConfig::resolve(config.as_deref(), &overrides)?, kind, &out)
        }
        Command::Init { out, config, overrides } => {
            commands::init_checkpoint(&RunConfig::resolve(config.as_deref(), &overrides)?, &out)
        }
        Command::Keys => Ok(RunConfig::documented_keys()
            .into_iter()
            .map(|(k, d, doc)| format!("{k} = {d}\t# {doc}\n"))
            .collect()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("run `mmcse --help` for usage");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
