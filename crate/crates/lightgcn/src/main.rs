use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lightgcn::config::{resolve, RunArgs, RunConfig};
use lightgcn::run;
use lightgcn::{CliError, Result};
use lightgcn_core::synthetic::PlantedClusters;

#[derive(Debug, Parser)]
#[command(
    name = "lightgcn",
    version,
    about = "Train, evaluate and inspect LightGCN recommenders",
    args_override_self = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model and evaluate it on the test split.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train lightgcn and lightgcn-single for each layer count.
    AblateLayers {
        #[command(flatten)]
        run: RunArgs,
        /// Layer counts: N, A-B or a comma list.
        #[arg(long, default_value = "1-4")]
        k_range: String,
    },
    /// Train once per normalization scheme.
    AblateNorm {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated schemes [default: all six]
        #[arg(long)]
        schemes: Option<String>,
    },
    /// Report embedding smoothness and check the propagation identities.
    Diagnose {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint file [default: <output>/checkpoint.lgcn]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Users in the subgraph used for the identity checks.
        #[arg(long, default_value_t = 64)]
        sample_users: usize,
    },
    /// Write a planted-cluster dataset (train.txt, test.txt).
    Synth {
        #[arg(long, value_name = "DIR")]
        output: PathBuf,
        #[arg(long, default_value_t = 2020)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 300)]
        items: usize,
        #[arg(long, default_value_t = 10)]
        clusters: usize,
        #[arg(long, default_value_t = 20)]
        per_user: usize,
        #[arg(long, default_value_t = 0.8)]
        in_cluster_prob: f64,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
    },
}

fn setup(args: &RunArgs) -> Result<RunConfig> {
    let resolved = resolve(args)?;
    for w in &resolved.warnings {
        log::warn!("{w}");
    }
    let config = resolved.config;
    if config.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    Ok(config)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train { run } => {
            let config = setup(&run)?;
            config.dataset_dir()?;
            run::cmd_train(&config)?;
        }
        Command::AblateLayers { run, k_range } => {
            let config = setup(&run)?;
            config.dataset_dir()?;
            let ks = run::parse_k_range(&k_range)?;
            run::cmd_ablate_layers(&config, &ks)?;
        }
        Command::AblateNorm { run, schemes } => {
            let config = setup(&run)?;
            config.dataset_dir()?;
            let schemes = run::parse_schemes(schemes.as_deref())?;
            run::cmd_ablate_norm(&config, &schemes)?;
        }
        Command::Diagnose {
            run,
            checkpoint,
            sample_users,
        } => {
            let config = setup(&run)?;
            config.dataset_dir()?;
            let checkpoint =
                checkpoint.unwrap_or_else(|| config.output_dir.join(run::CHECKPOINT_FILE));
            let diagnosis = run::cmd_diagnose(&config, &checkpoint, sample_users)?;
            if !diagnosis.all_passed() {
                return Err(CliError::CheckFailed(
                    "propagation identity check failed on the sampled subgraph".into(),
                ));
            }
        }
        Command::Synth {
            output,
            seed,
            users,
            items,
            clusters,
            per_user,
            in_cluster_prob,
            test_fraction,
        } => {
            let params = PlantedClusters {
                num_users: users,
                num_items: items,
                num_clusters: clusters,
                interactions_per_user: per_user,
                in_cluster_prob,
                test_fraction,
            };
            let dir = run::cmd_synth(&params, seed, &output)?;
            println!("wrote {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
