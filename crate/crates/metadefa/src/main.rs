use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use metadefa::commands::{self, HeatmapRequest};
use metadefa::{Result, RunConfig};

#[derive(Parser)]
#[command(version, about = "Single-domain generalization by meta-learning with domain enhancement and CAM alignment")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run only this seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train one model per seed on the source domain.
    Train,
    /// Evaluate trained checkpoints on the target domains.
    Eval,
    /// Train and evaluate the four loss-term configurations.
    Ablate,
    /// Export CAM/CAAM heatmaps for one image.
    Heatmap {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Binary PPM image.
        #[arg(long)]
        image: PathBuf,
        /// Binary PGM foreground mask; a centred pseudo-mask when omitted.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Class index to explain; the predicted class when omitted.
        #[arg(long)]
        class: Option<usize>,
    },
    /// Write the configured dataset as PPM/PGM files with manifests.
    GenData,
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        config.seeds = vec![seed];
    }
    if let Some(out) = &cli.common.output {
        config.output_dir = out.clone();
    }
    match cli.command {
        Command::Train => {
            for path in commands::cmd_train(&config)? {
                println!("{}", path.display());
            }
        }
        Command::Eval => {
            let report = commands::cmd_eval(&config)?;
            for s in &report.per_domain_accuracy {
                println!("{}\t{:.4} ± {:.4}", s.domain, s.mean, s.std);
            }
        }
        Command::Ablate => {
            for row in commands::cmd_ablate(&config)? {
                let avg = row.report.summary(metadefa::report::AVERAGE).expect("average row");
                println!("{}\t{:.4} ± {:.4}", row.name, avg.mean, avg.std);
            }
        }
        Command::Heatmap {
            checkpoint,
            image,
            mask,
            class,
        } => {
            let req = HeatmapRequest {
                checkpoint,
                image,
                mask,
                class,
                seed: config.seeds[0],
                output: config.output_dir.clone(),
            };
            for path in commands::cmd_heatmap(&config, &req)? {
                println!("{}", path.display());
            }
        }
        Command::GenData => {
            for path in commands::cmd_gen_data(&config, &config.output_dir)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
