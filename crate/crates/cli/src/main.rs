use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dcgmm::checkpoint::Checkpoint;
use dcgmm::data::{convert_idx, load_dataset, save_dataset};
use dcgmm::pipeline::{self, RunConfigFile};
use dcgmm::trainer::{ConstraintSettings, Weighting};
use dcgmm::Error;

/// Deep clustering with pairwise constraints.
#[derive(Parser)]
#[command(name = "dcgmm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightingArg {
    Heuristic,
    Fixed,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain, initialize and train from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `run.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output_dir`.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Print `acc,nmi,ari` of a checkpoint on a labelled dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        csv_labelled: bool,
    },
    /// Decode samples from every mixture component.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        per_cluster: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Draw must-link / cannot-link constraints from dataset labels.
    MakeConstraints {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        csv_labelled: bool,
        #[arg(long, default_value_t = dcgmm::constraints::DEFAULT_N_CONSTRAINTS)]
        count: usize,
        /// Fraction of constraints to flip.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = dcgmm::constraints::DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = dcgmm::constraints::DEFAULT_MAGNITUDE)]
        magnitude: f64,
        #[arg(long, value_enum, default_value_t = WeightingArg::Heuristic)]
        weighting: WeightingArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Run the built-in oracle and gradient checks.
    Selftest,
    /// Write latent means, assigned clusters and labels as CSV.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        csv_labelled: bool,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Convert uncompressed IDX image/label files to a dataset file.
    ConvertIdx {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        output_dir: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        e if e.is_numerical() => 3,
        _ => 2,
    }
}

fn run(cmd: Command) -> dcgmm::Result<()> {
    match cmd {
        Command::Train { config, seed, output_dir } => {
            let mut cfg = RunConfigFile::load(&config)?;
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            if let Some(d) = output_dir {
                cfg.output_dir = d;
            }
            let summary = pipeline::run_training(&cfg)?;
            log::info!("wrote {}", cfg.output_dir.display());
            println!("{}", serde_json::to_string(&summary)?);
        }
        Command::Evaluate {
            checkpoint,
            dataset,
            csv_labelled,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let s = pipeline::evaluate(&ck, &load_dataset(&dataset, csv_labelled)?)?;
            println!("{},{},{}", s.acc, s.nmi, s.ari);
        }
        Command::Generate {
            checkpoint,
            per_cluster,
            seed,
            output_dir,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let path = pipeline::write_samples(&ck, per_cluster, seed, &output_dir)?;
            println!("{}", path.display());
        }
        Command::MakeConstraints {
            dataset,
            csv_labelled,
            count,
            noise,
            alpha,
            magnitude,
            weighting,
            seed,
            output_dir,
        } => {
            let settings = ConstraintSettings {
                count,
                noise,
                alpha,
                magnitude,
                weighting: match weighting {
                    WeightingArg::Heuristic => Weighting::Heuristic,
                    WeightingArg::Fixed => Weighting::Fixed,
                },
            };
            let ds = load_dataset(&dataset, csv_labelled)?;
            let path = pipeline::write_constraints(&ds, &settings, seed, &output_dir)?;
            println!("{}", path.display());
        }
        Command::Selftest => {
            let checks = dcgmm::selftest::run();
            let mut failed = 0;
            for c in &checks {
                println!("{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed += !c.passed as usize;
            }
            if failed > 0 {
                return Err(Error::Contract(format!("{failed} of {} self-checks failed", checks.len())));
            }
        }
        Command::ExportEmbeddings {
            checkpoint,
            dataset,
            csv_labelled,
            output_dir,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let path = pipeline::write_embeddings(&ck, &load_dataset(&dataset, csv_labelled)?, &output_dir)?;
            println!("{}", path.display());
        }
        Command::ConvertIdx {
            images,
            labels,
            limit,
            output_dir,
        } => {
            let ds = convert_idx(&images, &labels, limit)?;
            std::fs::create_dir_all(&output_dir)?;
            let path = output_dir.join("dataset.dcds");
            save_dataset(&path, &ds)?;
            println!("{} ({} x {})", path.display(), ds.n(), ds.dim());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
