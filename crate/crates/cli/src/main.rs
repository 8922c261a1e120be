use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hqgan::experiment::{run_experiment, ExperimentConfig};
use hqgan::Error;

#[derive(Parser)]
#[command(name = "hqgan", version, about = "Hybrid quantum-classical GAN experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Validate the config and print the plan without training.
        #[arg(long)]
        dry_run: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory holding the CIFAR-10 binary batches.
        #[arg(long, env = "HQGAN_DATA_DIR")]
        data_dir: Option<PathBuf>,
        /// Backbone weights to initialize the discriminator from.
        #[arg(long)]
        pretrained: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::ConfigFile { .. } | Error::Usage(_) => 2,
        Error::Aborted(_) => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let Command::Run {
        config,
        dry_run,
        seed,
        data_dir,
        pretrained,
        out,
    } = cli.command;
    let cfg = ExperimentConfig::from_file(&config)?.with_overrides(seed, data_dir, pretrained, out);
    if dry_run {
        cfg.check_paths()?;
        println!("{cfg}");
        println!("dry run: config valid, nothing trained");
        return Ok(());
    }
    let summary = run_experiment(&cfg)?;
    if let Some(p) = &summary.pretrain {
        println!("pretraining accuracy: {:.4}", p.final_accuracy);
    }
    for run in &summary.runs {
        if let Some(last) = run.log.evaluations.last() {
            let r = &last.report;
            println!(
                "{}: epoch {} FID {:.4} KID {:.4} IS {:.4} ± {:.4} ({} samples, extractor {})",
                run.dir.display(),
                last.epoch,
                r.fid,
                r.kid,
                r.is_mean,
                r.is_std,
                r.n_eval,
                r.extractor_id
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
