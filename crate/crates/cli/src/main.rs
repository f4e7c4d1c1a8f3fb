use std::path::{Path, PathBuf};
use std::process::ExitCode;

use avloc::harness::{self, AblationAxis, RunConfig};
use avloc::train::StepLog;
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

const USAGE_ERROR: u8 = 1;
const NUMERICAL_FAILURE: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "avloc",
    version,
    about = "Sound source localization on a synthetic audio-visual world"
)]
struct Cli {
    /// `key = value` config file; unset keys keep their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config's `seed`.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Overrides the config's `out` directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Single config override, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write train and test splits under the output directory.
    Gen,
    /// Train on a dataset's train split.
    Train {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
    /// Score a checkpoint on a dataset's test split.
    Eval {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
    },
    /// Export the heatmap and overlay of one test scene.
    Localize {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "ID")]
        scene: usize,
    },
    /// Train and score every arm of one ablation axis over the configured seeds.
    Ablate {
        /// scaling, mask-type, negative-proportion, pcm-cycles or stop-gradient.
        #[arg(long)]
        axis: String,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
    /// Check analytic gradients of every op and training loss against finite differences.
    Gradcheck {
        #[arg(long, hide = true)]
        corrupt: bool,
    },
}

enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<avloc::Error> for Failure {
    fn from(e: avloc::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = resolve(cli)?;
    let out: &Path = &cfg.out;
    match &cli.command {
        Command::Gen => {
            let r = harness::cmd_gen(&cfg, out)?;
            println!(
                "wrote {} train and {} test scenes to {}",
                r.train,
                r.test,
                out.display()
            );
            println!("scenes per class: {:?}", r.class_counts);
        }
        Command::Train { data } => {
            let outcome = harness::cmd_train(&cfg, data, out)?;
            let loss = outcome.log.last().map(|l| match l {
                StepLog::Sspl(s) => s.loss,
                StepLog::Sacl(s) => s.loss,
            });
            if let Some(loss) = loss {
                println!("{} steps, final loss {loss:.6}", outcome.log.len());
            }
            println!(
                "checkpoint written to {}",
                out.join(harness::CHECKPOINT_DIR).display()
            );
        }
        Command::Eval { data, checkpoint } => {
            let r = harness::cmd_eval(&cfg, data, checkpoint, out)?;
            print!("{}", avloc::eval::summary_text(&r.summary));
            for (t, e) in r.evaluation.energies.iter().enumerate() {
                println!("energy@cycle{t} = {e:.6}");
            }
        }
        Command::Localize {
            data,
            checkpoint,
            scene,
        } => {
            let r = harness::cmd_localize(&cfg, data, checkpoint, *scene, out)?;
            println!("{}", r.heatmap.display());
            println!("{}", r.overlay.display());
        }
        Command::Ablate { axis, data } => {
            let axis = AblationAxis::parse(axis)?;
            let arms = harness::cmd_ablate(&cfg, axis, data, out)?;
            print!("{}", harness::ablation_csv(&arms));
        }
        Command::Gradcheck { corrupt } => {
            let report = harness::gradcheck_suite(*corrupt)?;
            let text = report.text();
            std::fs::create_dir_all(out)
                .map_err(|e| Failure::Usage(format!("{}: {e}", out.display())))?;
            std::fs::write(out.join("gradcheck.txt"), &text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", out.display())))?;
            cfg.write(out)?;
            print!("{text}");
            if !report.passed() {
                return Err(Failure::Numerical("gradient check failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(USAGE_ERROR),
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(USAGE_ERROR)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(NUMERICAL_FAILURE)
        }
    }
}
