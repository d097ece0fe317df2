use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use vbfs_cli::commands::{self as cmd, Layout, DEFAULT_SIGMAS};
use vbfs_cli::config::ConfigFile;
use vbfs_cli::exit_code;
use vbfs_cli::lock::OutputLock;
use vbfs_core::io::Split;
use vbfs_core::optim::{InputCase, LossChoice, Stage};

#[derive(Parser)]
#[command(name = "vbfs", version, about = "Estimate tool-tissue forces from video and tool kinematics")]
struct Cli {
    /// key=value config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the command
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// More logging (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Cnn,
    Lstm,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset under OUT/data
    Synth,
    /// Crop, subtract the mean frame and build space-time inputs
    Preprocess {
        /// Running mean frame and past-only space-time frames
        #[arg(long)]
        causal: bool,
    },
    /// Train the feature CNN or a force LSTM
    Train {
        stage: StageArg,
        /// LSTM input case: I, II or III
        #[arg(long)]
        case: Option<InputCase>,
        /// LSTM loss: A or B
        #[arg(long)]
        loss: Option<LossChoice>,
        /// Use causally preprocessed inputs
        #[arg(long)]
        causal: bool,
    },
    /// Write CNN features for every sequence
    Extract {
        /// Read causally preprocessed inputs
        #[arg(long)]
        causal: bool,
    },
    /// Score an LSTM checkpoint
    Eval {
        /// Input case: I (tool), II (video) or III (both)
        #[arg(long)]
        case: InputCase,
        /// Loss: A (RMSE + GDL) or B (RMSE only)
        #[arg(long)]
        loss: LossChoice,
        /// Also score pushing and pulling separately
        #[arg(long)]
        per_task: bool,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Sweep Gaussian noise on the tool positions
    Robustness {
        /// Input case: I (tool), II (video) or III (both)
        #[arg(long)]
        case: InputCase,
        /// Loss: A (RMSE + GDL) or B (RMSE only)
        #[arg(long)]
        loss: LossChoice,
        /// Comma-separated noise levels in normalized units
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
    },
    /// Compare offline and causal preprocessing with one model
    RtCompare {
        /// Input case: I, II or III
        #[arg(long, default_value = "III")]
        case: InputCase,
        /// Loss: A or B
        #[arg(long, default_value = "A")]
        loss: LossChoice,
        /// Comma-separated sequence ids (default: first pushing and pulling test sequence)
        #[arg(long, value_delimiter = ',')]
        sequences: Option<Vec<String>>,
    },
    /// Fit and score the ARMAX baseline
    Armax,
    /// Collect summaries and charts under OUT/report
    Report,
}

fn run(cli: Cli) -> Result<()> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    let layout = Layout::new(&cli.out);
    let _lock = OutputLock::acquire(&cli.out)?;
    match cli.command {
        Command::Synth => {
            let mut c = file.synth()?;
            if let Some(s) = cli.seed {
                c.seed = s;
            }
            let entries = cmd::cmd_synth(&layout, &c)?;
            let manifest = std::fs::read(layout.data().join(vbfs_core::io::MANIFEST_FILE))?;
            println!("{} sequences, manifest sha256 {}", entries.len(), cmd::sha256_hex(&manifest));
        }
        Command::Preprocess { causal } => {
            let mut c = file.preprocess()?;
            if causal {
                c.causal_mean = true;
                c.causal_space_time = true;
            }
            let n = cmd::cmd_preprocess(&layout, &c)?;
            println!("{n} inputs written to {}", layout.prep(c.causal_mean).display());
        }
        Command::Train { stage, case, loss, causal } => {
            let stage = match stage {
                StageArg::Cnn => Stage::Cnn,
                StageArg::Lstm => Stage::Lstm,
            };
            let mut c = file.train(stage)?;
            if let Some(v) = case {
                c.case = v;
            }
            if let Some(v) = loss {
                c.loss = v;
            }
            if let Some(s) = cli.seed {
                c.seed = s;
            }
            c.causal |= causal;
            c.validate()?;
            let log = match stage {
                Stage::Cnn => cmd::cmd_train_cnn(&layout, &c, file.cnn_layout()?)?,
                Stage::Lstm => cmd::cmd_train_lstm(&layout, &c)?,
            };
            if let Some(last) = log.last() {
                println!("iteration {}: test MRE {}", last.iteration, vbfs_core::metrics::fmt_opt(last.mre_test));
            }
        }
        Command::Extract { causal } => {
            let n = cmd::cmd_extract(&layout, causal)?;
            println!("{n} feature vectors");
        }
        Command::Eval { case, loss, per_task, split } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            for r in cmd::cmd_eval(&layout, case, loss, per_task, split)? {
                println!("{} {}: mean PCC {}", r.label, r.task, vbfs_core::metrics::fmt_opt(r.mean_pcc()));
            }
        }
        Command::Robustness { case, loss, sigmas } => {
            let sigmas = sigmas.or(file.sigmas()?).unwrap_or_else(|| DEFAULT_SIGMAS.to_vec());
            let rows = cmd::cmd_robustness(&layout, case, loss, &sigmas, cli.seed.unwrap_or(0))?;
            for (s, r) in rows {
                println!("sigma {s}: mean PCC {}", vbfs_core::metrics::fmt_opt(r.mean_pcc()));
            }
        }
        Command::RtCompare { case, loss, sequences } => {
            let rows = cmd::cmd_rt_compare(&layout, case, loss, sequences.or(file.sequences()), &file.preprocess()?)?;
            print!("{}", cmd::rt_csv(&rows));
        }
        Command::Armax => {
            for r in cmd::cmd_armax(&layout, file.armax()?)? {
                println!("ARMAX {}: mean PCC {}", r.task, vbfs_core::metrics::fmt_opt(r.mean_pcc()));
            }
        }
        Command::Report => {
            let dir = cmd::cmd_report(&layout).context("building report")?;
            println!("report written to {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
