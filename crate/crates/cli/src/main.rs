use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wmar::trainer::Mode;
use wmar_cli::{
    cmd_chart, cmd_eval, cmd_grad_check, cmd_run, extract_overrides, load_config, parse_sets, CliError, EvalArgs,
    RunArgs,
};

/// World-model agents with augmented replay for continual RL.
///
/// Config values can be overridden with dotted flags such as
/// `--budget.N 1000` or with `--set budget.N=1000`.
#[derive(Parser)]
#[command(name = "wmar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one mode for every configured seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// wmar, fifo_only, single_task or random (default: from config).
        #[arg(long)]
        mode: Option<Mode>,
        /// Comma-separated seeds (default: from config).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from per-seed checkpoints when present.
        #[arg(long)]
        resume: bool,
        #[arg(long = "set")]
        sets: Vec<String>,
    },
    /// Forgetting and forward transfer of continual runs against baselines.
    Eval {
        /// Continual run directories (repeatable).
        #[arg(long, required = true)]
        cl: Vec<PathBuf>,
        #[arg(long)]
        single: PathBuf,
        #[arg(long)]
        random: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Compare runs whose config hashes differ.
        #[arg(long)]
        force: bool,
    },
    /// Render SVG curves from a curves.csv or normalized.csv.
    Chart {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        title: Option<String>,
    },
    /// Parse and validate a config, printing it with its hash.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set")]
        sets: Vec<String>,
    },
    /// Finite-difference gradient checks.
    GradCheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn dispatch(args: Vec<String>) -> Result<(), CliError> {
    let (args, mut overrides) = extract_overrides(args)?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                Err(CliError::Config(String::new()))
            } else {
                Ok(())
            };
        }
    };
    match cli.command {
        Command::Run {
            config,
            mode,
            seeds,
            jobs,
            out,
            resume,
            sets,
        } => {
            overrides.extend(parse_sets(&sets)?);
            let dir = cmd_run(RunArgs {
                config,
                overrides,
                mode,
                seeds,
                jobs: jobs.max(1),
                out,
                resume,
            })?;
            println!("{}", dir.display());
        }
        Command::Eval {
            cl,
            single,
            random,
            out,
            force,
        } => {
            let evals = cmd_eval(EvalArgs {
                cl,
                single,
                random,
                out,
                force,
            })?;
            for e in evals {
                let ft = match e.table.avg_fwd_transfer_median {
                    Some(v) => format!("{v:.4}"),
                    None => "undefined".into(),
                };
                println!(
                    "{}: forgetting median {:.4} [{:.4}, {:.4}], forward transfer median {ft}",
                    e.model, e.table.avg_forgetting_median, e.table.avg_forgetting_q25, e.table.avg_forgetting_q75
                );
                for (_, m) in &e.per_seed {
                    for w in &m.warnings {
                        eprintln!("warning: {w}");
                    }
                }
            }
        }
        Command::Chart { input, out, title } => {
            for p in cmd_chart(&input, &out, title.as_deref())? {
                println!("{}", p.display());
            }
        }
        Command::ValidateConfig { config, sets } => {
            overrides.extend(parse_sets(&sets)?);
            let cfg = load_config(&config, &overrides)?;
            print!("{}", cfg.to_text());
            println!("# hash {}", cfg.experiment_hash());
        }
        Command::GradCheck { trials, seed } => {
            print!("{}", cmd_grad_check(trials, seed)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
