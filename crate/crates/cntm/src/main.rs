use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cntm::commands::{self, EvalArgs, GenDataArgs, SplitKind};
use cntm::config::TaskKind;
use cntm::{CliError, Result, RunConfig};
use cntm_core::model::MemoryKind;

#[derive(Parser)]
#[command(name = "cntm", version, about = "Memory-augmented conformer: data, training, evaluation, gradient checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Base values: `full` (full scale) or `toy`.
    #[arg(long, default_value = "full")]
    preset: String,
    /// `section.key = value` file applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override, applied last; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed (same as `--set run.seed=N`).
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::preset(&self.preset)?;
        if let Some(p) = &self.config {
            cfg = RunConfig::load(p, cfg)?;
        }
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus, or a whole train/dev/long/very-long suite.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        task: Option<TaskKind>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, default_value = "full")]
        split: SplitKind,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        min_len: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
        /// Output corpus file.
        #[arg(long, required_unless_present = "suite", conflicts_with = "suite")]
        out: Option<PathBuf>,
        /// Write train.txt, dev.txt, long.txt and very-long.txt into this directory.
        #[arg(long)]
        suite: Option<PathBuf>,
    },
    /// Train a model; writes config, metrics log and checkpoints to --out.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `ntm` or `none` (identity bridge).
        #[arg(long)]
        memory: Option<MemoryKind>,
    },
    /// Decode evaluation splits and print an error-rate table.
    Eval {
        /// Training output directory.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        full: Option<PathBuf>,
        #[arg(long)]
        long: Option<PathBuf>,
        #[arg(long)]
        very_long: Option<PathBuf>,
        /// Beam width; 1 decodes greedily.
        #[arg(long)]
        beam: Option<usize>,
        /// Row label in the table.
        #[arg(long, default_value = "system")]
        name: String,
        /// Structured report of the baseline to compare against.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Write this system's structured report here.
        #[arg(long)]
        report_out: Option<PathBuf>,
        /// Write decoded hypotheses per split into this directory.
        #[arg(long)]
        hyp_dir: Option<PathBuf>,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        /// Run a single suite.
        #[arg(long)]
        only: Option<String>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Corrupt every analytic gradient by this amount.
        #[arg(long, hide = true)]
        inject_fault: Option<f64>,
    },
    /// Combine structured eval reports into one table.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// System name of the baseline row.
        #[arg(long)]
        baseline: Option<String>,
    },
    /// Print the resolved configuration.
    Config {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            config,
            task,
            count,
            split,
            k,
            min_len,
            max_len,
            out,
            suite,
        } => {
            let mut cfg = config.resolve()?;
            if let Some(t) = task {
                cfg.task.kind = t;
            }
            if let Some(dir) = suite {
                for p in commands::cmd_gen_suite(&cfg, &dir)? {
                    println!("{}", p.display());
                }
                return Ok(());
            }
            let out = out.ok_or_else(|| CliError::Usage("--out is required".into()))?;
            let mut args = GenDataArgs::from_config(&cfg, count.unwrap_or(cfg.task.train_count), out);
            args.split = split;
            args.k = k.unwrap_or(args.k);
            args.len_range = (min_len.unwrap_or(args.len_range.0), max_len.unwrap_or(args.len_range.1));
            let n = commands::cmd_gen_data(&cfg, &args)?;
            println!("wrote {n} utterances to {}", args.out.display());
        }
        Command::Train {
            config,
            train,
            dev,
            out,
            memory,
        } => {
            let mut cfg = config.resolve()?;
            if let Some(m) = memory {
                cfg.model.memory = m;
            }
            let s = commands::cmd_train(&cfg, &train, &dev, &out)?;
            println!(
                "parameters {}\tsteps {}\tepochs {}\tdev_loss {}\tdev_accuracy {}",
                s.parameters,
                s.steps,
                s.epochs,
                s.final_dev_loss.map_or("-".into(), |v| format!("{v:.4}")),
                s.final_dev_accuracy.map_or("-".into(), |v| format!("{v:.4}")),
            );
        }
        Command::Eval {
            run,
            checkpoint,
            full,
            long,
            very_long,
            beam,
            name,
            baseline,
            report_out,
            hyp_dir,
        } => {
            let splits = [("full", full), ("long", long), ("very-long", very_long)]
                .into_iter()
                .filter_map(|(n, p)| p.map(|p| (n.to_string(), p)))
                .collect();
            let args = EvalArgs {
                run,
                checkpoint,
                splits,
                beam,
                name,
                baseline,
                report_out,
                hyp_dir,
            };
            let (_, table) = commands::cmd_eval(&args)?;
            print!("{table}");
        }
        Command::Gradcheck {
            only,
            seed,
            inject_fault,
        } => {
            let reports = commands::cmd_gradcheck(only.as_deref(), inject_fault, seed)?;
            print!("{}", commands::render_grad_reports(&reports));
            let failed = reports.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                return Err(CliError::Numerical(format!("{failed} of {} gradient checks failed", reports.len())));
            }
        }
        Command::Report { reports, baseline } => {
            print!("{}", commands::cmd_report(&reports, baseline.as_deref())?);
        }
        Command::Config { config } => print!("{}", config.resolve()?.dump()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
