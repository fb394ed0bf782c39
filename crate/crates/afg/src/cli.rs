use std::path::PathBuf;

use afg_core::model::Mode;
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::{report, stages, sweep};

#[derive(Debug, Parser)]
#[command(name = "afg", version, about = "Retrieval-augmented generation with adaptive context filtering")]
pub struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Run configuration (JSON); every section defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Generate the synthetic world and its train/dev/test splits.
    Synth {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-rank every example's passages by word overlap and keep the top k.
    Retrieve {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Attach pseudo-answers: simulated, or read from `--import`.
    Pseudo {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// JSONL of {id, text, prompt_kind} from an external model.
        #[arg(long)]
        import: Option<PathBuf>,
    },
    /// Attach silver labels to passages and pseudo-answers.
    Label {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Scoring model for the cxmi method.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train one model; writes {out}/{sigma}/{seed}/model.ckpt.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Decode a split with a checkpoint and score it.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "dev")]
        split: String,
        #[arg(long, default_value = "e2e")]
        mode: Mode,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients with central differences on a tiny model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        sigma: f64,
    },
    /// Train one model per (sigma, seed) in worker processes.
    SweepSigma {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.9")]
        sigma: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seed: Vec<u64>,
        #[arg(long, default_value = "e2e")]
        mode: Mode,
    },
    /// Print evaluation and sweep results found under a directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn load_config(arg: &ConfigArg) -> CliResult<RunConfig> {
    let c = match &arg.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    c.validate()?;
    Ok(c)
}

fn hint(arg: &ConfigArg) -> String {
    stages::config_hint(arg.config.as_deref())
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Cmd::Synth { config, seed, out } => {
            let c = load_config(&config)?;
            let s = stages::synth(&c, seed, &out)?;
            println!(
                "wrote {} train / {} dev / {} test examples to {}",
                s.train.len(),
                s.dev.len(),
                s.test.len(),
                out.display()
            );
        }
        Cmd::Retrieve { config, input, out, k } => {
            let c = load_config(&config)?;
            let s = stages::retrieve(&c, &input, &out, k)?;
            for name in stages::SPLITS {
                let split = s.get(name).expect("known split");
                println!("{name}: top-{k} recall {:.4}", afg_core::eval::split_topk_recall(split, k));
            }
        }
        Cmd::Pseudo {
            config,
            input,
            out,
            seed,
            import,
        } => {
            let c = load_config(&config)?;
            let s = stages::pseudo(&c, &input, &out, seed, import.as_deref())?;
            for name in stages::SPLITS {
                let r = afg_core::pseudo::pseudo_recall(s.get(name).expect("known split"))?;
                println!("{name}: pseudo-answer recall {r:.4}");
            }
        }
        Cmd::Label {
            config,
            input,
            out,
            checkpoint,
        } => {
            let c = load_config(&config)?;
            let s = stages::label(&c, &input, &out, checkpoint.as_deref(), &hint(&config))?;
            let positives: usize = s
                .all()
                .filter_map(|e| e.silver.as_ref())
                .map(|l| l.all_labels().iter().filter(|&&x| x == 1).count())
                .sum();
            println!("labeled {} examples ({positives} positive contexts)", s.all().count());
        }
        Cmd::Train {
            config,
            input,
            out,
            seed,
            sigma,
            mode,
        } => {
            let c = load_config(&config)?;
            let tc = stages::resolve_train(&c, seed, sigma, mode);
            let t = stages::train_stage(&c, &input, &out, &tc, &hint(&config))?;
            println!("{} steps; checkpoint {}", t.outcome.steps, t.checkpoint.display());
            if let Some(m) = t.outcome.final_dev_metric {
                println!("dev metric {m:.4}");
            }
        }
        Cmd::Eval {
            config,
            checkpoint,
            input,
            split,
            mode,
            out,
        } => {
            let c = load_config(&config)?;
            let r = stages::eval_stage(&c, &checkpoint, &input, &split, mode, out.as_deref())?;
            print!("{}", report::metrics_table(&[(split, r)]));
        }
        Cmd::Gradcheck { seed, sigma } => {
            if !(0.0..=1.0).contains(&sigma) {
                return Err(CliError::validation(anyhow::anyhow!("sigma must be in [0, 1]")));
            }
            let r = stages::gradcheck(seed, sigma)?;
            println!("{r}");
            if !r.passes(stages::GRADCHECK_TOL) {
                return Err(CliError::runtime(anyhow::anyhow!(
                    "gradient check failed: max relative error {:.3e} >= {:e}",
                    r.max_rel_err,
                    stages::GRADCHECK_TOL
                )));
            }
        }
        Cmd::SweepSigma {
            config,
            input,
            out,
            sigma,
            seed,
            mode,
        } => {
            let c = load_config(&config)?;
            let exe = std::env::current_exe().map_err(CliError::runtime)?;
            let t = sweep::run_sweep(&exe, &c, &input, &out, &sigma, &seed, mode)?;
            print!("{}", report::sweep_table(&t));
        }
        Cmd::Report { input } => print!("{}", report::render(&input)?),
    }
    Ok(())
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
