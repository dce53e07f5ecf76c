use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use gestureflow::config::{RunConfig, KEYS};
use gestureflow::Runner;

#[derive(Parser)]
#[command(name = "gestureflow", version, about = "Two-stream recurrent gesture recognition from video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key=value config file; unset keys keep their defaults
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one key, e.g. --set train.lr=3e-5 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for --set run.seed=N
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress progress on stderr
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic corpus into run.corpus
    Synth(Common),
    /// Write encoded flow images of one clip under run.out/flow
    Flow {
        #[command(flatten)]
        common: Common,
        /// GFVS file or PPM frame directory
        clip: PathBuf,
    },
    /// Train one model per split into run.out
    Train(Common),
    /// Evaluate run.out/split<k> checkpoints on their test sets
    Eval {
        #[command(flatten)]
        common: Common,
        /// Evaluate this checkpoint on every split instead
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every run.kinds model over all splits
    Reproduce {
        #[command(flatten)]
        common: Common,
        /// Write the resolved config and split plan, then stop
        #[arg(long)]
        plan_only: bool,
    },
    /// Print every config key with its default
    Keys,
}

fn runner(common: &Common) -> anyhow::Result<Runner> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        cfg.set_assignment(o).with_context(|| format!("--set {o}"))?;
    }
    if let Some(seed) = common.seed {
        cfg.set("run.seed", &seed.to_string())?;
    }
    let mut r = Runner::new(cfg)?;
    r.verbose = !common.quiet;
    Ok(r)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(c) => {
            runner(&c)?.synth()?;
        }
        Command::Flow { common, clip } => {
            runner(&common)?.flow(&clip)?;
        }
        Command::Train(c) => {
            let mut r = runner(&c)?;
            let kind = r.config().recurrent_kind()?;
            let out = r.out_dir();
            r.train(kind, &out)?;
        }
        Command::Eval { common, checkpoint } => {
            let mut r = runner(&common)?;
            let kind = r.config().recurrent_kind()?;
            let out = r.out_dir();
            let report = r.eval(kind, &out, checkpoint.as_deref())?;
            println!("auc {} top1 {}", report.mean_auc, report.mean_top1);
        }
        Command::Reproduce { common, plan_only } => {
            let mut r = runner(&common)?;
            if plan_only {
                print!("{}", r.plan()?);
            }
            for k in r.reproduce(plan_only)? {
                println!("{} auc {} acc {}", k.kind.name(), k.report.mean_auc, k.report.mean_top1);
            }
        }
        Command::Keys => {
            for (k, v, doc) in KEYS {
                println!("{k}={v}\t# {doc}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
