use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dbp_core::config::ExperimentConfig;
use dbp_core::pipeline::{cmd_finetune, cmd_generate, cmd_pretrain, cmd_report, cmd_sweep, metrics_path_for};
use dbp_core::Error;

#[derive(Parser)]
#[command(name = "dbp", version, about = "Delayed-bottlenecking graph pre-training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key=value config file; missing keys take defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and its split manifest (`<out>.split`)
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train an encoder and write a checkpoint plus metrics CSV
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt_out: PathBuf,
        /// Metrics CSV; defaults to `<ckpt-out>.metrics.csv`
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune from a pre-training checkpoint, or from scratch with --no-transfer
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, required_unless_present = "no_transfer", conflicts_with = "no_transfer")]
        ckpt_in: Option<PathBuf>,
        #[arg(long)]
        ckpt_out: PathBuf,
        /// Metrics CSV; defaults to `<ckpt-out>.metrics.csv`
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_transfer: bool,
    },
    /// Run the sweep_alphas x sweep_betas x sweep_seeds grid into a directory
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract trace and sweep CSVs from a directory of metrics and sweep CSVs
    Report {
        /// Directory holding metrics CSVs
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> dbp_core::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
                key: "--config".into(),
                msg: format!("{}: {e}", path.display()),
            })?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn metrics_out(out: Option<PathBuf>, ckpt: &Path) -> PathBuf {
    out.unwrap_or_else(|| metrics_path_for(ckpt))
}

fn run(cli: Cli) -> dbp_core::Result<()> {
    match cli.command {
        Command::Generate { common, out } => {
            let cfg = load_config(&common)?;
            let (ds, split) = cmd_generate(&cfg, &out)?;
            println!(
                "graphs={} train={} valid={} test={}",
                ds.graphs.len(),
                split.train.len(),
                split.valid.len(),
                split.test.len()
            );
        }
        Command::Pretrain {
            common,
            data,
            ckpt_out,
            out,
        } => {
            let cfg = load_config(&common)?;
            let metrics = metrics_out(out, &ckpt_out);
            let res = cmd_pretrain(&cfg, &data, &ckpt_out, &metrics)?;
            if let Some(last) = res.epochs.last() {
                println!(
                    "epoch={} l_con={} l_pi={} l_pre={}",
                    last.epoch, last.l_con, last.l_pi, last.l_pre
                );
            }
        }
        Command::Finetune {
            common,
            data,
            ckpt_in,
            ckpt_out,
            out,
            no_transfer,
        } => {
            let cfg = load_config(&common)?;
            let metrics = metrics_out(out, &ckpt_out);
            let ckpt_in = if no_transfer { None } else { ckpt_in };
            let res = cmd_finetune(&cfg, &data, ckpt_in.as_deref(), &ckpt_out, &metrics)?;
            if let Some(last) = res.epochs.last() {
                println!(
                    "epoch={} train_auc={} test_auc={} gen_gap={}",
                    last.epoch, last.metrics.train_auc, last.metrics.test_auc, last.metrics.generalization_gap
                );
            }
        }
        Command::Sweep { common, data, out } => {
            let cfg = load_config(&common)?;
            let rows = cmd_sweep(&cfg, &data, &out)?;
            let failed = rows.iter().filter(|r| r.result.is_err()).count();
            println!("cells={} failed={failed} out={}", rows.len(), out.display());
        }
        Command::Report { data, out } => {
            for p in cmd_report(&data, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

/// 2 for configuration problems, 4 for numerical aborts, 3 for everything else.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Compat(_) => 2,
        Error::Numerical(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
