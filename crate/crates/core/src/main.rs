use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use grn_lab::harness::{self, ExperimentConfig, Suite};
use grn_lab::refine::ScheduleConfig;
use grn_lab::{GrnError, Result};

#[derive(Parser)]
#[command(name = "grn-lab", version, about = "HBQ tokenizer and refinement network lab")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Reconstruction error per quantization depth.
    QuantizeDemo {
        #[arg(long, default_value_t = 8)]
        m: u8,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        /// Decode prefixes of one deep code instead of re-coding per depth.
        #[arg(long)]
        truncate: bool,
    },
    BuildData,
    Train,
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    Ablate {
        #[arg(long)]
        suite: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Step allocation of the entropy-guided schedule.
    Schedule {
        #[arg(long, allow_negative_numbers = true)]
        k: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        b: Option<f64>,
        #[arg(long)]
        tmin: Option<usize>,
        #[arg(long)]
        tmax: Option<usize>,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        sweep: bool,
    },
}

fn experiment(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| GrnError::config("this command needs --config <path>"))?;
    ExperimentConfig::load(path, cli.seed, cli.out.as_deref())
}

fn run(cli: &Cli) -> Result<()> {
    harness::init_threads()?;
    match &cli.cmd {
        Cmd::QuantizeDemo { m, samples, truncate } => {
            let seed = cli.seed.unwrap_or(0);
            print!("{}", harness::cmd_quantize_demo(*m, *samples, *truncate, seed, cli.out.as_deref())?);
        }
        Cmd::BuildData => {
            let cfg = experiment(cli)?;
            let ds = harness::cmd_build_data(&cfg)?;
            println!("wrote {} records to {}", ds.records.len(), cfg.out_dir().join("data").display());
            for (c, h) in ds.class_entropy.iter().enumerate() {
                println!("class {c}: marginal entropy {h:.4}");
            }
        }
        Cmd::Train => {
            let cfg = experiment(cli)?;
            let outcome = harness::cmd_train(&cfg)?;
            let tail = &outcome.losses[outcome.losses.len().saturating_sub(100)..];
            let mean = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
            println!("trained {} steps, mean loss of last {}: {mean:.4}", outcome.losses.len(), tail.len());
        }
        Cmd::Sample { checkpoint } => {
            let cfg = experiment(cli)?;
            let n = harness::cmd_sample(&cfg, checkpoint)?;
            println!("wrote {n} samples to {}", cfg.out_dir().display());
        }
        Cmd::Eval { checkpoint } => {
            let cfg = experiment(cli)?;
            let r = harness::cmd_eval(&cfg, checkpoint)?;
            println!("samples {}  mean steps {:.2}", r.overall.n_samples, r.overall.mean_steps);
            if let Some(a) = r.overall.token_accuracy {
                println!("token accuracy {a:.4}");
            }
        }
        Cmd::Ablate { suite, checkpoint } => {
            let cfg = experiment(cli)?;
            let suite = Suite::parse(suite)?;
            for a in harness::cmd_ablate(&cfg, checkpoint.as_deref(), suite)? {
                println!(
                    "{:<10} accuracy {:.4} ± {:.4}  steps {:.2}",
                    a.mode, a.accuracy_mean, a.accuracy_std, a.mean_steps
                );
            }
        }
        Cmd::Schedule { k, b, tmin, tmax, h, sweep } => {
            let mut sc = match &cli.config {
                Some(p) => ExperimentConfig::load(p, cli.seed, None)?.schedule,
                None => ScheduleConfig::default(),
            };
            sc.k = k.unwrap_or(sc.k);
            sc.b = b.unwrap_or(sc.b);
            sc.t_min = tmin.unwrap_or(sc.t_min);
            sc.t_max = tmax.unwrap_or(sc.t_max);
            print!("{}", harness::cmd_schedule(&sc, *h, *sweep, cli.out.as_deref())?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("grn-lab: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}

