use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dfa_core::datasets::{data_root, DATA_ROOT_ENV};
use dfa_core::experiments::{self, FilterVizOptions, RunConfig};
use dfa_core::training::Algorithm;

#[derive(Parser)]
#[command(name = "dfa", version, about = "Direct feedback alignment experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one or more seeded runs and write metrics, checkpoints and a summary.
    Train(RunArgs),
    /// Train one network per bottleneck size with the rest of the masked layer frozen.
    BottleneckSweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated bottleneck sizes; defaults to `sweep_sizes` from the config.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
    },
    /// Print naive versus unified feedback storage for an architecture.
    MemoryReport {
        #[arg(long)]
        config: PathBuf,
    },
    /// Maximize filter activations of a trained convolution and write PPM images.
    FilterViz {
        #[arg(long)]
        checkpoint: PathBuf,
        /// 1-based block index of a convolution.
        #[arg(long, default_value_t = 1)]
        layer: usize,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7")]
        filters: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out/filters")]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    parallel_backward: bool,
    /// Dataset root; overrides the environment variable.
    #[arg(long, env = DATA_ROOT_ENV)]
    data_root: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> dfa_core::Result<(RunConfig, PathBuf)> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(r) = self.runs {
            cfg.runs = r;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(a) = self.algorithm {
            cfg.train.algorithm = a;
        }
        cfg.train.parallel_backward |= self.parallel_backward;
        let root = self.data_root.clone().unwrap_or_else(data_root);
        Ok((cfg, root))
    }
}

fn run(cli: Cli) -> dfa_core::Result<()> {
    match cli.command {
        Command::Train(args) => {
            let (cfg, root) = args.load()?;
            let data = experiments::prepare_data(&cfg, &root)?;
            let outcome = experiments::cmd_train(&cfg, &data, &args.out_dir)?;
            for a in &outcome.aggregate {
                let layer = a.layer.map(|l| format!(" layer {l}")).unwrap_or_default();
                println!("{}{layer}: {:.4} ± {:.4} (n={})", a.metric, a.mean, a.std, a.n);
            }
            println!("summary: {}", args.out_dir.join("summary.csv").display());
        }
        Command::BottleneckSweep { run, sizes } => {
            let (cfg, root) = run.load()?;
            let sizes = if sizes.is_empty() { cfg.sweep_sizes.clone() } else { sizes };
            let data = experiments::prepare_data(&cfg, &root)?;
            for p in experiments::cmd_bottleneck_sweep(&cfg, &data, &sizes, &run.out_dir)? {
                println!(
                    "size {:>4} run {}: test accuracy {:.4}, alignment {:.4} ± {:.4}",
                    p.size, p.run, p.test_accuracy, p.align_mean, p.align_std
                );
            }
        }
        Command::MemoryReport { config } => {
            let cfg = RunConfig::load(&config)?;
            print!("{}", experiments::cmd_memory_report(&cfg)?.1);
        }
        Command::FilterViz {
            checkpoint,
            layer,
            filters,
            steps,
            lr,
            seed,
            out_dir,
        } => {
            let opts = FilterVizOptions {
                layer,
                filters,
                steps,
                lr,
                seed,
            };
            for img in experiments::cmd_filter_viz(&checkpoint, &opts, &out_dir)? {
                let first = img.activations.first().copied().unwrap_or(f64::NAN);
                let last = img.activations.last().copied().unwrap_or(f64::NAN);
                println!("filter {}: activation {first:.4} -> {last:.4}", img.filter);
            }
            println!("images: {}", out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
