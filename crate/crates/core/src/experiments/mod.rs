//! Experiment orchestration behind the `dfa` command line: training runs
//! with per-epoch metrics, bottleneck sweeps, feedback memory reports and
//! filter visualization.
//!
//! Each training run writes into its own directory:
//!
//! - `manifest.txt`: a `[run]` section (code version, run seed, dataset
//!   digests, standardization constants) followed by the full resolved
//!   config. Written before training starts.
//! - `metrics.csv`: see [`metrics`].
//! - `checkpoint.bin`: see [`checkpoint`]; its header is the manifest.
//!
//! Run `r` of a multi-run experiment uses seed `seed + r`.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod viz;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::alignment::AlignmentRecord;
use crate::datasets::{self, LabeledDataset, Standardization};
use crate::feedback::{allocated_elements, memory_report, MemoryReport};
use crate::layers::BlockKind;
use crate::tensor::{Prng, Scalar};
use crate::training::{evaluate, hidden_sizes, resolve, Network, ResolvedLayer, Trainer};
use crate::{Error, Result};

pub use checkpoint::Checkpoint;
pub use config::{DatasetKind, Precision, RunConfig};
pub use metrics::{read_metrics, MetricRow, MetricsWriter};
pub use viz::{visualize_filters, FilterImage, FilterVizOptions};

/// Train and test splits after subsetting and standardization.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub standardization: Option<Standardization>,
}

/// Loads the configured dataset from `root`, keeps the requested subsets
/// and standardizes both splits with statistics of the training subset.
pub fn prepare_data(cfg: &RunConfig, root: &Path) -> Result<PreparedData> {
    let (train, test) = match cfg.dataset {
        DatasetKind::Mnist => (datasets::mnist(root, true)?, datasets::mnist(root, false)?),
        DatasetKind::Cifar10 => (datasets::cifar10(root, true)?, datasets::cifar10(root, false)?),
        DatasetKind::Cifar100 => {
            let dir = root.join("cifar-100-binary");
            (
                datasets::load_cifar_binary(&[dir.join("train.bin")], 100)?,
                datasets::load_cifar_binary(&[dir.join("test.bin")], 100)?,
            )
        }
    };
    prepare_splits(cfg, train, test)
}

/// [`prepare_data`] for splits already in memory.
pub fn prepare_splits(cfg: &RunConfig, train: LabeledDataset, test: LabeledDataset) -> Result<PreparedData> {
    let mut train = match cfg.train_subset {
        Some(n) => train.head(n)?,
        None => train,
    };
    let mut test = match cfg.test_subset {
        Some(n) => test.head(n)?,
        None => test,
    };
    let want: usize = cfg.input_dims.iter().product();
    if train.images().row_len() != want {
        return Err(Error::Config(format!(
            "architecture input {:?} does not match samples of {:?}",
            cfg.input_dims,
            train.sample_dims()
        )));
    }
    let standardization = if cfg.standardize {
        let s = Standardization::fit(&train);
        s.apply(&mut train)?;
        s.apply(&mut test)?;
        Some(s)
    } else {
        None
    };
    Ok(PreparedData {
        train,
        test,
        standardization,
    })
}

/// The resolved config plus everything else that determines a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub run: Vec<(String, String)>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(config: &RunConfig, run_seed: u64, data: &PreparedData) -> Self {
        let join = |v: &[f32]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut run = vec![
            ("code_version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("run_seed".to_string(), run_seed.to_string()),
            ("train_digest".to_string(), data.train.digest().to_string()),
            ("test_digest".to_string(), data.test.digest().to_string()),
            ("train_samples".to_string(), data.train.len().to_string()),
            ("test_samples".to_string(), data.test.len().to_string()),
        ];
        if let Some(s) = &data.standardization {
            run.push(("standardization_mean".into(), join(&s.mean)));
            run.push(("standardization_std".into(), join(&s.std)));
        }
        let mut config = config.clone();
        config.train.seed = run_seed;
        config.runs = 1;
        Self { run, config }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("[run]\n");
        for (k, v) in &self.run {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s.push_str("\n[config]\n");
        s.push_str(&self.config.to_text());
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut run = Vec::new();
        let mut in_run = false;
        for line in text.lines().map(str::trim) {
            if line.starts_with('[') {
                in_run = line == "[run]";
            } else if in_run {
                if let Some((k, v)) = line.split_once('=') {
                    run.push((k.trim().to_string(), v.trim().to_string()));
                }
            }
        }
        Ok(Self {
            run,
            config: RunConfig::parse(text)?,
        })
    }
}

/// Outcome of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    /// Alignment from the last probe.
    pub alignment: Vec<AlignmentRecord>,
    pub out_dir: PathBuf,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains run `run` of `cfg` into `out_dir`.
pub fn run_training(cfg: &RunConfig, data: &PreparedData, run: usize, out_dir: &Path) -> Result<RunSummary> {
    match cfg.precision {
        Precision::F32 => run_typed::<f32>(cfg, data, run, out_dir),
        Precision::F64 => run_typed::<f64>(cfg, data, run, out_dir),
    }
}

fn run_typed<T: Scalar>(cfg: &RunConfig, data: &PreparedData, run: usize, out_dir: &Path) -> Result<RunSummary> {
    create_dir(out_dir)?;
    let seed = cfg.train.seed + run as u64;
    let manifest = Manifest::new(cfg, seed, data).to_text();
    let manifest_path = out_dir.join("manifest.txt");
    fs::write(&manifest_path, &manifest).map_err(|e| Error::io(&manifest_path, e))?;

    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = seed;
    let allocated_before = allocated_elements();
    let mut trainer = Trainer::<T>::build(train_cfg, &cfg.input_dims, &cfg.layers)?;
    let fb_digest = trainer.feedback().map(|fb| fb.digest());
    let probe_idx: Vec<usize> = (0..cfg.train.probe_batch.min(data.test.len())).collect();
    let (probe_x, probe_y) = data.test.batch(&probe_idx)?;
    let probe_x = probe_x.cast::<T>();

    let mut metrics = MetricsWriter::create(&out_dir.join("metrics.csv"))?;
    let mut last = None;
    for _ in 0..cfg.train.epochs {
        let m = trainer.train_epoch(&data.train, Some((&probe_x, &probe_y)))?;
        let ev = evaluate(trainer.network_mut(), &data.test, cfg.eval_batch)?;
        let mut rows = vec![
            MetricRow::scalar(m.step, m.epoch, "train_loss", m.train_loss),
            MetricRow::scalar(m.step, m.epoch, "train_accuracy", m.train_accuracy),
            MetricRow::scalar(m.step, m.epoch, "test_loss", ev.loss),
            MetricRow::scalar(m.step, m.epoch, "test_accuracy", ev.accuracy),
            MetricRow::scalar(m.step, m.epoch, "lr", m.lr),
        ];
        for r in &m.alignment {
            rows.extend(MetricRow::alignment(m.epoch, r));
        }
        metrics.write(&rows)?;
        metrics.flush()?;
        log::info!(
            "run {run} epoch {}: train acc {:.4}, test acc {:.4}, test loss {:.4}",
            m.epoch,
            m.train_accuracy,
            ev.accuracy,
            ev.loss
        );
        trainer.end_epoch(ev.loss);
        let alignment = if m.alignment.is_empty() {
            last.as_ref().map(|(_, _, a): &(_, _, Vec<AlignmentRecord>)| a.clone()).unwrap_or_default()
        } else {
            m.alignment.clone()
        };
        last = Some((m, ev, alignment));
    }
    if trainer.feedback().map(|fb| fb.digest()) != fb_digest {
        return Err(Error::State("feedback matrix changed during training".into()));
    }
    let allocated = (allocated_elements() - allocated_before) * T::BYTES as u64;
    let (budget, _) = cmd_memory_report(cfg)?;
    if allocated > budget.unified_bytes {
        return Err(Error::State(format!(
            "feedback allocations of {allocated} bytes exceed the unified budget of {}",
            budget.unified_bytes
        )));
    }
    Checkpoint::from_network(&manifest, trainer.network()).save(&out_dir.join("checkpoint.bin"))?;
    let (m, ev, alignment) = match last {
        Some(l) => l,
        None => {
            let ev = evaluate(trainer.network_mut(), &data.test, cfg.eval_batch)?;
            return Ok(RunSummary {
                run,
                seed,
                train_loss: f64::NAN,
                train_accuracy: f64::NAN,
                test_loss: ev.loss,
                test_accuracy: ev.accuracy,
                alignment: Vec::new(),
                out_dir: out_dir.to_path_buf(),
            });
        }
    };
    Ok(RunSummary {
        run,
        seed,
        train_loss: m.train_loss,
        train_accuracy: m.train_accuracy,
        test_loss: ev.loss,
        test_accuracy: ev.accuracy,
        alignment,
        out_dir: out_dir.to_path_buf(),
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (mean, (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt())
}

/// One aggregated quantity over runs.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub metric: String,
    pub layer: Option<usize>,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn aggregate(runs: &[RunSummary]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    let mut push = |metric: &str, layer: Option<usize>, v: Vec<f64>| {
        let (mean, std) = mean_std(&v);
        out.push(Aggregate {
            metric: metric.into(),
            layer,
            mean,
            std,
            n: v.len(),
        });
    };
    push("train_accuracy", None, runs.iter().map(|r| r.train_accuracy).collect());
    push("test_accuracy", None, runs.iter().map(|r| r.test_accuracy).collect());
    push("test_loss", None, runs.iter().map(|r| r.test_loss).collect());
    let layers = runs.iter().map(|r| r.alignment.len()).max().unwrap_or(0);
    for l in 1..=layers {
        let v: Vec<f64> = runs
            .iter()
            .filter_map(|r| r.alignment.iter().find(|a| a.layer == l).map(|a| a.mean_cos))
            .collect();
        push("align_cos", Some(l), v);
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub runs: Vec<RunSummary>,
    pub aggregate: Vec<Aggregate>,
}

/// Trains `cfg.runs` seeded runs into `out_dir/run-XX/` and writes
/// `out_dir/summary.csv` with per-run values and their mean and std.
pub fn cmd_train(cfg: &RunConfig, data: &PreparedData, out_dir: &Path) -> Result<TrainOutcome> {
    create_dir(out_dir)?;
    let runs = (0..cfg.runs)
        .map(|r| run_training(cfg, data, r, &out_dir.join(format!("run-{r:02}"))))
        .collect::<Result<Vec<_>>>()?;
    let agg = aggregate(&runs);
    let mut csv = String::from("run,seed,metric,layer,value\n");
    for r in &runs {
        for (metric, v) in [
            ("train_accuracy", r.train_accuracy),
            ("test_accuracy", r.test_accuracy),
            ("test_loss", r.test_loss),
        ] {
            writeln!(csv, "{},{},{metric},,{v}", r.run, r.seed).unwrap();
        }
        for a in &r.alignment {
            writeln!(csv, "{},{},align_cos,{},{}", r.run, r.seed, a.layer, a.mean_cos).unwrap();
        }
    }
    for a in &agg {
        let layer = a.layer.map(|l| l.to_string()).unwrap_or_default();
        writeln!(csv, "mean,,{},{layer},{}", a.metric, a.mean).unwrap();
        writeln!(csv, "std,,{},{layer},{}", a.metric, a.std).unwrap();
    }
    let path = out_dir.join("summary.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(TrainOutcome { runs, aggregate: agg })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    /// Neurons of the masked layer that keep their gradients.
    pub size: usize,
    pub run: usize,
    pub seed: u64,
    pub test_accuracy: f64,
    pub align_mean: f64,
    pub align_std: f64,
}

/// Trains one fresh network per bottleneck size (and run) with all but
/// `size` neurons of the masked layer frozen. The masked layer is
/// `mask_layer` from the config, 2 by default. Writes `sweep.csv`.
pub fn cmd_bottleneck_sweep(cfg: &RunConfig, data: &PreparedData, sizes: &[usize], out_dir: &Path) -> Result<Vec<SweepPoint>> {
    if sizes.is_empty() {
        return Err(Error::Config("no bottleneck sizes given".into()));
    }
    let layer = cfg.train.mask_layer.unwrap_or(2);
    let resolved = resolve(&cfg.input_dims, &cfg.layers)?;
    let width = resolved
        .iter()
        .filter_map(|l| match l {
            ResolvedLayer::Block(c) => Some(c.units()),
            _ => None,
        })
        .nth(layer - 1)
        .ok_or_else(|| Error::Config(format!("mask layer {layer} does not exist")))?;
    if let Some(&s) = sizes.iter().find(|&&s| s > width) {
        return Err(Error::Config(format!("bottleneck {s} exceeds layer width {width}")));
    }
    create_dir(out_dir)?;
    let mut points = Vec::new();
    let mut csv = String::from("size,run,seed,test_accuracy,align_cos,align_std\n");
    for &size in sizes {
        let mut c = cfg.clone();
        c.train.mask_layer = Some(layer);
        c.train.bottleneck = Some(size);
        for r in 0..cfg.runs {
            let s = run_training(&c, data, r, &out_dir.join(format!("size-{size}")).join(format!("run-{r:02}")))?;
            let a = s.alignment.iter().find(|a| a.layer == layer);
            let p = SweepPoint {
                size,
                run: r,
                seed: s.seed,
                test_accuracy: s.test_accuracy,
                align_mean: a.map_or(f64::NAN, |a| a.mean_cos),
                align_std: a.map_or(f64::NAN, |a| a.std_cos),
            };
            writeln!(
                csv,
                "{},{},{},{},{},{}",
                p.size, p.run, p.seed, p.test_accuracy, p.align_mean, p.align_std
            )
            .unwrap();
            log::info!("bottleneck {size} run {r}: acc {:.4}, align {:.4}", p.test_accuracy, p.align_mean);
            points.push(p);
        }
    }
    let path = out_dir.join("sweep.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(points)
}

/// Feedback storage of the configured architecture, naive versus unified,
/// at the configured precision. Does not allocate the network.
pub fn cmd_memory_report(cfg: &RunConfig) -> Result<(MemoryReport, String)> {
    let resolved = resolve(&cfg.input_dims, &cfg.layers)?;
    let classes = match resolved.last() {
        Some(ResolvedLayer::Block(c)) if matches!(c.kind, BlockKind::Fc { .. }) => c.units(),
        _ => return Err(Error::Config("architecture must end with an fc classifier".into())),
    };
    let sizes = hidden_sizes(&resolved);
    let report = memory_report(&sizes, classes, cfg.precision.bytes())?;
    let gb = |b: u64| b as f64 / 1e9;
    let mut s = String::new();
    writeln!(s, "layer,output_size,feedback_bytes").unwrap();
    for (i, (l, b)) in report.per_layer_bytes.iter().enumerate() {
        writeln!(s, "{},{l},{b}", i + 1).unwrap();
    }
    writeln!(s, "error_length = {classes}").unwrap();
    writeln!(s, "bytes_per_element = {}", cfg.precision.bytes()).unwrap();
    writeln!(s, "naive_bytes = {} ({:.2} GB)", report.naive_bytes, gb(report.naive_bytes)).unwrap();
    writeln!(s, "unified_bytes = {} ({:.2} GB)", report.unified_bytes, gb(report.unified_bytes)).unwrap();
    Ok((report, s))
}

/// Loads a checkpoint, optimizes inputs for the chosen filters and writes
/// `filter-<f>.ppm`, `grid.ppm` and `activations.csv` to `out_dir`.
pub fn cmd_filter_viz(checkpoint: &Path, opts: &FilterVizOptions, out_dir: &Path) -> Result<Vec<FilterImage>> {
    let ck = Checkpoint::load(checkpoint)?;
    let manifest = Manifest::parse(&ck.header)?;
    let cfg = manifest.config;
    let mut net = Network::<f64>::build(&cfg.input_dims, &cfg.layers, &mut Prng::new(0))?;
    ck.restore(&mut net)?;
    let images = visualize_filters(&mut net, opts)?;
    create_dir(out_dir)?;
    let mut csv = String::from("filter,step,activation\n");
    for img in &images {
        let (w, h, rgb) = viz::to_rgb(&img.input)?;
        viz::write_ppm(&out_dir.join(format!("filter-{}.ppm", img.filter)), w, h, &rgb)?;
        for (step, a) in img.activations.iter().enumerate() {
            writeln!(csv, "{},{step},{a}", img.filter).unwrap();
        }
    }
    if !images.is_empty() {
        let (w, h, rgb) = viz::grid(&images)?;
        viz::write_ppm(&out_dir.join("grid.ppm"), w, h, &rgb)?;
    }
    let path = out_dir.join("activations.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(images)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_std_matches_loop() {
        let v = [0.61, 0.64, 0.58, 0.66, 0.60, 0.63, 0.59, 0.65, 0.62, 0.57];
        let (m, s) = mean_std(&v);
        let mut mean = 0.0;
        for x in v {
            mean += x;
        }
        mean /= 10.0;
        let mut var = 0.0;
        for x in v {
            var += (x - mean) * (x - mean);
        }
        assert!((m - mean).abs() < 1e-15);
        assert!((s - (var / 10.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn memory_report_of_small_mlp() {
        let cfg = RunConfig::parse("[architecture]\ninput = 3072\nfc 800\nfc 800\nfc 10\n").unwrap();
        let (r, text) = cmd_memory_report(&cfg).unwrap();
        assert_eq!((r.naive_bytes, r.unified_bytes), (64_000, 32_000));
        assert!(text.contains("naive_bytes = 64000"));
        let one = RunConfig::parse("[architecture]\ninput = 3072\nfc 800\nfc 10\n").unwrap();
        let (r, _) = cmd_memory_report(&one).unwrap();
        assert_eq!(r.naive_bytes, r.unified_bytes);
    }
}
