//! Plain-text run configuration.
//!
//! ```text
//! # comments start with '#'
//! dataset = cifar10
//! algorithm = dfa
//! learning_rate = 5e-4
//!
//! [architecture]
//! input = 3x32x32
//! dropout 0.1
//! fc 800 tanh dropout=0.1
//! conv 32 k=5 s=1 p=2 tanh bn
//! maxpool
//! fc 10
//! ```
//!
//! Hidden blocks without an explicit activation use the `activation` key;
//! the last block is the classifier and is always linear.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::datasets::AugmentSpec;
use crate::layers::Activation;
use crate::training::{LayerSpec, TrainConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Cifar100,
}

impl DatasetKind {
    pub fn input_dims(self) -> [usize; 3] {
        match self {
            DatasetKind::Mnist => [1, 28, 28],
            DatasetKind::Cifar10 | DatasetKind::Cifar100 => [3, 32, 32],
        }
    }

    pub fn classes(self) -> usize {
        match self {
            DatasetKind::Cifar100 => 100,
            _ => 10,
        }
    }

    fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Cifar100 => "cifar100",
        }
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "cifar10" => Ok(DatasetKind::Cifar10),
            "cifar100" => Ok(DatasetKind::Cifar100),
            _ => Err(Error::Config(format!("unknown dataset `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn bytes(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

/// Everything a run needs besides the data itself.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dataset: DatasetKind,
    /// Use only the first `n` training samples.
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
    pub standardize: bool,
    pub eval_batch: usize,
    pub precision: Precision,
    pub runs: usize,
    /// Bottleneck sizes for a sweep.
    pub sweep_sizes: Vec<usize>,
    pub activation: Activation,
    pub input_dims: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            dataset: DatasetKind::Cifar10,
            train_subset: None,
            test_subset: None,
            standardize: true,
            eval_batch: 500,
            precision: Precision::F32,
            runs: 1,
            sweep_sizes: Vec::new(),
            activation: Activation::Tanh,
            input_dims: Vec::new(),
            layers: Vec::new(),
        }
    }
}

const KEYS: &[&str] = &[
    "seed",
    "algorithm",
    "learning_rate",
    "epochs",
    "batch_size",
    "schedule",
    "patience",
    "lr_factor",
    "normalize_feedback",
    "mask_layer",
    "bottleneck",
    "parallel_backward",
    "probe_every",
    "probe_batch",
    "augment_flip",
    "augment_pad",
    "augment_crop",
    "dataset",
    "train_subset",
    "test_subset",
    "standardize",
    "eval_batch",
    "precision",
    "runs",
    "sweep_sizes",
    "activation",
];

fn parse_value<V: FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

fn parse_optional(key: &str, v: &str) -> Result<Option<usize>> {
    match v {
        "none" | "all" => Ok(None),
        _ => parse_value(key, v).map(Some),
    }
}

fn parse_dims(v: &str) -> Result<Vec<usize>> {
    let dims: Vec<usize> = v
        .split('x')
        .map(|d| parse_value("input", d.trim()))
        .collect::<Result<_>>()?;
    if dims.is_empty() || dims.contains(&0) || !(dims.len() == 1 || dims.len() == 3) {
        return Err(Error::Config(format!("input must be N or CxHxW, got `{v}`")));
    }
    Ok(dims)
}

/// One `[architecture]` line. `None` activation means "use the default".
fn parse_layer(line: &str) -> Result<(LayerSpec, bool)> {
    let mut words = line.split_whitespace();
    let kind = words.next().unwrap_or_default();
    let rest: Vec<&str> = words.collect();
    let bad = |msg: &str| Error::Config(format!("architecture line `{line}`: {msg}"));
    let mut activation = None;
    let (mut dropout, mut bn) = (0.0, false);
    let (mut k, mut s, mut p) = (None, 1, 0);
    let mut size = None;
    for w in &rest {
        if let Some(v) = w.strip_prefix("dropout=") {
            dropout = parse_value("dropout", v)?;
        } else if let Some(v) = w.strip_prefix("k=") {
            k = Some(parse_value("k", v)?);
        } else if let Some(v) = w.strip_prefix("s=") {
            s = parse_value("s", v)?;
        } else if let Some(v) = w.strip_prefix("p=") {
            p = parse_value("p", v)?;
        } else if *w == "bn" {
            bn = true;
        } else if size.is_none() && w.chars().all(|c| c.is_ascii_digit() || c == '.') {
            size = Some(*w);
        } else {
            activation = Some(w.parse::<Activation>().map_err(|_| bad(&format!("unknown token `{w}`")))?);
        }
    }
    let explicit = activation.is_some();
    let act = activation.unwrap_or(Activation::Identity);
    let spec = match kind {
        "fc" => {
            let units = parse_value("fc", size.ok_or_else(|| bad("missing unit count"))?)?;
            LayerSpec::fc(units, act).with_dropout(dropout).with_batchnorm(bn)
        }
        "conv" => {
            let channels = parse_value("conv", size.ok_or_else(|| bad("missing channel count"))?)?;
            let k = k.ok_or_else(|| bad("missing k=<kernel>"))?;
            LayerSpec::conv(channels, k, s, p, act).with_dropout(dropout).with_batchnorm(bn)
        }
        "dropout" => LayerSpec::Dropout(parse_value("dropout", size.ok_or_else(|| bad("missing rate"))?)?),
        "maxpool" => {
            if size.is_some_and(|v| v != "2") {
                return Err(bad("only 2x2 pooling is supported"));
            }
            LayerSpec::MaxPool
        }
        _ => return Err(bad("expected fc, conv, dropout or maxpool")),
    };
    Ok((spec, explicit))
}

fn set_activation(spec: &mut LayerSpec, act: Activation) {
    if let LayerSpec::Fc { activation, .. } | LayerSpec::Conv { activation, .. } = spec {
        *activation = act;
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parses the text format; unknown keys are collected and reported
    /// together. Lines in a `[run]` section are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut unknown = Vec::new();
        let mut section = "config".to_string();
        let mut layers = Vec::new();
        let mut crop = (0usize, 0usize);
        let mut input = None;
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                if !matches!(section.as_str(), "config" | "architecture" | "run") {
                    return Err(Error::Config(format!("unknown section [{section}]")));
                }
                continue;
            }
            match section.as_str() {
                "run" => continue,
                "architecture" => {
                    if let Some(v) = line.strip_prefix("input").and_then(|r| r.trim_start().strip_prefix('=')) {
                        input = Some(parse_dims(v.trim())?);
                    } else {
                        layers.push(parse_layer(line)?);
                    }
                    continue;
                }
                _ => {}
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("expected `key = value`, got `{line}`")))?;
            let t = &mut cfg.train;
            match key {
                "seed" => t.seed = parse_value(key, value)?,
                "algorithm" => t.algorithm = value.parse()?,
                "learning_rate" => t.learning_rate = parse_value(key, value)?,
                "epochs" => t.epochs = parse_value(key, value)?,
                "batch_size" => t.batch_size = parse_value(key, value)?,
                "schedule" => t.schedule = parse_bool(key, value)?,
                "patience" => t.patience = parse_value(key, value)?,
                "lr_factor" => t.lr_factor = parse_value(key, value)?,
                "normalize_feedback" => t.normalize_feedback = parse_bool(key, value)?,
                "mask_layer" => t.mask_layer = parse_optional(key, value)?,
                "bottleneck" => t.bottleneck = parse_optional(key, value)?,
                "parallel_backward" => t.parallel_backward = parse_bool(key, value)?,
                "probe_every" => t.probe_every = parse_value(key, value)?,
                "probe_batch" => t.probe_batch = parse_value(key, value)?,
                "augment_flip" => t.augment.flip = parse_bool(key, value)?,
                "augment_pad" => crop.0 = parse_value(key, value)?,
                "augment_crop" => crop.1 = parse_value(key, value)?,
                "dataset" => cfg.dataset = value.parse()?,
                "train_subset" => cfg.train_subset = parse_optional(key, value)?,
                "test_subset" => cfg.test_subset = parse_optional(key, value)?,
                "standardize" => cfg.standardize = parse_bool(key, value)?,
                "eval_batch" => cfg.eval_batch = parse_value(key, value)?,
                "precision" => {
                    cfg.precision = match value {
                        "f32" => Precision::F32,
                        "f64" => Precision::F64,
                        _ => return Err(Error::Config(format!("precision must be f32 or f64, got `{value}`"))),
                    }
                }
                "runs" => cfg.runs = parse_value(key, value)?,
                "sweep_sizes" => {
                    cfg.sweep_sizes = value
                        .split(',')
                        .filter(|v| !v.trim().is_empty())
                        .map(|v| parse_value(key, v.trim()))
                        .collect::<Result<_>>()?
                }
                "activation" => cfg.activation = value.parse()?,
                _ => unknown.push(key.to_string()),
            }
        }
        if !unknown.is_empty() {
            return Err(Error::Config(format!(
                "unknown keys: {} (known: {})",
                unknown.join(", "),
                KEYS.join(", ")
            )));
        }
        if crop.1 > 0 {
            cfg.train.augment = AugmentSpec {
                pad_crop: Some(crop),
                ..cfg.train.augment
            };
        }
        let blocks: Vec<usize> = layers
            .iter()
            .enumerate()
            .filter(|(_, (l, _))| matches!(l, LayerSpec::Fc { .. } | LayerSpec::Conv { .. }))
            .map(|(i, _)| i)
            .collect();
        let last = blocks.last().copied();
        for (i, (spec, explicit)) in layers.iter_mut().enumerate() {
            if Some(i) == last {
                if *explicit {
                    return Err(Error::Config("the classifier (last block) takes no activation".into()));
                }
            } else if !*explicit {
                set_activation(spec, cfg.activation);
            }
        }
        cfg.layers = layers.into_iter().map(|(l, _)| l).collect();
        if cfg.layers.is_empty() {
            return Err(Error::Config("missing [architecture] block".into()));
        }
        cfg.input_dims = input.unwrap_or_else(|| cfg.dataset.input_dims().to_vec());
        if cfg.runs == 0 || cfg.eval_batch == 0 {
            return Err(Error::Config("runs and eval_batch must be at least 1".into()));
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; [`RunConfig::parse`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let opt = |v: Option<usize>| v.map_or("none".to_string(), |v| v.to_string());
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("seed", t.seed.to_string());
        kv("algorithm", t.algorithm.to_string());
        kv("learning_rate", t.learning_rate.to_string());
        kv("epochs", t.epochs.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("schedule", t.schedule.to_string());
        kv("patience", t.patience.to_string());
        kv("lr_factor", t.lr_factor.to_string());
        kv("normalize_feedback", t.normalize_feedback.to_string());
        kv("mask_layer", opt(t.mask_layer));
        kv("bottleneck", opt(t.bottleneck));
        kv("parallel_backward", t.parallel_backward.to_string());
        kv("probe_every", t.probe_every.to_string());
        kv("probe_batch", t.probe_batch.to_string());
        kv("augment_flip", t.augment.flip.to_string());
        let (pad, crop) = t.augment.pad_crop.unwrap_or((0, 0));
        kv("augment_pad", pad.to_string());
        kv("augment_crop", crop.to_string());
        kv("dataset", self.dataset.name().to_string());
        kv("train_subset", opt(self.train_subset));
        kv("test_subset", opt(self.test_subset));
        kv("standardize", self.standardize.to_string());
        kv("eval_batch", self.eval_batch.to_string());
        kv(
            "precision",
            match self.precision {
                Precision::F32 => "f32",
                Precision::F64 => "f64",
            }
            .to_string(),
        );
        kv("runs", self.runs.to_string());
        kv(
            "sweep_sizes",
            self.sweep_sizes.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("activation", self.activation.to_string());
        s.push_str("\n[architecture]\n");
        let dims: Vec<String> = self.input_dims.iter().map(|d| d.to_string()).collect();
        writeln!(s, "input = {}", dims.join("x")).unwrap();
        let n_blocks = self
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Fc { .. } | LayerSpec::Conv { .. }))
            .count();
        let mut seen = 0;
        for layer in &self.layers {
            let extras = |s: &mut String, act: &Activation, dropout: f64, bn: bool, last: bool| {
                if !last {
                    write!(s, " {act}").unwrap();
                }
                if dropout > 0.0 {
                    write!(s, " dropout={dropout}").unwrap();
                }
                if bn {
                    s.push_str(" bn");
                }
            };
            match layer {
                LayerSpec::Fc {
                    units,
                    activation,
                    dropout,
                    batchnorm,
                } => {
                    seen += 1;
                    write!(s, "fc {units}").unwrap();
                    extras(&mut s, activation, *dropout, *batchnorm, seen == n_blocks);
                }
                LayerSpec::Conv {
                    channels,
                    kernel,
                    stride,
                    pad,
                    activation,
                    dropout,
                    batchnorm,
                } => {
                    seen += 1;
                    write!(s, "conv {channels} k={kernel} s={stride} p={pad}").unwrap();
                    extras(&mut s, activation, *dropout, *batchnorm, seen == n_blocks);
                }
                LayerSpec::Dropout(p) => write!(s, "dropout {p}").unwrap(),
                LayerSpec::MaxPool => s.push_str("maxpool"),
            }
            s.push('\n');
        }
        s
    }
}
