use super::{
    apply_gradient_mask, bp_backward, dfa_backward, dfa_backward_parallel, loss_and_error, one_hot, sgd_step,
    Algorithm, MaskSpec, Network, Plateau,
};
use crate::alignment::{self, AlignmentRecord};
use crate::datasets::{augment, AugmentSpec, LabeledDataset};
use crate::feedback::UnifiedFeedback;
use crate::layers::Mode;
use crate::tensor::{Prng, Scalar, Tensor};
use crate::{Error, Result};

/// Sub-streams forked from the run seed. Weight initialization has its own
/// stream, so BP and DFA runs with one seed start from the same network.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const FEEDBACK: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const AUGMENT: u64 = 4;
    pub const MASK: u64 = 5;
    pub const PROBE: u64 = 6;
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Reduce the learning rate on a stagnating evaluation loss.
    pub schedule: bool,
    pub patience: usize,
    pub lr_factor: f64,
    /// Scale the feedback matrix by `1 / sqrt(l_max * e_len)`.
    pub normalize_feedback: bool,
    /// 1-based block whose gradients are partly masked. Without
    /// `bottleneck` nothing is masked; sweeps still use it as their target.
    pub mask_layer: Option<usize>,
    /// Neurons of the masked block that keep their gradients.
    pub bottleneck: Option<usize>,
    pub parallel_backward: bool,
    /// Alignment probe every this many epochs; 0 disables it.
    pub probe_every: usize,
    pub probe_batch: usize,
    pub augment: AugmentSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            algorithm: Algorithm::Dfa,
            learning_rate: 5e-4,
            epochs: 15,
            batch_size: 128,
            schedule: true,
            patience: 5,
            lr_factor: 10.0,
            normalize_feedback: true,
            mask_layer: None,
            bottleneck: None,
            parallel_backward: false,
            probe_every: 1,
            probe_batch: 128,
            augment: AugmentSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("learning rate {} must be non-negative", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.lr_factor <= 0.0 {
            return Err(Error::Config("lr factor must be positive".into()));
        }
        if self.bottleneck.is_some() && self.mask_layer.is_none() {
            return Err(Error::Config("bottleneck needs a mask_layer".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Optimizer steps taken so far in the run.
    pub step: u64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub lr: f64,
    pub alignment: Vec<AlignmentRecord>,
}

fn correct<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(n, &l)| {
            let row = logits.row(n);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == l
        })
        .count()
}

/// Loss and accuracy in eval mode, `batch` samples at a time.
pub fn evaluate<T: Scalar>(net: &mut Network<T>, data: &LabeledDataset, batch: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set is empty".into()));
    }
    let (mut loss, mut hits) = (0.0, 0);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let (x, y) = data.batch(chunk)?;
        let logits = net.forward(&x.cast(), Mode::Eval, None)?;
        let (l, _) = loss_and_error(&logits, &one_hot(&y, net.classes())?)?;
        loss += l * chunk.len() as f64;
        hits += correct(&logits, &y);
    }
    Ok(Evaluation {
        loss: loss / data.len() as f64,
        accuracy: hits as f64 / data.len() as f64,
    })
}

/// Owns a network and everything needed to train it reproducibly.
#[derive(Clone, Debug)]
pub struct Trainer<T = f32> {
    cfg: TrainConfig,
    net: Network<T>,
    fb: Option<UnifiedFeedback<T>>,
    mask: Option<MaskSpec>,
    plateau: Plateau,
    shuffle_rng: Prng,
    dropout_rng: Prng,
    augment_rng: Prng,
    probe_rng: Prng,
    step: u64,
    epoch: usize,
}

impl<T: Scalar> Trainer<T> {
    /// DFA runs draw the unified feedback matrix here, sized for the widest
    /// hidden block.
    pub fn new(cfg: TrainConfig, net: Network<T>) -> Result<Self> {
        cfg.validate()?;
        let root = Prng::new(cfg.seed);
        let fb = match (cfg.algorithm, net.hidden_sizes().iter().max()) {
            (Algorithm::Dfa, Some(&l_max)) => Some(UnifiedFeedback::from_rng(
                &mut root.fork(streams::FEEDBACK),
                l_max,
                net.classes(),
                cfg.normalize_feedback,
            )?),
            _ => None,
        };
        let mask = match (cfg.mask_layer, cfg.bottleneck) {
            (Some(layer), Some(keep)) => {
                if layer == 0 || layer > net.depth() {
                    return Err(Error::Config(format!("mask_layer {layer} outside 1..={}", net.depth())));
                }
                let units = net.block(layer - 1).config().units();
                if keep > units {
                    return Err(Error::Config(format!("bottleneck {keep} exceeds the {units} neurons of layer {layer}")));
                }
                Some(MaskSpec::random(layer - 1, units, units - keep, &mut root.fork(streams::MASK))?)
            }
            _ => None,
        };
        Ok(Self {
            plateau: Plateau::new(cfg.learning_rate, cfg.patience, cfg.lr_factor),
            shuffle_rng: root.fork(streams::SHUFFLE),
            dropout_rng: root.fork(streams::DROPOUT),
            augment_rng: root.fork(streams::AUGMENT),
            probe_rng: root.fork(streams::PROBE),
            cfg,
            net,
            fb,
            mask,
            step: 0,
            epoch: 0,
        })
    }

    /// Builds the network from `specs` with the run's init stream.
    pub fn build(cfg: TrainConfig, input_dims: &[usize], specs: &[super::LayerSpec]) -> Result<Self> {
        let net = Network::build(input_dims, specs, &mut Prng::new(cfg.seed).fork(streams::INIT))?;
        Self::new(cfg, net)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<T> {
        &mut self.net
    }

    pub fn into_network(self) -> Network<T> {
        self.net
    }

    pub fn feedback(&self) -> Option<&UnifiedFeedback<T>> {
        self.fb.as_ref()
    }

    pub fn mask(&self) -> Option<&MaskSpec> {
        self.mask.as_ref()
    }

    pub fn lr(&self) -> f64 {
        self.plateau.lr()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One forward, backward and SGD update. Returns the batch loss and the
    /// number of correct predictions made before the update.
    pub fn train_step(&mut self, x: &Tensor<T>, labels: &[usize]) -> Result<(f64, usize)> {
        let logits = self.net.forward(x, Mode::Train, Some(&mut self.dropout_rng))?;
        let (loss, e) = loss_and_error(&logits, &one_hot(labels, self.net.classes())?)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {}", self.step)));
        }
        let mut grads = match (self.cfg.algorithm, &self.fb) {
            (Algorithm::Bp, _) | (Algorithm::Dfa, None) => bp_backward(&self.net, &e)?,
            (Algorithm::Dfa, Some(fb)) if self.cfg.parallel_backward => dfa_backward_parallel(&self.net, &e, fb)?,
            (Algorithm::Dfa, Some(fb)) => dfa_backward(&self.net, &e, fb)?,
        };
        if let Some(mask) = &self.mask {
            apply_gradient_mask(&mut grads, mask)?;
        }
        sgd_step(&mut self.net, &grads, self.plateau.lr())?;
        self.step += 1;
        Ok((loss, correct(&logits, labels)))
    }

    /// Alignment of every block on one batch, without side effects on the
    /// network or the training streams. `None` for BP runs.
    pub fn probe(&self, x: &Tensor<T>, labels: &[usize]) -> Result<Option<Vec<AlignmentRecord>>> {
        let Some(fb) = &self.fb else { return Ok(None) };
        let rng = self.probe_rng.fork(self.step);
        alignment::measure(&self.net, x, labels, fb, rng, self.step).map(Some)
    }

    /// One pass over `data` in a seeded random order, then the alignment
    /// probe on `probe` when it is due.
    pub fn train_epoch(&mut self, data: &LabeledDataset, probe: Option<(&Tensor<T>, &[usize])>) -> Result<EpochMetrics> {
        if data.is_empty() {
            return Err(Error::Empty("training set is empty".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        self.shuffle_rng.shuffle(&mut order);
        let (mut loss, mut hits, mut seen) = (0.0, 0, 0);
        // Batch norm cannot train on one sample, so a trailing singleton is dropped.
        let has_bn = self.net.blocks().any(|b| b.batchnorm().is_some());
        for chunk in order.chunks(self.cfg.batch_size) {
            if chunk.len() < 2 && has_bn && data.len() >= 2 {
                continue;
            }
            let (x, y) = data.batch(chunk)?;
            let x = if self.cfg.augment.is_identity() {
                x
            } else {
                augment(&x, &mut self.augment_rng, &self.cfg.augment)?
            };
            let (l, c) = self.train_step(&x.cast(), &y)?;
            loss += l * chunk.len() as f64;
            hits += c;
            seen += chunk.len();
        }
        self.epoch += 1;
        let alignment = match probe {
            Some((x, y)) if self.cfg.probe_every > 0 && self.epoch.is_multiple_of(self.cfg.probe_every) => {
                self.probe(x, y)?.unwrap_or_default()
            }
            _ => Vec::new(),
        };
        Ok(EpochMetrics {
            epoch: self.epoch,
            step: self.step,
            train_loss: loss / seen as f64,
            train_accuracy: hits as f64 / seen as f64,
            lr: self.plateau.lr(),
            alignment,
        })
    }

    /// Feeds the epoch's monitored loss to the plateau schedule; returns the
    /// learning rate for the next epoch.
    pub fn end_epoch(&mut self, monitored_loss: f64) -> f64 {
        if self.cfg.schedule {
            self.plateau.observe(monitored_loss)
        } else {
            self.plateau.lr()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Activation;
    use crate::training::LayerSpec;

    fn toy_data(n: usize, seed: u64) -> LabeledDataset {
        let mut rng = Prng::new(seed);
        let mut pixels = Vec::with_capacity(n * 4);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let class = rng.below(2) as usize;
            for j in 0..4 {
                let centre = if (j % 2 == 0) == (class == 0) { 1.0 } else { -1.0 };
                pixels.push((centre + 0.3 * rng.next_gaussian()) as f32);
            }
            labels.push(class);
        }
        LabeledDataset::new(Tensor::new(vec![n, 1, 2, 2], pixels).unwrap(), labels, 2).unwrap()
    }

    fn specs() -> Vec<LayerSpec> {
        vec![
            LayerSpec::fc(8, Activation::Tanh).with_dropout(0.1),
            LayerSpec::fc(8, Activation::Tanh),
            LayerSpec::fc(2, Activation::Identity),
        ]
    }

    fn cfg(algorithm: Algorithm) -> TrainConfig {
        TrainConfig {
            seed: 42,
            algorithm,
            learning_rate: 0.05,
            epochs: 3,
            batch_size: 16,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_epoch_changes_nothing_but_reports() {
        let data = toy_data(64, 1);
        let mut t = Trainer::<f32>::build(TrainConfig { learning_rate: 0.0, ..cfg(Algorithm::Dfa) }, &[1, 2, 2], &specs()).unwrap();
        let before: Vec<_> = t.network().blocks().map(|b| b.weight().clone()).collect();
        let m = t.train_epoch(&data, None).unwrap();
        assert!(m.train_loss.is_finite() && m.step == 4);
        for (b, w) in t.network().blocks().zip(&before) {
            assert_eq!(b.weight(), w);
        }
    }

    #[test]
    fn both_algorithms_learn_a_separable_toy() {
        let data = toy_data(256, 2);
        for algorithm in [Algorithm::Bp, Algorithm::Dfa] {
            let mut t = Trainer::<f32>::build(cfg(algorithm), &[1, 2, 2], &specs()).unwrap();
            for _ in 0..3 {
                t.train_epoch(&data, None).unwrap();
            }
            let acc = evaluate(t.network_mut(), &data, 100).unwrap().accuracy;
            assert!(acc > 0.9, "{algorithm}: {acc}");
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let data = toy_data(64, 3);
        let run = || {
            let mut t = Trainer::<f32>::build(cfg(Algorithm::Dfa), &[1, 2, 2], &specs()).unwrap();
            t.train_epoch(&data, None).unwrap();
            t.network().blocks().flat_map(|b| b.weight().data().to_vec()).map(f32::to_bits).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn bp_and_dfa_share_initialization() {
        let a = Trainer::<f32>::build(cfg(Algorithm::Bp), &[1, 2, 2], &specs()).unwrap();
        let b = Trainer::<f32>::build(cfg(Algorithm::Dfa), &[1, 2, 2], &specs()).unwrap();
        for (x, y) in a.network().blocks().zip(b.network().blocks()) {
            assert_eq!(x.weight(), y.weight());
        }
        assert!(a.feedback().is_none() && b.feedback().is_some());
    }

    #[test]
    fn probe_has_no_side_effects() {
        let data = toy_data(64, 4);
        let mut t = Trainer::<f32>::build(cfg(Algorithm::Dfa), &[1, 2, 2], &specs()).unwrap();
        t.train_epoch(&data, None).unwrap();
        let (x, y) = data.batch(&(0..32).collect::<Vec<_>>()).unwrap();
        let mut twin = t.clone();
        let records = t.probe(&x, &y).unwrap().unwrap();
        assert_eq!(records.len(), 3);
        assert!((records[2].mean_cos - 1.0).abs() < 1e-6);
        let a = t.train_epoch(&data, None).unwrap();
        let b = twin.train_epoch(&data, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { bottleneck: Some(1), ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { mask_layer: Some(1), ..TrainConfig::default() }.validate().is_ok());
        let over = TrainConfig { mask_layer: Some(2), bottleneck: Some(9), ..cfg(Algorithm::Dfa) };
        assert!(Trainer::<f32>::build(over, &[1, 2, 2], &specs()).is_err());
        let empty = LabeledDataset::new(Tensor::zeros(&[1, 1, 2, 2]).unwrap(), vec![0], 2).unwrap();
        let mut t = Trainer::<f32>::build(cfg(Algorithm::Bp), &[1, 2, 2], &specs()).unwrap();
        assert!(t.train_epoch(&empty, None).is_ok());
    }
}
