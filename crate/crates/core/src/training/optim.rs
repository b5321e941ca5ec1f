use super::{GradientSet, Network};
use crate::tensor::{Prng, Scalar};
use crate::{Error, Result};

/// A fixed set of neurons (rows of `W`, with their bias and normalization
/// entries) of one block whose gradients are always zeroed. The forward
/// pass is untouched.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSpec {
    /// 0-based block index.
    pub block: usize,
    /// Sorted masked neuron indices.
    pub neurons: Vec<usize>,
    pub units: usize,
}

impl MaskSpec {
    /// Masks `count` of `units` neurons chosen uniformly by `rng`.
    pub fn random(block: usize, units: usize, count: usize, rng: &mut Prng) -> Result<Self> {
        if count > units {
            return Err(Error::Param(format!("cannot mask {count} of {units} neurons")));
        }
        let mut neurons = rng.choose_indices(units, count);
        neurons.sort_unstable();
        Ok(Self { block, neurons, units })
    }

    /// Masks `round(fraction * units)` neurons.
    pub fn with_fraction(block: usize, units: usize, fraction: f64, rng: &mut Prng) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Param(format!("mask fraction {fraction} outside [0, 1]")));
        }
        Self::random(block, units, (fraction * units as f64).round() as usize, rng)
    }

    pub fn fraction(&self) -> f64 {
        self.neurons.len() as f64 / self.units as f64
    }

    /// Neurons that still receive gradients.
    pub fn trainable(&self) -> usize {
        self.units - self.neurons.len()
    }
}

pub fn apply_gradient_mask<T: Scalar>(grads: &mut GradientSet<T>, mask: &MaskSpec) -> Result<()> {
    let g = grads
        .blocks
        .get_mut(mask.block)
        .ok_or_else(|| Error::Param(format!("mask targets missing block {}", mask.block)))?;
    let units = g.bias.len();
    if units != mask.units {
        return Err(Error::Param(format!(
            "mask built for {} neurons, block has {units}",
            mask.units
        )));
    }
    let fan_in = g.weight.len() / units;
    for &n in &mask.neurons {
        if n >= units {
            return Err(Error::Param(format!("masked neuron {n} out of range")));
        }
        g.weight.data_mut()[n * fan_in..(n + 1) * fan_in].fill(T::zero());
        g.bias.data_mut()[n] = T::zero();
        for t in [g.gamma.as_mut(), g.beta.as_mut()].into_iter().flatten() {
            t.data_mut()[n] = T::zero();
        }
    }
    Ok(())
}

/// Plain SGD without momentum: `p <- p - lr * dp`.
pub fn sgd_step<T: Scalar>(net: &mut Network<T>, grads: &GradientSet<T>, lr: f64) -> Result<()> {
    if grads.blocks.len() != net.depth() {
        return Err(Error::Shape(format!(
            "{} gradient blocks for {} network blocks",
            grads.blocks.len(),
            net.depth()
        )));
    }
    let step = -T::from_f64_lossy(lr);
    for (k, g) in grads.blocks.iter().enumerate() {
        let block = net.block_mut(k);
        block.weight_mut().axpy(step, &g.weight)?;
        block.bias_mut().axpy(step, &g.bias)?;
        match (block.batchnorm_mut(), &g.gamma, &g.beta) {
            (Some(bn), Some(dg), Some(db)) => {
                bn.gamma_mut().axpy(step, dg)?;
                bn.beta_mut().axpy(step, db)?;
            }
            (None, None, None) => {}
            _ => return Err(Error::Shape(format!("block {k}: normalization gradients do not match"))),
        }
    }
    Ok(())
}

/// Divides the learning rate by `factor` once the monitored loss has gone
/// more than `patience` epochs without improving on its best value by a
/// relative `1e-3`, then waits `patience` epochs before counting again.
#[derive(Clone, Debug)]
pub struct Plateau {
    lr: f64,
    patience: usize,
    factor: f64,
    best: f64,
    bad_epochs: usize,
    cooldown: usize,
}

const IMPROVEMENT: f64 = 1e-3;

impl Plateau {
    pub fn new(lr: f64, patience: usize, factor: f64) -> Self {
        Self {
            lr,
            patience,
            factor,
            best: f64::INFINITY,
            bad_epochs: 0,
            cooldown: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one epoch's loss and returns the learning rate to use next.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if self.best.is_infinite() || loss < self.best - IMPROVEMENT * self.best.abs() {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.cooldown > 0 {
            self.cooldown -= 1;
            self.bad_epochs = 0;
        }
        if self.bad_epochs > self.patience {
            self.lr /= self.factor;
            self.cooldown = self.patience;
            self.bad_epochs = 0;
        }
        self.lr
    }
}

/// Replays a whole loss history through [`Plateau`].
pub fn plateau_lr(history: &[f64], lr: f64, patience: usize, factor: f64) -> f64 {
    let mut p = Plateau::new(lr, patience, factor);
    for &l in history {
        p.observe(l);
    }
    p.lr()
}
