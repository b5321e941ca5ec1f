//! Loss, the BP and DFA backward passes, SGD and the training loop.
//!
//! Gradients flowing between layers are per-sample: the backward pass
//! starts from `e = softmax(logits) - y` for each sample, not divided by the
//! batch size. Parameter gradients are batch means, stored with a positive
//! sign; [`sgd_step`] subtracts them.

mod network;
mod optim;
mod trainer;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::feedback::UnifiedFeedback;
use crate::layers::{BlockGrads, Layer};
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

pub use network::{hidden_sizes, resolve, LayerSpec, Network, ResolvedLayer};
pub use optim::{apply_gradient_mask, plateau_lr, sgd_step, MaskSpec, Plateau};
pub use trainer::{evaluate, EpochMetrics, Evaluation, TrainConfig, Trainer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Bp,
    Dfa,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Bp => "bp",
            Algorithm::Dfa => "dfa",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bp" => Ok(Algorithm::Bp),
            "dfa" => Ok(Algorithm::Dfa),
            other => Err(Error::Config(format!("unknown algorithm `{other}` (expected bp or dfa)"))),
        }
    }
}

/// One [`BlockGrads`] per block, in network order. Input gradients are
/// dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet<T = f32> {
    pub algorithm: Algorithm,
    pub blocks: Vec<BlockGrads<T>>,
}

impl<T: Scalar> GradientSet<T> {
    pub fn is_zero(&self) -> bool {
        self.tensors().all(|t| t.data().iter().all(|v| *v == T::zero()))
    }

    /// Every gradient tensor, block by block: weight, bias, then gamma and
    /// beta when present.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.blocks.iter().flat_map(|g| {
            [Some(&g.weight), Some(&g.bias), g.gamma.as_ref(), g.beta.as_ref()]
                .into_iter()
                .flatten()
        })
    }
}

/// Row-per-sample one-hot targets.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    if labels.is_empty() {
        return Err(Error::Empty("no labels".into()));
    }
    let mut t = Tensor::zeros(&[labels.len(), classes])?;
    for (n, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Param(format!("label {l} out of range for {classes} classes")));
        }
        t.row_mut(n)[l] = T::one();
    }
    Ok(t)
}

/// Mean softmax cross-entropy and the per-sample error `e = softmax - y`,
/// which is the gradient of each sample's loss with respect to its logits.
pub fn loss_and_error<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    logits.ensure_finite("logits")?;
    if logits.shape().len() != 2 || logits.shape() != targets.shape() {
        return Err(Error::Shape(format!(
            "logits {:?} and targets {:?} must be matching batch x classes",
            logits.shape(),
            targets.shape()
        )));
    }
    let mut e = logits.clone();
    let mut loss = 0.0;
    for n in 0..logits.rows() {
        let y = targets.row(n);
        let hot = y.iter().filter(|&&v| v == T::one()).count();
        if hot != 1 || y.iter().any(|&v| v != T::one() && v != T::zero()) {
            return Err(Error::Param(format!("target row {n} is not one-hot")));
        }
        let row = e.row_mut(n);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        let log_z = z.ln() + max;
        for ((v, &t), &l) in row.iter_mut().zip(y).zip(logits.row(n)) {
            if t == T::one() {
                loss += (log_z - l).to_f64_lossy();
            }
            *v = *v / z - t;
        }
    }
    Ok((loss / logits.rows() as f64, e))
}

/// Exact gradients by the chain rule, using `W_{i+1}^T` to carry the signal
/// down. Needs the caches of a preceding training forward pass.
pub fn bp_backward<T: Scalar>(net: &Network<T>, e_batch: &Tensor<T>) -> Result<GradientSet<T>> {
    bp_backward_with_signals(net, e_batch).map(|(g, _)| g)
}

/// As [`bp_backward`], also returning the gradient that reached each
/// block's output `h_i` (the classifier's is `e` itself).
pub fn bp_backward_with_signals<T: Scalar>(
    net: &Network<T>,
    e_batch: &Tensor<T>,
) -> Result<(GradientSet<T>, Vec<Tensor<T>>)> {
    check_error_batch(net, e_batch)?;
    let positions = net.block_positions();
    let first = positions[0];
    let mut grads = Vec::with_capacity(positions.len());
    let mut signals = Vec::with_capacity(positions.len());
    let mut g = e_batch.clone();
    for (li, layer) in net.layers().iter().enumerate().rev() {
        if li < first {
            break;
        }
        g = match layer {
            Layer::Block(b) => {
                signals.push(g.clone());
                let mut bg = b.backward_local(&g, li > first)?;
                let next = bg.input.take();
                grads.push(bg);
                match next {
                    Some(next) => next,
                    None => break,
                }
            }
            Layer::Dropout(d) => d.backward(g)?,
            Layer::MaxPool(p) => p.backward(&g)?,
        };
    }
    grads.reverse();
    signals.reverse();
    Ok((
        GradientSet {
            algorithm: Algorithm::Bp,
            blocks: grads,
        },
        signals,
    ))
}

/// The teaching signal DFA delivers to block `k`'s output: `B_k e` for a
/// hidden block, `e` for the classifier.
pub fn dfa_signal<T: Scalar>(
    net: &Network<T>,
    k: usize,
    e_batch: &Tensor<T>,
    fb: &UnifiedFeedback<T>,
) -> Result<Tensor<T>> {
    if k + 1 == net.depth() {
        Ok(e_batch.clone())
    } else {
        fb.view(net.block(k).output_len())?.project(e_batch)
    }
}

/// DFA update for block `k` alone. Touches only that block's caches and
/// parameters, the shared feedback matrix and `e`.
pub fn dfa_block_update<T: Scalar>(
    net: &Network<T>,
    k: usize,
    e_batch: &Tensor<T>,
    fb: &UnifiedFeedback<T>,
) -> Result<BlockGrads<T>> {
    let signal = dfa_signal(net, k, e_batch, fb)?;
    net.block(k).backward_local(&signal, false)
}

pub fn dfa_backward<T: Scalar>(
    net: &Network<T>,
    e_batch: &Tensor<T>,
    fb: &UnifiedFeedback<T>,
) -> Result<GradientSet<T>> {
    check_error_batch(net, e_batch)?;
    let blocks = (0..net.depth())
        .map(|k| dfa_block_update(net, k, e_batch, fb))
        .collect::<Result<_>>()?;
    Ok(GradientSet {
        algorithm: Algorithm::Dfa,
        blocks,
    })
}

/// [`dfa_backward`] with every block's update computed on the rayon pool.
/// Each task reads only shared, immutable state, so the result does not
/// depend on scheduling.
pub fn dfa_backward_parallel<T: Scalar>(
    net: &Network<T>,
    e_batch: &Tensor<T>,
    fb: &UnifiedFeedback<T>,
) -> Result<GradientSet<T>> {
    check_error_batch(net, e_batch)?;
    let blocks = (0..net.depth())
        .into_par_iter()
        .map(|k| dfa_block_update(net, k, e_batch, fb))
        .collect::<Result<_>>()?;
    Ok(GradientSet {
        algorithm: Algorithm::Dfa,
        blocks,
    })
}

fn check_error_batch<T: Scalar>(net: &Network<T>, e_batch: &Tensor<T>) -> Result<()> {
    if e_batch.shape().len() != 2 || e_batch.shape()[1] != net.classes() {
        return Err(Error::Shape(format!(
            "error batch {:?} does not have {} columns",
            e_batch.shape(),
            net.classes()
        )));
    }
    Ok(())
}
