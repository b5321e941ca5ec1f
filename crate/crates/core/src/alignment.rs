//! Alignment between DFA teaching signals and exact BP signals.
//!
//! For block `i` the DFA signal at its output is `B_i e`; the BP signal is
//! the true loss gradient `c_i` at the same point, obtained from a shadow BP
//! pass that never updates anything. Their per-sample cosine is averaged
//! over a batch.

use crate::feedback::UnifiedFeedback;
use crate::layers::Mode;
use crate::tensor::{Prng, Scalar, Tensor};
use crate::training::{bp_backward_with_signals, dfa_signal, loss_and_error, one_hot, Network};
use crate::{Error, Result};

/// Samples whose signal norm falls below this are left out of the mean.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentRecord {
    pub step: u64,
    /// 1-based block index; the classifier is the last.
    pub layer: usize,
    pub mean_cos: f64,
    /// Population standard deviation.
    pub std_cos: f64,
    /// Samples that contributed.
    pub batch_size: usize,
    /// Samples dropped for a near-zero norm.
    pub excluded: usize,
}

impl AlignmentRecord {
    pub fn mean_degrees(&self) -> f64 {
        self.mean_cos.clamp(-1.0, 1.0).acos().to_degrees()
    }
}

/// DFA signal `δh_i` and BP signal `c_i` for one block, both `batch x l_i`
/// (or any shape with one row per sample).
#[derive(Clone, Debug)]
pub struct SignalPair<T> {
    pub dfa: Tensor<T>,
    pub bp: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cosines {
    pub values: Vec<f64>,
    pub excluded: usize,
}

/// Gradient of the batch loss at every block output, one tensor per block,
/// computed without touching parameters. Requires forward caches.
pub fn shadow_bp_signals<T: Scalar>(net: &Network<T>, e_batch: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    bp_backward_with_signals(net, e_batch).map(|(_, s)| s)
}

pub fn per_sample_cosine<T: Scalar>(pair: &SignalPair<T>) -> Result<Cosines> {
    let (a, b) = (&pair.dfa, &pair.bp);
    if a.len() != b.len() || a.rows() != b.rows() {
        return Err(Error::Shape(format!(
            "signal shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    let mut values = Vec::with_capacity(a.rows());
    let mut excluded = 0;
    for n in 0..a.rows() {
        let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
        for (&x, &y) in a.row(n).iter().zip(b.row(n)) {
            let (x, y) = (x.to_f64_lossy(), y.to_f64_lossy());
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        let (na, nb) = (na.sqrt(), nb.sqrt());
        if na < DEGENERATE_NORM || nb < DEGENERATE_NORM {
            excluded += 1;
        } else {
            values.push((dot / (na * nb)).clamp(-1.0, 1.0));
        }
    }
    if values.is_empty() {
        return Err(Error::Empty(format!("all {excluded} samples have a near-zero signal")));
    }
    Ok(Cosines { values, excluded })
}

/// Mean and population standard deviation.
pub fn batch_stats(cosines: &[f64]) -> Result<(f64, f64)> {
    if cosines.is_empty() {
        return Err(Error::Empty("no cosines".into()));
    }
    let n = cosines.len() as f64;
    let mean = cosines.iter().sum::<f64>() / n;
    let var = cosines.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Signal pairs for every block of a network that already holds forward
/// caches for the batch that produced `e_batch`.
pub fn signal_pairs<T: Scalar>(
    net: &Network<T>,
    e_batch: &Tensor<T>,
    fb: &UnifiedFeedback<T>,
) -> Result<Vec<SignalPair<T>>> {
    let bp = shadow_bp_signals(net, e_batch)?;
    bp.into_iter()
        .enumerate()
        .map(|(k, c)| {
            Ok(SignalPair {
                dfa: dfa_signal(net, k, e_batch, fb)?,
                bp: c,
            })
        })
        .collect()
}

/// Measures every block's alignment on one batch.
///
/// Works on a private copy of the network, so parameters, running
/// statistics and caches of `net` are untouched; dropout masks come from
/// `rng`, which is taken by value so no caller stream advances. Blocks whose
/// samples are all degenerate are omitted.
pub fn measure<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    labels: &[usize],
    fb: &UnifiedFeedback<T>,
    mut rng: Prng,
    step: u64,
) -> Result<Vec<AlignmentRecord>> {
    let mut probe = net.clone();
    let logits = probe.forward(x, Mode::Train, Some(&mut rng))?;
    let (_, e) = loss_and_error(&logits, &one_hot(labels, net.classes())?)?;
    let mut out = Vec::new();
    for (k, pair) in signal_pairs(&probe, &e, fb)?.iter().enumerate() {
        match per_sample_cosine(pair) {
            Ok(c) => {
                let (mean_cos, std_cos) = batch_stats(&c.values)?;
                out.push(AlignmentRecord {
                    step,
                    layer: k + 1,
                    mean_cos,
                    std_cos,
                    batch_size: c.values.len(),
                    excluded: c.excluded,
                });
            }
            Err(Error::Empty(msg)) => log::warn!("alignment of layer {} skipped: {msg}", k + 1),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
