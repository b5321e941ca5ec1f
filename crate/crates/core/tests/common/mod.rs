#![allow(dead_code)]

use dfa_core::datasets::LabeledDataset;
use dfa_core::feedback::UnifiedFeedback;
use dfa_core::layers::{Activation, Layer, Mode};
use dfa_core::tensor::{Prng, Tensor};
use dfa_core::training::{bp_backward, loss_and_error, one_hot, GradientSet, LayerSpec, Network};

pub struct FdReport {
    pub max_rel: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Sign pattern of every pre-activation plus every pooling argmax. Two
/// forward passes with equal signatures lie on the same linear piece of
/// every kinked nonlinearity.
fn signature(net: &Network<f64>) -> Vec<u64> {
    let mut sig = Vec::new();
    for layer in net.layers() {
        match layer {
            Layer::Block(b) if b.config().activation.has_kink() => {
                let a = b.cached_preactivation().expect("caches after replay");
                sig.extend(a.data().iter().map(|&v| (v > 0.0) as u64));
            }
            Layer::MaxPool(p) => sig.extend(p.cached_argmax().expect("argmax after replay").iter().map(|&i| i as u64)),
            _ => {}
        }
    }
    sig
}

fn replay_loss(net: &mut Network<f64>, x: &Tensor<f64>, targets: &Tensor<f64>) -> (f64, Vec<u64>) {
    let logits = net.forward(x, Mode::Replay, None).unwrap();
    (loss_and_error(&logits, targets).unwrap().0, signature(net))
}

#[derive(Clone, Copy)]
enum Param {
    Weight,
    Bias,
    Gamma,
    Beta,
}

fn param_mut(net: &mut Network<f64>, k: usize, p: Param) -> &mut Tensor<f64> {
    let b = net.block_mut(k);
    match p {
        Param::Weight => b.weight_mut(),
        Param::Bias => b.bias_mut(),
        Param::Gamma => b.batchnorm_mut().unwrap().gamma_mut(),
        Param::Beta => b.batchnorm_mut().unwrap().beta_mut(),
    }
}

/// Central finite differences on `probes` random entries of every
/// parameter tensor, compared against `bp_backward`. Relative error uses a
/// denominator floor of 1e-4. Probes whose ±h passes fall on different
/// pieces of a kinked function are skipped.
pub fn finite_difference_check(
    net: &mut Network<f64>,
    x: &Tensor<f64>,
    labels: &[usize],
    probes: usize,
    seed: u64,
) -> FdReport {
    const H: f64 = 1e-5;
    let targets = one_hot(labels, net.classes()).unwrap();
    let mut rng = Prng::new(seed);
    let logits = net.forward(x, Mode::Train, Some(&mut rng.fork(99))).unwrap();
    let (_, e) = loss_and_error(&logits, &targets).unwrap();
    let grads = bp_backward(net, &e).unwrap();
    let (_, base_sig) = replay_loss(net, x, &targets);
    let mut report = FdReport {
        max_rel: 0.0,
        checked: 0,
        skipped: 0,
    };
    for k in 0..net.depth() {
        let g = &grads.blocks[k];
        let mut params = vec![(Param::Weight, &g.weight), (Param::Bias, &g.bias)];
        if let (Some(gg), Some(gb)) = (&g.gamma, &g.beta) {
            params.push((Param::Gamma, gg));
            params.push((Param::Beta, gb));
        }
        for (p, analytic) in params {
            let n = analytic.len();
            for _ in 0..probes.min(n) {
                let i = rng.below(n as u64) as usize;
                let orig = param_mut(net, k, p).data()[i];
                param_mut(net, k, p).data_mut()[i] = orig + H;
                let (lp, sp) = replay_loss(net, x, &targets);
                param_mut(net, k, p).data_mut()[i] = orig - H;
                let (lm, sm) = replay_loss(net, x, &targets);
                param_mut(net, k, p).data_mut()[i] = orig;
                if sp != base_sig || sm != base_sig {
                    report.skipped += 1;
                    continue;
                }
                let numeric = (lp - lm) / (2.0 * H);
                let a = analytic.data()[i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
                report.max_rel = report.max_rel.max(rel);
                report.checked += 1;
            }
        }
    }
    report
}

pub fn gaussian_batch(rng: &mut Prng, shape: &[usize]) -> Tensor<f64> {
    Tensor::gaussian(rng, shape, 0.0, 1.0).unwrap()
}

pub fn labels(rng: &mut Prng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.below(classes as u64) as usize).collect()
}

pub fn mlp(hidden: &[usize], classes: usize, act: Activation) -> Vec<LayerSpec> {
    let mut specs: Vec<LayerSpec> = hidden.iter().map(|&h| LayerSpec::fc(h, act)).collect();
    specs.push(LayerSpec::fc(classes, Activation::Identity));
    specs
}

/// A trained forward pass on a fresh batch, returning the error batch.
pub fn forward_error(net: &mut Network<f64>, rng: &mut Prng, batch: usize) -> (Tensor<f64>, Tensor<f64>) {
    let dims: Vec<usize> = std::iter::once(batch).chain(net.input_dims().iter().copied()).collect();
    let x = gaussian_batch(rng, &dims);
    let y = labels(rng, batch, net.classes());
    let logits = net.forward(&x, Mode::Train, Some(rng)).unwrap();
    let (_, e) = loss_and_error(&logits, &one_hot(&y, net.classes()).unwrap()).unwrap();
    (x, e)
}

pub fn feedback_for(net: &Network<f64>, seed: u64) -> UnifiedFeedback<f64> {
    let l_max = net.hidden_sizes().into_iter().max().unwrap_or(1);
    UnifiedFeedback::new(seed, l_max, net.classes(), true).unwrap()
}

pub fn bitwise_equal(a: &GradientSet<f64>, b: &GradientSet<f64>) -> bool {
    a.tensors().count() == b.tensors().count()
        && a.tensors()
            .zip(b.tensors())
            .all(|(x, y)| x.shape() == y.shape() && x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()))
}

/// Gaussian class clusters, learnable by a small MLP in a few epochs.
pub fn clustered_dataset(n: usize, dims: &[usize], classes: usize, seed: u64) -> LabeledDataset {
    let mut rng = Prng::new(seed);
    let len: usize = dims.iter().product();
    let centers: Vec<Vec<f32>> = (0..classes)
        .map(|_| (0..len).map(|_| rng.next_gaussian() as f32).collect())
        .collect();
    let mut data = Vec::with_capacity(n * len);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.below(classes as u64) as usize;
        labels.push(c);
        data.extend(centers[c].iter().map(|&m| m + 0.8 * rng.next_gaussian() as f32));
    }
    let shape: Vec<usize> = std::iter::once(n).chain(dims.iter().copied()).collect();
    LabeledDataset::new(Tensor::new(shape, data).unwrap(), labels, classes).unwrap()
}

/// `dW_i = mean_n [(B_i e_n) * f'(a_i,n)] h_{i-1,n}^T`, evaluated with
/// plain loops from the materialized feedback slice.
pub fn direct_dfa_weight_grad(net: &Network<f64>, k: usize, e: &Tensor<f64>, fb_rows: &Tensor<f64>) -> Vec<f64> {
    let b = net.block(k);
    let h = b.cached_input().unwrap();
    let a = b.cached_preactivation().unwrap();
    let act = b.config().activation;
    let (units, fan_in, batch, classes) = (b.config().units(), b.config().fan_in(), e.rows(), e.row_len());
    let mut dw = vec![0.0; units * fan_in];
    for n in 0..batch {
        for u in 0..units {
            let mut s = 0.0;
            for c in 0..classes {
                s += fb_rows.data()[u * classes + c] * e.row(n)[c];
            }
            let delta = s * act.derivative(a.row(n)[u]);
            for j in 0..fan_in {
                dw[u * fan_in + j] += delta * h.row(n)[j] / batch as f64;
            }
        }
    }
    dw
}
