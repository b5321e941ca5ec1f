//! Central finite differences against `bp_backward` on a small network with
//! batch norm and dropout (masks held fixed through replay passes).

use dfa_core::layers::{Activation, Mode};
use dfa_core::tensor::{Prng, Tensor};
use dfa_core::training::{bp_backward, loss_and_error, one_hot, LayerSpec, Network};

fn main() -> dfa_core::Result<()> {
    let mut rng = Prng::new(4);
    let specs = [
        LayerSpec::fc(12, Activation::Tanh).with_batchnorm(true).with_dropout(0.2),
        LayerSpec::fc(8, Activation::Tanh),
        LayerSpec::fc(3, Activation::Identity),
    ];
    let mut net = Network::<f64>::build(&[5], &specs, &mut rng)?;
    let x = Tensor::gaussian(&mut rng, &[6, 5], 0.0, 1.0)?;
    let targets = one_hot(&[0, 1, 2, 0, 1, 2], 3)?;
    let logits = net.forward(&x, Mode::Train, Some(&mut rng))?;
    let (_, e) = loss_and_error(&logits, &targets)?;
    let grads = bp_backward(&net, &e)?;

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..net.depth() {
        for i in 0..net.block(k).weight().len() {
            let w = net.block(k).weight().data()[i];
            let mut loss_at = |v: f64| -> dfa_core::Result<f64> {
                net.block_mut(k).weight_mut().data_mut()[i] = v;
                let out = net.forward(&x, Mode::Replay, None)?;
                Ok(loss_and_error(&out, &targets)?.0)
            };
            let numeric = (loss_at(w + h)? - loss_at(w - h)?) / (2.0 * h);
            net.block_mut(k).weight_mut().data_mut()[i] = w;
            let analytic = grads.blocks[k].weight.data()[i];
            worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4));
        }
    }
    println!("max relative error over all weights: {worst:.2e}");
    Ok(())
}
