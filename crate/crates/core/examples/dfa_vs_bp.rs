//! BP and DFA gradients for the same batch, layer by layer.

use dfa_core::feedback::UnifiedFeedback;
use dfa_core::layers::{Activation, Mode};
use dfa_core::tensor::{Prng, Tensor};
use dfa_core::training::{bp_backward, dfa_backward, loss_and_error, one_hot, LayerSpec, Network};

fn cosine(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.dot(b).unwrap() / (a.norm() * b.norm())
}

fn main() -> dfa_core::Result<()> {
    let mut rng = Prng::new(3);
    let specs = [
        LayerSpec::fc(64, Activation::Tanh),
        LayerSpec::fc(64, Activation::Tanh),
        LayerSpec::fc(10, Activation::Identity),
    ];
    let mut net = Network::<f64>::build(&[32], &specs, &mut rng)?;
    let fb = UnifiedFeedback::new(11, 64, 10, true)?;
    let x = Tensor::gaussian(&mut rng, &[16, 32], 0.0, 1.0)?;
    let labels: Vec<usize> = (0..16).map(|i| i % 10).collect();
    let logits = net.forward(&x, Mode::Train, None)?;
    let (loss, e) = loss_and_error(&logits, &one_hot(&labels, 10)?)?;
    println!("loss {loss:.4}");
    let bp = bp_backward(&net, &e)?;
    let dfa = dfa_backward(&net, &e, &fb)?;
    for (k, (b, d)) in bp.blocks.iter().zip(&dfa.blocks).enumerate() {
        println!(
            "block {}: |dW| bp {:.4} dfa {:.4}, cosine {:.4}",
            k + 1,
            b.weight.norm(),
            d.weight.norm(),
            cosine(&b.weight, &d.weight)
        );
    }
    Ok(())
}
