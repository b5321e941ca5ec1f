//! Layer-parallel DFA backward pass: same bits as the sequential one, with
//! wall time depending on the available cores.

use std::time::Instant;

use dfa_core::feedback::UnifiedFeedback;
use dfa_core::layers::{Activation, Mode};
use dfa_core::tensor::{Prng, Tensor};
use dfa_core::training::{dfa_backward, dfa_backward_parallel, loss_and_error, one_hot, LayerSpec, Network};

fn main() -> dfa_core::Result<()> {
    let mut rng = Prng::new(9);
    let mut specs: Vec<LayerSpec> = (0..6).map(|_| LayerSpec::fc(1024, Activation::Tanh)).collect();
    specs.push(LayerSpec::fc(10, Activation::Identity));
    let mut net = Network::<f32>::build(&[784], &specs, &mut rng)?;
    let fb = UnifiedFeedback::new(1, 1024, 10, true)?;
    let x = Tensor::gaussian(&mut rng, &[256, 784], 0.0, 1.0)?;
    let labels: Vec<usize> = (0..256).map(|i| i % 10).collect();
    let logits = net.forward(&x, Mode::Train, None)?;
    let (_, e) = loss_and_error(&logits, &one_hot(&labels, 10)?)?;

    let t = Instant::now();
    let seq = dfa_backward(&net, &e, &fb)?;
    let t_seq = t.elapsed();
    let t = Instant::now();
    let par = dfa_backward_parallel(&net, &e, &fb)?;
    let t_par = t.elapsed();
    let same = seq.tensors().zip(par.tensors()).all(|(a, b)| a == b);
    println!(
        "{} threads: sequential {:.1} ms, parallel {:.1} ms, identical: {same}",
        rayon::current_num_threads(),
        t_seq.as_secs_f64() * 1e3,
        t_par.as_secs_f64() * 1e3
    );
    Ok(())
}
