//! Trains a small MLP with DFA on synthetic clusters and prints how the
//! per-layer alignment with the BP signal develops.

use dfa_core::datasets::LabeledDataset;
use dfa_core::layers::Activation;
use dfa_core::tensor::{Prng, Tensor};
use dfa_core::training::{LayerSpec, TrainConfig, Trainer};

fn clusters(n: usize, dim: usize, classes: usize, seed: u64) -> dfa_core::Result<LabeledDataset> {
    let mut rng = Prng::new(seed);
    let centers: Vec<f32> = (0..classes * dim).map(|_| rng.next_gaussian() as f32).collect();
    let mut x = Vec::with_capacity(n * dim);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    for &c in &labels {
        x.extend((0..dim).map(|j| centers[c * dim + j] + rng.next_gaussian() as f32));
    }
    LabeledDataset::new(Tensor::new(vec![n, 1, 1, dim], x)?, labels, classes)
}

fn main() -> dfa_core::Result<()> {
    let train = clusters(2000, 32, 10, 1)?;
    let probe = clusters(128, 32, 10, 2)?;
    let cfg = TrainConfig {
        learning_rate: 0.05,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let specs = [
        LayerSpec::fc(128, Activation::Tanh),
        LayerSpec::fc(128, Activation::Tanh),
        LayerSpec::fc(10, Activation::Identity),
    ];
    let mut trainer = Trainer::<f32>::build(cfg, &[32], &specs)?;
    let px = probe.images().clone();
    for _ in 0..8 {
        let m = trainer.train_epoch(&train, Some((&px, probe.labels())))?;
        let cos: Vec<String> = m.alignment.iter().map(|r| format!("{:.3}", r.mean_cos)).collect();
        println!("epoch {}: train acc {:.3}, alignment per layer [{}]", m.epoch, m.train_accuracy, cos.join(", "));
    }
    Ok(())
}
