//! Freezing most neurons of the middle layer with a gradient mask: the
//! forward pass is unchanged, but only `trainable` rows of that layer learn.

use dfa_core::datasets::LabeledDataset;
use dfa_core::layers::Activation;
use dfa_core::tensor::{Prng, Tensor};
use dfa_core::training::{LayerSpec, TrainConfig, Trainer};

fn main() -> dfa_core::Result<()> {
    let mut rng = Prng::new(5);
    let n = 1500;
    let centers: Vec<f32> = (0..10 * 24).map(|_| rng.next_gaussian() as f32).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
    let x: Vec<f32> = labels
        .iter()
        .flat_map(|&c| (0..24).map(|j| centers[c * 24 + j] + 1.2 * rng.next_gaussian() as f32).collect::<Vec<_>>())
        .collect();
    let data = LabeledDataset::new(Tensor::new(vec![n, 1, 1, 24], x)?, labels, 10)?;
    let probe = data.head(128)?;
    let specs = [
        LayerSpec::fc(100, Activation::Tanh),
        LayerSpec::fc(100, Activation::Tanh),
        LayerSpec::fc(100, Activation::Tanh),
        LayerSpec::fc(10, Activation::Identity),
    ];
    for trainable in [0, 5, 25, 100] {
        let cfg = TrainConfig {
            learning_rate: 0.05,
            batch_size: 32,
            mask_layer: Some(2),
            bottleneck: Some(trainable),
            ..TrainConfig::default()
        };
        let mut t = Trainer::<f32>::build(cfg, &[24], &specs)?;
        let mut last = None;
        for _ in 0..6 {
            last = Some(t.train_epoch(&data, Some((probe.images(), probe.labels())))?);
        }
        let m = last.unwrap();
        println!(
            "trainable {trainable:>3}/100: train acc {:.3}, layer-2 alignment {:.3}",
            m.train_accuracy, m.alignment[1].mean_cos
        );
    }
    Ok(())
}
