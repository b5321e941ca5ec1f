//! Trains a one-conv network on synthetic 8x8 images, then synthesizes the
//! input that maximizes each filter and writes PPM images.

use dfa_core::datasets::LabeledDataset;
use dfa_core::experiments::{cmd_filter_viz, cmd_train, prepare_splits, FilterVizOptions, RunConfig};
use dfa_core::tensor::{Prng, Tensor};

const CONFIG: &str = "\
algorithm = dfa
learning_rate = 0.05
epochs = 3
batch_size = 16
probe_batch = 32
seed = 2

[architecture]
input = 3x8x8
conv 6 k=3 p=1
maxpool
fc 4
";

/// Each class is a bright stripe in a different quadrant.
fn stripes(n: usize, seed: u64) -> dfa_core::Result<LabeledDataset> {
    let mut rng = Prng::new(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
    let mut x = Vec::with_capacity(n * 192);
    for &c in &labels {
        for ch in 0..3 {
            for r in 0..8 {
                for col in 0..8 {
                    let on = (r / 4) * 2 + col / 4 == c && (r + col + ch) % 2 == 0;
                    x.push(if on { 1.0 } else { 0.0 } + 0.2 * rng.next_gaussian() as f32);
                }
            }
        }
    }
    LabeledDataset::new(Tensor::new(vec![n, 3, 8, 8], x)?, labels, 4)
}

fn main() -> dfa_core::Result<()> {
    let cfg = RunConfig::parse(CONFIG)?;
    let data = prepare_splits(&cfg, stripes(400, 1)?, stripes(100, 2)?)?;
    let out = std::env::temp_dir().join("dfa-examples/filters");
    let outcome = cmd_train(&cfg, &data, &out)?;
    println!("test acc {:.3}", outcome.runs[0].test_accuracy);
    let opts = FilterVizOptions {
        layer: 1,
        filters: (0..6).collect(),
        steps: 100,
        lr: 0.1,
        seed: 1,
    };
    let images = cmd_filter_viz(&out.join("run-00/checkpoint.bin"), &opts, &out.join("viz"))?;
    for img in &images {
        println!("filter {}: final activation {:.3}", img.filter, img.activations.last().copied().unwrap_or(0.0));
    }
    println!("images in {}", out.join("viz").display());
    Ok(())
}
