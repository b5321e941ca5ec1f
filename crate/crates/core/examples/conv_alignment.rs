//! Alignment of convolutional layers under DFA, on a CIFAR-10 subset with the
//! bundled three-conv configuration, one epoch.

use std::path::Path;

use dfa_core::datasets::data_root;
use dfa_core::experiments::{cmd_train, prepare_data, RunConfig};

fn main() -> dfa_core::Result<()> {
    let mut cfg = RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/cifar10_cnn.cfg"))?;
    cfg.train_subset = Some(2000);
    cfg.test_subset = Some(500);
    cfg.train.epochs = 1;
    let data = match prepare_data(&cfg, &data_root()) {
        Ok(d) => d,
        Err(e) => {
            println!("CIFAR-10 not available ({e}); set DFA_DATA_ROOT");
            return Ok(());
        }
    };
    let outcome = cmd_train(&cfg, &data, &std::env::temp_dir().join("dfa-examples/cnn"))?;
    let run = &outcome.runs[0];
    println!("test acc {:.3}", run.test_accuracy);
    for r in &run.alignment {
        println!("layer {}: alignment {:.4} ± {:.4}", r.layer, r.mean_cos, r.std_cos);
    }
    Ok(())
}
