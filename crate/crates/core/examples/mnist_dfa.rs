//! DFA on MNIST with the bundled 3x256 tanh configuration, shortened to two
//! epochs. Expects the IDX files under `$DFA_DATA_ROOT/mnist` (default
//! `./data/mnist`).

use std::path::Path;

use dfa_core::datasets::data_root;
use dfa_core::experiments::{cmd_train, prepare_data, RunConfig};

fn main() -> dfa_core::Result<()> {
    let mut cfg = RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/mnist_mlp.cfg"))?;
    cfg.train.epochs = 2;
    let data = match prepare_data(&cfg, &data_root()) {
        Ok(d) => d,
        Err(e) => {
            println!("MNIST not available ({e}); set DFA_DATA_ROOT to a directory containing mnist/");
            return Ok(());
        }
    };
    let out = std::env::temp_dir().join("dfa-examples/mnist");
    let outcome = cmd_train(&cfg, &data, &out)?;
    let run = &outcome.runs[0];
    println!("test accuracy {:.4}, test loss {:.4}", run.test_accuracy, run.test_loss);
    for r in &run.alignment {
        println!("layer {} alignment {:.3} ± {:.3}", r.layer, r.mean_cos, r.std_cos);
    }
    println!("artifacts in {}", out.display());
    Ok(())
}
