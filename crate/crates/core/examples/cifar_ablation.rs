//! Normalized versus unnormalized feedback on a small CIFAR-10 subset, one
//! short run each. Expects `$DFA_DATA_ROOT/cifar-10-batches-bin`.

use std::path::Path;

use dfa_core::datasets::data_root;
use dfa_core::experiments::{cmd_train, prepare_data, RunConfig};

fn main() -> dfa_core::Result<()> {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for name in ["cifar10_mlp_norm", "cifar10_mlp_nonorm"] {
        let mut cfg = RunConfig::load(&configs.join(format!("{name}.cfg")))?;
        cfg.train_subset = Some(2000);
        cfg.test_subset = Some(1000);
        cfg.train.epochs = 3;
        cfg.runs = 1;
        let data = match prepare_data(&cfg, &data_root()) {
            Ok(d) => d,
            Err(e) => {
                println!("CIFAR-10 not available ({e}); set DFA_DATA_ROOT");
                return Ok(());
            }
        };
        let outcome = cmd_train(&cfg, &data, &std::env::temp_dir().join("dfa-examples").join(name))?;
        let run = &outcome.runs[0];
        let align: Vec<String> = run.alignment.iter().map(|r| format!("{:.3}", r.mean_cos)).collect();
        println!(
            "{name}: train acc {:.3}, test acc {:.3}, alignment [{}]",
            run.train_accuracy,
            run.test_accuracy,
            align.join(", ")
        );
    }
    Ok(())
}
