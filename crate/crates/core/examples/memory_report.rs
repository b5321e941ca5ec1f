//! Feedback storage for the bundled VGG-16 description, naive per-layer
//! matrices versus one unified matrix.

use std::path::Path;

use dfa_core::experiments::{cmd_memory_report, RunConfig};

fn main() -> dfa_core::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/vgg16_imagenet.cfg");
    let cfg = RunConfig::load(&path)?;
    let (_, text) = cmd_memory_report(&cfg)?;
    print!("{text}");
    Ok(())
}
