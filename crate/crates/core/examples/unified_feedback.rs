//! One feedback matrix sized for the widest layer serves every layer as a
//! rescaled row slice.

use dfa_core::feedback::{allocated_elements, memory_report, UnifiedFeedback};
use dfa_core::tensor::{Prng, Tensor};

fn main() -> dfa_core::Result<()> {
    let sizes = [800, 400, 100];
    let classes = 10;
    let before = allocated_elements();
    let fb = UnifiedFeedback::<f64>::new(7, 800, classes, true)?;
    println!("allocated {} elements for {} layers", allocated_elements() - before, sizes.len());
    println!("digest {:02x?}", &fb.digest()[..8]);

    let e = Tensor::gaussian(&mut Prng::new(0), &[4, classes], 0.0, 1.0)?;
    for l in sizes {
        let view = fb.view(l)?;
        let signal = view.project(&e)?;
        let rms = (signal.data().iter().map(|v| v * v).sum::<f64>() / signal.len() as f64).sqrt();
        println!("layer of {l:>3}: scale {:.3}, signal rms {rms:.4}", view.scale());
    }

    let r = memory_report(&sizes, classes, 4)?;
    println!("f32 storage: naive {} bytes, unified {} bytes", r.naive_bytes, r.unified_bytes);
    Ok(())
}
