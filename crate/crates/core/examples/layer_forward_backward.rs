//! One block (affine, batch norm, tanh, dropout) forward and backward, and
//! the difference between training and evaluation passes.

use dfa_core::layers::{Activation, Block, BlockConfig, Mode};
use dfa_core::tensor::{Prng, Tensor};

fn main() -> dfa_core::Result<()> {
    let mut rng = Prng::new(1);
    let cfg = BlockConfig::fc(6, 4)
        .with_activation(Activation::Tanh)
        .with_batchnorm(true)
        .with_dropout(0.25);
    let mut block = Block::<f64>::new(cfg, &mut rng)?;
    let x = Tensor::gaussian(&mut rng, &[8, 6], 0.0, 1.0)?;

    let y = block.forward(&x, Mode::Train, Some(&mut rng))?;
    println!("train output row 0: {:?}", y.row(0));
    println!("dropout mask row 0: {:?}", block.cached_dropout_mask().map(|m| m.row(0).to_vec()));

    let g = block.backward_local(&Tensor::full(&[8, 4], 1.0)?, true)?;
    println!("dW row 0: {:?}", g.weight.row(0));
    println!("d gamma: {:?}", g.gamma.as_ref().map(|t| t.data().to_vec()));
    println!("d input row 0: {:?}", g.input.as_ref().map(|t| t.row(0).to_vec()));

    // Eval uses running statistics and disables dropout, so repeated passes agree.
    let e1 = block.forward(&x, Mode::Eval, None)?;
    let e2 = block.forward(&x, Mode::Eval, None)?;
    assert_eq!(e1, e2);
    println!("eval output row 0: {:?}", e1.row(0));
    Ok(())
}
