//! Tensors, the seeded generator, gemm and im2col.

use dfa_core::tensor::{col2im_into, gemm, im2col_into, ConvGeometry, Prng, Tensor, Transpose};

fn main() -> dfa_core::Result<()> {
    let mut rng = Prng::new(42);
    let a = Tensor::<f64>::gaussian(&mut rng, &[2, 3], 0.0, 1.0)?;
    let b = Tensor::<f64>::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]])?;
    let mut c = Tensor::zeros(&[2, 2])?;
    gemm(Transpose::No, Transpose::No, 2, 2, 3, 1.0, a.data(), b.data(), 0.0, c.data_mut());
    println!("a = {a:?}\na·b = {c:?}");

    // Forked streams are independent of how much the parent has been used.
    let s1 = rng.fork(3).next_u64();
    rng.next_u64();
    assert_eq!(s1, rng.fork(3).next_u64());

    let geo = ConvGeometry::new(1, 4, 4, (3, 3), 1, 1)?;
    let image: Vec<f64> = (0..16).map(f64::from).collect();
    let mut cols = vec![0.0; geo.patch_len() * geo.positions()];
    im2col_into(&image, &geo, &mut cols);
    let mut back = vec![0.0; 16];
    col2im_into(&cols, &geo, &mut back);
    println!("im2col: {} x {} patch matrix; col2im(im2col(x)) scales each pixel by the number of patches covering it:", geo.patch_len(), geo.positions());
    for row in back.chunks(4) {
        println!("  {row:?}");
    }
    Ok(())
}
