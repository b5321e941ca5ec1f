//! The unified random feedback matrix.
//!
//! One Gaussian matrix `B` of shape `l_max x e_len` is drawn for the widest
//! layer. Layer `i` uses the first `l_i` rows, rescaled by
//! `sqrt(l_max / l_i)`, so each layer sees entries with variance
//! `1 / (l_i * e_len)` while only `l_max * e_len` values are ever stored.

use std::cell::Cell;

use sha2::{Digest, Sha256};

use crate::tensor::{gaussian_fill, gemm, Prng, Scalar, Tensor, Transpose};
use crate::{Error, Result};

thread_local! {
    static ALLOCATED: Cell<u64> = const { Cell::new(0) };
}

/// Feedback-matrix elements allocated on this thread so far.
///
/// Only [`UnifiedFeedback`] construction allocates; views and projections
/// never add to it.
pub fn allocated_elements() -> u64 {
    ALLOCATED.with(Cell::get)
}

#[derive(Clone, Debug)]
pub struct UnifiedFeedback<T = f32> {
    matrix: Tensor<T>,
    seed: u64,
    normalized: bool,
}

/// Normalized unified feedback: `B = U / sqrt(l_max * e_len)` with
/// `U ~ N(0, 1)`.
pub fn build_unified<T: Scalar>(rng: &mut Prng, l_max: usize, e_len: usize) -> Result<UnifiedFeedback<T>> {
    UnifiedFeedback::from_rng(rng, l_max, e_len, true)
}

impl<T: Scalar> UnifiedFeedback<T> {
    pub fn new(seed: u64, l_max: usize, e_len: usize, normalized: bool) -> Result<Self> {
        Self::from_rng(&mut Prng::new(seed), l_max, e_len, normalized)
    }

    /// Without normalization `B = U` and every view has scale 1.
    pub fn from_rng(rng: &mut Prng, l_max: usize, e_len: usize, normalized: bool) -> Result<Self> {
        if l_max == 0 || e_len == 0 {
            return Err(Error::Param(format!(
                "feedback dimensions must be positive, got {l_max}x{e_len}"
            )));
        }
        let seed = rng.seed();
        let std = if normalized {
            1.0 / ((l_max * e_len) as f64).sqrt()
        } else {
            1.0
        };
        let matrix = gaussian_fill(rng, &[l_max, e_len], T::zero(), T::from_f64_lossy(std))?;
        ALLOCATED.with(|a| a.set(a.get() + matrix.len() as u64));
        Ok(Self {
            matrix,
            seed,
            normalized,
        })
    }

    pub fn l_max(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn e_len(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }

    /// SHA-256 of the stored entries; used to show `B` never changes.
    pub fn digest(&self) -> [u8; 32] {
        let mut bytes = Vec::with_capacity(self.matrix.len() * T::BYTES);
        for v in self.matrix.data() {
            v.write_le(&mut bytes);
        }
        Sha256::digest(&bytes).into()
    }

    /// The feedback seen by a layer with `l_i` outputs. Borrows `B`.
    pub fn view(&self, l_i: usize) -> Result<FeedbackView<'_, T>> {
        if l_i == 0 || l_i > self.l_max() {
            return Err(Error::Param(format!(
                "layer size {l_i} outside 1..={}",
                self.l_max()
            )));
        }
        let scale = if self.normalized {
            (self.l_max() as f64 / l_i as f64).sqrt()
        } else {
            1.0
        };
        Ok(FeedbackView {
            fb: self,
            rows: l_i,
            scale,
        })
    }
}

/// `B_i = scale * B[..l_i, ..]`, never materialized.
#[derive(Clone, Copy, Debug)]
pub struct FeedbackView<'a, T> {
    fb: &'a UnifiedFeedback<T>,
    rows: usize,
    scale: f64,
}

impl<T: Scalar> FeedbackView<'_, T> {
    pub fn layer_size(&self) -> usize {
        self.rows
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Row-major `l_i x e_len` slice of the shared storage, unscaled.
    pub fn rows(&self) -> &[T] {
        &self.fb.matrix.data()[..self.rows * self.fb.e_len()]
    }

    /// Copies out `B_i`; for inspection and tests only.
    pub fn materialize(&self) -> Tensor<T> {
        let s = T::from_f64_lossy(self.scale);
        Tensor::new(
            vec![self.rows, self.fb.e_len()],
            self.rows().iter().map(|&v| v * s).collect(),
        )
        .expect("view has positive extents")
    }

    /// Per-sample `B_i e` for an error batch of shape `batch x e_len`.
    pub fn project(&self, e_batch: &Tensor<T>) -> Result<Tensor<T>> {
        let e_len = self.fb.e_len();
        if e_batch.shape().len() != 2 || e_batch.shape()[1] != e_len {
            return Err(Error::Shape(format!(
                "error batch {:?} does not have {e_len} columns",
                e_batch.shape()
            )));
        }
        let batch = e_batch.rows();
        let mut out = Tensor::zeros(&[batch, self.rows])?;
        gemm(
            Transpose::No,
            Transpose::Yes,
            batch,
            self.rows,
            e_len,
            T::from_f64_lossy(self.scale),
            e_batch.data(),
            self.rows(),
            T::zero(),
            out.data_mut(),
        );
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemoryReport {
    pub per_layer_bytes: Vec<(usize, u64)>,
    pub naive_bytes: u64,
    pub unified_bytes: u64,
}

/// Feedback storage for hidden layers of the given output sizes: one matrix
/// per layer versus one shared matrix for the widest.
pub fn memory_report(layer_sizes: &[usize], e_len: usize, bytes_per_element: usize) -> Result<MemoryReport> {
    if layer_sizes.is_empty() {
        return Err(Error::Empty("memory report needs at least one layer".into()));
    }
    let per = (e_len * bytes_per_element) as u64;
    let per_layer_bytes: Vec<_> = layer_sizes.iter().map(|&l| (l, l as u64 * per)).collect();
    Ok(MemoryReport {
        naive_bytes: per_layer_bytes.iter().map(|p| p.1).sum(),
        unified_bytes: *layer_sizes.iter().max().unwrap() as u64 * per,
        per_layer_bytes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_std(v: &[f64]) -> f64 {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
    }

    #[test]
    fn single_entry_has_unit_scale() {
        let fb = UnifiedFeedback::<f64>::new(3, 1, 1, true).unwrap();
        assert_eq!(fb.matrix().len(), 1);
        assert_eq!(fb.view(1).unwrap().scale(), 1.0);
        let raw = Prng::new(3).next_gaussian();
        assert_eq!(fb.matrix().data()[0], raw);
    }

    #[test]
    fn entry_spread_matches_normalization() {
        let fb = UnifiedFeedback::<f64>::new(4, 800, 10, true).unwrap();
        let want = 1.0 / 8000f64.sqrt();
        assert!((sample_std(fb.matrix().data()) / want - 1.0).abs() < 0.02);

        let fb = UnifiedFeedback::<f64>::new(5, 1024, 10, true).unwrap();
        let view = fb.view(64).unwrap();
        assert_eq!(view.scale(), 4.0);
        let want = 1.0 / 640f64.sqrt();
        assert!((sample_std(view.materialize().data()) / want - 1.0).abs() < 0.05);
    }

    #[test]
    fn same_seed_same_matrix_and_bad_sizes_rejected() {
        let a = UnifiedFeedback::<f32>::new(9, 50, 10, true).unwrap();
        let b = UnifiedFeedback::<f32>::new(9, 50, 10, true).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert!(UnifiedFeedback::<f32>::new(9, 0, 10, true).is_err());
        assert!(UnifiedFeedback::<f32>::new(9, 5, 0, true).is_err());
        assert!(a.view(51).is_err());
        assert!(a.view(0).is_err());
    }

    #[test]
    fn views_slice_without_copying() {
        let before = allocated_elements();
        let fb = UnifiedFeedback::<f32>::new(1, 256, 10, true).unwrap();
        assert_eq!(allocated_elements() - before, 2560);
        let full = fb.view(256).unwrap();
        assert_eq!(full.scale(), 1.0);
        assert_eq!(full.materialize(), *fb.matrix());
        let quarter = fb.view(64).unwrap();
        assert_eq!(quarter.scale(), 2.0);
        assert_eq!(quarter.rows().as_ptr(), fb.matrix().data().as_ptr());
        let again = fb.view(64).unwrap();
        assert_eq!(again.materialize(), quarter.materialize());
        let e = Tensor::full(&[4, 10], 0.1f32).unwrap();
        for l in [1, 64, 100, 256] {
            fb.view(l).unwrap().project(&e).unwrap();
        }
        assert_eq!(allocated_elements() - before, 2560);
    }

    #[test]
    fn projection_cases() {
        let fb = UnifiedFeedback::<f64>::new(2, 30, 5, true).unwrap();
        let view = fb.view(20).unwrap();
        let zero = Tensor::zeros(&[3, 5]).unwrap();
        assert!(view.project(&zero).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(view.project(&Tensor::zeros(&[3, 4]).unwrap()).is_err());

        let mut rng = Prng::new(8);
        let e = gaussian_fill(&mut rng, &[7, 5], 0.0, 1.0).unwrap();
        let got = view.project(&e).unwrap();
        let bi = view.materialize();
        for n in 0..7 {
            for r in 0..20 {
                let want: f64 = (0..5).map(|c| bi.data()[r * 5 + c] * e.row(n)[c]).sum();
                assert!((got.row(n)[r] - want).abs() < 1e-6);
            }
        }

        let col = UnifiedFeedback::<f64>::new(6, 4, 1, true).unwrap();
        let v = col.view(4).unwrap();
        let e1 = Tensor::new(vec![1, 1], vec![-2.5]).unwrap();
        let out = v.project(&e1).unwrap();
        for (o, b) in out.data().iter().zip(col.matrix().data()) {
            assert_eq!(*o, b * -2.5);
        }
    }

    #[test]
    fn unnormalized_is_raw_gaussian() {
        let fb = UnifiedFeedback::<f64>::new(11, 400, 10, false).unwrap();
        assert_eq!(fb.view(100).unwrap().scale(), 1.0);
        assert!((sample_std(fb.matrix().data()) - 1.0).abs() < 0.03);
        let norm = UnifiedFeedback::<f64>::new(11, 400, 10, true).unwrap();
        for (a, b) in fb.matrix().data().iter().zip(norm.matrix().data()) {
            assert!((a / 4000f64.sqrt() - b).abs() < 1e-15);
        }
    }

    #[test]
    fn memory_arithmetic() {
        let r = memory_report(&[800, 800], 10, 4).unwrap();
        assert_eq!((r.naive_bytes, r.unified_bytes), (64_000, 32_000));
        let one = memory_report(&[256], 10, 4).unwrap();
        assert_eq!(one.naive_bytes, one.unified_bytes);
        assert!(memory_report(&[], 10, 4).is_err());
    }
}
