//! Per-feature batch normalization.
//!
//! Inputs are viewed as `batch x channels x spatial`: a fully connected
//! block has one spatial position per feature, a convolutional block
//! normalizes each channel over batch and all positions.

use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
/// Weight kept on the old running statistics at each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    gamma: Tensor<T>,
    beta: Tensor<T>,
    running_mean: Vec<T>,
    running_var: Vec<T>,
    has_running: bool,
    eval_fell_back: bool,
}

/// What the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
    /// Statistics were treated as constants (eval semantics).
    frozen: bool,
}

#[derive(Clone, Debug)]
pub struct BnGrads<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub input: Tensor<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: Tensor::full(&[channels], T::one())?,
            beta: Tensor::zeros(&[channels])?,
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            has_running: false,
            eval_fell_back: false,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn gamma(&self) -> &Tensor<T> {
        &self.gamma
    }

    pub fn beta(&self) -> &Tensor<T> {
        &self.beta
    }

    pub fn gamma_mut(&mut self) -> &mut Tensor<T> {
        &mut self.gamma
    }

    pub fn beta_mut(&mut self) -> &mut Tensor<T> {
        &mut self.beta
    }

    pub fn running_mean(&self) -> &[T] {
        &self.running_mean
    }

    pub fn running_var(&self) -> &[T] {
        &self.running_var
    }

    pub fn has_running_stats(&self) -> bool {
        self.has_running
    }

    pub(crate) fn set_running(&mut self, mean: Vec<T>, var: Vec<T>) {
        self.running_mean = mean;
        self.running_var = var;
        self.has_running = true;
    }

    /// Set when an eval-mode pass had to use batch statistics because no
    /// training pass had produced running statistics yet.
    pub fn eval_fell_back_to_batch_stats(&self) -> bool {
        self.eval_fell_back
    }

    fn layout(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        let c = self.channels();
        let batch = x.rows();
        if !x.row_len().is_multiple_of(c) {
            return Err(Error::Shape(format!(
                "batchnorm over {c} channels cannot split rows of {}",
                x.row_len()
            )));
        }
        Ok((batch, x.row_len() / c))
    }

    fn batch_stats(&self, x: &Tensor<T>, batch: usize, spatial: usize) -> (Vec<T>, Vec<T>) {
        let c = self.channels();
        let m = T::from_usize(batch * spatial).unwrap();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for n in 0..batch {
            let row = x.row(n);
            for ch in 0..c {
                mean[ch] += row[ch * spatial..(ch + 1) * spatial].iter().copied().sum::<T>();
            }
        }
        mean.iter_mut().for_each(|v| *v = *v / m);
        for n in 0..batch {
            let row = x.row(n);
            for ch in 0..c {
                var[ch] += row[ch * spatial..(ch + 1) * spatial]
                    .iter()
                    .map(|&v| (v - mean[ch]) * (v - mean[ch]))
                    .sum::<T>();
            }
        }
        var.iter_mut().for_each(|v| *v = *v / m);
        (mean, var)
    }

    /// Normalizes with batch statistics; updates running statistics when
    /// `update_running` is set. Batch size must be at least 2.
    pub fn forward_train(&mut self, x: &Tensor<T>, update_running: bool) -> Result<(Tensor<T>, BnCache<T>)> {
        let (batch, spatial) = self.layout(x)?;
        if batch < 2 {
            return Err(Error::Shape(
                "batchnorm in training mode needs a batch of at least 2".into(),
            ));
        }
        let (mean, var) = self.batch_stats(x, batch, spatial);
        if update_running {
            let m = (batch * spatial) as f64;
            let keep = T::from_f64_lossy(BN_MOMENTUM);
            let take = T::one() - keep;
            let unbias = T::from_f64_lossy(if m > 1.0 { m / (m - 1.0) } else { 1.0 });
            for ch in 0..self.channels() {
                if self.has_running {
                    self.running_mean[ch] = keep * self.running_mean[ch] + take * mean[ch];
                    self.running_var[ch] = keep * self.running_var[ch] + take * var[ch] * unbias;
                } else {
                    self.running_mean[ch] = mean[ch];
                    self.running_var[ch] = var[ch] * unbias;
                }
            }
            self.has_running = true;
        }
        Ok(self.normalize(x, &mean, &var, spatial, false))
    }

    /// Normalizes with running statistics, falling back to batch statistics
    /// (and flagging it) if none exist yet.
    pub fn forward_eval(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>)> {
        let (batch, spatial) = self.layout(x)?;
        if self.has_running {
            let (mean, var) = (self.running_mean.clone(), self.running_var.clone());
            Ok(self.normalize(x, &mean, &var, spatial, true))
        } else {
            if !self.eval_fell_back {
                log::warn!("batchnorm evaluated before any training pass; using batch statistics");
            }
            self.eval_fell_back = true;
            let (mean, var) = self.batch_stats(x, batch, spatial);
            Ok(self.normalize(x, &mean, &var, spatial, true))
        }
    }

    fn normalize(&self, x: &Tensor<T>, mean: &[T], var: &[T], spatial: usize, frozen: bool) -> (Tensor<T>, BnCache<T>) {
        let eps = T::from_f64_lossy(BN_EPS);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut x_hat = x.clone();
        let mut y = x.clone();
        let c = self.channels();
        for n in 0..x.rows() {
            let xr = x_hat.row_mut(n);
            for ch in 0..c {
                for v in &mut xr[ch * spatial..(ch + 1) * spatial] {
                    *v = (*v - mean[ch]) * inv_std[ch];
                }
            }
            let yr = y.row_mut(n);
            for ch in 0..c {
                let (g, b) = (self.gamma.data()[ch], self.beta.data()[ch]);
                for (o, &h) in yr[ch * spatial..(ch + 1) * spatial]
                    .iter_mut()
                    .zip(&xr[ch * spatial..(ch + 1) * spatial])
                {
                    *o = g * h + b;
                }
            }
        }
        (
            y,
            BnCache {
                x_hat,
                inv_std,
                frozen,
            },
        )
    }

    /// Backward through the normalization.
    ///
    /// `grad` is the per-sample upstream gradient (the gradient of the
    /// batch-mean loss times the batch size). Returned `gamma`/`beta`
    /// gradients are batch means; the input gradient keeps the per-sample
    /// scaling of `grad`.
    pub fn backward(&self, grad: &Tensor<T>, cache: &BnCache<T>) -> Result<BnGrads<T>> {
        if grad.shape() != cache.x_hat.shape() {
            return Err(Error::Shape(format!(
                "batchnorm grad {:?} vs cached {:?}",
                grad.shape(),
                cache.x_hat.shape()
            )));
        }
        let (batch, spatial) = self.layout(grad)?;
        let c = self.channels();
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for n in 0..batch {
            let (gr, xr) = (grad.row(n), cache.x_hat.row(n));
            for ch in 0..c {
                let r = ch * spatial..(ch + 1) * spatial;
                for (&g, &h) in gr[r.clone()].iter().zip(&xr[r]) {
                    sum_g[ch] += g;
                    sum_gx[ch] += g * h;
                }
            }
        }
        let inv_batch = T::one() / T::from_usize(batch).unwrap();
        let m = T::from_usize(batch * spatial).unwrap();
        let mut input = grad.clone();
        for n in 0..batch {
            let xr = cache.x_hat.row(n);
            let ir = input.row_mut(n);
            for ch in 0..c {
                let scale = self.gamma.data()[ch] * cache.inv_std[ch];
                let r = ch * spatial..(ch + 1) * spatial;
                for (o, &h) in ir[r.clone()].iter_mut().zip(&xr[r]) {
                    *o = if cache.frozen {
                        scale * *o
                    } else {
                        scale / m * (m * *o - sum_g[ch] - h * sum_gx[ch])
                    };
                }
            }
        }
        Ok(BnGrads {
            gamma: Tensor::new(vec![c], sum_gx.iter().map(|&v| v * inv_batch).collect())?,
            beta: Tensor::new(vec![c], sum_g.iter().map(|&v| v * inv_batch).collect())?,
            input,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gaussian_fill, Prng};

    #[test]
    fn constant_feature_maps_to_beta() {
        let mut bn = BatchNorm::<f64>::new(2).unwrap();
        bn.gamma_mut().data_mut().copy_from_slice(&[3.0, -2.0]);
        bn.beta_mut().data_mut().copy_from_slice(&[0.5, 1.5]);
        let x = Tensor::new(vec![3, 2], vec![4.0, -1.0, 4.0, -1.0, 4.0, -1.0]).unwrap();
        let (y, _) = bn.forward_train(&x, true).unwrap();
        assert_eq!(y.data(), &[0.5, 1.5, 0.5, 1.5, 0.5, 1.5]);
    }

    #[test]
    fn already_normalized_input_is_preserved() {
        let mut bn = BatchNorm::<f64>::new(1).unwrap();
        let x = Tensor::new(vec![2, 1], vec![-1.0, 1.0]).unwrap();
        let (y, _) = bn.forward_train(&x, true).unwrap();
        let shrink = 1.0 / (1.0f64 + BN_EPS).sqrt();
        assert!((y.data()[0] + shrink).abs() < 1e-12);
        assert!((y.data()[1] - shrink).abs() < 1e-12);
        assert!((y.data()[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn batch_of_one_is_rejected_in_training() {
        let mut bn = BatchNorm::<f32>::new(3).unwrap();
        let x = Tensor::<f32>::zeros(&[1, 3]).unwrap();
        assert!(bn.forward_train(&x, true).is_err());
    }

    #[test]
    fn eval_before_training_falls_back_and_flags() {
        let mut bn = BatchNorm::<f64>::new(1).unwrap();
        let x = Tensor::new(vec![2, 1], vec![1.0, 3.0]).unwrap();
        assert!(!bn.eval_fell_back_to_batch_stats());
        let (y, _) = bn.forward_eval(&x).unwrap();
        assert!(bn.eval_fell_back_to_batch_stats());
        assert!(y.data()[0] < 0.0 && y.data()[1] > 0.0);
    }

    #[test]
    fn running_stats_use_momentum() {
        let mut bn = BatchNorm::<f64>::new(1).unwrap();
        let a = Tensor::new(vec![2, 1], vec![0.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![10.0, 12.0]).unwrap();
        bn.forward_train(&a, true).unwrap();
        assert_eq!(bn.running_mean(), &[1.0]);
        assert_eq!(bn.running_var(), &[2.0]);
        bn.forward_train(&b, true).unwrap();
        assert!((bn.running_mean()[0] - (0.9 * 1.0 + 0.1 * 11.0)).abs() < 1e-12);
        assert!((bn.running_var()[0] - (0.9 * 2.0 + 0.1 * 2.0)).abs() < 1e-12);
    }

    /// Scalar loss sum(w * bn(x)) differentiated by central differences.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Prng::new(4);
        let (batch, feat) = (16, 8);
        let x = gaussian_fill(&mut rng, &[batch, feat], 0.3f64, 1.7).unwrap();
        let w = gaussian_fill(&mut rng, &[batch, feat], 0.0f64, 1.0).unwrap();
        let mut bn = BatchNorm::<f64>::new(feat).unwrap();
        let gamma = gaussian_fill(&mut rng, &[feat], 1.0f64, 0.3).unwrap();
        let beta = gaussian_fill(&mut rng, &[feat], 0.0f64, 0.3).unwrap();
        bn.gamma_mut().data_mut().copy_from_slice(gamma.data());
        bn.beta_mut().data_mut().copy_from_slice(beta.data());

        // Batch-mean loss L = (1/B) sum w*y, so the per-sample upstream grad is w.
        let loss = |bn: &mut BatchNorm<f64>, x: &Tensor<f64>| {
            let (y, _) = bn.forward_train(x, false).unwrap();
            y.dot(&w).unwrap() / batch as f64
        };
        let (_, cache) = bn.forward_train(&x, false).unwrap();
        let grads = bn.backward(&w, &cache).unwrap();
        let h = 1e-6;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-4);

        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            // input grad is per-sample scaled: B * dL/dx
            let fd = (loss(&mut bn, &xp) - loss(&mut bn, &xm)) / (2.0 * h) * batch as f64;
            assert!(rel(fd, grads.input.data()[i]) < 1e-5, "x[{i}]: {fd} vs {}", grads.input.data()[i]);
        }
        for ch in 0..feat {
            for (which, analytic) in [(0, grads.gamma.data()[ch]), (1, grads.beta.data()[ch])] {
                let mut up = bn.clone();
                let mut down = bn.clone();
                let (pu, pd) = if which == 0 {
                    (up.gamma_mut(), down.gamma_mut())
                } else {
                    (up.beta_mut(), down.beta_mut())
                };
                pu.data_mut()[ch] += h;
                pd.data_mut()[ch] -= h;
                let fd = (loss(&mut up, &x) - loss(&mut down, &x)) / (2.0 * h);
                assert!(rel(fd, analytic) < 1e-5, "param {which}[{ch}]: {fd} vs {analytic}");
            }
        }
    }
}
