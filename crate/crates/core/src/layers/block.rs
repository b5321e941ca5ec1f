use super::access;
use super::batchnorm::{BatchNorm, BnCache};
use super::{dropout_mask, BlockConfig, Mode};
use crate::tensor::{col2im_into, gaussian_fill, gemm, im2col_into, Prng, Scalar, Tensor, Transpose};
use crate::{Error, Result};

/// Values kept from the last caching forward pass.
#[derive(Clone, Debug)]
struct Cache<T> {
    /// `h_{i-1}`, flattened to `batch x input_len`.
    input: Tensor<T>,
    /// `a_i = W h_{i-1} + b`.
    affine: Tensor<T>,
    normalized: Option<(Tensor<T>, BnCache<T>)>,
    /// Activation output, before dropout.
    activated: Tensor<T>,
    mask: Option<Tensor<T>>,
    /// `h_i` when dropout changed it; otherwise `activated` is the output.
    dropped: Option<Tensor<T>>,
}

/// A parameterized layer: weights, bias, optional batch normalization and
/// the caches of its last forward pass.
///
/// `W` is `units x fan_in` row-major. For a convolution each row is one
/// filter flattened as `C_in x k x k`.
#[derive(Clone, Debug)]
pub struct Block<T> {
    id: u64,
    config: BlockConfig,
    weight: Tensor<T>,
    bias: Tensor<T>,
    bn: Option<BatchNorm<T>>,
    cache: Option<Cache<T>>,
}

/// Gradients produced by [`Block::backward_local`]. Parameter gradients are
/// batch means of the positive gradient (descent subtracts them).
#[derive(Clone, Debug, PartialEq)]
pub struct BlockGrads<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub gamma: Option<Tensor<T>>,
    pub beta: Option<Tensor<T>>,
    /// Per-sample gradient at the block input, when requested.
    pub input: Option<Tensor<T>>,
}

impl<T: Scalar> Block<T> {
    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero bias.
    pub fn new(config: BlockConfig, rng: &mut Prng) -> Result<Self> {
        config.validate()?;
        let std = T::from_f64_lossy((2.0 / config.fan_in() as f64).sqrt());
        let weight = gaussian_fill(rng, &[config.units(), config.fan_in()], T::zero(), std)?;
        let bias = Tensor::zeros(&[config.units()])?;
        Self::from_parts(config, weight, bias)
    }

    pub fn from_parts(config: BlockConfig, weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        config.validate()?;
        if weight.shape() != [config.units(), config.fan_in()] || bias.shape() != [config.units()] {
            return Err(Error::Shape(format!(
                "block expects W {}x{} and b {}, got {:?} and {:?}",
                config.units(),
                config.fan_in(),
                config.units(),
                weight.shape(),
                bias.shape()
            )));
        }
        let bn = if config.batchnorm {
            Some(BatchNorm::new(config.units())?)
        } else {
            None
        };
        Ok(Self {
            id: access::fresh_id(),
            config,
            weight,
            bias,
            bn,
            cache: None,
        })
    }

    /// Identity used by parameter-access tracing.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn config(&self) -> &BlockConfig {
        &self.config
    }

    pub fn output_len(&self) -> usize {
        self.config.output_len()
    }

    pub fn weight(&self) -> &Tensor<T> {
        access::record(self.id);
        &self.weight
    }

    pub fn bias(&self) -> &Tensor<T> {
        access::record(self.id);
        &self.bias
    }

    pub fn batchnorm(&self) -> Option<&BatchNorm<T>> {
        access::record(self.id);
        self.bn.as_ref()
    }

    pub fn weight_mut(&mut self) -> &mut Tensor<T> {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut Tensor<T> {
        &mut self.bias
    }

    pub fn batchnorm_mut(&mut self) -> Option<&mut BatchNorm<T>> {
        self.bn.as_mut()
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    /// Cached `h_{i-1}`, flattened.
    pub fn cached_input(&self) -> Option<&Tensor<T>> {
        self.cache.as_ref().map(|c| &c.input)
    }

    /// Cached `a_i`.
    pub fn cached_affine(&self) -> Option<&Tensor<T>> {
        self.cache.as_ref().map(|c| &c.affine)
    }

    /// Cached input of the activation (`a_i`, or its normalization).
    pub fn cached_preactivation(&self) -> Option<&Tensor<T>> {
        self.cache
            .as_ref()
            .map(|c| c.normalized.as_ref().map_or(&c.affine, |(n, _)| n))
    }

    /// Cached `h_i`, the block output.
    pub fn cached_output(&self) -> Option<&Tensor<T>> {
        self.cache
            .as_ref()
            .map(|c| c.dropped.as_ref().unwrap_or(&c.activated))
    }

    pub fn cached_dropout_mask(&self) -> Option<&Tensor<T>> {
        self.cache.as_ref().and_then(|c| c.mask.as_ref())
    }

    fn output_shape(&self, batch: usize) -> Vec<usize> {
        let mut shape = vec![batch];
        shape.extend(self.config.output_dims());
        shape
    }

    fn affine(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = x.rows();
        let units = self.config.units();
        let (weight, bias) = (self.weight(), self.bias());
        if self.config.is_conv() {
            let g = self.config.geometry()?;
            let (k, p) = (g.patch_len(), g.positions());
            let mut cols = vec![T::zero(); k * p];
            let mut out = Tensor::zeros(&[batch, units * p])?;
            for n in 0..batch {
                im2col_into(x.row(n), &g, &mut cols);
                let row = out.row_mut(n);
                gemm(Transpose::No, Transpose::No, units, p, k, T::one(), weight.data(), &cols, T::zero(), row);
                for (c, chunk) in row.chunks_mut(p).enumerate() {
                    let b = bias.data()[c];
                    chunk.iter_mut().for_each(|v| *v += b);
                }
            }
            Ok(out)
        } else {
            let fan_in = self.config.fan_in();
            let mut out = Tensor::zeros(&[batch, units])?;
            gemm(Transpose::No, Transpose::Yes, batch, units, fan_in, T::one(), x.data(), weight.data(), T::zero(), out.data_mut());
            for n in 0..batch {
                for (v, &b) in out.row_mut(n).iter_mut().zip(bias.data()) {
                    *v += b;
                }
            }
            Ok(out)
        }
    }

    /// `a = W h + b`, then batch norm, activation and dropout.
    ///
    /// `rng` is required when dropout is active in [`Mode::Train`].
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: Option<&mut Prng>) -> Result<Tensor<T>> {
        let batch = x.rows();
        if x.row_len() != self.config.input_len() {
            return Err(Error::Shape(format!(
                "block expects {} inputs per sample, got {:?}",
                self.config.input_len(),
                x.shape()
            )));
        }
        let input = x.clone().flatten_rows();
        let affine = self.affine(&input)?;

        let normalized = match self.bn.as_mut() {
            None => None,
            Some(bn) => Some(match mode {
                Mode::Train => bn.forward_train(&affine, true)?,
                Mode::Replay => bn.forward_train(&affine, false)?,
                Mode::Eval | Mode::EvalTraced => bn.forward_eval(&affine)?,
            }),
        };

        let act = self.config.activation;
        let pre = normalized.as_ref().map_or(&affine, |(n, _)| n);
        let activated = pre.map(|v| act.eval(v));

        let previous_mask = self.cache.as_mut().and_then(|c| c.mask.take());
        let mask = if self.config.dropout > 0.0 && mode.is_training() {
            Some(match mode {
                Mode::Train => {
                    let rng = rng.ok_or_else(|| Error::Param("dropout in training mode needs an rng".into()))?;
                    dropout_mask(rng, activated.shape(), self.config.dropout)?
                }
                _ => previous_mask
                    .filter(|m| m.shape() == activated.shape())
                    .ok_or_else(|| Error::State("replay needs the dropout mask of a previous pass".into()))?,
            })
        } else {
            None
        };
        let dropped = match &mask {
            Some(m) => {
                let mut d = activated.clone();
                d.mul_assign_elem(m)?;
                Some(d)
            }
            None => None,
        };

        let output = dropped.as_ref().unwrap_or(&activated).clone().reshape(&self.output_shape(batch))?;
        if mode.keeps_caches() {
            self.cache = Some(Cache {
                input,
                affine,
                normalized,
                activated,
                mask,
                dropped,
            });
        }
        Ok(output)
    }

    /// Backward through this block alone.
    ///
    /// `grad_out` is the per-sample gradient at the block output `h_i`
    /// (for DFA this is the projected error `B_i e`). It is chained through
    /// the dropout mask, the activation derivative, batch normalization and
    /// the affine map. The input gradient is only formed when
    /// `need_input_grad` is set; DFA never needs it.
    pub fn backward_local(&self, grad_out: &Tensor<T>, need_input_grad: bool) -> Result<BlockGrads<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("backward before a caching forward pass".into()))?;
        let batch = cache.input.rows();
        if grad_out.len() != batch * self.output_len() {
            return Err(Error::Shape(format!(
                "gradient {:?} does not match block output {:?}",
                grad_out.shape(),
                self.output_shape(batch)
            )));
        }
        let mut g = Tensor::new(vec![batch, self.output_len()], grad_out.data().to_vec())?;
        if let Some(mask) = &cache.mask {
            g.mul_assign_elem(mask)?;
        }
        let act = self.config.activation;
        let pre = cache.normalized.as_ref().map_or(&cache.affine, |(n, _)| n);
        for ((gv, &a), &y) in g.data_mut().iter_mut().zip(pre.data()).zip(cache.activated.data()) {
            *gv *= act.derivative_given_output(a, y);
        }

        let (gamma, beta) = match (&cache.normalized, self.batchnorm()) {
            (Some((_, bn_cache)), Some(bn)) => {
                let bg = bn.backward(&g, bn_cache)?;
                g = bg.input;
                (Some(bg.gamma), Some(bg.beta))
            }
            _ => (None, None),
        };

        let inv_batch = T::one() / T::from_usize(batch).unwrap();
        let units = self.config.units();
        let fan_in = self.config.fan_in();
        let weight = self.weight();
        let mut d_weight = Tensor::zeros(&[units, fan_in])?;
        let mut d_bias = Tensor::zeros(&[units])?;
        let mut d_input = None;

        if self.config.is_conv() {
            let geo = self.config.geometry()?;
            let (k, p) = (geo.patch_len(), geo.positions());
            let mut cols = vec![T::zero(); k * p];
            let mut d_cols = vec![T::zero(); k * p];
            let mut gi = if need_input_grad {
                Some(Tensor::zeros(&[batch, geo.input_len()])?)
            } else {
                None
            };
            for n in 0..batch {
                let gn = g.row(n);
                im2col_into(cache.input.row(n), &geo, &mut cols);
                gemm(Transpose::No, Transpose::Yes, units, k, p, inv_batch, gn, &cols, T::one(), d_weight.data_mut());
                for (db, chunk) in d_bias.data_mut().iter_mut().zip(gn.chunks(p)) {
                    *db += chunk.iter().copied().sum::<T>() * inv_batch;
                }
                if let Some(gi) = gi.as_mut() {
                    gemm(Transpose::Yes, Transpose::No, k, p, units, T::one(), weight.data(), gn, T::zero(), &mut d_cols);
                    col2im_into(&d_cols, &geo, gi.row_mut(n));
                }
            }
            d_input = gi;
        } else {
            gemm(Transpose::Yes, Transpose::No, units, fan_in, batch, inv_batch, g.data(), cache.input.data(), T::zero(), d_weight.data_mut());
            for n in 0..batch {
                for (db, &v) in d_bias.data_mut().iter_mut().zip(g.row(n)) {
                    *db += v;
                }
            }
            d_bias.scale(inv_batch);
            if need_input_grad {
                let mut gi = Tensor::zeros(&[batch, fan_in])?;
                gemm(Transpose::No, Transpose::No, batch, fan_in, units, T::one(), g.data(), weight.data(), T::zero(), gi.data_mut());
                d_input = Some(gi);
            }
        }

        Ok(BlockGrads {
            weight: d_weight,
            bias: d_bias,
            gamma,
            beta,
            input: d_input,
        })
    }
}
