//! Network building blocks.
//!
//! A parameterized [`Block`] computes `a = W h + b`, then optional batch
//! normalization, then the activation, then optional inverted dropout, in
//! that order. [`Dropout`] and [`MaxPool2`] are parameter-free layers that
//! sit between blocks (input dropout, pooling after a convolution).

pub mod access;
mod activation;
mod batchnorm;
mod block;
mod pool;

use crate::tensor::{ConvGeometry, Prng, Scalar, Tensor};
use crate::{Error, Result};

pub use activation::Activation;
pub use batchnorm::{BatchNorm, BnCache, BnGrads, BN_EPS, BN_MOMENTUM};
pub use block::{Block, BlockGrads};
pub use pool::MaxPool2;

/// How a forward pass treats batch normalization, dropout and caches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, fresh dropout masks, running statistics updated,
    /// caches kept for a backward pass.
    Train,
    /// Training semantics, but the dropout masks of the previous pass are
    /// reused and running statistics are left alone. Re-evaluates exactly
    /// the function the last `Train` pass computed.
    Replay,
    /// Running statistics, dropout off, nothing cached.
    Eval,
    /// Eval semantics with caches kept so a backward pass can follow.
    EvalTraced,
}

impl Mode {
    pub fn keeps_caches(self) -> bool {
        !matches!(self, Mode::Eval)
    }

    pub fn is_training(self) -> bool {
        matches!(self, Mode::Train | Mode::Replay)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlockKind {
    Fc {
        inputs: usize,
        outputs: usize,
    },
    /// Square kernels; the input map size is part of the config so the
    /// output size is known without data.
    Conv {
        in_channels: usize,
        out_channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockConfig {
    pub kind: BlockKind,
    pub activation: Activation,
    /// Inverted-dropout probability applied to the block output, in `[0, 1)`.
    pub dropout: f64,
    pub batchnorm: bool,
}

impl BlockConfig {
    pub fn fc(inputs: usize, outputs: usize) -> Self {
        Self {
            kind: BlockKind::Fc { inputs, outputs },
            activation: Activation::Identity,
            dropout: 0.0,
            batchnorm: false,
        }
    }

    pub fn conv(
        in_channels: usize,
        out_channels: usize,
        input_hw: (usize, usize),
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        Self {
            kind: BlockKind::Conv {
                in_channels,
                out_channels,
                height: input_hw.0,
                width: input_hw.1,
                kernel,
                stride,
                pad,
            },
            activation: Activation::Identity,
            dropout: 0.0,
            batchnorm: false,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout = p;
        self
    }

    pub fn with_batchnorm(mut self, on: bool) -> Self {
        self.batchnorm = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Param(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout
            )));
        }
        match self.kind {
            BlockKind::Fc { inputs, outputs } if inputs == 0 || outputs == 0 => {
                Err(Error::Param("fc sizes must be positive".into()))
            }
            BlockKind::Fc { .. } => Ok(()),
            BlockKind::Conv {
                in_channels,
                out_channels,
                ..
            } if in_channels == 0 || out_channels == 0 => {
                Err(Error::Param("conv channel counts must be positive".into()))
            }
            BlockKind::Conv { .. } => self.geometry().map(|_| ()),
        }
    }

    pub fn geometry(&self) -> Result<ConvGeometry> {
        match self.kind {
            BlockKind::Conv {
                in_channels,
                height,
                width,
                kernel,
                stride,
                pad,
                ..
            } => ConvGeometry::new(in_channels, height, width, (kernel, kernel), stride, pad),
            BlockKind::Fc { .. } => Err(Error::Param("fc block has no conv geometry".into())),
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self.kind, BlockKind::Conv { .. })
    }

    /// Flattened per-sample input length.
    pub fn input_len(&self) -> usize {
        match self.kind {
            BlockKind::Fc { inputs, .. } => inputs,
            BlockKind::Conv {
                in_channels,
                height,
                width,
                ..
            } => in_channels * height * width,
        }
    }

    /// Per-sample output dims: `[outputs]` or `[C_out, H_out, W_out]`.
    pub fn output_dims(&self) -> Vec<usize> {
        match self.kind {
            BlockKind::Fc { outputs, .. } => vec![outputs],
            BlockKind::Conv { out_channels, .. } => {
                let g = self.geometry().expect("validated conv config");
                vec![out_channels, g.out_h, g.out_w]
            }
        }
    }

    /// Output length `l_i` (flattened, channel-major for conv).
    pub fn output_len(&self) -> usize {
        self.output_dims().iter().product()
    }

    /// Rows of `W`: output units, or filters for conv.
    pub fn units(&self) -> usize {
        match self.kind {
            BlockKind::Fc { outputs, .. } => outputs,
            BlockKind::Conv { out_channels, .. } => out_channels,
        }
    }

    /// Columns of `W`.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            BlockKind::Fc { inputs, .. } => inputs,
            BlockKind::Conv {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
        }
    }
}

/// Standalone inverted dropout, used on the network input.
#[derive(Clone, Debug)]
pub struct Dropout<T> {
    rate: f64,
    mask: Option<Tensor<T>>,
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else
/// `1 / (1 - rate)`.
pub fn dropout_mask<T: Scalar>(rng: &mut Prng, shape: &[usize], rate: f64) -> Result<Tensor<T>> {
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let mut mask = Tensor::zeros(shape)?;
    for v in mask.data_mut() {
        if !rng.bernoulli(rate) {
            *v = keep;
        }
    }
    Ok(mask)
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Param(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        Ok(Self { rate, mask: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mask(&self) -> Option<&Tensor<T>> {
        self.mask.as_ref()
    }

    pub fn forward(&mut self, mut x: Tensor<T>, mode: Mode, rng: Option<&mut Prng>) -> Result<Tensor<T>> {
        if self.rate == 0.0 || !mode.is_training() {
            if mode.keeps_caches() {
                self.mask = None;
            }
            return Ok(x);
        }
        if mode == Mode::Train {
            let rng = rng.ok_or_else(|| Error::Param("dropout in training mode needs an rng".into()))?;
            self.mask = Some(dropout_mask(rng, x.shape(), self.rate)?);
        }
        let mask = self
            .mask
            .as_ref()
            .filter(|m| m.shape() == x.shape())
            .ok_or_else(|| Error::State("replay needs the dropout mask of a previous pass".into()))?;
        x.mul_assign_elem(mask)?;
        Ok(x)
    }

    /// Applies the last mask; `grad` may be flattened per sample.
    pub fn backward(&self, grad: Tensor<T>) -> Result<Tensor<T>> {
        match &self.mask {
            Some(mask) => {
                let mut grad = grad.reshape(mask.shape())?;
                grad.mul_assign_elem(mask)?;
                Ok(grad)
            }
            None => Ok(grad),
        }
    }
}

/// One stage of a network.
// A network holds a handful of layers, so boxing the large variant buys nothing.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug)]
pub enum Layer<T> {
    Block(Block<T>),
    Dropout(Dropout<T>),
    MaxPool(MaxPool2),
}

impl<T: Scalar> Layer<T> {
    pub fn as_block(&self) -> Option<&Block<T>> {
        match self {
            Layer::Block(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_block_mut(&mut self) -> Option<&mut Block<T>> {
        match self {
            Layer::Block(b) => Some(b),
            _ => None,
        }
    }

    pub fn forward(&mut self, x: Tensor<T>, mode: Mode, rng: Option<&mut Prng>) -> Result<Tensor<T>> {
        match self {
            Layer::Block(b) => b.forward(&x, mode, rng),
            Layer::Dropout(d) => d.forward(x, mode, rng),
            Layer::MaxPool(p) => p.forward(&x, mode),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_sizes() {
        let fc = BlockConfig::fc(784, 256);
        assert_eq!(fc.output_len(), 256);
        assert_eq!(fc.fan_in(), 784);
        let conv = BlockConfig::conv(3, 32, (32, 32), 5, 1, 2);
        conv.validate().unwrap();
        assert_eq!(conv.output_dims(), vec![32, 32, 32]);
        assert_eq!(conv.fan_in(), 75);
        assert!(BlockConfig::conv(3, 8, (5, 5), 3, 2, 1).validate().is_ok());
        assert!(BlockConfig::conv(3, 8, (6, 6), 3, 2, 0).validate().is_err());
        assert!(BlockConfig::fc(4, 4).with_dropout(1.0).validate().is_err());
        assert!(BlockConfig::fc(4, 4).with_dropout(-0.1).validate().is_err());
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let mut rng = Prng::new(21);
        let x = Tensor::new(vec![1, 4], vec![0.5f64, -1.0, 2.0, 0.25]).unwrap();
        let mut layer = Dropout::new(0.3).unwrap();
        let draws = 10_000;
        let mut acc = [0.0; 4];
        for _ in 0..draws {
            let y = layer.forward(x.clone(), Mode::Train, Some(&mut rng)).unwrap();
            for (a, v) in acc.iter_mut().zip(y.data()) {
                *a += v / draws as f64;
            }
            let keep = 1.0 / 0.7;
            assert!(layer.mask().unwrap().data().iter().all(|&m| m == 0.0 || m == keep));
        }
        for (a, v) in acc.iter().zip(x.data()) {
            assert!((a - v).abs() <= 0.02 * v.abs(), "{a} vs {v}");
        }
    }

    #[test]
    fn dropout_is_identity_in_eval_and_replays_its_mask() {
        let mut rng = Prng::new(2);
        let x = Tensor::full(&[2, 8], 1.0f32).unwrap();
        let mut layer = Dropout::new(0.5).unwrap();
        assert_eq!(layer.forward(x.clone(), Mode::Eval, None).unwrap(), x);
        assert!(layer.forward(x.clone(), Mode::Replay, None).is_err());
        let a = layer.forward(x.clone(), Mode::Train, Some(&mut rng)).unwrap();
        let b = layer.forward(x.clone(), Mode::Replay, None).unwrap();
        assert_eq!(a, b);
        assert!(layer.forward(x, Mode::Train, None).is_err());
    }
}
