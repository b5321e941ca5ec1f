use crate::layers::{Activation, Block, BlockConfig, Dropout, Layer, MaxPool2, Mode};
use crate::tensor::{Prng, Scalar, Tensor};
use crate::{Error, Result};

/// Shape-free description of one layer; sizes are inferred from the input.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Fc {
        units: usize,
        activation: Activation,
        dropout: f64,
        batchnorm: bool,
    },
    /// Square kernel.
    Conv {
        channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        activation: Activation,
        dropout: f64,
        batchnorm: bool,
    },
    Dropout(f64),
    /// 2x2, stride 2.
    MaxPool,
}

impl LayerSpec {
    pub fn fc(units: usize, activation: Activation) -> Self {
        LayerSpec::Fc {
            units,
            activation,
            dropout: 0.0,
            batchnorm: false,
        }
    }

    pub fn conv(channels: usize, kernel: usize, stride: usize, pad: usize, activation: Activation) -> Self {
        LayerSpec::Conv {
            channels,
            kernel,
            stride,
            pad,
            activation,
            dropout: 0.0,
            batchnorm: false,
        }
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        match &mut self {
            LayerSpec::Fc { dropout, .. } | LayerSpec::Conv { dropout, .. } => *dropout = p,
            LayerSpec::Dropout(q) => *q = p,
            LayerSpec::MaxPool => {}
        }
        self
    }

    pub fn with_batchnorm(mut self, on: bool) -> Self {
        if let LayerSpec::Fc { batchnorm, .. } | LayerSpec::Conv { batchnorm, .. } = &mut self {
            *batchnorm = on;
        }
        self
    }
}

/// A [`LayerSpec`] with every size filled in.
#[derive(Clone, Debug, PartialEq)]
pub enum ResolvedLayer {
    Block(BlockConfig),
    Dropout(f64),
    MaxPool { input: [usize; 3] },
}

/// Infers every layer's shapes from `input_dims` (`[C, H, W]` or `[n]`)
/// without allocating parameters.
pub fn resolve(input_dims: &[usize], specs: &[LayerSpec]) -> Result<Vec<ResolvedLayer>> {
    if input_dims.is_empty() || input_dims.contains(&0) {
        return Err(Error::Shape(format!("bad input dims {input_dims:?}")));
    }
    let mut dims = input_dims.to_vec();
    let mut out = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let layer = match *spec {
            LayerSpec::Fc {
                units,
                activation,
                dropout,
                batchnorm,
            } => ResolvedLayer::Block(
                BlockConfig::fc(dims.iter().product(), units)
                    .with_activation(activation)
                    .with_dropout(dropout)
                    .with_batchnorm(batchnorm),
            ),
            LayerSpec::Conv {
                channels,
                kernel,
                stride,
                pad,
                activation,
                dropout,
                batchnorm,
            } => {
                let &[c, h, w] = &dims[..] else {
                    return Err(Error::Shape(format!(
                        "layer {}: convolution needs a C x H x W input, got {dims:?}",
                        i + 1
                    )));
                };
                ResolvedLayer::Block(
                    BlockConfig::conv(c, channels, (h, w), kernel, stride, pad)
                        .with_activation(activation)
                        .with_dropout(dropout)
                        .with_batchnorm(batchnorm),
                )
            }
            LayerSpec::Dropout(p) => ResolvedLayer::Dropout(p),
            LayerSpec::MaxPool => {
                let &[c, h, w] = &dims[..] else {
                    return Err(Error::Shape(format!(
                        "layer {}: pooling needs a C x H x W input, got {dims:?}",
                        i + 1
                    )));
                };
                if h < 2 || w < 2 {
                    return Err(Error::Shape(format!("layer {}: map {h}x{w} too small to pool", i + 1)));
                }
                ResolvedLayer::MaxPool { input: [c, h, w] }
            }
        };
        match &layer {
            ResolvedLayer::Block(cfg) => {
                cfg.validate()
                    .map_err(|e| Error::Shape(format!("layer {}: {e}", i + 1)))?;
                dims = cfg.output_dims();
            }
            ResolvedLayer::Dropout(p) => {
                Dropout::<f32>::new(*p)?;
            }
            ResolvedLayer::MaxPool { input: [c, h, w] } => dims = MaxPool2::output_dims(*c, *h, *w).to_vec(),
        }
        out.push(layer);
    }
    Ok(out)
}

/// Output sizes `l_i` of every block except the classifier.
pub fn hidden_sizes(layers: &[ResolvedLayer]) -> Vec<usize> {
    let mut sizes: Vec<usize> = layers
        .iter()
        .filter_map(|l| match l {
            ResolvedLayer::Block(cfg) => Some(cfg.output_len()),
            _ => None,
        })
        .collect();
    sizes.pop();
    sizes
}

/// An ordered stack of layers ending in a fully connected classifier that
/// produces logits.
#[derive(Clone, Debug)]
pub struct Network<T = f32> {
    layers: Vec<Layer<T>>,
    input_dims: Vec<usize>,
    classes: usize,
    /// Indices into `layers` of the parameterized blocks, in order.
    block_at: Vec<usize>,
}

impl<T: Scalar> Network<T> {
    /// He-initialized network. Blocks draw their weights from `rng` in order.
    pub fn build(input_dims: &[usize], specs: &[LayerSpec], rng: &mut Prng) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        for layer in resolve(input_dims, specs)? {
            layers.push(match layer {
                ResolvedLayer::Block(cfg) => Layer::Block(Block::new(cfg, rng)?),
                ResolvedLayer::Dropout(p) => Layer::Dropout(Dropout::new(p)?),
                ResolvedLayer::MaxPool { .. } => Layer::MaxPool(MaxPool2::new()),
            });
        }
        Self::from_layers(input_dims, layers)
    }

    /// Assembles pre-built layers; the last must be a fully connected block
    /// with identity activation and no dropout.
    pub fn from_layers(input_dims: &[usize], layers: Vec<Layer<T>>) -> Result<Self> {
        let block_at: Vec<usize> = layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.as_block().map(|_| i))
            .collect();
        let last = match layers.last() {
            Some(Layer::Block(b)) => b,
            _ => return Err(Error::Shape("network must end with a fully connected block".into())),
        };
        let cfg = last.config();
        if cfg.is_conv() || cfg.activation != Activation::Identity || cfg.dropout > 0.0 {
            return Err(Error::Shape(
                "the output block must be fully connected, identity-activated and dropout-free".into(),
            ));
        }
        let classes = cfg.units();
        let mut dims = input_dims.to_vec();
        for l in &layers {
            match l {
                Layer::Block(b) => {
                    let len: usize = dims.iter().product();
                    if b.config().input_len() != len {
                        return Err(Error::Shape(format!(
                            "block expects {} inputs but receives {len}",
                            b.config().input_len()
                        )));
                    }
                    dims = b.config().output_dims();
                }
                Layer::MaxPool(_) => {
                    let &[c, h, w] = &dims[..] else {
                        return Err(Error::Shape(format!("pooling needs a C x H x W input, got {dims:?}")));
                    };
                    dims = MaxPool2::output_dims(c, h, w).to_vec();
                }
                Layer::Dropout(_) => {}
            }
        }
        Ok(Self {
            layers,
            input_dims: input_dims.to_vec(),
            classes,
            block_at,
        })
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Number of parameterized blocks `N`.
    pub fn depth(&self) -> usize {
        self.block_at.len()
    }

    /// Block `k` (0-based, the classifier is `depth() - 1`).
    pub fn block(&self, k: usize) -> &Block<T> {
        self.layers[self.block_at[k]].as_block().expect("block index")
    }

    pub fn block_mut(&mut self, k: usize) -> &mut Block<T> {
        let i = self.block_at[k];
        self.layers[i].as_block_mut().expect("block index")
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block<T>> {
        self.block_at.iter().map(|&i| self.layers[i].as_block().unwrap())
    }

    /// `l_i` for every hidden block; sizes the unified feedback matrix.
    pub fn hidden_sizes(&self) -> Vec<usize> {
        let n = self.depth();
        self.blocks().take(n - 1).map(Block::output_len).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks()
            .map(|b| {
                let bn = b.batchnorm().map_or(0, |bn| 2 * bn.channels());
                b.weight().len() + b.bias().len() + bn
            })
            .sum()
    }

    /// Logits for a batch whose rows are flattened inputs.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, mut rng: Option<&mut Prng>) -> Result<Tensor<T>> {
        let per_sample: usize = self.input_dims.iter().product();
        if x.row_len() != per_sample {
            return Err(Error::Shape(format!(
                "network expects {:?} per sample, got {:?}",
                self.input_dims,
                x.shape()
            )));
        }
        let mut shape = vec![x.rows()];
        shape.extend(&self.input_dims);
        let mut h = x.clone().reshape(&shape)?;
        for layer in &mut self.layers {
            h = layer.forward(h, mode, rng.as_deref_mut())?;
        }
        h.ensure_finite("logits")?;
        Ok(h)
    }

    /// Runs layers `0..=last` only and returns that layer's output.
    pub fn forward_to(&mut self, x: &Tensor<T>, last: usize, mode: Mode) -> Result<Tensor<T>> {
        if last >= self.layers.len() {
            return Err(Error::Param(format!("layer {last} out of range")));
        }
        let mut shape = vec![x.rows()];
        shape.extend(&self.input_dims);
        let mut h = x.clone().reshape(&shape)?;
        for layer in &mut self.layers[..=last] {
            h = layer.forward(h, mode, None)?;
        }
        Ok(h)
    }

    /// Gradient with respect to the network input of a per-sample gradient
    /// `grad` at the output of layer `last`, chained through cached layers.
    pub fn input_gradient(&self, last: usize, grad: &Tensor<T>) -> Result<Tensor<T>> {
        if last >= self.layers.len() {
            return Err(Error::Param(format!("layer {last} out of range")));
        }
        let mut g = grad.clone();
        for layer in self.layers[..=last].iter().rev() {
            g = match layer {
                Layer::Block(b) => b.backward_local(&g, true)?.input.expect("input gradient requested"),
                Layer::Dropout(d) => d.backward(g)?,
                Layer::MaxPool(p) => p.backward(&g)?,
            };
        }
        let mut shape = vec![g.rows()];
        shape.extend(&self.input_dims);
        g.reshape(&shape)
    }

    /// Position in [`Network::layers`] of block `k`.
    pub fn layer_of_block(&self, k: usize) -> usize {
        self.block_at[k]
    }

    pub fn clear_caches(&mut self) {
        for layer in &mut self.layers {
            if let Layer::Block(b) = layer {
                b.clear_cache();
            }
        }
    }

    pub(crate) fn block_positions(&self) -> &[usize] {
        &self.block_at
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cnn_specs() -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv(4, 3, 1, 1, Activation::Tanh),
            LayerSpec::MaxPool,
            LayerSpec::conv(6, 3, 1, 1, Activation::Tanh).with_batchnorm(true),
            LayerSpec::MaxPool,
            LayerSpec::Dropout(0.2),
            LayerSpec::fc(5, Activation::Identity),
        ]
    }

    #[test]
    fn resolves_shapes_through_conv_pool_and_fc() {
        let r = resolve(&[3, 8, 8], &cnn_specs()).unwrap();
        let ResolvedLayer::Block(first) = &r[0] else { panic!() };
        assert_eq!(first.output_dims(), vec![4, 8, 8]);
        assert_eq!(r[1], ResolvedLayer::MaxPool { input: [4, 8, 8] });
        let ResolvedLayer::Block(last) = &r[5] else { panic!() };
        assert_eq!(last.fan_in(), 6 * 2 * 2);
        assert_eq!(hidden_sizes(&r), vec![256, 96]);
    }

    #[test]
    fn rejects_bad_stacks() {
        assert!(resolve(&[784], &[LayerSpec::conv(4, 3, 1, 1, Activation::Tanh)]).is_err());
        assert!(resolve(&[784], &[LayerSpec::MaxPool]).is_err());
        let mut rng = Prng::new(0);
        let no_classifier = [LayerSpec::fc(10, Activation::Tanh)];
        assert!(Network::<f32>::build(&[4], &no_classifier, &mut rng).is_err());
        let ends_in_pool = [LayerSpec::conv(2, 3, 1, 1, Activation::Tanh), LayerSpec::MaxPool];
        assert!(Network::<f32>::build(&[1, 4, 4], &ends_in_pool, &mut rng).is_err());
    }

    #[test]
    fn forward_produces_logits_and_is_seeded() {
        let mut a = Network::<f32>::build(&[3, 8, 8], &cnn_specs(), &mut Prng::new(5)).unwrap();
        let mut b = Network::<f32>::build(&[3, 8, 8], &cnn_specs(), &mut Prng::new(5)).unwrap();
        assert_eq!(a.depth(), 3);
        assert_eq!(a.classes(), 5);
        let x = Tensor::gaussian(&mut Prng::new(1), &[4, 192], 0.0, 1.0).unwrap();
        let ya = a.forward(&x, Mode::Train, Some(&mut Prng::new(2))).unwrap();
        let yb = b.forward(&x, Mode::Train, Some(&mut Prng::new(2))).unwrap();
        assert_eq!(ya.shape(), &[4, 5]);
        assert_eq!(ya, yb);
        assert!(a.forward(&Tensor::zeros(&[4, 10]).unwrap(), Mode::Eval, None).is_err());
    }
}
