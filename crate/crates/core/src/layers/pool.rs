use super::Mode;
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// 2x2 max pooling with stride 2 over `batch x C x H x W` maps.
///
/// Ties go to the first maximum in row-major window order. Odd trailing
/// rows or columns are dropped.
#[derive(Clone, Debug, Default)]
pub struct MaxPool2 {
    /// Per output element, the flat input index of its maximum.
    argmax: Option<Vec<usize>>,
    input_shape: Vec<usize>,
}

impl MaxPool2 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn output_dims(channels: usize, height: usize, width: usize) -> [usize; 3] {
        [channels, height / 2, width / 2]
    }

    pub fn cached_argmax(&self) -> Option<&[usize]> {
        self.argmax.as_deref()
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let &[batch, c, h, w] = x.shape() else {
            return Err(Error::Shape(format!("max pooling needs NCHW input, got {:?}", x.shape())));
        };
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(Error::Shape(format!("map {h}x{w} too small to pool")));
        }
        let mut out = Tensor::zeros(&[batch, c, oh, ow])?;
        let mut argmax = vec![0usize; out.len()];
        let data = x.data();
        for plane in 0..batch * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                    let o = (plane * oh + oy) * ow + ox;
                    out.data_mut()[o] = data[best];
                    argmax[o] = best;
                }
            }
        }
        if mode.keeps_caches() {
            self.argmax = Some(argmax);
            self.input_shape = x.shape().to_vec();
        }
        Ok(out)
    }

    /// Routes each output gradient to the input position that won.
    pub fn backward<T: Scalar>(&self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let argmax = self
            .argmax
            .as_ref()
            .ok_or_else(|| Error::State("pool backward before a caching forward pass".into()))?;
        if grad.len() != argmax.len() {
            return Err(Error::Shape(format!(
                "pool gradient has {} entries, expected {}",
                grad.len(),
                argmax.len()
            )));
        }
        let mut out = Tensor::zeros(&self.input_shape)?;
        for (&g, &i) in grad.data().iter().zip(argmax) {
            out.data_mut()[i] += g;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_window_maxima_and_routes_gradient() {
        let x = Tensor::new(
            vec![1, 1, 4, 4],
            vec![
                1.0, 2.0, 0.0, -1.0, //
                3.0, 0.5, -2.0, -3.0, //
                0.0, 0.0, 5.0, 4.0, //
                0.0, 0.0, 4.0, 5.0,
            ],
        )
        .unwrap();
        let mut pool = MaxPool2::new();
        let y = pool.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[3.0, 0.0, 0.0, 5.0]);
        let g = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let gi = pool.backward(&g).unwrap();
        let mut want = [0.0; 16];
        want[4] = 1.0;
        want[2] = 2.0;
        want[8] = 3.0;
        want[10] = 4.0;
        assert_eq!(gi.data(), &want[..]);
    }

    #[test]
    fn rejects_flat_input_and_missing_cache() {
        let mut pool = MaxPool2::new();
        assert!(pool.forward(&Tensor::<f32>::zeros(&[2, 8]).unwrap(), Mode::Train).is_err());
        assert!(matches!(
            pool.backward(&Tensor::<f32>::zeros(&[1]).unwrap()),
            Err(Error::State(_))
        ));
        pool.forward(&Tensor::<f32>::zeros(&[1, 1, 2, 2]).unwrap(), Mode::Eval).unwrap();
        assert!(pool.cached_argmax().is_none());
    }
}
