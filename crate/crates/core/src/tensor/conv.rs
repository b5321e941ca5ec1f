//! Lowering of 2-D convolution to matrix products.
//!
//! `im2col` turns a `C x H x W` map into a `(C*kh*kw) x (H_out*W_out)` matrix
//! whose columns are receptive-field patches. Rows are ordered channel-major,
//! then kernel row, then kernel column, which is also the flattening order of
//! a `C_out x C x kh x kw` filter bank, so `filters * cols` is the convolution.

use super::{Scalar, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

fn out_extent(size: usize, kernel: usize, stride: usize, pad: usize, axis: &str) -> Result<usize> {
    let padded = size + 2 * pad;
    if kernel == 0 || stride == 0 || kernel > padded || !(padded - kernel).is_multiple_of(stride) {
        return Err(Error::Shape(format!(
            "{axis}: ({size} + 2*{pad} - {kernel}) / {stride} + 1 is not a positive integer"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

impl ConvGeometry {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape("empty input map".into()));
        }
        let out_h = out_extent(height, kernel.0, stride, pad, "height")?;
        let out_w = out_extent(width, kernel.1, stride, pad, "width")?;
        Ok(Self {
            channels,
            height,
            width,
            kernel_h: kernel.0,
            kernel_w: kernel.1,
            stride,
            pad,
            out_h,
            out_w,
        })
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Rows of the column matrix.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    /// Columns of the column matrix.
    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    #[inline]
    fn source(&self, oy: usize, ox: usize, ki: usize, kj: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ki).checked_sub(self.pad)?;
        let x = (ox * self.stride + kj).checked_sub(self.pad)?;
        (y < self.height && x < self.width).then_some((y, x))
    }
}

/// Writes the column matrix of one `C x H x W` map into `cols`.
pub fn im2col_into<T: Scalar>(input: &[T], g: &ConvGeometry, cols: &mut [T]) {
    assert_eq!(input.len(), g.input_len());
    assert_eq!(cols.len(), g.patch_len() * g.positions());
    let positions = g.positions();
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let out = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        out[oy * g.out_w + ox] = match g.source(oy, ox, ki, kj) {
                            Some((y, x)) => plane[y * g.width + x],
                            None => T::zero(),
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_into`]: scatters columns back, summing overlaps.
/// `out` is overwritten.
pub fn col2im_into<T: Scalar>(cols: &[T], g: &ConvGeometry, out: &mut [T]) {
    assert_eq!(out.len(), g.input_len());
    assert_eq!(cols.len(), g.patch_len() * g.positions());
    out.iter_mut().for_each(|v| *v = T::zero());
    let positions = g.positions();
    for c in 0..g.channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &cols[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        if let Some((y, x)) = g.source(oy, ox, ki, kj) {
                            plane[y * g.width + x] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Column matrix of a `C x H x W` tensor.
pub fn im2col<T: Scalar>(
    input: &Tensor<T>,
    kernel: (usize, usize),
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, ConvGeometry)> {
    let &[c, h, w] = input.shape() else {
        return Err(Error::Shape(format!(
            "im2col expects C x H x W, got {:?}",
            input.shape()
        )));
    };
    let g = ConvGeometry::new(c, h, w, kernel, stride, pad)?;
    let mut cols = Tensor::zeros(&[g.patch_len(), g.positions()])?;
    im2col_into(input.data(), &g, cols.data_mut());
    Ok((cols, g))
}

/// Folds a column matrix back into a `C x H x W` tensor.
pub fn col2im<T: Scalar>(cols: &Tensor<T>, g: &ConvGeometry) -> Result<Tensor<T>> {
    if cols.shape() != [g.patch_len(), g.positions()] {
        return Err(Error::Shape(format!(
            "columns {:?} do not match geometry {}x{}",
            cols.shape(),
            g.patch_len(),
            g.positions()
        )));
    }
    let mut out = Tensor::zeros(&[g.channels, g.height, g.width])?;
    col2im_into(cols.data(), g, out.data_mut());
    Ok(out)
}
