//! Filter visualization by activation maximization, written as PPM images.

use std::path::Path;

use crate::layers::Mode;
use crate::tensor::{Prng, Scalar, Tensor};
use crate::training::Network;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FilterVizOptions {
    /// 1-based block index; must be a convolution.
    pub layer: usize,
    pub filters: Vec<usize>,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct FilterImage {
    pub filter: usize,
    /// Optimized input, `C x H x W`, unit norm.
    pub input: Tensor<f64>,
    /// Mean activation of the filter before each step and after the last.
    pub activations: Vec<f64>,
}

/// Gradient ascent on a random unit-norm input to maximize the mean
/// activation of each chosen filter, renormalizing the input to unit norm
/// after every step. No other regularization.
pub fn visualize_filters<T: Scalar>(net: &mut Network<T>, opts: &FilterVizOptions) -> Result<Vec<FilterImage>> {
    if opts.layer == 0 || opts.layer > net.depth() {
        return Err(Error::Param(format!("layer {} outside 1..={}", opts.layer, net.depth())));
    }
    let k = opts.layer - 1;
    let cfg = net.block(k).config().clone();
    if !cfg.is_conv() {
        return Err(Error::Param(format!("layer {} is not convolutional", opts.layer)));
    }
    let li = net.layer_of_block(k);
    let channels = cfg.units();
    let positions = cfg.output_len() / channels;
    let input_len: usize = net.input_dims().iter().product();
    let mut out = Vec::with_capacity(opts.filters.len());
    for &f in &opts.filters {
        if f >= channels {
            return Err(Error::Param(format!("filter {f} out of range for {channels} filters")));
        }
        let mut x = Tensor::<T>::gaussian(&mut Prng::new(opts.seed).fork(f as u64), &[1, input_len], T::zero(), T::one())?;
        let n = x.norm();
        x.scale(T::one() / n);
        let mut grad_out = Tensor::zeros(&[1, cfg.output_len()])?;
        grad_out.data_mut()[f * positions..(f + 1) * positions].fill(T::one() / T::from_usize(positions).unwrap());
        let mut activations = Vec::with_capacity(opts.steps + 1);
        for step in 0..=opts.steps {
            let y = net.forward_to(&x, li, Mode::EvalTraced)?;
            let act = y.data()[f * positions..(f + 1) * positions]
                .iter()
                .map(|v| v.to_f64_lossy())
                .sum::<f64>()
                / positions as f64;
            activations.push(act);
            if step == opts.steps {
                break;
            }
            let g = net.input_gradient(li, &grad_out)?.flatten_rows();
            if g.data().iter().all(|v| *v == T::zero()) {
                continue;
            }
            x.axpy(T::from_f64_lossy(opts.lr), &g)?;
            let n = x.norm();
            if n > T::zero() {
                x.scale(T::one() / n);
            }
        }
        let mut dims = net.input_dims().to_vec();
        if dims.len() == 1 {
            dims = vec![1, 1, dims[0]];
        }
        out.push(FilterImage {
            filter: f,
            input: x.cast::<f64>().reshape(&dims)?,
            activations,
        });
    }
    Ok(out)
}

/// 8-bit RGB pixels of a `C x H x W` image, min-max scaled. One channel is
/// shown as gray; otherwise the first three channels are used.
pub fn to_rgb(image: &Tensor<f64>) -> Result<(usize, usize, Vec<u8>)> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::Shape(format!("image must be C x H x W, got {:?}", image.shape())));
    };
    let (lo, hi) = image
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let px = |ch: usize, i: usize| (((image.data()[ch * h * w + i] - lo) / span) * 255.0).round() as u8;
    let mut rgb = Vec::with_capacity(h * w * 3);
    for i in 0..h * w {
        for ch in 0..3 {
            rgb.push(px(if c >= 3 { ch } else { 0 }, i));
        }
    }
    Ok((w, h, rgb))
}

/// Binary PPM (`P6`, maxval 255).
pub fn ppm_bytes(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// All images side by side with a one-pixel black gap.
pub fn grid(images: &[FilterImage]) -> Result<(usize, usize, Vec<u8>)> {
    let tiles: Vec<_> = images.iter().map(|i| to_rgb(&i.input)).collect::<Result<_>>()?;
    let Some(&(tw, th, _)) = tiles.first() else {
        return Err(Error::Empty("no images".into()));
    };
    let width = tiles.len() * (tw + 1) - 1;
    let mut rgb = vec![0u8; width * th * 3];
    for (t, (_, _, px)) in tiles.iter().enumerate() {
        for y in 0..th {
            let dst = (y * width + t * (tw + 1)) * 3;
            rgb[dst..dst + tw * 3].copy_from_slice(&px[y * tw * 3..(y + 1) * tw * 3]);
        }
    }
    Ok((width, th, rgb))
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    std::fs::write(path, ppm_bytes(width, height, rgb)).map_err(|e| Error::io(path, e))
}
