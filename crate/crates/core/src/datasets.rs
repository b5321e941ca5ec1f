//! MNIST (IDX) and CIFAR (binary) loaders, standardization, batching and
//! augmentation.
//!
//! Loaded images are `n x C x H x W` with pixels scaled to `[0, 1]`.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::tensor::{Prng, Tensor};
use crate::{Error, Result};

/// Environment variable naming the directory that holds `mnist/` and
/// `cifar-10-batches-bin/`.
pub const DATA_ROOT_ENV: &str = "DFA_DATA_ROOT";

/// `$DFA_DATA_ROOT`, or `./data` when unset.
pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

#[derive(Clone, Debug)]
pub struct LabeledDataset {
    images: Tensor<f32>,
    labels: Vec<usize>,
    classes: usize,
    /// SHA-256 over the source files, in load order.
    digest: String,
}

impl LabeledDataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.shape().len() != 4 || images.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} labels for images {:?}",
                labels.len(),
                images.shape()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Param(format!("label {l} out of range for {classes} classes")));
        }
        images.ensure_finite("images")?;
        Ok(Self {
            images,
            labels,
            classes,
            digest: String::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample `[C, H, W]`.
    pub fn sample_dims(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// Images and labels at `indices`, in that order.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let x = self.images.gather_rows(indices)?;
        Ok((x, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    /// The first `n` samples (all of them if `n` is larger).
    pub fn head(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Empty("empty subset".into()));
        }
        let (images, labels) = self.batch(indices)?;
        Ok(Self {
            images,
            labels,
            classes: self.classes,
            digest: self.digest.clone(),
        })
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn idx_header(bytes: &[u8], path: &Path, magic: u32, dims: usize) -> Result<Vec<usize>> {
    let need = 4 + 4 * dims;
    if bytes.len() < need {
        return Err(Error::format(path, "truncated IDX header"));
    }
    let word = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().unwrap());
    if word(0) != magic {
        return Err(Error::format(
            path,
            format!("magic {:#010x}, expected {magic:#010x}", word(0)),
        ));
    }
    let sizes: Vec<usize> = (0..dims).map(|d| word(4 + 4 * d) as usize).collect();
    let body: usize = sizes.iter().product();
    if bytes.len() != need + body {
        return Err(Error::format(
            path,
            format!("expected {} bytes, found {}", need + body, bytes.len()),
        ));
    }
    Ok(sizes)
}

/// Parses an IDX image file (magic `0x00000803`) and label file (magic
/// `0x00000801`). Pixels are divided by 255.
pub fn load_mnist_idx(image_path: &Path, label_path: &Path) -> Result<LabeledDataset> {
    let img = read(image_path)?;
    let lab = read(label_path)?;
    let dims = idx_header(&img, image_path, 0x0803, 3)?;
    let [n] = idx_header(&lab, label_path, 0x0801, 1)?[..] else { unreachable!() };
    if n != dims[0] {
        return Err(Error::format(
            label_path,
            format!("{n} labels for {} images", dims[0]),
        ));
    }
    let pixels = img[16..].iter().map(|&p| p as f32 / 255.0).collect();
    let images = Tensor::new(vec![n, 1, dims[1], dims[2]], pixels)?;
    let labels: Vec<usize> = lab[8..].iter().map(|&l| l as usize).collect();
    let mut ds = LabeledDataset::new(images, labels, 10)
        .map_err(|e| Error::format(label_path, e.to_string()))?;
    let mut h = Sha256::new();
    h.update(&img);
    h.update(&lab);
    ds.digest = hex(&h.finalize());
    Ok(ds)
}

/// Reads CIFAR binary batches: 3073-byte records for 10 classes (label,
/// then 3072 channel-major pixels), 3074-byte records for 100 classes
/// (coarse label, fine label, pixels; the fine label is used).
pub fn load_cifar_binary(paths: &[PathBuf], classes: usize) -> Result<LabeledDataset> {
    let header = match classes {
        10 => 1,
        100 => 2,
        _ => return Err(Error::Param(format!("CIFAR has 10 or 100 classes, not {classes}"))),
    };
    const PIXELS: usize = 3 * 32 * 32;
    let record = header + PIXELS;
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut h = Sha256::new();
    for path in paths {
        let bytes = read(path)?;
        if bytes.is_empty() || bytes.len() % record != 0 {
            return Err(Error::format(
                path,
                format!("{} bytes is not a multiple of the {record}-byte record", bytes.len()),
            ));
        }
        h.update(&bytes);
        for rec in bytes.chunks_exact(record) {
            labels.push(rec[header - 1] as usize);
            pixels.extend(rec[header..].iter().map(|&p| p as f32 / 255.0));
        }
    }
    if labels.is_empty() {
        return Err(Error::Empty("no CIFAR files given".into()));
    }
    let n = labels.len();
    let mut ds = LabeledDataset::new(Tensor::new(vec![n, 3, 32, 32], pixels)?, labels, classes)?;
    ds.digest = hex(&h.finalize());
    Ok(ds)
}

/// MNIST from `root/mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte`.
pub fn mnist(root: &Path, train: bool) -> Result<LabeledDataset> {
    let prefix = if train { "train" } else { "t10k" };
    let dir = root.join("mnist");
    load_mnist_idx(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

/// CIFAR-10 from `root/cifar-10-batches-bin/`.
pub fn cifar10(root: &Path, train: bool) -> Result<LabeledDataset> {
    let dir = root.join("cifar-10-batches-bin");
    let paths: Vec<PathBuf> = if train {
        (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect()
    } else {
        vec![dir.join("test_batch.bin")]
    };
    load_cifar_binary(&paths, 10)
}

/// Per-channel `(x - mean) / std`, fitted on a training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Standardization {
    pub fn fit(ds: &LabeledDataset) -> Self {
        let c = ds.sample_dims()[0];
        let spatial = ds.images.row_len() / c;
        let count = (ds.len() * spatial) as f64;
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for n in 0..ds.len() {
            for (ch, plane) in ds.images.row(n).chunks(spatial).enumerate() {
                for &v in plane {
                    sum[ch] += v as f64;
                    sq[ch] += (v as f64) * (v as f64);
                }
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| ((s / count - m * m).max(0.0).sqrt().max(1e-8)) as f32)
            .collect();
        Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        }
    }

    pub fn apply(&self, ds: &mut LabeledDataset) -> Result<()> {
        let c = ds.sample_dims()[0];
        if c != self.mean.len() {
            return Err(Error::Shape(format!(
                "standardization for {} channels applied to {c}",
                self.mean.len()
            )));
        }
        let spatial = ds.images.row_len() / c;
        for n in 0..ds.len() {
            for (ch, plane) in ds.images.row_mut(n).chunks_mut(spatial).enumerate() {
                for v in plane {
                    *v = (*v - self.mean[ch]) / self.std[ch];
                }
            }
        }
        Ok(())
    }
}

/// Training-time augmentation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AugmentSpec {
    /// Zero-pad by `pad` on every side, then take a random `crop x crop`
    /// window.
    pub pad_crop: Option<(usize, usize)>,
    /// Mirror each sample left-right with probability one half.
    pub flip: bool,
}

impl AugmentSpec {
    pub fn is_identity(&self) -> bool {
        self.pad_crop.is_none() && !self.flip
    }
}

/// Mirrors the samples of an `n x C x H x W` batch whose `mask` entry is set.
pub fn flip_horizontal(batch: &Tensor<f32>, mask: &[bool]) -> Result<Tensor<f32>> {
    let &[n, _, _, w] = batch.shape() else {
        return Err(Error::Shape(format!("flip needs NCHW, got {:?}", batch.shape())));
    };
    if mask.len() != n {
        return Err(Error::Shape(format!("{} flip flags for {n} samples", mask.len())));
    }
    let mut out = batch.clone();
    for (i, _) in mask.iter().enumerate().filter(|(_, &f)| f) {
        for line in out.row_mut(i).chunks_mut(w) {
            line.reverse();
        }
    }
    Ok(out)
}

/// Pads each sample with zeros and cuts the window at `offsets[i]`
/// (`(dy, dx)` into the padded image).
pub fn pad_crop(batch: &Tensor<f32>, pad: usize, crop: usize, offsets: &[(usize, usize)]) -> Result<Tensor<f32>> {
    let &[n, c, h, w] = batch.shape() else {
        return Err(Error::Shape(format!("crop needs NCHW, got {:?}", batch.shape())));
    };
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    if crop == 0 || crop > ph || crop > pw {
        return Err(Error::Param(format!("crop {crop} does not fit padded {ph}x{pw}")));
    }
    if offsets.len() != n || offsets.iter().any(|&(dy, dx)| dy + crop > ph || dx + crop > pw) {
        return Err(Error::Param("crop offsets out of range".into()));
    }
    let mut out = Tensor::zeros(&[n, c, crop, crop])?;
    for (i, &(dy, dx)) in offsets.iter().enumerate() {
        let src = batch.row(i);
        let dst = out.row_mut(i);
        for ch in 0..c {
            for y in 0..crop {
                let sy = (y + dy) as isize - pad as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..crop {
                    let sx = (x + dx) as isize - pad as isize;
                    if sx >= 0 && sx < w as isize {
                        dst[(ch * crop + y) * crop + x] = src[(ch * h + sy as usize) * w + sx as usize];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Applies `spec` with per-sample random draws from `rng`.
pub fn augment(batch: &Tensor<f32>, rng: &mut Prng, spec: &AugmentSpec) -> Result<Tensor<f32>> {
    let mut out = batch.clone();
    let n = batch.rows();
    if let Some((pad, crop)) = spec.pad_crop {
        let &[_, _, h, w] = batch.shape() else {
            return Err(Error::Shape(format!("crop needs NCHW, got {:?}", batch.shape())));
        };
        if crop == 0 || crop > h + 2 * pad || crop > w + 2 * pad {
            return Err(Error::Param(format!("crop {crop} larger than padded image")));
        }
        let offsets: Vec<(usize, usize)> = (0..n)
            .map(|_| {
                let dy = rng.below((h + 2 * pad - crop + 1) as u64) as usize;
                let dx = rng.below((w + 2 * pad - crop + 1) as u64) as usize;
                (dy, dx)
            })
            .collect();
        out = pad_crop(&out, pad, crop, &offsets)?;
    }
    if spec.flip {
        let mask: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.5)).collect();
        out = flip_horizontal(&out, &mask)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch() -> Tensor<f32> {
        Tensor::new(vec![2, 1, 2, 3], (0..12).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn flip_is_an_involution() {
        let b = batch();
        let once = flip_horizontal(&b, &[true, false]).unwrap();
        assert_eq!(&once.data()[..6], &[2.0, 1.0, 0.0, 5.0, 4.0, 3.0]);
        assert_eq!(&once.data()[6..], &b.data()[6..]);
        assert_eq!(flip_horizontal(&once, &[true, false]).unwrap(), b);
    }

    #[test]
    fn zero_pad_full_crop_is_identity() {
        let b = Tensor::new(vec![1, 1, 3, 3], (0..9).map(|v| v as f32).collect()).unwrap();
        assert_eq!(pad_crop(&b, 0, 3, &[(0, 0)]).unwrap(), b);
        let spec = AugmentSpec {
            pad_crop: Some((0, 3)),
            flip: false,
        };
        assert_eq!(augment(&b, &mut Prng::new(1), &spec).unwrap(), b);
        let shifted = pad_crop(&b, 1, 3, &[(0, 0)]).unwrap();
        assert_eq!(shifted.data(), &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 3.0, 4.0]);
        let too_big = AugmentSpec {
            pad_crop: Some((1, 6)),
            flip: false,
        };
        assert!(augment(&b, &mut Prng::new(1), &too_big).is_err());
    }

    #[test]
    fn flips_about_half_the_time() {
        let b = Tensor::new(vec![1, 1, 1, 2], vec![0.0f32, 1.0]).unwrap();
        let spec = AugmentSpec {
            pad_crop: None,
            flip: true,
        };
        let mut rng = Prng::new(77);
        let draws = 10_000;
        let flipped = (0..draws)
            .filter(|_| augment(&b, &mut rng, &spec).unwrap().data()[0] == 1.0)
            .count();
        assert!((flipped as f64 / draws as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn standardization_zero_mean_unit_std() {
        let images = Tensor::new(
            vec![2, 2, 1, 2],
            vec![0.0, 1.0, 0.5, 0.5, 1.0, 0.0, 0.5, 0.7],
        )
        .unwrap();
        let mut ds = LabeledDataset::new(images, vec![0, 1], 2).unwrap();
        let s = Standardization::fit(&ds);
        assert!((s.mean[0] - 0.5).abs() < 1e-7 && (s.std[0] - 0.5).abs() < 1e-7);
        s.apply(&mut ds).unwrap();
        let refit = Standardization::fit(&ds);
        assert!(refit.mean.iter().all(|m| m.abs() < 1e-6));
        assert!((refit.std[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn dataset_validation_and_subsets() {
        assert!(LabeledDataset::new(batch(), vec![0], 2).is_err());
        assert!(LabeledDataset::new(batch(), vec![0, 2], 2).is_err());
        let ds = LabeledDataset::new(batch(), vec![1, 0], 2).unwrap();
        let (x, y) = ds.batch(&[1, 0]).unwrap();
        assert_eq!(y, vec![0, 1]);
        assert_eq!(x.row(0), ds.images().row(1));
        assert_eq!(ds.head(10).unwrap().len(), 2);
        assert!(ds.subset(&[]).is_err());
    }
}
