//! Raw little-endian parameter dumps.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "DFACKPT\x01"
//! header_len   u32
//! header       header_len bytes of UTF-8 (the run manifest)
//! count        u32      number of tensors
//! per tensor:
//!   name_len   u32
//!   name       name_len bytes of UTF-8
//!   ndim       u32
//!   dims       ndim x u64
//!   data       prod(dims) x f32
//! ```
//!
//! Tensor names are `block{k}.weight`, `block{k}.bias` and, for blocks with
//! batch normalization, `block{k}.bn.{gamma,beta,running_mean,running_var}`,
//! with `k` counted from 0.

use std::path::Path;

use crate::tensor::{Scalar, Tensor};
use crate::training::Network;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DFACKPT\x01";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_network<T: Scalar>(header: &str, net: &Network<T>) -> Self {
        let mut tensors = Vec::new();
        for (k, b) in net.blocks().enumerate() {
            tensors.push((format!("block{k}.weight"), b.weight().cast()));
            tensors.push((format!("block{k}.bias"), b.bias().cast()));
            if let Some(bn) = b.batchnorm() {
                let vec = |v: &[T]| Tensor::new(vec![v.len()], v.iter().map(|x| x.to_f32().unwrap()).collect()).unwrap();
                tensors.push((format!("block{k}.bn.gamma"), bn.gamma().cast()));
                tensors.push((format!("block{k}.bn.beta"), bn.beta().cast()));
                tensors.push((format!("block{k}.bn.running_mean"), vec(bn.running_mean())));
                tensors.push((format!("block{k}.bn.running_var"), vec(bn.running_var())));
            }
        }
        Self {
            header: header.to_string(),
            tensors,
        }
    }

    fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Param(format!("checkpoint has no tensor `{name}`")))
    }

    /// Copies stored parameters into a network of the same architecture.
    pub fn restore<T: Scalar>(&self, net: &mut Network<T>) -> Result<()> {
        let copy = |dst: &mut Tensor<T>, src: &Tensor<f32>, name: &str| -> Result<()> {
            if dst.shape() != src.shape() {
                return Err(Error::Shape(format!(
                    "`{name}`: checkpoint {:?} vs network {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.cast();
            Ok(())
        };
        for k in 0..net.depth() {
            let w = self.get(&format!("block{k}.weight"))?;
            let b = self.get(&format!("block{k}.bias"))?;
            let block = net.block_mut(k);
            copy(block.weight_mut(), w, "weight")?;
            copy(block.bias_mut(), b, "bias")?;
            if let Some(bn) = block.batchnorm_mut() {
                copy(bn.gamma_mut(), self.get(&format!("block{k}.bn.gamma"))?, "gamma")?;
                copy(bn.beta_mut(), self.get(&format!("block{k}.bn.beta"))?, "beta")?;
                let stats = |name: &str| -> Result<Vec<T>> {
                    Ok(self.get(&format!("block{k}.bn.{name}"))?.data().iter().map(|&v| T::from_f32(v).unwrap()).collect())
                };
                let (mean, var) = (stats("running_mean")?, stats("running_var")?);
                if mean.len() != bn.channels() || var.len() != bn.channels() {
                    return Err(Error::Shape("running statistics size mismatch".into()));
                }
                bn.set_running(mean, var);
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.header.len() as u32).to_le_bytes());
        out.extend_from_slice(self.header.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos.checked_add(n).filter(|&e| e <= bytes.len());
            let end = end.ok_or_else(|| Error::format(path, "truncated checkpoint"))?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        if take(8)? != MAGIC {
            return Err(Error::format(path, "not a checkpoint (bad magic)"));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap()) as usize;
        let text = |b: &[u8]| String::from_utf8(b.to_vec()).map_err(|_| Error::format(path, "invalid UTF-8"));
        let hlen = u32_at(take(4)?);
        let header = text(take(hlen)?)?;
        let count = u32_at(take(4)?);
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let nlen = u32_at(take(4)?);
            let name = text(take(nlen)?)?;
            let ndim = u32_at(take(4)?);
            let mut dims = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                dims.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
            }
            let len = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::format(path, "tensor size overflows"))?;
            let data = take(len)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(dims, data).map_err(|e| Error::format(path, format!("`{name}`: {e}")))?;
            tensors.push((name, t));
        }
        if pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes after the last tensor"));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
