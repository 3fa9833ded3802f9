//! `NNPK` network checkpoints.
//!
//! Layout (little-endian): magic `NNPK`, format version `u32`, rng seed
//! `u64`, layer count `u32`, one record per layer (kind tag, activation,
//! trainable flag, kind parameters), then the weight and bias blobs of every
//! parameterized layer in layer order as raw `f32`.

use std::io::{Read, Write};
use std::path::Path;

use super::layer::{Activation, LayerKind, LayerSpec, Padding};
use super::network::{LayerParams, Network};
use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NNPK";
pub const VERSION: u32 = 1;

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    let bytes = encode(net);
    let tmp = path.with_extension("nnpk.tmp");
    std::fs::File::create(&tmp)?.write_all(&bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn encode(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&net.rng_seed().to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    for (i, l) in net.layers().iter().enumerate() {
        let tag = match l.kind {
            LayerKind::Input { .. } => 0u8,
            LayerKind::Dense { .. } => 1,
            LayerKind::Conv2D { .. } => 2,
            LayerKind::MaxPool { .. } => 3,
            LayerKind::Flatten => 4,
            LayerKind::Dropout { .. } => 5,
            LayerKind::SoftmaxOutput { .. } => 6,
        };
        out.push(tag);
        out.push(match l.activation {
            Activation::None => 0,
            Activation::Relu => 1,
        });
        out.push(net.is_trainable(i) as u8);
        match &l.kind {
            LayerKind::Input { shape } => {
                u32le(&mut out, shape.len());
                for &d in shape {
                    u32le(&mut out, d);
                }
            }
            LayerKind::Dense { units } => u32le(&mut out, *units),
            LayerKind::Conv2D {
                filters,
                kernel,
                stride,
                padding,
            } => {
                u32le(&mut out, *filters);
                u32le(&mut out, *kernel);
                u32le(&mut out, *stride);
                out.push(match padding {
                    Padding::Valid => 0,
                    Padding::Same => 1,
                });
            }
            LayerKind::MaxPool { kernel, stride } => {
                u32le(&mut out, *kernel);
                u32le(&mut out, *stride);
            }
            LayerKind::Flatten => {}
            LayerKind::Dropout { rate } => out.extend_from_slice(&rate.to_le_bytes()),
            LayerKind::SoftmaxOutput { classes } => u32le(&mut out, *classes),
        }
    }
    for p in net.all_params().iter().flatten() {
        for v in p.weights.data().iter().chain(p.bias.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("not an NNPK file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let rng_seed = r.u64()?;
    let count = r.usize()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    let mut trainable = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let tag = r.u8()?;
        let activation = match r.u8()? {
            0 => Activation::None,
            1 => Activation::Relu,
            a => return Err(Error::Checkpoint(format!("unknown activation tag {a}"))),
        };
        trainable.push(r.u8()? != 0);
        let kind = match tag {
            0 => {
                let nd = r.usize()?;
                if nd > 8 {
                    return Err(Error::Checkpoint(format!("input rank {nd} too large")));
                }
                let shape = (0..nd).map(|_| r.usize()).collect::<Result<_>>()?;
                LayerKind::Input { shape }
            }
            1 => LayerKind::Dense { units: r.usize()? },
            2 => {
                let filters = r.usize()?;
                let kernel = r.usize()?;
                let stride = r.usize()?;
                let padding = match r.u8()? {
                    0 => Padding::Valid,
                    1 => Padding::Same,
                    p => return Err(Error::Checkpoint(format!("unknown padding tag {p}"))),
                };
                LayerKind::Conv2D {
                    filters,
                    kernel,
                    stride,
                    padding,
                }
            }
            3 => LayerKind::MaxPool {
                kernel: r.usize()?,
                stride: r.usize()?,
            },
            4 => LayerKind::Flatten,
            5 => LayerKind::Dropout { rate: r.f32()? },
            6 => LayerKind::SoftmaxOutput { classes: r.usize()? },
            t => return Err(Error::Checkpoint(format!("unknown layer tag {t}"))),
        };
        layers.push(LayerSpec { kind, activation });
    }
    // Shapes come from a fresh build of the same stack; its values are then overwritten.
    let template = Network::new(layers.clone(), 0)
        .map_err(|e| Error::Checkpoint(format!("invalid layer table: {e}")))?;
    let mut params = Vec::with_capacity(layers.len());
    for p in template.all_params() {
        params.push(match p {
            None => None,
            Some(p) => Some(LayerParams {
                weights: Tensor::new(p.weights.shape().to_vec(), r.f32s(p.weights.len())?)?,
                bias: Tensor::new(p.bias.shape().to_vec(), r.f32s(p.bias.len())?)?,
            }),
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Network::from_parts(layers, params, trainable, rng_seed)
}
