//! Binary checkpoint format.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic     8 bytes  "SPCKPT\0\0"
//! version   u32
//! config    n_conv u32, filters u32 * n_conv, meta_dim u32,
//!           n_meta u32, widths u32 * n_meta, n_head u32, widths u32 * n_head,
//!           input_mels u32, input_frames u32
//! seed      u64
//! epoch     u32
//! n_blocks  u32
//! block     name_len u32, name utf-8, rank u32, dims u32 * rank, values f64 * prod(dims)
//! ```
//!
//! Network parameters come first in declaration order; any extra blocks
//! (such as the feature scaler) follow.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{NetConfig, PopularityNet, Tensor};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SPCKPT\0\0";

#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: PopularityNet,
    pub seed: u64,
    pub epoch: u32,
    pub extras: Vec<ParamBlock>,
}

impl Checkpoint {
    pub fn new(net: PopularityNet, seed: u64, epoch: u32) -> Self {
        Self {
            net,
            seed,
            epoch,
            extras: Vec::new(),
        }
    }

    pub fn extra(&self, name: &str) -> Option<&ParamBlock> {
        self.extras.iter().find(|b| b.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let put32 = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let cfg = self.net.config();
        put32(&mut out, cfg.conv_filters.len());
        cfg.conv_filters.iter().for_each(|&v| put32(&mut out, v));
        put32(&mut out, cfg.meta_dim);
        for list in [&cfg.meta_hidden, &cfg.head_hidden] {
            put32(&mut out, list.len());
            list.iter().for_each(|&v| put32(&mut out, v));
        }
        put32(&mut out, cfg.input_mels);
        put32(&mut out, cfg.input_frames);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());

        let params = self.net.named_params();
        put32(&mut out, params.len() + self.extras.len());
        let blocks = params
            .iter()
            .map(|(n, t)| (n.as_str(), t.shape(), t.data()))
            .chain(self.extras.iter().map(|b| (b.name.as_str(), &b.shape[..], &b.values[..])));
        for (name, shape, values) in blocks {
            put32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put32(&mut out, shape.len());
            shape.iter().for_each(|&d| put32(&mut out, d));
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Version("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version(format!(
                "format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let conv_filters = r.list()?;
        let meta_dim = r.u32()? as usize;
        let meta_hidden = r.list()?;
        let head_hidden = r.list()?;
        let input_mels = r.u32()? as usize;
        let input_frames = r.u32()? as usize;
        let config = NetConfig {
            conv_filters,
            meta_dim,
            meta_hidden,
            head_hidden,
            input_mels,
            input_frames,
        };
        let seed = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let epoch = r.u32()?;
        let n_blocks = r.u32()? as usize;

        let mut net = PopularityNet::zeros(config).map_err(|e| Error::Version(e.to_string()))?;
        let n_params = net.named_params().len();
        if n_blocks < n_params {
            return Err(Error::Version(format!(
                "{n_blocks} blocks for a network with {n_params} parameter tensors"
            )));
        }
        let mut blocks = Vec::with_capacity(n_blocks);
        for _ in 0..n_blocks {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Version("block name is not utf-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let values = r
                .take(count.checked_mul(8).ok_or_else(|| Error::Version("block too large".into()))?)?
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            blocks.push(ParamBlock { name, shape, values });
        }
        if r.pos != bytes.len() {
            return Err(Error::Version("trailing bytes after the last block".into()));
        }
        let extras = blocks.split_off(n_params);
        for ((name, t), block) in net.named_params_mut().into_iter().zip(blocks) {
            if block.name != name || block.shape != t.shape() {
                return Err(Error::Version(format!(
                    "block `{}` {:?} does not match parameter `{name}` {:?}",
                    block.name,
                    block.shape,
                    t.shape()
                )));
            }
            *t = Tensor::new(block.shape, block.values)?;
        }
        Ok(Self {
            net,
            seed,
            epoch,
            extras,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Version("checkpoint is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn list(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()? as usize;
        if n > 1024 {
            return Err(Error::Version(format!("implausible layer count {n}")));
        }
        (0..n).map(|_| self.u32().map(|v| v as usize)).collect()
    }
}
