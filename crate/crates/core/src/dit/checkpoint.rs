//! Versioned binary container of named `f64` tensors.
//!
//! ```text
//! magic    "RMXCKP"                      6 bytes
//! version  u16 LE                        currently 1
//! kind     u8                            0 = base params, 1 = adapter
//! meta     u32 count, then (str key, str value) pairs
//! tensors  u32 count, then (str name, u32 ndim, u64 dims…, f64 data…)
//! str      u32 byte length + UTF-8
//! ```
//!
//! All integers and floats are little-endian. Base weights and adapters are
//! always written to separate files; an adapter file records its mode.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::lora::{LoraAdapter, LoraMode, LoraPair, LoraTarget};
use super::model::{BlockParams, DitConfig, DitParams};
use crate::attention::AttentionParams;

pub const MAGIC: &[u8; 6] = b"RMXCKP";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Base,
    Adapter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

fn io_err(e: std::io::Error) -> Error {
    Error::Checkpoint(e.to_string())
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(s.as_bytes()).map_err(io_err)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let n = read_u32(r)? as usize;
    if n > 1 << 20 {
        return Err(Error::Checkpoint(format!("string length {n} is implausible")));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(io_err)?;
    String::from_utf8(b).map_err(|e| Error::Checkpoint(e.to_string()))
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC).map_err(io_err)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io_err)?;
        w.write_all(&[match self.kind {
            CheckpointKind::Base => 0,
            CheckpointKind::Adapter => 1,
        }])
        .map_err(io_err)?;
        w.write_all(&(self.meta.len() as u32).to_le_bytes()).map_err(io_err)?;
        for (k, v) in &self.meta {
            write_str(w, k)?;
            write_str(w, v)?;
        }
        w.write_all(&(self.tensors.len() as u32).to_le_bytes()).map_err(io_err)?;
        for (name, t) in &self.tensors {
            write_str(w, name)?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes()).map_err(io_err)?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes()).map_err(io_err)?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes()).map_err(io_err)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let mut v = [0u8; 2];
        r.read_exact(&mut v).map_err(io_err)?;
        let version = u16::from_le_bytes(v);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let mut k = [0u8; 1];
        r.read_exact(&mut k).map_err(io_err)?;
        let kind = match k[0] {
            0 => CheckpointKind::Base,
            1 => CheckpointKind::Adapter,
            other => return Err(Error::Checkpoint(format!("unknown checkpoint kind {other}"))),
        };
        let mut meta = BTreeMap::new();
        for _ in 0..read_u32(r)? {
            let key = read_str(r)?;
            meta.insert(key, read_str(r)?);
        }
        let count = read_u32(r)?;
        let mut tensors = Vec::with_capacity(count.min(4096) as usize);
        for _ in 0..count {
            let name = read_str(r)?;
            let ndim = read_u32(r)? as usize;
            if ndim > 8 {
                return Err(Error::Checkpoint(format!("tensor `{name}` has {ndim} dimensions")));
            }
            let shape = (0..ndim).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 8];
            r.read_exact(&mut raw).map_err(io_err)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { kind, meta, tensors })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    fn take(&mut self, name: &str) -> Result<Tensor> {
        let pos = self
            .tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        Ok(self.tensors.remove(pos).1)
    }

    fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.meta
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata `{key}`")))?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("invalid metadata `{key}`")))
    }
}

pub fn params_checkpoint(params: &DitParams) -> Checkpoint {
    let c = &params.config;
    let meta = BTreeMap::from([
        ("d_model".to_string(), c.d_model.to_string()),
        ("num_heads".to_string(), c.num_heads.to_string()),
        ("num_blocks".to_string(), c.num_blocks.to_string()),
        ("channels".to_string(), c.channels.to_string()),
        ("mlp_hidden".to_string(), c.mlp_hidden.to_string()),
        ("time_freqs".to_string(), c.time_freqs.to_string()),
        ("norm_eps".to_string(), format!("{:e}", c.norm_eps)),
        ("rope_base".to_string(), format!("{:e}", c.rope_base)),
    ]);
    Checkpoint {
        kind: CheckpointKind::Base,
        meta,
        tensors: params.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect(),
    }
}

pub fn params_from_checkpoint(mut ck: Checkpoint) -> Result<DitParams> {
    if ck.kind != CheckpointKind::Base {
        return Err(Error::Checkpoint("expected a base-parameter checkpoint, found an adapter".into()));
    }
    let config = DitConfig {
        d_model: ck.meta_parse("d_model")?,
        num_heads: ck.meta_parse("num_heads")?,
        num_blocks: ck.meta_parse("num_blocks")?,
        channels: ck.meta_parse("channels")?,
        mlp_hidden: ck.meta_parse("mlp_hidden")?,
        time_freqs: ck.meta_parse("time_freqs")?,
        norm_eps: ck.meta_parse("norm_eps")?,
        rope_base: ck.meta_parse("rope_base")?,
    };
    config.validate()?;
    let mut blocks = Vec::with_capacity(config.num_blocks);
    for i in 0..config.num_blocks {
        let attn = AttentionParams::new(
            ck.take(&format!("blocks.{i}.w_q"))?,
            ck.take(&format!("blocks.{i}.w_k"))?,
            ck.take(&format!("blocks.{i}.w_v"))?,
            ck.take(&format!("blocks.{i}.w_o"))?,
            config.num_heads,
        )?;
        blocks.push(BlockParams {
            attn,
            norm_attn: ck.take(&format!("blocks.{i}.norm_attn"))?,
            norm_mlp: ck.take(&format!("blocks.{i}.norm_mlp"))?,
            mlp_in: ck.take(&format!("blocks.{i}.mlp_in"))?,
            mlp_out: ck.take(&format!("blocks.{i}.mlp_out"))?,
        });
    }
    Ok(DitParams {
        embed_image: ck.take("embed_image")?,
        embed_text: ck.take("embed_text")?,
        time_proj: ck.take("time_proj")?,
        unembed: ck.take("unembed")?,
        config,
        blocks,
    })
}

pub fn adapter_checkpoint(adapter: &LoraAdapter) -> Checkpoint {
    let meta = BTreeMap::from([
        ("mode".to_string(), adapter.mode().to_string()),
        ("rank".to_string(), adapter.rank().to_string()),
        ("alpha".to_string(), format!("{:e}", adapter.alpha())),
        ("num_blocks".to_string(), adapter.num_blocks().to_string()),
    ]);
    Checkpoint {
        kind: CheckpointKind::Adapter,
        meta,
        tensors: adapter.tensors().map(|(n, t)| (n, t.clone())).collect(),
    }
}

/// Rebuilds an adapter, refusing files written for the other mode.
pub fn adapter_from_checkpoint(mut ck: Checkpoint, expected: LoraMode) -> Result<LoraAdapter> {
    if ck.kind != CheckpointKind::Adapter {
        return Err(Error::Checkpoint("expected an adapter checkpoint, found base parameters".into()));
    }
    let mode: LoraMode = ck
        .meta
        .get("mode")
        .ok_or_else(|| Error::Checkpoint("missing metadata `mode`".into()))?
        .parse()?;
    if mode != expected {
        return Err(Error::Checkpoint(format!(
            "adapter file holds a {mode} adapter, but a {expected} adapter was requested"
        )));
    }
    let rank: usize = ck.meta_parse("rank")?;
    let alpha: f64 = ck.meta_parse("alpha")?;
    let num_blocks: usize = ck.meta_parse("num_blocks")?;
    let mut blocks = Vec::with_capacity(num_blocks);
    for i in 0..num_blocks {
        let mut pairs = Vec::with_capacity(4);
        for t in LoraTarget::ALL {
            pairs.push(LoraPair {
                a: ck.take(&format!("blocks.{i}.{}.lora_a", t.name()))?,
                b: ck.take(&format!("blocks.{i}.{}.lora_b", t.name()))?,
            });
        }
        blocks.push(<[LoraPair; 4]>::try_from(pairs).expect("four targets"));
    }
    LoraAdapter::new(mode, rank, alpha, blocks)
}

pub fn save_params(params: &DitParams, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, params_checkpoint(params).to_bytes()).map_err(io_err)
}

pub fn load_params(path: &std::path::Path) -> Result<DitParams> {
    let mut f = std::fs::File::open(path).map_err(io_err)?;
    params_from_checkpoint(Checkpoint::read_from(&mut f)?)
}

pub fn save_adapter(adapter: &LoraAdapter, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, adapter_checkpoint(adapter).to_bytes()).map_err(io_err)
}

pub fn load_adapter(path: &std::path::Path, expected: LoraMode) -> Result<LoraAdapter> {
    let mut f = std::fs::File::open(path).map_err(io_err)?;
    adapter_from_checkpoint(Checkpoint::read_from(&mut f)?, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn params_round_trip_bitwise() {
        let p = DitParams::init(DitConfig::default(), &mut SeededRng::new(1)).unwrap();
        let bytes = params_checkpoint(&p).to_bytes();
        let back = params_from_checkpoint(Checkpoint::read_from(&mut bytes.as_slice()).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn adapter_mode_is_enforced() {
        let a = LoraAdapter::random(&mut SeededRng::new(2), LoraMode::Gen, 2, 32, 4, 4.0, 0.1).unwrap();
        let bytes = adapter_checkpoint(&a).to_bytes();
        let ck = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(adapter_from_checkpoint(ck.clone(), LoraMode::Gen).unwrap(), a);
        assert!(adapter_from_checkpoint(ck.clone(), LoraMode::Edit).is_err());
        assert!(params_from_checkpoint(ck).is_err());
    }

    #[test]
    fn header_layout_is_pinned() {
        let ck = Checkpoint {
            kind: CheckpointKind::Adapter,
            meta: BTreeMap::new(),
            tensors: vec![("x".into(), Tensor::vector(&[1.5]))],
        };
        let b = ck.to_bytes();
        assert_eq!(&b[..6], b"RMXCKP");
        assert_eq!(&b[6..8], &[1, 0]);
        assert_eq!(b[8], 1);
        assert_eq!(&b[9..13], &[0, 0, 0, 0]);
        assert_eq!(&b[13..17], &[1, 0, 0, 0]);
        assert_eq!(&b[17..21], &[1, 0, 0, 0]);
        assert_eq!(b[21], b'x');
        assert_eq!(&b[22..26], &[1, 0, 0, 0]);
        assert_eq!(&b[26..34], &1u64.to_le_bytes());
        assert_eq!(&b[34..42], &1.5f64.to_le_bytes());
        assert_eq!(b.len(), 42);
    }

    #[test]
    fn truncated_and_foreign_files_rejected() {
        let p = DitParams::init(DitConfig::default(), &mut SeededRng::new(3)).unwrap();
        let bytes = params_checkpoint(&p).to_bytes();
        assert!(Checkpoint::read_from(&mut &bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::read_from(&mut &b"PK\x03\x04 not ours"[..]).is_err());
    }
}
