//! Binary file formats (all little-endian).
//!
//! * `CBFV` raw descriptors: magic, u32 version, u32 patch_count, u32 dim,
//!   then per patch `f32 x, f32 y, f32[dim]`.
//! * `CBFH` encoded features: magic, u32 channel_count, then per channel
//!   u32 name length, name bytes, u32 dim, `f32[dim]`.
//! * `CBCB` codebook: magic, u32 version, u32 name length, name bytes,
//!   u32 k, u32 dim, u64 seed, f64 sigma, `f64[k·dim]`.

use std::fs;
use std::path::Path;

use crate::encode::{ChannelFeatures, Codebook, DescriptorBlock, FeatureSet};
use crate::error::{Error, Result};

pub const CBFV_VERSION: u32 = 1;
pub const CBCB_VERSION: u32 = 1;

/// Cursor over a little-endian byte buffer.
pub struct LeReader<'a> {
    kind: &'static str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> LeReader<'a> {
    pub fn new(kind: &'static str, bytes: &'a [u8]) -> Self {
        LeReader { kind, bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.kind, format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::format(self.kind, "bad magic"));
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.kind, "length overflow"))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::format(self.kind, "name is not UTF-8"))
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.kind, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_f32s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn put_string(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_cbfv(block: &DescriptorBlock) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + block.len() * (8 + 4 * block.dim));
    out.extend_from_slice(b"CBFV");
    put_u32(&mut out, CBFV_VERSION);
    put_u32(&mut out, block.len() as u32);
    put_u32(&mut out, block.dim as u32);
    for i in 0..block.len() {
        let (x, y) = block.positions[i];
        put_f32s(&mut out, [x, y]);
        put_f32s(&mut out, block.vector(i).iter().copied());
    }
    out
}

pub fn decode_cbfv(bytes: &[u8], channel: &str) -> Result<DescriptorBlock> {
    let mut r = LeReader::new("CBFV", bytes);
    r.magic(b"CBFV")?;
    let version = r.u32()?;
    if version != CBFV_VERSION {
        return Err(Error::format("CBFV", format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let mut positions = Vec::with_capacity(count);
    let mut vectors = Vec::with_capacity(count * dim);
    for _ in 0..count {
        positions.push((r.f32()?, r.f32()?));
        vectors.extend(r.f32s(dim)?);
    }
    r.finish()?;
    DescriptorBlock::new(channel, dim, positions, vectors)
}

pub fn write_cbfv(path: &Path, block: &DescriptorBlock) -> Result<()> {
    write(path, &encode_cbfv(block))
}

pub fn read_cbfv(path: &Path, channel: &str) -> Result<DescriptorBlock> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cbfv(&bytes, channel)
}

/// Feature values are stored as f32.
pub fn encode_cbfh(features: &FeatureSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(b"CBFH");
    put_u32(&mut out, features.channels.len() as u32);
    for ch in &features.channels {
        put_string(&mut out, &ch.name);
        put_u32(&mut out, ch.values.len() as u32);
        put_f32s(&mut out, ch.values.iter().map(|&v| v as f32));
    }
    out
}

pub fn decode_cbfh(bytes: &[u8]) -> Result<FeatureSet> {
    let mut r = LeReader::new("CBFH", bytes);
    r.magic(b"CBFH")?;
    let n = r.u32()? as usize;
    let mut channels = Vec::with_capacity(n);
    for _ in 0..n {
        let name = r.string()?;
        let dim = r.u32()? as usize;
        let values = r.f32s(dim)?.into_iter().map(f64::from).collect();
        channels.push(ChannelFeatures { name, values });
    }
    r.finish()?;
    Ok(FeatureSet { channels })
}

pub fn write_cbfh(path: &Path, features: &FeatureSet) -> Result<()> {
    write(path, &encode_cbfh(features))
}

pub fn read_cbfh(path: &Path) -> Result<FeatureSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cbfh(&bytes)
}

pub fn encode_cbcb(codebook: &Codebook) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(b"CBCB");
    put_u32(&mut out, CBCB_VERSION);
    put_string(&mut out, &codebook.channel);
    put_u32(&mut out, codebook.k as u32);
    put_u32(&mut out, codebook.dim as u32);
    out.extend_from_slice(&codebook.train_seed.to_le_bytes());
    out.extend_from_slice(&codebook.sigma.to_le_bytes());
    for v in &codebook.centers {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_cbcb(bytes: &[u8]) -> Result<Codebook> {
    let mut r = LeReader::new("CBCB", bytes);
    r.magic(b"CBCB")?;
    let version = r.u32()?;
    if version != CBCB_VERSION {
        return Err(Error::format("CBCB", format!("unsupported version {version}")));
    }
    let channel = r.string()?;
    let k = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let train_seed = r.u64()?;
    let sigma = r.f64()?;
    let centers = (0..k * dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(Codebook {
        channel,
        k,
        dim,
        centers,
        train_seed,
        sigma,
    })
}

pub fn write_cbcb(path: &Path, codebook: &Codebook) -> Result<()> {
    write(path, &encode_cbcb(codebook))
}

pub fn read_cbcb(path: &Path) -> Result<Codebook> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cbcb(&bytes)
}
