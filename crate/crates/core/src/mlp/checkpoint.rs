//! `MLP1` checkpoint: little-endian header (dropout rates as f64),
//! normalization statistics and parameters as f32, followed by a 64-bit checksum (leading bytes of the
//! SHA-256 of everything before it).

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{layout, MlpArchitecture, MlpModel, Normalization, Provenance, Real};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MLP1";
const VERSION: u16 = 1;

fn checksum(bytes: &[u8]) -> [u8; 8] {
    Sha256::digest(bytes)[..8].try_into().unwrap()
}

fn put_f32s<T: Real>(buf: &mut Vec<u8>, xs: &[T]) {
    for x in xs {
        buf.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
    }
}

pub fn encode_model<T: Real>(model: &MlpModel<T>) -> Vec<u8> {
    let a = &model.arch;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [a.input_dim, a.hidden_layers, a.hidden_width, a.output_dim] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&a.dropout_input.to_le_bytes());
    buf.extend_from_slice(&a.dropout_hidden.to_le_bytes());
    buf.extend_from_slice(&model.provenance.seed.to_le_bytes());
    buf.extend_from_slice(&model.provenance.epochs.to_le_bytes());
    let hash = model.provenance.config_hash.as_bytes();
    buf.extend_from_slice(&(hash.len() as u32).to_le_bytes());
    buf.extend_from_slice(hash);
    put_f32s(&mut buf, &model.feature_norm.mean);
    put_f32s(&mut buf, &model.feature_norm.std);
    put_f32s(&mut buf, &model.target_norm.mean);
    put_f32s(&mut buf, &model.target_norm.std);
    buf.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    put_f32s(&mut buf, &model.params);
    let sum = checksum(&buf);
    buf.extend_from_slice(&sum);
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Corrupt("size overflow".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<MlpModel<f32>> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..4] != MAGIC {
        return Err(Error::Corrupt("not an MLP1 checkpoint".into()));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 8);
    if checksum(body) != sum {
        return Err(Error::Checksum("checkpoint checksum mismatch".into()));
    }
    let mut c = Cursor { bytes: body, pos: 4 };
    let version = c.u16()?;
    if version != VERSION {
        return Err(Error::Corrupt(format!("unsupported checkpoint version {version}")));
    }
    let input_dim = c.u32()? as usize;
    let hidden_layers = c.u32()? as usize;
    let hidden_width = c.u32()? as usize;
    let output_dim = c.u32()? as usize;
    let arch = MlpArchitecture {
        input_dim,
        hidden_layers,
        hidden_width,
        output_dim,
        dropout_input: c.f64()?,
        dropout_hidden: c.f64()?,
    };
    arch.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
    let seed = c.u64()?;
    let epochs = c.u32()?;
    let hash_len = c.u32()? as usize;
    let config_hash = String::from_utf8(c.take(hash_len)?.to_vec())
        .map_err(|_| Error::Corrupt("config hash is not UTF-8".into()))?;
    let feature_norm = Normalization {
        mean: c.f32s(input_dim)?,
        std: c.f32s(input_dim)?,
    };
    let target_norm = Normalization {
        mean: c.f32s(output_dim)?,
        std: c.f32s(output_dim)?,
    };
    let n_params = c.u64()? as usize;
    if n_params != arch.param_count() {
        return Err(Error::Corrupt(format!(
            "checkpoint holds {n_params} parameters, architecture needs {}",
            arch.param_count()
        )));
    }
    let params = c.f32s(n_params)?;
    if c.pos != body.len() {
        return Err(Error::Corrupt("trailing bytes in checkpoint".into()));
    }
    Ok(MlpModel {
        layers: layout(&arch),
        arch,
        params,
        feature_norm,
        target_norm,
        provenance: Provenance {
            seed,
            epochs,
            config_hash,
        },
    })
}

/// Writes the model in single precision regardless of `T`.
pub fn save_model<T: Real>(model: &MlpModel<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<MlpModel<f32>> {
    decode_model(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
