//! FTC binary tensor container.
//!
//! Layout of one record, all integers little-endian:
//!
//! ```text
//! "FTC1" | version u16 | element type u16 (1 = f32, 2 = f64) | rank u16
//!        | dims: rank × u64 | metadata length u32 | metadata (UTF-8 key=value lines)
//!        | row-major data
//! ```
//!
//! A file may hold several records back to back; multi-part artifacts such as
//! the HOSVD basis name each record with a `section` metadata key.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FTC1";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum FtcData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl FtcData {
    pub fn len(&self) -> usize {
        match self {
            FtcData::F32(v) => v.len(),
            FtcData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn type_code(&self) -> u16 {
        match self {
            FtcData::F32(_) => 1,
            FtcData::F64(_) => 2,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            FtcData::F32(v) => v.iter().map(|x| *x as f64).collect(),
            FtcData::F64(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FtcTensor {
    pub dims: Vec<u64>,
    pub metadata: BTreeMap<String, String>,
    pub data: FtcData,
}

impl FtcTensor {
    pub fn new(dims: Vec<u64>, data: FtcData) -> Result<Self> {
        let expected: u64 = dims.iter().product();
        if expected != data.len() as u64 {
            return Err(Error::ShapeMismatch(format!(
                "dims {dims:?} need {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            dims,
            metadata: BTreeMap::new(),
            data,
        })
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let io = |e| Error::io("<ftc>", e);
        let mut header = Vec::new();
        header.extend_from_slice(MAGIC);
        header.extend_from_slice(&VERSION.to_le_bytes());
        header.extend_from_slice(&self.data.type_code().to_le_bytes());
        header.extend_from_slice(&(self.dims.len() as u16).to_le_bytes());
        for d in &self.dims {
            header.extend_from_slice(&d.to_le_bytes());
        }
        let mut meta = String::new();
        for (k, v) in &self.metadata {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::InvalidValue(format!("metadata entry {k:?} not representable")));
            }
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        header.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        header.extend_from_slice(meta.as_bytes());
        w.write_all(&header).map_err(io)?;
        let mut body = Vec::with_capacity(self.data.len() * 8);
        match &self.data {
            FtcData::F32(v) => v.iter().for_each(|x| body.extend_from_slice(&x.to_le_bytes())),
            FtcData::F64(v) => v.iter().for_each(|x| body.extend_from_slice(&x.to_le_bytes())),
        }
        w.write_all(&body).map_err(io)
    }

    /// Reads one record; `Ok(None)` at a clean end of stream.
    pub fn read<R: Read>(r: &mut R) -> Result<Option<Self>> {
        let mut magic = [0u8; 4];
        let mut got = 0;
        while got < 4 {
            let n = r.read(&mut magic[got..]).map_err(|e| Error::io("<ftc>", e))?;
            if n == 0 {
                return if got == 0 {
                    Ok(None)
                } else {
                    Err(Error::Corrupt("truncated FTC magic".into()))
                };
            }
            got += n;
        }
        if &magic != MAGIC {
            return Err(Error::Corrupt("bad FTC magic".into()));
        }
        let version = read_u16(r)?;
        if version != VERSION {
            return Err(Error::Corrupt(format!("unsupported FTC version {version}")));
        }
        let code = read_u16(r)?;
        let rank = read_u16(r)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u64(r)?);
        }
        let meta_len = read_u32(r)? as usize;
        let meta_bytes = read_exact(r, meta_len)?;
        let meta_text =
            String::from_utf8(meta_bytes).map_err(|_| Error::Corrupt("FTC metadata is not UTF-8".into()))?;
        let mut metadata = BTreeMap::new();
        for line in meta_text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Corrupt(format!("bad metadata line {line:?}")))?;
            metadata.insert(k.to_string(), v.to_string());
        }
        let n: u64 = dims.iter().product();
        let n = usize::try_from(n).map_err(|_| Error::Corrupt("FTC too large".into()))?;
        let data = match code {
            1 => {
                let bytes = read_exact(r, n * 4)?;
                FtcData::F32(
                    bytes
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            2 => {
                let bytes = read_exact(r, n * 8)?;
                FtcData::F64(
                    bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            other => return Err(Error::Corrupt(format!("unknown FTC element type {other}"))),
        };
        Ok(Some(Self { dims, metadata, data }))
    }
}

fn read_exact<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Corrupt("truncated FTC record".into()))?;
    Ok(buf)
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    Ok(u16::from_le_bytes(read_exact(r, 2)?.try_into().unwrap()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r, 4)?.try_into().unwrap()))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact(r, 8)?.try_into().unwrap()))
}

pub fn write_file(path: &Path, records: &[FtcTensor]) -> Result<()> {
    let mut buf = Vec::new();
    for rec in records {
        rec.write(&mut buf)?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<FtcTensor>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = std::io::Cursor::new(bytes);
    let mut out = Vec::new();
    while let Some(rec) = FtcTensor::read(&mut cur)? {
        out.push(rec);
    }
    Ok(out)
}

pub fn read_single(path: &Path) -> Result<FtcTensor> {
    let mut recs = read_file(path)?;
    if recs.len() != 1 {
        return Err(Error::Corrupt(format!(
            "{} holds {} records, expected 1",
            path.display(),
            recs.len()
        )));
    }
    Ok(recs.pop().unwrap())
}
