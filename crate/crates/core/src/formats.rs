//! Little-endian binary exchange formats.
//!
//! | magic  | header                         | payload                        |
//! |--------|--------------------------------|--------------------------------|
//! | `EMB1` | u32 dimension                  | dimension × f32                |
//! | `FLO1` | u32 height, u32 width          | height·width × f32 u, then v   |
//! | `TEN1` | u32 rank, rank × u32 dims      | product(dims) × f64            |

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use thiserror::Error;

use crate::curation::FlowField;

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
pub const FLO_MAGIC: &[u8; 4] = b"FLO1";
pub const TEN_MAGIC: &[u8; 4] = b"TEN1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    Magic { expected: [u8; 4], found: [u8; 4] },
    #[error("truncated payload: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
    #[error("invalid header: {0}")]
    Header(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.pos + n > self.buf.len() {
            return Err(FormatError::Truncated {
                expected: self.pos + n,
                got: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<(), FormatError> {
        let m = self.take(4)?;
        if m != expected {
            return Err(FormatError::Magic {
                expected: *expected,
                found: m.try_into().unwrap(),
            });
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| FormatError::Header("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| FormatError::Header("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn finish(self) -> Result<(), FormatError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::Trailing(n)),
        }
    }
}

pub fn encode_embedding(v: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * v.len());
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&(v.len() as u32).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_embedding(buf: &[u8]) -> Result<Vec<f32>, FormatError> {
    let mut c = Cursor::new(buf);
    c.magic(EMB_MAGIC)?;
    let dim = c.u32()? as usize;
    let v = c.f32s(dim)?;
    c.finish()?;
    Ok(v)
}

pub fn read_embedding(path: &Path) -> Result<Vec<f32>, FormatError> {
    decode_embedding(&fs::read(path)?)
}

pub fn write_embedding(path: &Path, v: &[f32]) -> Result<(), FormatError> {
    fs::write(path, encode_embedding(v))?;
    Ok(())
}

pub fn encode_flow(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * flow.u.len());
    out.extend_from_slice(FLO_MAGIC);
    out.extend_from_slice(&(flow.height as u32).to_le_bytes());
    out.extend_from_slice(&(flow.width as u32).to_le_bytes());
    for x in flow.u.iter().chain(flow.v.iter()) {
        out.extend_from_slice(&(*x as f32).to_le_bytes());
    }
    out
}

pub fn decode_flow(buf: &[u8]) -> Result<FlowField, FormatError> {
    let mut c = Cursor::new(buf);
    c.magic(FLO_MAGIC)?;
    let height = c.u32()? as usize;
    let width = c.u32()? as usize;
    let n = height
        .checked_mul(width)
        .ok_or_else(|| FormatError::Header("size overflow".into()))?;
    let u = c.f32s(n)?.into_iter().map(f64::from).collect();
    let v = c.f32s(n)?.into_iter().map(f64::from).collect();
    c.finish()?;
    Ok(FlowField { height, width, u, v })
}

pub fn read_flow(path: &Path) -> Result<FlowField, FormatError> {
    decode_flow(&fs::read(path)?)
}

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<(), FormatError> {
    fs::write(path, encode_flow(flow))?;
    Ok(())
}

pub fn write_tensor<W: Write>(mut w: W, t: &ArrayD<f64>) -> Result<(), FormatError> {
    w.write_all(TEN_MAGIC)?;
    w.write_all(&(t.ndim() as u32).to_le_bytes())?;
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| FormatError::Header(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for x in t.iter() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<ArrayD<f64>, FormatError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor::new(&buf);
    c.magic(TEN_MAGIC)?;
    let rank = c.u32()? as usize;
    let dims = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| FormatError::Header("size overflow".into()))?;
    let data = c.f64s(n)?;
    c.finish()?;
    ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| FormatError::Header(e.to_string()))
}
