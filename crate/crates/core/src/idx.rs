//! Reader and writer for unsigned-byte IDX tensors (the MNIST file format).
//!
//! Layout: two zero bytes, a type code (`0x08` = u8), the number of
//! dimensions, one big-endian `u32` per dimension, then the raw payload.

use crate::error::{KanError, Result};

const TYPE_U8: u8 = 0x08;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    /// The 32-bit magic number this tensor is written with.
    pub fn magic(&self) -> u32 {
        ((TYPE_U8 as u32) << 8) | self.dims.len() as u32
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(KanError::Format("IDX file shorter than its magic".into()));
        }
        if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != TYPE_U8 {
            return Err(KanError::Format(format!(
                "bad IDX magic 0x{:02x}{:02x}{:02x}{:02x}",
                bytes[0], bytes[1], bytes[2], bytes[3]
            )));
        }
        let nd = bytes[3] as usize;
        if nd == 0 {
            return Err(KanError::Format("IDX tensor with zero dimensions".into()));
        }
        let head = 4 + 4 * nd;
        if bytes.len() < head {
            return Err(KanError::Format("truncated IDX dimension header".into()));
        }
        let dims: Vec<usize> = bytes[4..head]
            .chunks_exact(4)
            .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| KanError::Format("IDX dimensions overflow".into()))?;
        let payload = &bytes[head..];
        if payload.len() < count {
            return Err(KanError::Format(format!(
                "truncated IDX payload: {} of {count} bytes",
                payload.len()
            )));
        }
        if payload.len() > count {
            return Err(KanError::Format(format!(
                "IDX payload has {} trailing bytes",
                payload.len() - count
            )));
        }
        Ok(IdxTensor {
            dims,
            data: payload.to_vec(),
        })
    }

    /// Parses and additionally requires a specific magic number.
    pub fn parse_expect(bytes: &[u8], magic: u32) -> Result<Self> {
        if bytes.len() >= 4 {
            let got = u32::from_be_bytes(bytes[..4].try_into().unwrap());
            if got != magic {
                return Err(KanError::Format(format!(
                    "expected IDX magic 0x{magic:08x}, found 0x{got:08x}"
                )));
            }
        }
        Self::parse(bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.data.len());
        out.extend_from_slice(&[0, 0, TYPE_U8, self.dims.len() as u8]);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }
}

pub const MAGIC_LABELS: u32 = 0x0000_0801;
pub const MAGIC_IMAGES: u32 = 0x0000_0803;
