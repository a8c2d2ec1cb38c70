//! Flat parameter storage and its on-disk formats.
//!
//! Layout of the flat vector (length `m·p·(d+1)`):
//!
//! * a-block first: `a[j][i][k]` at `(j·d + i)·p + k` (unit, input, basis);
//! * c-block after it: `c[j][k]` at `m·d·p + j·p + k` (unit, basis).
//!
//! Each unit's a-coefficients are therefore contiguous, as are its
//! c-coefficients.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basis::{Activation, BasisFamily};
use crate::error::{KanError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    d: usize,
    m: usize,
    p: usize,
    data: Vec<f64>,
}

/// Header stored in front of serialized parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamHeader {
    pub d: usize,
    pub m: usize,
    pub p: usize,
    pub basis: BasisFamily,
    pub activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct JsonDoc {
    header: ParamHeader,
    values: Vec<f64>,
}

const BINARY_MAGIC: &[u8; 4] = b"KANP";

impl ParamVector {
    pub fn zeros(d: usize, m: usize, p: usize) -> Self {
        ParamVector {
            d,
            m,
            p,
            data: vec![0.0; m * p * (d + 1)],
        }
    }

    pub fn from_flat(d: usize, m: usize, p: usize, data: Vec<f64>) -> Result<Self> {
        let want = m * p * (d + 1);
        if data.len() != want {
            return Err(KanError::Input(format!(
                "flat parameter length {} does not match m·p·(d+1) = {want}",
                data.len()
            )));
        }
        Ok(ParamVector { d, m, p, data })
    }

    /// Builds a vector from separate `a` (`m·d·p`) and `c` (`m·p`) blocks.
    pub fn from_blocks(d: usize, m: usize, p: usize, a: &[f64], c: &[f64]) -> Result<Self> {
        if a.len() != m * d * p || c.len() != m * p {
            return Err(KanError::Input(format!(
                "block lengths ({}, {}) do not match ({}, {})",
                a.len(),
                c.len(),
                m * d * p,
                m * p
            )));
        }
        let mut data = Vec::with_capacity(a.len() + c.len());
        data.extend_from_slice(a);
        data.extend_from_slice(c);
        Ok(ParamVector { d, m, p, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.d, self.m, self.p)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    fn a_len(&self) -> usize {
        self.m * self.d * self.p
    }

    pub fn a(&self) -> &[f64] {
        &self.data[..self.a_len()]
    }

    pub fn c(&self) -> &[f64] {
        &self.data[self.a_len()..]
    }

    pub fn a_mut(&mut self) -> &mut [f64] {
        let n = self.a_len();
        &mut self.data[..n]
    }

    pub fn c_mut(&mut self) -> &mut [f64] {
        let n = self.a_len();
        &mut self.data[n..]
    }

    pub fn split_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let n = self.a_len();
        self.data.split_at_mut(n)
    }

    /// All first-layer coefficients of unit `j` (`d·p` values, input-major).
    pub fn a_unit(&self, j: usize) -> &[f64] {
        let w = self.d * self.p;
        &self.data[j * w..(j + 1) * w]
    }

    pub fn c_unit(&self, j: usize) -> &[f64] {
        let off = self.a_len() + j * self.p;
        &self.data[off..off + self.p]
    }

    pub fn a_index(&self, j: usize, i: usize, k: usize) -> usize {
        (j * self.d + i) * self.p + k
    }

    pub fn c_index(&self, j: usize, k: usize) -> usize {
        self.a_len() + j * self.p + k
    }

    pub fn norm(&self) -> f64 {
        l2(&self.data)
    }

    /// `‖self − other‖₂`.
    pub fn distance(&self, other: &ParamVector) -> f64 {
        dist(&self.data, &other.data)
    }

    /// `max_j ‖c_j − other.c_j‖₂`.
    pub fn max_unit_c_distance(&self, other: &ParamVector) -> f64 {
        (0..self.m)
            .map(|j| dist(self.c_unit(j), other.c_unit(j)))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of `self` with every hidden unit repeated `factor` times.
    pub fn duplicate_units(&self, factor: usize) -> ParamVector {
        let mut a = Vec::with_capacity(self.a_len() * factor);
        let mut c = Vec::with_capacity(self.m * self.p * factor);
        for j in 0..self.m {
            for _ in 0..factor {
                a.extend_from_slice(self.a_unit(j));
                c.extend_from_slice(self.c_unit(j));
            }
        }
        ParamVector::from_blocks(self.d, self.m * factor, self.p, &a, &c)
            .expect("block sizes are consistent by construction")
    }

    fn check_header(&self, header: &ParamHeader) -> Result<()> {
        if (header.d, header.m, header.p) != (self.d, self.m, self.p) {
            return Err(KanError::Input(format!(
                "header dims ({}, {}, {}) do not match parameters ({}, {}, {})",
                header.d, header.m, header.p, self.d, self.m, self.p
            )));
        }
        Ok(())
    }

    pub fn to_json(&self, header: &ParamHeader) -> Result<String> {
        self.check_header(header)?;
        Ok(serde_json::to_string(&JsonDoc {
            header: header.clone(),
            values: self.data.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<(ParamHeader, ParamVector)> {
        let doc: JsonDoc = serde_json::from_str(s)?;
        let h = doc.header;
        let pv = ParamVector::from_flat(h.d, h.m, h.p, doc.values)?;
        Ok((h, pv))
    }

    /// Binary form: magic `KANP`, little-endian `u32` header length, JSON
    /// header, then the flat vector as little-endian `f64`.
    pub fn write_binary<W: Write>(&self, header: &ParamHeader, mut w: W) -> Result<()> {
        self.check_header(header)?;
        let hdr = serde_json::to_vec(header)?;
        let mut buf = Vec::with_capacity(8 + hdr.len() + 8 * self.data.len());
        buf.extend_from_slice(BINARY_MAGIC);
        buf.extend_from_slice(&(hdr.len() as u32).to_le_bytes());
        buf.extend_from_slice(&hdr);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
            .map_err(|e| KanError::io("<binary writer>", e))
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<(ParamHeader, ParamVector)> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| KanError::io("<binary reader>", e))?;
        if bytes.len() < 8 || &bytes[..4] != BINARY_MAGIC {
            return Err(KanError::Format("missing KANP magic".into()));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = bytes
            .get(8..8 + hlen)
            .ok_or_else(|| KanError::Format("truncated parameter header".into()))?;
        let h: ParamHeader = serde_json::from_slice(body)?;
        let payload = &bytes[8 + hlen..];
        let n = h.m * h.p * (h.d + 1);
        if payload.len() != 8 * n {
            return Err(KanError::Format(format!(
                "parameter payload has {} bytes, expected {}",
                payload.len(),
                8 * n
            )));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let pv = ParamVector::from_flat(h.d, h.m, h.p, data)?;
        Ok((h, pv))
    }

    /// Saves as JSON if the extension is `.json`, binary otherwise.
    pub fn save(&self, header: &ParamHeader, path: &Path) -> Result<()> {
        if path.extension().is_some_and(|e| e == "json") {
            let s = self.to_json(header)?;
            std::fs::write(path, s).map_err(|e| KanError::io(path, e))
        } else {
            let f = std::fs::File::create(path).map_err(|e| KanError::io(path, e))?;
            self.write_binary(header, std::io::BufWriter::new(f))
        }
    }

    pub fn load(path: &Path) -> Result<(ParamHeader, ParamVector)> {
        let bytes = std::fs::read(path).map_err(|e| KanError::io(path, e))?;
        if bytes.starts_with(BINARY_MAGIC) {
            Self::read_binary(&bytes[..])
        } else {
            let s = String::from_utf8(bytes)
                .map_err(|_| KanError::Format(format!("{} is not UTF-8 JSON", path.display())))?;
            Self::from_json(&s)
        }
    }
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(d: usize, m: usize, p: usize) -> ParamHeader {
        ParamHeader {
            d,
            m,
            p,
            basis: BasisFamily::CubicBspline,
            activation: Activation::Tanh,
        }
    }

    fn sample() -> ParamVector {
        let data = (0..3 * 4 * 3).map(|i| i as f64 * 0.37 - 2.0).collect();
        ParamVector::from_flat(2, 3, 4, data).unwrap()
    }

    #[test]
    fn index_layout() {
        let pv = sample();
        assert_eq!(pv.len(), 36);
        assert_eq!(pv.a_index(1, 0, 2), 10);
        assert_eq!(pv.c_index(0, 0), 24);
        assert_eq!(pv.c_index(2, 3), 35);
        assert_eq!(pv.a_unit(1), &pv.as_slice()[8..16]);
        assert_eq!(pv.c_unit(2), &pv.as_slice()[32..36]);
    }

    #[test]
    fn rejects_bad_length() {
        assert!(ParamVector::from_flat(2, 3, 4, vec![0.0; 35]).is_err());
    }

    #[test]
    fn json_and_binary_round_trip() {
        let pv = sample();
        let h = header(2, 3, 4);
        let (h2, back) = ParamVector::from_json(&pv.to_json(&h).unwrap()).unwrap();
        assert_eq!((h2, back), (h.clone(), pv.clone()));
        let mut buf = Vec::new();
        pv.write_binary(&h, &mut buf).unwrap();
        let (h3, back) = ParamVector::read_binary(&buf[..]).unwrap();
        assert_eq!((h3, back), (h, pv));
    }

    #[test]
    fn truncated_binary_is_format_error() {
        let pv = sample();
        let mut buf = Vec::new();
        pv.write_binary(&header(2, 3, 4), &mut buf).unwrap();
        buf.pop();
        assert!(matches!(
            ParamVector::read_binary(&buf[..]),
            Err(KanError::Format(_))
        ));
    }

    #[test]
    fn duplicate_units_preserves_order() {
        let pv = sample().duplicate_units(2);
        assert_eq!(pv.dims(), (2, 6, 4));
        assert_eq!(pv.a_unit(0), pv.a_unit(1));
        assert_eq!(pv.c_unit(4), sample().c_unit(2));
    }
}
