//! Named parameter collections shared by models, optimizers and the
//! federation weight exchange.
//!
//! Binary layout (all integers little-endian `u64`, values little-endian
//! `f64`):
//!
//! ```text
//! entry_count
//! repeated entry_count times:
//!     name_len, name (UTF-8), kind (u8: 0 trainable, 1 running statistic),
//!     rank, dims[rank], values[product(dims)]
//! ```

use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Trainable,
    RunningStatistic,
}

impl ParamKind {
    fn to_byte(self) -> u8 {
        match self {
            ParamKind::Trainable => 0,
            ParamKind::RunningStatistic => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(ParamKind::Trainable),
            1 => Ok(ParamKind::RunningStatistic),
            other => Err(Error::format(format!("unknown parameter kind byte {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
}

/// Ordered, uniquely named parameters of one model instance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    entries: Vec<ParamEntry>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry and returns its index.
    pub fn push(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::config(format!("duplicate parameter name `{name}`")));
        }
        self.entries.push(ParamEntry { name, kind, value });
        Ok(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.value)
    }

    pub fn value(&self, index: usize) -> &Tensor {
        &self.entries[index].value
    }

    pub fn value_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.entries[index].value
    }

    pub fn kind(&self, index: usize) -> ParamKind {
        self.entries[index].kind
    }

    /// Total number of scalar values.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.kind == ParamKind::Trainable).map(|e| e.value.len()).sum()
    }

    /// Same names, kinds, shapes and order.
    pub fn is_compatible(&self, other: &ParameterSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.kind == b.kind && a.value.shape() == b.value.shape())
    }

    pub(crate) fn ensure_compatible(&self, other: &ParameterSet) -> Result<()> {
        if self.is_compatible(other) {
            Ok(())
        } else {
            Err(Error::contract("parameter sets do not share the same architecture"))
        }
    }

    /// `alpha * self + (1 - alpha) * other`, entry by entry.
    pub fn blend(&self, other: &ParameterSet, alpha: f64) -> Result<ParameterSet> {
        self.ensure_compatible(other)?;
        let mut out = self.clone();
        for (dst, src) in out.entries.iter_mut().zip(&other.entries) {
            for (d, s) in dst.value.data_mut().iter_mut().zip(src.value.data()) {
                *d = alpha * *d + (1.0 - alpha) * s;
            }
        }
        Ok(out)
    }

    /// Largest absolute element-wise difference across all entries.
    pub fn max_abs_diff(&self, other: &ParameterSet) -> Result<f64> {
        self.ensure_compatible(other)?;
        Ok(self.entries.iter().zip(&other.entries).map(|(a, b)| a.value.max_abs_diff(&b.value)).fold(0.0, f64::max))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            let name = e.name.as_bytes();
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[e.kind.to_byte()])?;
            let shape = e.value.shape();
            w.write_all(&(shape.len() as u64).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in e.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(8 + self.scalar_count() * 8 + self.entries.len() * 64);
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<ParameterSet> {
        let count = read_u64(&mut r)?;
        let mut set = ParameterSet::new();
        for _ in 0..count {
            let name_len = read_len(&mut r, 1 << 16)?;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::format("parameter name is not valid UTF-8"))?;
            let mut kind = [0u8; 1];
            r.read_exact(&mut kind)?;
            let kind = ParamKind::from_byte(kind[0])?;
            let rank = read_len(&mut r, 16)?;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_len(&mut r, 1 << 32)?);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            let mut buf = [0u8; 8];
            for _ in 0..len {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            let value = Tensor::new(shape, data).map_err(|e| Error::format(e.to_string()))?;
            set.push(name, kind, value).map_err(|e| Error::format(e.to_string()))?;
        }
        Ok(set)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ParameterSet> {
        let mut cursor = bytes;
        let set = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::format(format!("{} trailing bytes after parameter set", cursor.len())));
        }
        Ok(set)
    }

    /// SHA-256 of the binary serialization, hex encoded.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_len<R: Read>(r: &mut R, limit: u64) -> Result<usize> {
    let v = read_u64(r)?;
    if v > limit {
        return Err(Error::format(format!("length field {v} exceeds limit {limit}")));
    }
    Ok(v as usize)
}
