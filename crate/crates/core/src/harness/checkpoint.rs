//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "RDCK"  u32 version  u64 config_hash  u64 iteration  u32 entry_count
//! entry*: u32 name_len, name (utf-8), u8 dtype, u32 rank, u64 dims[rank], payload
//! ```
//!
//! dtype 1 is a 64-bit float payload, dtype 2 a 64-bit unsigned integer
//! payload (used for step counters, RNG words and sample orderings).

use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RDCK";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;
const DTYPE_U64: u8 = 2;

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    F64 { shape: Vec<usize>, data: Vec<f64> },
    U64 { shape: Vec<usize>, data: Vec<u64> },
}

impl Entry {
    pub fn tensor(t: &Tensor) -> Self {
        Entry::F64 {
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }

    pub fn words(data: Vec<u64>) -> Self {
        Entry::U64 {
            shape: vec![data.len()],
            data,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub iteration: u64,
    pub entries: IndexMap<String, Entry>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {}: wanted {n} more bytes",
                self.pos
            )));
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

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn insert(&mut self, name: impl Into<String>, entry: Entry) {
        self.entries.insert(name.into(), entry);
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        match self.entries.get(name) {
            Some(Entry::F64 { shape, data }) => Tensor::new(shape, data.clone()),
            Some(_) => Err(Error::Checkpoint(format!("entry {name} is not a float tensor"))),
            None => Err(Error::Checkpoint(format!("missing entry {name}"))),
        }
    }

    pub fn words(&self, name: &str) -> Result<&[u64]> {
        match self.entries.get(name) {
            Some(Entry::U64 { data, .. }) => Ok(data),
            Some(_) => Err(Error::Checkpoint(format!("entry {name} is not an integer entry"))),
            None => Err(Error::Checkpoint(format!("missing entry {name}"))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let (dtype, shape) = match entry {
                Entry::F64 { shape, .. } => (DTYPE_F64, shape),
                Entry::U64 { shape, .. } => (DTYPE_U64, shape),
            };
            out.push(dtype);
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match entry {
                Entry::F64 { data, .. } => data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                Entry::U64 { data, .. } => data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic, not a checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let config_hash = r.u64()?;
        let iteration = r.u64()?;
        let count = r.u32()?;
        let mut entries = IndexMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint(format!("entry name at byte {} is not utf-8", r.pos)))?;
            let dtype = r.u8()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let entry = match dtype {
                DTYPE_F64 => Entry::F64 {
                    data: (0..n).map(|_| r.u64().map(f64::from_bits)).collect::<Result<_>>()?,
                    shape,
                },
                DTYPE_U64 => Entry::U64 {
                    data: (0..n).map(|_| r.u64()).collect::<Result<_>>()?,
                    shape,
                },
                other => return Err(Error::Checkpoint(format!("entry {name}: unknown dtype {other}"))),
            };
            entries.insert(name, entry);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            config_hash,
            iteration,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let mut c = Checkpoint {
            config_hash: 0x0102,
            iteration: 7,
            ..Default::default()
        };
        c.insert("w", Entry::tensor(&Tensor::full(&[1], 1.5)));
        let bytes = c.encode();
        assert_eq!(&bytes[..4], b"RDCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 0x0102);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 7);
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 1);
        assert_eq!(&bytes[bytes.len() - 8..], &1.5f64.to_le_bytes());
        assert_eq!(Checkpoint::decode(&bytes).unwrap(), c);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::decode(b"NOPE").is_err());
        let mut c = Checkpoint::default();
        c.insert("x", Entry::words(vec![1, 2, 3]));
        let bytes = c.encode();
        assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() - 1]), Err(Error::Checkpoint(_))));
    }
}
