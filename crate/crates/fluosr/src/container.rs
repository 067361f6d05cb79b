//! Versioned binary key-value container used for checkpoints and
//! feature-extractor weights.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "FLUOSR\0\x01"
//! version  u32
//! count    u64
//! count records, sorted by name:
//!   name_len u32, name (UTF-8)
//!   dtype    u8     0 = f32, 1 = f64, 2 = u64, 3 = UTF-8 text
//!   ndim     u32, dims u64 x ndim
//!   data     product(dims) elements (text: dims = [byte length])
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use fluosr_core::{DType, Real, Tensor};

use crate::error::{data_err, FluoError, Result};

pub const MAGIC: [u8; 8] = *b"FLUOSR\0\x01";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    F32 { dims: Vec<usize>, data: Vec<f32> },
    F64 { dims: Vec<usize>, data: Vec<f64> },
    U64 { dims: Vec<usize>, data: Vec<u64> },
    Text(String),
}

impl Value {
    fn dtype_tag(&self) -> u8 {
        match self {
            Value::F32 { .. } => 0,
            Value::F64 { .. } => 1,
            Value::U64 { .. } => 2,
            Value::Text(_) => 3,
        }
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Self {
        let dims = t.shape().to_vec();
        match T::DTYPE {
            DType::F32 => Value::F32 {
                dims,
                data: t.data().iter().map(|v| v.as_f64() as f32).collect(),
            },
            DType::F64 => Value::F64 {
                dims,
                data: t.data().iter().map(|v| v.as_f64()).collect(),
            },
        }
    }

    /// Converts stored floats to `T`, whichever precision they were saved in.
    pub fn to_tensor<T: Real>(&self, name: &str) -> Result<Tensor<T>> {
        let t = match self {
            Value::F32 { dims, data } => Tensor::new(dims.clone(), data.iter().map(|&v| T::from_f64(f64::from(v))).collect()),
            Value::F64 { dims, data } => Tensor::new(dims.clone(), data.iter().map(|&v| T::from_f64(v)).collect()),
            _ => return Err(data_err!("record `{name}` is not a float array")),
        };
        Ok(t?)
    }
}

/// Records by name; the sorted map makes encoding deterministic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub records: BTreeMap<String, Value>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, v: Value) {
        self.records.insert(name.into(), v);
    }

    pub fn get(&self, name: &str) -> Result<&Value> {
        self.records
            .get(name)
            .ok_or_else(|| data_err!("missing record `{name}`"))
    }

    pub fn put_u64(&mut self, name: &str, v: u64) {
        self.insert(name, Value::U64 { dims: vec![1], data: vec![v] });
    }

    pub fn put_f64(&mut self, name: &str, v: f64) {
        self.insert(name, Value::F64 { dims: vec![1], data: vec![v] });
    }

    pub fn put_text(&mut self, name: &str, v: &str) {
        self.insert(name, Value::Text(v.to_string()));
    }

    pub fn u64(&self, name: &str) -> Result<u64> {
        match self.get(name)? {
            Value::U64 { data, .. } if data.len() == 1 => Ok(data[0]),
            _ => Err(data_err!("record `{name}` is not a u64 scalar")),
        }
    }

    pub fn f64(&self, name: &str) -> Result<f64> {
        match self.get(name)? {
            Value::F64 { data, .. } if data.len() == 1 => Ok(data[0]),
            _ => Err(data_err!("record `{name}` is not an f64 scalar")),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.get(name)? {
            Value::Text(s) => Ok(s),
            _ => Err(data_err!("record `{name}` is not text")),
        }
    }

    /// Records whose names start with `prefix`, with the prefix removed.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Value)> + 'a {
        self.records
            .range(prefix.to_string()..)
            .take_while(move |(k, _)| k.starts_with(prefix))
            .map(move |(k, v)| (&k[prefix.len()..], v))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for (name, v) in &self.records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(v.dtype_tag());
            let dims: &[usize] = match v {
                Value::F32 { dims, .. } | Value::F64 { dims, .. } | Value::U64 { dims, .. } => dims,
                Value::Text(s) => &[s.len()],
            };
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for &d in dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match v {
                Value::F32 { data, .. } => data.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Value::F64 { data, .. } => data.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Value::U64 { data, .. } => data.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Value::Text(s) => out.extend_from_slice(s.as_bytes()),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "magic bytes")?;
        if magic != MAGIC {
            return Err(data_err!("not a checkpoint container (bad magic bytes {:02x?})", magic));
        }
        let version = r.u32("format version")?;
        if version != VERSION {
            return Err(data_err!("unsupported container version {version} (expected {VERSION})"));
        }
        let count = r.u64("record count")?;
        let mut records = BTreeMap::new();
        for i in 0..count {
            let start = r.pos;
            let len = r.u32("name length")? as usize;
            let name = String::from_utf8(r.take(len, "record name")?.to_vec())
                .map_err(|_| data_err!("record {i} at offset {start}: name is not UTF-8"))?;
            let tag = r.take(1, "dtype")?[0];
            let ndim = r.u32("ndim")? as usize;
            let mut dims = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                dims.push(usize::try_from(r.u64("dimension")?).map_err(|_| data_err!("`{name}`: dimension overflows"))?);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| data_err!("`{name}` at offset {start}: element count overflows"))?;
            let v = match tag {
                0 => Value::F32 {
                    data: r.array(n, 4, &name)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
                    dims,
                },
                1 => Value::F64 {
                    data: r.array(n, 8, &name)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                    dims,
                },
                2 => Value::U64 {
                    data: r.array(n, 8, &name)?.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect(),
                    dims,
                },
                3 => {
                    if ndim != 1 {
                        return Err(data_err!("text record `{name}` at offset {start} has {ndim} dims"));
                    }
                    let raw = r.array(n, 1, &name)?;
                    Value::Text(String::from_utf8(raw.to_vec()).map_err(|_| data_err!("`{name}`: text is not UTF-8"))?)
                }
                t => return Err(data_err!("record `{name}` at offset {start}: unknown dtype tag {t}")),
            };
            if records.insert(name.clone(), v).is_some() {
                return Err(data_err!("duplicate record `{name}` at offset {start}"));
            }
        }
        if r.pos != bytes.len() {
            return Err(data_err!("{} trailing bytes after offset {}", bytes.len() - r.pos, r.pos));
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| FluoError::io(dir, e))?;
        }
        // write then rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("partial");
        fs::write(&tmp, self.encode()).map_err(|e| FluoError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| FluoError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| FluoError::io(path, e))?;
        Self::decode(&bytes).map_err(|e| data_err!("{}: {e}", path.display()))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(data_err!(
                "truncated at offset {}: need {} bytes for {}, only {} remain",
                self.pos,
                n,
                what,
                self.bytes.len() - self.pos
            ));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array(&mut self, n: usize, size: usize, name: &str) -> Result<&'a [u8]> {
        let len = n
            .checked_mul(size)
            .ok_or_else(|| data_err!("`{name}`: byte length overflows"))?;
        self.take(len, &format!("data of `{name}`"))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new();
        c.insert("w", Value::from_tensor(&Tensor::<f32>::from_fn([2, 3], |i| i as f32 * 0.5)));
        c.put_u64("meta/epoch", 7);
        c.put_text("meta/config", "a = 1\n");
        c
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = sample().encode();
        let back = Container::decode(&bytes).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn every_truncation_is_reported_with_offset() {
        let bytes = sample().encode();
        for cut in 0..bytes.len() {
            let msg = Container::decode(&bytes[..cut]).unwrap_err().to_string();
            assert!(msg.contains("offset") || msg.contains("magic"), "cut {cut}: {msg}");
        }
    }

    #[test]
    fn bad_magic_and_version_rejected() {
        let mut bytes = sample().encode();
        bytes[0] ^= 0xff;
        assert!(Container::decode(&bytes).unwrap_err().to_string().contains("magic"));
        let mut bytes = sample().encode();
        bytes[8] = 9;
        assert!(Container::decode(&bytes).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn prefix_iteration() {
        let c = sample();
        let names: Vec<&str> = c.with_prefix("meta/").map(|(k, _)| k).collect();
        assert_eq!(names, ["config", "epoch"]);
    }
}
