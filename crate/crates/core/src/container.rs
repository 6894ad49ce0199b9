//! Binary model container shared by every model kind.
//!
//! ```text
//! magic        8 bytes  "CNERMDL1"
//! meta_len     u32 LE
//! metadata     meta_len bytes of UTF-8 `key=value\n` lines (sorted by key)
//! records      until end of input, sorted by parameter name:
//!   name_len   u32 LE
//!   name       UTF-8
//!   rank       u32 LE (1..=3)
//!   dims       rank × u32 LE
//!   data       product(dims) × f32 LE
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{DenseArray, Params, Parameter, Real};

pub const MAGIC: &[u8; 8] = b"CNERMDL1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub params: BTreeMap<String, DenseArray<f32>>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Container(format!("truncated {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn utf8(&mut self, n: usize, what: &str) -> Result<&'a str> {
        std::str::from_utf8(self.take(n, what)?).map_err(|_| Error::Container(format!("{what} is not UTF-8")))
    }
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        let mut c = Checkpoint::default();
        c.set("kind", kind);
        c
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.metadata.insert(key.to_string(), value.to_string());
    }

    pub fn kind(&self) -> Option<&str> {
        self.metadata.get("kind").map(String::as_str)
    }

    pub fn expect_kind(&self, expected: &str) -> Result<()> {
        match self.kind() {
            Some(k) if k == expected => Ok(()),
            found => Err(Error::KindMismatch {
                expected: expected.to_string(),
                found: found.unwrap_or("<none>").to_string(),
            }),
        }
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Container(format!("missing metadata key {key:?}")))
    }

    pub fn parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::Container(format!("bad value {raw:?} for metadata key {key:?}")))
    }

    /// Stores every parameter of `model` (converted to f32).
    pub fn put_params<T: Real, M: Params<T> + ?Sized>(&mut self, model: &M) {
        model.visit(&mut |p| {
            self.params.insert(p.name.clone(), p.value.cast());
        });
    }

    /// Loads stored values into `model`, requiring an exact name and shape
    /// match in both directions.
    pub fn take_params<T: Real, M: Params<T> + ?Sized>(&self, model: &mut M) -> Result<()> {
        let mut seen = 0;
        let mut err = None;
        model.visit_mut(&mut |p: &mut Parameter<T>| {
            if err.is_some() {
                return;
            }
            match self.params.get(&p.name) {
                Some(v) if v.dims() == p.dims() => {
                    p.value = v.cast();
                    seen += 1;
                }
                Some(v) => err = Some(Error::dims(p.name.clone(), p.dims(), v.dims())),
                None => err = Some(Error::Container(format!("missing parameter {:?}", p.name))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen != self.params.len() {
            return Err(Error::Container(format!(
                "container holds {} parameters, model expects {seen}",
                self.params.len()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut meta = String::new();
        for (k, v) in &self.metadata {
            if k.contains(['=', '\n']) || v.contains('\n') || k.is_empty() {
                return Err(Error::Container(format!("metadata entry {k:?} cannot be encoded")));
            }
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        let len32 = |n: usize| -> Result<[u8; 4]> {
            u32::try_from(n)
                .map(u32::to_le_bytes)
                .map_err(|_| Error::Container("length exceeds u32".into()))
        };
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&len32(meta.len())?);
        out.extend_from_slice(meta.as_bytes());
        for (name, arr) in &self.params {
            out.extend_from_slice(&len32(name.len())?);
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&len32(arr.rank())?);
            for &d in arr.dims() {
                out.extend_from_slice(&len32(d)?);
            }
            for v in arr.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Container("unknown magic bytes".into()));
        }
        let mut r = Reader { bytes, pos: MAGIC.len() };
        let meta_len = r.u32("metadata length")? as usize;
        let meta = r.utf8(meta_len, "metadata block")?;
        let mut ckpt = Checkpoint::default();
        for line in meta.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Container(format!("metadata line {line:?} lacks '='")))?;
            ckpt.metadata.insert(k.to_string(), v.to_string());
        }
        while r.pos < bytes.len() {
            let name_len = r.u32("record name length")? as usize;
            let name = r.utf8(name_len, "record name")?.to_string();
            let rank = r.u32("record rank")? as usize;
            if !(1..=3).contains(&rank) {
                return Err(Error::Container(format!("record {name:?} has rank {rank}")));
            }
            let dims = (0..rank)
                .map(|_| r.u32("record dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Container(format!("record {name:?} dims overflow")))?;
            let raw = r.take(
                count
                    .checked_mul(4)
                    .ok_or_else(|| Error::Container("record too large".into()))?,
                "record data",
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let arr = DenseArray::from_vec(&dims, data).map_err(|e| Error::Container(format!("record {name:?}: {e}")))?;
            if ckpt.params.insert(name.clone(), arr).is_some() {
                return Err(Error::Container(format!("duplicate record {name:?}")));
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
