//! Binary container of named `f64` arrays.
//!
//! Used for checkpoints, trace archives, and dataset images. Values are
//! stored as little-endian bit patterns, so a write/read cycle is bit-exact
//! (NaN payloads included). Human-readable metadata travels in a separate
//! TOML sidecar, not in this container.
//!
//! Layout: magic `GLB1`, entry count (u64 LE), then per entry:
//! name length (u64) + UTF-8 name, ndim (u64), dims (u64 each),
//! data (f64 LE, row-major).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GLB1";

/// Ordered map of named arrays. BTreeMap keeps serialization order stable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArrayStore {
    entries: BTreeMap<String, ArrayD<f64>>,
}

impl ArrayStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Serialization(format!("missing array {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (name, arr) in &self.entries {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(arr.ndim() as u64).to_le_bytes())?;
            for &d in arr.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let std = arr.as_standard_layout();
            let mut buf = Vec::with_capacity(std.len() * 8);
            for v in std.iter() {
                buf.extend_from_slice(&v.to_bits().to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Serialization("bad array-store magic".into()));
        }
        let count = read_u64(r)? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u64(r)? as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| Error::Serialization("non-utf8 array name".into()))?;
            let ndim = read_u64(r)? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(read_u64(r)? as usize);
            }
            let len: usize = dims.iter().product();
            let mut data = vec![0f64; len];
            let mut buf = [0u8; 8];
            for slot in data.iter_mut() {
                r.read_exact(&mut buf)?;
                *slot = f64::from_bits(u64::from_le_bytes(buf));
            }
            let arr = ArrayD::from_shape_vec(IxDyn(&dims), data)
                .map_err(|e| Error::Serialization(format!("bad array shape: {e}")))?;
            entries.insert(name, arr);
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

/// Write `store` next to a TOML-serializable metadata sidecar at
/// `path` + `.toml`.
pub fn save_with_sidecar<M: serde::Serialize>(
    store: &ArrayStore,
    meta: &M,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    store.save(path)?;
    let text = toml::to_string_pretty(meta)?;
    std::fs::write(sidecar_path(path), text)?;
    Ok(())
}

pub fn load_with_sidecar<M: serde::de::DeserializeOwned>(
    path: impl AsRef<Path>,
) -> Result<(ArrayStore, M)> {
    let path = path.as_ref();
    let store = ArrayStore::load(path)?;
    let text = std::fs::read_to_string(sidecar_path(path))?;
    let meta = toml::from_str(&text)?;
    Ok((store, meta))
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".toml");
    std::path::PathBuf::from(s)
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
