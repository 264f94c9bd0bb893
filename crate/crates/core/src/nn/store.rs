//! Named parameter arrays and the binary checkpoint container.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! magic        b"YNCK"
//! version      u32            (currently 1)
//! count        u32            number of array records
//! meta_len     u32            length of the metadata block
//! meta         meta_len bytes UTF-8 JSON (architecture, masks, normalization)
//! records      count × { name_len u32, name bytes, rank u32, dims u64 × rank,
//!                        payload f64 × prod(dims) }
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"YNCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    /// Adam first-moment buffer.
    pub m: Vec<f64>,
    /// Adam second-moment buffer.
    pub v: Vec<f64>,
}

/// Ordered collection of named arrays; iteration order is insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: Vec<ParamEntry>,
    /// Adam step counter.
    pub step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        data: Vec<f64>,
    ) -> Result<ParamId> {
        let name = name.into();
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::shape(
                "parameter",
                format!("`{name}` has {} values for shape {shape:?}", data.len()),
            ));
        }
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        self.entries.push(ParamEntry {
            name,
            shape: shape.to_vec(),
            data,
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        &mut self.entries[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e))
    }

    /// Total number of scalars across all arrays.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    /// Scalar count restricted to arrays whose name starts with `prefix`.
    pub fn scalar_count_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| e.data.len())
            .sum()
    }

    /// Clears optimizer moments and the step counter.
    pub fn reset_optimizer(&mut self) {
        self.step = 0;
        for e in &mut self.entries {
            e.m.iter_mut().for_each(|v| *v = 0.0);
            e.v.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Copies parameter values (not optimizer state) from `other`, which must
    /// have the same layout.
    pub fn copy_values_from(&mut self, other: &ParameterStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::shape(
                "parameter store",
                "different number of arrays",
            ));
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::shape(
                    "parameter store",
                    format!("`{}` {:?} vs `{}` {:?}", a.name, a.shape, b.name, b.shape),
                ));
            }
            a.data.copy_from_slice(&b.data);
        }
        Ok(())
    }

    pub fn encode(&self, meta: &str) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a container, returning the store and its metadata block.
    pub fn decode(bytes: &[u8]) -> Result<(Self, String)> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let count = read_u32(&mut r)? as usize;
        let meta_len = read_u32(&mut r)? as usize;
        let meta = String::from_utf8(take(&mut r, meta_len)?.to_vec())
            .map_err(|e| Error::Checkpoint(format!("metadata is not UTF-8: {e}")))?;
        let mut store = ParameterStore::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let name = String::from_utf8(take(&mut r, name_len)?.to_vec())
                .map_err(|e| Error::Checkpoint(format!("array name is not UTF-8: {e}")))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                read_exact(&mut r, &mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let payload = take(&mut r, n * 8)?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            store.add(name, &shape, data)?;
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok((store, meta))
    }

    pub fn save(&self, path: &Path, meta: &str) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.encode(meta))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(Error::Checkpoint(format!(
            "truncated: need {n} bytes, have {}",
            r.len()
        )));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    buf.copy_from_slice(take(r, buf.len())?);
    Ok(())
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_store() -> ParameterStore {
        let mut s = ParameterStore::new();
        s.add(
            "yulenet.g1.weight",
            &[8, 1, 64],
            (0..512).map(|i| i as f64 * 0.25 - 3.0).collect(),
        )
        .unwrap();
        s.add(
            "flow.block0.bias",
            &[4],
            vec![f64::MIN_POSITIVE, -0.0, 1e300, -7.5],
        )
        .unwrap();
        s.add("scalar", &[], vec![42.0]).unwrap();
        s
    }

    #[test]
    fn counts_scalars() {
        let s = sample_store();
        assert_eq!(s.scalar_count(), 517);
        assert_eq!(s.scalar_count_with_prefix("yulenet."), 512);
    }

    #[test]
    fn rejects_bad_containers() {
        let bytes = sample_store().encode("{}");
        assert!(matches!(
            ParameterStore::decode(&bytes[..bytes.len() - 3]),
            Err(Error::Checkpoint(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ParameterStore::decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(ParameterStore::decode(&extra).is_err());
    }

    #[test]
    fn rejects_duplicate_and_misshaped_arrays() {
        let mut s = sample_store();
        assert!(s.add("scalar", &[], vec![1.0]).is_err());
        assert!(s.add("x", &[2, 2], vec![1.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn save_load_save_is_byte_identical(
            arrays in prop::collection::vec(
                (prop::collection::vec(1usize..4, 0..3), any::<u64>()), 0..5),
            meta in "[ -~]{0,40}",
        ) {
            let mut s = ParameterStore::new();
            for (i, (shape, seed)) in arrays.iter().enumerate() {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|k| f64::from_bits(seed.wrapping_mul(k as u64 + 1) >> 2)).collect();
                s.add(format!("a{i}"), shape, data).unwrap();
            }
            let first = s.encode(&meta);
            let (back, meta_back) = ParameterStore::decode(&first).unwrap();
            prop_assert_eq!(&meta_back, &meta);
            prop_assert_eq!(back.encode(&meta_back), first);
            for ((_, a), (_, b)) in s.iter().zip(back.iter()) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert_eq!(&a.shape, &b.shape);
            }
        }
    }
}
