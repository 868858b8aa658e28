//! Binary checkpoints.
//!
//! Layout, all integers little-endian `u32`, no padding:
//! `"SGLA"`, version, tensor count, then per tensor the name length, UTF-8
//! name, rank, extents and the `f32` payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::{Element, Tensor};

pub const MAGIC: &[u8; 4] = b"SGLA";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub tensor: Tensor<f32>,
}

fn put(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode<F: Element>(store: &ParamStore<F>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + store.numel() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put(&mut out, store.len())?;
    for p in store.iter() {
        put(&mut out, p.name().len())?;
        out.extend_from_slice(p.name().as_bytes());
        put(&mut out, p.value().rank())?;
        for &e in p.value().shape() {
            put(&mut out, e)?;
        }
        for &v in p.value().data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated checkpoint: {what} needs {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Entry>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")?;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(r.u32("extent")?);
        }
        let numel = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let numel = numel.ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
        let payload = r.take(numel.saturating_mul(4), "payload")?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let tensor = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
        entries.push(Entry { name, tensor });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(entries)
}

pub fn save<F: Element>(store: &ParamStore<F>, path: &Path) -> Result<()> {
    let bytes = encode(store)?;
    let tmp = path.with_extension("sgla.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<Entry>> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    decode(&bytes)
}

/// Copies `entries` into `store`, which must hold the same names and shapes in the same order.
pub fn restore<F: Element>(store: &mut ParamStore<F>, entries: &[Entry]) -> Result<()> {
    let mismatch = |name: &str, reason: String| Error::CheckpointMismatch { name: name.to_string(), reason };
    for (i, p) in store.iter().enumerate() {
        let Some(e) = entries.get(i) else {
            return Err(mismatch(p.name(), "missing from checkpoint".into()));
        };
        if e.name != p.name() {
            return Err(mismatch(p.name(), format!("checkpoint holds {} at this position", e.name)));
        }
        if e.tensor.shape() != p.value().shape() {
            return Err(mismatch(
                p.name(),
                format!("shape {:?} in checkpoint, model expects {:?}", e.tensor.shape(), p.value().shape()),
            ));
        }
    }
    if let Some(extra) = entries.get(store.len()) {
        return Err(mismatch(&extra.name, "not present in the model".into()));
    }
    for (p, e) in store.iter_mut().zip(entries) {
        p.set_value(e.tensor.cast())?;
    }
    Ok(())
}

pub fn load<F: Element>(store: &mut ParamStore<F>, path: &Path) -> Result<()> {
    let entries = read(path)?;
    restore(store, &entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("a.weight", Tensor::from_f64([2, 3], &[1.0, -2.0, 3.5, 0.0, 1e-3, 7.0]).unwrap()).unwrap();
        s.add("a.bias", Tensor::from_f64([2], &[0.25, -0.5]).unwrap()).unwrap();
        s
    }

    #[test]
    fn byte_layout() {
        let mut s = ParamStore::<f32>::new();
        s.add("w", Tensor::from_f64([1], &[1.0]).unwrap()).unwrap();
        let bytes = encode(&s).unwrap();
        let mut expected = b"SGLA".to_vec();
        for v in [1u32, 1, 1] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        expected.push(b'w');
        for v in [1u32, 1] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = store();
        let entries = decode(&encode(&s).unwrap()).unwrap();
        let mut t = store();
        for p in t.iter_mut() {
            p.parts_mut().0.fill(9.0);
        }
        restore(&mut t, &entries).unwrap();
        for (a, b) in s.iter().zip(t.iter()) {
            assert!(a.value().bit_eq(b.value()));
        }
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = encode(&store()).unwrap();
        for cut in [0, 3, 10, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut {cut}");
        }
    }

    #[test]
    fn mismatch_names_first_offending_tensor() {
        let entries = decode(&encode(&store()).unwrap()).unwrap();
        let mut other = ParamStore::<f32>::new();
        other.add("a.weight", Tensor::zeros([2, 3])).unwrap();
        other.add("a.bias", Tensor::zeros([3])).unwrap();
        match restore(&mut other, &entries) {
            Err(Error::CheckpointMismatch { name, .. }) => assert_eq!(name, "a.bias"),
            r => panic!("{r:?}"),
        }
    }
}
