//! `SSVTCKPT` binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "SSVTCKPT"
//! version   u32      1
//! count     u32      number of tensors
//! per tensor:
//!   name    u32 length + UTF-8 bytes
//!   rank    u32
//!   dims    u64 × rank
//!   values  f64 × product(dims), IEEE-754
//! metadata  u32 count, then per entry u32 length + UTF-8 key, u32 length + UTF-8 value
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SSVTCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub metadata: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Tensors whose names start with `prefix`, with the prefix stripped.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Tensor)> + 'a {
        self.tensors
            .iter()
            .filter_map(move |(n, t)| n.strip_prefix(prefix).map(|s| (s, t)))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode(&self.tensors, &self.metadata)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len(), "string length")?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn encode(tensors: &[(String, Tensor)], metadata: &[(String, String)]) -> Result<Vec<u8>> {
    let mut seen = BTreeSet::new();
    for (name, _) in tensors {
        if name.is_empty() {
            return Err(Error::Checkpoint("empty tensor name".into()));
        }
        if !seen.insert(name.as_str()) {
            return Err(Error::DuplicateName(name.clone()));
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, tensors.len(), "tensor count")?;
    for (name, t) in tensors {
        put_str(&mut out, name)?;
        put_u32(&mut out, t.rank(), "rank")?;
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    put_u32(&mut out, metadata.len(), "metadata count")?;
    for (k, v) in metadata {
        put_str(&mut out, k)?;
        put_str(&mut out, v)?;
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, tensors: &[(String, Tensor)], metadata: &[(String, String)]) -> Result<()> {
    let bytes = encode(tensors, metadata)?;
    fs::write(path, bytes)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated(what))?;
        let s = self.bytes.get(self.pos..end).ok_or(Error::Truncated(what))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &'static str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(8, "magic").map_err(|_| Error::BadMagic(bytes.to_vec()))?;
    if magic != MAGIC {
        return Err(Error::BadMagic(magic.to_vec()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = r.u32("tensor count")?;
    let mut seen = BTreeSet::new();
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name = r.string("tensor name")?;
        if !seen.insert(name.clone()) {
            return Err(Error::DuplicateName(name));
        }
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            let d = r.u64("dims")?;
            shape.push(usize::try_from(d).map_err(|_| Error::Checkpoint(format!("dimension {d} too large")))?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: element count overflows")))?;
        let raw = r.take(numel.checked_mul(8).ok_or(Error::Truncated("values"))?, "values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        tensors.push((name, t));
    }
    let n_meta = r.u32("metadata count")?;
    let mut metadata = Vec::new();
    for _ in 0..n_meta {
        let k = r.string("metadata key")?;
        let v = r.string("metadata value")?;
        metadata.push((k, v));
    }
    Ok(Checkpoint { tensors, metadata })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Vec<(String, Tensor)>, Vec<(String, String)>) {
        let t = Tensor::new(&[2, 2], vec![-0.0, f64::MIN_POSITIVE / 8.0, 1.5, -3.25]).unwrap();
        let u = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        (
            vec![("a.w".into(), t), ("b".into(), u)],
            vec![("seed".into(), "7".into()), ("config".into(), "x = 1\n".into())],
        )
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (t, m) = sample();
        let ck = decode(&encode(&t, &m).unwrap()).unwrap();
        assert_eq!(ck.tensors.len(), 2);
        for ((na, a), (nb, b)) in ck.tensors.iter().zip(&t) {
            assert_eq!(na, nb);
            assert!(a.bits_eq(b));
        }
        assert_eq!(ck.metadata, m);
        assert_eq!(ck.meta("seed"), Some("7"));
    }

    #[test]
    fn distinct_diagnostics() {
        let (t, m) = sample();
        let mut bytes = encode(&t, &m).unwrap();
        let mut bad = bytes.clone();
        bad[..8].copy_from_slice(b"XXXXXXXX");
        assert!(matches!(decode(&bad), Err(Error::BadMagic(_))));
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::UnsupportedVersion(2))));
        let good = encode(&t, &m).unwrap();
        assert!(matches!(decode(&good[..good.len() - 3]), Err(Error::Truncated(_))));
        assert!(matches!(decode(&good[..30]), Err(Error::Truncated(_))));
        let dup = vec![t[0].clone(), t[0].clone()];
        assert!(matches!(encode(&dup, &m), Err(Error::DuplicateName(_))));
    }
}
