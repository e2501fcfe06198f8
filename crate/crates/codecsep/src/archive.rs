//! NTAR1 tensor archives.
//!
//! Layout, little-endian throughout: magic `NTAR1`; u32 tensor count; per
//! tensor a u32 name length, the UTF-8 name, a u8 dtype code (0 = f32), a u32
//! rank, one u64 per dimension and the row-major payload; then a u32 length
//! and a UTF-8 block of `key=value` lines.

use std::path::Path;

use codecsep_core::{Checkpoint, NamedTensor, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"NTAR1";
pub const DTYPE_F32: u8 = 0;

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len_u32(ckpt.tensors.len(), "tensor count")?.to_le_bytes());
    for t in &ckpt.tensors {
        out.extend_from_slice(&len_u32(t.name.len(), "name length")?.to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(DTYPE_F32);
        out.extend_from_slice(&len_u32(t.tensor.shape.len(), "rank")?.to_le_bytes());
        for &d in &t.tensor.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &t.tensor.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut meta = String::new();
    for (k, v) in &ckpt.metadata {
        if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Archive(format!("metadata entry `{k}` cannot be stored as a key=value line")));
        }
        meta.push_str(k);
        meta.push('=');
        meta.push_str(v);
        meta.push('\n');
    }
    out.extend_from_slice(&len_u32(meta.len(), "metadata length")?.to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    Ok(out)
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Archive(format!("{what} {n} does not fit in u32")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(what));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn utf8(&mut self, n: usize, what: &'static str) -> Result<&'a str> {
        std::str::from_utf8(self.take(n, what)?).map_err(|_| Error::Archive(format!("{what} is not UTF-8")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(MAGIC.len(), "magic").ok() != Some(&MAGIC[..]) {
        return Err(Error::BadMagic);
    }
    let count = c.u32("tensor count")?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = c.u32("name length")? as usize;
        let name = c.utf8(name_len, "tensor name")?.to_string();
        let dtype = c.take(1, "dtype")?[0];
        if dtype != DTYPE_F32 {
            return Err(Error::UnknownDtype(dtype));
        }
        let rank = c.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(usize::try_from(c.u64("dimension")?).map_err(|_| Error::Truncated("payload"))?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or(Error::Truncated("payload"))?;
        let payload = c.take(numel, "payload")?;
        let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        tensors.push(NamedTensor { name, tensor: Tensor::new(shape, data)? });
    }
    let meta_len = c.u32("metadata length")? as usize;
    let meta = c.utf8(meta_len, "metadata")?;
    let mut metadata = Vec::new();
    for line in meta.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Archive(format!("metadata line `{line}` has no `=`")))?;
        metadata.push((k.to_string(), v.to_string()));
    }
    if c.pos != bytes.len() {
        return Err(Error::Archive(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(Checkpoint { tensors, metadata })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode(ckpt)?).map_err(Error::io(path))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path).map_err(Error::io(path))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        ckpt.tensors.push(NamedTensor { name: "a.weight".into(), tensor: Tensor::new(vec![2, 3], vec![1.0, -0.5, f32::MIN_POSITIVE, 3.25, 0.0, -0.0]).unwrap() });
        ckpt.tensors.push(NamedTensor { name: "scalar".into(), tensor: Tensor::new(vec![], vec![7.0]).unwrap() });
        ckpt.set_meta("kind", "test");
        ckpt.set_meta("note", "a = b");
        ckpt
    }

    #[test]
    fn byte_layout() {
        let mut ckpt = Checkpoint::default();
        ckpt.tensors.push(NamedTensor { name: "w".into(), tensor: Tensor::new(vec![1], vec![1.0]).unwrap() });
        ckpt.set_meta("k", "v");
        let mut expected = b"NTAR1".to_vec();
        expected.extend([1, 0, 0, 0, 1, 0, 0, 0, b'w', 0, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0]);
        expected.extend(1.0f32.to_le_bytes());
        expected.extend([4, 0, 0, 0, b'k', b'=', b'v', b'\n']);
        assert_eq!(encode(&ckpt).unwrap(), expected);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = sample();
        let back = decode(&encode(&ckpt).unwrap()).unwrap();
        assert_eq!(back.metadata, ckpt.metadata);
        for (a, b) in back.tensors.iter().zip(&ckpt.tensors) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.shape, b.tensor.shape);
            let bits = |t: &Tensor| t.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.tensor), bits(&b.tensor));
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = encode(&sample()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::BadMagic)));
        assert!(matches!(decode(&bytes[..3]), Err(Error::BadMagic)));
        for cut in [6, 12, 20, 30, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Truncated(_))), "cut at {cut}");
        }
        let mut dtype = bytes.clone();
        dtype[9 + 4 + "a.weight".len()] = 3;
        assert!(matches!(decode(&dtype), Err(Error::UnknownDtype(3))));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(decode(&long), Err(Error::Archive(_))));
    }

    #[test]
    fn zero_tensor_archive_is_valid() {
        let back = decode(&encode(&Checkpoint::default()).unwrap()).unwrap();
        assert!(back.tensors.is_empty() && back.metadata.is_empty());
    }

    #[test]
    fn unstorable_metadata_is_refused() {
        let mut ckpt = Checkpoint::default();
        ckpt.set_meta("a=b", "c");
        assert!(encode(&ckpt).is_err());
    }
}
