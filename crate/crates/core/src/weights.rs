//! Named parameter tensors and their on-disk format.
//!
//! File layout ("NVCW"): magic, u16 version, u32 tensor count; per tensor a
//! u16 name length, the UTF-8 name, u8 dtype (0 = f32), u8 rank, u32
//! dims[rank], then the raw little-endian payload. Tensors are written in
//! sorted name order, so save -> load -> save is byte-identical.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{CodecError, Result};
use crate::tensor::{Dims, Tensor};
use crate::Tensor32;

const MAGIC: &[u8; 4] = b"NVCW";
const VERSION: u16 = 1;

/// Ordered name -> tensor map shared by every module's parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    tensors: BTreeMap<String, Tensor32>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor32) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor32> {
        self.tensors
            .get(name)
            .ok_or_else(|| CodecError::Weights(format!("missing tensor '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor32)> {
        self.tensors.iter()
    }

    pub fn as_map(&self) -> &BTreeMap<String, Tensor32> {
        &self.tensors
    }

    pub fn as_map_mut(&mut self) -> &mut BTreeMap<String, Tensor32> {
        &mut self.tensors
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor32> {
        self.tensors
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor32>) -> Self {
        WeightStore { tensors }
    }

    /// Merge `other` in, overwriting duplicates.
    pub fn extend(&mut self, other: WeightStore) {
        self.tensors.extend(other.tensors);
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            let nb = name.as_bytes();
            if nb.len() > u16::MAX as usize {
                return Err(CodecError::Weights("tensor name too long".into()));
            }
            w.write_all(&(nb.len() as u16).to_le_bytes())?;
            w.write_all(nb)?;
            w.write_all(&[0u8])?; // dtype f32
            let d = t.dims();
            w.write_all(&[4u8])?; // rank
            for dim in d.as_array() {
                w.write_all(&(dim as u32).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CodecError::Weights("bad magic, not a weights file".into()));
        }
        let version = read_u16(&mut r)?;
        if version != VERSION {
            return Err(CodecError::Weights(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u16(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| CodecError::Weights("non-UTF8 tensor name".into()))?;
            let mut meta = [0u8; 2];
            r.read_exact(&mut meta)?;
            if meta[0] != 0 {
                return Err(CodecError::Weights(format!("unsupported dtype {}", meta[0])));
            }
            let rank = meta[1] as usize;
            if rank != 4 {
                return Err(CodecError::Weights(format!("unsupported rank {rank}")));
            }
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = read_u32(&mut r)? as usize;
            }
            let dims = Dims::new(dims[0], dims[1], dims[2], dims[3]);
            let mut data = vec![0f32; dims.len()];
            for v in &mut data {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                *v = f32::from_le_bytes(b);
            }
            tensors.insert(name, Tensor::from_vec(dims, data).map_err(CodecError::Tensor)?);
        }
        Ok(WeightStore { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{uniform_tensor, DetRng};

    #[test]
    fn roundtrip_is_byte_identical() {
        let mut r = DetRng::seeded(9);
        let mut ws = WeightStore::new();
        ws.insert("b.conv.w", uniform_tensor(Dims::new(4, 3, 3, 3), -1.0, 1.0, &mut r));
        ws.insert("a.bias", uniform_tensor(Dims::new(1, 4, 1, 1), -1.0, 1.0, &mut r));
        let mut bytes1 = Vec::new();
        ws.write_to(&mut bytes1).unwrap();
        let back = WeightStore::read_from(bytes1.as_slice()).unwrap();
        assert_eq!(back, ws);
        let mut bytes2 = Vec::new();
        back.write_to(&mut bytes2).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(WeightStore::read_from(&b"DVRT...."[..]).is_err());
        assert!(WeightStore::read_from(&b"NV"[..]).is_err());
    }

    #[test]
    fn missing_tensor_reported_by_name() {
        let ws = WeightStore::new();
        let err = ws.get("net.w").unwrap_err();
        assert!(err.to_string().contains("net.w"));
    }
}
