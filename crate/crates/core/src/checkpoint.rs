//! Binary checkpoint container: named little-endian `f32` tensors.
//!
//! Layout: `"DCRG"`, version `u32`, tensor count `u32`, then per tensor a
//! `u16` name length, the UTF-8 name, dtype `u8` (0 = f32), rank `u8`,
//! `u64` dims and the raw values. All integers are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"DCRG";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Ordered list of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor<f32>)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `value` converted to `f32`; names must be unique.
    pub fn push<T: Real>(&mut self, name: impl Into<String>, value: &Tensor<T>) {
        let name = name.into();
        assert!(self.get(&name).is_none(), "duplicate checkpoint entry {name}");
        self.entries.push((name, value.cast()));
    }

    pub fn push_scalar(&mut self, name: impl Into<String>, value: f64) {
        self.push(name, &Tensor::<f64>::scalar(value));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<f32>> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry {name}")))
    }

    /// Entry converted to `T`, which must have shape `shape`.
    pub fn tensor<T: Real>(&self, name: &str, shape: &[usize]) -> Result<Tensor<T>> {
        let t = self.require(name)?;
        if t.shape() != shape {
            return Err(Error::Checkpoint(format!(
                "entry {name} has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(t.cast())
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let t = self.require(name)?;
        if t.len() != 1 {
            return Err(Error::Checkpoint(format!("entry {name} is not a scalar")));
        }
        Ok(t.data()[0] as f64)
    }

    /// Integer-valued vector entry.
    pub fn integers(&self, name: &str) -> Result<Vec<usize>> {
        self.require(name)?
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::Checkpoint(format!("entry {name} holds non-integer {v}")))
                }
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = u32::try_from(self.entries.len()).map_err(|_| Error::Checkpoint("too many tensors".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, t) in &self.entries {
            let len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            let rank = u8::try_from(t.rank()).map_err(|_| Error::Checkpoint(format!("rank too large for {name}")))?;
            out.push(rank);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32("tensor count")?;
        let mut entries = Vec::with_capacity(count.min(1 << 16) as usize);
        for _ in 0..count {
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let dtype = r.u8("dtype")?;
            if dtype != DTYPE_F32 {
                return Err(Error::Checkpoint(format!("unsupported dtype {dtype} for {name}")));
            }
            let rank = r.u8("rank")? as usize;
            if rank == 0 {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has rank 0; scalars are stored as [1]"
                )));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = r.u64("dim")?;
                shape.push(usize::try_from(d).map_err(|_| Error::Checkpoint(format!("dim {d} too large")))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} too large")))?;
            let raw = r.take(n, "tensor data")?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::from_vec(&shape, data).map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
            entries.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new();
        c.push(
            "a",
            &Tensor::<f32>::from_vec(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, f32::MIN_POSITIVE, -0.0]).unwrap(),
        );
        c.push_scalar("meta/step", 7.0);
        c
    }

    #[test]
    fn hand_built_bytes() {
        let mut c = Checkpoint::new();
        c.push("w", &Tensor::<f32>::from_vec(&[2], vec![1.0, -2.0]).unwrap());
        let mut expect = b"DCRG".to_vec();
        expect.extend([1, 0, 0, 0, 1, 0, 0, 0]);
        expect.extend([1, 0, b'w', 0, 1]);
        expect.extend([2, 0, 0, 0, 0, 0, 0, 0]);
        expect.extend([0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0]);
        assert_eq!(c.to_bytes().unwrap(), expect);
        assert_eq!(Checkpoint::from_bytes(&expect).unwrap(), c);
    }

    #[test]
    fn byte_exact_round_trip() {
        let bytes = sample().to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.scalar("meta/step").unwrap(), 7.0);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [0, 3, 8, 11, 20, bytes.len() - 1] {
            assert!(
                matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Checkpoint(_))),
                "cut {cut}"
            );
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.dcrg");
        sample().write(&p).unwrap();
        assert_eq!(Checkpoint::read(&p).unwrap(), sample());
        assert!(matches!(
            Checkpoint::read(&dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn arbitrary_tensors_round_trip(dims in prop::collection::vec(1usize..4, 1..5), seed in any::<u32>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n).map(|k| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(k as u32 * 97) & 0xff7f_ffff)).collect();
            let t = Tensor::from_vec(&dims, data).unwrap();
            let c = Checkpoint { entries: vec![("x".into(), t)] };
            let bytes = c.to_bytes().unwrap();
            prop_assert_eq!(Checkpoint::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes);
        }
    }
}
