//! Named parameter storage and the binary checkpoint container.
//!
//! # Checkpoint layout
//!
//! All integers are little-endian.
//!
//! | field        | type            | notes                              |
//! |--------------|-----------------|------------------------------------|
//! | magic        | 8 bytes         | `AIMPARAM`                         |
//! | version      | u32             | currently `1`                      |
//! | entry count  | u32             |                                    |
//! | entries      | repeated        | one per parameter, in id order     |
//!
//! Each entry is `name_len: u32`, `name: [u8; name_len]` (UTF-8),
//! `ndim: u32`, `dims: [u64; ndim]`, then `prod(dims)` raw `f32` values in
//! row-major order.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;

use super::Real;
use crate::error::{ensure, Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AIMPARAM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    name: String,
    value: Array2<T>,
}

impl<T> Param<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Array2<T> {
        &self.value
    }
}

/// Flat ordered list of named parameter arrays.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<T>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    /// Adds a `rows×cols` array drawn uniformly from `±1/sqrt(fan_in)`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let value = Array2::from_shape_simple_fn((rows, cols), || {
            T::from_f64(rng.random_range(-bound..=bound)).expect("finite init")
        });
        self.add(name, value)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Array2<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<T> {
        &mut self.params[id.0].value
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Array2<T>> {
        self.params.iter_mut().map(|p| &mut p.value)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Copies every value from `other`; names and shapes must agree.
    pub fn copy_from(&mut self, other: &ParamSet<T>) -> Result<()> {
        ensure!(self.len() == other.len(), Contract, "copy_from: parameter counts differ");
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            ensure!(
                dst.name == src.name && dst.value.dim() == src.value.dim(),
                Contract,
                "copy_from: {} does not match {}",
                dst.name,
                src.name
            );
            dst.value.assign(&src.value);
        }
        Ok(())
    }

    /// Converts to another precision, keeping names and order.
    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.mapv(|x| U::from(x).expect("cast")),
                })
                .collect(),
        }
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&(p.name.len() as u32).to_le_bytes())?;
            w.write_all(p.name.as_bytes())?;
            w.write_all(&2u32.to_le_bytes())?;
            for d in p.value.shape() {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            for x in p.value.iter() {
                let v = x.to_f32().unwrap_or(f32::NAN);
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        ensure!(&magic == CHECKPOINT_MAGIC, Checkpoint, "bad magic {magic:?}");
        let version = read_u32(&mut r)?;
        ensure!(version == CHECKPOINT_VERSION, Checkpoint, "unsupported version {version}");
        let count = read_u32(&mut r)? as usize;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let ndim = read_u32(&mut r)? as usize;
            ensure!(ndim == 2, Checkpoint, "{name}: expected 2 dims, found {ndim}");
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            let mut buf = [0u8; 4];
            for _ in 0..rows * cols {
                read_exact(&mut r, &mut buf)?;
                data.push(T::from_f32(f32::from_le_bytes(buf)).expect("f32 converts"));
            }
            let value = Array2::from_shape_vec((rows, cols), data).expect("sized above");
            set.add(name, value);
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        self.write_checkpoint(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        Self::read_checkpoint(std::io::BufReader::new(file))
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Checkpoint(format!("truncated: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_layout_is_little_endian() {
        let mut p = ParamSet::<f32>::new();
        p.add("w", array![[1.0, -2.0]]);
        let mut bytes = Vec::new();
        p.write_checkpoint(&mut bytes).unwrap();
        assert_eq!(&bytes[..8], b"AIMPARAM");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1u32.to_le_bytes());
        assert_eq!(bytes[20], b'w');
        assert_eq!(&bytes[21..25], &2u32.to_le_bytes());
        assert_eq!(&bytes[25..33], &1u64.to_le_bytes());
        assert_eq!(&bytes[33..41], &2u64.to_le_bytes());
        assert_eq!(&bytes[41..45], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[45..49], &(-2.0f32).to_le_bytes());
        assert_eq!(bytes.len(), 49);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamSet::<f32>::new();
        p.add_uniform("a.w", 3, 4, 3, &mut rng);
        p.add_uniform("a.b", 1, 4, 3, &mut rng);
        let mut bytes = Vec::new();
        p.write_checkpoint(&mut bytes).unwrap();
        let q = ParamSet::<f32>::read_checkpoint(bytes.as_slice()).unwrap();
        for (a, b) in p.iter().zip(q.iter()) {
            assert_eq!(a.name(), b.name());
            assert_eq!(a.value(), b.value());
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(ParamSet::<f32>::read_checkpoint(&b"NOTPARAM\x01\0\0\0\0\0\0\0"[..]).is_err());
        let mut p = ParamSet::<f32>::new();
        p.add("w", array![[1.0]]);
        let mut bytes = Vec::new();
        p.write_checkpoint(&mut bytes).unwrap();
        bytes.pop();
        assert!(matches!(
            ParamSet::<f32>::read_checkpoint(bytes.as_slice()),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ParamSet::<f64>::new();
        let id = p.add_uniform("w", 16, 16, 16, &mut rng);
        assert!(p.get(id).iter().all(|x| x.abs() <= 0.25));
    }
}
