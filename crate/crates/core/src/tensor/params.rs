//! Named parameter storage, initialisation and the checkpoint byte format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! u8   version
//! u32  entry count
//! per entry: u16 name length, name bytes (UTF-8), u8 rank, u32 dims[rank],
//!            u64 offset (in values, from the start of the data block)
//! f32  values ...
//! ```

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{numel, Tensor};
use crate::{Error, Real, Result};

pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Uniform in `±sqrt(3 / fan_in)`.
    FanIn(usize),
    Zeros,
    Const(f64),
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
}

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add<R: Rng>(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut R) -> Result<ParamId> {
        if self.id(name).is_some() {
            return Err(Error::Invalid(format!("duplicate parameter `{name}`")));
        }
        let n = numel(shape);
        let data: Vec<S> = match init {
            Init::FanIn(fan_in) => {
                let bound = libm::sqrt(3.0 / fan_in.max(1) as f64);
                (0..n).map(|_| S::from_f64(rng.gen_range(-bound..bound))).collect()
            }
            Init::Zeros => vec![S::zero(); n],
            Init::Const(v) => vec![S::from_f64(v); n],
        };
        let mut t = Tensor::new(shape, data)?;
        t.requires_grad = true;
        self.names.push(name.to_string());
        self.tensors.push(t);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad = None;
        }
    }

    pub fn add_grad(&mut self, id: ParamId, g: &[S]) {
        let t = &mut self.tensors[id.0];
        let n = t.len();
        let buf = t.grad.get_or_insert_with(|| vec![S::zero(); n]);
        buf.iter_mut().zip(g).for_each(|(d, &s)| *d += s);
    }

    pub fn scale_grads(&mut self, k: S) {
        for t in &mut self.tensors {
            if let Some(g) = &mut t.grad {
                g.iter_mut().for_each(|v| *v *= k);
            }
        }
    }

    pub fn grad_norm(&self, id: ParamId) -> f64 {
        self.tensors[id.0]
            .grad
            .as_ref()
            .map(|g| libm::sqrt(g.iter().map(|v| v.as_f64() * v.as_f64()).sum()))
            .unwrap_or(0.0)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Same names, shapes and values in another precision.
    pub fn cast<T: Real>(&self) -> ParamStore<T> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    /// Overwrites values from decoded checkpoint entries. Names and shapes
    /// must match this store exactly.
    pub fn load(&mut self, entries: &[(String, Vec<usize>, Vec<f32>)]) -> Result<()> {
        if entries.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                entries.len(),
                self.len()
            )));
        }
        for (name, shape, values) in entries {
            let id = self
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor `{name}`")))?;
            let t = &mut self.tensors[id.0];
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {shape:?}, model expects {:?}",
                    t.shape()
                )));
            }
            for (d, &v) in t.data_mut().iter_mut().zip(values) {
                *d = S::from_f64(v as f64);
            }
        }
        Ok(())
    }
}

pub fn encode_checkpoint<S: Real>(store: &ParamStore<S>) -> Vec<u8> {
    let mut out = vec![CHECKPOINT_VERSION];
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        let t = store.tensor(id);
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += t.len() as u64;
    }
    for id in store.ids() {
        for &v in store.tensor(id).data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Checkpoint("truncated".to_string()))?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Parses checkpoint bytes into `(name, shape, values)` entries.
#[allow(clippy::type_complexity)]
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Vec<usize>, Vec<f32>)>> {
    let mut r = Reader { bytes, pos: 0 };
    let version = r.u8()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = core::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("name is not UTF-8".to_string()))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let offset = r.u64()? as usize;
        manifest.push((name, shape, offset));
    }
    let data_start = r.pos;
    let total = (bytes.len() - data_start) / 4;
    manifest
        .into_iter()
        .map(|(name, shape, offset)| {
            let n = numel(&shape);
            if offset + n > total {
                return Err(Error::Checkpoint(format!("`{name}` runs past the data block")));
            }
            let values = (0..n)
                .map(|i| {
                    let p = data_start + 4 * (offset + i);
                    f32::from_le_bytes(bytes[p..p + 4].try_into().expect("4 bytes"))
                })
                .collect();
            Ok((name, shape, values))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn checkpoint_round_trip_preserves_values_bitwise() {
        let mut rng = seeded(3);
        let mut store = ParamStore::<f32>::new();
        store.add("a.weight", &[3, 4], Init::FanIn(4), &mut rng).unwrap();
        store.add("a.bias", &[3], Init::Const(0.25), &mut rng).unwrap();
        let bytes = encode_checkpoint(&store);
        assert_eq!(bytes[0], CHECKPOINT_VERSION);
        let entries = decode_checkpoint(&bytes).unwrap();
        let mut other = ParamStore::<f32>::new();
        other.add("a.weight", &[3, 4], Init::Zeros, &mut rng).unwrap();
        other.add("a.bias", &[3], Init::Zeros, &mut rng).unwrap();
        other.load(&entries).unwrap();
        for id in store.ids() {
            assert_eq!(store.tensor(id).data(), other.tensor(id).data());
        }
    }

    #[test]
    fn mismatched_checkpoint_is_rejected() {
        let mut rng = seeded(3);
        let mut store = ParamStore::<f32>::new();
        store.add("w", &[2, 2], Init::Zeros, &mut rng).unwrap();
        let bytes = encode_checkpoint(&store);
        let mut other = ParamStore::<f32>::new();
        other.add("w", &[4], Init::Zeros, &mut rng).unwrap();
        assert!(other.load(&decode_checkpoint(&bytes).unwrap()).is_err());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 2]).is_err());
        let mut bad = bytes.clone();
        bad[0] = 9;
        assert!(decode_checkpoint(&bad).is_err());
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut rng = seeded(0);
        let mut store = ParamStore::<f32>::new();
        store.add("w", &[1], Init::Zeros, &mut rng).unwrap();
        assert!(store.add("w", &[1], Init::Zeros, &mut rng).is_err());
    }
}
