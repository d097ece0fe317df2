use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VBFP";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// One named parameter tensor and its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

/// Flat collection of every trainable tensor of a model, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
    pub seed: u64,
}

/// Weight initialization rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform in `+-sqrt(6 / (fan_in + fan_out))`.
    Glorot { fan_in: usize, fan_out: usize },
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
            seed,
        }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter '{name}'")));
        }
        let n: usize = shape.iter().product();
        let value = match init {
            Init::Zeros => vec![0.0; n],
            Init::Constant(c) => vec![c; n],
            Init::Glorot { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-a..a)).collect()
            }
        };
        self.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            grad: vec![0.0; n],
            value,
        })
    }

    fn push(&mut self, p: Param) -> Result<ParamId> {
        if self.index.contains_key(&p.name) {
            return Err(Error::invalid(format!("duplicate parameter '{}'", p.name)));
        }
        let id = self.params.len();
        self.index.insert(p.name.clone(), id);
        self.params.push(p);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|i| ParamId(*i))
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter '{name}'")))
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    #[inline]
    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].value
    }

    #[inline]
    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    #[inline]
    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].grad
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn size(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Maps a flat coordinate to `(param, offset)`.
    pub fn locate(&self, mut k: usize) -> Option<(ParamId, usize)> {
        for (i, p) in self.params.iter().enumerate() {
            if k < p.value.len() {
                return Some((ParamId(i), k));
            }
            k -= p.value.len();
        }
        None
    }

    pub fn grads_finite(&self) -> bool {
        self.params.iter().all(|p| p.grad.iter().all(|g| g.is_finite()))
    }

    /// Structural equality of names and shapes.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            let name = p.name.as_bytes();
            let len = u16::try_from(name.len()).map_err(|_| Error::invalid("parameter name too long"))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name);
            let rank = u8::try_from(p.shape.len()).map_err(|_| Error::invalid("rank too large"))?;
            out.push(rank);
            for d in &p.shape {
                let d = u32::try_from(*d).map_err(|_| Error::invalid("dimension too large"))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &p.value {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { path, bytes, pos: 0 };
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::format(path, "missing VBFP magic"));
        }
        let version = u16::from_le_bytes(cur.array()?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
        }
        let count = u32::from_le_bytes(cur.array()?) as usize;
        let mut store = ParamStore::new(0);
        for _ in 0..count {
            let len = u16::from_le_bytes(cur.array()?) as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::format(path, "parameter name is not UTF-8"))?
                .to_string();
            let rank = cur.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(cur.array()?) as usize);
            }
            let n: usize = shape.iter().product();
            let value: Vec<f64> = cur
                .take(8 * n)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            store.push(Param {
                name,
                shape,
                grad: vec![0.0; n],
                value,
            })?;
        }
        if cur.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes after last record"));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(path, &bytes)
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}

/// Deterministic RNG for a seed.
pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_and_layout() {
        let mut rng = rng_for(1);
        let mut s = ParamStore::new(1);
        s.add("a.w", &[2, 3], Init::Glorot { fan_in: 3, fan_out: 2 }, &mut rng).unwrap();
        s.add("a.b", &[2], Init::Constant(1.0), &mut rng).unwrap();
        let b = s.to_bytes().unwrap();
        assert_eq!(&b[0..4], b"VBFP");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        assert_eq!(u32::from_le_bytes([b[6], b[7], b[8], b[9]]), 2);
        assert_eq!(u16::from_le_bytes([b[10], b[11]]), 3);
        assert_eq!(&b[12..15], b"a.w");
        assert_eq!(b[15], 2);
        let back = ParamStore::from_bytes(Path::new("x"), &b).unwrap();
        assert!(back.same_layout(&s));
        for (p, q) in back.iter().zip(s.iter()) {
            assert_eq!(p.value, q.value);
        }
        assert!(ParamStore::from_bytes(Path::new("x"), &b[..b.len() - 1]).is_err());
    }

    #[test]
    fn glorot_bounds_and_duplicates() {
        let mut rng = rng_for(2);
        let mut s = ParamStore::new(2);
        let id = s.add("w", &[10, 20], Init::Glorot { fan_in: 20, fan_out: 10 }, &mut rng).unwrap();
        let a = (6.0f64 / 30.0).sqrt();
        assert!(s.value(id).iter().all(|v| v.abs() <= a));
        assert!(s.add("w", &[1], Init::Zeros, &mut rng).is_err());
        assert_eq!(s.locate(199), Some((id, 199)));
        assert_eq!(s.locate(200), None);
    }
}
