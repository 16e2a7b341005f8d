use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// An ordered list of named parameter arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    pub params: Vec<Param>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> usize {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        self.params.push(Param { name: name.into(), shape: shape.to_vec(), data });
        self.params.len() - 1
    }

    /// Normal initialisation with standard deviation `gain / sqrt(fan_in)`.
    pub fn push_normal(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> usize {
        let normal = Normal::new(0.0, gain / (fan_in as f64).sqrt()).expect("finite deviation");
        let data = (0..shape.iter().product()).map(|_| normal.sample(rng)).collect();
        self.push(name, shape, data)
    }

    pub fn push_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        self.push(name, shape, vec![0.0; shape.iter().product()])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Copy every array onto the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.data.clone(), &p.shape, trainable)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|x| x.is_finite()))
    }
}

/// Adaptive moment estimation with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        Self { lr, beta1, beta2, eps, t: 0, m: zeros(), v: zeros() }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[&[f64]]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, p) in params.params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], grads[k]);
            for i in 0..p.data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p.data[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

const BLOB_MAGIC: &[u8; 4] = b"CFW1";

/// Named arrays as little-endian f32: magic, count, then per array the name,
/// the dimensions and the values, every length a u32.
pub fn write_blob(arrays: &[(String, &Param)], out: &mut impl Write) -> Result<()> {
    out.write_all(BLOB_MAGIC)?;
    out.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for (name, p) in arrays {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(p.shape.len() as u32).to_le_bytes())?;
        for &d in &p.shape {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut bytes = Vec::with_capacity(4 * p.data.len());
        for &x in &p.data {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
        out.write_all(&bytes)?;
    }
    Ok(())
}

pub fn read_blob(input: &mut impl Read) -> Result<Vec<Param>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut at = 0usize;
    let mut take = |len: usize| -> Result<&[u8]> {
        let end = at.checked_add(len).filter(|&e| e <= bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("parameter blob truncated at byte {at}")))?;
        let s = &bytes[at..end];
        at = end;
        Ok(s)
    };
    if take(4)? != BLOB_MAGIC {
        return Err(Error::Format("parameter blob has a bad magic number".into()));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes")) as usize;
    let count = u32_at(take(4)?);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u32_at(take(4)?);
        let name = String::from_utf8(take(len)?.to_vec())
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let ndim = u32_at(take(4)?);
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32_at(take(4)?));
        }
        let numel: usize = shape.iter().product();
        let data = take(4 * numel)?
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        out.push(Param { name, shape, data });
    }
    if at != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after parameter blob", bytes.len() - at)));
    }
    Ok(out)
}

/// Overwrite `set` from blob arrays named `prefix.<param name>`.
pub fn load_into(set: &mut ParamSet, prefix: &str, arrays: &[Param]) -> Result<()> {
    for p in &mut set.params {
        let key = format!("{prefix}.{}", p.name);
        let src = arrays
            .iter()
            .find(|a| a.name == key)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks array {key}")))?;
        if src.shape != p.shape {
            return Err(Error::Format(format!("array {key} has shape {:?}, expected {:?}", src.shape, p.shape)));
        }
        p.data.clone_from(&src.data);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn blob_round_trip_rounds_to_f32() {
        let mut set = ParamSet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        set.push_normal("w", &[2, 3], 3, 1.0, &mut rng);
        set.push_zeros("b", &[3]);
        let named: Vec<_> = set.params.iter().map(|p| (format!("g.{}", p.name), p)).collect();
        let mut bytes = Vec::new();
        write_blob(&named, &mut bytes).unwrap();
        let arrays = read_blob(&mut bytes.as_slice()).unwrap();
        let mut copy = set.clone();
        copy.params.iter_mut().for_each(|p| p.data.iter_mut().for_each(|x| *x = 7.0));
        load_into(&mut copy, "g", &arrays).unwrap();
        for (a, b) in set.params.iter().zip(&copy.params) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        assert!(read_blob(&mut &bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut set = ParamSet::default();
        set.push("x", &[2], vec![3.0, -2.0]);
        let mut opt = Adam::new(&set, 0.05, 0.0, 0.9, 1e-8);
        for _ in 0..2000 {
            let g: Vec<f64> = set.params[0].data.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut set, &[&g]);
        }
        assert!(set.params[0].data.iter().all(|x| x.abs() < 0.05));
    }
}
