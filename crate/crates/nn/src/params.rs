use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::NnError;

const MAGIC: &[u8; 8] = b"POSTNN01";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the optimizer treats a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Trainable and subject to weight decay.
    Weight,
    /// Trainable, never decayed (biases, norm affine terms).
    Bias,
    /// Running statistics; updated by forward passes, not by the optimizer.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub value: Vec<f32>,
}

/// Owns every parameter of a model in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], kind: ParamKind, value: Vec<f32>) -> ParamId {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, value.len(), "parameter value length does not match shape");
        self.params.push(Param {
            name: name.into(),
            shape: shape.to_vec(),
            kind,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    /// He-normal initialisation for a tensor with the given fan-in.
    pub fn add_he<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        gain: f32,
        rng: &mut R,
    ) -> ParamId {
        let std = gain * (2.0 / fan_in.max(1) as f32).sqrt();
        let normal = Normal::new(0.0f32, std).expect("finite std");
        let numel: usize = shape.iter().product();
        let value = (0..numel).map(|_| normal.sample(rng)).collect();
        self.add(name, shape, ParamKind::Weight, value)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f32] {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind != ParamKind::Buffer)
            .map(|p| p.value.len())
            .sum()
    }

    /// Little-endian binary dump: magic, count, then per tensor its name,
    /// kind, dims and values.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), NnError> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            let kind: u8 = match p.kind {
                ParamKind::Weight => 0,
                ParamKind::Bias => 1,
                ParamKind::Buffer => 2,
            };
            w.write_all(&[kind])?;
            w.write_all(&(p.shape.len() as u32).to_le_bytes())?;
            for &d in &p.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in &p.value {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Replaces every value with the one stored in `r`. Names, kinds and
    /// shapes must match the architecture already registered here.
    pub fn load_from<R: Read>(&mut self, mut r: R) -> Result<(), NnError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Format("bad magic".into()));
        }
        let count = read_u32(&mut r)? as usize;
        if count != self.params.len() {
            return Err(NnError::Format(format!(
                "weight file has {count} tensors, architecture expects {}",
                self.params.len()
            )));
        }
        for p in &mut self.params {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| NnError::Format("non-utf8 name".into()))?;
            if name != p.name {
                return Err(NnError::Format(format!("expected tensor {}, found {name}", p.name)));
            }
            let mut kind = [0u8; 1];
            r.read_exact(&mut kind)?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            if shape != p.shape {
                return Err(NnError::Format(format!(
                    "tensor {name}: shape {shape:?} does not match {:?}",
                    p.shape
                )));
            }
            for v in p.value.iter_mut() {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                *v = f32::from_le_bytes(b);
            }
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
