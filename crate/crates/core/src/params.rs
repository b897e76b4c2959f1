//! Named, ordered parameter collections.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "parameter {name} with shape {shape:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            name,
            shape,
            values,
        })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            values: vec![0.0; len],
        }
    }
}

/// An ordered list of uniquely named arrays. Two sets are compatible when
/// names, order and shapes all agree.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_params(params: Vec<Param>) -> Result<Self> {
        let mut set = Self::new();
        for p in params {
            set.push(p)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, param: Param) -> Result<()> {
        if self.get(&param.name).is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate parameter name {}",
                param.name
            )));
        }
        self.params.push(param);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param> {
        self.params.iter_mut()
    }

    pub fn into_params(self) -> Vec<Param> {
        self.params
    }

    pub fn is_compatible(&self, other: &ParamSet) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub fn ensure_compatible(&self, other: &ParamSet) -> Result<()> {
        if self.is_compatible(other) {
            return Ok(());
        }
        let detail = self
            .params
            .iter()
            .zip(&other.params)
            .find(|(a, b)| a.name != b.name || a.shape != b.shape)
            .map(|(a, b)| format!("{}{:?} vs {}{:?}", a.name, a.shape, b.name, b.shape))
            .unwrap_or_else(|| format!("{} vs {} entries", self.len(), other.len()));
        Err(Error::IncompatibleParams(detail))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            params: self
                .params
                .iter()
                .map(|p| Param::zeros(p.name.clone(), p.shape.clone()))
                .collect(),
        }
    }

    /// `self += factor * other`, element-wise.
    pub fn add_scaled(&mut self, other: &ParamSet, factor: f64) -> Result<()> {
        self.ensure_compatible(other)?;
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            for (x, y) in a.values.iter_mut().zip(&b.values) {
                *x += factor * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for p in &mut self.params {
            for v in &mut p.values {
                *v *= factor;
            }
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.params.iter().flat_map(|p| p.values.iter().copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.params.iter_mut().flat_map(|p| p.values.iter_mut())
    }

    /// CRC32 over names, shapes and the exact bit patterns of all values.
    pub fn checksum(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        for p in &self.params {
            hasher.update(p.name.as_bytes());
            for d in &p.shape {
                hasher.update(&(*d as u64).to_le_bytes());
            }
            let bytes: Vec<u8> = p.values.iter().flat_map(|v| v.to_bits().to_le_bytes()).collect();
            hasher.update(&bytes);
        }
        hasher.finalize()
    }

    /// Largest absolute element-wise difference between two compatible sets.
    pub fn max_abs_diff(&self, other: &ParamSet) -> Result<f64> {
        self.ensure_compatible(other)?;
        Ok(self
            .values()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

impl<'a> IntoIterator for &'a ParamSet {
    type Item = &'a Param;
    type IntoIter = std::slice::Iter<'a, Param>;

    fn into_iter(self) -> Self::IntoIter {
        self.params.iter()
    }
}
