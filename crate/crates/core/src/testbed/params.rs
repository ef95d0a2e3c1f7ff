//! Named parameter tensors, kept flat so optimizers and gradient checks can
//! walk every one of them without knowing the architecture.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Params<T: Real = f64> {
    names: Vec<String>,
    tensors: Vec<DMatrix<T>>,
}

impl<T: Real> Default for Params<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Real> Params<T> {
    pub fn push(&mut self, name: impl Into<String>, value: DMatrix<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn size(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn tensors(&self) -> &[DMatrix<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [DMatrix<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DMatrix<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| DMatrix::zeros(t.nrows(), t.ncols()))
                .collect(),
        }
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn axpy(&mut self, scale: T, other: &Self) {
        debug_assert_eq!(self.names, other.names);
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.zip_apply(b, |x, y| *x += scale * y);
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            *t *= s;
        }
    }

    pub fn norm(&self) -> T {
        self.tensors
            .iter()
            .fold(T::zero(), |acc, t| acc + t.norm_squared())
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Add `N(0, scale^2)` noise to every entry.
    pub fn perturb(&mut self, scale: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in &mut self.tensors {
            for v in t.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += T::lit(scale * z);
            }
        }
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| t.map(|v| U::lit(v.to_f64_lossy())))
                .collect(),
        }
    }

    pub fn to_stored(&self) -> StoredParams {
        StoredParams {
            tensors: self
                .iter()
                .map(|(name, t)| StoredTensor {
                    name: name.to_string(),
                    rows: t.nrows(),
                    cols: t.ncols(),
                    data: t.transpose().iter().map(|v| v.to_f64_lossy()).collect(),
                })
                .collect(),
        }
    }

    /// Fill from stored values; names and shapes must match exactly.
    pub fn load_stored(&mut self, stored: &StoredParams) -> Result<()> {
        if stored.tensors.len() != self.len() {
            return Err(Error::Shape(format!(
                "stored parameters have {} tensors, model {}",
                stored.tensors.len(),
                self.len()
            )));
        }
        for (i, s) in stored.tensors.iter().enumerate() {
            let t = &self.tensors[i];
            if s.name != self.names[i] || s.rows != t.nrows() || s.cols != t.ncols() || s.data.len() != s.rows * s.cols {
                return Err(Error::Shape(format!(
                    "stored tensor {} ({}x{}) does not match {} ({}x{})",
                    s.name,
                    s.rows,
                    s.cols,
                    self.names[i],
                    t.nrows(),
                    t.ncols()
                )));
            }
        }
        for (t, s) in self.tensors.iter_mut().zip(&stored.tensors) {
            *t = DMatrix::from_row_slice(s.rows, s.cols, &s.data).map(T::lit);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredParams {
    pub tensors: Vec<StoredTensor>,
}

impl StoredParams {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("parameters serialize");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}
