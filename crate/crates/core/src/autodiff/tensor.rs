use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};

/// Dense `batch x channels x length` array, row-major.
///
/// Dense layers view each batch row as `channels * length` features.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn new(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if data.len() != want {
            bail!(
                Dimension,
                "shape {shape:?} needs {want} values, got {}",
                data.len()
            );
        }
        Ok(Self { shape, data })
    }

    /// `batch x 1 x features` from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let f = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * f);
        for r in rows {
            let r = r.as_ref();
            if r.len() != f {
                bail!(Dimension, "ragged rows: {} vs {f}", r.len());
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            shape: [rows.len(), 1, f],
            data,
        })
    }

    pub fn scalar(x: f64) -> Self {
        Self {
            shape: [1, 1, 1],
            data: vec![x],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn length(&self) -> usize {
        self.shape[2]
    }

    /// Values per batch row.
    pub fn features(&self) -> usize {
        self.shape[1] * self.shape[2]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, b: usize) -> &[f64] {
        let f = self.features();
        &self.data[b * f..(b + 1) * f]
    }

    pub fn reshaped(mut self, shape: [usize; 3]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            bail!(Dimension, "cannot reshape {:?} to {shape:?}", self.shape);
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}
