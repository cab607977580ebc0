//! The flat iterate type shared by every module.

use std::ops::{Deref, DerefMut};

/// Layout hint carried alongside the values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridShape {
    Flat,
    /// `side x side` image stored row-major.
    Square(usize),
    /// `rows x cols` matrix stored row-major (e.g. angles x detectors).
    Matrix(usize, usize),
}

/// A real vector with an optional grid layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GridVector {
    values: Vec<f64>,
    shape: GridShape,
}

impl GridVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, shape: GridShape::Flat }
    }

    /// Wraps `values` as a square image. Panics if the length is not `side^2`.
    pub fn square(values: Vec<f64>, side: usize) -> Self {
        assert_eq!(values.len(), side * side, "square grid length");
        Self { values, shape: GridShape::Square(side) }
    }

    pub fn matrix(values: Vec<f64>, rows: usize, cols: usize) -> Self {
        assert_eq!(values.len(), rows * cols, "matrix grid length");
        Self { values, shape: GridShape::Matrix(rows, cols) }
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Self::new(vec![value; len])
    }

    pub fn zeros(len: usize) -> Self {
        Self::filled(len, 0.0)
    }

    pub fn with_shape(mut self, shape: GridShape) -> Self {
        let expected = match shape {
            GridShape::Flat => self.values.len(),
            GridShape::Square(s) => s * s,
            GridShape::Matrix(r, c) => r * c,
        };
        assert_eq!(expected, self.values.len(), "shape does not match length");
        self.shape = shape;
        self
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.values, other)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn norm2(&self) -> f64 {
        self.dot(&self.values).sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        norm_inf(&self.values)
    }

    /// Elementwise map preserving the shape.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { values: self.values.iter().map(|&v| f(v)).collect(), shape: self.shape }
    }

    /// Elementwise combination with another slice of equal length.
    pub fn zip_map(&self, other: &[f64], f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.len(), other.len());
        Self {
            values: self.values.iter().zip(other).map(|(&a, &b)| f(a, b)).collect(),
            shape: self.shape,
        }
    }

    /// `self + alpha * d`
    pub fn axpy(&self, alpha: f64, d: &[f64]) -> Self {
        self.zip_map(d, |a, b| a + alpha * b)
    }

    pub fn sub(&self, other: &[f64]) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl Deref for GridVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl DerefMut for GridVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

impl From<Vec<f64>> for GridVector {
    fn from(values: Vec<f64>) -> Self {
        Self::new(values)
    }
}

impl FromIterator<f64> for GridVector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot length mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}
