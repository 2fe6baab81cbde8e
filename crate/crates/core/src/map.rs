//! Single-plane scalar fields shared by the filters, detectors and the network.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Marker stored in a [`GraynessMap`] for pixels that must never be selected.
pub const EXCLUDED: f64 = f64::INFINITY;

/// A `width x height` plane of scalars in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScalarMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Structural(format!(
                "{} values for a {width}x{height} map",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
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

    pub fn same_dims(&self, other: &ScalarMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarMap {
        ScalarMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pixelwise combination of two maps of equal size.
    pub fn zip_with(&self, other: &ScalarMap, f: impl Fn(f64, f64) -> f64) -> ScalarMap {
        assert!(self.same_dims(other), "map dimensions differ");
        ScalarMap {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &ScalarMap) -> f64 {
        assert!(self.same_dims(other), "map dimensions differ");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Mirror the map left to right.
    pub fn flip_horizontal(&self) -> ScalarMap {
        ScalarMap::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }
}

impl Index<usize> for ScalarMap {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl IndexMut<usize> for ScalarMap {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

/// Per-pixel grayness score: lower is grayer, [`EXCLUDED`] marks unusable pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct GraynessMap(pub ScalarMap);

impl GraynessMap {
    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.0.get(x, y)
    }

    pub fn is_excluded(&self, x: usize, y: usize) -> bool {
        self.0.get(x, y) == EXCLUDED
    }

    pub fn values(&self) -> &[f64] {
        self.0.data()
    }

    pub fn valid_count(&self) -> usize {
        self.0.data().iter().filter(|&&v| v != EXCLUDED).count()
    }

    /// Mark every pixel where `keep` is false as excluded.
    pub fn exclude_where(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.0.len());
        for (v, &k) in self.0.data_mut().iter_mut().zip(keep) {
            if !k {
                *v = EXCLUDED;
            }
        }
    }
}
