use std::sync::Arc;

use ndarray::Array1;

use crate::error::{check_len, Error, Result};

/// Quadrature weights of a finite grid. Cheap to clone; vectors on the same
/// grid share one allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(Arc<Array1<f64>>);

impl Grid {
    pub fn new(weights: Array1<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidWeights("empty grid".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidWeights(
                "weights must be finite and nonnegative".into(),
            ));
        }
        if !weights.iter().any(|w| *w > 0.0) {
            return Err(Error::InvalidWeights("at least one weight must be positive".into()));
        }
        Ok(Self(Arc::new(weights)))
    }

    /// Plain Euclidean grid.
    pub fn unit(n: usize) -> Self {
        assert!(n > 0, "grid must be non-empty");
        Self(Arc::new(Array1::ones(n)))
    }

    /// Composite trapezoid weights on `n` equispaced nodes of [0, 1].
    pub fn trapezoid(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "trapezoid grid needs at least 2 nodes, got {n}"
            )));
        }
        let h = 1.0 / (n - 1) as f64;
        let mut w = Array1::from_elem(n, h);
        w[0] = 0.5 * h;
        w[n - 1] = 0.5 * h;
        Ok(Self(Arc::new(w)))
    }

    /// Nodes s_i = i/(n-1) matching [`Grid::trapezoid`].
    pub fn unit_interval_nodes(n: usize) -> Array1<f64> {
        if n == 1 {
            return Array1::zeros(1);
        }
        Array1::from_iter((0..n).map(|i| i as f64 / (n - 1) as f64))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn is_unit(&self) -> bool {
        self.0.iter().all(|w| *w == 1.0)
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0 == other.0
    }
}

/// Values on a grid together with the grid's quadrature weights.
///
/// Inner product is `sum w_i u_i v_i`; the p-norm is `(sum w_i |u_i|^p)^(1/p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedVector {
    values: Array1<f64>,
    grid: Grid,
}

impl WeightedVector {
    pub fn new(values: Array1<f64>, grid: Grid) -> Result<Self> {
        check_len(grid.len(), values.len())?;
        Ok(Self { values, grid })
    }

    pub fn from_weights(values: Array1<f64>, weights: Array1<f64>) -> Result<Self> {
        Self::new(values, Grid::new(weights)?)
    }

    pub fn unit(values: Array1<f64>) -> Self {
        let grid = Grid::unit(values.len());
        Self { values, grid }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self {
            values: Array1::zeros(grid.len()),
            grid: grid.clone(),
        }
    }

    /// Same grid, new values.
    pub fn with_values(&self, values: Array1<f64>) -> Result<Self> {
        Self::new(values, self.grid.clone())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array1<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array1<f64> {
        self.values
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn weights(&self) -> &Array1<f64> {
        self.grid.weights()
    }

    /// Weighted inner product; the weights of `self` are used.
    pub fn dot(&self, other: &WeightedVector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.dot_values(&other.values)
    }

    pub(crate) fn dot_values(&self, other: &Array1<f64>) -> f64 {
        self.values
            .iter()
            .zip(other.iter())
            .zip(self.weights().iter())
            .map(|((a, b), w)| w * a * b)
            .sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot_values(&self.values)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn norm_l1(&self) -> f64 {
        self.values
            .iter()
            .zip(self.weights().iter())
            .map(|(v, w)| w * v.abs())
            .sum()
    }

    pub fn norm_p(&self, p: f64) -> f64 {
        if p == 1.0 {
            return self.norm_l1();
        }
        if p == 2.0 {
            return self.norm();
        }
        let s: f64 = self
            .values
            .iter()
            .zip(self.weights().iter())
            .map(|(v, w)| w * v.abs().powf(p))
            .sum();
        s.powf(1.0 / p)
    }

    /// Sup norm over nodes with positive weight (dual of the weighted L1 norm).
    pub fn norm_max(&self) -> f64 {
        self.values
            .iter()
            .zip(self.weights().iter())
            .filter(|(_, w)| **w > 0.0)
            .fold(0.0_f64, |m, (v, _)| m.max(v.abs()))
    }

    /// Weighted integral `sum w_i v_i`.
    pub fn integral(&self) -> f64 {
        self.values
            .iter()
            .zip(self.weights().iter())
            .map(|(v, w)| w * v)
            .sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: &self.values * factor,
            grid: self.grid.clone(),
        }
    }

    /// `self + factor * other`.
    pub fn add_scaled(&self, factor: f64, other: &WeightedVector) -> Self {
        debug_assert_eq!(self.len(), other.len());
        let mut values = self.values.clone();
        values.scaled_add(factor, &other.values);
        Self {
            values,
            grid: self.grid.clone(),
        }
    }

    pub fn sub(&self, other: &WeightedVector) -> Self {
        self.add_scaled(-1.0, other)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
