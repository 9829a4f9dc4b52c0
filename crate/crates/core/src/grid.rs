//! Uniform periodic grids and the two-component real fields living on them.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Uniform periodic grid on `[0, L)` with `L = num_cells * cell_period`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicGrid {
    num_points: usize,
    cell_period: f64,
    num_cells: usize,
}

impl PeriodicGrid {
    pub fn new(num_points: usize, cell_period: f64, num_cells: usize) -> Result<Self> {
        if num_points == 0 || !num_points.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!("grid needs a positive even number of points, got {num_points}")));
        }
        if num_cells == 0 || !num_points.is_multiple_of(num_cells) {
            return Err(Error::InvalidInput(format!(
                "{num_points} points cannot be split evenly over {num_cells} cells"
            )));
        }
        if !(cell_period.is_finite() && cell_period > 0.0) {
            return Err(Error::InvalidInput(format!("cell period must be positive, got {cell_period}")));
        }
        Ok(Self { num_points, cell_period, num_cells })
    }

    /// Grid covering a single period with `points` samples.
    pub fn single_cell(points: usize, period: f64) -> Result<Self> {
        Self::new(points, period, 1)
    }

    /// Grid of `cells` periods with `points_per_cell` samples each.
    pub fn tiled(points_per_cell: usize, period: f64, cells: usize) -> Result<Self> {
        Self::new(points_per_cell * cells, period, cells)
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }
    pub fn cell_period(&self) -> f64 {
        self.cell_period
    }
    pub fn num_cells(&self) -> usize {
        self.num_cells
    }
    pub fn points_per_cell(&self) -> usize {
        self.num_points / self.num_cells
    }
    pub fn length(&self) -> f64 {
        self.cell_period * self.num_cells as f64
    }
    pub fn spacing(&self) -> f64 {
        self.length() / self.num_points as f64
    }
    pub fn x(&self, i: usize) -> f64 {
        self.length() * i as f64 / self.num_points as f64
    }
    pub fn coordinates(&self) -> Vec<f64> {
        (0..self.num_points).map(|i| self.x(i)).collect()
    }

    /// Signed mode number of FFT slot `idx`, in `-N/2..N/2`.
    pub fn mode_index(&self, idx: usize) -> i64 {
        let n = self.num_points as i64;
        let i = idx as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    pub fn wavenumber(&self, idx: usize) -> f64 {
        2.0 * PI * self.mode_index(idx) as f64 / self.length()
    }

    pub fn wavenumbers(&self) -> Vec<f64> {
        (0..self.num_points).map(|i| self.wavenumber(i)).collect()
    }

    /// The one-period grid with the same spacing.
    pub fn cell_grid(&self) -> PeriodicGrid {
        PeriodicGrid { num_points: self.points_per_cell(), cell_period: self.cell_period, num_cells: 1 }
    }

    /// Same period and spacing, `cells` periods long.
    pub fn with_cells(&self, cells: usize) -> PeriodicGrid {
        PeriodicGrid { num_points: self.points_per_cell() * cells, cell_period: self.cell_period, num_cells: cells }
    }
}

/// A complex field stored as its real and imaginary parts `(u_r, u_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealPairField {
    pub grid: PeriodicGrid,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl RealPairField {
    pub fn zeros(grid: PeriodicGrid) -> Self {
        let n = grid.num_points();
        Self { grid, re: vec![0.0; n], im: vec![0.0; n] }
    }

    pub fn from_parts(grid: PeriodicGrid, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        let n = grid.num_points();
        if re.len() != n || im.len() != n {
            return Err(Error::InvalidInput(format!(
                "field components have {} and {} samples, grid has {n}",
                re.len(),
                im.len()
            )));
        }
        if re.iter().chain(im.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field sample".into()));
        }
        Ok(Self { grid, re, im })
    }

    pub fn from_fn(grid: PeriodicGrid, f: impl Fn(f64) -> (f64, f64)) -> Self {
        let (re, im) = (0..grid.num_points()).map(|i| f(grid.x(i))).unzip();
        Self { grid, re, im }
    }

    pub fn constant(grid: PeriodicGrid, value: (f64, f64)) -> Self {
        let n = grid.num_points();
        Self { grid, re: vec![value.0; n], im: vec![value.1; n] }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }
    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(self.im.iter()).all(|v| v.is_finite())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.len(), other.len());
        Self {
            grid: self.grid,
            re: self.re.iter().zip(&other.re).map(|(a, b)| f(*a, *b)).collect(),
            im: self.im.iter().zip(&other.im).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }
    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }
    pub fn scale(&self, s: f64) -> Self {
        Self {
            grid: self.grid,
            re: self.re.iter().map(|a| a * s).collect(),
            im: self.im.iter().map(|a| a * s).collect(),
        }
    }
    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Self) {
        for (a, b) in self.re.iter_mut().zip(&other.re) {
            *a += s * b;
        }
        for (a, b) in self.im.iter_mut().zip(&other.im) {
            *a += s * b;
        }
    }

    /// Multiply by the rotation `J = [[0,-1],[1,0]]`.
    pub fn rotate(&self) -> Self {
        Self { grid: self.grid, re: self.im.iter().map(|v| -v).collect(), im: self.re.clone() }
    }

    /// Multiply pointwise by a real scalar profile.
    pub fn mul_scalar_field(&self, s: &[f64]) -> Self {
        Self {
            grid: self.grid,
            re: self.re.iter().zip(s).map(|(a, b)| a * b).collect(),
            im: self.im.iter().zip(s).map(|(a, b)| a * b).collect(),
        }
    }

    /// Discrete L² pairing `h * Σ (a_r b_r + a_i b_i)`.
    pub fn inner(&self, other: &Self) -> f64 {
        let s: f64 = self.re.iter().zip(&other.re).map(|(a, b)| a * b).sum::<f64>()
            + self.im.iter().zip(&other.im).map(|(a, b)| a * b).sum::<f64>();
        s * self.grid.spacing()
    }

    pub fn max_abs(&self) -> f64 {
        self.re.iter().zip(&self.im).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max)
    }

    /// Periodic extension of a one-period field onto `cells` periods.
    pub fn tile(&self, cells: usize) -> Self {
        let grid = self.grid.with_cells(self.grid.num_cells() * cells);
        let mut re = Vec::with_capacity(grid.num_points());
        let mut im = Vec::with_capacity(grid.num_points());
        for _ in 0..cells {
            re.extend_from_slice(&self.re);
            im.extend_from_slice(&self.im);
        }
        Self { grid, re, im }
    }

    /// The samples of cell `c` as a one-period field.
    pub fn cell(&self, c: usize) -> Self {
        let p = self.grid.points_per_cell();
        Self {
            grid: self.grid.cell_grid(),
            re: self.re[c * p..(c + 1) * p].to_vec(),
            im: self.im[c * p..(c + 1) * p].to_vec(),
        }
    }

    pub fn value(&self, i: usize) -> (f64, f64) {
        (self.re[i], self.im[i])
    }
}

/// A real scalar field (phase modulations, cut-offs).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: PeriodicGrid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: PeriodicGrid) -> Self {
        Self { grid, values: vec![0.0; grid.num_points()] }
    }
    pub fn from_fn(grid: PeriodicGrid, f: impl Fn(f64) -> f64) -> Self {
        Self { grid, values: (0..grid.num_points()).map(|i| f(grid.x(i))).collect() }
    }
    pub fn as_pair(&self) -> RealPairField {
        RealPairField { grid: self.grid, re: self.values.clone(), im: vec![0.0; self.values.len()] }
    }
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
    pub fn sub(&self, other: &Self) -> Self {
        Self { grid: self.grid, values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_odd_and_uneven() {
        assert!(PeriodicGrid::new(15, 1.0, 1).is_err());
        assert!(PeriodicGrid::new(30, 1.0, 4).is_err());
        assert!(PeriodicGrid::new(32, 0.0, 1).is_err());
        let g = PeriodicGrid::new(32, 2.0, 4).unwrap();
        assert_eq!(g.points_per_cell(), 8);
        assert!((g.spacing() * 32.0 - g.length()).abs() == 0.0);
    }

    #[test]
    fn wavenumbers_follow_signed_modes() {
        let g = PeriodicGrid::new(8, 2.0 * PI, 1).unwrap();
        let k = g.wavenumbers();
        assert_eq!(k, vec![0.0, 1.0, 2.0, 3.0, -4.0, -3.0, -2.0, -1.0]);
    }

    #[test]
    fn tiling_and_cells_roundtrip() {
        let g = PeriodicGrid::single_cell(8, 1.0).unwrap();
        let f = RealPairField::from_fn(g, |x| (x, -x));
        let t = f.tile(3);
        assert_eq!(t.grid.num_cells(), 3);
        assert_eq!(t.cell(2), f);
    }
}
