//! Thin wrappers around the dense factorizations used by the Newton and
//! Bloch code.

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{c64, Mat};

use crate::error::{Error, Result};
use crate::grid::PeriodicGrid;
use crate::spectral;

/// Circulant spectral second-derivative matrix on `grid` (row-major `N×N`).
pub fn second_derivative_matrix(grid: &PeriodicGrid) -> Vec<f64> {
    let n = grid.num_points();
    let mut e = crate::grid::RealPairField::zeros(*grid);
    e.re[0] = 1.0;
    let col = spectral::derivative_unchecked(&e, 2).re;
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = col[(i + n - j) % n];
        }
    }
    m
}

pub struct RealLu {
    lu: PartialPivLu<f64>,
    norm1: f64,
    n: usize,
}

impl RealLu {
    pub fn new(a: &Mat<f64>) -> Self {
        let n = a.nrows();
        let mut norm1 = 0.0f64;
        for j in 0..n {
            let s: f64 = (0..n).map(|i| a[(i, j)].abs()).sum();
            norm1 = norm1.max(s);
        }
        Self { lu: a.partial_piv_lu(), norm1, n }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Mat::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let mut rhs = Mat::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_transpose_in_place(&mut rhs);
        (0..self.n).map(|i| rhs[(i, 0)]).collect()
    }

    /// Hager–Higham estimate of the 1-norm condition number.
    pub fn condition_estimate(&self) -> f64 {
        let n = self.n;
        let mut x = vec![1.0 / n as f64; n];
        let mut est = 0.0;
        for _ in 0..5 {
            let y = self.solve(&x);
            if y.iter().any(|v| !v.is_finite()) {
                return f64::INFINITY;
            }
            let ny: f64 = y.iter().map(|v| v.abs()).sum();
            est = ny;
            let s: Vec<f64> = y.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect();
            let z = self.solve_transpose(&s);
            let (jmax, zmax) = z
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |(bj, bv), (j, v)| if v.abs() > bv { (j, v.abs()) } else { (bj, bv) });
            let ztx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
            if zmax <= ztx {
                break;
            }
            x = vec![0.0; n];
            x[jmax] = 1.0;
        }
        est * self.norm1
    }
}

/// Eigenvalues and right eigenvectors (columns) of a complex matrix.
pub fn eigen_complex(a: &Mat<c64>) -> Result<(Vec<c64>, Mat<c64>)> {
    let evd = a.eigen().map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let s = evd.S();
    let vals: Vec<c64> = s.column_vector().iter().copied().collect();
    if vals.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    Ok((vals, evd.U().to_owned()))
}

pub fn eigenvalues_complex(a: &Mat<c64>) -> Result<Vec<c64>> {
    let vals = a.eigenvalues().map_err(|e| Error::Eigen(format!("{e:?}")))?;
    if vals.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    Ok(vals)
}

pub fn solve_complex(a: &Mat<c64>, b: &Mat<c64>) -> Mat<c64> {
    a.partial_piv_lu().solve(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_estimate_tracks_scaling() {
        let a = Mat::from_fn(4, 4, |i, j| if i == j { [1.0, 2.0, 1e-6, 3.0][i] } else { 0.0 });
        let c = RealLu::new(&a).condition_estimate();
        assert!((c - 3e6).abs() / 3e6 < 1e-6, "{c}");
    }

    #[test]
    fn second_derivative_matrix_on_mode() {
        let g = PeriodicGrid::single_cell(16, 2.0 * std::f64::consts::PI).unwrap();
        let d2 = second_derivative_matrix(&g);
        let f: Vec<f64> = g.coordinates().iter().map(|x| (3.0 * x).sin()).collect();
        for i in 0..16 {
            let v: f64 = (0..16).map(|j| d2[i * 16 + j] * f[j]).sum();
            assert!((v + 9.0 * f[i]).abs() < 1e-11);
        }
    }
}
