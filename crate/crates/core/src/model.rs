//! The real form of the Lugiato–Lefever equation
//! `u_t = J(-β u_xx - α u) - u + N(u) + (F, 0)` with `N(u) = |u|² J u`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RealPairField;
use crate::spectral;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveParameters {
    pub alpha: f64,
    pub beta: f64,
    pub forcing: f64,
    pub period: f64,
}

impl WaveParameters {
    pub fn new(alpha: f64, beta: f64, forcing: f64, period: f64) -> Result<Self> {
        let p = Self { alpha, beta, forcing, period };
        p.validate()?;
        Ok(p)
    }

    /// `F = 0` is accepted as the degenerate zero-state configuration.
    pub fn validate(&self) -> Result<()> {
        if self.beta != 1.0 && self.beta != -1.0 {
            return Err(Error::InvalidInput(format!("beta must be exactly -1 or 1, got {}", self.beta)));
        }
        if !(self.forcing >= 0.0 && self.forcing.is_finite()) {
            return Err(Error::InvalidInput(format!("forcing must be nonnegative, got {}", self.forcing)));
        }
        if !(self.period > 0.0 && self.period.is_finite() && self.alpha.is_finite()) {
            return Err(Error::InvalidInput("period must be positive and alpha finite".into()));
        }
        Ok(())
    }

    pub fn with_forcing(&self, forcing: f64) -> Self {
        Self { forcing, ..*self }
    }
}

#[inline]
pub fn rotate(a: (f64, f64)) -> (f64, f64) {
    (-a.1, a.0)
}

/// `N(u) = |u|² J u`.
#[inline]
pub fn cubic(u: (f64, f64)) -> (f64, f64) {
    let m = u.0 * u.0 + u.1 * u.1;
    (-m * u.1, m * u.0)
}

/// `N'(p) v = 2 (p·v) J p + |p|² J v`.
#[inline]
pub fn cubic_derivative(p: (f64, f64), v: (f64, f64)) -> (f64, f64) {
    let d = 2.0 * (p.0 * v.0 + p.1 * v.1);
    let m = p.0 * p.0 + p.1 * p.1;
    (-d * p.1 - m * v.1, d * p.0 + m * v.0)
}

/// Symmetric coefficient block `C(φ)` with `N'(φ) = J C(φ)`:
/// `[[3r²+i², 2ri], [2ri, r²+3i²]]`.
#[inline]
pub fn cubic_block(p: (f64, f64)) -> [[f64; 2]; 2] {
    let (r, i) = p;
    [[3.0 * r * r + i * i, 2.0 * r * i], [2.0 * r * i, r * r + 3.0 * i * i]]
}

pub fn map_pointwise(f: &RealPairField, op: impl Fn((f64, f64)) -> (f64, f64)) -> RealPairField {
    let (re, im) = (0..f.len()).map(|i| op(f.value(i))).unzip();
    RealPairField { grid: f.grid, re, im }
}

pub fn map_pointwise2(
    f: &RealPairField,
    g: &RealPairField,
    op: impl Fn((f64, f64), (f64, f64)) -> (f64, f64),
) -> RealPairField {
    let (re, im) = (0..f.len()).map(|i| op(f.value(i), g.value(i))).unzip();
    RealPairField { grid: f.grid, re, im }
}

/// Right-hand side of the evolution equation evaluated on `u`.
pub fn lle_rhs(u: &RealPairField, params: &WaveParameters) -> RealPairField {
    let uxx = spectral::derivative_unchecked(u, 2);
    let (b, a, f) = (params.beta, params.alpha, params.forcing);
    let (re, im) = (0..u.len())
        .map(|i| {
            let v = u.value(i);
            let lin = rotate((-b * uxx.re[i] - a * v.0, -b * uxx.im[i] - a * v.1));
            let n = cubic(v);
            (lin.0 - v.0 + n.0 + f, lin.1 - v.1 + n.1)
        })
        .unzip();
    RealPairField { grid: u.grid, re, im }
}

/// Linearization `L0(φ) v = J(-β v_xx - α v + C(φ) v) - v`.
pub fn apply_linearization(phi: &RealPairField, v: &RealPairField, params: &WaveParameters) -> RealPairField {
    let vxx = spectral::derivative_unchecked(v, 2);
    let (b, a) = (params.beta, params.alpha);
    let (re, im) = (0..v.len())
        .map(|i| {
            let x = v.value(i);
            let dn = cubic_derivative(phi.value(i), x);
            let lin = rotate((-b * vxx.re[i] - a * x.0, -b * vxx.im[i] - a * x.1));
            (lin.0 + dn.0 - x.0, lin.1 + dn.1 - x.1)
        })
        .unzip();
    RealPairField { grid: v.grid, re, im }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_must_be_a_sign() {
        assert!(WaveParameters::new(1.0, 0.5, 1.0, 1.0).is_err());
        assert!(WaveParameters::new(1.0, -1.0, -0.1, 1.0).is_err());
        assert!(WaveParameters::new(1.0, -1.0, 1.2, 6.0).is_ok());
    }

    #[test]
    fn cubic_matches_componentwise_form() {
        let u = (0.3, -1.7);
        let n = cubic(u);
        assert!((n.0 - (-u.1.powi(3) - u.0 * u.0 * u.1)).abs() < 1e-14);
        assert!((n.1 - (u.0 * u.1 * u.1 + u.0.powi(3))).abs() < 1e-14);
    }

    #[test]
    fn derivative_is_the_jacobian_of_the_cubic() {
        let p = (0.7, -0.4);
        let v = (0.2, 0.9);
        let e = 1e-6;
        let plus = cubic((p.0 + e * v.0, p.1 + e * v.1));
        let minus = cubic((p.0 - e * v.0, p.1 - e * v.1));
        let d = cubic_derivative(p, v);
        assert!(((plus.0 - minus.0) / (2.0 * e) - d.0).abs() < 1e-8);
        assert!(((plus.1 - minus.1) / (2.0 * e) - d.1).abs() < 1e-8);
        let c = cubic_block(p);
        let jc = rotate((c[0][0] * v.0 + c[0][1] * v.1, c[1][0] * v.0 + c[1][1] * v.1));
        assert!((jc.0 - d.0).abs() < 1e-14 && (jc.1 - d.1).abs() < 1e-14);
    }
}
