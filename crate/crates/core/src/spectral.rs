//! Fourier differentiation, norms and trigonometric interpolation.
//!
//! A pair field `(u_r, u_i)` is packed into the complex samples `u_r + i u_i`.
//! Every multiplier used here maps real functions to real functions (odd
//! derivatives drop the Nyquist mode), so the packing commutes with the
//! operators and both components are processed by a single transform.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::grid::{PeriodicGrid, RealPairField, ScalarField};

type Plan = Arc<dyn Fft<f64>>;

fn plans(n: usize) -> (Plan, Plan) {
    static CACHE: OnceLock<Mutex<(FftPlanner<f64>, HashMap<usize, (Plan, Plan)>)>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new((FftPlanner::new(), HashMap::new())));
    let mut guard = cache.lock().unwrap_or_else(|p| p.into_inner());
    let (planner, map) = &mut *guard;
    if let Some(p) = map.get(&n) {
        return p.clone();
    }
    let p = (planner.plan_fft_forward(n), planner.plan_fft_inverse(n));
    map.insert(n, p.clone());
    p
}

/// Unnormalized forward transform in place.
pub fn fft_forward(data: &mut [Complex64]) {
    plans(data.len()).0.process(data);
}

/// Inverse transform in place, including the `1/N` factor.
pub fn fft_inverse(data: &mut [Complex64]) {
    plans(data.len()).1.process(data);
    let s = 1.0 / data.len() as f64;
    for v in data.iter_mut() {
        *v *= s;
    }
}

pub fn pack(f: &RealPairField) -> Vec<Complex64> {
    f.re.iter().zip(&f.im).map(|(a, b)| Complex64::new(*a, *b)).collect()
}

pub fn unpack(grid: PeriodicGrid, data: &[Complex64]) -> RealPairField {
    RealPairField { grid, re: data.iter().map(|c| c.re).collect(), im: data.iter().map(|c| c.im).collect() }
}

/// Unnormalized Fourier coefficients of the packed field.
pub fn spectrum(f: &RealPairField) -> Vec<Complex64> {
    let mut d = pack(f);
    fft_forward(&mut d);
    d
}

pub fn from_spectrum(grid: PeriodicGrid, mut spec: Vec<Complex64>) -> RealPairField {
    fft_inverse(&mut spec);
    unpack(grid, &spec)
}

/// Fourier multiplier of `d^order/dx^order` in FFT slot `idx`.
pub fn derivative_multiplier(grid: &PeriodicGrid, idx: usize, order: usize) -> Complex64 {
    let n = grid.num_points();
    if order % 2 == 1 && idx == n / 2 {
        return Complex64::new(0.0, 0.0);
    }
    Complex64::new(0.0, grid.wavenumber(idx)).powu(order as u32)
}

fn apply_derivative_in_place(grid: &PeriodicGrid, spec: &mut [Complex64], order: usize) {
    if order == 0 {
        return;
    }
    for (idx, c) in spec.iter_mut().enumerate() {
        *c *= derivative_multiplier(grid, idx, order);
    }
}

/// Component-wise spectral derivative of order `0..=4`.
pub fn spectral_derivative(f: &RealPairField, order: usize) -> Result<RealPairField> {
    if order > 4 {
        return Err(Error::UnsupportedOrder(order));
    }
    Ok(derivative_unchecked(f, order))
}

pub(crate) fn derivative_unchecked(f: &RealPairField, order: usize) -> RealPairField {
    if order == 0 {
        return f.clone();
    }
    let mut s = spectrum(f);
    apply_derivative_in_place(&f.grid, &mut s, order);
    from_spectrum(f.grid, s)
}

/// Derivatives of orders `1..=max_order` from a single forward transform.
pub fn derivatives(f: &RealPairField, max_order: usize) -> Vec<RealPairField> {
    let s = spectrum(f);
    (1..=max_order)
        .map(|k| {
            let mut t = s.clone();
            apply_derivative_in_place(&f.grid, &mut t, k);
            from_spectrum(f.grid, t)
        })
        .collect()
}

pub fn scalar_derivative(f: &ScalarField, order: usize) -> ScalarField {
    let d = derivative_unchecked(&f.as_pair(), order);
    ScalarField { grid: f.grid, values: d.re }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    L2,
    H1,
    H2,
    H3,
    H4,
    Linf,
}

impl NormKind {
    pub fn sobolev_index(self) -> Option<usize> {
        match self {
            NormKind::L2 => Some(0),
            NormKind::H1 => Some(1),
            NormKind::H2 => Some(2),
            NormKind::H3 => Some(3),
            NormKind::H4 => Some(4),
            NormKind::Linf => None,
        }
    }
}

/// Discrete norm. Sobolev norms use `(Σ_{j≤k} ||∂^j f||²)^{1/2}` with
/// the derivative norms evaluated through Parseval.
pub fn norm(f: &RealPairField, kind: NormKind) -> f64 {
    match kind.sobolev_index() {
        None => f.max_abs(),
        Some(0) => (f.inner(f)).max(0.0).sqrt(),
        Some(k) => sobolev_norm(f, k),
    }
}

pub fn sobolev_norm(f: &RealPairField, k: usize) -> f64 {
    let grid = f.grid;
    let s = spectrum(f);
    let n = grid.num_points() as f64;
    let w = grid.length() / (n * n);
    let mut total = 0.0;
    for (idx, c) in s.iter().enumerate() {
        let kk = grid.wavenumber(idx);
        let a = c.norm_sqr();
        let mut p = 1.0;
        for j in 0..=k {
            if !(j % 2 == 1 && idx == grid.num_points() / 2) {
                total += p * a;
            }
            p *= kk * kk;
        }
    }
    (total * w).sqrt()
}

/// `||∂^j f||_{L²}` for `j = 0..=k` from one transform.
pub fn derivative_norms(f: &RealPairField, k: usize) -> Vec<f64> {
    let grid = f.grid;
    let s = spectrum(f);
    let n = grid.num_points() as f64;
    let w = grid.length() / (n * n);
    let mut out = vec![0.0; k + 1];
    for (idx, c) in s.iter().enumerate() {
        let kk = grid.wavenumber(idx);
        let a = c.norm_sqr();
        let mut p = 1.0;
        for (j, o) in out.iter_mut().enumerate() {
            if !(j % 2 == 1 && idx == grid.num_points() / 2) {
                *o += p * a;
            }
            p *= kk * kk;
        }
    }
    out.into_iter().map(|v| (v * w).sqrt()).collect()
}

pub fn scalar_norm(f: &ScalarField, kind: NormKind) -> f64 {
    norm(&f.as_pair(), kind)
}

/// Trigonometric interpolant evaluated at arbitrary points (wrapped periodically).
///
/// The Nyquist mode is interpreted as `cos(k_{N/2} x)` so real data stay real.
pub fn interpolate(f: &RealPairField, points: &[f64]) -> Vec<(f64, f64)> {
    let grid = f.grid;
    let n = grid.num_points();
    let mut c = spectrum(f);
    let inv = 1.0 / n as f64;
    for v in c.iter_mut() {
        *v *= inv;
    }
    let k1 = 2.0 * PI / grid.length();
    points
        .iter()
        .map(|&x| {
            let xr = x.rem_euclid(grid.length());
            let z = Complex64::from_polar(1.0, k1 * xr);
            let zc = z.conj();
            let mut acc = c[0];
            let mut zp = Complex64::new(1.0, 0.0);
            let mut zn = Complex64::new(1.0, 0.0);
            for j in 1..n / 2 {
                zp *= z;
                zn *= zc;
                acc += c[j] * zp + c[n - j] * zn;
            }
            acc += c[n / 2] * (k1 * (n / 2) as f64 * xr).cos();
            (acc.re, acc.im)
        })
        .collect()
}

/// Exact translation `f(x - s)` through Fourier phases (Nyquist kept as cosine).
pub fn translate(f: &RealPairField, s: f64) -> RealPairField {
    let grid = f.grid;
    let n = grid.num_points();
    let mut spec = spectrum(f);
    for (idx, c) in spec.iter_mut().enumerate() {
        if idx == n / 2 {
            continue;
        }
        *c *= Complex64::from_polar(1.0, -grid.wavenumber(idx) * s);
    }
    let nyq = spec[n / 2] / n as f64;
    spec[n / 2] = Complex64::new(0.0, 0.0);
    let mut out = from_spectrum(grid, spec);
    if nyq.norm() > 0.0 {
        let kn = grid.wavenumber(n / 2).abs();
        for i in 0..n {
            let v = nyq * (kn * (grid.x(i) - s)).cos();
            out.re[i] += v.re;
            out.im[i] += v.im;
        }
    }
    out
}

/// Evaluate `f(x_i - shift - disp_i)` at every grid node.
///
/// The uniform part is applied exactly by phase rotation; the non-uniform
/// displacement by a Taylor series of the trigonometric interpolant, which
/// is exact for the interpolant and converges geometrically when
/// `|disp| * k_eff` is moderate. Otherwise the direct interpolation sum is used.
pub fn compose(f: &RealPairField, shift: f64, disp: &[f64]) -> RealPairField {
    let grid = f.grid;
    let n = grid.num_points();
    assert_eq!(disp.len(), n, "displacement must live on the field grid");
    let dmax = disp.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if dmax == 0.0 {
        return translate(f, shift);
    }
    let mut spec = spectrum(f);
    let cmax = spec.iter().fold(0.0f64, |m, c| m.max(c.norm()));
    let k_eff = spec
        .iter()
        .enumerate()
        .filter(|(_, c)| c.norm() > 1e-15 * cmax)
        .fold(0.0f64, |m, (i, _)| m.max(grid.wavenumber(i).abs()));
    if dmax * k_eff > 6.0 {
        let pts: Vec<f64> = (0..n).map(|i| grid.x(i) - shift - disp[i]).collect();
        let vals = interpolate(f, &pts);
        return RealPairField {
            grid,
            re: vals.iter().map(|v| v.0).collect(),
            im: vals.iter().map(|v| v.1).collect(),
        };
    }
    let nyq = spec[n / 2] / n as f64;
    spec[n / 2] = Complex64::new(0.0, 0.0);
    // modes below the threshold would be amplified like (k d)^n / n!
    for (idx, c) in spec.iter_mut().enumerate() {
        let k = grid.wavenumber(idx);
        *c = if k.abs() > k_eff { Complex64::new(0.0, 0.0) } else { *c * Complex64::from_polar(1.0, -k * shift) };
    }
    let mut out = from_spectrum(grid, spec.clone());
    let scale = out.max_abs().max(cmax / n as f64).max(1e-300);
    let mut coeff = vec![1.0; n];
    let mut small = 0;
    for order in 1..80 {
        for (c, d) in coeff.iter_mut().zip(disp) {
            *c *= -d / order as f64;
        }
        for (idx, c) in spec.iter_mut().enumerate() {
            *c *= Complex64::new(0.0, grid.wavenumber(idx));
        }
        let term = from_spectrum(grid, spec.clone());
        let mut tmax = 0.0f64;
        for i in 0..n {
            let a = coeff[i] * term.re[i];
            let b = coeff[i] * term.im[i];
            out.re[i] += a;
            out.im[i] += b;
            tmax = tmax.max(a.abs()).max(b.abs());
        }
        if tmax <= 1e-17 * scale {
            small += 1;
            if small >= 2 {
                break;
            }
        } else {
            small = 0;
        }
    }
    if nyq.norm() > 0.0 {
        let kn = grid.wavenumber(n / 2).abs();
        for i in 0..n {
            let v = nyq * (kn * (grid.x(i) - shift - disp[i])).cos();
            out.re[i] += v.re;
            out.im[i] += v.im;
        }
    }
    out
}

/// Zero Fourier modes with `|j| > N/3` (2/3 rule), in place on a spectrum.
pub fn dealias_mask(grid: &PeriodicGrid) -> Vec<f64> {
    let n = grid.num_points() as i64;
    (0..grid.num_points())
        .map(|idx| if 3 * grid.mode_index(idx).abs() > n { 0.0 } else { 1.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, l: f64) -> PeriodicGrid {
        PeriodicGrid::single_cell(n, l).unwrap()
    }

    #[test]
    fn derivative_of_sine_is_cosine() {
        let g = grid(32, 3.0);
        let k = 2.0 * PI / 3.0;
        let f = RealPairField::from_fn(g, |x| ((k * x).sin(), 0.0));
        let d = spectral_derivative(&f, 1).unwrap();
        for i in 0..32 {
            assert!((d.re[i] - k * (k * g.x(i)).cos()).abs() < 1e-10);
            assert!(d.im[i].abs() < 1e-12);
        }
        let c = RealPairField::constant(g, (2.0, -1.0));
        assert!(spectral_derivative(&c, 1).unwrap().max_abs() < 1e-14);
        assert!(matches!(spectral_derivative(&c, 5), Err(Error::UnsupportedOrder(5))));
    }

    #[test]
    fn second_derivative_matches_finite_differences() {
        // centred differences on refined grids converge at rate h^2 to the spectral result
        let l = 2.0 * PI;
        let mut errs = Vec::new();
        for &n in &[64usize, 128, 256] {
            let g = grid(n, l);
            let f = RealPairField::from_fn(g, |x| (x.cos().exp(), 0.0));
            let d2 = spectral_derivative(&f, 2).unwrap();
            let h = g.spacing();
            let mut e = 0.0f64;
            for i in 0..n {
                let fd = (f.re[(i + 1) % n] - 2.0 * f.re[i] + f.re[(i + n - 1) % n]) / (h * h);
                e = e.max((fd - d2.re[i]).abs());
            }
            errs.push(e);
        }
        assert!(errs[0] / errs[1] > 3.8 && errs[0] / errs[1] < 4.2);
        assert!(errs[1] / errs[2] > 3.8 && errs[1] / errs[2] < 4.2);
    }

    #[test]
    fn norms_of_simple_fields() {
        let g = grid(64, 2.0 * PI);
        let z = RealPairField::zeros(g);
        for k in [NormKind::L2, NormKind::H1, NormKind::H2, NormKind::H3, NormKind::Linf] {
            assert_eq!(norm(&z, k), 0.0);
        }
        let one = RealPairField::constant(g, (1.0, 0.0));
        assert!((norm(&one, NormKind::L2) - (2.0 * PI).sqrt()).abs() < 1e-13);
        assert!((norm(&one, NormKind::H3) - (2.0 * PI).sqrt()).abs() < 1e-13);
    }

    #[test]
    fn gaussian_l2_norm_matches_closed_form() {
        // ∫ exp(-x²/s²) dx = s√π, so ||·||_{L²} = (s√π)^{1/2} for exp(-x²/(2s²))
        let s = 0.7;
        let l = 40.0;
        let g = grid(512, l);
        let f = RealPairField::from_fn(g, |x| ((-(x - l / 2.0).powi(2) / (2.0 * s * s)).exp(), 0.0));
        let exact = (s * PI.sqrt()).sqrt();
        assert!((norm(&f, NormKind::L2) - exact).abs() < 1e-6);
        // first derivative: ∫ (x/s²)² e^{-x²/s²} = √π/(2s)
        let exact_h1 = (s * PI.sqrt() + PI.sqrt() / (2.0 * s)).sqrt();
        assert!((norm(&f, NormKind::H1) - exact_h1).abs() < 1e-6);
    }

    #[test]
    fn parseval_agrees_with_physical_space() {
        let g = grid(48, 5.0);
        let f = RealPairField::from_fn(g, |x| ((3.0 * x).sin() + 0.2, (x * 1.3).cos().powi(3)));
        let phys = f.inner(&f).sqrt();
        assert!((phys - sobolev_norm(&f, 0)).abs() <= 1e-10 * phys);
    }

    #[test]
    fn interpolation_reproduces_modes_and_nodes() {
        let l = 7.0;
        let g = grid(32, l);
        let f = RealPairField::from_fn(g, |x| ((2.0 * PI * x / l).cos(), 0.0));
        let v = interpolate(&f, &[l / 8.0])[0];
        assert!((v.0 - (PI / 4.0).cos()).abs() < 1e-12);
        let h = RealPairField::from_fn(g, |x| (x.sin().exp(), (2.0 * x).cos()));
        let vals = interpolate(&h, &g.coordinates());
        for i in 0..32 {
            assert!((vals[i].0 - h.re[i]).abs() < 1e-12 && (vals[i].1 - h.im[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn composition_matches_direct_interpolation() {
        let l = 2.0 * PI;
        let g = grid(64, l);
        let f = RealPairField::from_fn(g, |x| ((x.cos()).exp(), (2.0 * x).sin() * 0.3));
        let disp: Vec<f64> = g.coordinates().iter().map(|x| 0.05 * (x + 0.3).sin()).collect();
        let c = compose(&f, 0.37, &disp);
        let pts: Vec<f64> = (0..64).map(|i| g.x(i) - 0.37 - disp[i]).collect();
        let d = interpolate(&f, &pts);
        for i in 0..64 {
            assert!((c.re[i] - d[i].0).abs() < 1e-12, "{}", (c.re[i] - d[i].0).abs());
            assert!((c.im[i] - d[i].1).abs() < 1e-12);
        }
        let t = translate(&f, 0.37);
        let z = compose(&f, 0.37, &vec![0.0; 64]);
        assert!(t.sub(&z).max_abs() < 1e-15);
    }
}
