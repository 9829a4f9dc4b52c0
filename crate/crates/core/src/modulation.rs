//! Phase modulations `σ(t)`, `γ(x,t)`, the inverse- and forward-modulated
//! perturbations and the nonlinear terms of their equations.
//!
//! Conventions: `ŵ(x,t) = w(x-σ,t) - φ(x)`, `ẘ(x,t) = w(x,t) - φ(x+σ)`,
//! `v̂(x,t) = u(x-σ-γ,t) - ŵ - φ`, `v̊(x,t) = v + w - w(x+γ)`, where `w` is the
//! total co-periodic field. Periodic inputs are tiled onto the full grid
//! wherever they meet a localized field.

use num_complex::Complex64 as c64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::{coefficients, BlochPropagator, ZeroModeData};
use crate::cutoff::{chi, chi_dot};
use crate::error::{Error, Result};
use crate::evolution::Trajectory;
use crate::grid::{PeriodicGrid, RealPairField, ScalarField};
use crate::model::{apply_linearization, cubic_derivative, lle_rhs, WaveParameters};
use crate::spectral::{self, compose, derivative_unchecked, scalar_derivative, translate, NormKind};
use crate::steady::WaveProfile;

/// Periodic extension of `f` onto `grid` (identity if already there).
pub fn tile_to(f: &RealPairField, grid: PeriodicGrid) -> RealPairField {
    if f.grid == grid {
        return f.clone();
    }
    f.tile(grid.num_cells() / f.grid.num_cells())
}

fn dot(a: (f64, f64), b: (f64, f64)) -> f64 {
    a.0 * b.0 + a.1 * b.1
}

fn rot(a: (f64, f64)) -> (f64, f64) {
    (-a.1, a.0)
}

fn pointwise3(
    a: &RealPairField,
    b: &RealPairField,
    c: &RealPairField,
    op: impl Fn((f64, f64), (f64, f64), (f64, f64)) -> (f64, f64),
) -> RealPairField {
    let (re, im) = (0..a.len()).map(|i| op(a.value(i), b.value(i), c.value(i))).unzip();
    RealPairField { grid: a.grid, re, im }
}

/// `ℛ₁(φ)(w) = 2(φ·w) J w + |w|² J(φ + w)`.
pub fn r1(phi: &RealPairField, w: &RealPairField) -> RealPairField {
    crate::model::map_pointwise2(phi, w, |p, w| {
        let d = 2.0 * dot(p, w);
        let m = dot(w, w);
        let jw = rot(w);
        let jpw = rot((p.0 + w.0, p.1 + w.1));
        (d * jw.0 + m * jpw.0, d * jw.1 + m * jpw.1)
    })
}

/// `ℛ₂,₁(φ)(w̃, v) = ℛ₁(φ + w̃)(v)`.
pub fn r21(phi: &RealPairField, w: &RealPairField, v: &RealPairField) -> RealPairField {
    r1(&phi.add(w), v)
}

/// `ℛ₂,₂(φ)(w̃, v) = N'(φ + w̃)v - N'(φ)v`.
pub fn r22(phi: &RealPairField, w: &RealPairField, v: &RealPairField) -> RealPairField {
    pointwise3(phi, w, v, |p, w, v| {
        let pw = (p.0 + w.0, p.1 + w.1);
        let a = 2.0 * dot(w, v);
        let b = 2.0 * dot(p, v);
        let c = 2.0 * dot(p, w) + dot(w, w);
        let (j1, j2, j3) = (rot(pw), rot(w), rot(v));
        (a * j1.0 + b * j2.0 + c * j3.0, a * j1.1 + b * j2.1 + c * j3.1)
    })
}

/// `ℛ₂(φ)(w̃, v) = ℛ₁(φ)(v + w̃) - ℛ₁(φ)(w̃)`.
pub fn r2(phi: &RealPairField, w: &RealPairField, v: &RealPairField) -> RealPairField {
    r1(phi, &v.add(w)).sub(&r1(phi, w))
}

/// `γ` and the derivatives entering the modulated equations, on one grid.
#[derive(Debug, Clone)]
pub struct GammaFields {
    pub gamma: Vec<f64>,
    pub gx: Vec<f64>,
    pub gxx: Vec<f64>,
    pub gt: Vec<f64>,
    pub gxt: Vec<f64>,
}

impl GammaFields {
    pub fn zeros(grid: PeriodicGrid) -> Self {
        let z = vec![0.0; grid.num_points()];
        Self { gamma: z.clone(), gx: z.clone(), gxx: z.clone(), gt: z.clone(), gxt: z }
    }

    /// Spatial derivatives computed spectrally from `γ` and `γ_t`.
    pub fn from_fields(gamma: &ScalarField, gamma_t: &ScalarField) -> Self {
        Self {
            gamma: gamma.values.clone(),
            gx: scalar_derivative(gamma, 1).values,
            gxx: scalar_derivative(gamma, 2).values,
            gt: gamma_t.values.clone(),
            gxt: scalar_derivative(gamma_t, 1).values,
        }
    }

    pub fn max_gx(&self) -> f64 {
        self.gx.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn check(&self) -> Result<()> {
        let m = self.gx.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        if m >= 1.0 - 1e-12 {
            return Err(Error::SingularDenominator(m));
        }
        Ok(())
    }

    fn neg_disp(&self) -> Vec<f64> {
        self.gamma.iter().map(|g| -g).collect()
    }
}

/// `𝒬 = (1-γ_x) ℛ₂,₁(ŵ, v̂)`.
pub fn q_term(phi: &RealPairField, w_hat: &RealPairField, v_hat: &RealPairField, g: &GammaFields) -> RealPairField {
    let one_minus: Vec<f64> = g.gx.iter().map(|x| 1.0 - x).collect();
    r21(phi, w_hat, v_hat).mul_scalar_field(&one_minus)
}

/// `𝒮 = -γ_t v̂ + βJ(γ_xx/(1-γ_x)² v̂ - γ_x²/(1-γ_x) φ')`.
pub fn s_term(phi_prime: &RealPairField, v_hat: &RealPairField, g: &GammaFields, beta: f64) -> Result<RealPairField> {
    g.check()?;
    let a: Vec<f64> = g.gxx.iter().zip(&g.gx).map(|(xx, x)| xx / (1.0 - x).powi(2)).collect();
    let b: Vec<f64> = g.gx.iter().map(|x| x * x / (1.0 - x)).collect();
    let inner = v_hat.mul_scalar_field(&a).sub(&phi_prime.mul_scalar_field(&b));
    let gt: Vec<f64> = g.gt.iter().map(|v| -v).collect();
    Ok(v_hat.mul_scalar_field(&gt).add(&inner.rotate().scale(beta)))
}

/// `𝒫 = -βJ(γ_x + γ_x/(1-γ_x)) v̂`.
pub fn p_term(v_hat: &RealPairField, g: &GammaFields, beta: f64) -> Result<RealPairField> {
    g.check()?;
    let c: Vec<f64> = g.gx.iter().map(|x| x + x / (1.0 - x)).collect();
    Ok(v_hat.mul_scalar_field(&c).rotate().scale(-beta))
}

/// `𝒯 = -γ_x ℛ₁(ŵ) - ∂_x(γ_t ŵ - βJ(γ_xx/(1-γ_x)² ŵ)) - ∂_x²(βJ(γ_x + γ_x/(1-γ_x)) ŵ)`.
pub fn t_term(phi: &RealPairField, w_hat: &RealPairField, g: &GammaFields, beta: f64) -> Result<RealPairField> {
    g.check()?;
    let neg_gx: Vec<f64> = g.gx.iter().map(|x| -x).collect();
    let a: Vec<f64> = g.gxx.iter().zip(&g.gx).map(|(xx, x)| xx / (1.0 - x).powi(2)).collect();
    let c: Vec<f64> = g.gx.iter().map(|x| x + x / (1.0 - x)).collect();
    let first = w_hat.mul_scalar_field(&g.gt).sub(&w_hat.mul_scalar_field(&a).rotate().scale(beta));
    let second = w_hat.mul_scalar_field(&c).rotate().scale(beta);
    Ok(r1(phi, w_hat)
        .mul_scalar_field(&neg_gx)
        .sub(&derivative_unchecked(&first, 1))
        .sub(&derivative_unchecked(&second, 2)))
}

/// `ℛ₃ = 𝒬 + ∂_x 𝒮 + ∂_x² 𝒫`.
pub fn r3(
    phi: &RealPairField,
    phi_prime: &RealPairField,
    w_hat: &RealPairField,
    v_hat: &RealPairField,
    g: &GammaFields,
    beta: f64,
) -> Result<RealPairField> {
    let s = s_term(phi_prime, v_hat, g, beta)?;
    let p = p_term(v_hat, g, beta)?;
    Ok(q_term(phi, w_hat, v_hat, g).add(&derivative_unchecked(&s, 1)).add(&derivative_unchecked(&p, 2)))
}

/// `ℛ₄(ẘ, σ) = ℛ₁(φ(·+σ))(ẘ) - (N'(φ) - N'(φ(·+σ)))ẘ` on one period.
pub fn r4(phi: &RealPairField, ring_w: &RealPairField, sigma: f64) -> RealPairField {
    let shifted = translate(phi, -sigma);
    let lin = pointwise3(phi, &shifted, ring_w, |p, q, w| {
        let a = cubic_derivative(p, w);
        let b = cubic_derivative(q, w);
        (a.0 - b.0, a.1 - b.1)
    });
    r1(&shifted, ring_w).sub(&lin)
}

/// `ℛ₅(w̃, γ, γ_t)` on the full grid; `w_tilde` and `wave` are periodic.
pub fn r5(wave: &WaveProfile, w_tilde: &RealPairField, g: &GammaFields, grid: PeriodicGrid) -> RealPairField {
    let beta = wave.params.beta;
    let disp = g.neg_disp();
    let d = spectral::derivatives(w_tilde, 2);
    let wx = compose(&tile_to(&d[0], grid), 0.0, &disp);
    let wxx = compose(&tile_to(&d[1], grid), 0.0, &disp);
    let px = compose(&tile_to(&wave.derivative, grid), 0.0, &disp);
    let pxx = compose(&tile_to(&wave.second_derivative, grid), 0.0, &disp);
    let two: Vec<f64> = g.gx.iter().map(|x| 2.0 * x + x * x).collect();
    let first = wx.add(&px);
    let inner = first.mul_scalar_field(&g.gxx).add(&wxx.add(&pxx).mul_scalar_field(&two));
    first.mul_scalar_field(&g.gt).scale(-1.0).sub(&inner.rotate().scale(beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NonlinearTerm {
    R1,
    R21,
    R22,
    R2,
    Q,
    S,
    P,
    T,
    R4,
    R5,
}

/// Inputs of [`nonlinear_term`]. `w` is the periodic argument (`w̃`, `ŵ` or
/// `ẘ`), `v` the localized one; `gamma` is required by `Q, S, P, T, R5`.
#[derive(Debug, Clone, Copy)]
pub struct TermInputs<'a> {
    pub w: &'a RealPairField,
    pub v: Option<&'a RealPairField>,
    pub gamma: Option<&'a GammaFields>,
    pub sigma: f64,
}

/// Evaluate one of the explicit nonlinear terms about `wave`.
pub fn nonlinear_term(kind: NonlinearTerm, wave: &WaveProfile, inputs: TermInputs) -> Result<RealPairField> {
    let need_v = || inputs.v.ok_or_else(|| Error::InvalidInput(format!("{kind:?} needs a localized argument")));
    let need_g = || inputs.gamma.ok_or_else(|| Error::InvalidInput(format!("{kind:?} needs gamma")));
    let grid = inputs.v.map(|v| v.grid).unwrap_or(inputs.w.grid);
    let phi = tile_to(&wave.profile, grid);
    let w = tile_to(inputs.w, grid);
    let beta = wave.params.beta;
    Ok(match kind {
        NonlinearTerm::R1 => r1(&phi, &w),
        NonlinearTerm::R21 => r21(&phi, &w, need_v()?),
        NonlinearTerm::R22 => r22(&phi, &w, need_v()?),
        NonlinearTerm::R2 => r2(&phi, &w, need_v()?),
        NonlinearTerm::Q => q_term(&phi, &w, need_v()?, need_g()?),
        NonlinearTerm::S => s_term(&tile_to(&wave.derivative, grid), need_v()?, need_g()?, beta)?,
        NonlinearTerm::P => p_term(need_v()?, need_g()?, beta)?,
        NonlinearTerm::T => t_term(&phi, &w, need_g()?, beta)?,
        NonlinearTerm::R4 => r4(&wave.profile, inputs.w, inputs.sigma),
        NonlinearTerm::R5 => {
            let g = need_g()?;
            r5(wave, inputs.w, g, grid)
        }
    })
}

/// Smooth synthetic data with known time derivatives for the identity checks.
/// `w` is the total co-periodic field, `u` the full field.
#[derive(Debug, Clone)]
pub struct ManufacturedState {
    pub u: RealPairField,
    pub u_t: RealPairField,
    pub w: RealPairField,
    pub w_t: RealPairField,
    pub sigma: f64,
    pub sigma_t: f64,
    pub gamma: GammaFields,
}

impl ManufacturedState {
    /// Replace the time derivatives by the evolution right-hand sides.
    pub fn with_exact_dynamics(mut self, params: &WaveParameters) -> Self {
        self.u_t = lle_rhs(&self.u, params);
        self.w_t = lle_rhs(&self.w, params);
        self
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IdentityReport {
    /// `‖LHS - RHS - defect‖_{L²}`.
    pub residual: f64,
    pub lhs_norm: f64,
    pub rhs_norm: f64,
    /// Norm of the part generated by `u_t - F(u)` and `w_t - F(w)`.
    pub defect_norm: f64,
}

fn l2(f: &RealPairField) -> f64 {
    spectral::norm(f, NormKind::L2)
}

/// Residual of the inverse-modulated `v̂` equation
/// `(∂_t - ℒ₀)(v̂ + φ'γ - γ_x ŵ - γ_x v̂) = ℛ₃ - σ_t v̂_x + (1-γ_x)ℛ₂,₂(ŵ, v̂) + 𝒯`.
///
/// Fields that do not solve the evolution equation contribute
/// `(1-γ_x) D_u(x-σ-γ) - D_w(x-σ)` with `D = ∂_t - F`, which is accounted for.
/// `retain_sigma_term` adds `σ_t ŵ_x` to the right-hand side, the term that
/// cancels in the derivation.
pub fn residual_identity_inverse(
    m: &ManufacturedState,
    wave: &WaveProfile,
    retain_sigma_term: bool,
) -> Result<IdentityReport> {
    let grid = m.u.grid;
    let p = &wave.params;
    let g = &m.gamma;
    g.check()?;
    let phi = tile_to(&wave.profile, grid);
    let phi_p = tile_to(&wave.derivative, grid);
    let disp = &g.gamma;
    // ŵ and its time derivative on one period, then tiled
    let w_hat_p = translate(&m.w, m.sigma).sub(&wave.profile);
    let wx = derivative_unchecked(&m.w, 1);
    let w_hat_t_p = translate(&m.w_t, m.sigma).sub(&translate(&wx, m.sigma).scale(m.sigma_t));
    let w_hat = tile_to(&w_hat_p, grid);
    let w_hat_t = tile_to(&w_hat_t_p, grid);
    // v̂ and its time derivative
    let u_a = compose(&m.u, m.sigma, disp);
    let ux_a = compose(&derivative_unchecked(&m.u, 1), m.sigma, disp);
    let ut_a = compose(&m.u_t, m.sigma, disp);
    let v_hat = u_a.sub(&w_hat).sub(&phi);
    let speed: Vec<f64> = g.gt.iter().map(|gt| m.sigma_t + gt).collect();
    let v_hat_t = ut_a.sub(&ux_a.mul_scalar_field(&speed)).sub(&w_hat_t);
    // Z = v̂ + φ'γ - γ_x ŵ - γ_x v̂
    let z = v_hat.add(&phi_p.mul_scalar_field(&g.gamma)).sub(&w_hat.mul_scalar_field(&g.gx)).sub(&v_hat.mul_scalar_field(&g.gx));
    let z_t = v_hat_t
        .add(&phi_p.mul_scalar_field(&g.gt))
        .sub(&w_hat.mul_scalar_field(&g.gxt))
        .sub(&w_hat_t.mul_scalar_field(&g.gx))
        .sub(&v_hat.mul_scalar_field(&g.gxt))
        .sub(&v_hat_t.mul_scalar_field(&g.gx));
    let lhs = z_t.sub(&apply_linearization(&phi, &z, p));
    let v_hat_x = derivative_unchecked(&v_hat, 1);
    let one_minus: Vec<f64> = g.gx.iter().map(|x| 1.0 - x).collect();
    let mut rhs = r3(&phi, &phi_p, &w_hat, &v_hat, g, p.beta)?
        .sub(&v_hat_x.scale(m.sigma_t))
        .add(&r22(&phi, &w_hat, &v_hat).mul_scalar_field(&one_minus))
        .add(&t_term(&phi, &w_hat, g, p.beta)?);
    if retain_sigma_term {
        rhs = rhs.add(&tile_to(&derivative_unchecked(&w_hat_p, 1), grid).scale(m.sigma_t));
    }
    let du = m.u_t.sub(&lle_rhs(&m.u, p));
    let dw = m.w_t.sub(&lle_rhs(&m.w, p));
    let defect = compose(&du, m.sigma, disp).mul_scalar_field(&one_minus).sub(&tile_to(&translate(&dw, m.sigma), grid));
    let res = lhs.sub(&rhs).sub(&defect);
    Ok(IdentityReport { residual: l2(&res), lhs_norm: l2(&lhs), rhs_norm: l2(&rhs), defect_norm: l2(&defect) })
}

/// Residual of the forward-modulated equation
/// `(∂_t - ℒ₀(φ̊)) v̊ = ℛ₂(φ̊)(w̃(·+γ), v̊) + ℛ₅(w̃, γ, γ_t)`, `φ̊ = φ(·+γ)`;
/// the defect `D_u - D_w(·+γ)` is accounted for as in the inverse case.
pub fn residual_identity_forward(m: &ManufacturedState, wave: &WaveProfile) -> Result<IdentityReport> {
    let grid = m.u.grid;
    let p = &wave.params;
    let g = &m.gamma;
    let disp = g.neg_disp();
    let w_full = tile_to(&m.w, grid);
    let w_tilde = m.w.sub(&wave.profile);
    let w_g = compose(&w_full, 0.0, &disp);
    let wx_g = compose(&tile_to(&derivative_unchecked(&m.w, 1), grid), 0.0, &disp);
    let wt_g = compose(&tile_to(&m.w_t, grid), 0.0, &disp);
    let ring_v = m.u.sub(&w_g);
    let ring_v_t = m.u_t.sub(&wt_g).sub(&wx_g.mul_scalar_field(&g.gt));
    let ring_phi = compose(&tile_to(&wave.profile, grid), 0.0, &disp);
    let lhs = ring_v_t.sub(&apply_linearization(&ring_phi, &ring_v, p));
    let w_tilde_g = compose(&tile_to(&w_tilde, grid), 0.0, &disp);
    let rhs = r2(&ring_phi, &w_tilde_g, &ring_v).add(&r5(wave, &w_tilde, g, grid));
    let du = m.u_t.sub(&lle_rhs(&m.u, p));
    let dw = m.w_t.sub(&lle_rhs(&m.w, p));
    let defect = du.sub(&compose(&tile_to(&dw, grid), 0.0, &disp));
    let res = lhs.sub(&rhs).sub(&defect);
    Ok(IdentityReport { residual: l2(&res), lhs_norm: l2(&lhs), rhs_norm: l2(&rhs), defect_norm: l2(&defect) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaMethod {
    Projection,
    Fit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaTrack {
    pub method: SigmaMethod,
    pub times: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sigma_dot: Vec<f64>,
}

fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    (0..n)
        .map(|j| {
            let left = if j > 0 { times[j] - times[j - 1] } else { 0.0 };
            let right = if j + 1 < n { times[j + 1] - times[j] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

fn check_spacing(times: &[f64]) -> Result<()> {
    if times.len() < 2 || times[0] != 0.0 {
        return Err(Error::InsufficientData("trajectory must start at t = 0 and hold two snapshots".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0] && w[1] - w[0] < 1.0)) {
        return Err(Error::InsufficientData("snapshot spacing must be increasing and below 1".into()));
    }
    Ok(())
}

/// Temporal phase `σ(t)` at the snapshot times.
///
/// `Projection` evaluates the Duhamel choice
/// `σ(t) = χ(t)<Φ̃₀, w̃₀> + ∫₀ᵗ χ(t-s)<Φ̃₀, ℛ₄(ẘ,σ) - (φ'(·+σ) - φ')σ_s> ds`;
/// since `χ(t-s) = 0` for `s ≥ t-1`, it is explicit in time and marched by the
/// trapezoid rule over snapshots. `Fit` returns `argmin_s ‖w(·-s,t) - φ‖`
/// followed continuously from 0.
pub fn extract_sigma(traj: &Trajectory, wave: &WaveProfile, zm: &ZeroModeData, method: SigmaMethod) -> Result<SigmaTrack> {
    let times = traj.times();
    check_spacing(&times)?;
    match method {
        SigmaMethod::Projection => sigma_projection(traj, wave, zm, &times),
        SigmaMethod::Fit => sigma_fit(traj, wave, &times),
    }
}

fn sigma_projection(traj: &Trajectory, wave: &WaveProfile, zm: &ZeroModeData, times: &[f64]) -> Result<SigmaTrack> {
    // march on the dense co-periodic history when it is available
    let dense: Vec<(f64, &RealPairField)> = if traj.coperiodic.len() > traj.snapshots.len() {
        traj.coperiodic.iter().map(|(t, w)| (*t, w)).collect()
    } else {
        traj.snapshots.iter().map(|s| (s.time, s.w())).collect()
    };
    let dt: Vec<f64> = dense.iter().map(|d| d.0).collect();
    check_spacing(&dt)?;
    let (sigma, sigma_dot) = sigma_march(&dense, wave, zm);
    let mut out = SigmaTrack { method: SigmaMethod::Projection, times: times.to_vec(), sigma: Vec::new(), sigma_dot: Vec::new() };
    let mut j = 0;
    for &t in times {
        while j < dt.len() && dt[j] < t - 1e-9 {
            j += 1;
        }
        if j == dt.len() || (dt[j] - t).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("snapshot time {t} missing from the co-periodic history")));
        }
        out.sigma.push(sigma[j]);
        out.sigma_dot.push(sigma_dot[j]);
    }
    Ok(out)
}

/// Forward march of the σ Duhamel formula over `(t, w)` samples.
fn sigma_march(samples: &[(f64, &RealPairField)], wave: &WaveProfile, zm: &ZeroModeData) -> (Vec<f64>, Vec<f64>) {
    let times: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let weights = trapezoid_weights(&times);
    let n = times.len();
    let h = times[n - 1] / (n - 1) as f64;
    let uniform = times.iter().enumerate().all(|(i, t)| (t - i as f64 * h).abs() < 1e-9 * h.max(1.0));
    // χ(lag), χ'(lag) on 1 < lag < 2 by lag index for uniform samples
    let table: Vec<(f64, f64)> = if uniform {
        (0..=((2.0 / h).ceil() as usize + 1)).map(|l| (chi(l as f64 * h), chi_dot(l as f64 * h))).collect()
    } else {
        Vec::new()
    };
    let adj = &zm.adjoint_mode;
    let c0 = adj.inner(&samples[0].1.sub(&wave.profile));
    let mut sigma = vec![0.0; n];
    let mut sigma_dot = vec![0.0; n];
    let mut g = vec![0.0; n];
    // prefix sum of w_j g_j over samples with lag ≥ 2 (where χ = 1, χ' = 0)
    let mut full = 0.0;
    let mut full_upto = 0;
    for k in 0..n {
        let t = times[k];
        while full_upto < k && t - times[full_upto] >= 2.0 {
            full += weights[full_upto] * g[full_upto];
            full_upto += 1;
        }
        let (mut s, mut sd) = (chi(t) * c0 + full, chi_dot(t) * c0);
        // Gregory end correction at s = 0; the integrand is flat at s = t - 1
        if uniform && k > 4 && chi(t) > 0.0 {
            let f: Vec<f64> = (0..5).map(|j| chi(t - times[j]) * g[j]).collect();
            let d1 = f[1] - f[0];
            let d2 = f[2] - 2.0 * f[1] + f[0];
            let d3 = f[3] - 3.0 * f[2] + 3.0 * f[1] - f[0];
            let d4 = f[4] - 4.0 * f[3] + 6.0 * f[2] - 4.0 * f[1] + f[0];
            s += h * (d1 / 12.0 - d2 / 24.0 + 19.0 * d3 / 720.0 - 3.0 * d4 / 160.0);
        }
        for j in full_upto..k {
            let lag = t - times[j];
            if lag <= 1.0 {
                break;
            }
            let (x, xd) = if uniform && k - j < table.len() { table[k - j] } else { (chi(lag), chi_dot(lag)) };
            s += weights[j] * x * g[j];
            sd += weights[j] * xd * g[j];
        }
        sigma[k] = s;
        sigma_dot[k] = sd;
        let ring_w = samples[k].1.sub(&translate(&wave.profile, -s));
        let shifted_dp = translate(&wave.derivative, -s);
        let src = r4(&wave.profile, &ring_w, s).sub(&shifted_dp.sub(&wave.derivative).scale(sd));
        g[k] = adj.inner(&src);
    }
    (sigma, sigma_dot)
}

/// `argmin_s ‖f(·-s) - φ‖` by Newton on the Fourier correlation, from `start`.
pub fn best_shift(f: &RealPairField, phi: &RealPairField, start: f64) -> Result<f64> {
    let grid = f.grid;
    let n = grid.num_points();
    let fc = coefficients(f);
    let pc = coefficients(phi);
    let prod: Vec<(f64, c64)> = (0..2 * n)
        .map(|i| (grid.wavenumber(i % n), pc[i].conj() * fc[i]))
        .filter(|(_, c)| c.norm() > 0.0)
        .collect();
    // correlation c(s) = Σ Re(p e^{-iks}); maximize
    let derivs = |s: f64| {
        let (mut d1, mut d2) = (0.0, 0.0);
        for (k, p) in &prod {
            let e = p * c64::from_polar(1.0, -k * s);
            d1 += (e * c64::new(0.0, -k)).re;
            d2 += (e * (-k * k)).re;
        }
        (d1, d2)
    };
    let value = |s: f64| prod.iter().map(|(k, p)| (p * c64::from_polar(1.0, -k * s)).re).sum::<f64>();
    let t = grid.length();
    let mut s = start;
    for _ in 0..50 {
        let (d1, d2) = derivs(s);
        let step = if d2 < 0.0 { -d1 / d2 } else { d1.signum() * t / 64.0 };
        let step = step.clamp(-t / 16.0, t / 16.0);
        // backtrack so the correlation does not decrease
        let base = value(s);
        let mut a = 1.0;
        while a > 1e-6 && value(s + a * step) < base - 1e-15 * base.abs() {
            a *= 0.5;
        }
        s += a * step;
        if (a * step).abs() < 1e-14 * t.max(1.0) {
            break;
        }
    }
    Ok(s)
}

fn sigma_fit(traj: &Trajectory, wave: &WaveProfile, times: &[f64]) -> Result<SigmaTrack> {
    let t_per = wave.params.period;
    let mut sigma = Vec::with_capacity(times.len());
    let mut prev = 0.0;
    for (k, snap) in traj.snapshots.iter().enumerate() {
        let s = best_shift(snap.w(), &wave.profile, prev)?;
        if (s - prev).abs() > 0.5 * t_per {
            return Err(Error::Tracking { time: times[k] });
        }
        sigma.push(s);
        prev = s;
    }
    let sigma_dot = time_derivative(times, &sigma);
    Ok(SigmaTrack { method: SigmaMethod::Fit, times: times.to_vec(), sigma, sigma_dot })
}

/// Second-order finite differences on a possibly nonuniform time grid.
pub fn time_derivative(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = t.len();
    if n < 3 {
        return vec![if n == 2 { (y[1] - y[0]) / (t[1] - t[0]) } else { 0.0 }; n];
    }
    (0..n)
        .map(|i| {
            let (a, b, c) = if i == 0 {
                (0, 1, 2)
            } else if i == n - 1 {
                (n - 3, n - 2, n - 1)
            } else {
                (i - 1, i, i + 1)
            };
            let (ta, tb, tc) = (t[a], t[b], t[c]);
            let x = t[i];
            // derivative of the quadratic interpolant at x
            y[a] * (2.0 * x - tb - tc) / ((ta - tb) * (ta - tc))
                + y[b] * (2.0 * x - ta - tc) / ((tb - ta) * (tb - tc))
                + y[c] * (2.0 * x - ta - tb) / ((tc - ta) * (tc - tb))
        })
        .collect()
}

/// `σ_* = σ(t_end) + ∫_{t_end}^∞ σ_t`, the tail from an exponential fit of
/// `|σ_t|` over the second half of the track. Returns `(σ_*, fit rms residual)`.
pub fn sigma_star(track: &SigmaTrack) -> (f64, f64) {
    let n = track.times.len();
    let last = track.sigma[n - 1];
    let pts: Vec<(f64, f64)> = (n / 2..n)
        .filter(|&i| track.sigma_dot[i].abs() > 1e-300)
        .map(|i| (track.times[i], track.sigma_dot[i].abs().ln()))
        .collect();
    if pts.len() < 3 {
        return (last, 0.0);
    }
    let (slope, intercept) = crate::diagnostics::linear_fit(&pts);
    let rms = (pts.iter().map(|(x, y)| (y - slope * x - intercept).powi(2)).sum::<f64>() / pts.len() as f64).sqrt();
    if slope >= 0.0 {
        return (last, rms);
    }
    (last + track.sigma_dot[n - 1] / -slope, rms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaMethod {
    Duhamel,
    Fit,
}

/// `σ`, `γ` and derivatives at the snapshot times.
#[derive(Debug, Clone)]
pub struct ModulationTrack {
    pub sigma: SigmaTrack,
    pub gamma_method: GammaMethod,
    pub sigma_star: f64,
    pub sigma_star_residual: f64,
    pub gamma: Vec<ScalarField>,
    pub gamma_x: Vec<ScalarField>,
    pub gamma_xx: Vec<ScalarField>,
    pub gamma_t: Vec<ScalarField>,
    /// First snapshot time at which `‖γ_x‖∞ > 1/2`; later snapshots are dropped.
    pub validity_end: Option<f64>,
    /// Largest change of `γ` (in `H²`) produced by a verification sweep.
    pub picard_change: f64,
}

impl ModulationTrack {
    pub fn times(&self) -> &[f64] {
        &self.sigma.times[..self.gamma.len()]
    }

    pub fn gamma_fields(&self, k: usize) -> GammaFields {
        GammaFields::from_fields(&self.gamma[k], &self.gamma_t[k])
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }
}

/// Inverse-modulated `(ŵ, v̂)` of one snapshot.
fn inverse_pair(
    wave: &WaveProfile,
    w: &RealPairField,
    u: &RealPairField,
    sigma: f64,
    gamma: &[f64],
) -> (RealPairField, RealPairField) {
    let w_hat = translate(w, sigma).sub(&wave.profile);
    let grid = u.grid;
    let v_hat = compose(u, sigma, gamma).sub(&tile_to(&w_hat, grid)).sub(&tile_to(&wave.profile, grid));
    (w_hat, v_hat)
}

/// Source of the `γ` Duhamel formula at one time.
fn gamma_source(
    wave: &WaveProfile,
    w_hat: &RealPairField,
    v_hat: &RealPairField,
    g: &GammaFields,
    sigma_dot: f64,
) -> Result<RealPairField> {
    let grid = v_hat.grid;
    let phi = tile_to(&wave.profile, grid);
    let phi_p = tile_to(&wave.derivative, grid);
    let w_hat = tile_to(w_hat, grid);
    let beta = wave.params.beta;
    let one_minus: Vec<f64> = g.gx.iter().map(|x| 1.0 - x).collect();
    Ok(r3(&phi, &phi_p, &w_hat, v_hat, g, beta)?
        .sub(&derivative_unchecked(v_hat, 1).scale(sigma_dot))
        .add(&r22(&phi, &w_hat, v_hat).mul_scalar_field(&one_minus))
        .add(&t_term(&phi, &w_hat, g, beta)?))
}

/// `γ(x,t)` at the snapshot times.
///
/// `Duhamel` evaluates `γ(t) = s_p(t)v₀ + ∫₀ᵗ s_p(t-s) H(s) ds` with
/// `H = ℛ₃ - σ_s v̂_x + (1-γ_x)ℛ₂,₂(ŵ,v̂) + 𝒯`. Because `s_p(τ) = 0` for
/// `τ ≤ 1`, the value at `t` only uses `H` on `[0, t-1]`, so marching forward
/// through the snapshots produces the fixed point; a verification sweep
/// recomputes every `γ(t)` from the final sources and reports the change.
/// `Fit` is a diagnostic: per cell, the local shift minimizing
/// `‖u(·-σ-g) - w(·-σ)‖` over a Gaussian window, interpolated smoothly.
pub fn extract_gamma(
    traj: &Trajectory,
    wave: &WaveProfile,
    bp: &BlochPropagator,
    sigma: &SigmaTrack,
    method: GammaMethod,
) -> Result<ModulationTrack> {
    let times = traj.times();
    check_spacing(&times)?;
    if sigma.times.len() != times.len() {
        return Err(Error::InvalidInput("sigma track does not match the trajectory".into()));
    }
    let (sigma_star, sigma_star_residual) = sigma_star(sigma);
    let mut track = ModulationTrack {
        sigma: sigma.clone(),
        gamma_method: method,
        sigma_star,
        sigma_star_residual,
        gamma: Vec::new(),
        gamma_x: Vec::new(),
        gamma_xx: Vec::new(),
        gamma_t: Vec::new(),
        validity_end: None,
        picard_change: 0.0,
    };
    match method {
        GammaMethod::Duhamel => gamma_duhamel(traj, wave, bp, &times, &mut track)?,
        GammaMethod::Fit => gamma_fit(traj, &times, &mut track)?,
    }
    Ok(track)
}

struct DuhamelKernel {
    active: Vec<usize>,
    lambda: Vec<c64>,
    window: Vec<f64>,
}

impl DuhamelKernel {
    fn new(bp: &BlochPropagator) -> Self {
        let lam = bp.critical_values();
        let active: Vec<usize> =
            (0..bp.cells()).filter(|&k| bp.window(k) > 0.0 && bp.critical_eigenvalue(k).is_some()).collect();
        Self { active, lambda: lam, window: (0..bp.cells()).map(|k| bp.window(k)).collect() }
    }

    /// Amplitudes of `γ` and `γ_t` at time `t` from the initial coefficients and
    /// the sources `c_H(s_j)` for `j < upto`.
    fn amplitudes(&self, t: f64, c_v0: &[c64], sources: &[Vec<c64>], times: &[f64], weights: &[f64]) -> (Vec<c64>, Vec<c64>) {
        let m = self.lambda.len();
        let mut a = vec![c64::new(0.0, 0.0); m];
        let mut at = vec![c64::new(0.0, 0.0); m];
        let mut add = |lag: f64, weight: f64, c: &[c64]| {
            let (x, xd) = (chi(lag), chi_dot(lag));
            if x == 0.0 && xd == 0.0 {
                return;
            }
            for &k in &self.active {
                let e = (self.lambda[k] * lag).exp() * c[k] * (weight * self.window[k]);
                a[k] += e * x;
                at[k] += e * (xd + x * self.lambda[k]);
            }
        };
        add(t, 1.0, c_v0);
        for (j, c) in sources.iter().enumerate() {
            let lag = t - times[j];
            if lag <= 1.0 {
                break;
            }
            add(lag, weights[j], c);
        }
        (a, at)
    }
}

fn gamma_duhamel(
    traj: &Trajectory,
    wave: &WaveProfile,
    bp: &BlochPropagator,
    times: &[f64],
    track: &mut ModulationTrack,
) -> Result<()> {
    let weights = trapezoid_weights(times);
    let kernel = DuhamelKernel::new(bp);
    let v0 = traj.snapshots[0].v();
    if v0.grid != bp.grid {
        return Err(Error::InvalidInput("propagator grid does not match the trajectory".into()));
    }
    let c_v0 = bp.critical_coefficients(v0);
    let mut sources: Vec<Vec<c64>> = Vec::with_capacity(times.len());
    for (k, snap) in traj.snapshots.iter().enumerate() {
        let t = times[k];
        let (a, at) = kernel.amplitudes(t, &c_v0, &sources, times, &weights);
        let gamma = bp.phase_field(&a, 0);
        let gamma_t = bp.phase_field(&at, 0);
        let g = GammaFields::from_fields(&gamma, &gamma_t);
        if g.max_gx() > 0.5 {
            track.validity_end = Some(t);
            break;
        }
        let (w_hat, v_hat) = inverse_pair(wave, snap.w(), &snap.u(), track.sigma.sigma[k], &g.gamma);
        let h = gamma_source(wave, &w_hat, &v_hat, &g, track.sigma.sigma_dot[k])?;
        sources.push(bp.critical_coefficients(&h));
        track.gamma_x.push(ScalarField { grid: gamma.grid, values: g.gx.clone() });
        track.gamma_xx.push(ScalarField { grid: gamma.grid, values: g.gxx.clone() });
        track.gamma.push(gamma);
        track.gamma_t.push(gamma_t);
    }
    // verification sweep with every source available
    let mut change = 0.0f64;
    for (k, g_old) in track.gamma.iter().enumerate() {
        let (a, _) = kernel.amplitudes(times[k], &c_v0, &sources, times, &weights);
        let g_new = bp.phase_field(&a, 0);
        change = change.max(spectral::scalar_norm(&g_new.sub(g_old), NormKind::H2));
    }
    track.picard_change = change;
    Ok(())
}

fn gamma_fit(traj: &Trajectory, times: &[f64], track: &mut ModulationTrack) -> Result<()> {
    for (k, snap) in traj.snapshots.iter().enumerate() {
        let sigma = track.sigma.sigma[k];
        let u = snap.u();
        let grid = u.grid;
        let t_per = grid.cell_period();
        let m = grid.num_cells();
        let w_full = tile_to(&translate(snap.w(), sigma), grid);
        let base = translate(&u, sigma);
        let mut shifts = vec![0.0; m];
        for (c, s) in shifts.iter_mut().enumerate() {
            let center = (c as f64 + 0.5) * t_per;
            let l = grid.length();
            let weight: Vec<f64> = (0..grid.num_points())
                .map(|i| {
                    let mut y = grid.x(i) - center;
                    y -= l * (y / l).round();
                    (-(y / t_per).powi(2)).exp()
                })
                .collect();
            // Gauss-Newton on the local shift
            let mut g = 0.0;
            for _ in 0..3 {
                let cur = if g == 0.0 { base.clone() } else { translate(&base, g) };
                let r = cur.sub(&w_full);
                let dir = if g == 0.0 { derivative_unchecked(&base, 1) } else { derivative_unchecked(&cur, 1) };
                let num: f64 = (0..grid.num_points()).map(|i| weight[i] * (r.re[i] * dir.re[i] + r.im[i] * dir.im[i])).sum();
                let den: f64 = (0..grid.num_points()).map(|i| weight[i] * (dir.re[i].powi(2) + dir.im[i].powi(2))).sum();
                if den <= 1e-300 {
                    break;
                }
                g += num / den;
            }
            *s = g;
        }
        // band-limited interpolation of the cell shifts onto the grid
        let coarse = PeriodicGrid::new(m, grid.length(), 1)?;
        let samples = ScalarField { grid: coarse, values: shifts };
        let pts: Vec<f64> = (0..grid.num_points()).map(|i| grid.x(i) - 0.5 * t_per).collect();
        let vals = spectral::interpolate(&samples.as_pair(), &pts);
        let gamma = ScalarField { grid, values: vals.iter().map(|v| v.0).collect() };
        let gx = scalar_derivative(&gamma, 1);
        if gx.max_abs() > 0.5 {
            track.validity_end = Some(times[k]);
            break;
        }
        track.gamma_xx.push(scalar_derivative(&gamma, 2));
        track.gamma_x.push(gx);
        track.gamma.push(gamma);
    }
    // γ_t by differences in time
    let n = track.gamma.len();
    let np = track.gamma.first().map(|g| g.values.len()).unwrap_or(0);
    let mut gt = vec![vec![0.0; np]; n];
    for i in 0..np {
        let series: Vec<f64> = track.gamma.iter().map(|g| g.values[i]).collect();
        let d = time_derivative(&times[..n], &series);
        for k in 0..n {
            gt[k][i] = d[k];
        }
    }
    track.gamma_t = gt.into_iter().zip(&track.gamma).map(|(v, g)| ScalarField { grid: g.grid, values: v }).collect();
    Ok(())
}

/// Modulated perturbations at the snapshot times of a track.
#[derive(Debug, Clone)]
pub struct ModulatedPerturbations {
    pub times: Vec<f64>,
    pub hat_w: Vec<RealPairField>,
    pub hat_v: Vec<RealPairField>,
    pub ring_w: Vec<RealPairField>,
    pub ring_v: Vec<RealPairField>,
}

/// `ŵ = w(·-σ) - φ` and `v̂ = u(·-σ-γ) - ŵ - φ`.
pub fn inverse_modulated(traj: &Trajectory, track: &ModulationTrack, wave: &WaveProfile) -> ModulatedPerturbations {
    let n = track.len();
    let mut out = ModulatedPerturbations {
        times: track.times().to_vec(),
        hat_w: Vec::with_capacity(n),
        hat_v: Vec::with_capacity(n),
        ring_w: Vec::new(),
        ring_v: Vec::new(),
    };
    let pairs: Vec<_> = (0..n)
        .into_par_iter()
        .map(|k| {
            let snap = &traj.snapshots[k];
            inverse_pair(wave, snap.w(), &snap.u(), track.sigma.sigma[k], &track.gamma[k].values)
        })
        .collect();
    (out.hat_w, out.hat_v) = pairs.into_iter().unzip();
    out
}

/// `ẘ = w - φ(·+σ)` and `v̊ = v + w - w(·+γ)`.
pub fn forward_modulated(traj: &Trajectory, track: &ModulationTrack, wave: &WaveProfile) -> ModulatedPerturbations {
    let n = track.len();
    let mut out = ModulatedPerturbations {
        times: track.times().to_vec(),
        hat_w: Vec::new(),
        hat_v: Vec::new(),
        ring_w: Vec::with_capacity(n),
        ring_v: Vec::with_capacity(n),
    };
    let pairs: Vec<_> = (0..n)
        .into_par_iter()
        .map(|k| {
            let snap = &traj.snapshots[k];
            let ring_w = snap.w().sub(&translate(&wave.profile, -track.sigma.sigma[k]));
            (ring_w, forward_v(snap.w(), snap.v(), &track.gamma[k].values))
        })
        .collect();
    (out.ring_w, out.ring_v) = pairs.into_iter().unzip();
    out
}

pub fn forward_v(w: &RealPairField, v: &RealPairField, gamma: &[f64]) -> RealPairField {
    let wf = tile_to(w, v.grid);
    let disp: Vec<f64> = gamma.iter().map(|g| -g).collect();
    v.add(&wf).sub(&compose(&wf, 0.0, &disp))
}

/// Both families at once.
pub fn modulated_perturbations(traj: &Trajectory, track: &ModulationTrack, wave: &WaveProfile) -> ModulatedPerturbations {
    let mut inv = inverse_modulated(traj, track, wave);
    let fwd = forward_modulated(traj, track, wave);
    inv.ring_w = fwd.ring_w;
    inv.ring_v = fwd.ring_v;
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn wave(points: usize) -> WaveProfile {
        let params = WaveParameters::new(1.0, -1.0, 1.2, 2.0 * PI).unwrap();
        crate::steady::turing_wave(&params, points).unwrap()
    }

    fn random_field(rng: &mut ChaCha8Rng, grid: PeriodicGrid, amp: f64) -> RealPairField {
        let mut f = RealPairField::zeros(grid);
        for i in 0..grid.num_points() {
            f.re[i] = amp * rng.gen_range(-1.0..1.0);
            f.im[i] = amp * rng.gen_range(-1.0..1.0);
        }
        f
    }

    #[test]
    fn residual_terms_vanish_at_zero_and_decompose() {
        let w = wave(32);
        let grid = w.grid();
        let z = RealPairField::zeros(grid);
        assert_eq!(r1(&w.profile, &z).max_abs(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_field(&mut rng, grid, 0.3);
        let b = random_field(&mut rng, grid, 0.3);
        assert_eq!(r2(&w.profile, &a, &z).max_abs(), 0.0);
        let d = r2(&w.profile, &a, &b).sub(&r21(&w.profile, &a, &b)).sub(&r22(&w.profile, &a, &b));
        assert!(d.max_abs() < 1e-12);
        // R1 against its definition N(φ+w) - N(φ) - N'(φ)w
        let n = |u: (f64, f64)| crate::model::cubic(u);
        for i in 0..grid.num_points() {
            let p = w.profile.value(i);
            let x = a.value(i);
            let full = n((p.0 + x.0, p.1 + x.1));
            let base = n(p);
            let lin = cubic_derivative(p, x);
            let r = r1(&w.profile, &a).value(i);
            assert!((full.0 - base.0 - lin.0 - r.0).abs() < 1e-13);
            assert!((full.1 - base.1 - lin.1 - r.1).abs() < 1e-13);
        }
        let g = GammaFields::zeros(grid);
        assert_eq!(r5(&w, &z, &g, grid).max_abs(), 0.0);
    }

    fn manufactured(w: &WaveProfile, cells: usize, gx_max: f64) -> ManufacturedState {
        let grid = w.grid().with_cells(cells);
        let l = grid.length();
        let c = 0.5 * l;
        let s = l / 16.0;
        let a = gx_max * s * 0.5f64.exp();
        let gauss = |x: f64, c: f64, s: f64| (-(x - c).powi(2) / (2.0 * s * s)).exp();
        let gamma = ScalarField::from_fn(grid, |x| a * gauss(x, c, s));
        let gamma_t = ScalarField::from_fn(grid, |x| -0.2 * a * gauss(x, c + 1.0, 1.2 * s));
        let g = GammaFields::from_fields(&gamma, &gamma_t);
        let wt = RealPairField::from_fn(w.grid(), |x| (0.01 * x.sin(), 0.02 * (2.0 * x).cos()));
        let wtot = w.profile.add(&wt);
        let v = RealPairField::from_fn(grid, |x| (0.1 * gauss(x, c - 2.0, s), -0.05 * gauss(x, c + 3.0, s)));
        let u = tile_to(&wtot, grid).add(&v);
        let u_t = RealPairField::from_fn(grid, |x| (0.03 * gauss(x, c, s) * x.cos(), 0.02 * gauss(x, c, s)));
        let w_t = RealPairField::from_fn(w.grid(), |x| (0.004 * (3.0 * x).cos(), -0.01 * x.sin()));
        ManufacturedState { u, u_t, w: wtot, w_t, sigma: 0.12, sigma_t: 0.03, gamma: g }
    }

    #[test]
    fn inverse_identity_holds_on_manufactured_fields() {
        let w = wave(64);
        let m = manufactured(&w, 8, 0.3);
        assert!((m.gamma.max_gx() - 0.3).abs() < 1e-3);
        let r = residual_identity_inverse(&m, &w, false).unwrap();
        assert!(r.residual < 1e-9 * r.lhs_norm.max(1.0), "{r:?}");
        assert!(r.defect_norm > 1e-3);
        let kept = residual_identity_inverse(&m, &w, true).unwrap();
        let expected = 0.03 * l2(&tile_to(&derivative_unchecked(&translate(&m.w, m.sigma).sub(&w.profile), 1), m.u.grid));
        assert!((kept.residual - expected).abs() < 1e-8 * expected, "{kept:?} {expected}");
        // reduction: no modulation and true dynamics
        let mut z = manufactured(&w, 8, 0.3).with_exact_dynamics(&w.params);
        z.gamma = GammaFields::zeros(z.u.grid);
        z.sigma = 0.0;
        z.sigma_t = 0.0;
        let r0 = residual_identity_inverse(&z, &w, false).unwrap();
        assert!(r0.residual < 1e-10 && r0.defect_norm < 1e-14 + 1e-12 * r0.lhs_norm, "{r0:?}");
    }

    #[test]
    fn forward_identity_holds_on_manufactured_fields() {
        let w = wave(64);
        let m = manufactured(&w, 8, 0.3);
        let r = residual_identity_forward(&m, &w).unwrap();
        assert!(r.residual < 1e-9 * r.lhs_norm.max(1.0), "{r:?}");
        // R5 against the chain rule: u = φ(x+γ), w = φ
        let grid = m.u.grid;
        let disp = m.gamma.neg_disp();
        let u = compose(&tile_to(&w.profile, grid), 0.0, &disp);
        let ux = compose(&tile_to(&w.derivative, grid), 0.0, &disp);
        let chain = lle_rhs(&u, &w.params).sub(&ux.mul_scalar_field(&m.gamma.gt));
        let direct = r5(&w, &RealPairField::zeros(w.grid()), &m.gamma, grid);
        assert!(chain.sub(&direct).max_abs() < 1e-10, "{}", chain.sub(&direct).max_abs());
    }

    #[test]
    fn quadratic_and_bilinear_scaling() {
        let w = wave(32);
        let grid = w.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let a = random_field(&mut rng, grid, 1e-2);
            let b = random_field(&mut rng, grid, 1e-2);
            let q = r1(&w.profile, &a).max_abs() / r1(&w.profile, &a.scale(0.5)).max_abs();
            assert!((3.6..=4.4).contains(&q), "{q}");
            let bl = r22(&w.profile, &a, &b).max_abs() / r22(&w.profile, &a.scale(0.5), &b).max_abs();
            assert!((1.8..=2.2).contains(&bl), "{bl}");
        }
    }

    #[test]
    fn best_shift_recovers_a_translation() {
        let w = wave(64);
        let s0 = 0.03 * w.params.period;
        let f = translate(&w.profile, -s0);
        let s = best_shift(&f, &w.profile, 0.0).unwrap();
        assert!((s - s0).abs() < 1e-10, "{s}");
    }

    #[test]
    fn time_derivative_is_exact_for_quadratics() {
        let t = [0.0, 0.1, 0.25, 0.4, 0.7];
        let y: Vec<f64> = t.iter().map(|x| 1.0 + 2.0 * x - 3.0 * x * x).collect();
        for (x, d) in t.iter().zip(time_derivative(&t, &y)) {
            assert!((d - (2.0 - 6.0 * x)).abs() < 1e-12);
        }
    }

    fn shifted_run(w: &WaveProfile, s0: f64, t_end: f64) -> Trajectory {
        let w0 = translate(&w.profile, -s0).sub(&w.profile);
        let v0 = RealPairField::zeros(w.grid().with_cells(2));
        let opts = crate::evolution::EvolutionOptions { dt: 0.01, t_end, snapshot_stride: 10, ..Default::default() };
        crate::evolution::evolve(w, &(w0, v0), &opts).unwrap()
    }

    #[test]
    fn sigma_recovers_a_pure_translation() {
        let w = wave(32);
        let s0 = 0.03 * w.params.period;
        let traj = shifted_run(&w, s0, 12.0);
        let zm = crate::bloch::zero_mode_data(&w).unwrap();
        let fit = extract_sigma(&traj, &w, &zm, SigmaMethod::Fit).unwrap();
        assert!(fit.sigma.iter().all(|s| (s - s0).abs() < 1e-9));
        let proj = extract_sigma(&traj, &w, &zm, SigmaMethod::Projection).unwrap();
        let n = proj.sigma.len();
        assert!(proj.sigma[..11].iter().all(|s| *s == 0.0));
        // the opposite sign of the σ_s correction settles about 1.4% away
        assert!((proj.sigma[n - 1] - s0).abs() < 1e-4 * s0, "{}", proj.sigma[n - 1]);
        let (star, _) = sigma_star(&proj);
        assert!((star - s0).abs() < 1e-4 * s0);
    }

    #[test]
    fn gamma_track_on_a_tooth() {
        let w = wave(64);
        let report = crate::bloch::verify_assumptions(&w, 32).unwrap();
        let bp = BlochPropagator::new(&w, &report, 8).unwrap();
        let zm = crate::bloch::zero_mode_data(&w).unwrap();
        let spec = crate::evolution::ToothPerturbation::knockout(&w, 8, &[4], 0.5);
        let spec = crate::evolution::ToothPerturbation { depth: 0.05, ..spec };
        let data = crate::evolution::make_tooth_data(&w, &spec).unwrap();
        let opts = crate::evolution::EvolutionOptions { dt: 0.01, t_end: 6.0, snapshot_stride: 20, ..Default::default() };
        let traj = crate::evolution::evolve(&w, &data, &opts).unwrap();
        let sig = extract_sigma(&traj, &w, &zm, SigmaMethod::Projection).unwrap();
        assert!(sig.sigma.iter().all(|s| s.abs() < 1e-12));
        let track = extract_gamma(&traj, &w, &bp, &sig, GammaMethod::Duhamel).unwrap();
        assert_eq!(track.len(), traj.snapshots.len());
        assert!(track.picard_change < 1e-12, "{}", track.picard_change);
        assert!(track.gamma[5].is_zero() && !track.gamma.last().unwrap().is_zero());
        // the modulated equations hold along the computed solution
        for k in [15, track.len() - 1] {
            let snap = &traj.snapshots[k];
            let m = ManufacturedState {
                u: snap.u(),
                u_t: RealPairField::zeros(snap.v().grid),
                w: snap.w().clone(),
                w_t: RealPairField::zeros(w.grid()),
                sigma: sig.sigma[k],
                sigma_t: sig.sigma_dot[k],
                gamma: track.gamma_fields(k),
            }
            .with_exact_dynamics(&w.params);
            let inv = residual_identity_inverse(&m, &w, false).unwrap();
            let fwd = residual_identity_forward(&m, &w).unwrap();
            // composed fields are not band-limited; the inverse side converges with resolution
            assert!(inv.residual < 1e-5 * inv.lhs_norm && fwd.residual < 1e-9, "{inv:?} {fwd:?}");
        }
        let fit = extract_gamma(&traj, &w, &bp, &sig, GammaMethod::Fit).unwrap();
        assert_eq!(fit.len(), traj.snapshots.len());
        let pert = modulated_perturbations(&traj, &track, &w);
        assert_eq!(pert.hat_v.len(), track.len());
        assert!(pert.ring_w.iter().all(|f| f.max_abs() < 1e-12));
    }

    #[test]
    fn projection_and_fit_agree_on_generic_data() {
        let w = wave(32);
        let w0 = RealPairField::from_fn(w.grid(), |x| (0.02 * (x + 0.3).sin(), 0.01 * (2.0 * x).cos() - 0.005));
        let v0 = RealPairField::zeros(w.grid().with_cells(2));
        let opts = crate::evolution::EvolutionOptions { dt: 0.01, t_end: 15.0, snapshot_stride: 10, ..Default::default() };
        let traj = crate::evolution::evolve(&w, &(w0, v0), &opts).unwrap();
        let zm = crate::bloch::zero_mode_data(&w).unwrap();
        let fit = extract_sigma(&traj, &w, &zm, SigmaMethod::Fit).unwrap();
        let proj = extract_sigma(&traj, &w, &zm, SigmaMethod::Projection).unwrap();
        for k in 0..fit.times.len() {
            if fit.times[k] >= 5.0 {
                let (a, b) = (proj.sigma[k], fit.sigma[k]);
                assert!((a - b).abs() <= 0.1 * b.abs() + 1e-6, "t={} {a} {b}", fit.times[k]);
            }
        }
    }
}
