//! Stationary periodic waves: homogeneous states, Newton solves with phase
//! fixing, continuation in the forcing, and seeding from a Turing point.

use faer::Mat;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{PeriodicGrid, RealPairField};
use crate::linalg::{second_derivative_matrix, RealLu};
use crate::model::{cubic_block, lle_rhs, WaveParameters};
use crate::spectral::{self, NormKind};

/// A spatially homogeneous stationary state with intensity `rho = |u|²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantState {
    pub rho: f64,
    pub value: (f64, f64),
}

fn intensity_cubic(rho: f64, alpha: f64, f2: f64) -> f64 {
    rho * (1.0 + (alpha - rho) * (alpha - rho)) - f2
}

fn constant_value(rho: f64, alpha: f64, forcing: f64) -> (f64, f64) {
    // F / (1 + i(α-ρ))
    let d = alpha - rho;
    let s = forcing / (1.0 + d * d);
    (s, -s * d)
}

/// All nonnegative roots of `F² = ρ(1 + (α-ρ)²)` with their constant states.
pub fn homogeneous_states(params: &WaveParameters) -> Vec<ConstantState> {
    let (a, f) = (params.alpha, params.forcing);
    let f2 = f * f;
    if f2 == 0.0 {
        return vec![ConstantState { rho: 0.0, value: (0.0, 0.0) }];
    }
    // the cubic is monotone between the roots of its derivative 3ρ² - 4αρ + 1 + α²
    let mut knots = vec![0.0];
    let disc = 4.0 * a * a - 3.0 * (1.0 + a * a);
    if disc > 0.0 {
        for r in [(2.0 * a - disc.sqrt()) / 3.0, (2.0 * a + disc.sqrt()) / 3.0] {
            if r > 0.0 {
                knots.push(r);
            }
        }
    }
    let mut hi = 1.0f64.max(2.0 * a.abs());
    while intensity_cubic(hi, a, f2) < 0.0 {
        hi *= 2.0;
    }
    knots.push(hi.max(*knots.last().unwrap() + 1.0));
    let p = |r: f64| intensity_cubic(r, a, f2);
    let mut roots: Vec<f64> = Vec::new();
    for w in knots.windows(2) {
        let (mut lo, mut up) = (w[0], w[1]);
        let (plo, pup) = (p(lo), p(up));
        if plo == 0.0 {
            roots.push(lo);
            continue;
        }
        if plo.signum() == pup.signum() {
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + up);
            if p(mid).signum() == plo.signum() {
                lo = mid;
            } else {
                up = mid;
            }
            if up - lo <= 1e-16 * up.max(1.0) {
                break;
            }
        }
        let mut r = 0.5 * (lo + up);
        for _ in 0..3 {
            let d = 3.0 * r * r - 4.0 * a * r + 1.0 + a * a;
            if d.abs() > 1e-300 {
                let nr = r - p(r) / d;
                if nr >= w[0] && nr <= w[1] {
                    r = nr;
                }
            }
        }
        roots.push(r);
    }
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    roots.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * x.abs().max(1.0));
    roots.into_iter().map(|rho| ConstantState { rho, value: constant_value(rho, a, f) }).collect()
}

/// A converged stationary profile on one period.
#[derive(Debug, Clone)]
pub struct WaveProfile {
    pub params: WaveParameters,
    pub profile: RealPairField,
    pub derivative: RealPairField,
    pub second_derivative: RealPairField,
    pub residual_norm: f64,
    pub iterations: usize,
}

impl WaveProfile {
    pub fn from_profile(params: WaveParameters, profile: RealPairField, iterations: usize) -> Self {
        let d = spectral::derivatives(&profile, 2);
        let residual_norm = spectral::norm(&lle_rhs(&profile, &params), NormKind::L2);
        let mut it = d.into_iter();
        let derivative = it.next().unwrap();
        let second_derivative = it.next().unwrap();
        Self { params, profile, derivative, second_derivative, residual_norm, iterations }
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.profile.grid
    }

    /// The (H1) nonconstancy requirement.
    pub fn is_nonconstant(&self) -> bool {
        self.derivative.max_abs() > 1e-8 * self.profile.max_abs().max(1.0)
    }

    /// The same wave translated by `s` (evaluated as `φ(x - s)`).
    pub fn translated(&self, s: f64) -> WaveProfile {
        WaveProfile::from_profile(self.params, spectral::translate(&self.profile, s), self.iterations)
    }
}

pub fn stationary_residual(phi: &RealPairField, params: &WaveParameters) -> RealPairField {
    lle_rhs(phi, params)
}

/// Exact Jacobian of the discretized stationary map, unknowns ordered `[re; im]`.
pub fn stationary_jacobian(phi: &RealPairField, params: &WaveParameters, extra: usize) -> Mat<f64> {
    let n = phi.len();
    let d2 = second_derivative_matrix(&phi.grid);
    let (b, a) = (params.beta, params.alpha);
    let mut jac = Mat::<f64>::zeros(2 * n + extra, 2 * n + extra);
    for i in 0..n {
        for j in 0..n {
            let d = d2[i * n + j];
            if d != 0.0 {
                jac[(i, n + j)] = b * d;
                jac[(n + i, j)] = -b * d;
            }
        }
        let c = cubic_block(phi.value(i));
        jac[(i, i)] += -c[1][0] - 1.0;
        jac[(i, n + i)] += a - c[1][1];
        jac[(n + i, i)] += -a + c[0][0];
        jac[(n + i, n + i)] += c[0][1] - 1.0;
    }
    jac
}

fn flatten(f: &RealPairField) -> Vec<f64> {
    f.re.iter().chain(&f.im).copied().collect()
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_condition: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tolerance: 1e-11, max_iterations: 30, max_condition: 1e12 }
    }
}

/// Newton iteration for a stationary profile starting from `guess`.
///
/// When the guess is nonconstant the phase constraint `<φ'_guess, φ - guess> = 0`
/// is appended (with an unfolding multiplier), which removes the translation
/// kernel. A constant guess is solved without the constraint.
pub fn newton_wave(guess: &RealPairField, params: &WaveParameters) -> Result<WaveProfile> {
    newton_wave_with(guess, params, &NewtonOptions::default())
}

pub fn newton_wave_with(guess: &RealPairField, params: &WaveParameters, opts: &NewtonOptions) -> Result<WaveProfile> {
    params.validate()?;
    if guess.grid.num_cells() != 1 {
        return Err(Error::InvalidInput("newton_wave expects a one-period grid".into()));
    }
    let n = guess.len();
    let gp = spectral::derivative_unchecked(guess, 1);
    let phased = gp.max_abs() > 1e-10 * guess.max_abs().max(1.0);
    let p = flatten(&gp);
    let pnorm = p.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let p: Vec<f64> = p.iter().map(|v| v / pnorm).collect();
    let g0 = flatten(guess);
    let mut phi = guess.clone();
    for it in 0..=opts.max_iterations {
        let r = stationary_residual(&phi, params);
        let rn = spectral::norm(&r, NormKind::L2);
        if !rn.is_finite() {
            return Err(Error::NonFinite("Newton residual".into()));
        }
        if rn <= opts.tolerance {
            return Ok(WaveProfile::from_profile(*params, phi, it));
        }
        if it == opts.max_iterations {
            return Err(Error::NoConvergence { iterations: it, residual: rn });
        }
        let extra = usize::from(phased);
        let mut jac = stationary_jacobian(&phi, params, extra);
        let mut rhs: Vec<f64> = flatten(&r).into_iter().map(|v| -v).collect();
        if phased {
            for (k, pk) in p.iter().enumerate() {
                jac[(k, 2 * n)] = *pk;
                jac[(2 * n, k)] = *pk;
            }
            let cur = flatten(&phi);
            let c: f64 = p.iter().zip(cur.iter().zip(&g0)).map(|(pk, (a, b))| pk * (a - b)).sum();
            rhs.push(-c);
        }
        let lu = RealLu::new(&jac);
        let delta = lu.solve(&rhs);
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularJacobian { condition: f64::INFINITY });
        }
        let cond = lu.condition_estimate();
        if cond > opts.max_condition {
            return Err(Error::SingularJacobian { condition: cond });
        }
        for i in 0..n {
            phi.re[i] += delta[i];
            phi.im[i] += delta[n + i];
        }
    }
    unreachable!()
}

/// Bordered Jacobian condition estimate at a converged profile.
pub fn phase_fixed_condition(wave: &WaveProfile) -> f64 {
    let n = wave.profile.len();
    let mut jac = stationary_jacobian(&wave.profile, &wave.params, 1);
    let p = flatten(&wave.derivative);
    let pn = p.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    for (k, pk) in p.iter().enumerate() {
        jac[(k, 2 * n)] = pk / pn;
        jac[(2 * n, k)] = pk / pn;
    }
    RealLu::new(&jac).condition_estimate()
}

/// Natural-parameter continuation in `F` with a secant predictor.
///
/// A corrector step much larger than the predicted increment, or an
/// ill-conditioned bordered Jacobian, is reported as a fold instead of
/// accepting a solution from another branch.
pub fn continuation(start: &WaveProfile, target_forcing: f64, steps: usize) -> Result<WaveProfile> {
    if steps == 0 {
        return Err(Error::InvalidInput("continuation needs at least one step".into()));
    }
    let f0 = start.params.forcing;
    if target_forcing == f0 {
        return Ok(start.clone());
    }
    let df = (target_forcing - f0) / steps as f64;
    let mut prev: Option<RealPairField> = None;
    let mut cur = start.clone();
    for k in 1..=steps {
        let fk = if k == steps { target_forcing } else { f0 + df * k as f64 };
        let params = start.params.with_forcing(fk);
        let guess = match &prev {
            Some(p) => cur.profile.scale(2.0).sub(p),
            None => cur.profile.clone(),
        };
        let wrap = |e: Error| Error::Continuation { step: k, source: Box::new(e) };
        let next = newton_wave(&guess, &params).map_err(wrap)?;
        if prev.is_some() {
            let predicted = guess.sub(&cur.profile).max_abs();
            let corrected = next.profile.sub(&guess).max_abs();
            if corrected > predicted.max(1e-9) {
                let condition = if next.is_nonconstant() {
                    phase_fixed_condition(&next)
                } else {
                    RealLu::new(&stationary_jacobian(&next.profile, &params, 0)).condition_estimate()
                };
                return Err(wrap(Error::SingularJacobian { condition }));
            }
        }
        prev = Some(cur.profile.clone());
        cur = next;
    }
    Ok(cur)
}

/// Intensities at which the homogeneous state is marginally stable to the
/// first Fourier mode of the period, in increasing order.
pub fn turing_intensities(params: &WaveParameters) -> Vec<f64> {
    let q = 2.0 * PI / params.period;
    let c = params.beta * q * q - params.alpha;
    let disc = c * c - 3.0;
    if disc < 0.0 {
        return Vec::new();
    }
    [(-2.0 * c - disc.sqrt()) / 3.0, (-2.0 * c + disc.sqrt()) / 3.0].into_iter().filter(|r| *r > 0.0).collect()
}

/// Build a wave at `params.forcing` by following the Turing branch from its
/// onset at the first marginal intensity. The branch is started with the
/// amplitude of the critical mode as parameter and then followed by
/// pseudo-arclength continuation in `(φ, F)`, which passes amplitude turning
/// points.
pub fn turing_wave(params: &WaveParameters, points: usize) -> Result<WaveProfile> {
    params.validate()?;
    let grid = PeriodicGrid::single_cell(points, params.period)?;
    let rho = *turing_intensities(params).first().ok_or_else(|| {
        Error::InvalidInput("the homogeneous state has no Turing instability at this period".into())
    })?;
    let a = params.alpha;
    let f_onset = (rho * (1.0 + (a - rho) * (a - rho))).sqrt();
    let ustar = constant_value(rho, a, f_onset);
    let q = 2.0 * PI / params.period;
    let c = params.beta * q * q - a;
    let blk = cubic_block(ustar);
    // B = J(c + C) - I; its null vector spans the critical direction
    let m = [[c + blk[0][0], blk[0][1]], [blk[1][0], c + blk[1][1]]];
    let b = [[-m[1][0] - 1.0, -m[1][1]], [m[0][0], m[0][1] - 1.0]];
    let row = if b[0][0].hypot(b[0][1]) > b[1][0].hypot(b[1][1]) { b[0] } else { b[1] };
    let vn = row[0].hypot(row[1]);
    let v = (-row[1] / vn, row[0] / vn);
    let norm = (params.period / 2.0).sqrt();
    let e = RealPairField::from_fn(grid, |x| {
        let s = (q * x).cos() / norm;
        (s * v.0, s * v.1)
    });
    let p = RealPairField::from_fn(grid, |x| {
        let s = (q * x).sin() / norm;
        (s * v.0, s * v.1)
    });
    let h = grid.spacing();
    let branch = BranchSystem { params: *params, h, phase: flatten(&p) };

    let target = params.forcing;
    let side = if target >= f_onset { 1.0 } else { -1.0 };
    let ev: Vec<f64> = flatten(&e).iter().map(|x| h * x).collect();
    let mut g = RealPairField::constant(grid, ustar);
    let a0 = 0.01 * norm;
    g.axpy(a0, &e);
    let p0 = branch.solve(&g, f_onset, &ev, 0.0, a0)?;
    let mut g1 = p0.0.clone();
    g1.axpy(a0, &e);
    let p1 = branch.solve(&g1, p0.1, &ev, 0.0, 2.0 * a0)?;
    let (mut prev, mut cur) = (p0, p1);
    let mut ds = branch.distance(&prev, &cur);
    for _ in 0..5000 {
        let span = branch.distance(&prev, &cur).max(1e-300);
        let tphi = cur.0.sub(&prev.0).scale(1.0 / span);
        let tf = (cur.1 - prev.1) / span;
        let mut guess = cur.0.clone();
        guess.axpy(ds, &tphi);
        let fg = cur.1 + ds * tf;
        let cphi: Vec<f64> = flatten(&tphi).iter().map(|x| h * x).collect();
        let value = cphi.iter().zip(flatten(&cur.0)).map(|(x, y)| x * y).sum::<f64>() + tf * cur.1 + ds;
        match branch.solve(&guess, fg, &cphi, tf, value) {
            Ok(next) => {
                if (next.1 - target) * side >= 0.0 {
                    let t = (target - cur.1) / (next.1 - cur.1);
                    let mut gg = cur.0.clone();
                    gg.axpy(t, &next.0.sub(&cur.0));
                    let wave = newton_wave(&gg, params)?;
                    if !wave.is_nonconstant() {
                        return Err(Error::Structural("Turing branch collapsed onto a constant state".into()));
                    }
                    return Ok(wave);
                }
                prev = cur;
                cur = next;
                ds = (ds * 1.3).min(0.2 * norm);
            }
            Err(err) => {
                ds *= 0.5;
                if ds < 1e-8 {
                    return Err(err);
                }
            }
        }
    }
    Err(Error::Structural(format!("Turing branch did not reach F = {target}")))
}

/// Stationary equations with unfolding multiplier, phase condition and one
/// extra linear constraint, in the unknowns `(φ, F, μ)`.
struct BranchSystem {
    params: WaveParameters,
    h: f64,
    phase: Vec<f64>,
}

impl BranchSystem {
    fn distance(&self, a: &(RealPairField, f64), b: &(RealPairField, f64)) -> f64 {
        let d = a.0.sub(&b.0);
        (d.inner(&d) + (a.1 - b.1).powi(2)).sqrt()
    }

    fn solve(
        &self,
        guess: &RealPairField,
        f_guess: f64,
        cphi: &[f64],
        cf: f64,
        value: f64,
    ) -> Result<(RealPairField, f64)> {
        let n = guess.len();
        let mut phi = guess.clone();
        let mut f = f_guess;
        let mut last = f64::INFINITY;
        for _ in 0..25 {
            let pr = self.params.with_forcing(f);
            let r = stationary_residual(&phi, &pr);
            let rn = spectral::norm(&r, NormKind::L2);
            let cur = flatten(&phi);
            let c_phase: f64 = self.h * self.phase.iter().zip(&cur).map(|(x, y)| x * y).sum::<f64>();
            let c_extra: f64 = cphi.iter().zip(&cur).map(|(x, y)| x * y).sum::<f64>() + cf * f - value;
            if rn <= 1e-11 && c_phase.abs() <= 1e-12 && c_extra.abs() <= 1e-12 {
                return Ok((phi, f));
            }
            if !rn.is_finite() || rn > 1e3 * last.max(1e-6) {
                break;
            }
            last = rn;
            let mut jac = stationary_jacobian(&phi, &pr, 2);
            for k in 0..n {
                jac[(k, 2 * n)] = 1.0;
            }
            for k in 0..2 * n {
                jac[(k, 2 * n + 1)] = self.phase[k];
                jac[(2 * n, k)] = self.h * self.phase[k];
                jac[(2 * n + 1, k)] = cphi[k];
            }
            jac[(2 * n + 1, 2 * n)] = cf;
            let mut rhs: Vec<f64> = flatten(&r).into_iter().map(|v| -v).collect();
            rhs.push(-c_phase);
            rhs.push(-c_extra);
            let delta = RealLu::new(&jac).solve(&rhs);
            if delta.iter().any(|x| !x.is_finite()) {
                return Err(Error::SingularJacobian { condition: f64::INFINITY });
            }
            for i in 0..n {
                phi.re[i] += delta[i];
                phi.im[i] += delta[n + i];
            }
            f += delta[2 * n];
        }
        Err(Error::NoConvergence { iterations: 25, residual: last })
    }
}

/// Band-limited resampling of a one-period field onto `points` samples.
pub fn resample(f: &RealPairField, points: usize) -> Result<RealPairField> {
    let grid = PeriodicGrid::new(points, f.grid.cell_period(), f.grid.num_cells())?;
    let n = f.len();
    let s = spectral::spectrum(f);
    let mut t = vec![num_complex::Complex64::new(0.0, 0.0); points];
    let scale = points as f64 / n as f64;
    let keep = n.min(points) / 2;
    for j in 0..keep {
        t[j] = s[j] * scale;
        if j > 0 {
            t[points - j] = s[n - j] * scale;
        }
    }
    if points > n {
        // split the old Nyquist coefficient symmetrically
        let c = s[n / 2] * scale * 0.5;
        t[n / 2] = c;
        t[points - n / 2] = c;
    } else if points == n {
        t[n / 2] = s[n / 2];
    } else {
        let c = (s[points / 2] + s[n - points / 2]) * scale;
        t[points / 2] = c;
    }
    Ok(spectral::from_spectrum(grid, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(alpha: f64, forcing: f64) -> WaveParameters {
        WaveParameters::new(alpha, -1.0, forcing, 2.0 * PI).unwrap()
    }

    #[test]
    fn zero_forcing_has_only_the_zero_state() {
        let s = homogeneous_states(&params(1.0, 0.0));
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].value, (0.0, 0.0));
    }

    #[test]
    fn closed_form_intensities() {
        // ρ=1 solves F² = ρ(1+(α-ρ)²) for α=0, F=√2; ρ=2 for α=2, F=√2
        for (alpha, rho) in [(0.0, 1.0), (2.0, 2.0)] {
            let p = params(alpha, 2f64.sqrt());
            let states = homogeneous_states(&p);
            assert!(states.iter().any(|s| (s.rho - rho).abs() < 1e-12), "{states:?}");
            let grid = PeriodicGrid::single_cell(16, p.period).unwrap();
            for s in &states {
                let u = RealPairField::constant(grid, s.value);
                assert!(stationary_residual(&u, &p).max_abs() < 1e-12);
                let m = s.value.0 * s.value.0 + s.value.1 * s.value.1;
                assert!((m - s.rho).abs() < 1e-12 * s.rho.max(1.0));
            }
        }
    }

    #[test]
    fn bistable_detuning_gives_three_states() {
        let s = homogeneous_states(&params(3.0, 1.9));
        assert_eq!(s.len(), 3);
        for st in &s {
            let r = intensity_cubic(st.rho, 3.0, 1.9 * 1.9);
            assert!(r.abs() <= 1e-12 * 1.9 * 1.9);
        }
    }

    #[test]
    fn constant_guess_is_a_newton_fixed_point() {
        let p = params(1.0, 1.2);
        let s = homogeneous_states(&p)[0];
        let grid = PeriodicGrid::single_cell(32, p.period).unwrap();
        let u = RealPairField::constant(grid, s.value);
        let w = newton_wave(&u, &p).unwrap();
        assert!(!w.is_nonconstant());
        assert!(w.profile.sub(&u).max_abs() < 1e-12);
    }

    #[test]
    fn jacobian_matches_linearization() {
        let p = params(1.0, 1.2);
        let grid = PeriodicGrid::single_cell(16, p.period).unwrap();
        let phi = RealPairField::from_fn(grid, |x| (0.8 + 0.3 * x.cos(), -0.5 + 0.2 * x.sin()));
        let v = RealPairField::from_fn(grid, |x| ((2.0 * x).sin(), 0.4 * x.cos()));
        let jac = stationary_jacobian(&phi, &p, 0);
        let lv = crate::model::apply_linearization(&phi, &v, &p);
        let fv = flatten(&v);
        for i in 0..32 {
            let s: f64 = (0..32).map(|j| jac[(i, j)] * fv[j]).sum();
            let want = if i < 16 { lv.re[i] } else { lv.im[i - 16] };
            assert!((s - want).abs() < 1e-11);
        }
    }

    #[test]
    fn resample_preserves_band_limited_fields() {
        let grid = PeriodicGrid::single_cell(16, 3.0).unwrap();
        let w = 2.0 * PI / 3.0;
        let f = RealPairField::from_fn(grid, |x| ((w * x).cos(), (2.0 * w * x).sin()));
        let g = resample(&f, 32).unwrap();
        let back = resample(&g, 16).unwrap();
        assert!(back.sub(&f).max_abs() < 1e-13);
        for i in 0..32 {
            let x = g.grid.x(i);
            assert!((g.re[i] - (w * x).cos()).abs() < 1e-13);
        }
    }
}
