//! Tooth initial data and the exponential time integrator for the
//! co-periodic field `w`, the localized field `v` and the full field `u`.
//!
//! In the packed complex form `u = u_r + i u_i` the linear part
//! `J(-β∂² - α) - I` is the Fourier multiplier `i(βk² - α) - 1`, which is the
//! 2×2 block `[[-1, -(βk²-α)], [βk²-α, -1]]` of the real form acting on each
//! mode. The stepper is ETDRK4 (Cox–Matthews) with the φ-functions evaluated
//! by contour integrals.

use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use crate::cutoff::smooth_step;
use crate::error::{Error, Result};
use crate::grid::{PeriodicGrid, RealPairField};
use crate::model::WaveParameters;
use crate::spectral::{dealias_mask, fft_forward, fft_inverse, pack, unpack};
use crate::steady::WaveProfile;

/// Tooth perturbation: a co-periodic seed plus knocked-out periods.
#[derive(Debug, Clone)]
pub struct ToothPerturbation {
    pub coperiodic_seed: RealPairField,
    pub num_cells: usize,
    pub knocked_out_cells: Vec<usize>,
    pub smoothing_width: f64,
    pub extra_localized: Option<RealPairField>,
    /// Fraction of the signal removed on the knocked-out cells (1 = full knockout).
    pub depth: f64,
    /// Shift of the knocked-out windows, in periods.
    pub offset: f64,
}

impl ToothPerturbation {
    pub fn knockout(wave: &WaveProfile, num_cells: usize, cells: &[usize], smoothing_width: f64) -> Self {
        Self {
            coperiodic_seed: RealPairField::zeros(wave.grid()),
            num_cells,
            knocked_out_cells: cells.to_vec(),
            smoothing_width,
            extra_localized: None,
            depth: 1.0,
            offset: 0.0,
        }
    }
}

/// Smoothed indicator of the union of the given cells, each shifted by
/// `offset` periods, on `grid`.
pub fn cell_indicator(grid: &PeriodicGrid, cells: &[usize], width: f64, offset: f64) -> Vec<f64> {
    let t = grid.cell_period();
    let l = grid.length();
    let mut out = vec![0.0; grid.num_points()];
    for &c in cells {
        let center = (c as f64 + 0.5 + offset) * t;
        for (i, o) in out.iter_mut().enumerate() {
            let mut y = grid.x(i) - center;
            y -= l * (y / l).round();
            let d = y.abs() - 0.5 * t;
            *o += if width > 0.0 {
                1.0 - smooth_step((d + width) / (2.0 * width))
            } else if d < 0.0 {
                1.0
            } else if d == 0.0 {
                0.5
            } else {
                0.0
            };
        }
    }
    out
}

/// `(w₀, v₀)` with `v₀ = -depth·(φ + w₀)·χ_cells + extra`.
pub fn make_tooth_data(wave: &WaveProfile, spec: &ToothPerturbation) -> Result<(RealPairField, RealPairField)> {
    let m = spec.num_cells;
    if m == 0 {
        return Err(Error::InvalidInput("num_cells must be positive".into()));
    }
    if let Some(&c) = spec.knocked_out_cells.iter().find(|c| **c >= m) {
        return Err(Error::InvalidInput(format!("knocked-out cell {c} outside 0..{m}")));
    }
    if spec.coperiodic_seed.grid != wave.grid() {
        return Err(Error::InvalidInput("co-periodic seed must live on the wave grid".into()));
    }
    let grid = wave.grid().with_cells(m);
    let mut cells = spec.knocked_out_cells.clone();
    cells.sort_unstable();
    cells.dedup();
    let ind = cell_indicator(&grid, &cells, spec.smoothing_width, spec.offset);
    let base = wave.profile.add(&spec.coperiodic_seed).tile(m);
    let mut v0 = base.mul_scalar_field(&ind).scale(-spec.depth);
    if let Some(extra) = &spec.extra_localized {
        if extra.grid != grid {
            return Err(Error::InvalidInput("extra localized field must live on the full grid".into()));
        }
        v0 = v0.add(extra);
    }
    Ok((spec.coperiodic_seed.clone(), v0))
}

/// ETDRK4 coefficients for the diagonal multiplier `i(βk² - α) - 1`.
#[derive(Debug, Clone)]
pub struct Etdrk4 {
    pub dt: f64,
    e: Vec<c64>,
    e2: Vec<c64>,
    q: Vec<c64>,
    f1: Vec<c64>,
    f2: Vec<c64>,
    f3: Vec<c64>,
    mask: Vec<f64>,
}

const CONTOUR_POINTS: usize = 64;

pub fn linear_multiplier(params: &WaveParameters, k: f64) -> c64 {
    c64::new(-1.0, params.beta * k * k - params.alpha)
}

impl Etdrk4 {
    pub fn new(grid: &PeriodicGrid, params: &WaveParameters, dt: f64, dealias: bool) -> Self {
        let n = grid.num_points();
        let roots: Vec<c64> = (0..CONTOUR_POINTS)
            .map(|j| c64::from_polar(1.0, std::f64::consts::PI * (j as f64 + 0.5) * 2.0 / CONTOUR_POINTS as f64))
            .collect();
        let mut s = Self {
            dt,
            e: Vec::with_capacity(n),
            e2: Vec::with_capacity(n),
            q: Vec::with_capacity(n),
            f1: Vec::with_capacity(n),
            f2: Vec::with_capacity(n),
            f3: Vec::with_capacity(n),
            mask: if dealias { dealias_mask(grid) } else { vec![1.0; n] },
        };
        let mean = |f: &dyn Fn(c64) -> c64, z: c64| roots.iter().map(|r| f(z + r)).sum::<c64>() / CONTOUR_POINTS as f64;
        for idx in 0..n {
            let z = linear_multiplier(params, grid.wavenumber(idx)) * dt;
            s.e.push(z.exp());
            s.e2.push((z * 0.5).exp());
            s.q.push(mean(&|r| ((r * 0.5).exp() - 1.0) / r, z) * dt);
            s.f1.push(mean(&|r| (-4.0 - r + r.exp() * (4.0 - 3.0 * r + r * r)) / (r * r * r), z) * dt);
            s.f2.push(mean(&|r| (2.0 + r + r.exp() * (r - 2.0)) / (r * r * r), z) * dt);
            s.f3.push(mean(&|r| (-4.0 - 3.0 * r - r * r + r.exp() * (4.0 - r)) / (r * r * r), z) * dt);
        }
        s
    }

    /// One step on a spectrum `u` given the nonlinearity `nl(stage, t, spectrum)`,
    /// which must return the (unmasked) spectrum of the nonlinear term.
    pub fn step(&self, u: &mut [c64], t: f64, nl: &mut dyn FnMut(usize, f64, &[c64]) -> Vec<c64>) {
        let n = u.len();
        let h = 0.5 * self.dt;
        let masked = |mut v: Vec<c64>, mask: &[f64]| {
            for (a, m) in v.iter_mut().zip(mask) {
                *a *= *m;
            }
            v
        };
        let nu = masked(nl(0, t, u), &self.mask);
        let a: Vec<c64> = (0..n).map(|i| self.e2[i] * u[i] + self.q[i] * nu[i]).collect();
        let na = masked(nl(1, t + h, &a), &self.mask);
        let b: Vec<c64> = (0..n).map(|i| self.e2[i] * u[i] + self.q[i] * na[i]).collect();
        let nb = masked(nl(2, t + h, &b), &self.mask);
        let c: Vec<c64> = (0..n).map(|i| self.e2[i] * a[i] + self.q[i] * (2.0 * nb[i] - nu[i])).collect();
        let nc = masked(nl(3, t + self.dt, &c), &self.mask);
        for i in 0..n {
            u[i] = self.e[i] * u[i] + self.f1[i] * nu[i] + 2.0 * self.f2[i] * (na[i] + nb[i]) + self.f3[i] * nc[i];
        }
    }
}

fn to_physical(spec: &[c64]) -> Vec<c64> {
    let mut p = spec.to_vec();
    fft_inverse(&mut p);
    p
}

fn to_spectral(mut p: Vec<c64>) -> Vec<c64> {
    fft_forward(&mut p);
    p
}

/// `i|u|²u + F` pointwise in packed form.
fn lle_nonlinearity(u: &[c64], forcing: f64) -> Vec<c64> {
    u.iter().map(|z| c64::new(0.0, z.norm_sqr()) * z + forcing).collect()
}

#[derive(Debug, Clone)]
pub struct SimulationState {
    pub time: f64,
    /// Total co-periodic field `w` (the wave plus its co-periodic perturbation).
    pub w_field: RealPairField,
    pub v_field: RealPairField,
    pub dt: f64,
    /// `‖v‖∞` over the outer cells divided by `‖v‖∞`.
    pub boundary_ratio: f64,
    pub truncation_warning: bool,
}

impl SimulationState {
    pub fn w(&self) -> &RealPairField {
        &self.w_field
    }

    pub fn v(&self) -> &RealPairField {
        &self.v_field
    }

    /// `u = w (periodically extended) + v`.
    pub fn u(&self) -> RealPairField {
        let v = self.v();
        self.w().tile(v.grid.num_cells()).add(v)
    }
}

#[derive(Debug, Clone)]
pub struct EvolutionOptions {
    pub dt: f64,
    pub t_end: f64,
    /// Steps between stored snapshots.
    pub snapshot_stride: usize,
    pub dealias: bool,
    /// Relative threshold of the boundary monitor.
    pub boundary_tol: f64,
}

impl Default for EvolutionOptions {
    fn default() -> Self {
        Self { dt: 5e-3, t_end: 10.0, snapshot_stride: 100, dealias: true, boundary_tol: 1e-3 }
    }
}

impl EvolutionOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(Error::InvalidInput(format!("dt must lie in (0, 0.1], got {}", self.dt)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) || self.snapshot_stride == 0 {
            return Err(Error::InvalidInput("t_end must be positive and stride nonzero".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round().max(1.0) as usize
    }
}

/// `max_outer |v| / max |v|` with the outer 10% of cells (at least one at each end).
pub fn boundary_ratio(v: &RealPairField) -> f64 {
    let m = v.grid.num_cells();
    let p = v.grid.points_per_cell();
    let edge = ((m as f64 * 0.05).ceil() as usize).max(1);
    let total = v.max_abs();
    if total == 0.0 {
        return 0.0;
    }
    let mut outer = 0.0f64;
    for c in (0..edge).chain(m.saturating_sub(edge)..m) {
        for i in c * p..(c + 1) * p {
            outer = outer.max(v.re[i].hypot(v.im[i]));
        }
    }
    outer / total
}

/// Coupled stepper for `(w, v)` on a one-period grid and its `M`-cell extension.
pub struct Stepper {
    pub params: WaveParameters,
    w_grid: PeriodicGrid,
    v_grid: PeriodicGrid,
    w_scheme: Etdrk4,
    v_scheme: Etdrk4,
}

impl Stepper {
    pub fn new(params: WaveParameters, w_grid: PeriodicGrid, cells: usize, dt: f64, dealias: bool) -> Self {
        let v_grid = w_grid.with_cells(cells);
        Self {
            params,
            w_grid,
            v_grid,
            w_scheme: Etdrk4::new(&w_grid, &params, dt, dealias),
            v_scheme: Etdrk4::new(&v_grid, &params, dt, dealias),
        }
    }

    pub fn dt(&self) -> f64 {
        self.w_scheme.dt
    }

    /// Advance spectra `(ŵ, v̂)` by one step from time `t`.
    pub fn step_spectra(&self, w: &mut [c64], v: &mut [c64], t: f64) {
        let forcing = self.params.forcing;
        let np = self.w_grid.num_points();
        let mut w_stages: Vec<Vec<c64>> = vec![Vec::new(); 4];
        self.w_scheme.step(w, t, &mut |s, _, spec| {
            let p = to_physical(spec);
            let nl = lle_nonlinearity(&p, forcing);
            w_stages[s] = p;
            to_spectral(nl)
        });
        self.v_scheme.step(v, t, &mut |s, _, spec| {
            let vp = to_physical(spec);
            let wp = &w_stages[s];
            let nl: Vec<c64> = vp
                .iter()
                .enumerate()
                .map(|(i, vz)| {
                    let wz = wp[i % np];
                    let u = wz + vz;
                    c64::new(0.0, 1.0) * (u * u.norm_sqr() - wz * wz.norm_sqr())
                })
                .collect();
            to_spectral(nl)
        });
    }

    /// Advance a state by one step.
    pub fn step(&self, state: &SimulationState) -> Result<SimulationState> {
        let mut w = pack(state.w());
        let mut v = pack(state.v());
        fft_forward(&mut w);
        fft_forward(&mut v);
        self.step_spectra(&mut w, &mut v, state.time);
        fft_inverse(&mut w);
        fft_inverse(&mut v);
        let time = state.time + self.dt();
        let (wf, vf) = (unpack(self.w_grid, &w), unpack(self.v_grid, &v));
        if !(wf.is_finite() && vf.is_finite()) {
            return Err(Error::BlowUp { time });
        }
        let ratio = boundary_ratio(&vf);
        Ok(SimulationState {
            time,
            w_field: wf,
            v_field: vf,
            dt: self.dt(),
            boundary_ratio: ratio,
            truncation_warning: state.truncation_warning,
        })
    }
}

/// One step of the coupled scheme (builds the coefficients; see [`Stepper`] for loops).
pub fn step(state: &SimulationState, wave: &WaveProfile) -> Result<SimulationState> {
    let stepper = Stepper::new(wave.params, wave.grid(), state.v().grid.num_cells(), state.dt, true);
    stepper.step(state)
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<SimulationState>,
    /// The co-periodic field `w` after every time step (cheap: one period).
    pub coperiodic: Vec<(f64, RealPairField)>,
    pub warnings: Vec<String>,
    pub boundary_tol: f64,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    /// Time of the first snapshot flagged by the boundary monitor.
    pub fn validity_end(&self) -> Option<f64> {
        self.snapshots.iter().find(|s| s.truncation_warning).map(|s| s.time)
    }
}

/// Evolve `w = φ + w₀`, `v = v₀` to `t_end`, storing every `snapshot_stride` steps.
pub fn evolve(
    wave: &WaveProfile,
    data: &(RealPairField, RealPairField),
    opts: &EvolutionOptions,
) -> Result<Trajectory> {
    opts.validate()?;
    let (w0, v0) = data;
    if w0.grid != wave.grid() || v0.grid.cell_grid() != wave.grid() {
        return Err(Error::InvalidInput("initial data grids do not match the wave".into()));
    }
    let cells = v0.grid.num_cells();
    let stepper = Stepper::new(wave.params, wave.grid(), cells, opts.dt, opts.dealias);
    let wf = wave.profile.add(w0);
    let mut w = pack(&wf);
    let mut v = pack(v0);
    fft_forward(&mut w);
    fft_forward(&mut v);
    let ratio0 = boundary_ratio(v0);
    let mut warned = ratio0 > opts.boundary_tol;
    let mut warnings = Vec::new();
    if warned {
        warnings.push(format!("boundary monitor triggered at t = 0 (ratio {ratio0:.2e})"));
    }
    let mut coperiodic = vec![(0.0, wf.clone())];
    let mut snapshots = vec![SimulationState {
        time: 0.0,
        w_field: wf,
        v_field: v0.clone(),
        dt: opts.dt,
        boundary_ratio: ratio0,
        truncation_warning: warned,
    }];
    let steps = opts.steps();
    for n in 0..steps {
        let t = n as f64 * opts.dt;
        stepper.step_spectra(&mut w, &mut v, t);
        let time = (n + 1) as f64 * opts.dt;
        let wf = unpack(wave.grid(), &to_physical(&w));
        coperiodic.push((time, wf.clone()));
        if (n + 1) % opts.snapshot_stride == 0 || n + 1 == steps {
            let vf = unpack(v0.grid, &to_physical(&v));
            if !(wf.is_finite() && vf.is_finite()) {
                return Err(Error::BlowUp { time });
            }
            let ratio = boundary_ratio(&vf);
            if ratio > opts.boundary_tol && !warned {
                warned = true;
                warnings.push(format!("boundary monitor triggered at t = {time:.3} (ratio {ratio:.2e})"));
            }
            snapshots.push(SimulationState {
                time,
                w_field: wf,
                v_field: vf,
                dt: opts.dt,
                boundary_ratio: ratio,
                truncation_warning: warned,
            });
        }
    }
    Ok(Trajectory { snapshots, coperiodic, warnings, boundary_tol: opts.boundary_tol })
}

/// Evolve the full field `u` directly on its own grid with the same scheme.
pub fn evolve_direct(params: &WaveParameters, u0: &RealPairField, opts: &EvolutionOptions) -> Result<Vec<(f64, RealPairField)>> {
    opts.validate()?;
    let scheme = Etdrk4::new(&u0.grid, params, opts.dt, opts.dealias);
    let mut u = pack(u0);
    fft_forward(&mut u);
    let mut out = vec![(0.0, u0.clone())];
    let steps = opts.steps();
    for n in 0..steps {
        let t = n as f64 * opts.dt;
        scheme.step(&mut u, t, &mut |_, _, spec| to_spectral(lle_nonlinearity(&to_physical(spec), params.forcing)));
        if (n + 1) % opts.snapshot_stride == 0 || n + 1 == steps {
            let time = (n + 1) as f64 * opts.dt;
            let f = unpack(u0.grid, &to_physical(&u));
            if !f.is_finite() {
                return Err(Error::BlowUp { time });
            }
            out.push((time, f));
        }
    }
    Ok(out)
}

/// Step-halving errors `e(dt), e(dt/2), e(dt/4)` of the co-periodic problem at
/// `t_end`, measured against a run with `dt/32`, and the observed ratios.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderReport {
    pub dts: Vec<f64>,
    pub errors: Vec<f64>,
    pub ratios: Vec<f64>,
    pub slope: f64,
}

pub fn order_check(params: &WaveParameters, u0: &RealPairField, dt: f64, t_end: f64) -> Result<OrderReport> {
    let run = |h: f64| -> Result<RealPairField> {
        let opts = EvolutionOptions { dt: h, t_end, snapshot_stride: usize::MAX, dealias: true, boundary_tol: 1.0 };
        Ok(evolve_direct(params, u0, &opts)?.pop().unwrap().1)
    };
    let reference = run(dt / 32.0)?;
    let dts = vec![dt, dt / 2.0, dt / 4.0];
    let mut errors = Vec::new();
    for &h in &dts {
        errors.push(run(h)?.sub(&reference).max_abs());
    }
    let ratios = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let slope = (errors[0] / errors[2]).ln() / 4f64.ln();
    Ok(OrderReport { dts, errors, ratios, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn params() -> WaveParameters {
        WaveParameters::new(1.0, -1.0, 1.2, 2.0 * PI).unwrap()
    }

    fn wave(points: usize) -> WaveProfile {
        crate::steady::turing_wave(&params(), points).unwrap()
    }

    #[test]
    fn empty_knockout_gives_zero_localized_part() {
        let w = wave(32);
        let spec = ToothPerturbation::knockout(&w, 8, &[], 0.3);
        let (_, v0) = make_tooth_data(&w, &spec).unwrap();
        assert_eq!(v0.max_abs(), 0.0);
        let bad = ToothPerturbation::knockout(&w, 8, &[8], 0.3);
        assert!(make_tooth_data(&w, &bad).is_err());
    }

    #[test]
    fn knocked_out_cell_vanishes_at_its_center() {
        let w = wave(32);
        let t = w.params.period;
        let spec = ToothPerturbation::knockout(&w, 8, &[4], t / 16.0);
        let (w0, v0) = make_tooth_data(&w, &spec).unwrap();
        let u = w.profile.add(&w0).tile(8).add(&v0);
        let center = 4 * 32 + 16;
        assert!(u.re[center].hypot(u.im[center]) <= 1e-10);
        // two adjacent cells form one contiguous block
        let spec = ToothPerturbation::knockout(&w, 8, &[3, 4], t / 16.0);
        let (_, v0) = make_tooth_data(&w, &spec).unwrap();
        let ind = cell_indicator(&v0.grid, &[3, 4], t / 16.0, 0.0);
        let support: Vec<usize> = (0..ind.len()).filter(|&i| ind[i] > 1e-12).collect();
        assert_eq!(support.last().unwrap() - support.first().unwrap() + 1, support.len());
        let width = support.len() as f64 * v0.grid.spacing();
        assert!((width - 2.0 * t).abs() <= 2.0 * t / 16.0 + v0.grid.spacing());
        assert!(ind.iter().all(|v| *v <= 1.0 + 1e-15));
    }

    #[test]
    fn wave_is_preserved_by_the_scheme() {
        let w = wave(64);
        let data = (RealPairField::zeros(w.grid()), RealPairField::zeros(w.grid().with_cells(2)));
        let opts = EvolutionOptions { dt: 0.01, t_end: 10.0, snapshot_stride: 100, ..Default::default() };
        let traj = evolve(&w, &data, &opts).unwrap();
        for s in &traj.snapshots {
            assert!(s.w().sub(&w.profile).max_abs() <= 1e-10, "{}", s.w().sub(&w.profile).max_abs());
            assert_eq!(s.v().max_abs(), 0.0);
        }
    }

    #[test]
    fn constant_state_mode_grows_at_the_dispersion_rate() {
        let p = params();
        let s = crate::steady::homogeneous_states(&p)[0];
        let grid = PeriodicGrid::single_cell(32, 2.0 * PI).unwrap();
        let q = 1.0;
        let eps = 1e-6;
        let u0 = RealPairField::from_fn(grid, |x| (s.value.0 + eps * (q * x).cos(), s.value.1));
        let opts = EvolutionOptions { dt: 0.01, t_end: 12.0, snapshot_stride: 200, ..Default::default() };
        let out = evolve_direct(&p, &u0, &opts).unwrap();
        let amp = |f: &RealPairField| {
            let d = f.sub(&RealPairField::constant(grid, s.value));
            crate::spectral::norm(&d, crate::spectral::NormKind::L2)
        };
        let (t1, f1) = &out[3];
        let (t2, f2) = out.last().unwrap();
        let rate = (amp(f2) / amp(f1)).ln() / (t2 - t1);
        let a = p.beta * q * q - p.alpha + 2.0 * s.rho;
        let lam = (s.rho * s.rho - a * a).sqrt() - 1.0;
        assert!(lam > 0.0);
        assert!(((rate - lam) / lam).abs() < 1e-4, "{rate} vs {lam}");
    }

    #[test]
    fn coupled_and_direct_evolution_agree() {
        let w = wave(32);
        let spec = ToothPerturbation::knockout(&w, 4, &[2], 0.4);
        let mut spec = spec;
        spec.coperiodic_seed = RealPairField::from_fn(w.grid(), |x| (0.01 * x.sin(), 0.005));
        let data = make_tooth_data(&w, &spec).unwrap();
        let opts = EvolutionOptions { dt: 0.01, t_end: 3.0, snapshot_stride: 50, ..Default::default() };
        let traj = evolve(&w, &data, &opts).unwrap();
        let u0 = w.profile.add(&data.0).tile(4).add(&data.1);
        let direct = evolve_direct(&w.params, &u0, &opts).unwrap();
        for (s, (t, u)) in traj.snapshots.iter().zip(&direct) {
            assert_eq!(s.time, *t);
            assert!(s.u().sub(u).max_abs() < 1e-10);
        }
    }

    #[test]
    fn global_error_is_fourth_order() {
        let w = wave(32);
        let u0 = w.profile.add(&RealPairField::from_fn(w.grid(), |x| (0.2 * x.cos(), 0.1 * (2.0 * x).sin())));
        let r = order_check(&w.params, &u0, 0.1, 2.0).unwrap();
        assert!((r.slope - 4.0).abs() < 0.3, "{r:?}");
        for q in &r.ratios {
            assert!((12.0..=20.0).contains(q), "{r:?}");
        }
    }
}
