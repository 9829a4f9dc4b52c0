//! Decay fits, damping energies, the template function and the relate
//! inequalities, all evaluated on stored modulated perturbations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RealPairField;
use crate::modulation::{tile_to, ModulatedPerturbations, ModulationTrack};
use crate::spectral::{compose, derivatives, norm, scalar_norm, NormKind};
use crate::steady::WaveProfile;

/// Least-squares line `y = a x + b` through `pts`; returns `(a, b)`.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let a = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (a, my - a * mx)
}

fn r_squared(pts: &[(f64, f64)], a: f64, b: f64) -> f64 {
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - a * p.0 - b).powi(2)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - ss_res / ss_tot
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayModel {
    /// `y ≈ C (1+t)^{-κ}`
    Algebraic,
    /// `y ≈ C e^{-δ t}`
    Exponential,
}

impl std::str::FromStr for DecayModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "algebraic" => Ok(Self::Algebraic),
            "exponential" => Ok(Self::Exponential),
            _ => Err(Error::InvalidInput(format!("unknown decay model '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayReport {
    pub norm_name: String,
    pub model: DecayModel,
    /// `κ` or `δ`, positive for decay.
    pub rate: f64,
    /// Fitted slope of `log y` (equal to `-rate`).
    pub slope: f64,
    pub prefactor: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
    pub samples: usize,
    /// False if samples after the boundary-validity time had to be dropped.
    pub boundary_valid: bool,
    /// Initial-size metadata stored alongside the fit.
    pub initial_sizes: Option<InitialSizes>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InitialSizes {
    pub e_p: f64,
    pub e_l: f64,
    pub e_0: f64,
}

/// Options restricting the fitted samples.
#[derive(Debug, Clone, Copy, Default)]
pub struct FitWindow {
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
    /// First time flagged by the boundary monitor; it and later samples are excluded.
    pub valid_until: Option<f64>,
}

/// Least squares of `log y` against `log(1+t)` or `t`.
pub fn fit_decay(
    name: &str,
    times: &[f64],
    values: &[f64],
    model: DecayModel,
    window: FitWindow,
) -> Result<DecayReport> {
    if times.len() != values.len() {
        return Err(Error::InvalidInput("times and values differ in length".into()));
    }
    let lo = window.t_min.unwrap_or(f64::NEG_INFINITY);
    let hi = window.t_max.unwrap_or(f64::INFINITY);
    let mut truncated = false;
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= lo && **t <= hi)
        .filter(|(t, _)| match window.valid_until {
            Some(v) if **t >= v => {
                truncated = true;
                false
            }
            _ => true,
        })
        .filter(|(_, y)| **y > 0.0 && y.is_finite())
        .map(|(t, y)| (*t, *y))
        .collect();
    if pts.len() < 10 {
        return Err(Error::InsufficientData(format!("{name}: {} usable samples, need 10", pts.len())));
    }
    let (t1, t2) = (pts[0].0, pts[pts.len() - 1].0);
    if model == DecayModel::Algebraic && (1.0 + t2) / (1.0 + t1) < 10.0 - 1e-9 {
        return Err(Error::InsufficientData(format!(
            "{name}: window [{t1:.3}, {t2:.3}] spans less than a decade in 1+t"
        )));
    }
    let xy: Vec<(f64, f64)> = pts
        .iter()
        .map(|(t, y)| {
            let x = match model {
                DecayModel::Algebraic => (1.0 + t).ln(),
                DecayModel::Exponential => *t,
            };
            (x, y.ln())
        })
        .collect();
    let (a, b) = linear_fit(&xy);
    Ok(DecayReport {
        norm_name: name.to_string(),
        model,
        rate: -a,
        slope: a,
        prefactor: b.exp(),
        window: (t1, t2),
        r_squared: r_squared(&xy, a, b),
        samples: pts.len(),
        boundary_valid: !truncated,
        initial_sizes: None,
    })
}

/// `𝒥M(φ̊)` applied pointwise, with `M = 2[[-2φ_rφ_i, φ_r²-φ_i²],[φ_r²-φ_i², 2φ_rφ_i]]`.
fn jm_apply(phi: (f64, f64), a: (f64, f64), transpose: bool) -> (f64, f64) {
    let (r, i) = phi;
    let m = [[-4.0 * r * i, 2.0 * (r * r - i * i)], [2.0 * (r * r - i * i), 4.0 * r * i]];
    // J M = [[-m10, -m11], [m00, m01]]
    let jm = [[-m[1][0], -m[1][1]], [m[0][0], m[0][1]]];
    let k = if transpose { [[jm[0][0], jm[1][0]], [jm[0][1], jm[1][1]]] } else { jm };
    (k[0][0] * a.0 + k[0][1] * a.1, k[1][0] * a.0 + k[1][1] * a.1)
}

/// `<𝒥M(φ̊) a, a>` in the discrete pairing.
pub fn jm_form(ring_phi: &RealPairField, a: &RealPairField, transpose: bool) -> f64 {
    let s: f64 = (0..a.len())
        .map(|i| {
            let v = a.value(i);
            let m = jm_apply(ring_phi.value(i), v, transpose);
            m.0 * v.0 + m.1 * v.1
        })
        .sum();
    s * a.grid.spacing()
}

/// `φ̊ = φ(x + γ(x))` on the grid of `gamma`.
pub fn ring_phi(wave: &WaveProfile, ring_v: &RealPairField, gamma: &[f64]) -> RealPairField {
    let disp: Vec<f64> = gamma.iter().map(|g| -g).collect();
    compose(&tile_to(&wave.profile, ring_v.grid), 0.0, &disp)
}

/// `E_j = ‖∂^j v̊‖² - (1/2β)<𝒥M(φ̊)∂^{j-1}v̊, ∂^{j-1}v̊>`, `j ∈ {1,2,3}`.
pub fn damping_energy(ring_v: &RealPairField, gamma: &[f64], wave: &WaveProfile, j: usize) -> Result<f64> {
    if !(1..=3).contains(&j) {
        return Err(Error::InvalidInput(format!("energy index must be 1, 2 or 3, got {j}")));
    }
    let phi = ring_phi(wave, ring_v, gamma);
    let d = derivatives(ring_v, j);
    let top = &d[j - 1];
    let below = if j == 1 { ring_v } else { &d[j - 2] };
    Ok(top.inner(top) - jm_form(&phi, below, false) / (2.0 * wave.params.beta))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyTrack {
    pub times: Vec<f64>,
    /// `E_1, E_2, E_3`.
    pub energies: Vec<[f64; 3]>,
    /// `‖∂^j v̊‖²` for `j = 0..=3`.
    pub derivative_norms: Vec<[f64; 4]>,
    /// Smallest `C` with `‖∂^j v̊‖² ≤ 2E_j + C‖v̊‖²` on the track.
    pub c_fit: f64,
}

pub fn energy_track(pert: &ModulatedPerturbations, track: &ModulationTrack, wave: &WaveProfile) -> Result<EnergyTrack> {
    let rows: Vec<([f64; 3], [f64; 4], f64)> = pert
        .ring_v
        .par_iter()
        .enumerate()
        .map(|(k, v)| {
            let g = &track.gamma[k].values;
            let phi = ring_phi(wave, v, g);
            let d = derivatives(v, 3);
            let mut e = [0.0; 3];
            let mut n = [v.inner(v), 0.0, 0.0, 0.0];
            let mut c: f64 = 0.0;
            for j in 1..=3 {
                let below = if j == 1 { v } else { &d[j - 2] };
                n[j] = d[j - 1].inner(&d[j - 1]);
                e[j - 1] = n[j] - jm_form(&phi, below, false) / (2.0 * wave.params.beta);
                if n[0] > 0.0 {
                    c = c.max((n[j] - 2.0 * e[j - 1]) / n[0]);
                }
            }
            (e, n, c)
        })
        .collect();
    Ok(EnergyTrack {
        times: pert.times.clone(),
        c_fit: rows.iter().map(|r| r.2).fold(0.0, f64::max),
        energies: rows.iter().map(|r| r.0).collect(),
        derivative_norms: rows.iter().map(|r| r.1).collect(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DampingReport {
    pub c_fit: f64,
    pub tightest_time: f64,
    /// `‖v̊(t)‖²_{H³}`.
    pub lhs: Vec<f64>,
    /// Bracket on the right-hand side without the constant.
    pub rhs: Vec<f64>,
}

/// Smallest `C` with `‖v̊(t)‖²_{H³} ≤ C(e^{-t}‖v₀‖²_{H³} + ‖v̊(t)‖²_{L²}
/// + ∫₀ᵗ e^{-(t-s)}(‖v̊‖²_{L²} + ‖γ_x‖²_{H⁴} + ‖γ_t‖²_{H³}) ds)` at every sample.
pub fn verify_damping_inequality(pert: &ModulatedPerturbations, track: &ModulationTrack) -> Result<DampingReport> {
    let n = pert.ring_v.len().min(track.len());
    if n == 0 {
        return Err(Error::InsufficientData("no snapshots".into()));
    }
    let times = &pert.times[..n];
    let h3 = |v: &RealPairField| norm(v, NormKind::H3).powi(2);
    let v0 = h3(&pert.ring_v[0]);
    let src: Vec<f64> = (0..n)
        .map(|k| {
            pert.ring_v[k].inner(&pert.ring_v[k])
                + scalar_norm(&track.gamma_x[k], NormKind::H4).powi(2)
                + scalar_norm(&track.gamma_t[k], NormKind::H3).powi(2)
        })
        .collect();
    let mut integral = 0.0;
    let mut report = DampingReport { c_fit: 0.0, tightest_time: times[0], lhs: Vec::new(), rhs: Vec::new() };
    for k in 0..n {
        if k > 0 {
            let dt = times[k] - times[k - 1];
            let e = (-dt).exp();
            integral = e * integral + 0.5 * dt * (e * src[k - 1] + src[k]);
        }
        let lhs = h3(&pert.ring_v[k]);
        let rhs = (-times[k]).exp() * v0 + pert.ring_v[k].inner(&pert.ring_v[k]) + integral;
        let ratio = if rhs > 0.0 {
            lhs / rhs
        } else if lhs > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        if ratio > report.c_fit {
            report.c_fit = ratio;
            report.tightest_time = times[k];
        }
        report.lhs.push(lhs);
        report.rhs.push(rhs);
    }
    if report.c_fit > 1e6 {
        return Err(Error::Structural(format!(
            "damping inequality needs C = {:.3e} at t = {:.3}",
            report.c_fit, report.tightest_time
        )));
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateTrack {
    pub times: Vec<f64>,
    pub eta: Vec<f64>,
}

impl TemplateTrack {
    /// Smallest `C` with `η ≤ C(E_l + η² + η E_p)` on the track.
    pub fn key_constant(&self, e_l: f64, e_p: f64) -> f64 {
        self.eta
            .iter()
            .map(|&h| {
                let d = e_l + h * h + h * e_p;
                if d > 0.0 {
                    h / d
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }
}

/// `η(t) = sup_{s≤t}((1+s)^{1/2}(‖v̊(s)‖_{H³} + ‖(γ_x,γ_s)(s)‖_{H⁴×H³}) + ‖γ(s)‖_{L²})`.
pub fn template_eta(pert: &ModulatedPerturbations, track: &ModulationTrack) -> TemplateTrack {
    let n = pert.ring_v.len().min(track.len());
    let mut eta = Vec::with_capacity(n);
    let mut sup = 0.0f64;
    for k in 0..n {
        let t = pert.times[k];
        let gamma_pair = (scalar_norm(&track.gamma_x[k], NormKind::H4).powi(2)
            + scalar_norm(&track.gamma_t[k], NormKind::H3).powi(2))
        .sqrt();
        let val = (1.0 + t).sqrt() * (norm(&pert.ring_v[k], NormKind::H3) + gamma_pair)
            + scalar_norm(&track.gamma[k], NormKind::L2);
        sup = sup.max(val);
        eta.push(sup);
    }
    TemplateTrack { times: pert.times[..n].to_vec(), eta }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelateReport {
    /// `‖v̊‖_{L²} / (‖v̂‖_{L²} + ‖γ_x‖_{L²})`, maximized over snapshots.
    pub c_l2: f64,
    /// `‖v̂‖_{H³} / (‖v̊‖_{H³} + ‖γ_x‖_{H³})`.
    pub c_h3: f64,
    /// `‖v̊‖_{L∞} / (‖v̂‖_{L∞} + ‖γ_x‖_{L∞})`.
    pub c_linf: f64,
    pub ratios: Vec<(f64, f64, f64, f64)>,
    /// Snapshot times excluded because `‖γ_x‖_{L∞} > 1/2`.
    pub excluded: Vec<f64>,
}

fn ratio(a: f64, b: f64) -> Option<f64> {
    if b > 0.0 {
        Some(a / b)
    } else {
        None
    }
}

pub fn relate_check(pert: &ModulatedPerturbations, track: &ModulationTrack) -> RelateReport {
    let n = pert.ring_v.len().min(pert.hat_v.len()).min(track.len());
    let mut rep = RelateReport { c_l2: 0.0, c_h3: 0.0, c_linf: 0.0, ratios: Vec::new(), excluded: Vec::new() };
    for k in 0..n {
        let gx = &track.gamma_x[k];
        if gx.max_abs() > 0.5 {
            rep.excluded.push(pert.times[k]);
            continue;
        }
        let (rv, hv) = (&pert.ring_v[k], &pert.hat_v[k]);
        let r1 = ratio(norm(rv, NormKind::L2), norm(hv, NormKind::L2) + scalar_norm(gx, NormKind::L2));
        let r2 = ratio(norm(hv, NormKind::H3), norm(rv, NormKind::H3) + scalar_norm(gx, NormKind::H3));
        let r3 = ratio(rv.max_abs(), hv.max_abs() + gx.max_abs());
        if let (Some(a), Some(b), Some(c)) = (r1, r2, r3) {
            rep.c_l2 = rep.c_l2.max(a);
            rep.c_h3 = rep.c_h3.max(b);
            rep.c_linf = rep.c_linf.max(c);
            rep.ratios.push((pert.times[k], a, b, c));
        }
    }
    rep
}

/// Norm series used by the decay fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    HatWH1,
    SigmaDot,
    HatVL2,
    RingVLinf,
    GammaXLinf,
}

impl SeriesKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::HatWH1 => "hat_w_h1",
            Self::SigmaDot => "sigma_dot",
            Self::HatVL2 => "hat_v_l2",
            Self::RingVLinf => "ring_v_linf",
            Self::GammaXLinf => "gamma_x_linf",
        }
    }

    pub const ALL: [SeriesKind; 5] = [Self::HatWH1, Self::SigmaDot, Self::HatVL2, Self::RingVLinf, Self::GammaXLinf];
}

impl std::str::FromStr for SeriesKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown norm series '{s}'")))
    }
}

/// `(t, value)` of one norm series.
pub fn norm_series(kind: SeriesKind, pert: &ModulatedPerturbations, track: &ModulationTrack) -> (Vec<f64>, Vec<f64>) {
    let n = track.len();
    let t = track.times()[..n].to_vec();
    let v: Vec<f64> = (0..n)
        .map(|k| match kind {
            SeriesKind::HatWH1 => norm(&pert.hat_w[k], NormKind::H1),
            SeriesKind::SigmaDot => track.sigma.sigma_dot[k].abs(),
            SeriesKind::HatVL2 => norm(&pert.hat_v[k], NormKind::L2),
            SeriesKind::RingVLinf => pert.ring_v[k].max_abs(),
            SeriesKind::GammaXLinf => track.gamma_x[k].max_abs(),
        })
        .collect();
    (t, v)
}

/// `sup_t ‖u(t) - φ‖_{L∞}` over a trajectory (wave tiled).
pub fn max_deviation(traj: &crate::evolution::Trajectory, wave: &WaveProfile) -> f64 {
    traj.snapshots
        .iter()
        .map(|s| {
            let u = s.u();
            u.sub(&tile_to(&wave.profile, u.grid)).max_abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral;
    use crate::model::WaveParameters;
    use std::f64::consts::PI;

    #[test]
    fn synthetic_decay_rates_are_recovered() {
        let t: Vec<f64> = (0..200).map(|k| 1.0 + 99.0 * k as f64 / 199.0).collect();
        let y: Vec<f64> = t.iter().map(|t| (1.0 + t).powf(-0.75)).collect();
        let r = fit_decay("a", &t, &y, DecayModel::Algebraic, FitWindow::default()).unwrap();
        assert!((r.rate - 0.75).abs() < 0.005 && r.r_squared > 0.999);
        let y: Vec<f64> = t.iter().map(|t| (-0.3 * t).exp()).collect();
        let r = fit_decay("e", &t, &y, DecayModel::Exponential, FitWindow::default()).unwrap();
        assert!((r.rate - 0.3).abs() < 0.003);
        let y: Vec<f64> = t.iter().map(|t| (1.0 + t).powf(-0.5) * (1.0 + 0.1 * t.sin())).collect();
        let r = fit_decay("p", &t, &y, DecayModel::Algebraic, FitWindow::default()).unwrap();
        assert!((0.45..=0.55).contains(&r.rate));
    }

    #[test]
    fn short_windows_are_rejected() {
        let t: Vec<f64> = (0..20).map(|k| 1.0 + k as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| 1.0 / t).collect();
        assert!(matches!(
            fit_decay("s", &t, &y, DecayModel::Algebraic, FitWindow::default()),
            Err(Error::InsufficientData(_))
        ));
        let t: Vec<f64> = (0..50).map(|k| k as f64).collect();
        let y: Vec<f64> = t.iter().map(|t| (1.0 + t).powi(-1)).collect();
        let w = FitWindow { valid_until: Some(5.0), ..Default::default() };
        assert!(fit_decay("s", &t, &y, DecayModel::Algebraic, w).is_err());
        let w = FitWindow { valid_until: Some(30.0), ..Default::default() };
        let r = fit_decay("s", &t, &y, DecayModel::Algebraic, w).unwrap();
        assert!(!r.boundary_valid && r.window.1 < 30.0);
    }

    fn wave() -> WaveProfile {
        let params = WaveParameters::new(1.0, -1.0, 1.2, 2.0 * PI).unwrap();
        crate::steady::turing_wave(&params, 32).unwrap()
    }

    #[test]
    fn energies_vanish_at_zero_and_follow_high_modes() {
        let w = wave();
        let grid = w.grid().with_cells(4);
        let g = vec![0.0; grid.num_points()];
        let z = RealPairField::zeros(grid);
        for j in 1..=3 {
            assert_eq!(damping_energy(&z, &g, &w, j).unwrap(), 0.0);
        }
        let q = 12.0;
        let v = RealPairField::from_fn(grid, |x| ((q * x).cos(), 0.5 * (q * x).sin()));
        for j in 1..=3 {
            let e = damping_energy(&v, &g, &w, j).unwrap();
            let d = spectral::derivative_unchecked(&v, j);
            let n = d.inner(&d);
            assert!((e - n).abs() < 0.05 * n, "{j}: {e} {n}");
        }
        assert!(damping_energy(&v, &g, &w, 4).is_err());
    }

    #[test]
    fn jm_form_is_symmetric() {
        let w = wave();
        let a = RealPairField::from_fn(w.grid(), |x| (x.sin() + 0.3, (2.0 * x).cos()));
        let d = jm_form(&w.profile, &a, false) - jm_form(&w.profile, &a, true);
        assert!(d.abs() < 1e-12);
    }
}
