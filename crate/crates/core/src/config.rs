//! Run configuration: TOML (or JSON) with a section per stage.
//!
//! Every field has a default, so an empty file is the shipped default run.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::modulation::{GammaMethod, SigmaMethod};
use crate::model::WaveParameters;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveKind {
    /// Nonconstant wave continued from the Turing point.
    Turing,
    /// One of the constant states, chosen by `state_index`.
    Homogeneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveConfig {
    pub alpha: f64,
    pub beta: f64,
    pub forcing: f64,
    pub period: f64,
    pub points: usize,
    pub kind: WaveKind,
    /// Index into the constant states, ordered by intensity.
    pub state_index: usize,
}

impl Default for WaveConfig {
    fn default() -> Self {
        Self { alpha: 1.0, beta: -1.0, forcing: 1.2, period: 2.0 * PI, points: 64, kind: WaveKind::Turing, state_index: 0 }
    }
}

impl WaveConfig {
    pub fn params(&self) -> Result<WaveParameters> {
        WaveParameters::new(self.alpha, self.beta, self.forcing, self.period)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlochConfig {
    pub xi_count: usize,
}

impl Default for BlochConfig {
    fn default() -> Self {
        Self { xi_count: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToothConfig {
    pub cells: usize,
    /// Knocked-out periods; empty means the middle one.
    pub knocked_out: Vec<usize>,
    pub smoothing_width: f64,
    pub depth: f64,
    /// Shift of the knocked-out windows, in periods.
    pub offset: f64,
    /// Amplitude of the random co-periodic seed (drawn from the run seed).
    pub seed_amplitude: f64,
    /// Fourier modes of the seed.
    pub seed_modes: usize,
}

impl Default for ToothConfig {
    fn default() -> Self {
        Self {
            cells: 64,
            knocked_out: Vec::new(),
            smoothing_width: 0.5,
            depth: 0.1,
            offset: 0.0,
            seed_amplitude: 0.01,
            seed_modes: 3,
        }
    }
}

impl ToothConfig {
    pub fn cells_to_knock(&self) -> Vec<usize> {
        if self.knocked_out.is_empty() {
            vec![self.cells / 2]
        } else {
            self.knocked_out.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub t_end: f64,
    pub stride: usize,
    pub dealias: bool,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self { dt: 0.01, t_end: 100.0, stride: 50, dealias: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModulationConfig {
    pub sigma_method: SigmaMethod,
    pub gamma_method: GammaMethod,
}

impl Default for ModulationConfig {
    fn default() -> Self {
        Self { sigma_method: SigmaMethod::Projection, gamma_method: GammaMethod::Duhamel }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Window of the algebraic fits of the localized norms.
    pub localized_window: [f64; 2],
    /// Start of the exponential fits of the co-periodic norms.
    pub coperiodic_start: f64,
    /// Co-periodic samples below this fraction of their maximum are treated as converged.
    pub coperiodic_floor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { localized_window: [9.0, 99.0], coperiodic_start: 5.0, coperiodic_floor: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub wave_residual: f64,
    pub boundary: f64,
    /// Relative residual of the modulated-perturbation identities on the trajectory.
    pub identity: f64,
    /// Relative distance of the co-periodic rates from the gap.
    pub coperiodic_rate: f64,
    pub r_squared: f64,
    /// Upper bound on the fitted exponent of `‖v̂‖_{L²}`.
    pub hat_v_exponent: f64,
    /// Upper bound on the fitted exponent of `‖v̊‖_{L∞}`.
    pub ring_v_exponent: f64,
    /// Largest admissible `‖γ_x‖∞`.
    pub gamma_x: f64,
    /// `|Re λ + 1|` for the zero state.
    pub zero_spectrum: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            wave_residual: 1e-10,
            boundary: 1e-3,
            identity: 1e-5,
            coperiodic_rate: 0.15,
            r_squared: 0.9,
            hat_v_exponent: -0.35,
            ring_v_exponent: -0.55,
            gamma_x: 0.5,
            zero_spectrum: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub wave: WaveConfig,
    pub bloch: BlochConfig,
    pub tooth: ToothConfig,
    pub evolution: EvolutionConfig,
    pub modulation: ModulationConfig,
    pub fits: FitConfig,
    pub tolerances: Tolerances,
}

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(what()))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    check(v.is_finite() && v > 0.0, || format!("{name} must be positive, got {v}"))
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s).map_err(|e| Error::Format(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    /// Load by extension: `.json` is JSON, anything else TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.wave;
        w.params()?;
        check(w.points >= 8 && w.points.is_multiple_of(2), || format!("wave.points must be even and >= 8, got {}", w.points))?;
        check(self.bloch.xi_count >= 16 && self.bloch.xi_count.is_multiple_of(2), || {
            format!("bloch.xi_count must be even and >= 16, got {}", self.bloch.xi_count)
        })?;
        let t = &self.tooth;
        check(t.cells >= 2, || format!("tooth.cells must be at least 2, got {}", t.cells))?;
        check(t.knocked_out.iter().all(|c| *c < t.cells), || "tooth.knocked_out lists a cell outside 0..cells".into())?;
        check(t.smoothing_width >= 0.0 && t.smoothing_width < 0.5 * w.period + 1e-12, || {
            "tooth.smoothing_width must lie in [0, period/2]".into()
        })?;
        check((0.0..=1.0).contains(&t.depth), || format!("tooth.depth must lie in [0, 1], got {}", t.depth))?;
        check(t.offset.is_finite() && t.seed_amplitude >= 0.0 && t.seed_amplitude.is_finite(), || {
            "tooth.offset must be finite and seed_amplitude nonnegative".into()
        })?;
        check(t.seed_modes >= 1 && t.seed_modes < w.points / 2, || "tooth.seed_modes must lie in 1..points/2".into())?;
        let e = &self.evolution;
        check(e.dt > 0.0 && e.dt <= 0.1, || format!("evolution.dt must lie in (0, 0.1], got {}", e.dt))?;
        positive("evolution.t_end", e.t_end)?;
        check(e.stride >= 1 && (e.stride as f64) * e.dt < 1.0, || "evolution.stride * dt must be below 1".into())?;
        let f = &self.fits;
        check(f.localized_window[0] >= 0.0 && f.localized_window[1] > f.localized_window[0], || {
            "fits.localized_window must be increasing and nonnegative".into()
        })?;
        check(f.coperiodic_start >= 0.0 && f.coperiodic_floor > 0.0 && f.coperiodic_floor < 1.0, || {
            "fits.coperiodic_start must be nonnegative and coperiodic_floor in (0, 1)".into()
        })?;
        let tol = &self.tolerances;
        for (name, v) in [
            ("wave_residual", tol.wave_residual),
            ("boundary", tol.boundary),
            ("identity", tol.identity),
            ("coperiodic_rate", tol.coperiodic_rate),
            ("zero_spectrum", tol.zero_spectrum),
        ] {
            check(v.is_finite() && v > 0.0 && v < 1.0, || format!("tolerances.{name} must lie in (0, 1), got {v}"))?;
        }
        check(tol.r_squared > 0.0 && tol.r_squared <= 1.0, || "tolerances.r_squared must lie in (0, 1]".into())?;
        check(tol.hat_v_exponent < 0.0 && tol.ring_v_exponent < 0.0, || "decay exponent bounds must be negative".into())?;
        check(tol.gamma_x > 0.0 && tol.gamma_x < 1.0, || "tolerances.gamma_x must lie in (0, 1)".into())?;
        Ok(())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml_and_json() {
        let mut c = RunConfig::default();
        c.tooth.knocked_out = vec![3, 17];
        c.modulation.gamma_method = GammaMethod::Fit;
        c.seed = 42;
        let back = RunConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json_str(&json).unwrap(), c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
        let c = RunConfig::from_toml_str("[evolution]\ndt = 0.005\n").unwrap();
        assert_eq!(c.evolution.dt, 0.005);
        assert_eq!(c.evolution.t_end, 100.0);
    }

    #[test]
    fn shipped_file_is_the_default() {
        let c = RunConfig::from_toml_str(include_str!("../configs/default.toml")).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn overrides_are_range_checked() {
        for bad in [
            "[evolution]\ndt = 0.2",
            "[evolution]\ndt = 0.0",
            "[wave]\nbeta = 0.5",
            "[wave]\npoints = 63",
            "[tooth]\ncells = 8\nknocked_out = [8]",
            "[tooth]\ndepth = 1.5",
            "[tolerances]\nboundary = 0.0",
            "[wave]\nunknown = 1",
        ] {
            assert!(RunConfig::from_toml_str(bad).is_err(), "{bad}");
        }
    }
}
