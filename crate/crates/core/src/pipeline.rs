//! Run directories, stage persistence with resume, and the verdict.
//!
//! Layout of a run directory:
//!
//! ```text
//! config.toml      the configuration of the last stage run
//! manifest.json    stage records, warnings, file checksums
//! snapshots/       wave.bin, snap_NNNNN.bin (w then v), coperiodic.bin
//! tracks/          sigma.csv, gamma.bin, norms.csv
//! reports/         wave.json, bloch.json, evolution.json, modulation.json, decay.json, verdict.json
//! plots/           SVG figures
//! ```
//!
//! A stage is reused when its record is present, its inputs hash (the config
//! sections it depends on) is unchanged and every file it wrote still has its
//! recorded checksum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::bloch::{bloch_wavenumbers, verify_assumptions, zero_mode_data, BlochPropagator, BlochSpectrumReport};
use crate::config::{hex, RunConfig, WaveKind};
use crate::diagnostics::{
    energy_track, fit_decay, max_deviation, norm_series, relate_check, template_eta, verify_damping_inequality,
    DampingReport, DecayModel, DecayReport, FitWindow, InitialSizes, RelateReport, SeriesKind,
};
use crate::error::{Error, Result};
use crate::evolution::{evolve, make_tooth_data, EvolutionOptions, SimulationState, ToothPerturbation, Trajectory};
use crate::grid::{PeriodicGrid, RealPairField, ScalarField};
use crate::io::{load_field, load_fields, save_field, save_fields};
use crate::model::WaveParameters;
use crate::modulation::{
    extract_gamma, extract_sigma, modulated_perturbations, residual_identity_forward, residual_identity_inverse,
    GammaMethod, IdentityReport, ManufacturedState, ModulationTrack, SigmaMethod, SigmaTrack,
};
use crate::plot::{render, Axes, Series};
use crate::spectral::{norm, NormKind};
use crate::steady::{homogeneous_states, turing_wave, WaveProfile};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    SolveWave,
    BlochSpectrum,
    Evolve,
    ExtractModulation,
    DecayFit,
    VerifyReport,
}

impl Stage {
    pub const ALL: [Stage; 6] =
        [Stage::SolveWave, Stage::BlochSpectrum, Stage::Evolve, Stage::ExtractModulation, Stage::DecayFit, Stage::VerifyReport];

    pub fn name(self) -> &'static str {
        match self {
            Stage::SolveWave => "solve-wave",
            Stage::BlochSpectrum => "bloch-spectrum",
            Stage::Evolve => "evolve",
            Stage::ExtractModulation => "extract-modulation",
            Stage::DecayFit => "decay-fit",
            Stage::VerifyReport => "verify-report",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs_hash: String,
    pub seconds: f64,
    pub files: Vec<String>,
    pub warnings: Vec<String>,
    /// Reason the stage produced nothing, if it was skipped.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tool_version: String,
    pub seed: u64,
    pub threads: usize,
    pub stages: BTreeMap<Stage, StageRecord>,
    pub warnings: Vec<String>,
    /// Relative path to SHA-256.
    pub files: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(config: &RunConfig, threads: usize) -> Self {
        Self {
            config_hash: config.hash(),
            tool_version: TOOL_VERSION.to_string(),
            seed: config.seed,
            threads,
            stages: BTreeMap::new(),
            warnings: Vec::new(),
            files: BTreeMap::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(std::fs::read(path)?)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WaveSummary {
    pub params: WaveParameters,
    pub kind: WaveKind,
    pub points: usize,
    pub residual_norm: f64,
    pub translated_residual: f64,
    pub iterations: usize,
    pub nonconstant: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolutionSummary {
    pub cells: usize,
    pub dt: f64,
    pub times: Vec<f64>,
    pub boundary_ratios: Vec<f64>,
    pub boundary_tol: f64,
    pub validity_end: Option<f64>,
    pub warnings: Vec<String>,
    pub initial_sizes: InitialSizes,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentitySample {
    pub time: f64,
    pub inverse: IdentityReport,
    pub forward: IdentityReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModulationSummary {
    pub sigma_method: SigmaMethod,
    pub gamma_method: GammaMethod,
    pub samples: usize,
    pub sigma_star: f64,
    pub sigma_star_residual: f64,
    pub validity_end: Option<f64>,
    pub picard_change: f64,
    pub max_gamma_x: f64,
    pub identities: Vec<IdentitySample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOutcome {
    pub series: SeriesKind,
    pub model: DecayModel,
    pub report: Option<DecayReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecaySummary {
    pub gap_delta0: f64,
    pub fits: Vec<FitOutcome>,
    pub damping: std::result::Result<DampingReport, String>,
    pub relate: RelateReport,
    pub energy_c_fit: f64,
    pub template_eta_final: f64,
    pub template_key_constant: f64,
}

impl DecaySummary {
    pub fn fit(&self, series: SeriesKind) -> Option<&FitOutcome> {
        self.fits.iter().find(|f| f.series == series)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: CheckStatus,
    pub value: Option<f64>,
    pub bound: String,
    pub detail: String,
}

impl Check {
    fn new(name: &str, ok: bool, value: f64, bound: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            value: value.is_finite().then_some(value),
            bound: bound.into(),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    /// Constant-state run: only the wave and spectrum checks apply.
    pub reduced: bool,
    pub config_hash: String,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl Verdict {
    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.status != CheckStatus::Pass)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Reuse the requested stage too when its record is still valid.
    pub resume: bool,
    /// Discard every previous stage record.
    pub fresh: bool,
    pub threads: usize,
    /// Use this stored profile instead of solving for the wave.
    pub wave_file: Option<PathBuf>,
}

impl RunOptions {
    pub fn with_fresh(self, fresh: bool) -> Self {
        Self { fresh, ..self }
    }
}

/// Smooth random co-periodic field with `‖·‖∞ = amplitude`, drawn from `seed`.
pub fn coperiodic_seed(grid: PeriodicGrid, amplitude: f64, modes: usize, seed: u64) -> RealPairField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<[f64; 4]> = (0..=modes).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect();
    let k0 = 2.0 * PI / grid.length();
    let f = RealPairField::from_fn(grid, |x| {
        coeffs.iter().enumerate().fold((0.0, 0.0), |(a, b), (k, c)| {
            let (s, co) = (k as f64 * k0 * x).sin_cos();
            (a + c[0] * co + c[1] * s, b + c[2] * co + c[3] * s)
        })
    });
    let m = f.max_abs();
    if amplitude == 0.0 || m == 0.0 {
        RealPairField::zeros(grid)
    } else {
        f.scale(amplitude / m)
    }
}

/// Largest distance between the computed Bloch spectra and the zero-state
/// eigenvalues `-1 ± i(βq² - α)`.
pub fn zero_state_mismatch(report: &BlochSpectrumReport, grid: &PeriodicGrid, params: &WaveParameters) -> f64 {
    let mut worst = 0.0f64;
    for (xi, vals) in report.xi_grid.iter().zip(&report.eigenvalues) {
        for q in bloch_wavenumbers(grid, *xi) {
            let om = params.beta * q * q - params.alpha;
            for target in [(-1.0, om), (-1.0, -om)] {
                let d = vals.iter().map(|v| (v.0 - target.0).hypot(v.1 - target.1)).fold(f64::INFINITY, f64::min);
                worst = worst.max(d);
            }
        }
    }
    worst
}

fn relative(r: &IdentityReport) -> f64 {
    let scale = r.lhs_norm.max(r.rhs_norm);
    if scale < 1e-14 {
        0.0
    } else {
        r.residual / scale
    }
}

pub struct Pipeline {
    pub config: RunConfig,
    pub dir: PathBuf,
    pub manifest: RunManifest,
    opts: RunOptions,
    wave_source: Option<String>,
    wave: Option<WaveProfile>,
    wave_summary: Option<WaveSummary>,
    bloch: Option<BlochSpectrumReport>,
    traj: Option<Trajectory>,
    evolution: Option<EvolutionSummary>,
    track: Option<ModulationTrack>,
    modulation: Option<ModulationSummary>,
    decay: Option<DecaySummary>,
}

const SUBDIRS: [&str; 4] = ["snapshots", "tracks", "reports", "plots"];

impl Pipeline {
    pub fn open(config: RunConfig, dir: &Path, opts: RunOptions) -> Result<Self> {
        config.validate()?;
        for sub in SUBDIRS {
            std::fs::create_dir_all(dir.join(sub))?;
        }
        let threads = opts.threads.max(1);
        let mut manifest = match RunManifest::load(dir) {
            Ok(m) if !opts.fresh => m,
            _ => RunManifest::new(&config, threads),
        };
        manifest.config_hash = config.hash();
        manifest.tool_version = TOOL_VERSION.to_string();
        manifest.seed = config.seed;
        manifest.threads = threads;
        std::fs::write(dir.join("config.toml"), config.to_toml_string())?;
        let wave_source = opts.wave_file.as_deref().map(sha256_file).transpose()?;
        let mut p = Self {
            config,
            dir: dir.to_path_buf(),
            manifest,
            opts,
            wave_source,
            wave: None,
            wave_summary: None,
            bloch: None,
            traj: None,
            evolution: None,
            track: None,
            modulation: None,
            decay: None,
        };
        p.save_manifest()?;
        Ok(p)
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn save_manifest(&mut self) -> Result<()> {
        self.manifest.warnings =
            self.manifest.stages.iter().flat_map(|(s, r)| r.warnings.iter().map(move |w| format!("{}: {w}", s.name()))).collect();
        let tmp = self.path("manifest.json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(&self.manifest)?)?;
        std::fs::rename(tmp, self.path("manifest.json"))?;
        Ok(())
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        std::fs::write(self.path(rel), serde_json::to_string_pretty(value)?)?;
        Ok(())
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, rel: &str) -> Result<T> {
        Ok(serde_json::from_str(&std::fs::read_to_string(self.path(rel))?)?)
    }

    /// Hash of the configuration sections `stage` depends on (cumulative over the chain).
    pub fn inputs_hash(&self, stage: Stage) -> String {
        let c = &self.config;
        let mut v = serde_json::Map::new();
        let mut put = |k: &str, x: serde_json::Value| {
            v.insert(k.to_string(), x);
        };
        put("wave", serde_json::to_value(&c.wave).unwrap());
        put("wave_file", serde_json::to_value(&self.wave_source).unwrap());
        if stage >= Stage::BlochSpectrum {
            put("bloch", serde_json::to_value(&c.bloch).unwrap());
        }
        if stage >= Stage::Evolve {
            put("tooth", serde_json::to_value(&c.tooth).unwrap());
            put("evolution", serde_json::to_value(&c.evolution).unwrap());
            put("seed", c.seed.into());
            put("boundary", c.tolerances.boundary.into());
        }
        if stage >= Stage::ExtractModulation {
            put("modulation", serde_json::to_value(&c.modulation).unwrap());
        }
        if stage >= Stage::DecayFit {
            put("fits", serde_json::to_value(&c.fits).unwrap());
        }
        if stage >= Stage::VerifyReport {
            put("tolerances", serde_json::to_value(&c.tolerances).unwrap());
        }
        hex(&Sha256::digest(serde_json::Value::Object(v).to_string().as_bytes()))
    }

    /// Whether the stored record of `stage` can stand in for a recomputation.
    pub fn is_valid(&self, stage: Stage) -> bool {
        let Some(rec) = self.manifest.stages.get(&stage) else { return false };
        rec.inputs_hash == self.inputs_hash(stage)
            && rec.files.iter().all(|f| {
                self.manifest.files.get(f).is_some_and(|h| sha256_file(&self.path(f)).ok().as_deref() == Some(h.as_str()))
            })
    }

    fn invalidate_from(&mut self, stage: Stage) {
        let later: Vec<Stage> = self.manifest.stages.keys().copied().filter(|s| *s >= stage).collect();
        for s in later {
            if let Some(rec) = self.manifest.stages.remove(&s) {
                for f in rec.files {
                    self.manifest.files.remove(&f);
                }
            }
        }
    }

    fn record(&mut self, stage: Stage, seconds: f64, files: Vec<String>, warnings: Vec<String>, skipped: Option<String>) -> Result<()> {
        for f in &files {
            let h = sha256_file(&self.path(f))?;
            self.manifest.files.insert(f.clone(), h);
        }
        let rec = StageRecord { inputs_hash: self.inputs_hash(stage), seconds, files, warnings, skipped };
        self.manifest.stages.insert(stage, rec);
        self.save_manifest()
    }

    pub fn skipped(&self, stage: Stage) -> Option<&str> {
        self.manifest.stages.get(&stage).and_then(|r| r.skipped.as_deref())
    }

    /// Run every stage up to and including `target`; returns the verdict when it is run.
    pub fn run(&mut self, target: Stage) -> Result<Option<Verdict>> {
        let mut verdict = None;
        let mut recomputed = false;
        for stage in Stage::ALL.into_iter().filter(|s| *s <= target) {
            let reuse = !recomputed && self.is_valid(stage) && (stage < target || self.opts.resume);
            if reuse {
                if stage == Stage::VerifyReport {
                    verdict = Some(self.read_json("reports/verdict.json")?);
                }
                continue;
            }
            recomputed = true;
            self.invalidate_from(stage);
            let clock = Instant::now();
            let out = self.compute(stage).map_err(|e| Error::Stage {
                stage: stage.name().into(),
                artifacts: self.dir.display().to_string(),
                source: Box::new(e),
            })?;
            let (files, warnings, skipped, v) = out;
            self.record(stage, clock.elapsed().as_secs_f64(), files, warnings, skipped)?;
            if v.is_some() {
                verdict = v;
            }
        }
        Ok(verdict)
    }

    #[allow(clippy::type_complexity)]
    fn compute(&mut self, stage: Stage) -> Result<(Vec<String>, Vec<String>, Option<String>, Option<Verdict>)> {
        let none = |files: Vec<String>| Ok((files, Vec::new(), None, None));
        match stage {
            Stage::SolveWave => none(self.solve_wave()?),
            Stage::BlochSpectrum => none(self.bloch_spectrum()?),
            Stage::Evolve => match self.skip_reason()? {
                Some(r) => Ok((Vec::new(), Vec::new(), Some(r), None)),
                None => {
                    let (files, warnings) = self.evolve()?;
                    Ok((files, warnings, None, None))
                }
            },
            Stage::ExtractModulation => match self.skip_reason()? {
                Some(r) => Ok((Vec::new(), Vec::new(), Some(r), None)),
                None => none(self.extract_modulation()?),
            },
            Stage::DecayFit => match self.skip_reason()? {
                Some(r) => Ok((Vec::new(), Vec::new(), Some(r), None)),
                None => none(self.decay_fit()?),
            },
            Stage::VerifyReport => {
                let v = self.verify()?;
                self.write_json("reports/verdict.json", &v)?;
                Ok((vec!["reports/verdict.json".into()], Vec::new(), None, Some(v)))
            }
        }
    }

    /// Why the perturbation stages do not apply, if they do not.
    fn skip_reason(&mut self) -> Result<Option<String>> {
        let ws = self.wave_summary()?.clone();
        if !ws.nonconstant {
            return Ok(Some("constant state: only the wave and spectrum checks apply".into()));
        }
        if !self.bloch_report()?.all_ok() {
            return Ok(Some("spectral assumptions fail; the modulated decomposition is undefined".into()));
        }
        Ok(None)
    }

    // ---- solve-wave

    fn solve_wave(&mut self) -> Result<Vec<String>> {
        let c = &self.config.wave;
        let params = c.params()?;
        let wave = if let Some(path) = &self.opts.wave_file {
            let (f, _) = load_field(path)?;
            if (f.grid.length() - params.period).abs() > 1e-12 * params.period || f.grid.num_cells() != 1 {
                return Err(Error::InvalidInput("stored wave does not cover one period of the configured length".into()));
            }
            WaveProfile::from_profile(params, f, 0)
        } else {
            match c.kind {
                WaveKind::Turing => turing_wave(&params, c.points)?,
                WaveKind::Homogeneous => {
                    let states = homogeneous_states(&params);
                    let s = states.get(c.state_index).ok_or_else(|| {
                        Error::InvalidInput(format!("state_index {} but only {} constant states", c.state_index, states.len()))
                    })?;
                    let grid = PeriodicGrid::single_cell(c.points, params.period)?;
                    WaveProfile::from_profile(params, RealPairField::constant(grid, s.value), 0)
                }
            }
        };
        let summary = WaveSummary {
            params,
            kind: c.kind,
            points: wave.grid().num_points(),
            residual_norm: wave.residual_norm,
            translated_residual: wave.translated(0.1234 * params.period).residual_norm,
            iterations: wave.iterations,
            nonconstant: wave.is_nonconstant(),
        };
        save_field(&self.path("snapshots/wave.bin"), &wave.profile, 0.0)?;
        self.write_json("reports/wave.json", &summary)?;
        self.wave = Some(wave);
        self.wave_summary = Some(summary);
        Ok(vec!["snapshots/wave.bin".into(), "reports/wave.json".into()])
    }

    pub fn wave_summary(&mut self) -> Result<&WaveSummary> {
        if self.wave_summary.is_none() {
            self.wave_summary = Some(self.read_json("reports/wave.json")?);
        }
        Ok(self.wave_summary.as_ref().unwrap())
    }

    pub fn wave(&mut self) -> Result<&WaveProfile> {
        if self.wave.is_none() {
            let s = self.wave_summary()?.clone();
            let (f, _) = load_field(&self.path("snapshots/wave.bin"))?;
            self.wave = Some(WaveProfile::from_profile(s.params, f, s.iterations));
        }
        Ok(self.wave.as_ref().unwrap())
    }

    // ---- bloch-spectrum

    fn bloch_spectrum(&mut self) -> Result<Vec<String>> {
        let xi_count = self.config.bloch.xi_count;
        let report = verify_assumptions(self.wave()?, xi_count)?;
        self.write_json("reports/bloch.json", &report)?;
        let top: Vec<(f64, f64)> = (0..report.xi_grid.len()).map(|k| (report.xi_grid[k], report.max_real_part(k))).collect();
        let crit: Vec<(f64, f64)> = report.critical_curve.iter().map(|c| (c.0, c.1)).collect();
        let mut series = vec![Series::new("max Re λ", top)];
        if !crit.is_empty() {
            series.push(Series { dashed: true, ..Series::new("critical curve", crit) });
        }
        std::fs::write(self.path("plots/bloch.svg"), render("Bloch spectrum", "ξ", "Re λ", Axes::Linear, &series))?;
        self.bloch = Some(report);
        Ok(vec!["reports/bloch.json".into(), "plots/bloch.svg".into()])
    }

    pub fn bloch_report(&mut self) -> Result<&BlochSpectrumReport> {
        if self.bloch.is_none() {
            self.bloch = Some(self.read_json("reports/bloch.json")?);
        }
        Ok(self.bloch.as_ref().unwrap())
    }

    // ---- evolve

    pub fn tooth_data(&mut self) -> Result<(RealPairField, RealPairField)> {
        let t = self.config.tooth.clone();
        let seed = self.config.seed;
        let wave = self.wave()?;
        let spec = ToothPerturbation {
            coperiodic_seed: coperiodic_seed(wave.grid(), t.seed_amplitude, t.seed_modes, seed),
            depth: t.depth,
            offset: t.offset,
            ..ToothPerturbation::knockout(wave, t.cells, &t.cells_to_knock(), t.smoothing_width)
        };
        make_tooth_data(wave, &spec)
    }

    fn evolve(&mut self) -> Result<(Vec<String>, Vec<String>)> {
        let data = self.tooth_data()?;
        let e = self.config.evolution.clone();
        let opts = EvolutionOptions {
            dt: e.dt,
            t_end: e.t_end,
            snapshot_stride: e.stride,
            dealias: e.dealias,
            boundary_tol: self.config.tolerances.boundary,
        };
        let wave = self.wave()?.clone();
        let traj = evolve(&wave, &data, &opts)?;
        let (e_p, e_l) = (norm(&data.0, NormKind::H1), norm(&data.1, NormKind::H1));
        let summary = EvolutionSummary {
            cells: data.1.grid.num_cells(),
            dt: e.dt,
            times: traj.times(),
            boundary_ratios: traj.snapshots.iter().map(|s| s.boundary_ratio).collect(),
            boundary_tol: traj.boundary_tol,
            validity_end: traj.validity_end(),
            warnings: traj.warnings.clone(),
            initial_sizes: InitialSizes { e_p, e_l, e_0: e_p + e_l },
            max_deviation: max_deviation(&traj, &wave),
        };
        for entry in std::fs::read_dir(self.path("snapshots"))? {
            let p = entry?.path();
            if p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("snap_")) {
                std::fs::remove_file(p)?;
            }
        }
        let mut files = Vec::new();
        for (k, s) in traj.snapshots.iter().enumerate() {
            let rel = format!("snapshots/snap_{k:05}.bin");
            save_fields(&self.path(&rel), [(s.time, s.w()), (s.time, s.v())])?;
            files.push(rel);
        }
        save_fields(&self.path("snapshots/coperiodic.bin"), traj.coperiodic.iter().map(|(t, f)| (*t, f)))?;
        self.write_json("reports/evolution.json", &summary)?;
        files.push("snapshots/coperiodic.bin".into());
        files.push("reports/evolution.json".into());
        let warnings = traj.warnings.clone();
        self.traj = Some(traj);
        self.evolution = Some(summary);
        Ok((files, warnings))
    }

    pub fn evolution_summary(&mut self) -> Result<&EvolutionSummary> {
        if self.evolution.is_none() {
            self.evolution = Some(self.read_json("reports/evolution.json")?);
        }
        Ok(self.evolution.as_ref().unwrap())
    }

    pub fn trajectory(&mut self) -> Result<&Trajectory> {
        if self.traj.is_none() {
            let s = self.evolution_summary()?.clone();
            let mut snapshots = Vec::with_capacity(s.times.len());
            for (k, &time) in s.times.iter().enumerate() {
                let mut recs = load_fields(&self.path(&format!("snapshots/snap_{k:05}.bin")))?.into_iter();
                let (Some((_, w)), Some((_, v))) = (recs.next(), recs.next()) else {
                    return Err(Error::Format(format!("snapshot {k} is incomplete")));
                };
                snapshots.push(SimulationState {
                    time,
                    w_field: w,
                    v_field: v,
                    dt: s.dt,
                    boundary_ratio: s.boundary_ratios[k],
                    truncation_warning: s.validity_end.is_some_and(|te| time >= te),
                });
            }
            let coperiodic = load_fields(&self.path("snapshots/coperiodic.bin"))?;
            self.traj = Some(Trajectory { snapshots, coperiodic, warnings: s.warnings, boundary_tol: s.boundary_tol });
        }
        Ok(self.traj.as_ref().unwrap())
    }

    // ---- extract-modulation

    fn extract_modulation(&mut self) -> Result<Vec<String>> {
        let m = self.config.modulation.clone();
        let cells = self.config.tooth.cells;
        let wave = self.wave()?.clone();
        let report = self.bloch_report()?.clone();
        let traj = self.trajectory()?;
        let zm = zero_mode_data(&wave)?;
        let bp = BlochPropagator::new(&wave, &report, cells)?;
        let sig = extract_sigma(traj, &wave, &zm, m.sigma_method)?;
        let track = extract_gamma(traj, &wave, &bp, &sig, m.gamma_method)?;
        let n = track.len();
        let mut picks: Vec<usize> = (0..n).step_by((n / 8).max(1)).collect();
        if picks.last() != Some(&(n - 1)) {
            picks.push(n - 1);
        }
        let mut identities = Vec::new();
        for k in picks {
            let snap = &traj.snapshots[k];
            let state = ManufacturedState {
                u: snap.u(),
                u_t: RealPairField::zeros(snap.v().grid),
                w: snap.w().clone(),
                w_t: RealPairField::zeros(wave.grid()),
                sigma: sig.sigma[k],
                sigma_t: sig.sigma_dot[k],
                gamma: track.gamma_fields(k),
            }
            .with_exact_dynamics(&wave.params);
            identities.push(IdentitySample {
                time: snap.time,
                inverse: residual_identity_inverse(&state, &wave, false)?,
                forward: residual_identity_forward(&state, &wave)?,
            });
        }
        let summary = ModulationSummary {
            sigma_method: m.sigma_method,
            gamma_method: m.gamma_method,
            samples: n,
            sigma_star: track.sigma_star,
            sigma_star_residual: track.sigma_star_residual,
            validity_end: track.validity_end,
            picard_change: track.picard_change,
            max_gamma_x: track.gamma_x.iter().map(|g| g.max_abs()).fold(0.0, f64::max),
            identities,
        };
        let mut w = csv::Writer::from_path(self.path("tracks/sigma.csv")).map_err(csv_error)?;
        w.write_record(["t", "sigma", "sigma_t"]).map_err(csv_error)?;
        for k in 0..track.sigma.times.len() {
            w.serialize((track.sigma.times[k], track.sigma.sigma[k], track.sigma.sigma_dot[k])).map_err(csv_error)?;
        }
        w.flush()?;
        let pairs: Vec<(f64, RealPairField)> = (0..n)
            .flat_map(|k| {
                let t = track.times()[k];
                let a = RealPairField { grid: track.gamma[k].grid, re: track.gamma[k].values.clone(), im: track.gamma_x[k].values.clone() };
                let b = RealPairField { grid: track.gamma[k].grid, re: track.gamma_xx[k].values.clone(), im: track.gamma_t[k].values.clone() };
                [(t, a), (t, b)]
            })
            .collect();
        save_fields(&self.path("tracks/gamma.bin"), pairs.iter().map(|(t, f)| (*t, f)))?;
        self.write_json("reports/modulation.json", &summary)?;
        let sigma_pts: Vec<(f64, f64)> = track.sigma.times.iter().copied().zip(track.sigma.sigma.iter().copied()).collect();
        let svg = render("temporal phase", "t", "σ", Axes::Linear, &[Series::new("σ(t)", sigma_pts)]);
        std::fs::write(self.path("plots/sigma.svg"), svg)?;
        self.track = Some(track);
        self.modulation = Some(summary);
        Ok(vec![
            "tracks/sigma.csv".into(),
            "tracks/gamma.bin".into(),
            "reports/modulation.json".into(),
            "plots/sigma.svg".into(),
        ])
    }

    pub fn modulation_summary(&mut self) -> Result<&ModulationSummary> {
        if self.modulation.is_none() {
            self.modulation = Some(self.read_json("reports/modulation.json")?);
        }
        Ok(self.modulation.as_ref().unwrap())
    }

    pub fn modulation_track(&mut self) -> Result<&ModulationTrack> {
        if self.track.is_none() {
            let s = self.modulation_summary()?.clone();
            let mut rd = csv::Reader::from_path(self.path("tracks/sigma.csv")).map_err(csv_error)?;
            let mut sigma = SigmaTrack { method: s.sigma_method, times: Vec::new(), sigma: Vec::new(), sigma_dot: Vec::new() };
            for row in rd.deserialize() {
                let (t, a, b): (f64, f64, f64) = row.map_err(csv_error)?;
                sigma.times.push(t);
                sigma.sigma.push(a);
                sigma.sigma_dot.push(b);
            }
            let recs = load_fields(&self.path("tracks/gamma.bin"))?;
            let scalar = |grid, values: &[f64]| ScalarField { grid, values: values.to_vec() };
            let mut track = ModulationTrack {
                sigma,
                gamma_method: s.gamma_method,
                sigma_star: s.sigma_star,
                sigma_star_residual: s.sigma_star_residual,
                gamma: Vec::new(),
                gamma_x: Vec::new(),
                gamma_xx: Vec::new(),
                gamma_t: Vec::new(),
                validity_end: s.validity_end,
                picard_change: s.picard_change,
            };
            for pair in recs.chunks(2) {
                let [(_, a), (_, b)] = pair else { return Err(Error::Format("gamma track has an odd record count".into())) };
                track.gamma.push(scalar(a.grid, &a.re));
                track.gamma_x.push(scalar(a.grid, &a.im));
                track.gamma_xx.push(scalar(b.grid, &b.re));
                track.gamma_t.push(scalar(b.grid, &b.im));
            }
            self.track = Some(track);
        }
        Ok(self.track.as_ref().unwrap())
    }

    // ---- decay-fit

    /// Fit window used for a series under a model.
    fn window(&self, times: &[f64], values: &[f64], model: DecayModel, valid_until: Option<f64>) -> FitWindow {
        let f = &self.config.fits;
        match model {
            DecayModel::Algebraic => FitWindow {
                t_min: Some(f.localized_window[0]),
                t_max: Some(f.localized_window[1]),
                valid_until,
            },
            DecayModel::Exponential => {
                let floor = f.coperiodic_floor * values.iter().cloned().fold(0.0, f64::max);
                let t_max = times.iter().zip(values).filter(|(_, v)| **v > floor).map(|(t, _)| *t).fold(0.0, f64::max);
                FitWindow { t_min: Some(f.coperiodic_start), t_max: Some(t_max), valid_until: None }
            }
        }
    }

    /// Fit one stored norm series (from `tracks/norms.csv`).
    pub fn fit_series(&mut self, series: SeriesKind, model: DecayModel) -> Result<DecayReport> {
        let (t, y) = self.read_norms(series)?;
        let valid = self.evolution_summary()?.validity_end;
        let sizes = self.evolution_summary()?.initial_sizes;
        let window = self.window(&t, &y, model, if model == DecayModel::Algebraic { valid } else { None });
        let mut r = fit_decay(series.name(), &t, &y, model, window)?;
        r.initial_sizes = Some(sizes);
        Ok(r)
    }

    fn read_norms(&self, series: SeriesKind) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut rd = csv::Reader::from_path(self.path("tracks/norms.csv")).map_err(csv_error)?;
        let col = SeriesKind::ALL.iter().position(|s| *s == series).unwrap() + 1;
        let (mut t, mut y) = (Vec::new(), Vec::new());
        for row in rd.deserialize() {
            let r: Vec<f64> = row.map_err(csv_error)?;
            t.push(r[0]);
            y.push(r[col]);
        }
        Ok((t, y))
    }

    fn decay_fit(&mut self) -> Result<Vec<String>> {
        let wave = self.wave()?.clone();
        let delta0 = self.bloch_report()?.gap_delta0;
        self.trajectory()?;
        self.modulation_track()?;
        let (traj, track) = (self.traj.as_ref().unwrap(), self.track.as_ref().unwrap());
        let pert = modulated_perturbations(traj, track, &wave);
        let columns: Vec<(Vec<f64>, Vec<f64>)> = SeriesKind::ALL.iter().map(|k| norm_series(*k, &pert, track)).collect();
        let mut w = csv::Writer::from_path(self.path("tracks/norms.csv")).map_err(csv_error)?;
        let mut header = vec!["t"];
        header.extend(SeriesKind::ALL.iter().map(|k| k.name()));
        w.write_record(&header).map_err(csv_error)?;
        for i in 0..columns[0].0.len() {
            let mut row = vec![columns[0].0[i]];
            row.extend(columns.iter().map(|c| c.1[i]));
            w.serialize(row).map_err(csv_error)?;
        }
        w.flush()?;
        let damping = verify_damping_inequality(&pert, track).map_err(|e| e.to_string());
        let relate = relate_check(&pert, track);
        let energy_c_fit = energy_track(&pert, track, &wave)?.c_fit;
        let eta = template_eta(&pert, track);
        let sizes = self.evolution_summary()?.initial_sizes;
        let summary_eta = eta.eta.last().copied().unwrap_or(0.0);
        let key = eta.key_constant(sizes.e_l, sizes.e_p);

        let mut files = vec!["tracks/norms.csv".to_string()];
        let mut fits = Vec::new();
        for (series, model) in [
            (SeriesKind::HatWH1, DecayModel::Exponential),
            (SeriesKind::SigmaDot, DecayModel::Exponential),
            (SeriesKind::HatVL2, DecayModel::Algebraic),
            (SeriesKind::RingVLinf, DecayModel::Algebraic),
            (SeriesKind::GammaXLinf, DecayModel::Algebraic),
        ] {
            let outcome = match self.fit_series(series, model) {
                Ok(r) => FitOutcome { series, model, report: Some(r), error: None },
                Err(Error::InsufficientData(m)) => FitOutcome { series, model, report: None, error: Some(m) },
                Err(e) => return Err(e),
            };
            let rel = format!("plots/{}.svg", series.name());
            std::fs::write(self.path(&rel), self.fit_plot(&outcome)?)?;
            files.push(rel);
            fits.push(outcome);
        }
        let summary = DecaySummary {
            gap_delta0: delta0,
            fits,
            damping,
            relate,
            energy_c_fit,
            template_eta_final: summary_eta,
            template_key_constant: key,
        };
        self.write_json("reports/decay.json", &summary)?;
        files.push("reports/decay.json".into());
        self.decay = Some(summary);
        Ok(files)
    }

    fn fit_plot(&self, f: &FitOutcome) -> Result<String> {
        let (t, y) = self.read_norms(f.series)?;
        let (axes, xlabel, shift) = match f.model {
            DecayModel::Algebraic => (Axes::LogLog, "1 + t", 1.0),
            DecayModel::Exponential => (Axes::SemiLogY, "t", 0.0),
        };
        let mut series = vec![Series::new(f.series.name(), t.iter().zip(&y).map(|(t, y)| (t + shift, *y)).collect())];
        if let Some(r) = &f.report {
            let line = |t: f64| match f.model {
                DecayModel::Algebraic => r.prefactor * (1.0 + t).powf(r.slope),
                DecayModel::Exponential => r.prefactor * (r.slope * t).exp(),
            };
            let (a, b) = r.window;
            let pts = (0..=40).map(|i| a + (b - a) * i as f64 / 40.0).map(|t| (t + shift, line(t))).collect();
            series.push(Series { dashed: true, ..Series::new(format!("fit, slope {:.3}", r.slope), pts) });
        }
        Ok(render(f.series.name(), xlabel, f.series.name(), axes, &series))
    }

    pub fn decay_summary(&mut self) -> Result<&DecaySummary> {
        if self.decay.is_none() {
            self.decay = Some(self.read_json("reports/decay.json")?);
        }
        Ok(self.decay.as_ref().unwrap())
    }

    // ---- verify-report

    fn verify(&mut self) -> Result<Verdict> {
        let tol = self.config.tolerances.clone();
        let ws = self.wave_summary()?.clone();
        let report = self.bloch_report()?.clone();
        let mut checks = vec![
            Check::new(
                "wave_residual",
                ws.residual_norm <= tol.wave_residual,
                ws.residual_norm,
                format!("<= {:e}", tol.wave_residual),
                format!("L2 residual of the stationary equation after {} Newton steps", ws.iterations),
            ),
            Check::new(
                "wave_translated_residual",
                ws.translated_residual <= tol.wave_residual,
                ws.translated_residual,
                format!("<= {:e}", tol.wave_residual),
                "residual of the translated profile",
            ),
        ];
        let witness = report.d1_witness.map(|w| format!("witness at xi = {:.4}: lambda = {:.4e} {:+.4e}i", w.0, w.1, w.2));
        if !ws.nonconstant {
            checks.push(Check::new(
                "strict_stability",
                report.d1_witness.is_none(),
                report.d1_witness.map(|w| w.1).unwrap_or(f64::NAN),
                "no eigenvalue with Re >= -1e-7",
                witness.clone().unwrap_or_else(|| "spectrum in the open left half-plane".into()),
            ));
            if ws.params.forcing == 0.0 {
                let grid = PeriodicGrid::single_cell(ws.points, ws.params.period)?;
                let mismatch = zero_state_mismatch(&report, &grid, &ws.params);
                checks.push(Check::new(
                    "zero_state_spectrum",
                    mismatch <= tol.zero_spectrum,
                    mismatch,
                    format!("<= {:e}", tol.zero_spectrum),
                    "distance to -1 ± i(beta q^2 - alpha)",
                ));
            }
            return Ok(self.finish_verdict(checks, true));
        }
        checks.push(Check::new(
            "spectral_assumptions",
            report.all_ok() && report.theta_fit > 0.0,
            report.gap_delta0,
            "d1, d2, d3 hold and theta > 0",
            format!(
                "d1 {} d2 {} d3 {}; delta0 {:.4}, theta {:.4}{}",
                report.d1_ok,
                report.d2_ok,
                report.d3_ok,
                report.gap_delta0,
                report.theta_fit,
                witness.map(|w| format!("; {w}")).unwrap_or_default()
            ),
        ));
        checks.push(Check::new(
            "kernel_residual",
            report.kernel_residual <= 1e-8,
            report.kernel_residual,
            "<= 1e-8",
            "relative L2 norm of L(0) phi'",
        ));
        if !report.all_ok() {
            return Ok(self.finish_verdict(checks, false));
        }

        let ev = self.evolution_summary()?.clone();
        let ms = self.modulation_summary()?.clone();
        let ds = self.decay_summary()?.clone();
        let fit_end = self.config.fits.localized_window[1];
        checks.push(Check {
            name: "boundary_validity".into(),
            status: match ev.validity_end {
                Some(te) if te <= fit_end => CheckStatus::Inconclusive,
                _ => CheckStatus::Pass,
            },
            value: ev.validity_end,
            bound: format!("monitor quiet through t = {fit_end}"),
            detail: format!("max outer-cell ratio {:.2e}", ev.boundary_ratios.iter().cloned().fold(0.0, f64::max)),
        });
        checks.push(Check::new(
            "gamma_x_bound",
            ms.validity_end.is_none() && ms.max_gamma_x <= tol.gamma_x,
            ms.max_gamma_x,
            format!("<= {}", tol.gamma_x),
            format!("max |gamma_x| over {} snapshots; sweep change {:.2e}", ms.samples, ms.picard_change),
        ));
        let inv = ms.identities.iter().map(|s| relative(&s.inverse)).fold(0.0, f64::max);
        let fwd = ms.identities.iter().map(|s| relative(&s.forward)).fold(0.0, f64::max);
        for (name, v) in [("identity_inverse", inv), ("identity_forward", fwd)] {
            checks.push(Check::new(
                name,
                v <= tol.identity,
                v,
                format!("<= {:e}", tol.identity),
                format!("largest relative residual over {} snapshots", ms.identities.len()),
            ));
        }
        if self.config.tooth.seed_amplitude > 0.0 {
            for series in [SeriesKind::HatWH1, SeriesKind::SigmaDot] {
                checks.push(rate_check(&ds, series, tol.coperiodic_rate));
            }
        }
        if ev.initial_sizes.e_l > 0.0 {
            for (series, bound) in [(SeriesKind::HatVL2, tol.hat_v_exponent), (SeriesKind::RingVLinf, tol.ring_v_exponent)] {
                checks.push(exponent_check(&ds, series, bound, tol.r_squared));
            }
        }
        checks.push(Check::new(
            "damping_constant",
            ds.damping.is_ok(),
            ds.damping.as_ref().map(|d| d.c_fit).unwrap_or(f64::NAN),
            "finite",
            ds.damping.as_ref().map(|d| format!("tightest at t = {:.2}", d.tightest_time)).unwrap_or_else(|e| e.clone()),
        ));
        let relate_max = ds.relate.c_l2.max(ds.relate.c_h3).max(ds.relate.c_linf);
        checks.push(Check::new(
            "relate_constants",
            relate_max.is_finite() && !ds.relate.ratios.is_empty(),
            relate_max,
            "finite",
            format!("L2 {:.3}, H3 {:.3}, Linf {:.3}", ds.relate.c_l2, ds.relate.c_h3, ds.relate.c_linf),
        ));
        Ok(self.finish_verdict(checks, false))
    }

    fn finish_verdict(&self, checks: Vec<Check>, reduced: bool) -> Verdict {
        Verdict {
            pass: checks.iter().all(|c| c.status == CheckStatus::Pass),
            reduced,
            config_hash: self.config.hash(),
            checks,
            warnings: self.manifest.stages.iter().flat_map(|(s, r)| r.warnings.iter().map(move |w| format!("{}: {w}", s.name()))).collect(),
        }
    }
}

fn rate_check(ds: &DecaySummary, series: SeriesKind, tol: f64) -> Check {
    let name = format!("coperiodic_rate_{}", series.name());
    let bound = format!("within {:.0}% of delta0 = {:.4}", 100.0 * tol, ds.gap_delta0);
    match ds.fit(series).and_then(|f| f.report.as_ref()) {
        Some(r) => {
            let dev = (r.rate / ds.gap_delta0 - 1.0).abs();
            Check::new(&name, dev <= tol, r.rate, bound, format!("window {:?}, R2 {:.4}", r.window, r.r_squared))
        }
        None => Check {
            name,
            status: CheckStatus::Inconclusive,
            value: None,
            bound,
            detail: ds.fit(series).and_then(|f| f.error.clone()).unwrap_or_default(),
        },
    }
}

fn exponent_check(ds: &DecaySummary, series: SeriesKind, bound: f64, r2: f64) -> Check {
    let name = format!("localized_exponent_{}", series.name());
    let bound_text = format!("slope <= {bound} with R2 >= {r2}");
    match ds.fit(series).and_then(|f| f.report.as_ref()) {
        Some(r) if !r.boundary_valid && (1.0 + r.window.1) / (1.0 + r.window.0) < 10.0 => Check {
            name,
            status: CheckStatus::Inconclusive,
            value: Some(r.slope),
            bound: bound_text,
            detail: "boundary-valid window shorter than a decade".into(),
        },
        Some(r) => Check::new(
            &name,
            r.slope <= bound && r.r_squared >= r2,
            r.slope,
            bound_text,
            format!("window {:?}, R2 {:.4}, {} samples", r.window, r.r_squared, r.samples),
        ),
        None => Check {
            name,
            status: CheckStatus::Inconclusive,
            value: None,
            bound: bound_text,
            detail: ds.fit(series).and_then(|f| f.error.clone()).unwrap_or_default(),
        },
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}
