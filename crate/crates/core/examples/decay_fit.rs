//! Decay rates: co-periodic data against the spectral gap, then a localized tooth.
//!
//! Usage: decay_fit [cells] [t_end]
use lle_tooth::bloch::{verify_assumptions, zero_mode_data, BlochPropagator};
use lle_tooth::diagnostics::{fit_decay, norm_series, DecayModel, FitWindow, SeriesKind};
use lle_tooth::evolution::{evolve, make_tooth_data, EvolutionOptions, ToothPerturbation};
use lle_tooth::modulation::{extract_gamma, extract_sigma, modulated_perturbations, GammaMethod, SigmaMethod};
use lle_tooth::steady::turing_wave;
use lle_tooth::{RealPairField, WaveParameters};
use std::f64::consts::PI;

fn main() -> lle_tooth::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let cells: usize = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(64);
    let t_end: f64 = args.get(2).and_then(|a| a.parse().ok()).unwrap_or(100.0);
    let params = WaveParameters::new(1.0, -1.0, 1.2, 2.0 * PI)?;
    let wave = turing_wave(&params, 64)?;
    let report = verify_assumptions(&wave, 64)?;
    let zm = zero_mode_data(&wave)?;
    println!("delta0 = {:.4}", report.gap_delta0);

    // co-periodic only: v0 = 0
    let spec = ToothPerturbation {
        depth: 0.0,
        coperiodic_seed: RealPairField::from_fn(wave.grid(), |x| (0.01 * (x + 0.3).sin(), 0.005 * (2.0 * x).cos())),
        ..ToothPerturbation::knockout(&wave, 2, &[1], 0.5)
    };
    let data = make_tooth_data(&wave, &spec)?;
    let traj = evolve(&wave, &data, &EvolutionOptions { dt: 0.01, t_end: 60.0, snapshot_stride: 25, ..Default::default() })?;
    let sigma = extract_sigma(&traj, &wave, &zm, SigmaMethod::Projection)?;
    let track = extract_gamma(&traj, &wave, &BlochPropagator::new(&wave, &report, 2)?, &sigma, GammaMethod::Duhamel)?;
    let pert = modulated_perturbations(&traj, &track, &wave);
    for kind in [SeriesKind::HatWH1, SeriesKind::SigmaDot] {
        let (t, y) = norm_series(kind, &pert, &track);
        // stop where the series reaches the numerical floor
        let floor = 1e-8 * y.iter().cloned().fold(0.0, f64::max);
        let t_max = t.iter().zip(&y).filter(|(_, v)| **v > floor).map(|(t, _)| *t).fold(0.0, f64::max);
        let window = FitWindow { t_min: Some(5.0), t_max: Some(t_max), valid_until: None };
        let r = fit_decay(kind.name(), &t, &y, DecayModel::Exponential, window)?;
        println!("{:>12}: rate {:.4} = {:.3} delta0, R2 {:.4}, window {:?}", kind.name(), r.rate, r.rate / report.gap_delta0, r.r_squared, r.window);
    }

    // localized tooth
    let spec = ToothPerturbation::knockout(&wave, cells, &[cells / 2], 0.5);
    let data = make_tooth_data(&wave, &ToothPerturbation { depth: 0.1, ..spec })?;
    let traj = evolve(&wave, &data, &EvolutionOptions { dt: 0.01, t_end, snapshot_stride: 50, ..Default::default() })?;
    let sigma = extract_sigma(&traj, &wave, &zm, SigmaMethod::Projection)?;
    let track = extract_gamma(&traj, &wave, &BlochPropagator::new(&wave, &report, cells)?, &sigma, GammaMethod::Duhamel)?;
    let pert = modulated_perturbations(&traj, &track, &wave);
    for kind in [SeriesKind::HatVL2, SeriesKind::RingVLinf, SeriesKind::GammaXLinf] {
        let (t, y) = norm_series(kind, &pert, &track);
        let window = FitWindow { t_min: Some(0.09 * t_end), t_max: None, valid_until: traj.validity_end() };
        match fit_decay(kind.name(), &t, &y, DecayModel::Algebraic, window) {
            Ok(r) => println!("{:>12}: slope {:.4}, R2 {:.4}, window {:?}", kind.name(), r.slope, r.r_squared, r.window),
            Err(e) => println!("{:>12}: {e}", kind.name()),
        }
    }
    Ok(())
}
