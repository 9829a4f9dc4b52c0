//! Damping energies, the relate inequalities and the template function on a tooth run.
use lle_tooth::bloch::{verify_assumptions, zero_mode_data, BlochPropagator};
use lle_tooth::diagnostics::{energy_track, relate_check, template_eta, verify_damping_inequality};
use lle_tooth::evolution::{evolve, make_tooth_data, EvolutionOptions, ToothPerturbation};
use lle_tooth::modulation::{extract_gamma, extract_sigma, modulated_perturbations, GammaMethod, SigmaMethod};
use lle_tooth::spectral::{norm, NormKind};
use lle_tooth::steady::turing_wave;
use lle_tooth::WaveParameters;
use std::f64::consts::PI;

fn main() -> lle_tooth::Result<()> {
    let params = WaveParameters::new(1.0, -1.0, 1.2, 2.0 * PI)?;
    let wave = turing_wave(&params, 64)?;
    let report = verify_assumptions(&wave, 64)?;
    let zm = zero_mode_data(&wave)?;
    let cells = 16;
    for depth in [0.1, 0.05] {
        let spec = ToothPerturbation { depth, ..ToothPerturbation::knockout(&wave, cells, &[cells / 2], 0.5) };
        let data = make_tooth_data(&wave, &spec)?;
        let traj = evolve(&wave, &data, &EvolutionOptions { dt: 0.01, t_end: 30.0, snapshot_stride: 50, ..Default::default() })?;
        let sigma = extract_sigma(&traj, &wave, &zm, SigmaMethod::Projection)?;
        let track = extract_gamma(&traj, &wave, &BlochPropagator::new(&wave, &report, cells)?, &sigma, GammaMethod::Duhamel)?;
        let pert = modulated_perturbations(&traj, &track, &wave);

        let e_l = norm(&data.1, NormKind::H1);
        println!("depth {depth}: E_l = {e_l:.3e}");
        let energies = energy_track(&pert, &track, &wave)?;
        println!("  energy positivity constant {:.3}", energies.c_fit);
        let damping = verify_damping_inequality(&pert, &track)?;
        println!("  damping constant {:.3} (tightest at t = {:.2})", damping.c_fit, damping.tightest_time);
        let relate = relate_check(&pert, &track);
        println!("  relate constants L2 {:.3}, H3 {:.3}, Linf {:.3}; {} excluded", relate.c_l2, relate.c_h3, relate.c_linf, relate.excluded.len());
        let eta = template_eta(&pert, &track);
        println!(
            "  eta(t_end) = {:.3e}, key-inequality constant {:.3}",
            eta.eta.last().copied().unwrap_or(0.0),
            eta.key_constant(e_l, norm(&data.0, NormKind::H1))
        );
    }
    Ok(())
}
