//! Tooth initial data on a chain of periods, evolved with the split (w, v) stepper.
//!
//! Usage: evolve_tooth [cells] [t_end] [depth]
use lle_tooth::diagnostics::max_deviation;
use lle_tooth::evolution::{evolve, evolve_direct, make_tooth_data, EvolutionOptions, ToothPerturbation};
use lle_tooth::spectral::{norm, NormKind};
use lle_tooth::steady::turing_wave;
use lle_tooth::{RealPairField, WaveParameters};
use std::f64::consts::PI;

fn main() -> lle_tooth::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let cells: usize = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(16);
    let t_end: f64 = args.get(2).and_then(|a| a.parse().ok()).unwrap_or(20.0);
    let depth: f64 = args.get(3).and_then(|a| a.parse().ok()).unwrap_or(0.1);
    let params = WaveParameters::new(1.0, -1.0, 1.2, 2.0 * PI)?;
    let wave = turing_wave(&params, 64)?;

    let spec = ToothPerturbation {
        depth,
        coperiodic_seed: RealPairField::from_fn(wave.grid(), |x| (0.01 * x.sin(), 0.005 * (2.0 * x).cos())),
        ..ToothPerturbation::knockout(&wave, cells, &[cells / 2], 0.5)
    };
    let (w0, v0) = make_tooth_data(&wave, &spec)?;
    println!("|w0|_H1 = {:.3e}, |v0|_H1 = {:.3e}", norm(&w0, NormKind::H1), norm(&v0, NormKind::H1));

    let opts = EvolutionOptions { dt: 0.01, t_end, snapshot_stride: 100, ..Default::default() };
    let clock = std::time::Instant::now();
    let traj = evolve(&wave, &(w0.clone(), v0.clone()), &opts)?;
    println!("{} snapshots in {:.2?}", traj.snapshots.len(), clock.elapsed());
    for s in &traj.snapshots {
        println!(
            "t {:6.2}  |w - phi|_Linf {:.3e}  |v|_L2 {:.3e}  boundary ratio {:.2e}",
            s.time,
            s.w().sub(&wave.profile).max_abs(),
            norm(s.v(), NormKind::L2),
            s.boundary_ratio
        );
    }
    println!("sup_t |u - phi|_Linf = {:.4e}, boundary valid until {:?}", max_deviation(&traj, &wave), traj.validity_end());

    // the split stepper against the plain one on the full chain
    let short = EvolutionOptions { t_end: t_end.min(5.0), ..opts };
    let split = evolve(&wave, &(w0.clone(), v0.clone()), &short)?;
    let direct = evolve_direct(&params, &wave.profile.add(&w0).tile(cells).add(&v0), &short)?;
    let gap = split.snapshots.iter().zip(&direct).map(|(s, (_, u))| s.u().sub(u).max_abs()).fold(0.0, f64::max);
    println!("split vs direct up to t = {}: {gap:.2e}", short.t_end);
    Ok(())
}
