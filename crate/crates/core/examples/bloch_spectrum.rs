//! Bloch spectrum of the default wave and the spectral-assumption verdicts.
use lle_tooth::bloch::{verify_assumptions, zero_mode_data};
use lle_tooth::steady::turing_wave;
use lle_tooth::WaveParameters;
use std::f64::consts::PI;

fn main() -> lle_tooth::Result<()> {
    let params = WaveParameters::new(1.0, -1.0, 1.2, 2.0 * PI)?;
    let points: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(64);
    let wave = turing_wave(&params, points)?;
    let t = std::time::Instant::now();
    let report = verify_assumptions(&wave, 64)?;
    println!("N = {points}, {} frequencies in {:.2?}", report.xi_grid.len(), t.elapsed());
    println!("d1 {} d2 {} d3 {}", report.d1_ok, report.d2_ok, report.d3_ok);
    println!("delta0 = {:.6}, theta = {:.6}, diffusion = {:.6}", report.gap_delta0, report.theta_fit, report.critical_diffusion);
    println!("kernel eigenvalue {:?} ({} within tolerance)", report.kernel_eigenvalue, report.kernel_count);
    println!("xi0 = {:.4}, slope at 0 = {:?}", report.cutoff_xi0, report.critical_slope);
    for (xi, re, im) in report.critical_curve.iter().filter(|c| c.0 >= 0.0) {
        println!("  xi {xi:8.4}  lambda_c = {re:.3e} {im:+.3e}i  re/xi^2 = {:.4}", if *xi > 0.0 { re / (xi * xi) } else { 0.0 });
    }
    if let Some(w) = report.d1_witness {
        println!("witness {:?}", w);
    }
    let zm = zero_mode_data(&wave)?;
    println!(
        "<adjoint, phi'> = {:.3e}, adjoint residual {:.2e}, kernel residual {:.2e}",
        zm.normalization_check.0 - 1.0,
        zm.adjoint_residual,
        zm.kernel_residual
    );
    Ok(())
}
