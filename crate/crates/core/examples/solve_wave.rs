//! Build the default wave from the Turing onset and check its residual.
use lle_tooth::steady::{homogeneous_states, turing_wave};
use lle_tooth::WaveParameters;
use std::f64::consts::PI;

fn main() -> lle_tooth::Result<()> {
    let params = WaveParameters::new(1.0, -1.0, 1.2, 2.0 * PI)?;
    for s in homogeneous_states(&params) {
        println!("homogeneous state rho = {:.6}, u* = ({:.6}, {:.6})", s.rho, s.value.0, s.value.1);
    }
    for points in [64, 256] {
        let t = std::time::Instant::now();
        let wave = turing_wave(&params, points)?;
        let ptp = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
        println!(
            "N = {points}: residual {:.2e}, newton iterations {}, ptp re {:.4} im {:.4}, {:.2?}",
            wave.residual_norm,
            wave.iterations,
            ptp(&wave.profile.re),
            ptp(&wave.profile.im),
            t.elapsed()
        );
        let shifted = wave.translated(0.37);
        println!("  translated residual {:.2e}", shifted.residual_norm);
    }
    Ok(())
}
