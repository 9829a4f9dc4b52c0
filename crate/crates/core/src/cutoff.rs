//! Smooth cut-off functions: the temporal switch χ and the frequency window ρ.

use std::sync::OnceLock;

fn bump(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        0.0
    } else {
        (-1.0 / (s * (1.0 - s))).exp()
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1].
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                let (mut q0, mut q1) = (1.0, z);
                for k in 2..=n {
                    let q2 = ((2 * k - 1) as f64 * z * q1 - (k - 1) as f64 * q0) / k as f64;
                    q0 = q1;
                    q1 = q2;
                }
                let dq = n as f64 * (z * q1 - q0) / (z * z - 1.0);
                w[i] = 2.0 / ((1.0 - z * z) * dq * dq);
                break;
            }
        }
        x[i] = z;
    }
    (x, w)
}

fn rule() -> &'static (Vec<f64>, Vec<f64>, f64) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>, f64)> = OnceLock::new();
    RULE.get_or_init(|| {
        let (x, w) = gauss_legendre(48);
        let total = integrate_bump(&x, &w, 1.0);
        (x, w, total)
    })
}

fn integrate_bump(x: &[f64], w: &[f64], upper: f64) -> f64 {
    // split [0, upper] in panels so the flat ends are resolved
    let panels = 8;
    let mut acc = 0.0;
    for p in 0..panels {
        let a = upper * p as f64 / panels as f64;
        let b = upper * (p + 1) as f64 / panels as f64;
        let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
        acc += r * x.iter().zip(w).map(|(xi, wi)| wi * bump(m + r * xi)).sum::<f64>();
    }
    acc
}

/// C∞ monotone transition from 0 on `(-∞, 0]` to 1 on `[1, ∞)`, built as the
/// normalized integral of the bump `exp(-1/(s(1-s)))`.
pub fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 1.0;
    }
    let (x, w, total) = rule();
    // use the symmetry S(s) = 1 - S(1-s) to integrate over the shorter side
    if s <= 0.5 {
        integrate_bump(x, w, s) / total
    } else {
        1.0 - integrate_bump(x, w, 1.0 - s) / total
    }
}

pub fn smooth_step_derivative(s: f64) -> f64 {
    bump(s) / rule().2
}

/// Temporal cut-off: 0 on [0,1], 1 on [2,∞).
pub fn chi(t: f64) -> f64 {
    smooth_step(t - 1.0)
}

pub fn chi_dot(t: f64) -> f64 {
    smooth_step_derivative(t - 1.0)
}

/// Frequency window: 1 for `|ξ| ≤ ξ₀/2`, 0 for `|ξ| ≥ ξ₀`.
pub fn frequency_window(xi: f64, xi0: f64) -> f64 {
    if xi0 <= 0.0 {
        return 0.0;
    }
    let s = (xi.abs() - 0.5 * xi0) / (0.5 * xi0);
    1.0 - smooth_step(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_is_monotone_and_symmetric() {
        assert_eq!(chi(0.0), 0.0);
        assert_eq!(chi(1.0), 0.0);
        assert_eq!(chi(2.0), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-14);
        let mut last = 0.0;
        for k in 0..=100 {
            let s = k as f64 / 100.0;
            let v = smooth_step(s);
            assert!(v >= last);
            assert!((v + smooth_step(1.0 - s) - 1.0).abs() < 1e-13);
            last = v;
        }
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        for s in [0.1, 0.3, 0.5, 0.77] {
            let e = 1e-6;
            let fd = (smooth_step(s + e) - smooth_step(s - e)) / (2.0 * e);
            assert!((fd - smooth_step_derivative(s)).abs() < 1e-8);
        }
    }

    #[test]
    fn window_levels() {
        assert_eq!(frequency_window(0.01, 0.1), 1.0);
        assert_eq!(frequency_window(-0.1, 0.1), 0.0);
        assert!((frequency_window(0.075, 0.1) - 0.5).abs() < 1e-13);
    }
}
