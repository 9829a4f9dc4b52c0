//! Minimal SVG line plots for run directories.

use std::fmt::Write;

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Draw as a dashed line.
    pub dashed: bool,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self { label: label.into(), points, dashed: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axes {
    Linear,
    /// log10 on both axes; non-positive samples are skipped.
    LogLog,
    /// log10 on the vertical axis only.
    SemiLogY,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#555555"];
const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 60.0;

fn transform(axes: Axes, p: (f64, f64)) -> Option<(f64, f64)> {
    let q = match axes {
        Axes::Linear => p,
        Axes::LogLog if p.0 > 0.0 && p.1 > 0.0 => (p.0.log10(), p.1.log10()),
        Axes::LogLog => return None,
        Axes::SemiLogY if p.1 > 0.0 => (p.0, p.1.log10()),
        Axes::SemiLogY => return None,
    };
    (q.0.is_finite() && q.1.is_finite()).then_some(q)
}

pub fn render(title: &str, x_label: &str, y_label: &str, axes: Axes, series: &[Series]) -> String {
    let data: Vec<Vec<(f64, f64)>> =
        series.iter().map(|s| s.points.iter().filter_map(|p| transform(axes, *p)).collect()).collect();
    let all = data.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let xtick = |v: f64| match axes {
        Axes::LogLog => format!("1e{v:.1}"),
        _ => format!("{v:.3}"),
    };
    let ytick = |v: f64| match axes {
        Axes::Linear => format!("{v:.3}"),
        _ => format!("1e{v:.1}"),
    };

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, sx(xv), H - PAD + 16.0, xtick(xv));
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, PAD - 4.0, sy(yv) + 4.0, ytick(yv));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 14.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    for (i, (ser, pts)) in series.iter().zip(&data).enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let dash = if ser.dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#, path.join(" "));
        let ly = PAD + 16.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#, W - PAD - 6.0, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loglog_skips_nonpositive_samples() {
        let pts = vec![(0.0, 1.0), (1.0, 0.5), (10.0, 0.05), (100.0, 0.0)];
        let svg = render("a<b", "t", "y", Axes::LogLog, &[Series::new("y", pts)]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert_eq!(line.matches(',').count(), 2);
    }
}
