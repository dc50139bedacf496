//! Minimal SVG line plots on logarithmic axes.

use std::fmt::Write;

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// `stroke-dasharray` value; `None` for a solid line.
    pub dash: Option<&'static str>,
    pub color: &'static str,
    /// Plot against the right-hand axis.
    pub secondary: bool,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 70.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn log_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| *v > 0.0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.log10()), hi.max(v.log10())));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let (lo, hi) = (lo.floor(), hi.ceil());
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    }
}

fn decades(range: (f64, f64)) -> impl Iterator<Item = i32> {
    range.0 as i32..=range.1 as i32
}

/// Renders the series on log-log axes with an optional secondary y axis.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, y2_label: &str, series: &[Series]) -> String {
    let xr = log_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let yr = log_range(series.iter().filter(|s| !s.secondary).flat_map(|s| s.points.iter().map(|p| p.1)));
    let y2r = log_range(series.iter().filter(|s| s.secondary).flat_map(|s| s.points.iter().map(|p| p.1)));
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x.log10() - xr.0) / (xr.1 - xr.0) * pw;
    let sy = |y: f64, r: (f64, f64)| TOP + ph - (y.log10() - r.0) / (r.1 - r.0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for e in decades(xr) {
        let x = sx(10f64.powi(e));
        let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{}" x2="{x:.1}" y2="{}" stroke="black"/>"#, TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{}" text-anchor="middle">1e{e}</text>"#, TOP + ph + 18.0);
    }
    for e in decades(yr) {
        let y = sy(10f64.powi(e), yr);
        let _ = writeln!(s, r#"<line x1="{}" y1="{y:.1}" x2="{LEFT}" y2="{y:.1}" stroke="black"/>"#, LEFT - 5.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">1e{e}</text>"#, LEFT - 8.0, y + 4.0);
    }
    if series.iter().any(|s| s.secondary) {
        for e in decades(y2r) {
            let y = sy(10f64.powi(e), y2r);
            let x = LEFT + pw;
            let _ = writeln!(s, r#"<line x1="{x}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="black"/>"#, x + 5.0);
            let _ = writeln!(s, r#"<text x="{}" y="{:.1}">1e{e}</text>"#, x + 8.0, y + 4.0);
        }
        let _ = writeln!(
            s,
            r#"<text transform="translate({},{}) rotate(90)" text-anchor="middle">{y2_label}</text>"#,
            W - 15.0,
            TOP + ph / 2.0
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, LEFT + pw / 2.0, H - 10.0);
    let _ = writeln!(
        s,
        r#"<text transform="translate(18,{}) rotate(-90)" text-anchor="middle">{y_label}</text>"#,
        TOP + ph / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let r = if ser.secondary { y2r } else { yr };
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.0 > 0.0 && p.1 > 0.0)
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y, r)))
            .collect();
        let dash = ser.dash.map(|d| format!(r#" stroke-dasharray="{d}""#)).unwrap_or_default();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.8"{dash}/>"#,
            pts.join(" "),
            ser.color
        );
        let ly = TOP + 16.0 + 16.0 * i as f64;
        let lx = LEFT + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="1.8"{dash}/>"#, lx + 24.0, ser.color);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 30.0, ly + 4.0, ser.label);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_all_series() {
        let a = Series {
            label: "a".into(),
            points: vec![(1e-3, 2.0), (1e-1, 0.5)],
            dash: Some("6 4"),
            color: "black",
            secondary: false,
        };
        let b = Series {
            label: "b".into(),
            points: vec![(1e-3, 35.0), (1e-1, 2.0)],
            dash: None,
            color: "gray",
            secondary: true,
        };
        let svg = line_plot("t", "x", "y", "y2", &[a, b]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("stroke-dasharray=\"6 4\""));
    }
}
