//! Minimal single-series SVG line plots: one polyline, two axes, no
//! external assets. Output is deterministic for identical input.

use std::fmt::Write as _;

pub fn polyline_plot(
    points: &[(f64, f64)],
    title: &str,
    x_label: &str,
    y_label: &str,
) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const ML: f64 = 70.0; // left margin
    const MR: f64 = 20.0;
    const MT: f64 = 40.0;
    const MB: f64 = 55.0;

    let finite: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .cloned()
        .collect();
    let (x0, x1, y0, y1) = if finite.is_empty() {
        (0.0, 1.0, 0.0, 1.0)
    } else {
        let xs: Vec<f64> = finite.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = finite.iter().map(|p| p.1).collect();
        let (xa, xb) = (
            xs.iter().cloned().fold(f64::INFINITY, f64::min),
            xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        let (ya, yb) = (
            ys.iter().cloned().fold(f64::INFINITY, f64::min),
            ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        let pad = |a: f64, b: f64| {
            if a == b {
                (a - 0.5, b + 0.5)
            } else {
                let m = 0.05 * (b - a);
                (a - m, b + m)
            }
        };
        let (xa, xb) = pad(xa, xb);
        let (ya, yb) = pad(ya, yb);
        (xa, xb, ya, yb)
    };

    let sx = |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
    let sy = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{W}" height="{H}" fill="white" stroke="none"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    // axes
    let _ = writeln!(
        svg,
        r#"<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{:.1}" stroke="black"/>"#,
        H - MB
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{ML}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        H - MB,
        W - MR,
        H - MB
    );
    // tick labels at the extremes
    let _ = writeln!(
        svg,
        r#"<text x="{ML}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
        H - MB + 16.0,
        format_num(x0)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
        W - MR,
        H - MB + 16.0,
        format_num(x1)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
        ML - 6.0,
        H - MB,
        format_num(y0)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{MT}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
        ML - 6.0,
        format_num(y1)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        (ML + W - MR) / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0,
        escape(y_label)
    );
    if !finite.is_empty() {
        let mut path = String::new();
        for (x, y) in &finite {
            let _ = write!(path, "{:.2},{:.2} ", sx(*x), sy(*y));
        }
        let _ = writeln!(
            svg,
            r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##,
            path.trim_end()
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn format_num(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (1e-3..1e5).contains(&a) {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.').to_string();
        s
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
