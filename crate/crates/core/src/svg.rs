//! Small hand-written SVG plots: line charts and square heatmaps.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;

pub struct Series<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub color: &'a str,
    pub label: &'a str,
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in vals.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-300 {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.x.iter().copied()));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.y.iter().copied()));
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    );
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, W / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    for (v, anchor, x, y) in [
        (x0, "start", MARGIN, H - MARGIN + 16.0),
        (x1, "end", W - MARGIN, H - MARGIN + 16.0),
        (y0, "end", MARGIN - 4.0, H - MARGIN),
        (y1, "end", MARGIN - 4.0, MARGIN + 10.0),
    ] {
        let _ = writeln!(out, r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-size="10">{v:.4}</text>"#);
    }
    for (k, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .x
            .iter()
            .zip(s.y)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{}" stroke-width="1.2" points="{}"/>"#, s.color, pts.join(" "));
        let ly = MARGIN + 14.0 + 14.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly}" text-anchor="end" font-size="11" fill="{}">{}</text>"#,
            W - MARGIN - 6.0,
            s.color,
            escape(s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn color(t: f64) -> String {
    // dark blue to yellow
    let t = t.clamp(0.0, 1.0);
    let r = (20.0 + 235.0 * t).round() as u8;
    let g = (30.0 + 200.0 * t).round() as u8;
    let b = (110.0 - 80.0 * t).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// `values[i * n + j]` is drawn at column i, row j (row 0 at the bottom).
pub fn heatmap(title: &str, x_label: &str, y_label: &str, n: usize, values: &[f64]) -> String {
    let size = H - 2.0 * MARGIN;
    let cell = size / n.max(1) as f64;
    let (lo, hi) = bounds(values.iter().copied());
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(out, r#"<g shape-rendering="crispEdges">"#);
    for i in 0..n {
        for j in 0..n {
            let v = values.get(i * n + j).copied().unwrap_or(f64::NAN);
            let fill = if v.is_finite() { color((v - lo) / (hi - lo)) } else { "#808080".to_string() };
            let x = MARGIN + i as f64 * cell;
            let y = H - MARGIN - (j + 1) as f64 * cell;
            let _ = writeln!(out, r#"<rect x="{x:.3}" y="{y:.3}" width="{:.3}" height="{:.3}" fill="{fill}"/>"#, cell + 0.01, cell + 0.01);
        }
    }
    out.push_str("</g>\n");
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, MARGIN + size / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    let bar_x = MARGIN + size + 30.0;
    for k in 0..50 {
        let t = k as f64 / 49.0;
        let y = H - MARGIN - (k + 1) as f64 * size / 50.0;
        let _ = writeln!(out, r#"<rect x="{bar_x}" y="{y:.3}" width="16" height="{:.3}" fill="{}"/>"#, size / 50.0 + 0.01, color(t));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="10">{hi:.3}</text>"#, bar_x + 22.0, MARGIN + 10.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="10">{lo:.3}</text>"#, bar_x + 22.0, H - MARGIN);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_has_one_polyline_per_series() {
        let x = [0.0, 1.0, 2.0];
        let y = [1.0, f64::NAN, 3.0];
        let svg = line_plot("a<b", "x", "y", &[Series { x: &x, y: &y, color: "black", label: "data" }, Series { x: &x, y: &x, color: "red", label: "fit" }]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn heatmap_cell_count_and_flat_data() {
        let svg = heatmap("t", "h", "q", 3, &[2.0; 9]);
        assert_eq!(svg.matches("<rect").count(), 1 + 9 + 50);
        assert!(!svg.contains("NaN"));
    }
}
