//! Minimal SVG figures: bar charts, histograms with a box plot, heatmaps and
//! step curves.

use std::fmt::Write;

use super::stats;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 60.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open(title: &str, w: f64, h: f64) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = write!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = write!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, esc(title));
    s
}

fn fmt(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

/// Horizontal bar chart, one bar per label.
pub fn bar_chart(title: &str, labels: &[String], values: &[f64]) -> String {
    let n = labels.len().max(1) as f64;
    let row_h = 22.0;
    let h = (PAD + n * row_h + 30.0).max(160.0);
    let left = 160.0;
    let plot_w = W - left - 40.0;
    let max = values.iter().fold(0.0_f64, |a, b| a.max(b.abs())).max(1e-12);
    let mut s = open(title, W, h);
    let x0 = left + if values.iter().any(|v| *v < 0.0) { plot_w / 2.0 } else { 0.0 };
    let scale = if values.iter().any(|v| *v < 0.0) { plot_w / 2.0 } else { plot_w } / max;
    for (i, (l, v)) in labels.iter().zip(values).enumerate() {
        let y = 40.0 + i as f64 * row_h;
        let (x, w) = if *v >= 0.0 { (x0, v * scale) } else { (x0 + v * scale, -v * scale) };
        let _ = write!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 6.0, y + 14.0, esc(l));
        let _ = write!(s, r##"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{}" fill="#4c78a8"/>"##, row_h - 6.0);
        let _ = write!(s, r#"<text x="{:.2}" y="{}">{}</text>"#, x + w + 4.0, y + 14.0, fmt(*v));
    }
    let _ = write!(s, r##"<line x1="{x0}" y1="36" x2="{x0}" y2="{}" stroke="#333"/>"##, 40.0 + n * row_h);
    s.push_str("</svg>\n");
    s
}

/// Histogram with a box plot strip above it.
pub fn histogram_box(title: &str, values: &[f64], bins: usize) -> String {
    let mut s = open(title, W, H);
    if values.is_empty() {
        s.push_str(r#"<text x="320" y="200" text-anchor="middle">no data</text></svg>"#);
        return s;
    }
    let sorted = stats::sorted(values);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let bins = bins.max(1);
    let mut counts = vec![0usize; bins];
    for v in values {
        let b = (((v - lo) / span) * bins as f64).floor() as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let max = *counts.iter().max().unwrap_or(&1) as f64;
    let plot_w = W - 2.0 * PAD;
    let top = 110.0;
    let plot_h = H - top - PAD;
    let bw = plot_w / bins as f64;
    let x_of = |v: f64| PAD + (v - lo) / span * plot_w;
    for (i, c) in counts.iter().enumerate() {
        let bh = *c as f64 / max * plot_h;
        let _ = write!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{bh:.2}" fill="#72b7b2" stroke="white"/>"##,
            PAD + i as f64 * bw,
            top + plot_h - bh,
            bw
        );
    }
    if let Some(q) = stats::quartiles(values) {
        let y = 60.0;
        let _ = write!(
            s,
            r##"<line x1="{:.2}" y1="{y}" x2="{:.2}" y2="{y}" stroke="#333"/><rect x="{:.2}" y="{}" width="{:.2}" height="24" fill="#eeeeee" stroke="#333"/><line x1="{:.2}" y1="{}" x2="{:.2}" y2="{}" stroke="#d62728" stroke-width="2"/>"##,
            x_of(lo),
            x_of(hi),
            x_of(q.q1),
            y - 12.0,
            (x_of(q.q3) - x_of(q.q1)).max(1.0),
            x_of(q.median),
            y - 12.0,
            x_of(q.median),
            y + 12.0
        );
    }
    let _ = write!(s, r#"<text x="{PAD}" y="{}">{}</text>"#, H - PAD + 16.0, fmt(lo));
    let _ = write!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, W - PAD, H - PAD + 16.0, fmt(hi));
    s.push_str("</svg>\n");
    s
}

/// Square heatmap for a correlation matrix with values in [-1, 1].
pub fn heatmap(title: &str, labels: &[String], matrix: &[Vec<Option<f64>>]) -> String {
    let n = labels.len().max(1);
    let cell = (480.0 / n as f64).clamp(8.0, 40.0);
    let left = 140.0;
    let top = 50.0;
    let w = left + cell * n as f64 + 20.0;
    let h = top + cell * n as f64 + 120.0;
    let mut s = open(title, w.max(300.0), h);
    for (i, row) in matrix.iter().enumerate() {
        let _ = write!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, left - 4.0, top + (i as f64 + 0.7) * cell, esc(&labels[i]));
        for (j, v) in row.iter().enumerate() {
            let color = match v {
                Some(r) => {
                    let r = r.clamp(-1.0, 1.0);
                    let (red, blue) = if r >= 0.0 { (255.0, 255.0 * (1.0 - r)) } else { (255.0 * (1.0 + r), 255.0) };
                    let green = 255.0 * (1.0 - r.abs());
                    format!("rgb({},{},{})", red as u8, green as u8, blue as u8)
                }
                None => "#cccccc".to_string(),
            };
            let _ = write!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="{color}"/>"#,
                left + j as f64 * cell,
                top + i as f64 * cell
            );
        }
    }
    for (j, l) in labels.iter().enumerate() {
        let x = left + (j as f64 + 0.6) * cell;
        let y = top + n as f64 * cell + 6.0;
        let _ = write!(s, r#"<text x="{x:.2}" y="{y:.2}" transform="rotate(60 {x:.2} {y:.2})">{}</text>"#, esc(l));
    }
    s.push_str("</svg>\n");
    s
}

/// Step curve through (x, y) points, e.g. a survival curve.
pub fn step_curve(title: &str, points: &[(f64, f64)]) -> String {
    let mut s = open(title, W, H);
    if points.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let xmax = points.iter().map(|p| p.0).fold(0.0_f64, f64::max).max(1e-12);
    let plot_w = W - 2.0 * PAD;
    let plot_h = H - 2.0 * PAD;
    let xs = |x: f64| PAD + x / xmax * plot_w;
    let ys = |y: f64| PAD + (1.0 - y) * plot_h;
    let mut d = format!("M {:.2} {:.2}", xs(0.0), ys(1.0));
    let mut last_y = 1.0;
    for (x, y) in points {
        let _ = write!(d, " L {:.2} {:.2} L {:.2} {:.2}", xs(*x), ys(last_y), xs(*x), ys(*y));
        last_y = *y;
    }
    let _ = write!(s, r##"<path d="{d}" fill="none" stroke="#4c78a8" stroke-width="2"/>"##);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figures_are_well_formed() {
        let b = bar_chart("imp <x>", &["a".into(), "b".into()], &[1.0, -0.5]);
        assert!(b.starts_with("<svg") && b.trim_end().ends_with("</svg>"));
        assert!(b.contains("imp &lt;x&gt;"));
        let h = histogram_box("h", &[1.0, 2.0, 2.0, 3.0], 4);
        assert_eq!(h.matches("<rect").count(), 1 + 4 + 1);
        let m = heatmap("c", &["x".into(), "y".into()], &[vec![Some(1.0), None], vec![None, Some(1.0)]]);
        assert!(m.contains("#cccccc"));
    }
}
