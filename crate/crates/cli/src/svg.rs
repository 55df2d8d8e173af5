//! Deterministic standalone SVG scatter plots.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use dart_core::Error;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 540.0;
const PLOT_LEFT: f64 = 60.0;
const PLOT_TOP: f64 = 30.0;
const PLOT_RIGHT: f64 = 560.0;
const PLOT_BOTTOM: f64 = 490.0;

/// Categorical palette; label `k` in sorted order takes entry `k % len`.
pub const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#393b79", "#ad494a",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Data range widened by 5% on each side; a flat range gets unit width.
fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mid_pad = if hi > lo { 0.0 } else { 0.5 };
    (lo - mid_pad - 0.05 * span, hi + mid_pad + 0.05 * span)
}

pub fn render_scatter_svg(points: &[[f64; 2]], labels: &[String], title: &str) -> Result<String, Error> {
    if points.is_empty() {
        return Err(Error::InsufficientData("a scatter plot needs at least one point".into()));
    }
    if points.len() != labels.len() {
        return Err(Error::Dimension(format!("{} points, {} labels", points.len(), labels.len())));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Validation("scatter coordinates must be finite".into()));
    }
    let classes: Vec<&str> = labels.iter().map(String::as_str).collect::<BTreeSet<_>>().into_iter().collect();
    let color = |label: &str| PALETTE[classes.binary_search(&label).expect("label listed") % PALETTE.len()];

    let (x0, x1) = padded_range(points.iter().map(|p| p[0]));
    let (y0, y1) = padded_range(points.iter().map(|p| p[1]));
    let sx = |x: f64| PLOT_LEFT + (x - x0) / (x1 - x0) * (PLOT_RIGHT - PLOT_LEFT);
    let sy = |y: f64| PLOT_BOTTOM - (y - y0) / (y1 - y0) * (PLOT_BOTTOM - PLOT_TOP);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{:.1}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        (PLOT_LEFT + PLOT_RIGHT) / 2.0,
        escape(title)
    )
    .unwrap();
    writeln!(s, r#"<g class="axes" stroke="black" stroke-width="1">"#).unwrap();
    writeln!(s, r#"<line x1="{PLOT_LEFT}" y1="{PLOT_BOTTOM}" x2="{PLOT_RIGHT}" y2="{PLOT_BOTTOM}"/>"#).unwrap();
    writeln!(s, r#"<line x1="{PLOT_LEFT}" y1="{PLOT_TOP}" x2="{PLOT_LEFT}" y2="{PLOT_BOTTOM}"/>"#).unwrap();
    writeln!(s, "</g>").unwrap();
    writeln!(s, r#"<g class="ticks" font-family="sans-serif" font-size="10">"#).unwrap();
    for (x, anchor) in [(x0, "start"), (x1, "end")] {
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="{anchor}">{x:.3}</text>"#,
            sx(x),
            PLOT_BOTTOM + 14.0
        )
        .unwrap();
    }
    for y in [y0, y1] {
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{y:.3}</text>"#,
            PLOT_LEFT - 4.0,
            sy(y) + 3.0
        )
        .unwrap();
    }
    writeln!(s, "</g>").unwrap();
    writeln!(s, r#"<g class="points">"#).unwrap();
    for (p, l) in points.iter().zip(labels) {
        writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{}" fill-opacity="0.8"/>"#,
            sx(p[0]),
            sy(p[1]),
            color(l)
        )
        .unwrap();
    }
    writeln!(s, "</g>").unwrap();
    writeln!(s, r#"<g class="legend" font-family="sans-serif" font-size="11">"#).unwrap();
    for (k, label) in classes.iter().enumerate() {
        let y = PLOT_TOP + 16.0 * k as f64;
        writeln!(
            s,
            r#"<rect x="{:.1}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            PLOT_RIGHT + 20.0,
            y,
            color(label),
            PLOT_RIGHT + 36.0,
            y + 9.0,
            escape(label)
        )
        .unwrap();
    }
    writeln!(s, "</g>").unwrap();
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn write_scatter_svg(points: &[[f64; 2]], labels: &[String], title: &str, out: &Path) -> Result<(), Error> {
    let svg = render_scatter_svg(points, labels, title)?;
    std::fs::write(out, svg)?;
    Ok(())
}
