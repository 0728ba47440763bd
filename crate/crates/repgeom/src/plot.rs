//! Static plot data: scatter CSV and a self-contained SVG scatter.

use std::fmt::Write as _;

use crate::GeometryReport;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `id,label,x,y` rows in report order.
pub fn scatter_csv(report: &GeometryReport) -> String {
    let mut out = String::from("id,label,x,y\n");
    for p in &report.points {
        let _ = writeln!(out, "{},{},{},{}", p.id, csv_field(&p.label), p.x, p.y);
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Scatter of the projected points colored by class, with a legend.
pub fn scatter_svg(report: &GeometryReport) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const PAD: f64 = 40.0;
    const LEGEND: f64 = 170.0;

    let mut classes: Vec<&str> = report.points.iter().map(|p| p.label.as_str()).collect();
    classes.sort_unstable();
    classes.dedup();
    let color = |label: &str| {
        let i = classes.binary_search(&label).unwrap_or(0);
        PALETTE[i % PALETTE.len()]
    };

    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in &report.points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let span = |a: f64, b: f64| {
        if (b - a).abs() > 0.0 && (b - a).is_finite() {
            b - a
        } else {
            1.0
        }
    };
    let (sx, sy) = (span(x0, x1), span(y0, y1));
    let px = |x: f64| PAD + (x - x0) / sx * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - y0) / sy * (H - 2.0 * PAD);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{H}\" viewBox=\"0 0 {} {H}\">",
        W + LEGEND,
        W + LEGEND
    );
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#cccccc\"/>",
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for p in &report.points {
        let _ = writeln!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\" fill-opacity=\"0.75\"><title>{} ({})</title></circle>",
            px(p.x),
            py(p.y),
            color(&p.label),
            p.id,
            escape(&p.label)
        );
    }
    for (i, c) in classes.iter().enumerate() {
        let y = PAD + 18.0 * i as f64;
        let _ = writeln!(
            out,
            "<rect x=\"{}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            W + 10.0,
            y,
            color(c),
            W + 26.0,
            y + 9.0,
            escape(c)
        );
    }
    out.push_str("</svg>\n");
    out
}
