//! Standalone SVG line plots of the `(x, y)` plane, viewBox `[-1.5, 1.5]²`.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use stretchlab::Vec3;

const PALETTE: [&str; 8] = ["#1b4f72", "#c0392b", "#1e8449", "#7d3c98", "#b9770e", "#117a65", "#6e2c00", "#2e4053"];

#[derive(Debug, Clone, PartialEq)]
pub struct Style {
    pub title: String,
    pub stroke_width: f64,
    /// Optional caption per polyline, drawn as a legend entry.
    pub labels: Vec<String>,
}

impl Style {
    pub fn titled(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            stroke_width: 0.006,
            labels: Vec::new(),
        }
    }
}

fn coord(v: f64) -> String {
    // fixed precision keeps the bytes stable; -0 prints as 0
    let s = format!("{v:.5}");
    if s == "-0.00000" {
        "0.00000".into()
    } else {
        s
    }
}

/// Render polylines; `y` points up.
pub fn render_svg(polylines: &[Vec<Vec3>], style: &Style) -> String {
    let mut out = String::new();
    out.push_str(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"-1.5 -1.5 3 3\" width=\"600\" height=\"600\">\n",
    );
    let _ = writeln!(out, "<title>{}</title>", escape(&style.title));
    out.push_str("<rect x=\"-1.5\" y=\"-1.5\" width=\"3\" height=\"3\" fill=\"white\"/>\n");
    out.push_str("<g stroke=\"#bbbbbb\" stroke-width=\"0.003\">\n");
    out.push_str("<line x1=\"-1.5\" y1=\"0\" x2=\"1.5\" y2=\"0\"/>\n<line x1=\"0\" y1=\"-1.5\" x2=\"0\" y2=\"1.5\"/>\n");
    out.push_str("</g>\n");
    let _ = writeln!(
        out,
        "<g fill=\"none\" stroke-width=\"{}\" stroke-linejoin=\"round\">",
        coord(style.stroke_width)
    );
    for (i, line) in polylines.iter().enumerate() {
        let points: Vec<String> = line.iter().map(|p| format!("{},{}", coord(p.x), coord(-p.y))).collect();
        let _ = writeln!(
            out,
            "<polyline stroke=\"{}\" points=\"{}\"/>",
            PALETTE[i % PALETTE.len()],
            points.join(" ")
        );
    }
    out.push_str("</g>\n");
    if !style.labels.is_empty() {
        out.push_str("<g font-family=\"sans-serif\" font-size=\"0.08\">\n");
        for (i, label) in style.labels.iter().enumerate() {
            let y = -1.38 + 0.1 * i as f64;
            let _ = writeln!(
                out,
                "<text x=\"-1.42\" y=\"{}\" fill=\"{}\">{}</text>",
                coord(y),
                PALETTE[i % PALETTE.len()],
                escape(label)
            );
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}

pub fn emit_svg(path: &Path, polylines: &[Vec<Vec3>], style: &Style) -> io::Result<()> {
    std::fs::write(path, render_svg(polylines, style))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
