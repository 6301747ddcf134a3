//! Standalone SVG bar chart of a weight histogram.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{weight_histogram, Histogram};
use crate::model::Model;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 40.0;

/// Bars are scaled to the tallest bin; every number is printed with fixed
/// precision so the output is byte-stable.
pub fn histogram_svg(h: &Histogram) -> String {
    let bins = h.counts.len();
    let peak = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let bar_w = plot_w / bins as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{HEIGHT:.0}" viewBox="0 0 {WIDTH:.0} {HEIGHT:.0}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, &c) in h.counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let bh = plot_h * c as f64 / peak;
        let _ = writeln!(
            s,
            r##"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="#4477aa"><title>[{}, {}): {}</title></rect>"##,
            MARGIN + i as f64 * bar_w,
            HEIGHT - MARGIN - bh,
            bar_w,
            bh,
            h.edges[i],
            h.edges[i + 1],
            c
        );
    }
    let base = HEIGHT - MARGIN;
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN:.0}" y1="{base:.0}" x2="{:.0}" y2="{base:.0}" stroke="black"/>"#,
        WIDTH - MARGIN
    );
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN:.0}" y="{:.0}" font-size="12">{}</text>"#,
        base + 16.0,
        h.edges[0]
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.0}" y="{:.0}" font-size="12" text-anchor="end">{}</text>"#,
        WIDTH - MARGIN,
        base + 16.0,
        h.edges[bins]
    );
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN:.0}" y="{:.0}" font-size="12">peak {} | below range {} | above range {}</text>"#,
        MARGIN - 12.0,
        peak as usize,
        h.underflow,
        h.overflow
    );
    s.push_str("</svg>\n");
    s
}

pub fn emit_histogram_svg(model: &Model, path: &Path, edges: &[f64]) -> Result<()> {
    let h = weight_histogram(model, edges)?;
    fs::write(path, histogram_svg(&h)).map_err(|e| Error::io(path, e))
}
