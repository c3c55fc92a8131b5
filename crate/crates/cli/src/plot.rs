//! Dependency-free scatter SVG: one square panel per input, axes through the
//! origin and a fixed `[-8, 8]^2` window.

use std::fmt::Write as _;
use std::io::Read;

use anyhow::{bail, Context, Result};

pub const RANGE: f64 = 8.0;
const PANEL: f64 = 320.0;
const PAD: f64 = 20.0;
const TITLE: f64 = 24.0;
const RADIUS: f64 = 1.5;

/// Named point cloud drawn in one panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub points: Vec<[f64; 2]>,
}

/// Reads `x` and `y` columns from a CSV with a header row. Errors name the
/// offending line.
pub fn read_points<R: Read>(reader: R) -> Result<Vec<[f64; 2]>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().context("line 1: unreadable header")?.clone();
    let column = |name: &str| header.iter().position(|h| h == name);
    let (Some(xi), Some(yi)) = (column("x"), column("y")) else {
        bail!("line 1: header must contain x and y columns, found {:?}", header.iter().collect::<Vec<_>>());
    };
    let mut points = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            anyhow::anyhow!("line {line}: {e}")
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| -> Result<f64> {
            let raw = record.get(i).unwrap_or("");
            raw.parse().with_context(|| format!("line {line}: column {name}: cannot parse {raw:?} as a number"))
        };
        points.push([field(xi, "x")?, field(yi, "y")?]);
    }
    Ok(points)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Panels laid out left to right in input order. Points outside the window
/// are omitted.
pub fn render(panels: &[Panel]) -> String {
    let cell = PANEL + 2.0 * PAD;
    let width = cell * panels.len().max(1) as f64;
    let height = cell + TITLE;
    let scale = PANEL / (2.0 * RANGE);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    for (i, panel) in panels.iter().enumerate() {
        let left = i as f64 * cell + PAD;
        let top = TITLE + PAD;
        let cx = left + PANEL / 2.0;
        let cy = top + PANEL / 2.0;
        let _ = writeln!(svg, r#"<g>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{cx}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
            TITLE,
            escape(&panel.title)
        );
        let _ = writeln!(
            svg,
            r#"<rect x="{left}" y="{top}" width="{PANEL}" height="{PANEL}" fill="none" stroke="black" stroke-width="1"/>"#
        );
        let _ = writeln!(svg, r#"<line x1="{left}" y1="{cy}" x2="{}" y2="{cy}" stroke="gray" stroke-width="0.5"/>"#, left + PANEL);
        let _ = writeln!(svg, r#"<line x1="{cx}" y1="{top}" x2="{cx}" y2="{}" stroke="gray" stroke-width="0.5"/>"#, top + PANEL);
        for &[x, y] in &panel.points {
            if !(x.abs() <= RANGE && y.abs() <= RANGE) {
                continue;
            }
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="{RADIUS}" fill="steelblue" fill-opacity="0.5"/>"#,
                cx + x * scale,
                cy - y * scale
            );
        }
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    svg
}
