//! Heatmap output: SVG pictures and the CSV sidecar that carries the numbers.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::Heatmap2D;

pub const HEATMAP_HEADER: &str = "axis1_index,axis2_index,value,count";

const CELL_PX: usize = 14;
const MARGIN_PX: usize = 40;
const LEGEND_PX: usize = 60;

/// Shortest decimal form that parses back to the same `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:?}")
}

/// One row per heatmap cell in row-major order. Missing values are empty.
pub fn heatmap_csv(h: &Heatmap2D) -> String {
    let mut out = String::with_capacity(h.values.len() * 32);
    out.push_str(HEATMAP_HEADER);
    out.push('\n');
    for r in 0..h.rows {
        for c in 0..h.cols {
            let i = r * h.cols + c;
            let v = h.values[i].map(format_value).unwrap_or_default();
            let _ = writeln!(out, "{r},{c},{v},{}", h.counts[i]);
        }
    }
    out
}

/// Parsed heatmap CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapTable {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<Option<f64>>,
    pub counts: Vec<u64>,
}

impl HeatmapTable {
    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        self.values[r * self.cols + c]
    }
}

/// Reads a heatmap CSV back. Every (row, column) pair of the rectangle must
/// appear exactly once.
pub fn read_heatmap_csv(text: &str) -> Result<HeatmapTable> {
    let bad = |line: u64, message: String| Error::Parse {
        path: "<heatmap csv>".into(),
        line: line as usize,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| bad(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != HEATMAP_HEADER {
        return Err(bad(1, format!("expected header '{HEATMAP_HEADER}'")));
    }
    let mut entries = Vec::new();
    for rec in rdr.deserialize::<(usize, usize, Option<f64>, u64)>() {
        let rec = rec.map_err(|e| bad(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        entries.push(rec);
    }
    let rows = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
    let cols = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
    if entries.len() != rows * cols {
        return Err(bad(
            0,
            format!("{} entries do not fill a {rows}x{cols} table", entries.len()),
        ));
    }
    let mut values = vec![None; rows * cols];
    let mut counts = vec![0; rows * cols];
    let mut seen = vec![false; rows * cols];
    for (r, c, v, n) in entries {
        let i = r * cols + c;
        if std::mem::replace(&mut seen[i], true) {
            return Err(bad(0, format!("cell ({r}, {c}) listed twice")));
        }
        values[i] = v;
        counts[i] = n;
    }
    Ok(HeatmapTable {
        rows,
        cols,
        values,
        counts,
    })
}

// Sequential dark-blue to yellow ramp.
const STOPS: [(f64, [u8; 3]); 5] = [
    (0.00, [68, 1, 84]),
    (0.25, [59, 82, 139]),
    (0.50, [33, 145, 140]),
    (0.75, [94, 201, 98]),
    (1.00, [253, 231, 37]),
];

pub fn color_for(v: f64) -> String {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let hi = STOPS.iter().position(|s| s.0 >= v).unwrap_or(STOPS.len() - 1).max(1);
    let (t0, c0) = STOPS[hi - 1];
    let (t1, c1) = STOPS[hi];
    let t = (v - t0) / (t1 - t0);
    let mix = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * t).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(c0[0], c1[0]),
        mix(c0[1], c1[1]),
        mix(c0[2], c1[2])
    )
}

/// Renders a heatmap on a fixed [0, 1] scale. Missing cells are hatched
/// gray; the seed outline is drawn in red. Output is deterministic.
pub fn heatmap_svg(h: &Heatmap2D, title: &str) -> String {
    let (row_axis, col_axis) = h.axis_reduced.display_axes();
    let width = 2 * MARGIN_PX + h.cols * CELL_PX + LEGEND_PX;
    let height = 2 * MARGIN_PX + h.rows * CELL_PX;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    s.push_str(
        "<defs><pattern id=\"missing\" width=\"6\" height=\"6\" patternUnits=\"userSpaceOnUse\">\
         <rect width=\"6\" height=\"6\" fill=\"#bdbdbd\"/>\
         <path d=\"M0,6 L6,0\" stroke=\"#757575\" stroke-width=\"1\"/></pattern></defs>\n",
    );
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN_PX}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
        MARGIN_PX / 2,
        escape(title)
    );
    for r in 0..h.rows {
        for c in 0..h.cols {
            let fill = match h.get(r, c) {
                Some(v) => color_for(v),
                None => "url(#missing)".to_string(),
            };
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{CELL_PX}" height="{CELL_PX}" fill="{fill}"/>"#,
                MARGIN_PX + c * CELL_PX,
                MARGIN_PX + r * CELL_PX
            );
        }
    }
    for o in &h.outline {
        let _ = writeln!(
            s,
            r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#e41a1c" stroke-width="2"/>"##,
            MARGIN_PX + o.col0 * CELL_PX,
            MARGIN_PX + o.row0 * CELL_PX,
            (o.col1 + 1 - o.col0) * CELL_PX,
            (o.row1 + 1 - o.row0) * CELL_PX
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{col_axis}</text>"#,
        MARGIN_PX + h.cols * CELL_PX / 2,
        height - MARGIN_PX / 3
    );
    let _ = writeln!(
        s,
        r#"<text x="{x}" y="{y}" font-family="sans-serif" font-size="11" text-anchor="middle" transform="rotate(-90 {x} {y})">{row_axis}</text>"#,
        x = MARGIN_PX / 2,
        y = MARGIN_PX + h.rows * CELL_PX / 2
    );

    let lx = MARGIN_PX + h.cols * CELL_PX + 15;
    let steps = 10;
    let lh = (h.rows * CELL_PX).max(steps * 4) / steps;
    for i in 0..steps {
        let v = 1.0 - (i as f64 + 0.5) / steps as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{}" width="12" height="{lh}" fill="{}"/>"#,
            MARGIN_PX + i * lh,
            color_for(v)
        );
    }
    for (label, y) in [("1", MARGIN_PX + 4), ("0", MARGIN_PX + steps * lh)] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" font-family="sans-serif" font-size="10">{label}</text>"#,
            lx + 16
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
