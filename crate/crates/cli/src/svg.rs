// SPDX-License-Identifier: MIT OR Apache-2.0

//! Phase-diagram heatmap as a standalone SVG document.
//!
//! Columns are the swept M values (equally spaced, in sweep order), rows are
//! K with the smallest K at the bottom. A cell's gray level is its success
//! rate, white for 1. Two polylines are drawn on top: the theoretical
//! `K·ln(N/K)` curve (dashed) and the fitted `c·K·ln(N/K)` curve (solid red),
//! placed by linear interpolation between column centers.

use std::fmt::Write as _;

use sparselift::phase::{theoretical_min_m, BoundaryFit, PhaseGrid};

pub const CELL_W: f64 = 24.0;
pub const CELL_H: f64 = 24.0;
const LEFT: f64 = 56.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 56.0;
const RIGHT: f64 = 150.0;

/// Horizontal position of measurement count `m`, or `None` outside the swept range.
pub fn m_to_x(m_values: &[usize], m: f64) -> Option<f64> {
    let center = |i: usize| LEFT + (i as f64 + 0.5) * CELL_W;
    if !m.is_finite() || m_values.is_empty() {
        return None;
    }
    if m_values.len() == 1 {
        return (m == m_values[0] as f64).then(|| center(0));
    }
    for i in 0..m_values.len() - 1 {
        let (a, b) = (m_values[i] as f64, m_values[i + 1] as f64);
        if m >= a && m <= b {
            return Some(center(i) + (m - a) / (b - a) * CELL_W);
        }
    }
    None
}

/// Vertical center of row `ki`.
pub fn k_row_y(n_rows: usize, ki: usize) -> f64 {
    TOP + ((n_rows - 1 - ki) as f64 + 0.5) * CELL_H
}

fn gray(rate: f64) -> String {
    let v = (rate.clamp(0.0, 1.0) * 255.0).round() as u8;
    format!("#{v:02x}{v:02x}{v:02x}")
}

/// Vertices of a curve `M(K) = scale·K·ln(N/K)` over the grid rows, split
/// into runs wherever the curve leaves the swept M range.
fn curve(grid: &PhaseGrid, scale: f64) -> Vec<Vec<(f64, f64)>> {
    let rows = grid.k_values.len();
    let mut runs = vec![Vec::new()];
    for (ki, &k) in grid.k_values.iter().enumerate() {
        let x = theoretical_min_m(k, grid.n as f64).ok().and_then(|t| m_to_x(&grid.m_values, scale * t));
        match x {
            Some(x) => runs.last_mut().expect("nonempty").push((x, k_row_y(rows, ki))),
            None if runs.last().is_some_and(|r| !r.is_empty()) => runs.push(Vec::new()),
            None => {}
        }
    }
    runs.retain(|r| !r.is_empty());
    runs
}

fn polyline(out: &mut String, pts: &[(f64, f64)], style: &str) {
    if pts.len() == 1 {
        let (x, y) = pts[0];
        let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" {style}/>"#);
        return;
    }
    let joined: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(out, r#"<polyline points="{}" fill="none" {style}/>"#, joined.join(" "));
}

/// The heatmap as SVG text. Output depends only on the grid and fit.
pub fn render_heatmap(grid: &PhaseGrid, fit: &BoundaryFit) -> String {
    let (cols, rows) = (grid.m_values.len(), grid.k_values.len());
    let width = LEFT + cols as f64 * CELL_W + RIGHT;
    let height = TOP + rows as f64 * CELL_H + BOTTOM;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{width:.0}" height="{height:.0}" fill="#f4f4f4"/>"##);
    let _ = writeln!(s, r#"<g id="cells">"#);
    for ki in 0..rows {
        for mi in 0..cols {
            let x = LEFT + mi as f64 * CELL_W;
            let y = TOP + (rows - 1 - ki) as f64 * CELL_H;
            let rate = grid.rate(ki, mi);
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{CELL_W:.2}" height="{CELL_H:.2}" fill="{}" data-k="{}" data-m="{}" data-rate="{rate}"/>"#,
                gray(rate),
                grid.k_values[ki],
                grid.m_values[mi]
            );
        }
    }
    let _ = writeln!(s, "</g>");

    let axis_y = TOP + rows as f64 * CELL_H;
    for (mi, m) in grid.m_values.iter().enumerate() {
        let x = LEFT + (mi as f64 + 0.5) * CELL_W;
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{m}</text>"#, axis_y + 14.0);
    }
    for (ki, k) in grid.k_values.iter().enumerate() {
        let y = k_row_y(rows, ki) + 3.5;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{y:.2}" text-anchor="end">{k}</text>"#, LEFT - 6.0);
    }
    let mid_x = LEFT + cols as f64 * CELL_W / 2.0;
    let _ = writeln!(s, r#"<text id="x-label" x="{mid_x:.2}" y="{:.2}" text-anchor="middle" font-size="12">M</text>"#, axis_y + 34.0);
    let mid_y = TOP + rows as f64 * CELL_H / 2.0;
    let _ = writeln!(s, r#"<text id="y-label" x="16" y="{mid_y:.2}" text-anchor="middle" font-size="12">K</text>"#);

    let _ = writeln!(s, r#"<g id="theory">"#);
    for run in curve(grid, 1.0) {
        polyline(&mut s, &run, r##"stroke="#1f5fbf" stroke-width="2" stroke-dasharray="5,3""##);
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g id="fitted">"#);
    if let Some(c) = fit.c {
        for run in curve(grid, c) {
            polyline(&mut s, &run, r##"stroke="#d62728" stroke-width="2""##);
        }
    }
    let _ = writeln!(s, "</g>");

    let lx = LEFT + cols as f64 * CELL_W + 12.0;
    let _ = writeln!(
        s,
        r##"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#1f5fbf" stroke-width="2" stroke-dasharray="5,3"/>"##,
        TOP + 6.0,
        lx + 20.0,
        TOP + 6.0
    );
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">K ln(N/K)</text>"#, lx + 26.0, TOP + 9.5);
    let fitted_label = match fit.c {
        Some(c) => format!("{c:.3} K ln(N/K)"),
        None => "no fit".to_string(),
    };
    let _ = writeln!(
        s,
        r##"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#d62728" stroke-width="2"/>"##,
        TOP + 22.0,
        lx + 20.0,
        TOP + 22.0
    );
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{fitted_label}</text>"#, lx + 26.0, TOP + 25.5);
    s.push_str("</svg>\n");
    s
}
