//! Deterministic SVG output for route plots and boxplots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{BoxplotSummary, HarnessError, RouteLog};
use crate::env::Instance;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const MARGIN: f64 = 12.0;
const SIDE: f64 = 500.0;
const LEGEND_W: f64 = 170.0;

fn to_px(x: f64, y: f64) -> (f64, f64) {
    (MARGIN + SIDE * x, MARGIN + SIDE * (1.0 - y))
}

/// Clients as circles sized by demand, the depot as a square, one polyline
/// per vehicle and a legend with per-vehicle distance.
pub fn routes_svg(instance: &Instance, routes: &RouteLog) -> String {
    let w = 2.0 * MARGIN + SIDE + LEGEND_W;
    let h = 2.0 * MARGIN + SIDE;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{SIDE}" height="{SIDE}" fill="none" stroke="#cccccc"/>"##
    );

    for (v, route) in routes.vehicles.iter().enumerate() {
        if route.positions.len() < 2 {
            continue;
        }
        let color = PALETTE[v % PALETTE.len()];
        let points: Vec<String> = route
            .positions
            .iter()
            .map(|p| {
                let (x, y) = to_px(p.x, p.y);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2" stroke-opacity="0.85"/>"#,
            points.join(" ")
        );
    }

    for (i, (p, &d)) in instance.positions.iter().zip(&instance.demands).enumerate() {
        let (x, y) = to_px(p[0], p[1]);
        let r = 1.2 * f64::from(d);
        let _ = writeln!(
            s,
            r##"<circle cx="{x:.2}" cy="{y:.2}" r="{r:.2}" fill="#f5f5f5" stroke="#333333"><title>client {i} demand {d}</title></circle>"##
        );
    }
    let (dx, dy) = to_px(instance.depot[0], instance.depot[1]);
    let _ = writeln!(
        s,
        r##"<rect x="{:.2}" y="{:.2}" width="12" height="12" fill="#111111"><title>depot</title></rect>"##,
        dx - 6.0,
        dy - 6.0
    );

    let lx = 2.0 * MARGIN + SIDE;
    for (v, route) in routes.vehicles.iter().enumerate() {
        let color = PALETTE[v % PALETTE.len()];
        let y = MARGIN + 20.0 * v as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{y}" width="14" height="10" fill="{color}"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="monospace" font-size="12">vehicle {v}: {:.4}</text>"#,
            lx + 20.0,
            y + 10.0,
            route.length()
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn render_routes_svg(
    instance: &Instance,
    routes: &RouteLog,
    path: &Path,
) -> Result<(), HarnessError> {
    std::fs::write(path, routes_svg(instance, routes)).map_err(|e| HarnessError::io(path, e))
}

/// Horizontal-axis boxplots, one per label, on a shared vertical scale.
pub fn render_boxplot_svg(title: &str, summaries: &BTreeMap<String, BoxplotSummary>) -> String {
    let (w, h) = (120.0 + 110.0 * summaries.len() as f64, 360.0);
    let (top, bottom) = (40.0, 300.0);
    let all = summaries
        .values()
        .flat_map(|b| [b.min, b.max].into_iter().chain(b.outliers.iter().copied()));
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
        (a.min(x), b.max(x))
    });
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let py = |v: f64| bottom - (v - lo) / (hi - lo) * (bottom - top);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="10" y="22" font-family="monospace" font-size="14">{title}</text>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="10" y="{:.2}" font-family="monospace" font-size="11">{hi:.3}</text>"#,
        top + 4.0
    );
    let _ = writeln!(
        s,
        r#"<text x="10" y="{:.2}" font-family="monospace" font-size="11">{lo:.3}</text>"#,
        bottom + 4.0
    );
    for (i, (label, b)) in summaries.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let cx = 110.0 + 110.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{cx}" y1="{:.2}" x2="{cx}" y2="{:.2}" stroke="{color}"/>"#,
            py(b.min),
            py(b.max)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{:.2}" width="50" height="{:.2}" fill="white" stroke="{color}" stroke-width="2"/>"#,
            cx - 25.0,
            py(b.q3),
            (py(b.q1) - py(b.q3)).max(0.5)
        );
        for v in [b.min, b.median, b.max] {
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
                cx - 25.0,
                py(v),
                cx + 25.0,
                py(v)
            );
        }
        for &o in &b.outliers {
            let _ = writeln!(
                s,
                r#"<circle cx="{cx}" cy="{:.2}" r="3" fill="none" stroke="{color}"/>"#,
                py(o)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="monospace" font-size="12">{}</text>"#,
            cx - 15.0,
            bottom + 30.0,
            label.to_uppercase()
        );
    }
    s.push_str("</svg>\n");
    s
}
