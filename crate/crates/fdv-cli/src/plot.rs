//! Standalone SVG scatter plots of 2-d feature vectors.
//!
//! Hand-rolled so the output is dependency-free, diffable, and byte-stable:
//! the same points always yield the same file.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 480.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 610.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 430.0;

const FILLS: [&str; 3] = ["#2166ac", "#b2182b", "#1b7837"];

fn esc(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Marker for group `gi` centered at pixel (x, y): circle, square, or
/// triangle, so classes stay distinguishable without color.
fn marker(s: &mut String, gi: usize, x: f64, y: f64) {
    let fill = FILLS[gi % FILLS.len()];
    match gi % 3 {
        0 => {
            let _ = writeln!(
                s,
                r##"  <circle cx="{x:.2}" cy="{y:.2}" r="4" fill="{fill}" fill-opacity="0.75"/>"##
            );
        }
        1 => {
            let _ = writeln!(
                s,
                r##"  <rect x="{:.2}" y="{:.2}" width="7" height="7" fill="{fill}" fill-opacity="0.75"/>"##,
                x - 3.5,
                y - 3.5
            );
        }
        _ => {
            let _ = writeln!(
                s,
                r##"  <path d="M {x:.2} {:.2} L {:.2} {:.2} L {:.2} {:.2} Z" fill="{fill}" fill-opacity="0.75"/>"##,
                y - 4.5,
                x - 4.0,
                y + 3.5,
                x + 4.0,
                y + 3.5
            );
        }
    }
}

/// Render labeled point groups as a self-contained SVG document. Every
/// group gets a legend entry (with its point count) even when empty.
pub fn scatter_svg(title: &str, groups: &[(&str, &Vec<Vec<f64>>)]) -> String {
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for (_, pts) in groups {
        for p in pts.iter().filter(|p| p.len() == 2) {
            xmin = xmin.min(p[0]);
            xmax = xmax.max(p[0]);
            ymin = ymin.min(p[1]);
            ymax = ymax.max(p[1]);
        }
    }
    if !xmin.is_finite() {
        (xmin, xmax, ymin, ymax) = (-1.0, 1.0, -1.0, 1.0);
    }
    let xpad = if xmax > xmin { 0.05 * (xmax - xmin) } else { 1.0 };
    let ypad = if ymax > ymin { 0.05 * (ymax - ymin) } else { 1.0 };
    let (x0, x1) = (xmin - xpad, xmax + xpad);
    let (y0, y1) = (ymin - ypad, ymax + ypad);
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (RIGHT - LEFT);
    let py = |y: f64| BOTTOM - (y - y0) / (y1 - y0) * (BOTTOM - TOP);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"##
    );
    let _ = writeln!(s, r##"  <rect width="{W}" height="{H}" fill="#ffffff"/>"##);
    let _ = writeln!(
        s,
        r##"  <text x="{:.0}" y="28" text-anchor="middle" font-family="sans-serif" font-size="15" fill="#111111">{}</text>"##,
        W / 2.0,
        esc(title)
    );
    let _ = writeln!(
        s,
        r##"  <rect x="{LEFT}" y="{TOP}" width="{:.0}" height="{:.0}" fill="none" stroke="#555555"/>"##,
        RIGHT - LEFT,
        BOTTOM - TOP
    );
    // axis extents
    let _ = writeln!(
        s,
        r##"  <text x="{LEFT}" y="{:.0}" font-family="sans-serif" font-size="11" fill="#333333">{:.3}</text>"##,
        BOTTOM + 18.0,
        x0
    );
    let _ = writeln!(
        s,
        r##"  <text x="{RIGHT}" y="{:.0}" text-anchor="end" font-family="sans-serif" font-size="11" fill="#333333">{:.3}</text>"##,
        BOTTOM + 18.0,
        x1
    );
    let _ = writeln!(
        s,
        r##"  <text x="{:.0}" y="{:.0}" text-anchor="end" font-family="sans-serif" font-size="11" fill="#333333">{:.3}</text>"##,
        LEFT - 8.0,
        BOTTOM,
        y0
    );
    let _ = writeln!(
        s,
        r##"  <text x="{:.0}" y="{:.0}" text-anchor="end" font-family="sans-serif" font-size="11" fill="#333333">{:.3}</text>"##,
        LEFT - 8.0,
        TOP + 10.0,
        y1
    );

    for (gi, (_, pts)) in groups.iter().enumerate() {
        for p in pts.iter().filter(|p| p.len() == 2) {
            marker(&mut s, gi, px(p[0]), py(p[1]));
        }
    }

    // legend (top-right, inside the frame)
    let lx = RIGHT - 150.0;
    for (gi, (label, pts)) in groups.iter().enumerate() {
        let ly = TOP + 20.0 + 22.0 * gi as f64;
        let _ = writeln!(
            s,
            r##"  <rect x="{:.2}" y="{:.2}" width="140" height="18" fill="#ffffff" fill-opacity="0.7"/>"##,
            lx - 12.0,
            ly - 12.0
        );
        marker(&mut s, gi, lx, ly);
        let _ = writeln!(
            s,
            r##"  <text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" fill="#111111">{} ({})</text>"##,
            lx + 12.0,
            ly + 4.0,
            esc(label),
            pts.len()
        );
    }
    s.push_str("</svg>\n");
    s
}
