//! CDF plot of each estimator's squared errors on `[0, z_max]`, as an SVG
//! and as a `cdf_points.csv` of step vertices.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evaluator::{EmpiricalCdf, ResultSet};

pub const POINTS_FILE: &str = "cdf_points.csv";

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 52.0;
const COLORS: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// `(z, F(z))` vertices of the step function restricted to `[0, z_max]`:
/// the value at 0, every jump inside the window, and the value at `z_max`.
pub fn cdf_points(z: &[f64], z_max: f64) -> Result<Vec<(f64, f64)>> {
    if !(z_max > 0.0) {
        return Err(Error::NonPositiveZmax(z_max));
    }
    let cdf = EmpiricalCdf::new(z)?;
    let mut pts = vec![(0.0, cdf.eval(0.0))];
    for (v, f) in cdf.steps() {
        if v > 0.0 && v < z_max {
            pts.push((v, f));
        }
    }
    pts.push((z_max, cdf.eval(z_max)));
    Ok(pts)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Writes the SVG to `path` and `cdf_points.csv` next to it. With
/// `exclude_flagged`, failed runs are left out of the curves.
pub fn render_cdf_plot(results: &ResultSet, z_max: f64, path: &Path, exclude_flagged: bool) -> Result<()> {
    if results.estimators.is_empty() {
        return Err(Error::EmptyInput);
    }
    let curves: Vec<(&str, Vec<(f64, f64)>)> = results
        .estimators
        .iter()
        .map(|e| {
            let z: Vec<f64> = e
                .records
                .iter()
                .filter(|r| !(exclude_flagged && r.flagged))
                .map(|r| r.squared_error)
                .collect();
            let pts = if z.is_empty() {
                vec![(0.0, 0.0), (z_max, 0.0)]
            } else {
                cdf_points(&z, z_max)?
            };
            Ok((e.estimator.as_str(), pts))
        })
        .collect::<Result<_>>()?;

    let mut csv = String::from("estimator,z,F\n");
    for (name, pts) in &curves {
        for (z, f) in pts {
            writeln!(csv, "{name},{z},{f}").expect("string write");
        }
    }
    let points_path = path.with_file_name(POINTS_FILE);
    std::fs::write(&points_path, csv).map_err(|e| Error::io(&points_path, e))?;

    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let x = |z: f64| LEFT + pw * (z / z_max).clamp(0.0, 1.0);
    let y = |f: f64| TOP + ph * (1.0 - f);
    let mut svg = String::new();
    let w = &mut svg;
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (gx, gy) = (x(t * z_max), y(t));
        writeln!(
            w,
            "<line x1=\"{LEFT}\" y1=\"{gy:.2}\" x2=\"{:.2}\" y2=\"{gy:.2}\" stroke=\"#ddd\"/>",
            LEFT + pw
        )
        .unwrap();
        writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{t:.2}</text>"#, LEFT - 6.0, gy + 4.0).unwrap();
        writeln!(
            w,
            r#"<text x="{gx:.2}" y="{:.2}" text-anchor="middle">{:.3e}</text>"#,
            TOP + ph + 18.0,
            t * z_max
        )
        .unwrap();
    }
    writeln!(
        w,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">squared error</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0
    )
    .unwrap();
    writeln!(
        w,
        r#"<text transform="translate(16 {:.2}) rotate(-90)" text-anchor="middle">cumulative probability</text>"#,
        TOP + ph / 2.0
    )
    .unwrap();
    for (k, (name, pts)) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut d = format!("M{:.2},{:.2}", x(pts[0].0), y(pts[0].1));
        for win in pts.windows(2) {
            let (z1, f1) = win[1];
            write!(d, " H{:.2} V{:.2}", x(z1), y(f1)).unwrap();
        }
        writeln!(w, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="2"/>"#).unwrap();
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 14.0;
        writeln!(
            w,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 22.0
        )
        .unwrap();
        writeln!(w, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 28.0, ly + 4.0, escape(name)).unwrap();
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
