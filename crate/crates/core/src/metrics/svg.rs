//! Minimal SVG 1.1 figures.

use std::fmt::Write;

use super::{CoverageTable, LinFitSummary, ScatterPoint};
use crate::physics::PARAM_NAMES;

const PANEL: f64 = 220.0;
const MARGIN: f64 = 40.0;

struct Frame {
    x0: f64,
    y0: f64,
    lo: f64,
    hi: f64,
}

impl Frame {
    fn px(&self, v: f64) -> f64 {
        self.x0 + (v - self.lo) / (self.hi - self.lo) * PANEL
    }

    fn py(&self, v: f64) -> f64 {
        self.y0 + PANEL - (v - self.lo) / (self.hi - self.lo) * PANEL
    }

    fn axes(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (x0, y0) = (self.x0, self.y0);
        let _ = writeln!(
            out,
            r#"<rect x="{x0}" y="{y0}" width="{PANEL}" height="{PANEL}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{title}</text>"#,
            x0 + PANEL / 2.0,
            y0 - 8.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="10">{xlabel}</text>"#,
            x0 + PANEL / 2.0,
            y0 + PANEL + 28.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="10" transform="rotate(-90 {} {})">{ylabel}</text>"#,
            x0 - 24.0,
            y0 + PANEL / 2.0,
            x0 - 24.0,
            y0 + PANEL / 2.0
        );
        for t in [self.lo, 0.5 * (self.lo + self.hi), self.hi] {
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{}" text-anchor="middle" font-size="9">{t}</text>"#,
                self.px(t),
                y0 + PANEL + 12.0
            );
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{:.2}" text-anchor="end" font-size="9">{t}</text>"#,
                x0 - 4.0,
                self.py(t) + 3.0
            );
        }
    }

    fn line(&self, out: &mut String, a: (f64, f64), b: (f64, f64), style: &str) {
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" {style}/>"#,
            self.px(a.0),
            self.py(a.1),
            self.px(b.0),
            self.py(b.1)
        );
    }
}

fn document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"12\">\n{body}</svg>\n"
    )
}

/// One panel per parameter: predicted against target in unit coordinates,
/// identity line dashed, mean fitted line solid, points shaded by count rate.
pub fn scatter_svg(points: &[ScatterPoint], fits: &[LinFitSummary]) -> String {
    let (lo, hi) = (-1.2, 1.2);
    let rates: Vec<f64> = points
        .iter()
        .map(|p| p.count_rate.max(1e-300).log10())
        .collect();
    let rmin = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let rmax = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut body = String::new();
    for (j, name) in PARAM_NAMES.iter().enumerate() {
        let fr = Frame {
            x0: MARGIN + j as f64 * (PANEL + MARGIN),
            y0: MARGIN,
            lo,
            hi,
        };
        fr.axes(&mut body, name, "target", "predicted");
        fr.line(
            &mut body,
            (lo, lo),
            (hi, hi),
            r#"stroke="gray" stroke-dasharray="4 3""#,
        );
        for (p, r) in points.iter().zip(&rates).filter(|(p, _)| p.param == j) {
            let t = if rmax > rmin {
                (r - rmin) / (rmax - rmin)
            } else {
                0.5
            };
            let g = (200.0 * (1.0 - t)).round() as u8;
            let _ = writeln!(
                body,
                r#"<circle cx="{:.2}" cy="{:.2}" r="1.2" fill="rgb({g},{g},{g})"/>"#,
                fr.px(p.target.clamp(lo, hi)),
                fr.py(p.predicted.clamp(lo, hi))
            );
        }
        if let Some(f) = fits.get(j) {
            let y = |x: f64| (f.slope_mean * x + f.intercept_mean).clamp(lo, hi);
            fr.line(
                &mut body,
                (-1.0, y(-1.0)),
                (1.0, y(1.0)),
                r#"stroke="black" stroke-width="1.5""#,
            );
        }
    }
    document(
        MARGIN + 5.0 * (PANEL + MARGIN),
        PANEL + 2.0 * MARGIN + 20.0,
        &body,
    )
}

/// Empirical coverage against credible level with the calibrated diagonal.
pub fn coverage_svg(table: &CoverageTable) -> String {
    let fr = Frame {
        x0: 60.0,
        y0: MARGIN,
        lo: 0.0,
        hi: 1.0,
    };
    let mut body = String::new();
    fr.axes(
        &mut body,
        "coverage",
        "credible level",
        "empirical coverage",
    );
    fr.line(
        &mut body,
        (0.0, 0.0),
        (1.0, 1.0),
        r#"stroke="gray" stroke-dasharray="4 3""#,
    );
    if !table.levels.is_empty() {
        let pts: Vec<String> = table
            .levels
            .iter()
            .zip(&table.coverage)
            .map(|(l, c)| format!("{:.2},{:.2}", fr.px(*l), fr.py(*c)))
            .collect();
        let _ = writeln!(
            body,
            r#"<polyline points="{}" fill="none" stroke="black"/>"#,
            pts.join(" ")
        );
        for (l, c) in table.levels.iter().zip(&table.coverage) {
            let _ = writeln!(
                body,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="black"/>"#,
                fr.px(*l),
                fr.py(*c)
            );
        }
    }
    document(PANEL + 100.0, PANEL + 2.0 * MARGIN + 20.0, &body)
}
