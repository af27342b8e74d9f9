//! Static SVG charts of a benchmark report.

use std::fmt::Write;

use super::benchmark::BenchmarkReport;
use super::metrics::Stage;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 60.0;

struct LogAxis {
    lo: f64,
    hi: f64,
}

impl LogAxis {
    fn fit(values: impl Iterator<Item = f64>) -> LogAxis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| *v > 0.0 && v.is_finite()) {
            lo = lo.min(v.log10().floor());
            hi = hi.max(v.log10().ceil());
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi <= lo {
            hi = lo + 1.0;
        }
        LogAxis { lo, hi }
    }

    /// SVG y coordinate; non-positive values sit on the bottom edge.
    fn y(&self, v: f64) -> f64 {
        let l = if v > 0.0 { v.log10().clamp(self.lo, self.hi) } else { self.lo };
        H - MARGIN - (l - self.lo) / (self.hi - self.lo) * (H - 2.0 * MARGIN)
    }

    fn ticks(&self, svg: &mut String) {
        for e in self.lo as i32..=self.hi as i32 {
            let y = self.y(10f64.powi(e));
            let _ = write!(
                svg,
                r##"<line x1="{MARGIN}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">1e{e}</text>"##,
                W - MARGIN,
                MARGIN - 6.0,
                y + 4.0
            );
        }
    }
}

fn frame(title: &str, y_label: &str) -> String {
    format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}"><rect width="100%" height="100%" fill="white"/><text x="{:.1}" y="24" font-size="15" text-anchor="middle">{title}</text><text x="14" y="{:.1}" font-size="12" transform="rotate(-90 14 {:.1})" text-anchor="middle">{y_label}</text>"##,
        W / 2.0,
        H / 2.0,
        H / 2.0
    )
}

type Series = (&'static str, &'static str, fn(&super::benchmark::StageSummary) -> Option<f64>);

/// Mean e_pixel, e_transl and e_rot (converged subset) for each stage.
pub fn stage_plot_svg(report: &BenchmarkReport) -> String {
    let series: [Series; 3] = [
        ("e_pixel [px]", "#c0392b", |s| s.e_pixel.map(|x| x.mean)),
        ("e_transl [m]", "#2471a3", |s| s.e_transl.map(|x| x.mean)),
        ("e_rot [rad]", "#229954", |s| s.e_rot.map(|x| x.mean)),
    ];
    let axis = LogAxis::fit(
        report
            .stages
            .iter()
            .flat_map(|s| series.iter().filter_map(move |(_, _, f)| f(s))),
    );
    let mut svg = frame(
        &format!("Error per stage ({} of {} pairs converged)", report.converged, report.pairs),
        "mean error (log scale)",
    );
    axis.ticks(&mut svg);
    let x = |i: usize| MARGIN + 40.0 + i as f64 * (W - 2.0 * MARGIN - 80.0) / (Stage::ALL.len() - 1) as f64;
    for (i, stage) in Stage::ALL.iter().enumerate() {
        let _ = write!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
            x(i),
            H - MARGIN + 18.0,
            stage.as_str()
        );
    }
    for (k, (label, color, f)) in series.iter().enumerate() {
        let pts: Vec<String> = Stage::ALL
            .iter()
            .enumerate()
            .filter_map(|(i, st)| {
                report
                    .summary(*st)
                    .and_then(f)
                    .map(|v| format!("{:.1},{:.1}", x(i), axis.y(v)))
            })
            .collect();
        let _ = write!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="12" fill="{color}">{label}</text>"#,
            pts.join(" "),
            W - MARGIN - 90.0,
            MARGIN + 16.0 * k as f64
        );
    }
    svg + "</svg>\n"
}

/// Photometric cost against cumulative iteration, coarse to fine, for the
/// first `max_pairs` pairs.
pub fn residual_plot_svg(report: &BenchmarkReport, max_pairs: usize) -> String {
    let curves: Vec<Vec<f64>> = report
        .outcomes
        .iter()
        .take(max_pairs)
        .map(|o| o.residual_history.iter().rev().flatten().copied().collect())
        .collect();
    let axis = LogAxis::fit(curves.iter().flatten().copied());
    let longest = curves.iter().map(Vec::len).max().unwrap_or(0).max(2);
    let x = |i: usize| MARGIN + i as f64 * (W - 2.0 * MARGIN) / (longest - 1) as f64;
    let mut svg = frame("Residual history (levels 3 to 0)", "cost (log scale)");
    axis.ticks(&mut svg);
    let _ = write!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">evaluation</text>"#,
        W / 2.0,
        H - MARGIN + 30.0
    );
    for (k, c) in curves.iter().enumerate() {
        let pts: Vec<String> = c
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{:.1},{:.1}", x(i), axis.y(*v)))
            .collect();
        let hue = (k * 47) % 360;
        let _ = write!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="hsl({hue},60%,45%)" stroke-width="1" opacity="0.7"/>"#,
            pts.join(" ")
        );
    }
    svg + "</svg>\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::benchmark::{summarize, BenchmarkConfig};

    #[test]
    fn empty_report_renders() {
        let r = summarize(0, &BenchmarkConfig::default(), vec![]);
        for svg in [stage_plot_svg(&r), residual_plot_svg(&r, 10)] {
            assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        }
    }
}
