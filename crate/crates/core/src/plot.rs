//! Learning-curve plots as standalone SVG.
//!
//! Each arm is a mean line over environment steps with a band of half a
//! standard deviation on either side.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CurveSeries {
    pub label: String,
    /// `(step, mean, std)`
    pub points: Vec<(f64, f64, f64)>,
}

/// Reads `step`, `eval_mean` and `eval_std` columns from a CSV with a
/// header row. Rows with an empty `eval_mean` are skipped.
pub fn read_curve_csv(label: &str, text: &str) -> Result<CurveSeries> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Decode(format!("{label}: empty csv")))?
        .trim_end_matches('\r');
    let cols: Vec<&str> = header.split(',').collect();
    let find = |name: &str| {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::Decode(format!("{label}: missing column {name:?}")))
    };
    let (is, im, isd) = (find("step")?, find("eval_mean")?, find("eval_std")?);
    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let row = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(Error::Decode(format!(
                "{label}: row {row} has {} fields, header has {}",
                f.len(),
                cols.len()
            )));
        }
        if f[im].is_empty() {
            continue;
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Decode(format!("{label}: row {row}: bad {what} {s:?}")))
        };
        let std = if f[isd].is_empty() { 0.0 } else { num(f[isd], "eval_std")? };
        if std < 0.0 {
            return Err(Error::Decode(format!("{label}: row {row}: negative eval_std")));
        }
        points.push((num(f[is], "step")?, num(f[im], "eval_mean")?, std));
    }
    Ok(CurveSeries {
        label: label.to_string(),
        points,
    })
}

/// Pixel mapping shared by every arm of one plot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub width: f64,
    pub height: f64,
    pub margin: f64,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

impl Layout {
    pub fn fit(series: &[CurveSeries]) -> Self {
        let mut xr = (f64::INFINITY, f64::NEG_INFINITY);
        let mut yr = (f64::INFINITY, f64::NEG_INFINITY);
        for &(x, m, s) in series.iter().flat_map(|s| &s.points) {
            xr = (xr.0.min(x), xr.1.max(x));
            yr = (yr.0.min(m - 0.5 * s), yr.1.max(m + 0.5 * s));
        }
        let widen = |(lo, hi): (f64, f64)| {
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        Layout {
            width: 640.0,
            height: 400.0,
            margin: 50.0,
            x_range: widen(xr),
            y_range: widen(yr),
        }
    }

    pub fn px(&self, x: f64) -> f64 {
        let (lo, hi) = self.x_range;
        self.margin + (x - lo) / (hi - lo) * (self.width - 2.0 * self.margin)
    }

    pub fn py(&self, y: f64) -> f64 {
        let (lo, hi) = self.y_range;
        self.height - self.margin - (y - lo) / (hi - lo) * (self.height - 2.0 * self.margin)
    }

    /// Pixels per unit of return.
    pub fn y_scale(&self) -> f64 {
        (self.height - 2.0 * self.margin) / (self.y_range.1 - self.y_range.0)
    }
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn render_svg(series: &[CurveSeries]) -> Result<String> {
    if series.is_empty() {
        return Err(Error::contract("nothing to plot"));
    }
    let lay = Layout::fit(series);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = lay.width,
        h = lay.height
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (l, r) = (lay.margin, lay.width - lay.margin);
    let (t, b) = (lay.margin, lay.height - lay.margin);
    let _ = writeln!(
        out,
        r##"<path class="axes" d="M{l} {t} L{l} {b} L{r} {b}" stroke="#333" fill="none"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">environment steps ({} to {})</text>"#,
        lay.width / 2.0,
        lay.height - 12.0,
        lay.x_range.0,
        lay.x_range.1
    );
    let _ = writeln!(
        out,
        r#"<text x="12" y="{}" font-size="12" transform="rotate(-90 12 {})" text-anchor="middle">eval return ({:.3} to {:.3})</text>"#,
        lay.height / 2.0,
        lay.height / 2.0,
        lay.y_range.0,
        lay.y_range.1
    );
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let label = escape(&s.label);
        let _ = writeln!(out, r#"<g class="arm" data-label="{label}">"#);
        if !s.points.is_empty() {
            let upper = s.points.iter().map(|&(x, m, sd)| (lay.px(x), lay.py(m + 0.5 * sd)));
            let lower = s.points.iter().rev().map(|&(x, m, sd)| (lay.px(x), lay.py(m - 0.5 * sd)));
            let band: Vec<String> = upper.chain(lower).map(|(x, y)| format!("{x},{y}")).collect();
            let _ = writeln!(
                out,
                r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                band.join(" ")
            );
            let line: Vec<String> = s
                .points
                .iter()
                .map(|&(x, m, _)| format!("{},{}", lay.px(x), lay.py(m)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline class="mean" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                line.join(" ")
            );
        }
        let ly = lay.margin + 16.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<text class="legend" x="{}" y="{ly}" fill="{color}" font-size="12">{label}</text>"#,
            lay.width - lay.margin - 150.0
        );
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_metrics_and_curve_layouts() {
        let curve = read_curve_csv("a", "step,eval_mean,eval_std\n10,-3,0.5\n20,-2,0\n").unwrap();
        assert_eq!(curve.points, vec![(10.0, -3.0, 0.5), (20.0, -2.0, 0.0)]);
        let head = crate::metrics::CSV_COLUMNS.join(",");
        let m = read_curve_csv("m", &format!("{head}\n5,,,1,,,,,,,,,0\n10,-4,1,,,,,,,,,,0\n")).unwrap();
        assert_eq!(m.points, vec![(10.0, -4.0, 1.0)]);
    }

    #[test]
    fn malformed_rows_are_named() {
        let err = read_curve_csv("x", "step,eval_mean,eval_std\n1,2,3\n2,oops,1\n").unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
        let err = read_curve_csv("x", "step,eval_mean,eval_std\n1,2\n").unwrap_err();
        assert!(err.to_string().contains("row 2"));
        assert!(read_curve_csv("x", "step,mean\n").is_err());
        assert!(read_curve_csv("x", "").is_err());
    }

    #[test]
    fn labels_are_escaped() {
        let s = CurveSeries {
            label: "a<b>&\"c\"".into(),
            points: vec![(0.0, 1.0, 0.0)],
        };
        let svg = render_svg(&[s]).unwrap();
        assert!(svg.contains("a&lt;b&gt;&amp;&quot;c&quot;"));
    }

    #[test]
    fn flat_series_still_renders() {
        let s = CurveSeries {
            label: "flat".into(),
            points: vec![(5.0, 2.0, 0.0)],
        };
        let svg = render_svg(&[s]).unwrap();
        assert!(svg.contains("polyline"));
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
        assert!(render_svg(&[]).is_err());
    }
}
