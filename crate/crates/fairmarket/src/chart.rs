//! Minimal deterministic SVG line charts with error bars.
//!
//! Identical input must yield identical bytes: every coordinate is
//! formatted with fixed precision and series are drawn in input order.

use std::fmt::Write as _;
use std::io::Write;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChartError {
    #[error("chart needs at least one series with at least one point")]
    Empty,
    #[error("series '{name}' has mismatched lengths: x {x}, y {y}, lo {lo}, hi {hi}")]
    MismatchedLengths {
        name: String,
        x: usize,
        y: usize,
        lo: usize,
        hi: usize,
    },
    #[error("non-finite value in series '{0}'")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Lower/upper error band; both empty or both matching `y`.
    pub y_lo: Vec<f64>,
    pub y_hi: Vec<f64>,
}

impl Series {
    pub fn line(name: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            x,
            y,
            y_lo: Vec::new(),
            y_hi: Vec::new(),
        }
    }

    pub fn with_band(mut self, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        self.y_lo = lo;
        self.y_hi = hi;
        self
    }
}

#[derive(Clone, Debug)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 48.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let trimmed = s.trim_end_matches('0').trim_end_matches('.');
    if trimmed.is_empty() {
        "0".into()
    } else {
        trimmed.to_string()
    }
}

/// Renders the chart as a standalone SVG document.
pub fn render(chart: &Chart) -> Result<String, ChartError> {
    if chart.series.is_empty() || chart.series.iter().all(|s| s.x.is_empty()) {
        return Err(ChartError::Empty);
    }
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in &chart.series {
        let band = !s.y_lo.is_empty() || !s.y_hi.is_empty();
        if s.x.len() != s.y.len()
            || (band && (s.y_lo.len() != s.y.len() || s.y_hi.len() != s.y.len()))
        {
            return Err(ChartError::MismatchedLengths {
                name: s.name.clone(),
                x: s.x.len(),
                y: s.y.len(),
                lo: s.y_lo.len(),
                hi: s.y_hi.len(),
            });
        }
        for &v in s.x.iter().chain(&s.y).chain(&s.y_lo).chain(&s.y_hi) {
            if !v.is_finite() {
                return Err(ChartError::NonFinite(s.name.clone()));
            }
        }
        for &v in &s.x {
            x_min = x_min.min(v);
            x_max = x_max.max(v);
        }
        for &v in s.y.iter().chain(&s.y_lo).chain(&s.y_hi) {
            y_min = y_min.min(v);
            y_max = y_max.max(v);
        }
    }
    if x_max <= x_min {
        x_max = x_min + 1.0;
    }
    if y_max <= y_min {
        y_max = y_min + 1.0;
    }
    let pad = 0.05 * (y_max - y_min);
    y_min -= pad;
    y_max += pad;

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |v: f64| MARGIN_L + (v - x_min) / (x_max - x_min) * plot_w;
    let sy = |v: f64| MARGIN_T + (1.0 - (v - y_min) / (y_max - y_min)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"22\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>",
        fmt(WIDTH / 2.0),
        chart.title
    );

    // Axes with five ticks each.
    let _ = writeln!(
        svg,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        fmt(MARGIN_L),
        fmt(MARGIN_T),
        fmt(MARGIN_L),
        fmt(HEIGHT - MARGIN_B)
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        fmt(MARGIN_L),
        fmt(HEIGHT - MARGIN_B),
        fmt(WIDTH - MARGIN_R),
        fmt(HEIGHT - MARGIN_B)
    );
    for k in 0..=4 {
        let fx = x_min + (x_max - x_min) * k as f64 / 4.0;
        let px = sx(fx);
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
            fmt(px),
            fmt(HEIGHT - MARGIN_B),
            fmt(px),
            fmt(HEIGHT - MARGIN_B + 5.0)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            fmt(px),
            fmt(HEIGHT - MARGIN_B + 18.0),
            tick_label(fx)
        );
        let fy = y_min + (y_max - y_min) * k as f64 / 4.0;
        let py = sy(fy);
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
            fmt(MARGIN_L - 5.0),
            fmt(py),
            fmt(MARGIN_L),
            fmt(py)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>",
            fmt(MARGIN_L - 8.0),
            fmt(py + 4.0),
            tick_label(fy)
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
        fmt(MARGIN_L + plot_w / 2.0),
        fmt(HEIGHT - 10.0),
        chart.x_label
    );
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
        fmt(MARGIN_T + plot_h / 2.0),
        fmt(MARGIN_T + plot_h / 2.0),
        chart.y_label
    );

    for (ix, s) in chart.series.iter().enumerate() {
        let color = PALETTE[ix % PALETTE.len()];
        // Error bars first so the line draws over them.
        if !s.y_lo.is_empty() {
            for k in 0..s.x.len() {
                let px = sx(s.x[k]);
                let lo = sy(s.y_lo[k]);
                let hi = sy(s.y_hi[k]);
                let _ = writeln!(
                    svg,
                    "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"{3}\" stroke-opacity=\"0.6\"/>",
                    fmt(px),
                    fmt(lo),
                    fmt(hi),
                    color
                );
                for py in [lo, hi] {
                    let _ = writeln!(
                        svg,
                        "<line x1=\"{}\" y1=\"{2}\" x2=\"{}\" y2=\"{2}\" stroke=\"{3}\" stroke-opacity=\"0.6\"/>",
                        fmt(px - 3.0),
                        fmt(px + 3.0),
                        fmt(py),
                        color
                    );
                }
            }
        }
        let points: Vec<String> = s
            .x
            .iter()
            .zip(&s.y)
            .map(|(&x, &y)| format!("{},{}", fmt(sx(x)), fmt(sy(y))))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>",
            color,
            points.join(" ")
        );
        // Legend entry.
        let ly = MARGIN_T + 14.0 * ix as f64;
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{2}\" x2=\"{}\" y2=\"{2}\" stroke=\"{3}\" stroke-width=\"2\"/>",
            fmt(WIDTH - MARGIN_R - 120.0),
            fmt(WIDTH - MARGIN_R - 100.0),
            fmt(ly),
            color
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            fmt(WIDTH - MARGIN_R - 94.0),
            fmt(ly + 4.0),
            s.name
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Renders and writes the chart to a file.
pub fn emit_chart(chart: &Chart, path: &std::path::Path) -> Result<(), ChartError> {
    let svg = render(chart)?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(svg.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_series() -> Chart {
        Chart {
            title: "flat".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series::line("a", vec![0.0, 1.0, 2.0], vec![0.5, 0.5, 0.5])],
        }
    }

    #[test]
    fn constant_series_renders_horizontal_line() {
        let svg = render(&constant_series()).unwrap();
        assert!(svg.contains("<polyline"));
        // All three points share the same y coordinate.
        let line = svg
            .lines()
            .find(|l| l.contains("<polyline"))
            .unwrap()
            .to_string();
        let points = line
            .split("points=\"")
            .nth(1)
            .and_then(|rest| rest.split('"').next())
            .unwrap();
        let ys: Vec<&str> = points
            .split(' ')
            .map(|t| t.split(',').nth(1).unwrap_or(""))
            .collect();
        assert_eq!(ys.len(), 3);
        assert!(ys.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn deterministic_bytes() {
        let a = render(&constant_series()).unwrap();
        let b = render(&constant_series()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let chart = Chart {
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
            series: vec![Series::line("bad", vec![0.0, 1.0], vec![0.5])],
        };
        assert!(matches!(
            render(&chart),
            Err(ChartError::MismatchedLengths { .. })
        ));
        let empty = Chart {
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
            series: vec![],
        };
        assert!(matches!(render(&empty), Err(ChartError::Empty)));
    }
}
