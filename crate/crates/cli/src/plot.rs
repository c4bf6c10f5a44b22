//! Minimal deterministic SVG line plots.

use std::fmt::Write as _;

use cavsqueeze::observables::{oat_optimum, qnd_asymptote, unconditional_prefactor};

use crate::table::Table;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlotError {
    #[error("nothing to plot: {0}")]
    Empty(String),
    #[error("unrecognized columns {0:?}: expected a time series (t, xi2, ...) or a sweep (N, t_m, xi2_m, ...)")]
    Schema(Vec<String>),
    #[error("log axis needs positive values, found {0}")]
    NonPositive(f64),
}

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
    pub markers: bool,
    pub color: &'static str,
}

#[derive(Clone, Debug)]
pub struct Axes {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
}

const W: f64 = 640.0;
const H: f64 = 440.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 56.0;

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e4).contains(&a) {
        return format!("{v:.0e}");
    }
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let r = raw / mag;
    let f = if r < 1.5 { 1.0 } else if r < 3.0 { 2.0 } else if r < 7.0 { 5.0 } else { 10.0 };
    f * mag
}

struct Scale {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Scale {
    fn new(values: impl Iterator<Item = f64>, log: bool) -> Result<Self, PlotError> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            if log && v <= 0.0 {
                return Err(PlotError::NonPositive(v));
            }
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Err(PlotError::Empty("no finite values".into()));
        }
        if hi - lo < 1e-12 {
            let pad = if lo.abs() > 0.0 { 0.1 * lo.abs() } else { 1.0 };
            lo -= pad;
            hi += pad;
        } else if log {
            lo = lo.floor().min(lo - 0.05);
            hi = hi.ceil().max(hi + 0.05);
        } else {
            let pad = 0.05 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
        Ok(Self { lo, hi, log })
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            return (a..=b).map(|e| 10f64.powi(e)).collect();
        }
        let step = nice_step(self.hi - self.lo);
        let mut t = (self.lo / step).ceil() * step;
        let mut out = Vec::new();
        while t <= self.hi + 1e-9 * step {
            out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
            t += step;
        }
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render(axes: &Axes, series: &[Series]) -> Result<String, PlotError> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(PlotError::Empty("all series are empty".into()));
    }
    let xs = Scale::new(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)), axes.log_x)?;
    let ys = Scale::new(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)), axes.log_y)?;
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let px = |x: f64| LEFT + xs.frac(x) * pw;
    let py = |y: f64| TOP + (1.0 - ys.frac(y)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(&axes.title));
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in xs.ticks() {
        let x = px(t);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, fmt_num(t));
    }
    for t in ys.ticks() {
        let y = py(t);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, y + 4.0, fmt_num(t));
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 14.0,
        escape(&axes.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&axes.y_label)
    );
    s.push_str("<g>\n");
    for (k, ser) in series.iter().enumerate() {
        if ser.points.is_empty() {
            continue;
        }
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let dash = if ser.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5"{dash} points="{}"/>"#,
            ser.color,
            pts.join(" ")
        );
        if ser.markers {
            for &(x, y) in &ser.points {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#, px(x), py(y), ser.color);
            }
        }
        let ly = TOP + 14.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{}"{dash}/>"#,
            W - RIGHT - 150.0,
            W - RIGHT - 128.0,
            ser.color
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, W - RIGHT - 122.0, ly + 4.0, escape(&ser.label));
    }
    s.push_str("</g>\n</svg>\n");
    Ok(s)
}

/// Reference curves drawn on sweep plots.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Reference {
    /// Unconditional second-order asymptote for detuning d.
    Unconditional { d: f64 },
    /// Resonant conditional asymptote.
    Qnd,
    /// Pure one-axis twisting.
    Oat,
}

impl Reference {
    pub fn value(&self, n: f64) -> f64 {
        match *self {
            Reference::Unconditional { d } => unconditional_prefactor(d) * n.powf(-0.4),
            Reference::Qnd => qnd_asymptote(n),
            Reference::Oat => oat_optimum(n),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Reference::Unconditional { .. } => "N^(-2/5) asymptote",
            Reference::Qnd => "N^(-2/3) QND asymptote",
            Reference::Oat => "N^(-2/3) OAT",
        }
    }
}

pub fn plot_time_series(table: &Table, title: &str) -> Result<String, PlotError> {
    let t = table.column("t").ok_or_else(|| PlotError::Schema(table.header.clone()))?;
    let x = table.column("xi2").ok_or_else(|| PlotError::Schema(table.header.clone()))?;
    if t.is_empty() {
        return Err(PlotError::Empty("time series has no rows".into()));
    }
    let axes = Axes {
        title: title.into(),
        x_label: "κt".into(),
        y_label: "ξ²".into(),
        log_x: false,
        log_y: false,
    };
    let series = Series {
        label: "ξ²".into(),
        points: t.into_iter().zip(x).collect(),
        dashed: false,
        markers: false,
        color: "#1f4e9c",
    };
    render(&axes, &[series])
}

pub fn plot_sweep(table: &Table, title: &str, reference: Option<Reference>) -> Result<String, PlotError> {
    let n = table.column("N").ok_or_else(|| PlotError::Schema(table.header.clone()))?;
    let x = table.column("xi2_m").ok_or_else(|| PlotError::Schema(table.header.clone()))?;
    if n.is_empty() {
        return Err(PlotError::Empty("sweep has no rows".into()));
    }
    let axes = Axes {
        title: title.into(),
        x_label: "N".into(),
        y_label: "ξ²_m".into(),
        log_x: true,
        log_y: true,
    };
    let (lo, hi) = (n[0], n[n.len() - 1]);
    let mut series = vec![Series {
        label: "ξ²_m".into(),
        points: n.iter().cloned().zip(x).collect(),
        dashed: false,
        markers: true,
        color: "#1f4e9c",
    }];
    if let Some(r) = reference {
        let grid: Vec<f64> = (0..=32).map(|k| lo * (hi / lo).powf(k as f64 / 32.0)).collect();
        series.push(Series {
            label: r.label().into(),
            points: grid.iter().map(|&m| (m, r.value(m))).collect(),
            dashed: true,
            markers: false,
            color: "#b03a2e",
        });
    }
    series.push(Series {
        label: "SQL ξ² = 1".into(),
        points: vec![(lo, 1.0), (hi, 1.0)],
        dashed: true,
        markers: false,
        color: "#555555",
    });
    render(&axes, &series)
}

/// Picks the plot kind from the table's columns.
pub fn plot_table(table: &Table, title: &str, reference: Option<Reference>) -> Result<String, PlotError> {
    if table.column_index("t").is_some() && table.column_index("xi2").is_some() {
        plot_time_series(table, title)
    } else if table.column_index("N").is_some() && table.column_index("xi2_m").is_some() {
        plot_sweep(table, title, reference)
    } else {
        Err(PlotError::Schema(table.header.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_series_one_polyline() {
        let mut t = Table::new(["t", "xi2"]);
        for k in 0..10 {
            t.push(vec![k as f64, 1.0 / (1.0 + k as f64)]);
        }
        let svg = plot_table(&t, "run", None).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("κt"));
        assert_eq!(svg, plot_table(&t, "run", None).unwrap());
    }

    #[test]
    fn empty_series_is_an_error() {
        let t = Table::new(["t", "xi2"]);
        assert!(matches!(plot_table(&t, "x", None), Err(PlotError::Empty(_))));
        let t = Table::new(["a", "b"]);
        assert!(matches!(plot_table(&t, "x", None), Err(PlotError::Schema(_))));
    }

    #[test]
    fn sweep_reference_is_dashed() {
        let mut t = Table::new(["N", "t_m", "xi2_m"]);
        for n in [100.0, 200.0, 400.0] {
            t.push(vec![n, 1.0, 2.0 * f64::powf(n, -0.4)]);
        }
        let svg = plot_table(&t, "sweep", Some(Reference::Unconditional { d: 1.0 })).unwrap();
        assert_eq!(svg.matches("stroke-dasharray").count(), 4);
        assert!(svg.contains("N^(-2/5)"));
    }
}
