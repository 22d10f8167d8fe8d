//! Minimal SVG chart emission with CSV sidecars.
//!
//! Output bytes depend only on the input values, so documents can be
//! compared byte-for-byte in tests and evidence reports.

use std::fmt::Write;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlotError {
    #[error("nothing to plot: {0}")]
    Empty(&'static str),
    #[error("non-finite value {value} at x = {x}")]
    NonFinite { x: u32, value: f64 },
}

/// An SVG document plus the CSV rows it was drawn from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlotDocument {
    pub svg: String,
    pub csv: String,
}

/// Styling role of a bar in a posterior chart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarRole {
    None,
    Predicted,
    Actual,
}

impl BarRole {
    pub fn as_str(self) -> &'static str {
        match self {
            BarRole::None => "none",
            BarRole::Predicted => "predicted",
            BarRole::Actual => "actual",
        }
    }

    fn fill(self) -> &'static str {
        match self {
            BarRole::None => "#8c8c8c",
            BarRole::Predicted => "#d62728",
            BarRole::Actual => "#2ca02c",
        }
    }
}

const BAR_W: f64 = 8.0;
const PLOT_H: f64 = 240.0;
const MARGIN_L: f64 = 48.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 36.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Vertical bar chart over consecutive integer x values starting at 0, with
/// y fixed to `[0, 1]`.
pub fn bar_chart(title: &str, values: &[f64], roles: &[BarRole]) -> Result<PlotDocument, PlotError> {
    assert_eq!(values.len(), roles.len(), "one role per bar");
    if values.is_empty() {
        return Err(PlotError::Empty("bar chart without bars"));
    }
    if let Some((i, &v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(PlotError::NonFinite { x: i as u32, value: v });
    }
    let width = MARGIN_L + BAR_W * values.len() as f64 + 16.0;
    let height = MARGIN_T + PLOT_H + MARGIN_B;
    let base = MARGIN_T + PLOT_H;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN_L:.0}" y="18" font-family="sans-serif" font-size="13">{}</text>"#,
        escape(title)
    );
    axes(&mut svg, MARGIN_L, base, width - 16.0, 1.0);
    let mut csv = String::from("age,prob,role\n");
    for (i, (&v, &role)) in values.iter().zip(roles).enumerate() {
        let h = v.clamp(0.0, 1.0) * PLOT_H;
        let x = MARGIN_L + BAR_W * i as f64;
        let _ = writeln!(
            svg,
            r#"<rect class="bar role-{role}" data-age="{i}" data-prob="{v}" x="{x:.2}" y="{y:.2}" width="{bw:.2}" height="{h:.2}" fill="{fill}"/>"#,
            role = role.as_str(),
            y = base - h,
            bw = BAR_W - 1.0,
            fill = role.fill(),
        );
        let _ = writeln!(csv, "{i},{v},{}", role.as_str());
        if i % 10 == 0 {
            let _ = writeln!(
                svg,
                r#"<text x="{tx:.2}" y="{ty:.0}" font-family="sans-serif" font-size="10" text-anchor="middle">{i}</text>"#,
                tx = x + BAR_W / 2.0,
                ty = base + 14.0,
            );
        }
    }
    svg.push_str("</svg>\n");
    Ok(PlotDocument { svg, csv })
}

/// Line-and-marker chart of `(x, y)` points, y fixed to `[0, y_max]`.
/// `value_header` names the value column of the CSV sidecar.
pub fn series_chart(
    title: &str,
    value_header: &str,
    points: &[(u32, f64)],
    y_max: f64,
) -> Result<PlotDocument, PlotError> {
    if points.is_empty() {
        return Err(PlotError::Empty("series without points"));
    }
    if let Some(&(x, value)) = points.iter().find(|(_, v)| !v.is_finite()) {
        return Err(PlotError::NonFinite { x, value });
    }
    let x_max = points.iter().map(|p| p.0).max().unwrap_or(0).max(1) as f64;
    let plot_w = 420.0;
    let width = MARGIN_L + plot_w + 24.0;
    let height = MARGIN_T + PLOT_H + MARGIN_B;
    let base = MARGIN_T + PLOT_H;
    let y_max = if y_max > 0.0 { y_max } else { 1.0 };
    let px = |x: u32| MARGIN_L + plot_w * x as f64 / x_max;
    let py = |y: f64| base - PLOT_H * (y / y_max).clamp(0.0, 1.0);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN_L:.0}" y="18" font-family="sans-serif" font-size="13">{}</text>"#,
        escape(title)
    );
    axes(&mut svg, MARGIN_L, base, MARGIN_L + plot_w, y_max);

    let path: Vec<String> = points
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
        .collect();
    let _ = writeln!(
        svg,
        r##"<polyline class="series" fill="none" stroke="#1f77b4" stroke-width="1.5" points="{}"/>"##,
        path.join(" ")
    );
    let mut csv = format!("age_class,{value_header}\n");
    for &(x, y) in points {
        let _ = writeln!(
            svg,
            r##"<circle class="point" data-x="{x}" data-y="{y}" cx="{:.2}" cy="{:.2}" r="3" fill="#1f77b4"/>"##,
            px(x),
            py(y)
        );
        let _ = writeln!(csv, "{x},{y}");
    }
    svg.push_str("</svg>\n");
    Ok(PlotDocument { svg, csv })
}

fn axes(svg: &mut String, left: f64, base: f64, right: f64, y_max: f64) {
    let top = base - PLOT_H;
    let _ = writeln!(
        svg,
        r##"<path class="axes" d="M{left:.2},{top:.2} L{left:.2},{base:.2} L{right:.2},{base:.2}" stroke="#000" fill="none"/>"##
    );
    for i in 0..=4 {
        let frac = i as f64 / 4.0;
        let y = base - PLOT_H * frac;
        let _ = writeln!(
            svg,
            r#"<text x="{tx:.2}" y="{y:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{label}</text>"#,
            tx = left - 4.0,
            label = format_tick(y_max * frac),
        );
    }
}

fn format_tick(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}
