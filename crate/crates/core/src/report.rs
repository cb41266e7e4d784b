//! CSV tables and SVG plots for study outputs. Output is a pure function of
//! the data, so identical runs give identical files.

use std::fmt::Write as _;

use crate::study::DayReport;

const W: f64 = 720.0;
const H: f64 = 400.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.9}")).unwrap_or_default()
}

pub fn day_csv(report: &DayReport) -> String {
    let mut out = String::from(
        "hour,p_total_mw,loading,status,converged_both,omega_star,optimized_losses_mw,baseline_losses_mw,loss_ratio,loss_reduction,rank1_residual",
    );
    for id in &report.turbine_ids {
        let _ = write!(out, ",q_{id}_mvar");
    }
    out.push('\n');
    for r in &report.intervals {
        let status = serde_json::to_value(r.status).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        let _ = write!(
            out,
            "{},{:.6},{:.6},{},{},{},{},{},{},{},{}",
            r.hour,
            r.p_total_mw,
            r.loading,
            status,
            r.converged_both,
            opt(r.omega_star),
            opt(r.optimized_losses_mw),
            opt(r.baseline_losses_mw),
            opt(r.loss_ratio),
            opt(r.loss_reduction),
            r.rank1_residual.map(|x| format!("{x:.3e}")).unwrap_or_default()
        );
        for t in 0..report.turbine_ids.len() {
            let _ = write!(out, ",{}", opt(r.q_turbine_mvar.get(t).copied()));
        }
        out.push('\n');
    }
    out
}

/// Demand curves as `omega,p_farm,q_farm` rows.
pub fn curves_csv(rows: &[(f64, f64, f64)]) -> String {
    let mut out = String::from("omega,p_farm,q_farm\n");
    for (w, p, q) in rows {
        let _ = writeln!(out, "{w:.9},{p:.9},{q:.12}");
    }
    out
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 <= 0.0 {
            (x0, x1) = (x0 - 0.5, x1 + 0.5);
        }
        let pad = ((y1 - y0) * 0.05).max(1e-12 * y1.abs().max(1.0));
        Self { x: (x0, x1), y: (y0 - pad, y1 + pad) }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x.0) / (self.x.1 - self.x.0) * (W - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN_B - (y - self.y.0) / (self.y.1 - self.y.0) * (H - MARGIN_T - MARGIN_B)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (x0, x1, y0, y1) = (MARGIN_L, W - MARGIN_R, MARGIN_T, H - MARGIN_B);
    let _ = writeln!(out, r#"<path d="M{x0:.2},{y0:.2} L{x0:.2},{y1:.2} L{x1:.2},{y1:.2}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = f.x.0 + t * (f.x.1 - f.x.0);
        let yv = f.y.0 + t * (f.y.1 - f.y.0);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, f.px(xv), y1 + 16.0, tick(xv));
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 4.0, f.py(yv) + 4.0, tick(yv));
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.4}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line plot with optional horizontal reference lines.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series], hlines: &[(String, f64)]) -> String {
    let all = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .chain(hlines.iter().flat_map(|(_, y)| series.iter().flat_map(|s| s.points.first().map(|p| (p.0, *y)))));
    let f = Frame::fit(all);
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, x_label, y_label);
    for (name, y) in hlines {
        let py = f.py(*y);
        let _ = writeln!(
            out,
            r##"<line x1="{MARGIN_L:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#888888" stroke-dasharray="4 3"/>"##,
            W - MARGIN_R
        );
        let _ = writeln!(out, r##"<text x="{:.2}" y="{:.2}" fill="#888888">{}</text>"##, W - MARGIN_R + 6.0, py + 4.0, escape(name));
    }
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut d = String::new();
        let mut pen_up = true;
        for &(x, y) in &s.points {
            if !(x.is_finite() && y.is_finite()) {
                pen_up = true;
                continue;
            }
            let _ = write!(d, "{}{:.2},{:.2} ", if pen_up { "M" } else { "L" }, f.px(x), f.py(y));
            pen_up = false;
        }
        let _ = writeln!(out, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.trim_end());
        for &(x, y) in s.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}"/>"#, f.px(x), f.py(y));
        }
        let ly = MARGIN_T + 16.0 * k as f64 + 10.0;
        let lx = W - MARGIN_R + 10.0;
        let _ = writeln!(out, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 24.0, ly + 4.0, escape(&s.name));
    }
    out.push_str("</svg>\n");
    out
}

/// Rows are hours, columns turbines; colour runs blue (most negative)
/// through white to red (most positive).
pub fn heat_map(title: &str, rows: &[(String, Vec<Option<f64>>)], cols: &[String]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let span = rows
        .iter()
        .flat_map(|(_, v)| v.iter().flatten())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    let (x0, y0) = (MARGIN_L, MARGIN_T);
    let cw = (W - MARGIN_L - MARGIN_R) / cols.len().max(1) as f64;
    let ch = (H - MARGIN_T - MARGIN_B) / rows.len().max(1) as f64;
    for (r, (label, values)) in rows.iter().enumerate() {
        let y = y0 + r as f64 * ch;
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="9">{}</text>"#, x0 - 4.0, y + ch / 2.0 + 3.0, escape(label));
        for (c, v) in values.iter().enumerate() {
            let fill = match v {
                Some(v) => diverging(v / span),
                None => "#cccccc".to_string(),
            };
            let _ = writeln!(out, r#"<rect x="{:.2}" y="{y:.2}" width="{cw:.2}" height="{ch:.2}" fill="{fill}"/>"#, x0 + c as f64 * cw);
        }
    }
    for (c, label) in cols.iter().enumerate() {
        let x = x0 + (c as f64 + 0.5) * cw;
        let y = H - MARGIN_B + 12.0;
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{y:.2}" text-anchor="end" font-size="9" transform="rotate(-45 {x:.2} {y:.2})">{}</text>"#, escape(label));
    }
    let lx = W - MARGIN_R + 10.0;
    for (k, t) in [1.0, 0.5, 0.0, -0.5, -1.0].iter().enumerate() {
        let y = MARGIN_T + 18.0 * k as f64;
        let _ = writeln!(out, r#"<rect x="{lx:.2}" y="{y:.2}" width="14" height="14" fill="{}"/>"#, diverging(*t));
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 20.0, y + 11.0, tick(t * span));
    }
    out.push_str("</svg>\n");
    out
}

fn diverging(t: f64) -> String {
    let t = t.clamp(-1.0, 1.0);
    let (r, g, b) = if t >= 0.0 {
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    } else {
        (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// The three day plots: `(file stem, svg)`.
pub fn day_plots(report: &DayReport) -> Vec<(&'static str, String)> {
    let hours = |f: &dyn Fn(&crate::study::IntervalRecord) -> Option<f64>| -> Vec<(f64, f64)> {
        report.intervals.iter().map(|r| (r.hour as f64, f(r).unwrap_or(f64::NAN))).collect()
    };
    let losses = line_plot(
        "Network loss per hour",
        "hour",
        "loss (MW)",
        &[
            Series { name: "optimized".into(), points: hours(&|r| r.optimized_losses_mw) },
            Series { name: "uniform Q".into(), points: hours(&|r| r.baseline_losses_mw) },
        ],
        &[],
    );
    let band = report.options.band;
    let omega = line_plot(
        "Farm frequency per hour",
        "hour",
        "omega (p.u.)",
        &[Series { name: "omega*".into(), points: hours(&|r| r.omega_star) }],
        &[("band min".into(), band.omega_min_h), ("band max".into(), band.omega_max_h)],
    );
    let rows: Vec<(String, Vec<Option<f64>>)> = report
        .intervals
        .iter()
        .map(|r| {
            let v = (0..report.turbine_ids.len()).map(|t| r.q_turbine_mvar.get(t).copied()).collect();
            (format!("h{}", r.hour), v)
        })
        .collect();
    let heat = heat_map("Turbine reactive output (MVAr)", &rows, &report.turbine_ids);
    vec![("losses", losses), ("omega", omega), ("q_turbines", heat)]
}

pub fn curves_plot(rows: &[(f64, f64, f64)]) -> String {
    let mut levels: Vec<f64> = rows.iter().map(|r| r.1).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let series: Vec<Series> = levels
        .iter()
        .map(|&p| Series {
            name: format!("P={p:.4}"),
            points: rows.iter().filter(|r| r.1 == p).map(|r| (r.0, r.2)).collect(),
        })
        .collect();
    line_plot("Reactive demand against frequency", "omega (p.u.)", "q_farm (p.u.)", &series, &[])
}
