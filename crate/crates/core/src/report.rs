//! CSV and SVG rendering. Output depends only on the inputs, so identical
//! runs produce identical bytes.

use std::fmt::Write as _;

use thiserror::Error;

use crate::cost_model::FrontierPoint;
use crate::simulator::{HRhoGrid, SpeedupComparison, SpeedupCurve};

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("nothing to plot: {0} is empty")]
    Empty(&'static str),
}

/// Six significant digits in the style of C's `%g`.
pub fn fmt6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn curve_csv(curve: &SpeedupCurve) -> String {
    let mut out = String::from("M,t_cmt,t_tnf,t_update,speedup\n");
    for r in &curve.rows {
        let _ =
            writeln!(out, "{},{},{},{},{}", r.workers, fmt6(r.t_cmt), fmt6(r.t_tnf), fmt6(r.t_update), fmt6(r.speedup));
    }
    out
}

pub fn grid_csv(grid: &HRhoGrid) -> String {
    let mut out = String::from("h,rho,t_cmt,t_tnf,t_update,speedup\n");
    for (i, &h) in grid.h.iter().enumerate() {
        for (j, &rho) in grid.rho.iter().enumerate() {
            let c = &grid.cells[i][j];
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                fmt6(h),
                fmt6(rho),
                fmt6(c.t_cmt),
                fmt6(c.t_tnf),
                fmt6(c.t_update),
                fmt6(grid.per_update_compute / c.t_update)
            );
        }
    }
    out
}

pub fn comparison_csv(cmp: &SpeedupComparison) -> String {
    let mut out = String::from("M,ideal,vanilla");
    for rho in &cmp.rho {
        let _ = write!(out, ",rho_{}", fmt6(*rho));
    }
    out.push('\n');
    for (i, m) in cmp.workers.iter().enumerate() {
        let _ = write!(out, "{m},{},{}", fmt6(cmp.ideal[i]), fmt6(cmp.vanilla[i]));
        for series in &cmp.homomorphic {
            let _ = write!(out, ",{}", fmt6(series[i]));
        }
        out.push('\n');
    }
    out
}

pub fn frontier_csv(points: &[FrontierPoint]) -> String {
    let mut out = String::from("rho,h_max,target_factor,feasible\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{}", fmt6(p.rho), fmt6(p.h_max), fmt6(p.target_factor), p.feasible);
    }
    out
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = if self.x1 > self.x0 { self.x1 - self.x0 } else { 1.0 };
        LEFT + (x - self.x0) / span * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - y / self.y1 * (HEIGHT - TOP - BOTTOM)
    }
}

fn nice_max(v: f64) -> f64 {
    if v.is_nan() || v <= 0.0 {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|k| k * mag).find(|&c| c >= v).unwrap_or(10.0 * mag)
}

fn open_svg(out: &mut String, title: &str, metadata: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, "<metadata>{}</metadata>", escape(metadata));
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        (WIDTH - RIGHT + LEFT) / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str, x_ticks: &[(f64, String)]) {
    let (l, r, b, t) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    let _ = writeln!(out, r#"<path d="M{l} {t} V{b} H{r}" stroke="black" fill="none"/>"#);
    for k in 0..=5 {
        let v = f.y1 * k as f64 / 5.0;
        let y = f.py(v);
        let _ = writeln!(out, r##"<line x1="{l}" y1="{y:.2}" x2="{r}" y2="{y:.2}" stroke="#dddddd"/>"##);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, l - 6.0, y + 4.0, fmt6(v));
    }
    for (x, label) in x_ticks {
        let px = f.px(*x);
        let _ = writeln!(out, r#"<line x1="{px:.2}" y1="{b}" x2="{px:.2}" y2="{}" stroke="black"/>"#, b + 5.0);
        let _ = writeln!(out, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, b + 18.0, escape(label));
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (l + r) / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        (t + b) / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, names: &[String]) {
    for (k, name) in names.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * k as f64;
        let x = WIDTH - RIGHT + 15.0;
        let colour = PALETTE[k % PALETTE.len()];
        let _ = writeln!(out, r#"<rect x="{x}" y="{}" width="14" height="10" fill="{colour}"/>"#, y - 9.0);
        let _ = writeln!(out, r#"<text x="{}" y="{y}">{}</text>"#, x + 20.0, escape(name));
    }
}

/// Line chart of several series over a shared x axis.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    xs: &[f64],
    series: &[(String, Vec<f64>)],
    metadata: &str,
) -> Result<String, ReportError> {
    if xs.is_empty() {
        return Err(ReportError::Empty("x values"));
    }
    if series.is_empty() {
        return Err(ReportError::Empty("series"));
    }
    let x0 = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let x1 = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let y_max = series.iter().flat_map(|(_, ys)| ys.iter().copied()).filter(|y| y.is_finite()).fold(0.0, f64::max);
    let f = Frame { x0, x1, y1: nice_max(y_max) };
    let step = (xs.len() / 12).max(1);
    let ticks: Vec<(f64, String)> = xs.iter().step_by(step).map(|&x| (x, fmt6(x))).collect();

    let mut out = String::new();
    open_svg(&mut out, title, metadata);
    axes(&mut out, &f, x_label, y_label, &ticks);
    for (k, (_, ys)) in series.iter().enumerate() {
        let mut d = String::new();
        for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
            let _ = write!(d, "{}{:.2} {:.2}", if i == 0 { "M" } else { " L" }, f.px(x), f.py(y));
        }
        let _ =
            writeln!(out, r#"<path d="{d}" stroke="{}" stroke-width="2" fill="none"/>"#, PALETTE[k % PALETTE.len()]);
    }
    legend(&mut out, &series.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    Ok(out)
}

/// Stacked bar chart; `stacks[k].1[i]` is layer `k` of bar `i`.
pub fn stacked_bars(
    title: &str,
    y_label: &str,
    categories: &[String],
    stacks: &[(String, Vec<f64>)],
    metadata: &str,
) -> Result<String, ReportError> {
    if categories.is_empty() {
        return Err(ReportError::Empty("categories"));
    }
    if stacks.is_empty() {
        return Err(ReportError::Empty("stacks"));
    }
    let n = categories.len();
    let totals: Vec<f64> = (0..n).map(|i| stacks.iter().map(|(_, v)| v[i]).sum()).collect();
    let f = Frame { x0: -0.5, x1: n as f64 - 0.5, y1: nice_max(totals.iter().copied().fold(0.0, f64::max)) };
    let step = (n / 12).max(1);
    let ticks: Vec<(f64, String)> =
        categories.iter().enumerate().step_by(step).map(|(i, c)| (i as f64, c.clone())).collect();
    let bar = 0.7 * (f.px(1.0) - f.px(0.0));

    let mut out = String::new();
    open_svg(&mut out, title, metadata);
    axes(&mut out, &f, "", y_label, &ticks);
    for i in 0..n {
        let mut base = 0.0;
        for (k, (_, values)) in stacks.iter().enumerate() {
            let top = base + values[i];
            let (y_top, y_base) = (f.py(top), f.py(base));
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{y_top:.2}" width="{bar:.2}" height="{:.2}" fill="{}"/>"#,
                f.px(i as f64) - bar / 2.0,
                y_base - y_top,
                PALETTE[k % PALETTE.len()]
            );
            base = top;
        }
    }
    legend(&mut out, &stacks.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    Ok(out)
}

/// Computation against transfer time per worker count.
pub fn curve_svg(curve: &SpeedupCurve, metadata: &str) -> Result<String, ReportError> {
    if curve.rows.is_empty() {
        return Err(ReportError::Empty("curve"));
    }
    let xs: Vec<f64> = curve.rows.iter().map(|r| r.workers as f64).collect();
    let series = vec![
        ("T_cmt".to_string(), curve.rows.iter().map(|r| r.t_cmt).collect()),
        ("T_tnf".to_string(), curve.rows.iter().map(|r| r.t_tnf).collect()),
    ];
    line_chart(&format!("Update time components ({})", curve.strategy), "workers M", "seconds", &xs, &series, metadata)
}

pub fn comparison_svg(cmp: &SpeedupComparison, metadata: &str) -> Result<String, ReportError> {
    if cmp.workers.is_empty() {
        return Err(ReportError::Empty("worker range"));
    }
    let xs: Vec<f64> = cmp.workers.iter().map(|&m| m as f64).collect();
    let mut series = vec![("ideal".to_string(), cmp.ideal.clone()), ("vanilla".to_string(), cmp.vanilla.clone())];
    for (rho, s) in cmp.rho.iter().zip(&cmp.homomorphic) {
        series.push((format!("rho = {}", fmt6(*rho)), s.clone()));
    }
    line_chart("Speedup against worker count", "workers M", "speedup", &xs, &series, metadata)
}

pub fn grid_svg(grid: &HRhoGrid, metadata: &str) -> Result<String, ReportError> {
    if grid.h.is_empty() || grid.rho.is_empty() {
        return Err(ReportError::Empty("grid"));
    }
    let mut categories = Vec::new();
    let (mut cmt, mut tnf) = (Vec::new(), Vec::new());
    for (j, rho) in grid.rho.iter().enumerate() {
        for (i, h) in grid.h.iter().enumerate() {
            categories.push(format!("{}/{}", fmt6(*h), fmt6(*rho)));
            cmt.push(grid.cells[i][j].t_cmt);
            tnf.push(grid.cells[i][j].t_tnf);
        }
    }
    let stacks = vec![("T_cmt".to_string(), cmt), ("T_tnf".to_string(), tnf)];
    stacked_bars(&format!("Update time by h/rho, M = {}", grid.workers), "seconds", &categories, &stacks, metadata)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_model::ClusterConfig;
    use crate::simulator::{speedup_comparison, sweep_h_rho, sweep_workers, Strategy};

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt6(0.0), "0");
        assert_eq!(fmt6(6.25), "6.25");
        assert_eq!(fmt6(31.272730624), "31.2727");
        assert_eq!(fmt6(37.522730624), "37.5227");
        assert_eq!(fmt6(1.0), "1");
        assert_eq!(fmt6(100.0), "100");
        assert_eq!(fmt6(123456.7), "123457");
        assert_eq!(fmt6(1234567.0), "1.23457e+06");
        assert_eq!(fmt6(0.0001), "0.0001");
        assert_eq!(fmt6(0.00001234), "1.234e-05");
        assert_eq!(fmt6(-2.5), "-2.5");
        assert_eq!(fmt6(999999.5), "1e+06");
        assert_eq!(fmt6(0.2), "0.2");
    }

    #[test]
    fn curve_csv_layout() {
        let c = ClusterConfig::alexnet_like();
        let range: Vec<u32> = (1..=25).collect();
        let csv = curve_csv(&sweep_workers(&c, Strategy::Vanilla, None, &range).unwrap());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "M,t_cmt,t_tnf,t_update,speedup");
        assert_eq!(lines.len(), 26);
        assert_eq!(lines[16], "16,6.25,31.2727,37.5227,2.66505");
    }

    #[test]
    fn grid_csv_rows() {
        let c = ClusterConfig::alexnet_like();
        let hs: Vec<f64> = (10..=20).map(|k| k as f64 / 10.0).collect();
        let grid = sweep_h_rho(&c, &hs, &[0.2, 0.5]).unwrap();
        let csv = grid_csv(&grid);
        assert_eq!(csv.lines().count(), 23);
        assert!(csv.starts_with("h,rho,t_cmt,t_tnf,t_update,speedup\n1,0.2,6.25,6.25455,12.5045,"));
    }

    #[test]
    fn svgs_are_deterministic_and_complete() {
        let c = ClusterConfig::alexnet_like();
        let range: Vec<u32> = (1..=25).collect();
        let cmp = speedup_comparison(&c, &range, &[0.2, 0.5]).unwrap();
        let a = comparison_svg(&cmp, "{\"k\":1}").unwrap();
        assert_eq!(a, comparison_svg(&cmp, "{\"k\":1}").unwrap());
        assert_eq!(a.matches("<path d=\"M").count(), 1 + 4);
        for name in ["ideal", "vanilla", "rho = 0.2", "rho = 0.5"] {
            assert!(a.contains(&format!(">{name}</text>")));
        }
        let curve = sweep_workers(&c, Strategy::Vanilla, None, &range).unwrap();
        let s = curve_svg(&curve, "").unwrap();
        assert!(s.contains(">T_cmt</text>") && s.contains(">T_tnf</text>"));
        assert!(s.ends_with("</svg>\n"));
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert_eq!(line_chart("t", "x", "y", &[], &[("a".into(), vec![])], ""), Err(ReportError::Empty("x values")));
        assert_eq!(stacked_bars("t", "y", &[], &[], ""), Err(ReportError::Empty("categories")));
        let empty = SpeedupCurve { strategy: Strategy::Vanilla, rows: vec![] };
        assert!(curve_svg(&empty, "").is_err());
    }

    #[test]
    fn metadata_is_escaped() {
        let s = line_chart("a<b", "x", "y", &[1.0, 2.0], &[("s".into(), vec![1.0, 2.0])], "<&>").unwrap();
        assert!(s.contains("<metadata>&lt;&amp;&gt;</metadata>"));
        assert!(s.contains(">a&lt;b</text>"));
    }
}
