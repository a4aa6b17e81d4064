//! Error norms, per-step monitors, convergence rates and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::femspace::{ElementGeometry, ElementValues, Field, Tabulation};
use crate::quadrature::quadrature_rule;
use crate::scheme::SchemeState;
use crate::truth::{TwinTrajectory, Truth};

/// Exactness degree of the rule used for every reported norm.
pub const ERROR_QUAD_DEGREE: usize = 8;

pub const CSV_HEADER: &str = "n,t,err_v_l2,err_w_l2,err_v_h1,err_w_h1,norm_v_l2,norm_w_l2,norm_v_h1,norm_w_h1,div_res";

/// Exact values and gradients per component at a point.
pub type Exact<'a> = &'a dyn Fn(f64, f64) -> ([f64; 2], [[f64; 2]; 2]);

/// `(||e||, |e|_1, ||u_h||, |u_h|_1)` with `e = u_h - exact`; without an exact
/// solution the error equals the field itself.
pub fn field_norms(field: &Field, exact: Option<Exact<'_>>) -> (f64, f64, f64, f64) {
    let space = field.space();
    let c = space.components();
    let tab = Tabulation::new(space.degree(), quadrature_rule(ERROR_QUAD_DEGREE).expect("degree 8 rule"));
    let mut ev = ElementValues::default();
    let mut acc = [0.0; 4];
    for t in 0..space.mesh().num_triangles() {
        let geo = ElementGeometry::new(space.mesh(), t).expect("validated mesh");
        ev.reinit(&geo, &tab);
        let nodes = space.cell_nodes(t);
        for q in 0..ev.num_points() {
            let mut val = [0.0; 2];
            let mut grad = [[0.0; 2]; 2];
            for (i, &node) in nodes.iter().enumerate() {
                let g = ev.grads[q][i];
                for k in 0..c {
                    let a = field.coeffs[node * c + k];
                    val[k] += a * ev.values[q][i];
                    grad[k][0] += a * g[0];
                    grad[k][1] += a * g[1];
                }
            }
            let (ev_val, ev_grad) = match exact {
                Some(f) => f(ev.points[q][0], ev.points[q][1]),
                None => ([0.0; 2], [[0.0; 2]; 2]),
            };
            let w = ev.jxw[q];
            for k in 0..c {
                let e = val[k] - ev_val[k];
                acc[0] += w * e * e;
                acc[2] += w * val[k] * val[k];
                for d in 0..2 {
                    let ge = grad[k][d] - ev_grad[k][d];
                    acc[1] += w * ge * ge;
                    acc[3] += w * grad[k][d] * grad[k][d];
                }
            }
        }
    }
    let r = acc.map(f64::sqrt);
    (r[0], r[1], r[2], r[3])
}

/// `||u_h - u||` by degree-8 quadrature; `exact` returns one value per component.
pub fn l2_error(field: &Field, exact: &dyn Fn(f64, f64) -> [f64; 2]) -> f64 {
    field_norms(field, Some(&|x, y| (exact(x, y), [[0.0; 2]; 2]))).0
}

/// `|u_h - u|_1`; `exact_grad` returns `[[d/dx, d/dy]; component]`.
pub fn h1_seminorm_error(field: &Field, exact_grad: &dyn Fn(f64, f64) -> [[f64; 2]; 2]) -> f64 {
    field_norms(field, Some(&|x, y| ([0.0; 2], exact_grad(x, y)))).1
}

/// `||v_h - u(t)||` against a truth's velocity.
pub fn velocity_l2_error(v: &Field, truth: &dyn Truth, t: f64) -> f64 {
    l2_error(v, &|x, y| truth.velocity(x, y, t))
}

/// `||w_h - rot u(t)||` against a truth's vorticity.
pub fn vorticity_l2_error(w: &Field, truth: &dyn Truth, t: f64) -> f64 {
    l2_error(w, &|x, y| [truth.vorticity(x, y, t), 0.0])
}

/// What the discrete state is compared with.
#[derive(Clone)]
pub enum Reference {
    Analytic(Arc<dyn Truth>),
    Twin(Arc<TwinTrajectory>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub n: usize,
    pub t: f64,
    pub err_v_l2: f64,
    pub err_w_l2: f64,
    pub err_v_h1: f64,
    pub err_w_h1: f64,
    pub norm_v_l2: f64,
    pub norm_w_l2: f64,
    pub norm_v_h1: f64,
    pub norm_w_h1: f64,
    pub div_res: f64,
}

impl StepRecord {
    fn values(&self) -> [f64; 10] {
        [
            self.t,
            self.err_v_l2,
            self.err_w_l2,
            self.err_v_h1,
            self.err_w_h1,
            self.norm_v_l2,
            self.norm_w_l2,
            self.norm_v_h1,
            self.norm_w_h1,
            self.div_res,
        ]
    }

    pub fn max_norm(&self) -> f64 {
        [self.norm_v_l2, self.norm_w_l2, self.norm_v_h1, self.norm_w_h1].into_iter().fold(0.0, f64::max)
    }
}

/// Measures a state against `reference`.
pub fn measure(state: &SchemeState, reference: &Reference, div_res: f64) -> Result<StepRecord> {
    let t = state.t;
    let (ev, eh, nv, nh, wv, wh, mv, mh);
    match reference {
        Reference::Analytic(truth) => {
            (ev, eh, nv, nh) = field_norms(&state.v_now, Some(&|x, y| (truth.velocity(x, y, t), truth.velocity_gradient(x, y, t))));
            (wv, wh, mv, mh) = field_norms(&state.w_now, Some(&|x, y| {
                let g = truth.vorticity_gradient(x, y, t);
                ([truth.vorticity(x, y, t), 0.0], [g, [0.0; 2]])
            }));
        }
        Reference::Twin(twin) => {
            let frame = twin.frame_at(t)?;
            let diff = |f: &Field, r: &[f64]| {
                let c = f.coeffs.iter().zip(r).map(|(a, b)| a - b).collect();
                Field::from_coeffs(f.space().clone(), c)
            };
            (ev, eh, _, _) = field_norms(&diff(&state.v_now, &frame.velocity)?, None);
            (wv, wh, _, _) = field_norms(&diff(&state.w_now, &frame.vorticity)?, None);
            (_, _, nv, nh) = field_norms(&state.v_now, None);
            (_, _, mv, mh) = field_norms(&state.w_now, None);
        }
    }
    Ok(StepRecord {
        n: state.n,
        t,
        err_v_l2: ev,
        err_w_l2: wv,
        err_v_h1: eh,
        err_w_h1: wh,
        norm_v_l2: nv,
        norm_w_l2: mv,
        norm_v_h1: nh,
        norm_w_h1: mh,
        div_res,
    })
}

/// Time series of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub label: String,
    pub rows: Vec<StepRecord>,
    /// Echo of the configuration as `key=value` pairs.
    pub config: Vec<(String, String)>,
    pub wall_clock_s: f64,
    pub solver_tolerance: f64,
}

impl RunReport {
    pub fn last(&self) -> Option<&StepRecord> {
        self.rows.last()
    }

    /// First time at which `metric` drops to `level` or below.
    pub fn time_to_reach(&self, level: f64, metric: impl Fn(&StepRecord) -> f64) -> Option<f64> {
        self.rows.iter().find(|r| metric(r) <= level).map(|r| r.t)
    }

    /// Value of `metric` at the recorded time closest to `t`.
    pub fn value_at(&self, t: f64, metric: impl Fn(&StepRecord) -> f64) -> Option<f64> {
        self.rows
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .map(metric)
    }
}

/// One level of a convergence study.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateRow {
    pub h: f64,
    pub err_v: f64,
    /// `None` on the first level and wherever an error is zero or non-finite.
    pub rate_v: Option<f64>,
    pub err_w: f64,
    pub rate_w: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
}

fn rate(e0: f64, e1: f64, h0: f64, h1: f64) -> Option<f64> {
    let ok = |e: f64| e.is_finite() && e > 0.0;
    (ok(e0) && ok(e1)).then(|| (e0 / e1).ln() / (h0 / h1).ln())
}

/// Observed orders `log(e_{i-1}/e_i) / log(h_{i-1}/h_i)` from `(h, err_v, err_w)` levels.
pub fn fit_rates(levels: &[(f64, f64, f64)]) -> Result<RateTable> {
    if levels.is_empty() {
        return Err(invalid("rate table needs at least one level"));
    }
    if levels.windows(2).any(|p| !(p[1].0 < p[0].0) || p[1].0 <= 0.0) {
        return Err(invalid("mesh sizes must decrease strictly"));
    }
    let rows = levels
        .iter()
        .enumerate()
        .map(|(i, &(h, ev, ew))| {
            let prev = i.checked_sub(1).map(|j| levels[j]);
            RateRow {
                h,
                err_v: ev,
                rate_v: prev.and_then(|p| rate(p.1, ev, p.0, h)),
                err_w: ew,
                rate_w: prev.and_then(|p| rate(p.2, ew, p.0, h)),
            }
        })
        .collect();
    Ok(RateTable { rows })
}

impl RateTable {
    /// CSV with `undefined` in place of missing rates.
    pub fn to_csv(&self) -> String {
        let fmt = |r: Option<f64>| r.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"));
        let mut s = String::from("h,err_v_l2,rate_v,err_w_l2,rate_w\n");
        for r in &self.rows {
            let _ = writeln!(s, "{:.16e},{:.16e},{},{:.16e},{}", r.h, r.err_v, fmt(r.rate_v), r.err_w, fmt(r.rate_w));
        }
        s
    }
}

/// Row-per-step CSV with 17 significant digits.
pub fn format_csv(report: &RunReport) -> String {
    let mut s = String::with_capacity(200 * (report.rows.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in &report.rows {
        let _ = write!(s, "{}", r.n);
        for v in r.values() {
            let _ = write!(s, ",{v:.16e}");
        }
        s.push('\n');
    }
    s
}

pub fn write_csv(report: &RunReport, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_csv(report))?;
    Ok(())
}

pub fn parse_csv(text: &str) -> Result<Vec<StepRecord>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(Error::Parse("missing or unexpected CSV header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let bad = |m: String| Error::Parse(format!("CSV row {}: {m}", i + 1));
            let cols: Vec<&str> = l.split(',').collect();
            if cols.len() != 11 {
                return Err(bad(format!("expected 11 columns, found {}", cols.len())));
            }
            let n = cols[0].parse().map_err(|e| bad(format!("{e}")))?;
            let v: Vec<f64> =
                cols[1..].iter().map(|c| c.parse::<f64>().map_err(|e| bad(format!("{e}")))).collect::<Result<_>>()?;
            Ok(StepRecord {
                n,
                t: v[0],
                err_v_l2: v[1],
                err_w_l2: v[2],
                err_v_h1: v[3],
                err_w_h1: v[4],
                norm_v_l2: v[5],
                norm_w_l2: v[6],
                norm_v_h1: v[7],
                norm_w_h1: v[8],
                div_res: v[9],
            })
        })
        .collect()
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<StepRecord>> {
    parse_csv(&fs::read_to_string(path)?)
}

/// Which column a plot shows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotMetric {
    VelocityError,
    VorticityError,
}

impl PlotMetric {
    fn get(self, r: &StepRecord) -> f64 {
        match self {
            PlotMetric::VelocityError => r.err_v_l2,
            PlotMetric::VorticityError => r.err_w_l2,
        }
    }

    fn title(self) -> &'static str {
        match self {
            PlotMetric::VelocityError => "L2 velocity error",
            PlotMetric::VorticityError => "L2 vorticity error",
        }
    }
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// SVG of `log10(metric)` against time, one labelled curve per report.
pub fn render_plot(reports: &[RunReport], metric: PlotMetric) -> String {
    let (w, h, left, right, top, bottom) = (720.0, 440.0, 70.0, 170.0, 40.0, 50.0);
    let pts: Vec<Vec<(f64, f64)>> = reports
        .iter()
        .map(|r| {
            r.rows
                .iter()
                .filter_map(|s| {
                    let v = metric.get(s);
                    (v > 0.0 && v.is_finite()).then(|| (s.t, v.log10()))
                })
                .collect()
        })
        .collect();
    let all = pts.iter().flatten();
    let (mut t0, mut t1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(t, y) in all {
        t0 = t0.min(t);
        t1 = t1.max(t);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !t0.is_finite() {
        (t0, t1, y0, y1) = (0.0, 1.0, -1.0, 0.0);
    }
    let (y0, y1) = (y0.floor(), y1.ceil().max(y0.floor() + 1.0));
    let t1 = if t1 > t0 { t1 } else { t0 + 1.0 };
    let (pw, ph) = (w - left - right, h - top - bottom);
    let sx = |t: f64| left + (t - t0) / (t1 - t0) * pw;
    let sy = |y: f64| top + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, metric.title());
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for d in (y0 as i64)..=(y1 as i64) {
        let y = sy(d as f64);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">1e{d}</text>"#, left - 6.0, y + 4.0);
    }
    for i in 0..=4 {
        let t = t0 + (t1 - t0) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{t:.3}</text>"#, sx(t), top + ph + 18.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">t</text>"#, left + pw / 2.0, h - 8.0);
    for (i, (r, p)) in reports.iter().zip(&pts).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut line = String::new();
        for &(t, y) in p {
            let _ = write!(line, "{:.2},{:.2} ", sx(t), sy(y));
        }
        let _ = writeln!(s, r#"<polyline class="curve" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, line.trim_end());
        let ly = top + 16.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text class="legend" x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, xml_escape(&r.label));
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_plot(reports: &[RunReport], metric: PlotMetric, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, render_plot(reports, metric))?;
    Ok(())
}
