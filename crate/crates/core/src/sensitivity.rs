//! Offset sensitivity analysis for the parametric estimator.
//!
//! The response model for `R^Y` receives a fixed term `delta * s` reintroducing
//! the edge that the assumption excludes: the outcome under A1, the treatment
//! under A2 and the identifying covariates under A3. One scalar `delta` scales
//! the whole term.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Interval, MissingnessAssumption, Query};
use crate::error::{Error, Result};
use crate::inference::{bootstrap_ci, BootstrapConfig};
use crate::param_em::{
    estimate_cate_param_from, EmConfig, EmStart, MissingnessModel, OffsetTerm, OutcomeModel, ParamEstimate,
};
use crate::svg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySpec {
    pub assumption: MissingnessAssumption,
    /// Increasing offsets; must contain 0.
    pub delta_grid: Vec<f64>,
    pub query: Query,
}

/// `points` equispaced values on `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

impl SensitivitySpec {
    /// 21 equispaced offsets on `[-2, 2]`.
    pub fn new(assumption: MissingnessAssumption, query: Query) -> Self {
        SensitivitySpec {
            assumption,
            delta_grid: linear_grid(-2.0, 2.0, 21),
            query,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        match self.assumption {
            MissingnessAssumption::A1 | MissingnessAssumption::A2 | MissingnessAssumption::A3 { .. } => {}
            other => {
                return Err(Error::Config(format!(
                    "sensitivity analysis needs A1, A2 or A3, got {other}"
                )))
            }
        }
        self.assumption.validate(p)?;
        if self.delta_grid.iter().any(|d| !d.is_finite()) {
            return Err(Error::Config("offset grid has non-finite values".into()));
        }
        if self.delta_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("offset grid must be strictly increasing".into()));
        }
        if !self.delta_grid.contains(&0.0) {
            return Err(Error::Config("offset grid must contain 0".into()));
        }
        Ok(())
    }

    pub fn baseline_index(&self) -> usize {
        self.delta_grid.iter().position(|&d| d == 0.0).expect("validated grid")
    }

    /// Variable multiplied by the offset.
    pub fn offset_term(&self, p: usize) -> OffsetTerm {
        match self.assumption {
            MissingnessAssumption::A1 => OffsetTerm::Outcome,
            MissingnessAssumption::A2 => OffsetTerm::Treatment,
            a => OffsetTerm::Covariates(a.identifying_columns(p)),
        }
    }

    pub fn missingness_model(&self, outcome: &OutcomeModel, p: usize, delta: f64) -> Result<MissingnessModel> {
        Ok(MissingnessModel::default_for(self.assumption, p, outcome.family)?
            .with_offset(self.offset_term(p), delta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepMode {
    /// Baseline first, then outward with each fit started from its neighbour.
    Warm,
    /// Every offset fitted from the default start, in parallel.
    Cold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub delta: f64,
    /// `None` marks a gap where the fit failed.
    pub tau: Option<f64>,
    pub interval: Option<Interval>,
    pub error: Option<String>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub points: Vec<SensitivityPoint>,
    pub baseline_index: usize,
}

impl SensitivityCurve {
    pub fn baseline(&self) -> &SensitivityPoint {
        &self.points[self.baseline_index]
    }

    pub fn gaps(&self) -> usize {
        self.points.iter().filter(|p| p.tau.is_none()).count()
    }
}

struct Sweep<'a> {
    d: &'a Dataset,
    outcome: &'a OutcomeModel,
    spec: &'a SensitivitySpec,
    em: &'a EmConfig,
    boot: Option<&'a BootstrapConfig>,
}

impl Sweep<'_> {
    fn fit(&self, delta: f64, start: Option<&EmStart>) -> Result<ParamEstimate> {
        let miss = self.spec.missingness_model(self.outcome, self.d.p(), delta)?;
        estimate_cate_param_from(self.d, self.outcome, &miss, self.em, &self.spec.query, start)
    }

    fn point(&self, delta: f64, start: Option<&EmStart>) -> (SensitivityPoint, Option<EmStart>) {
        match self.fit(delta, start) {
            Ok(est) => {
                let mut point = SensitivityPoint {
                    delta,
                    tau: Some(est.estimate.tau),
                    interval: None,
                    error: None,
                    notes: est.estimate.notes.clone(),
                };
                let next = est.fit.start();
                if let Some(cfg) = self.boot {
                    let miss = self.spec.missingness_model(self.outcome, self.d.p(), delta);
                    let from = next.clone();
                    let result = miss.and_then(|miss| {
                        bootstrap_ci(
                            self.d,
                            |rs, seed| {
                                let em = EmConfig { seed, ..self.em.clone() };
                                estimate_cate_param_from(rs, self.outcome, &miss, &em, &self.spec.query, Some(&from))
                                    .map(|e| e.estimate)
                            },
                            cfg,
                        )
                    });
                    match result {
                        Ok(b) => {
                            point.interval = b.interval;
                            for n in b.notes {
                                if !point.notes.contains(&n) {
                                    point.notes.push(n);
                                }
                            }
                        }
                        Err(e) => point.notes.push(format!("bootstrap failed: {e}")),
                    }
                }
                (point, Some(next))
            }
            Err(e) => (
                SensitivityPoint {
                    delta,
                    tau: None,
                    interval: None,
                    error: Some(e.to_string()),
                    notes: Vec::new(),
                },
                None,
            ),
        }
    }
}

/// Refits the parametric model at every offset in the grid.
///
/// Per-point failures are recorded as gaps. Bootstrap resamples at each point
/// start from that point's fit and reuse its EM settings.
pub fn sensitivity_curve(
    d: &Dataset,
    outcome: &OutcomeModel,
    spec: &SensitivitySpec,
    em: &EmConfig,
    boot: Option<&BootstrapConfig>,
    mode: SweepMode,
) -> Result<SensitivityCurve> {
    spec.validate(d.p())?;
    em.validate()?;
    if let Some(b) = boot {
        b.validate()?;
    }
    if spec.query.x.len() != d.p() {
        return Err(Error::Config(format!(
            "query has {} covariates, data has {}",
            spec.query.x.len(),
            d.p()
        )));
    }
    // Configuration errors are global, not gaps.
    spec.missingness_model(outcome, d.p(), 0.0)?.validate(d.p())?;
    outcome.validate(d.p())?;

    let sweep = Sweep { d, outcome, spec, em, boot };
    let grid = &spec.delta_grid;
    let base = spec.baseline_index();
    let points = match mode {
        SweepMode::Cold => grid.par_iter().map(|&delta| sweep.point(delta, None).0).collect(),
        SweepMode::Warm => {
            let mut slots: Vec<Option<SensitivityPoint>> = vec![None; grid.len()];
            let (p0, s0) = sweep.point(grid[base], None);
            slots[base] = Some(p0);
            for range in [
                (base + 1..grid.len()).collect::<Vec<_>>(),
                (0..base).rev().collect::<Vec<_>>(),
            ] {
                let mut start = s0.clone();
                for i in range {
                    let (p, s) = sweep.point(grid[i], start.as_ref());
                    if s.is_some() {
                        start = s;
                    }
                    slots[i] = Some(p);
                }
            }
            slots.into_iter().map(|p| p.expect("every slot visited")).collect()
        }
    };
    Ok(SensitivityCurve {
        points,
        baseline_index: base,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Columns `delta,tau,lower,upper`; gaps and absent intervals are empty fields.
pub fn write_curve_csv<W: Write>(curve: &SensitivityCurve, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["delta", "tau", "lower", "upper"])?;
    for p in &curve.points {
        w.write_record([
            format!("{}", p.delta),
            fmt_opt(p.tau),
            fmt_opt(p.interval.map(|i| i.lower)),
            fmt_opt(p.interval.map(|i| i.upper)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Line chart of the curve with its interval band; the baseline offset is
/// marked by a dashed vertical line.
pub fn render_curve_svg(curve: &SensitivityCurve, title: &str) -> String {
    let xs: Vec<f64> = curve.points.iter().map(|p| p.delta).collect();
    let mut ys: Vec<f64> = curve.points.iter().filter_map(|p| p.tau).collect();
    for i in curve.points.iter().filter_map(|p| p.interval) {
        ys.push(i.lower);
        ys.push(i.upper);
    }
    ys.push(0.0);
    let frame = svg::Frame::new(svg::range(&xs), svg::range(&ys));
    let mut out = frame.open(title, "offset", "effect");

    // Interval band, one polygon per run of points without gaps.
    for run in runs(curve, |p| p.interval.is_some()) {
        let upper: Vec<(f64, f64)> = run.iter().map(|p| (p.delta, p.interval.unwrap().upper)).collect();
        let lower: Vec<(f64, f64)> = run.iter().rev().map(|p| (p.delta, p.interval.unwrap().lower)).collect();
        let pts: Vec<String> = upper
            .iter()
            .chain(&lower)
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.x(x), frame.y(y)))
            .collect();
        let _ = writeln!(
            out,
            r##"<polygon points="{}" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>"##,
            pts.join(" ")
        );
    }
    for run in runs(curve, |p| p.tau.is_some()) {
        let pts: Vec<String> = run
            .iter()
            .map(|p| format!("{:.2},{:.2}", frame.x(p.delta), frame.y(p.tau.unwrap())))
            .collect();
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="#08519c" stroke-width="2"/>"##,
            pts.join(" ")
        );
        for p in run {
            let _ = writeln!(
                out,
                r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#08519c"/>"##,
                frame.x(p.delta),
                frame.y(p.tau.unwrap())
            );
        }
    }
    out.push_str(&frame.hline(0.0, "#888888"));
    let b = curve.baseline().delta;
    let _ = writeln!(
        out,
        r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#cb181d" stroke-dasharray="5,4"/>"##,
        frame.top(),
        frame.bottom(),
        x = frame.x(b)
    );
    let gaps = curve.gaps();
    if gaps > 0 {
        out.push_str(&frame.note(&format!("{gaps} offsets failed to fit")));
    }
    out.push_str(svg::CLOSE);
    out
}

fn runs(curve: &SensitivityCurve, keep: impl Fn(&SensitivityPoint) -> bool) -> Vec<Vec<&SensitivityPoint>> {
    let mut out: Vec<Vec<&SensitivityPoint>> = Vec::new();
    let mut cur = Vec::new();
    for p in &curve.points {
        if keep(p) {
            cur.push(p);
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}
