//! Simulation-study driver: replicate datasets per scenario, run each
//! estimator, and summarize percent bias (or raw error for null scenarios).

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{cca_fit, miss_indicator_fit, oracle_fit};
use crate::data::{CateEstimate, Query};
use crate::dgp::{simulate, true_cate, ScenarioConfig, SimulatedData, DEFAULT_CALIBRATION_SEED};
use crate::error::{Error, Result};
use crate::np2sls::{estimate_cate_np_tuned, select_tuning, NpTuning, RegularizationConfig, SieveConfig};
use crate::param_em::{estimate_cate_param, EmConfig, MissingnessModel, OutcomeModel};
use crate::rng::derive_seed;
use crate::stats::{mean, quantile_sorted, sorted};
use crate::svg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Oracle,
    Cca,
    MissInd,
    Np,
    Para,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::Oracle,
        EstimatorKind::Cca,
        EstimatorKind::MissInd,
        EstimatorKind::Np,
        EstimatorKind::Para,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::Oracle => "oracle",
            EstimatorKind::Cca => "cca",
            EstimatorKind::MissInd => "miss-ind",
            EstimatorKind::Np => "np",
            EstimatorKind::Para => "para",
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.label() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown estimator {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub scenarios: Vec<ScenarioConfig>,
    pub estimators: Vec<EstimatorKind>,
    pub replicates: usize,
    pub n: usize,
    pub seed: u64,
    pub em: EmConfig,
    pub sieve: SieveConfig,
    pub reg: RegularizationConfig,
    /// Where `run_study` writes its CSV and SVG files, if anywhere.
    pub output_dir: Option<PathBuf>,
    /// Print one line per finished replicate to stderr.
    pub log: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            scenarios: Vec::new(),
            estimators: vec![EstimatorKind::Cca, EstimatorKind::Np, EstimatorKind::Para],
            replicates: 100,
            n: 1000,
            seed: 0,
            em: EmConfig::default(),
            sieve: SieveConfig::default(),
            reg: RegularizationConfig::default(),
            output_dir: None,
            log: false,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::Config("study has no scenarios".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("study has no estimators".into()));
        }
        if self.replicates == 0 || self.n == 0 {
            return Err(Error::Config("replicates and n must be positive".into()));
        }
        for s in &self.scenarios {
            s.validate()?;
        }
        self.em.validate()?;
        self.reg.validate()?;
        Ok(())
    }
}

/// Seed of replicate `r` in scenario `s`.
pub fn replicate_seed(seed: u64, scenario: usize, replicate: usize) -> u64 {
    derive_seed(derive_seed(seed, scenario as u64), replicate as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub scenario: String,
    pub estimator: EstimatorKind,
    pub replicate: usize,
    pub tau_hat: Option<f64>,
    pub true_tau: f64,
    /// `100 (tau_hat - tau) / tau`; absent when `tau = 0`.
    pub percent_bias: Option<f64>,
    /// `tau_hat - tau`; present only when `tau = 0`.
    pub error: Option<f64>,
    pub status: String,
}

impl ReplicateRecord {
    fn new(scenario: &str, estimator: EstimatorKind, replicate: usize, true_tau: f64, result: Result<f64>) -> Self {
        let (tau_hat, status) = match result {
            Ok(t) if t.is_finite() => (Some(t), "ok".to_string()),
            Ok(t) => (None, format!("failed: non-finite estimate {t}")),
            Err(e) => (None, format!("failed: {e}")),
        };
        let null = true_tau == 0.0;
        ReplicateRecord {
            scenario: scenario.to_string(),
            estimator,
            replicate,
            tau_hat,
            true_tau,
            percent_bias: tau_hat.filter(|_| !null).map(|t| 100.0 * (t - true_tau) / true_tau),
            error: tau_hat.filter(|_| null).map(|t| t - true_tau),
            status,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    /// Percent bias, or the raw error for a null scenario.
    pub fn metric(&self) -> Option<f64> {
        self.percent_bias.or(self.error)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub estimator: EstimatorKind,
    /// `percent_bias` or `error`.
    pub metric: String,
    pub ok: usize,
    pub failed: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub records: Vec<ReplicateRecord>,
    pub summary: Vec<SummaryRow>,
}

impl StudyReport {
    pub fn row(&self, scenario: &str, estimator: EstimatorKind) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.scenario == scenario && r.estimator == estimator)
    }
}

/// One group per `(scenario, estimator)` in first-appearance order; failed
/// records are counted but excluded from the statistics.
pub fn summarize(records: &[ReplicateRecord]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for (scenario, estimator) in group_keys(records) {
        let group: Vec<&ReplicateRecord> = records
            .iter()
            .filter(|r| r.scenario == scenario && r.estimator == estimator)
            .collect();
        let values: Vec<f64> = group.iter().filter(|r| r.is_ok()).filter_map(|r| r.metric()).collect();
        let null = group.first().is_some_and(|r| r.true_tau == 0.0);
        let (m, med, q1, q3) = if values.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        } else {
            let s = sorted(&values);
            (
                mean(&values),
                quantile_sorted(&s, 0.5),
                quantile_sorted(&s, 0.25),
                quantile_sorted(&s, 0.75),
            )
        };
        out.push(SummaryRow {
            scenario,
            estimator,
            metric: if null { "error" } else { "percent_bias" }.into(),
            ok: values.len(),
            failed: group.len() - values.len(),
            mean: m,
            median: med,
            q1,
            q3,
            iqr: q3 - q1,
        });
    }
    out
}

fn group_keys(records: &[ReplicateRecord]) -> Vec<(String, EstimatorKind)> {
    let mut keys: Vec<(String, EstimatorKind)> = Vec::new();
    for r in records {
        if !keys.iter().any(|(s, e)| *s == r.scenario && *e == r.estimator) {
            keys.push((r.scenario.clone(), r.estimator));
        }
    }
    keys
}

struct ScenarioRun<'a> {
    cfg: &'a StudyConfig,
    scenario: ScenarioConfig,
    index: usize,
    id: String,
    query: Query,
    true_tau: f64,
    np_tuning: Option<std::result::Result<NpTuning, String>>,
}

impl ScenarioRun<'_> {
    fn estimate(&self, kind: EstimatorKind, sim: &SimulatedData, seed: u64) -> Result<CateEstimate> {
        let y_kind = self.scenario.y_kind;
        let outcome = OutcomeModel::standard(y_kind, 1);
        match kind {
            EstimatorKind::Oracle => oracle_fit(sim, &outcome, &self.query),
            EstimatorKind::Cca => cca_fit(&sim.observed, &outcome, &self.query),
            EstimatorKind::MissInd => miss_indicator_fit(&sim.observed, &outcome, &self.query),
            EstimatorKind::Para => {
                let miss = MissingnessModel::default_for(self.scenario.assumption, 1, outcome.family)?;
                let em = EmConfig {
                    seed,
                    ..self.cfg.em.clone()
                };
                Ok(estimate_cate_param(&sim.observed, &outcome, &miss, &em, &self.query)?.estimate)
            }
            EstimatorKind::Np => match self.np_tuning.as_ref() {
                Some(Ok(t)) => estimate_cate_np_tuned(&sim.observed, t, &self.query),
                Some(Err(e)) => Err(Error::Estimation(format!("tuning failed on replicate 1: {e}"))),
                None => Err(Error::Estimation("no tuning".into())),
            },
        }
    }

    fn replicate(&self, r: usize) -> Vec<ReplicateRecord> {
        let seed = replicate_seed(self.cfg.seed, self.index, r);
        let sim = simulate(&self.scenario, self.cfg.n, seed);
        let records: Vec<ReplicateRecord> = self
            .cfg
            .estimators
            .iter()
            .map(|&k| {
                let result = sim
                    .as_ref()
                    .map_err(|e| Error::Estimation(format!("simulation failed: {e}")))
                    .and_then(|s| self.estimate(k, s, derive_seed(seed, 1)))
                    .map(|e| e.tau);
                ReplicateRecord::new(&self.id, k, r, self.true_tau, result)
            })
            .collect();
        if self.cfg.log {
            let parts: Vec<String> = records
                .iter()
                .map(|rec| match rec.tau_hat {
                    Some(t) => format!("{}={t:.4}", rec.estimator),
                    None => format!("{}=failed", rec.estimator),
                })
                .collect();
            eprintln!("{} rep {}: {}", self.id, r + 1, parts.join(" "));
        }
        records
    }
}

/// Runs every scenario and estimator for `cfg.replicates` replicates.
///
/// Output depends only on `cfg`. Nonparametric tuning is chosen once per
/// scenario on replicate 1 and reused for all replicates.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let mut records = Vec::new();
    for (index, sc) in cfg.scenarios.iter().enumerate() {
        let scenario = sc.calibrated(DEFAULT_CALIBRATION_SEED)?;
        let query = scenario.default_query();
        let true_tau = true_cate(&scenario, &query.x, query.t1, query.t0);
        let np_tuning = cfg.estimators.contains(&EstimatorKind::Np).then(|| {
            simulate(&scenario, cfg.n, replicate_seed(cfg.seed, index, 0))
                .and_then(|s| select_tuning(&s.observed, scenario.assumption, &cfg.sieve, &cfg.reg))
                .map_err(|e| e.to_string())
        });
        let run = ScenarioRun {
            cfg,
            id: scenario.id(),
            scenario,
            index,
            query,
            true_tau,
            np_tuning,
        };
        let per_rep: Vec<Vec<ReplicateRecord>> = (0..cfg.replicates).into_par_iter().map(|r| run.replicate(r)).collect();
        records.extend(per_rep.into_iter().flatten());
    }
    let report = StudyReport {
        summary: summarize(&records),
        records,
    };
    if let Some(dir) = &cfg.output_dir {
        write_study(&report, dir)?;
    }
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_records_csv<W: Write>(records: &[ReplicateRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "scenario",
        "estimator",
        "replicate",
        "tau_hat",
        "true_tau",
        "percent_bias",
        "error",
        "status",
    ])?;
    for r in records {
        w.write_record([
            r.scenario.clone(),
            r.estimator.to_string(),
            r.replicate.to_string(),
            fmt_opt(r.tau_hat),
            r.true_tau.to_string(),
            fmt_opt(r.percent_bias),
            fmt_opt(r.error),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: std::io::Read>(reader: R) -> Result<Vec<ReplicateRecord>> {
    let mut rd = csv::Reader::from_reader(reader);
    let opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| Error::InvalidInput(format!("bad number {s:?}")))
        }
    };
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("");
        out.push(ReplicateRecord {
            scenario: field(0).to_string(),
            estimator: field(1).parse()?,
            replicate: field(2)
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad replicate {:?}", field(2))))?,
            tau_hat: opt(field(3))?,
            true_tau: opt(field(4))?.ok_or_else(|| Error::InvalidInput("missing true_tau".into()))?,
            percent_bias: opt(field(5))?,
            error: opt(field(6))?,
            status: field(7).to_string(),
        });
    }
    Ok(out)
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "scenario", "estimator", "metric", "ok", "failed", "mean", "median", "q1", "q3", "iqr",
    ])?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.estimator.to_string(),
            r.metric.clone(),
            r.ok.to_string(),
            r.failed.to_string(),
            r.mean.to_string(),
            r.median.to_string(),
            r.q1.to_string(),
            r.q3.to_string(),
            r.iqr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `replicates.csv`, `summary.csv` and `boxplot.svg` into `dir`.
pub fn write_study(report: &StudyReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_records_csv(&report.records, fs::File::create(dir.join("replicates.csv"))?)?;
    write_summary_csv(&report.summary, fs::File::create(dir.join("summary.csv"))?)?;
    fs::write(dir.join("boxplot.svg"), render_boxplot(&report.records, "Simulation study"))?;
    Ok(())
}

/// Tukey box statistics with type-7 quartiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Most extreme observations within 1.5 IQR of the quartiles.
    pub whisker_lo: f64,
    pub whisker_hi: f64,
}

pub fn box_stats(values: &[f64]) -> Option<(BoxStats, Vec<f64>)> {
    if values.is_empty() {
        return None;
    }
    let s = sorted(values);
    let q1 = quantile_sorted(&s, 0.25);
    let q3 = quantile_sorted(&s, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = s.iter().copied().filter(|v| *v >= lo_fence && *v <= hi_fence).collect();
    let outliers = s.iter().copied().filter(|v| *v < lo_fence || *v > hi_fence).collect();
    Some((
        BoxStats {
            median: quantile_sorted(&s, 0.5),
            q1,
            q3,
            whisker_lo: inside.first().copied().unwrap_or(q1),
            whisker_hi: inside.last().copied().unwrap_or(q3),
        },
        outliers,
    ))
}

const PALETTE: [&str; 5] = ["#4daf4a", "#377eb8", "#ff7f00", "#984ea3", "#e41a1c"];

/// One box per `(scenario, estimator)` of the record metric, in
/// first-appearance order. Groups without successful records are skipped and
/// listed in a note.
pub fn render_boxplot(records: &[ReplicateRecord], title: &str) -> String {
    let mut boxes = Vec::new();
    let mut skipped = Vec::new();
    for (scenario, estimator) in group_keys(records) {
        let values: Vec<f64> = records
            .iter()
            .filter(|r| r.scenario == scenario && r.estimator == estimator && r.is_ok())
            .filter_map(|r| r.metric())
            .collect();
        match box_stats(&values) {
            Some((b, out)) => boxes.push((scenario, estimator, b, out)),
            None => skipped.push(format!("{scenario}/{estimator}")),
        }
    }
    let mut all: Vec<f64> = vec![0.0];
    for (_, _, b, out) in &boxes {
        all.extend([b.whisker_lo, b.whisker_hi]);
        all.extend(out);
    }
    let slot = 44.0;
    let width = svg::WIDTH.max(110.0 + slot * boxes.len() as f64);
    let frame = svg::Frame::new((0.0, boxes.len().max(1) as f64), svg::range(&all)).with_width(width);
    let metric = if records.iter().any(|r| r.percent_bias.is_some()) {
        "percent bias"
    } else {
        "estimation error"
    };
    let mut s = frame.open(title, "", metric);
    s.push_str(&frame.hline(0.0, "#888888"));
    for (i, (scenario, estimator, b, out)) in boxes.iter().enumerate() {
        let c = frame.x(i as f64 + 0.5);
        let half = 0.3 * (frame.x(1.0) - frame.x(0.0));
        let color = PALETTE[EstimatorKind::ALL.iter().position(|k| k == estimator).unwrap_or(0)];
        let (y1, y3, ym) = (frame.y(b.q1), frame.y(b.q3), frame.y(b.median));
        let _ = writeln!(s, r#"<g><title>{}</title>"#, svg::escape(&format!("{scenario} {estimator}")));
        let _ = writeln!(
            s,
            r#"<line x1="{c:.2}" y1="{:.2}" x2="{c:.2}" y2="{y3:.2}" stroke="black"/><line x1="{c:.2}" y1="{y1:.2}" x2="{c:.2}" y2="{:.2}" stroke="black"/>"#,
            frame.y(b.whisker_hi),
            frame.y(b.whisker_lo)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{y3:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.6" stroke="black"/>"#,
            c - half,
            2.0 * half,
            (y1 - y3).max(0.0)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ym:.2}" x2="{:.2}" y2="{ym:.2}" stroke="black" stroke-width="2"/>"#,
            c - half,
            c + half
        );
        for v in out {
            let _ = writeln!(s, r#"<circle cx="{c:.2}" cy="{:.2}" r="2.5" fill="none" stroke="black"/>"#, frame.y(*v));
        }
        let _ = writeln!(
            s,
            r#"<text x="{c:.2}" y="{:.2}" text-anchor="end" font-size="10" transform="rotate(-45 {c:.2} {:.2})">{}</text></g>"#,
            frame.bottom() + 14.0,
            frame.bottom() + 14.0,
            svg::escape(&format!("{estimator}"))
        );
    }
    if !skipped.is_empty() {
        s.push_str(&frame.note(&format!("no successful replicates: {}", skipped.join(", "))));
    }
    s.push_str(svg::CLOSE);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{MissingnessAssumption, VariableKind::Binary};

    fn rec(scenario: &str, estimator: EstimatorKind, v: f64) -> ReplicateRecord {
        ReplicateRecord::new(scenario, estimator, 0, 1.0, Ok(1.0 + v / 100.0))
    }

    #[test]
    fn record_metrics() {
        let r = ReplicateRecord::new("s", EstimatorKind::Cca, 3, 0.5, Ok(0.6));
        assert!((r.percent_bias.unwrap() - 20.0).abs() < 1e-12);
        assert!(r.error.is_none());
        let r = ReplicateRecord::new("s", EstimatorKind::Cca, 3, 0.0, Ok(0.1));
        assert_eq!(r.error, Some(0.1));
        assert!(r.percent_bias.is_none());
        let r = ReplicateRecord::new("s", EstimatorKind::Np, 3, 0.5, Err(Error::Solver("x".into())));
        assert!(!r.is_ok() && r.metric().is_none());
        assert!(r.status.starts_with("failed"));
    }

    #[test]
    fn box_statistics_flag_outliers() {
        let (b, out) = box_stats(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!(b.median, 3.0);
        assert_eq!((b.q1, b.q3), (2.0, 4.0));
        assert_eq!(b.whisker_hi, 4.0);
        assert_eq!(b.whisker_lo, 1.0);
        assert_eq!(out, vec![100.0]);
        let (b, out) = box_stats(&[5.0]).unwrap();
        assert_eq!((b.q1, b.median, b.q3, b.whisker_lo, b.whisker_hi), (5.0, 5.0, 5.0, 5.0, 5.0));
        assert!(out.is_empty());
        assert!(box_stats(&[]).is_none());
    }

    #[test]
    fn boxplot_is_deterministic_and_notes_empty_groups() {
        let mut records: Vec<ReplicateRecord> = [1.0, 2.0, 3.0, 4.0, 100.0]
            .iter()
            .map(|&v| rec("a", EstimatorKind::Cca, v))
            .collect();
        records.push(ReplicateRecord::new("a", EstimatorKind::Np, 0, 1.0, Err(Error::Solver("x".into()))));
        let a = render_boxplot(&records, "t");
        assert_eq!(a, render_boxplot(&records, "t"));
        assert_eq!(a.matches("<rect x=").count(), 1);
        assert_eq!(a.matches("<circle").count(), 1);
        assert!(a.contains("no successful replicates: a/np"));
    }

    #[test]
    fn summary_matches_recomputation_from_csv() {
        let cfg = StudyConfig {
            scenarios: vec![ScenarioConfig::standard(Binary, Binary, Binary, MissingnessAssumption::A1)],
            estimators: vec![EstimatorKind::Oracle, EstimatorKind::Cca],
            replicates: 10,
            n: 300,
            seed: 9,
            ..StudyConfig::default()
        };
        let report = run_study(&cfg).unwrap();
        assert_eq!(report.records.len(), 20);
        let row = report.row(&cfg.scenarios[0].id(), EstimatorKind::Oracle).unwrap();
        assert_eq!(row.ok, 10);
        assert!(row.mean.is_finite());
        let mut buf = Vec::new();
        write_records_csv(&report.records, &mut buf).unwrap();
        let back = read_records_csv(buf.as_slice()).unwrap();
        assert_eq!(back, report.records);
        assert_eq!(summarize(&back), report.summary);
        assert_eq!(run_study(&cfg).unwrap(), report);
    }

    #[test]
    fn estimator_names_round_trip() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.label().parse::<EstimatorKind>().unwrap(), k);
            let j = serde_json::to_string(&k).unwrap();
            assert_eq!(j, format!("\"{}\"", k.label()));
        }
        assert!("mi".parse::<EstimatorKind>().is_err());
    }
}
