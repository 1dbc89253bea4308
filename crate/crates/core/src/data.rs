//! Partially observed `(X, T, Y)` records and the shared subsetting primitives.
//!
//! Missing values are always represented as `None`; the response indicators are
//! stored next to the values so that inconsistent records can be detected by
//! [`validate_dataset`] rather than silently repaired.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariableKind {
    Binary,
    Continuous,
}

impl VariableKind {
    pub fn is_binary(self) -> bool {
        matches!(self, VariableKind::Binary)
    }
}

/// One sampled unit. A value is present iff its indicator is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub x: Vec<Option<f64>>,
    pub t: Option<f64>,
    pub y: Option<f64>,
    pub rx: Vec<bool>,
    pub rt: bool,
    pub ry: bool,
}

impl Unit {
    /// A fully observed unit.
    pub fn complete(x: Vec<f64>, t: f64, y: f64) -> Self {
        let rx = vec![true; x.len()];
        Unit {
            x: x.into_iter().map(Some).collect(),
            t: Some(t),
            y: Some(y),
            rx,
            rt: true,
            ry: true,
        }
    }

    /// Masks latent values according to the given indicators.
    pub fn masked(x: &[f64], t: f64, y: f64, rx: &[bool], rt: bool, ry: bool) -> Self {
        Unit {
            x: x.iter()
                .zip(rx)
                .map(|(&v, &r)| if r { Some(v) } else { None })
                .collect(),
            t: rt.then_some(t),
            y: ry.then_some(y),
            rx: rx.to_vec(),
            rt,
            ry,
        }
    }

    pub fn xt_observed(&self) -> bool {
        self.rt && self.rx.iter().all(|&r| r)
    }

    pub fn is_complete(&self) -> bool {
        self.xt_observed() && self.ry
    }

    /// Covariate vector, if every component is observed.
    pub fn x_values(&self) -> Option<Vec<f64>> {
        self.x.iter().copied().collect()
    }
}

/// Which arrow into the outcome response indicator is excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum MissingnessAssumption {
    Mcar,
    Mar,
    /// `R^Y` independent of `Y` given `(X, T, R^X, R^T)`.
    A1,
    /// `R^Y` independent of `T` given `(X, Y, R^X, R^T)`.
    A2,
    /// `R^Y` independent of the identifying covariate given `(T, Y, R^X, R^T, X^c)`.
    /// `None` means every covariate is identifying.
    A3 {
        #[serde(default)]
        identifying_covariate: Option<usize>,
    },
    General,
}

impl MissingnessAssumption {
    pub const fn a3() -> Self {
        MissingnessAssumption::A3 {
            identifying_covariate: None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            MissingnessAssumption::Mcar => "MCAR",
            MissingnessAssumption::Mar => "MAR",
            MissingnessAssumption::A1 => "A1",
            MissingnessAssumption::A2 => "A2",
            MissingnessAssumption::A3 { .. } => "A3",
            MissingnessAssumption::General => "General",
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if let MissingnessAssumption::A3 {
            identifying_covariate: Some(j),
        } = self
        {
            if *j >= p {
                return Err(Error::Config(format!(
                    "identifying covariate index {j} out of range for {p} covariates"
                )));
            }
        }
        Ok(())
    }

    /// Covariate columns playing the identifying role under A3.
    pub fn identifying_columns(&self, p: usize) -> Vec<usize> {
        match self {
            MissingnessAssumption::A3 {
                identifying_covariate: Some(j),
            } => vec![*j],
            _ => (0..p).collect(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (head, idx) = match lower.split_once(':') {
            Some((h, i)) => (h.to_string(), Some(i.to_string())),
            None => (lower.clone(), None),
        };
        let a = match head.as_str() {
            "mcar" => MissingnessAssumption::Mcar,
            "mar" => MissingnessAssumption::Mar,
            "a1" => MissingnessAssumption::A1,
            "a2" => MissingnessAssumption::A2,
            "a3" => MissingnessAssumption::A3 {
                identifying_covariate: idx
                    .as_deref()
                    .map(|i| {
                        i.parse::<usize>()
                            .map_err(|_| Error::Config(format!("bad covariate index in {s:?}")))
                    })
                    .transpose()?,
            },
            "general" => MissingnessAssumption::General,
            _ => return Err(Error::Config(format!("unknown assumption {s:?}"))),
        };
        if idx.is_some() && !matches!(a, MissingnessAssumption::A3 { .. }) {
            return Err(Error::Config(format!(
                "only A3 accepts an identifying covariate index: {s:?}"
            )));
        }
        Ok(a)
    }
}

impl fmt::Display for MissingnessAssumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub units: Vec<Unit>,
    pub x_kinds: Vec<VariableKind>,
    pub t_kind: VariableKind,
    pub y_kind: VariableKind,
}

impl Dataset {
    pub fn new(
        units: Vec<Unit>,
        x_kinds: Vec<VariableKind>,
        t_kind: VariableKind,
        y_kind: VariableKind,
    ) -> Self {
        Dataset {
            units,
            x_kinds,
            t_kind,
            y_kind,
        }
    }

    pub fn n(&self) -> usize {
        self.units.len()
    }

    pub fn p(&self) -> usize {
        self.x_kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Same kinds, different units.
    pub fn with_units(&self, units: Vec<Unit>) -> Self {
        Dataset {
            units,
            x_kinds: self.x_kinds.clone(),
            t_kind: self.t_kind,
            y_kind: self.y_kind,
        }
    }

    pub fn filter<F: Fn(&Unit) -> bool>(&self, keep: F) -> Self {
        self.with_units(self.units.iter().filter(|u| keep(u)).cloned().collect())
    }

    /// Rows drawn by index, with repetition allowed.
    pub fn resample(&self, indices: &[usize]) -> Self {
        self.with_units(indices.iter().map(|&i| self.units[i].clone()).collect())
    }

    /// Fraction of missing entries per variable: `(x columns, t, y)`.
    pub fn missing_rates(&self) -> (Vec<f64>, f64, f64) {
        let n = self.n().max(1) as f64;
        let mut rx = vec![0.0; self.p()];
        let mut rt = 0.0;
        let mut ry = 0.0;
        for u in &self.units {
            for (acc, &r) in rx.iter_mut().zip(&u.rx) {
                if !r {
                    *acc += 1.0;
                }
            }
            if !u.rt {
                rt += 1.0;
            }
            if !u.ry {
                ry += 1.0;
            }
        }
        (rx.into_iter().map(|c| c / n).collect(), rt / n, ry / n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rule {
    /// Covariate vector length disagrees with the declared kinds.
    Dimension,
    /// Value present with indicator 0, or absent with indicator 1.
    IndicatorMismatch,
    /// Binary column holds something other than 0 or 1.
    Kind,
    /// Observed value is NaN or infinite.
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub row: usize,
    pub variable: String,
    pub rule: Rule,
}

/// Every broken [`Unit`] invariant, in row order.
pub fn validate_dataset(d: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let p = d.p();
    for (row, u) in d.units.iter().enumerate() {
        if u.x.len() != p || u.rx.len() != p {
            out.push(Violation {
                row,
                variable: "x".into(),
                rule: Rule::Dimension,
            });
            continue;
        }
        let mut check = |name: String, v: Option<f64>, r: bool, kind: VariableKind| {
            match (v, r) {
                (Some(_), false) | (None, true) => out.push(Violation {
                    row,
                    variable: name,
                    rule: Rule::IndicatorMismatch,
                }),
                (Some(val), true) if !val.is_finite() => out.push(Violation {
                    row,
                    variable: name,
                    rule: Rule::NonFinite,
                }),
                (Some(val), true) if kind.is_binary() && val != 0.0 && val != 1.0 => {
                    out.push(Violation {
                        row,
                        variable: name,
                        rule: Rule::Kind,
                    })
                }
                _ => {}
            }
        };
        for j in 0..p {
            check(format!("x{}", j + 1), u.x[j], u.rx[j], d.x_kinds[j]);
        }
        check("t".into(), u.t, u.rt, d.t_kind);
        check("y".into(), u.y, u.ry, d.y_kind);
    }
    out
}

/// Units with every covariate and the treatment observed, order preserved.
pub fn subset_observed_xt(d: &Dataset) -> Dataset {
    d.filter(Unit::xt_observed)
}

/// Units with `R^X = R^T = R^Y = 1`, order preserved.
pub fn complete_cases(d: &Dataset) -> Dataset {
    d.filter(Unit::is_complete)
}

/// Covariate query point and the pair of treatment levels being contrasted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub x: Vec<f64>,
    pub t1: f64,
    pub t0: f64,
}

impl Query {
    pub fn new(x: Vec<f64>, t1: f64, t0: f64) -> Self {
        Query { x, t1, t0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateEstimate {
    pub tau: f64,
    pub t1: f64,
    pub t0: f64,
    pub x_query: Vec<f64>,
    pub estimator: String,
    pub interval: Option<Interval>,
    /// Free-form notes (warnings, flags such as `null-identified`).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    /// Named numeric diagnostics.
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub diagnostics: std::collections::BTreeMap<String, f64>,
}

impl CateEstimate {
    pub fn new(tau: f64, query: &Query, estimator: impl Into<String>) -> Self {
        CateEstimate {
            tau,
            t1: query.t1,
            t0: query.t0,
            x_query: query.x.clone(),
            estimator: estimator.into(),
            interval: None,
            notes: Vec::new(),
            diagnostics: Default::default(),
        }
    }

    pub fn has_note(&self, note: &str) -> bool {
        self.notes.iter().any(|n| n == note)
    }

    /// A percentile interval may legitimately exclude the point estimate; this
    /// only reports it.
    pub fn interval_excludes_estimate(&self) -> bool {
        self.interval
            .map(|i| self.tau < i.lower || self.tau > i.upper)
            .unwrap_or(false)
    }
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

fn parse_value(field: &str, row: usize, col: &str) -> Result<Option<f64>> {
    let f = field.trim();
    if f.is_empty() {
        return Ok(None);
    }
    f.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::InvalidInput(format!("row {row}: cannot parse {col}={f:?}")))
}

fn parse_indicator(field: &str, row: usize, col: &str) -> Result<bool> {
    match field.trim() {
        "1" => Ok(true),
        "0" => Ok(false),
        "" => Err(Error::InvalidInput(format!(
            "row {row}: missing response indicator {col}"
        ))),
        other => Err(Error::InvalidInput(format!(
            "row {row}: indicator {col} must be 0 or 1, got {other:?}"
        ))),
    }
}

/// Reads `x1..xp,t,y,rx1..rxp,rt,ry` with empty fields for missing values.
/// Kinds are supplied by the caller; `x_kinds.len()` must match the header.
pub fn read_csv<R: Read>(
    reader: R,
    x_kinds: Vec<VariableKind>,
    t_kind: VariableKind,
    y_kind: VariableKind,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let p = x_kinds.len();
    let expected = csv_header(p);
    if header != expected {
        return Err(Error::InvalidInput(format!(
            "unexpected header {header:?}, expected {expected:?}"
        )));
    }
    let mut units = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let mut x = Vec::with_capacity(p);
        let mut rx = Vec::with_capacity(p);
        for j in 0..p {
            x.push(parse_value(field(j), row, &expected[j])?);
            rx.push(parse_indicator(field(p + 2 + j), row, &expected[p + 2 + j])?);
        }
        let t = parse_value(field(p), row, "t")?;
        let y = parse_value(field(p + 1), row, "y")?;
        let rt = parse_indicator(field(2 * p + 2), row, "rt")?;
        let ry = parse_indicator(field(2 * p + 3), row, "ry")?;
        units.push(Unit {
            x,
            t,
            y,
            rx,
            rt,
            ry,
        });
    }
    Ok(Dataset::new(units, x_kinds, t_kind, y_kind))
}

pub fn read_csv_path(
    path: &Path,
    x_kinds: Vec<VariableKind>,
    t_kind: VariableKind,
    y_kind: VariableKind,
) -> Result<Dataset> {
    read_csv(std::fs::File::open(path)?, x_kinds, t_kind, y_kind)
}

pub fn csv_header(p: usize) -> Vec<String> {
    let mut h: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    h.push("t".into());
    h.push("y".into());
    h.extend((1..=p).map(|j| format!("rx{j}")));
    h.push("rt".into());
    h.push("ry".into());
    h
}

fn fmt_value(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

fn fmt_indicator(r: bool) -> &'static str {
    if r {
        "1"
    } else {
        "0"
    }
}

pub fn write_csv<W: Write>(d: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(csv_header(d.p()))?;
    for u in &d.units {
        let mut rec: Vec<String> = u.x.iter().map(|&v| fmt_value(v)).collect();
        rec.push(fmt_value(u.t));
        rec.push(fmt_value(u.y));
        rec.extend(u.rx.iter().map(|&r| fmt_indicator(r).to_string()));
        rec.push(fmt_indicator(u.rt).into());
        rec.push(fmt_indicator(u.ry).into());
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use VariableKind::*;

    fn mixed() -> Dataset {
        let mut units = Vec::new();
        for i in 0..10 {
            let rx = i % 3 != 0;
            let rt = i % 4 != 1;
            let ry = i % 2 == 0;
            units.push(Unit::masked(&[i as f64], 1.0, i as f64, &[rx], rt, ry));
        }
        Dataset::new(units, vec![Continuous], Binary, Continuous)
    }

    #[test]
    fn fully_observed_is_valid() {
        let d = Dataset::new(
            vec![Unit::complete(vec![1.0, 0.3], 0.0, 2.5); 4],
            vec![Binary, Continuous],
            Binary,
            Continuous,
        );
        assert!(validate_dataset(&d).is_empty());
    }

    #[test]
    fn present_value_with_zero_indicator_is_flagged() {
        let mut d = Dataset::new(
            vec![Unit::complete(vec![1.0], 0.0, 2.5); 3],
            vec![Binary],
            Binary,
            Continuous,
        );
        d.units[1].ry = false;
        let v = validate_dataset(&d);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].row, 1);
        assert_eq!(v[0].rule, Rule::IndicatorMismatch);
        assert_eq!(v[0].variable, "y");
    }

    #[test]
    fn binary_column_with_half_is_flagged() {
        let d = Dataset::new(
            vec![
                Unit::complete(vec![0.5], 0.0, 1.0),
                Unit::complete(vec![1.0], 1.0, 0.0),
            ],
            vec![Binary],
            Binary,
            Binary,
        );
        let v = validate_dataset(&d);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].row, v[0].rule), (0, Rule::Kind));
    }

    #[test]
    fn subset_keeps_observed_xt_in_order() {
        let d = mixed();
        let s = subset_observed_xt(&d);
        let kept: Vec<f64> = s.units.iter().map(|u| u.x[0].unwrap()).collect();
        assert_eq!(kept, vec![2.0, 4.0, 7.0, 8.0]);
        assert_eq!(subset_observed_xt(&s), s);
    }

    #[test]
    fn subset_identity_and_empty() {
        let full = Dataset::new(
            vec![Unit::complete(vec![1.0], 0.0, 1.0); 5],
            vec![Binary],
            Binary,
            Binary,
        );
        assert_eq!(subset_observed_xt(&full), full);
        assert_eq!(complete_cases(&full), full);
        let none = full.filter(|_| true).with_units(
            full.units
                .iter()
                .map(|u| Unit::masked(&[1.0], 0.0, u.y.unwrap(), &[true], false, true))
                .collect(),
        );
        assert!(subset_observed_xt(&none).is_empty());
    }

    #[test]
    fn complete_cases_requires_outcome() {
        let d = mixed();
        let cc = complete_cases(&d);
        let kept: Vec<f64> = cc.units.iter().map(|u| u.x[0].unwrap()).collect();
        assert_eq!(kept, vec![2.0, 4.0, 8.0]);
        let no_y = d.with_units(
            d.units
                .iter()
                .map(|u| Unit {
                    y: None,
                    ry: false,
                    ..u.clone()
                })
                .collect(),
        );
        assert!(complete_cases(&no_y).is_empty());
    }

    #[test]
    fn csv_round_trip_preserves_missingness() {
        let d = mixed();
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,t,y,rx1,rt,ry\n"));
        let back = read_csv(&buf[..], vec![Continuous], Binary, Continuous).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn csv_rejects_missing_indicator() {
        let text = "x1,t,y,rx1,rt,ry\n1,0,2,1,,1\n";
        let err = read_csv(text.as_bytes(), vec![Binary], Binary, Continuous).unwrap_err();
        assert!(err.to_string().contains("missing response indicator"));
    }

    #[test]
    fn assumption_parsing() {
        assert_eq!(
            MissingnessAssumption::parse("a3:1").unwrap(),
            MissingnessAssumption::A3 {
                identifying_covariate: Some(1)
            }
        );
        assert!(MissingnessAssumption::parse("a2:1").is_err());
        assert!(MissingnessAssumption::parse("A3:4")
            .unwrap()
            .validate(2)
            .is_err());
    }
}
