//! Identification of `P(Y | T, X)` for discrete variables via the linear
//! system `Theta zeta = b` relating observed cells to the unknown response odds.
//!
//! Under A2 the treatment levels act as the instrument and the system is built
//! within one covariate stratum; under A3 the identifying covariate plays that
//! role within one `(T, X^c)` stratum.

pub mod counterexamples;
pub mod exact;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{CateEstimate, Dataset, MissingnessAssumption, Query, Unit, VariableKind};
use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::stats::chi_square_independence;

pub use counterexamples::{verify_counterexample_1, verify_counterexample_2, Check, VerificationReport};

/// Default tolerance for both the rank cut-off and negative-odds clamping.
pub const ODDS_TOL: f64 = 1e-8;
/// Pre-normalization row sums further than this from one are reported.
pub const ROW_SUM_TOL: f64 = 0.05;
/// Significance level of the independence test deciding the null regime.
pub const NULL_TEST_LEVEL: f64 = 0.05;

pub const NULL_IDENTIFIED: &str = "null-identified";

/// Which variable indexes the rows of the system.
#[derive(Debug, Clone, PartialEq)]
pub enum Role {
    /// Rows are treatment levels; conditioning on the full covariate vector.
    InstrumentT { x: Vec<f64> },
    /// Rows are levels of the identifying covariates; conditioning on the
    /// treatment and the remaining covariates. Entries of `x` at identifying
    /// positions are ignored.
    InstrumentX {
        t: f64,
        x: Vec<f64>,
        identifying: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedConditionals {
    /// `theta[j][k] = P(Y = y_k, R^Y = 1 | level_j, conditioning)`.
    pub theta: Vec<Vec<f64>>,
    /// `b[j] = P(R^Y = 0 | level_j, conditioning)`.
    pub b: Vec<f64>,
    pub instrument_levels: Vec<Vec<f64>>,
    pub outcome_levels: Vec<f64>,
    /// Units behind each row.
    pub counts: Vec<usize>,
    pub warnings: Vec<String>,
}

impl ObservedConditionals {
    pub fn j(&self) -> usize {
        self.theta.len()
    }

    pub fn k(&self) -> usize {
        self.outcome_levels.len()
    }

    pub fn row_of(&self, level: &[f64]) -> Option<usize> {
        self.instrument_levels.iter().position(|l| l == level)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseOdds {
    pub zeta: Vec<f64>,
    /// `1 / (1 + zeta)`.
    pub pi: Vec<f64>,
}

impl ResponseOdds {
    pub fn from_zeta(zeta: Vec<f64>) -> Self {
        let pi = zeta.iter().map(|z| 1.0 / (1.0 + z)).collect();
        ResponseOdds { zeta, pi }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RankCheck {
    Complete,
    Deficient(usize),
}

impl RankCheck {
    pub fn is_complete(self) -> bool {
        matches!(self, RankCheck::Complete)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistribution {
    /// `probs[j][k] = P(Y = y_k | level_j, conditioning)`.
    pub probs: Vec<Vec<f64>>,
    pub instrument_levels: Vec<Vec<f64>>,
    pub outcome_levels: Vec<f64>,
    /// Largest `|sum_k theta[j][k] (1 + zeta_k) - 1|` before renormalizing.
    pub max_row_sum_deviation: f64,
    pub warnings: Vec<String>,
}

impl OutcomeDistribution {
    pub fn mean(&self, row: usize) -> f64 {
        self.probs[row]
            .iter()
            .zip(&self.outcome_levels)
            .map(|(p, y)| p * y)
            .sum()
    }
}

fn sorted_levels(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn sorted_level_tuples(values: impl Iterator<Item = Vec<f64>>) -> Vec<Vec<f64>> {
    let mut v: Vec<Vec<f64>> = values.collect();
    v.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    v.dedup();
    v
}

/// Row level and conditioning match of an `(X, T)`-observed unit.
fn classify(u: &Unit, role: &Role) -> Option<Vec<f64>> {
    let t = u.t?;
    match role {
        Role::InstrumentT { x } => {
            let ux = u.x_values()?;
            (ux == *x).then(|| vec![t])
        }
        Role::InstrumentX {
            t: t_cond,
            x,
            identifying,
        } => {
            if t != *t_cond {
                return None;
            }
            let ux = u.x_values()?;
            let rest_match = ux
                .iter()
                .zip(x)
                .enumerate()
                .all(|(i, (a, b))| identifying.contains(&i) || a == b);
            rest_match.then(|| identifying.iter().map(|&i| ux[i]).collect())
        }
    }
}

fn require_discrete(kind: VariableKind, what: &str) -> Result<()> {
    if kind.is_binary() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{what} must be discrete for the discrete identification solver"
        )))
    }
}

/// Empirical observed conditionals among units with `R^X = R^T = 1`.
pub fn estimate_observed_conditionals(d: &Dataset, role: &Role) -> Result<ObservedConditionals> {
    require_discrete(d.t_kind, "treatment")?;
    require_discrete(d.y_kind, "outcome")?;
    let p = d.p();
    match role {
        Role::InstrumentT { x } => {
            if x.len() != p {
                return Err(Error::InvalidInput(format!(
                    "query has {} covariates, data has {p}",
                    x.len()
                )));
            }
            for (j, &k) in d.x_kinds.iter().enumerate() {
                require_discrete(k, &format!("covariate x{}", j + 1))?;
            }
        }
        Role::InstrumentX { x, identifying, .. } => {
            if x.len() != p {
                return Err(Error::InvalidInput(format!(
                    "query has {} covariates, data has {p}",
                    x.len()
                )));
            }
            if identifying.is_empty() || identifying.iter().any(|&i| i >= p) {
                return Err(Error::InvalidInput(format!(
                    "identifying covariates {identifying:?} out of range for {p} covariates"
                )));
            }
            for (j, &k) in d.x_kinds.iter().enumerate() {
                require_discrete(k, &format!("covariate x{}", j + 1))?;
            }
        }
    }

    let cells: Vec<(Vec<f64>, Option<f64>)> = d
        .units
        .iter()
        .filter(|u| u.xt_observed())
        .filter_map(|u| classify(u, role).map(|lvl| (lvl, if u.ry { u.y } else { None })))
        .collect();

    // Candidate levels come from every (X, T)-observed unit so that rows with an
    // empty conditioning cell can be reported rather than silently vanishing.
    let candidates: Vec<Vec<f64>> = match role {
        Role::InstrumentT { .. } => sorted_levels(
            d.units
                .iter()
                .filter(|u| u.xt_observed())
                .filter_map(|u| u.t),
        )
        .into_iter()
        .map(|t| vec![t])
        .collect(),
        Role::InstrumentX { identifying, .. } => sorted_level_tuples(
            d.units
                .iter()
                .filter(|u| u.xt_observed())
                .filter_map(|u| u.x_values())
                .map(|x| identifying.iter().map(|&i| x[i]).collect()),
        ),
    };

    let outcome_levels = sorted_levels(cells.iter().filter_map(|(_, y)| *y));
    let mut warnings = Vec::new();
    let mut theta = Vec::new();
    let mut b = Vec::new();
    let mut levels = Vec::new();
    let mut counts = Vec::new();
    for lvl in candidates {
        let rows: Vec<&Option<f64>> = cells
            .iter()
            .filter(|(l, _)| *l == lvl)
            .map(|(_, y)| y)
            .collect();
        if rows.is_empty() {
            warnings.push(format!("no units in conditioning cell for level {lvl:?}; row omitted"));
            continue;
        }
        let n = rows.len() as f64;
        let row: Vec<f64> = outcome_levels
            .iter()
            .map(|yk| rows.iter().filter(|y| ***y == Some(*yk)).count() as f64 / n)
            .collect();
        b.push(rows.iter().filter(|y| y.is_none()).count() as f64 / n);
        theta.push(row);
        levels.push(lvl);
        counts.push(rows.len());
    }
    if levels.len() < 2 {
        return Err(Error::InsufficientVariation(format!(
            "{} instrument level(s) observed in the conditioning cell; need at least 2",
            levels.len()
        )));
    }
    if outcome_levels.is_empty() {
        return Err(Error::InsufficientData(
            "no observed outcomes in the conditioning cell".into(),
        ));
    }
    Ok(ObservedConditionals {
        theta,
        b,
        instrument_levels: levels,
        outcome_levels,
        counts,
        warnings,
    })
}

fn to_matrix(theta: &[Vec<f64>]) -> DMatrix<f64> {
    let j = theta.len();
    let k = theta.first().map_or(0, Vec::len);
    DMatrix::from_fn(j, k, |r, c| theta[r][c])
}

fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let s = m.singular_values();
    let smax = s.max();
    if smax <= 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > tol * smax).count()
}

/// Numerical rank of `theta`; complete iff it equals the number of columns.
pub fn completeness_rank_check(theta: &[Vec<f64>], tol: f64) -> RankCheck {
    let k = theta.first().map_or(0, Vec::len);
    let r = numerical_rank(&to_matrix(theta), tol);
    if r == k && k > 0 {
        RankCheck::Complete
    } else {
        RankCheck::Deficient(r)
    }
}

/// Least-squares solution of `theta zeta = b`.
pub fn solve_response_odds(oc: &ObservedConditionals, tol: f64) -> Result<ResponseOdds> {
    let k = oc.k();
    if oc.b.iter().all(|&v| v == 0.0) {
        return Ok(ResponseOdds::from_zeta(vec![0.0; k]));
    }
    if let RankCheck::Deficient(rank) = completeness_rank_check(&oc.theta, tol) {
        return Err(Error::RankDeficient { rank, required: k });
    }
    let a = to_matrix(&oc.theta);
    let rhs = DVector::from_column_slice(&oc.b);
    let sol = a
        .svd(true, true)
        .solve(&rhs, 0.0)
        .map_err(|e| Error::Solver(e.to_string()))?;
    let mut zeta = Vec::with_capacity(k);
    for (index, &v) in sol.iter().enumerate() {
        if v < -tol {
            return Err(Error::InfeasibleOdds { index, value: v });
        }
        zeta.push(v.max(0.0));
    }
    Ok(ResponseOdds::from_zeta(zeta))
}

/// `theta[j][k] (1 + zeta_k)` renormalized per row.
pub fn identify_outcome_distribution(oc: &ObservedConditionals, odds: &ResponseOdds) -> OutcomeDistribution {
    let mut warnings = Vec::new();
    let mut max_dev = 0.0_f64;
    let probs = oc
        .theta
        .iter()
        .zip(&oc.instrument_levels)
        .map(|(row, lvl)| {
            let raw: Vec<f64> = row
                .iter()
                .zip(&odds.zeta)
                .map(|(p, z)| p * (1.0 + z))
                .collect();
            let s: f64 = raw.iter().sum();
            let dev = (s - 1.0).abs();
            max_dev = max_dev.max(dev);
            if dev > ROW_SUM_TOL {
                warnings.push(format!(
                    "row {lvl:?}: implied probabilities sum to {s:.4} before renormalization"
                ));
            }
            raw.into_iter().map(|v| v / s).collect()
        })
        .collect();
    OutcomeDistribution {
        probs,
        instrument_levels: oc.instrument_levels.clone(),
        outcome_levels: oc.outcome_levels.clone(),
        max_row_sum_deviation: max_dev,
        warnings,
    }
}

fn identified(oc: &ObservedConditionals) -> Result<(ResponseOdds, OutcomeDistribution)> {
    let odds = solve_response_odds(oc, ODDS_TOL)?;
    let dist = identify_outcome_distribution(oc, &odds);
    Ok((odds, dist))
}

/// Conditional mean of `Y` at one instrument level; missing rows are an error.
fn mean_at(dist: &OutcomeDistribution, level: &[f64]) -> Result<f64> {
    let row = dist
        .instrument_levels
        .iter()
        .position(|l| l == level)
        .ok_or_else(|| {
            Error::InsufficientData(format!("level {level:?} not observed in the conditioning cell"))
        })?;
    Ok(dist.mean(row))
}

/// Chi-square p-value for `Y` independent of `T` among complete cases at `x`.
fn complete_case_independence_p(oc: &ObservedConditionals) -> f64 {
    let table: Vec<Vec<f64>> = oc
        .theta
        .iter()
        .zip(&oc.counts)
        .map(|(row, &n)| row.iter().map(|p| (p * n as f64).round()).collect())
        .collect();
    chi_square_independence(&table).2
}

/// Plug-in CATE from the identified `P(Y | T, X = x)`.
pub fn cate_discrete(d: &Dataset, assumption: MissingnessAssumption, query: &Query) -> Result<CateEstimate> {
    match assumption {
        MissingnessAssumption::A2 => cate_a2(d, query),
        MissingnessAssumption::A3 { .. } => {
            assumption.validate(d.p())?;
            let identifying = assumption.identifying_columns(d.p());
            cate_a3(d, query, identifying)
        }
        other => Err(Error::InvalidInput(format!(
            "discrete identification requires A2 or A3, got {other}"
        ))),
    }
}

fn cate_a2(d: &Dataset, query: &Query) -> Result<CateEstimate> {
    let oc = estimate_observed_conditionals(d, &Role::InstrumentT { x: query.x.clone() })?;
    let mut est = CateEstimate::new(0.0, query, "discrete");
    est.notes.extend(oc.warnings.iter().cloned());
    let p_indep = complete_case_independence_p(&oc);
    est.diagnostics.insert("independence_p_value".into(), p_indep);
    let rank = completeness_rank_check(&oc.theta, ODDS_TOL);
    if p_indep >= NULL_TEST_LEVEL {
        // Outcome does not vary with treatment among complete cases: the
        // stratum effect is identified as zero.
        est.notes.push(NULL_IDENTIFIED.into());
        return Ok(est);
    }
    if let RankCheck::Deficient(r) = rank {
        return Err(Error::RankDeficient {
            rank: r,
            required: oc.k(),
        });
    }
    let (odds, dist) = identified(&oc)?;
    est.tau = mean_at(&dist, &[query.t1])? - mean_at(&dist, &[query.t0])?;
    record(&mut est, &odds, &dist);
    Ok(est)
}

fn cate_a3(d: &Dataset, query: &Query, identifying: Vec<usize>) -> Result<CateEstimate> {
    let level: Vec<f64> = identifying.iter().map(|&i| query.x[i]).collect();
    let mut est = CateEstimate::new(0.0, query, "discrete");
    let mut means = [0.0; 2];
    for (slot, t) in [query.t1, query.t0].into_iter().enumerate() {
        let oc = estimate_observed_conditionals(
            d,
            &Role::InstrumentX {
                t,
                x: query.x.clone(),
                identifying: identifying.clone(),
            },
        )?;
        est.notes.extend(oc.warnings.iter().cloned());
        let (odds, dist) = identified(&oc)?;
        means[slot] = mean_at(&dist, &level)?;
        record(&mut est, &odds, &dist);
    }
    est.tau = means[0] - means[1];
    Ok(est)
}

fn record(est: &mut CateEstimate, odds: &ResponseOdds, dist: &OutcomeDistribution) {
    est.notes.extend(dist.warnings.iter().cloned());
    let dev = est
        .diagnostics
        .get("max_row_sum_deviation")
        .copied()
        .unwrap_or(0.0)
        .max(dist.max_row_sum_deviation);
    est.diagnostics.insert("max_row_sum_deviation".into(), dev);
    let zmax = odds.zeta.iter().copied().fold(0.0, f64::max);
    let prev = est.diagnostics.get("max_response_odds").copied().unwrap_or(0.0);
    est.diagnostics.insert("max_response_odds".into(), prev.max(zmax));
}

/// All-binary model with `(X, T)` fully observed and outcome self-censoring
/// that depends on `(X, Y)` only, so that A2 holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteModel {
    pub p_x1: f64,
    /// `P(T = 1 | X = x)`.
    pub p_t1: [f64; 2],
    /// `P(Y = 1 | X = x, T = t)` indexed `[x][t]`.
    pub p_y1: [[f64; 2]; 2],
    /// `P(R^Y = 1 | X = x, Y = y)` indexed `[x][y]`.
    pub pi: [[f64; 2]; 2],
}

impl DiscreteModel {
    /// Analytic observed conditionals at `X = x` with the treatment as instrument.
    pub fn observed_conditionals(&self, x: usize) -> ObservedConditionals {
        let mut theta = Vec::with_capacity(2);
        let mut b = Vec::with_capacity(2);
        for t in 0..2 {
            let py1 = self.p_y1[x][t];
            let py = [1.0 - py1, py1];
            theta.push(vec![py[0] * self.pi[x][0], py[1] * self.pi[x][1]]);
            b.push(py[0] * (1.0 - self.pi[x][0]) + py[1] * (1.0 - self.pi[x][1]));
        }
        ObservedConditionals {
            theta,
            b,
            instrument_levels: vec![vec![0.0], vec![1.0]],
            outcome_levels: vec![0.0, 1.0],
            counts: vec![0, 0],
            warnings: Vec::new(),
        }
    }

    /// `P(Y = y_k | T = t_j, X = x)` indexed `[t][y]`.
    pub fn outcome_conditionals(&self, x: usize) -> Vec<Vec<f64>> {
        (0..2)
            .map(|t| vec![1.0 - self.p_y1[x][t], self.p_y1[x][t]])
            .collect()
    }

    pub fn cate(&self, x: usize) -> f64 {
        self.p_y1[x][1] - self.p_y1[x][0]
    }

    pub fn sample(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = rng_from(seed);
        let units = (0..n)
            .map(|_| {
                let x = usize::from(rng.random::<f64>() < self.p_x1);
                let t = usize::from(rng.random::<f64>() < self.p_t1[x]);
                let y = usize::from(rng.random::<f64>() < self.p_y1[x][t]);
                let ry = rng.random::<f64>() < self.pi[x][y];
                Unit::masked(&[x as f64], t as f64, y as f64, &[true], true, ry)
            })
            .collect();
        Dataset::new(
            units,
            vec![VariableKind::Binary],
            VariableKind::Binary,
            VariableKind::Binary,
        )
    }
}

/// Per-level summary of several discrete CATEs, keyed by the query covariates.
pub fn cate_discrete_all(
    d: &Dataset,
    assumption: MissingnessAssumption,
    queries: &[Query],
) -> BTreeMap<String, Result<CateEstimate>> {
    queries
        .iter()
        .map(|q| (format!("{:?}", q.x), cate_discrete(d, assumption, q)))
        .collect()
}
