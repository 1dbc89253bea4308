//! Parametric maximum likelihood under outcome self-censoring by EM.
//!
//! Units with observed `(X, T)` are kept. A discrete outcome gets an exact
//! E-step; a continuous one uses fractional imputation with draws taken once
//! from the complete-case fit and reweighted every iteration, which makes the
//! algorithm an exact EM for the importance-sampled likelihood.

pub mod model;

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{subset_observed_xt, CateEstimate, Dataset, MissingnessAssumption, Query};
use crate::error::{Error, Result};
use crate::glm::{self, check_full_rank, Family, FitOptions, Matrix, Vars};
use crate::rng::rng_from;
use crate::stats::{log1m_expit, log_expit, logit};

pub use model::{MissingnessModel, OffsetTerm, OutcomeFamily, OutcomeFit, OutcomeModel};

/// Relative slack allowed in the exact-mode ascent check.
pub const ASCENT_SLACK: f64 = 1e-10;
/// Bound on response-model coefficients.
pub const LAMBDA_CLIP: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    /// Imputations per missing outcome.
    pub m: usize,
    /// Relative change in the observed-data log-likelihood that ends iteration.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            m: 50,
            tol: 1e-8,
            max_iter: 500,
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::Config(format!("imputation count must be at least 2, got {}", self.m)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EStepMode {
    Exact,
    Fractional,
}

/// Starting point for EM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmStart {
    pub beta: Vec<f64>,
    pub scale: f64,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmFit {
    pub outcome: OutcomeFit,
    pub lambda: Vec<f64>,
    /// Observed-data log-likelihood (importance-sampled in fractional mode)
    /// at the start of each iteration and after the last one.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub lambda_clipped: bool,
    pub mode: EStepMode,
    /// Smallest per-unit effective number of imputations.
    pub min_ess: Option<f64>,
    /// Weighted least-squares covariance of a Gaussian outcome fit.
    pub beta_cov: Option<Vec<Vec<f64>>>,
    pub notes: Vec<String>,
}

impl EmFit {
    pub fn loglik(&self) -> f64 {
        *self.trace.last().unwrap_or(&f64::NAN)
    }

    pub fn start(&self) -> EmStart {
        EmStart {
            beta: self.outcome.coef.clone(),
            scale: self.outcome.scale,
            lambda: self.lambda.clone(),
        }
    }
}

struct Row {
    x: Vec<f64>,
    t: f64,
    /// Observed EM response, if any.
    r: Option<f64>,
}

fn prepared_rows(d: &Dataset, outcome: &OutcomeModel) -> Vec<Row> {
    subset_observed_xt(d)
        .units
        .iter()
        .map(|u| Row {
            x: u.x_values().expect("observed covariates"),
            t: u.t.expect("observed treatment"),
            r: if u.ry { u.y.map(|y| outcome.em_response(y)) } else { None },
        })
        .collect()
}

fn design_matrix<'a>(
    design: &glm::Design,
    rows: impl Iterator<Item = (&'a [f64], f64, f64)>,
) -> Matrix {
    let mut m = Matrix::with_cols(design.len());
    let mut buf = Vec::with_capacity(design.len());
    for (x, t, y) in rows {
        buf.clear();
        design.row_into(&Vars { x, t, y }, &mut buf);
        m.push_row(&buf);
    }
    m
}

/// Complete-case maximum likelihood for the outcome model.
pub fn fit_initial_outcome(d: &Dataset, model: &OutcomeModel) -> Result<OutcomeFit> {
    model.validate(d.p())?;
    let cc: Vec<(Vec<f64>, f64, f64)> = d
        .units
        .iter()
        .filter(|u| u.is_complete())
        .map(|u| (u.x_values().unwrap(), u.t.unwrap(), u.y.unwrap()))
        .collect();
    let k = model.design.len();
    if cc.len() < k + 1 {
        return Err(Error::InsufficientData(format!(
            "{} complete cases for an outcome model with {k} coefficients",
            cc.len()
        )));
    }
    let x = design_matrix(&model.design, cc.iter().map(|(x, t, _)| (x.as_slice(), *t, 0.0)));
    let r: Vec<f64> = cc.iter().map(|(_, _, y)| model.em_response(*y)).collect();
    let w = vec![1.0; cc.len()];
    let fam = model.em_family();
    check_full_rank(&x, &w, "outcome design")?;
    let g = glm::fit(fam, &x, &r, &w, None, None, &FitOptions::default())?;
    let magnitude = if model.family == OutcomeFamily::TwoPart {
        Some(fit_magnitude(model, &cc)?)
    } else {
        None
    };
    Ok(OutcomeFit {
        model: model.clone(),
        coef: g.coef,
        scale: if fam == Family::Gaussian { g.scale } else { 1.0 },
        magnitude,
    })
}

/// Gamma log-link fit on complete cases with a positive outcome.
fn fit_magnitude(model: &OutcomeModel, cc: &[(Vec<f64>, f64, f64)]) -> Result<glm::GlmFit> {
    let pos: Vec<&(Vec<f64>, f64, f64)> = cc.iter().filter(|(_, _, y)| *y > 0.0).collect();
    if pos.len() < model.design.len() + 1 {
        return Err(Error::InsufficientData(format!(
            "{} positive complete cases for the magnitude model",
            pos.len()
        )));
    }
    let x = design_matrix(&model.design, pos.iter().map(|(x, t, _)| (x.as_slice(), *t, 0.0)));
    let y: Vec<f64> = pos.iter().map(|(_, _, y)| *y).collect();
    let w = vec![1.0; y.len()];
    check_full_rank(&x, &w, "magnitude design")?;
    glm::fit(Family::Gamma, &x, &y, &w, None, None, &FitOptions::default())
}

/// Posterior over the outcome levels `{0, 1}` for a unit with a missing outcome.
pub fn e_step_exact_discrete(
    x: &[f64],
    t: f64,
    outcome: &OutcomeFit,
    miss: &MissingnessModel,
    lambda: &[f64],
) -> Result<[f64; 2]> {
    if !outcome.model.is_discrete() {
        return Err(Error::InvalidInput("exact E-step needs a discrete outcome".into()));
    }
    let lw: [f64; 2] = [0.0, 1.0].map(|r| {
        let v = Vars { x, t, y: r };
        outcome.log_density(x, t, r) + log1m_expit(miss.eta(lambda, &v))
    });
    let m = lw[0].max(lw[1]);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return Err(Error::DegeneratePosterior(format!(
            "no posterior mass at x = {x:?}, t = {t}"
        )));
    }
    let e = [(lw[0] - m).exp(), (lw[1] - m).exp()];
    let s = e[0] + e[1];
    Ok([e[0] / s, e[1] / s])
}

/// Normalizes log-weights to sum to one.
pub fn normalize_log_weights(lw: &[f64]) -> Result<Vec<f64>> {
    let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return Err(Error::DegeneratePosterior("all imputation weights are zero".into()));
    }
    let e: Vec<f64> = lw.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// Normalizes nonnegative weights to sum to one.
pub fn normalize_weights(w: &[f64]) -> Result<Vec<f64>> {
    let s: f64 = w.iter().sum();
    if !(s > 0.0) {
        return Err(Error::DegeneratePosterior("all imputation weights are zero".into()));
    }
    Ok(w.iter().map(|v| v / s).collect())
}

/// `1 / sum_j w_j^2` for normalized weights.
pub fn effective_sample_size(w: &[f64]) -> f64 {
    1.0 / w.iter().map(|v| v * v).sum::<f64>()
}

/// Imputations for the missing outcomes, drawn once from the proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationSet {
    /// Index among the `(X, T)`-observed units.
    pub units: Vec<usize>,
    pub draws: Vec<Vec<f64>>,
    /// Proposal log density of each draw.
    pub log_h: Vec<Vec<f64>>,
    /// Current normalized fractional weights.
    pub weights: Vec<Vec<f64>>,
}

impl ImputationSet {
    pub fn ess(&self) -> Vec<f64> {
        self.weights.iter().map(|w| effective_sample_size(w)).collect()
    }
}

/// I-step with the complete-case fit as proposal, then one W-step at
/// `(outcome, lambda)`.
pub fn fractional_impute(
    d: &Dataset,
    proposal: &OutcomeFit,
    outcome: &OutcomeFit,
    miss: &MissingnessModel,
    lambda: &[f64],
    cfg: &EmConfig,
) -> Result<ImputationSet> {
    if proposal.model.em_family() != Family::Gaussian {
        return Err(Error::InvalidInput("fractional imputation needs a continuous outcome".into()));
    }
    let rows = prepared_rows(d, &proposal.model);
    let mut set = draw_imputations(&rows, proposal, cfg)?;
    w_step(&rows, &mut set, outcome, miss, lambda)?;
    Ok(set)
}

fn draw_imputations(rows: &[Row], proposal: &OutcomeFit, cfg: &EmConfig) -> Result<ImputationSet> {
    let mut rng = rng_from(cfg.seed);
    let sd = proposal.scale.sqrt();
    let mut set = ImputationSet {
        units: Vec::new(),
        draws: Vec::new(),
        log_h: Vec::new(),
        weights: Vec::new(),
    };
    for (i, row) in rows.iter().enumerate() {
        if row.r.is_some() {
            continue;
        }
        let mu = proposal.eta(&row.x, row.t);
        let dist = Normal::new(mu, sd)
            .map_err(|e| Error::Estimation(format!("proposal distribution: {e}")))?;
        let draws: Vec<f64> = (0..cfg.m).map(|_| dist.sample(&mut rng)).collect();
        let log_h = draws
            .iter()
            .map(|&y| proposal.log_density(&row.x, row.t, y))
            .collect();
        set.units.push(i);
        set.draws.push(draws);
        set.log_h.push(log_h);
        set.weights.push(vec![1.0 / cfg.m as f64; cfg.m]);
    }
    Ok(set)
}

fn fractional_log_weights(
    row: &Row,
    draws: &[f64],
    log_h: &[f64],
    outcome: &OutcomeFit,
    miss: &MissingnessModel,
    lambda: &[f64],
) -> Vec<f64> {
    draws
        .iter()
        .zip(log_h)
        .map(|(&y, &lh)| {
            let v = Vars { x: &row.x, t: row.t, y };
            outcome.log_density(&row.x, row.t, y) + log1m_expit(miss.eta(lambda, &v)) - lh
        })
        .collect()
}

fn w_step(rows: &[Row], set: &mut ImputationSet, outcome: &OutcomeFit, miss: &MissingnessModel, lambda: &[f64]) -> Result<()> {
    for k in 0..set.units.len() {
        let row = &rows[set.units[k]];
        let lw = fractional_log_weights(row, &set.draws[k], &set.log_h[k], outcome, miss, lambda);
        set.weights[k] = normalize_log_weights(&lw).map_err(|_| {
            Error::DegeneratePosterior(format!(
                "all fractional weights vanish for unit at x = {:?}, t = {}",
                row.x, row.t
            ))
        })?;
    }
    Ok(())
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Stacked rows shared by every M-step: observed units first, then one row
/// per candidate value of each missing outcome.
struct Stack {
    beta_x: Matrix,
    beta_y: Vec<f64>,
    lambda_z: Matrix,
    lambda_r: Vec<f64>,
    lambda_off: Vec<f64>,
    n_obs: usize,
    /// Candidate values per missing unit.
    per_unit: usize,
}

impl Stack {
    fn new(rows: &[Row], outcome: &OutcomeModel, miss: &MissingnessModel, candidates: &[Vec<f64>]) -> Self {
        let obs: Vec<&Row> = rows.iter().filter(|r| r.r.is_some()).collect();
        let mis: Vec<&Row> = rows.iter().filter(|r| r.r.is_none()).collect();
        let per_unit = candidates.first().map_or(0, Vec::len);
        let mut all: Vec<(&[f64], f64, f64)> = obs.iter().map(|r| (r.x.as_slice(), r.t, r.r.unwrap())).collect();
        for (r, cands) in mis.iter().zip(candidates) {
            all.extend(cands.iter().map(|&y| (r.x.as_slice(), r.t, y)));
        }
        let beta_x = design_matrix(&outcome.design, all.iter().map(|&(x, t, _)| (x, t, 0.0)));
        let beta_y = all.iter().map(|&(_, _, y)| y).collect();
        let lambda_z = design_matrix(&miss.design, all.iter().copied());
        let lambda_off = all
            .iter()
            .map(|&(x, t, y)| miss.offset(&Vars { x, t, y }))
            .collect();
        let lambda_r = (0..all.len()).map(|i| f64::from(u8::from(i < obs.len()))).collect();
        Stack {
            beta_x,
            beta_y,
            lambda_z,
            lambda_r,
            lambda_off,
            n_obs: obs.len(),
            per_unit,
        }
    }

    fn weights(&self, posterior: &[Vec<f64>]) -> Vec<f64> {
        let mut w = vec![1.0; self.n_obs];
        for p in posterior {
            debug_assert_eq!(p.len(), self.per_unit);
            w.extend_from_slice(p);
        }
        w
    }
}

/// Observed-data log-likelihood; in fractional mode the integral over a
/// missing outcome is the importance-sampling average over its draws.
fn observed_loglik(
    rows: &[Row],
    outcome: &OutcomeFit,
    miss: &MissingnessModel,
    lambda: &[f64],
    imputations: Option<&ImputationSet>,
) -> f64 {
    let mut ll = 0.0;
    let mut k = 0;
    for row in rows {
        match row.r {
            Some(r) => {
                let v = Vars { x: &row.x, t: row.t, y: r };
                ll += outcome.log_density(&row.x, row.t, r) + log_expit(miss.eta(lambda, &v));
            }
            None => match imputations {
                None => {
                    let terms: Vec<f64> = [0.0, 1.0]
                        .iter()
                        .map(|&r| {
                            let v = Vars { x: &row.x, t: row.t, y: r };
                            outcome.log_density(&row.x, row.t, r) + log1m_expit(miss.eta(lambda, &v))
                        })
                        .collect();
                    ll += log_sum_exp(&terms);
                }
                Some(set) => {
                    let lw = fractional_log_weights(row, &set.draws[k], &set.log_h[k], outcome, miss, lambda);
                    ll += log_sum_exp(&lw) - (lw.len() as f64).ln();
                    k += 1;
                }
            },
        }
    }
    ll
}

fn initial_lambda(miss: &MissingnessModel, rows: &[Row]) -> Vec<f64> {
    let mut lambda = vec![0.0; miss.design.len()];
    if let Some(i) = miss.intercept_index() {
        let n = rows.len() as f64;
        let obs = rows.iter().filter(|r| r.r.is_some()).count() as f64;
        lambda[i] = logit((obs / n).clamp(1e-6, 1.0 - 1e-6));
    }
    lambda
}

/// Joint EM fit of the outcome and outcome-response models.
pub fn fit_em(
    d: &Dataset,
    outcome: &OutcomeModel,
    miss: &MissingnessModel,
    cfg: &EmConfig,
    start: Option<&EmStart>,
) -> Result<EmFit> {
    cfg.validate()?;
    outcome.validate(d.p())?;
    miss.validate(d.p())?;
    let rows = prepared_rows(d, outcome);
    if rows.is_empty() {
        return Err(Error::InsufficientData("no units with observed covariates and treatment".into()));
    }
    let initial = fit_initial_outcome(d, outcome)?;
    let n_miss = rows.iter().filter(|r| r.r.is_none()).count();
    let mode = if outcome.is_discrete() {
        EStepMode::Exact
    } else {
        EStepMode::Fractional
    };
    let lambda_opts = FitOptions {
        clip: Some(LAMBDA_CLIP),
        ..FitOptions::default()
    };

    if n_miss == 0 {
        let stack = Stack::new(&rows, outcome, miss, &[]);
        let w = vec![1.0; rows.len()];
        let lf = glm::fit(
            Family::Bernoulli,
            &stack.lambda_z,
            &stack.lambda_r,
            &w,
            Some(&stack.lambda_off),
            None,
            &lambda_opts,
        )?;
        let ll = observed_loglik(&rows, &initial, miss, &lf.coef, None);
        let beta_cov = gaussian_cov(&initial, &stack.beta_x, &w)?;
        return Ok(EmFit {
            outcome: initial,
            lambda: lf.coef,
            trace: vec![ll],
            iterations: 1,
            converged: true,
            lambda_clipped: lf.clipped,
            mode,
            min_ess: None,
            beta_cov,
            notes: vec!["outcome fully observed; response model at its boundary".into()],
        });
    }

    let mut current = initial.clone();
    let mut lambda = initial_lambda(miss, &rows);
    if let Some(s) = start {
        if s.beta.len() != current.coef.len() || s.lambda.len() != lambda.len() {
            return Err(Error::InvalidInput("starting values have the wrong dimension".into()));
        }
        current.coef = s.beta.clone();
        current.scale = s.scale;
        lambda = s.lambda.clone();
    }

    let mut imputations = match mode {
        EStepMode::Exact => None,
        EStepMode::Fractional => Some(draw_imputations(&rows, &initial, cfg)?),
    };
    let candidates: Vec<Vec<f64>> = match &imputations {
        None => vec![vec![0.0, 1.0]; n_miss],
        Some(set) => set.draws.clone(),
    };
    let stack = Stack::new(&rows, outcome, miss, &candidates);
    let beta_family = outcome.em_family();

    let mut trace = vec![observed_loglik(&rows, &current, miss, &lambda, imputations.as_ref())];
    let mut converged = false;
    let mut lambda_clipped = false;
    let mut iterations = 0;
    let mut last_w = Vec::new();
    while iterations < cfg.max_iter {
        iterations += 1;
        // E / W step.
        let posterior: Vec<Vec<f64>> = match imputations.as_mut() {
            None => rows
                .iter()
                .filter(|r| r.r.is_none())
                .map(|r| e_step_exact_discrete(&r.x, r.t, &current, miss, &lambda).map(|p| p.to_vec()))
                .collect::<Result<_>>()?,
            Some(set) => {
                w_step(&rows, set, &current, miss, &lambda)?;
                set.weights.clone()
            }
        };
        let w = stack.weights(&posterior);
        // M step.
        let bf = glm::fit(
            beta_family,
            &stack.beta_x,
            &stack.beta_y,
            &w,
            None,
            Some(&current.coef),
            &FitOptions::default(),
        )?;
        current.coef = bf.coef;
        if beta_family == Family::Gaussian {
            current.scale = bf.scale;
        }
        let lf = glm::fit(
            Family::Bernoulli,
            &stack.lambda_z,
            &stack.lambda_r,
            &w,
            Some(&stack.lambda_off),
            Some(&lambda),
            &lambda_opts,
        )?;
        lambda = lf.coef;
        lambda_clipped = lf.clipped;
        last_w = w;

        let prev = *trace.last().unwrap();
        let ll = observed_loglik(&rows, &current, miss, &lambda, imputations.as_ref());
        trace.push(ll);
        if mode == EStepMode::Exact && ll < prev - ASCENT_SLACK * prev.abs().max(1.0) {
            return Err(Error::NonMonotone {
                iteration: iterations,
                previous: prev,
                current: ll,
            });
        }
        if (ll - prev).abs() <= cfg.tol * prev.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    if let Some(set) = imputations.as_mut() {
        w_step(&rows, set, &current, miss, &lambda)?;
    }
    let min_ess = imputations
        .as_ref()
        .map(|s| s.ess().into_iter().fold(f64::INFINITY, f64::min));
    let beta_cov = gaussian_cov(&current, &stack.beta_x, &last_w)?;
    let mut notes = Vec::new();
    if !converged {
        notes.push(format!("EM did not converge in {} iterations", cfg.max_iter));
    }
    if lambda_clipped {
        notes.push(format!("response-model coefficients clipped at {LAMBDA_CLIP}"));
    }
    Ok(EmFit {
        outcome: current,
        lambda,
        trace,
        iterations,
        converged,
        lambda_clipped,
        mode,
        min_ess,
        beta_cov,
        notes,
    })
}

fn gaussian_cov(fit: &OutcomeFit, x: &Matrix, w: &[f64]) -> Result<Option<Vec<Vec<f64>>>> {
    if fit.model.em_family() != Family::Gaussian {
        return Ok(None);
    }
    let p = x.ncol;
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..x.nrow() {
        let r = x.row(i);
        for j in 0..p {
            for k in 0..p {
                a[(j, k)] += w[i] * r[j] * r[k];
            }
        }
    }
    let inv = a
        .try_inverse()
        .ok_or_else(|| Error::SingularDesign("outcome design".into()))?;
    Ok(Some(
        (0..p)
            .map(|j| (0..p).map(|k| fit.scale * inv[(j, k)]).collect())
            .collect(),
    ))
}

/// Directional contrast `c` such that `c' beta` is the slope of the outcome
/// mean in the instrument, together with its standard error.
fn instrument_slope(fit: &EmFit, assumption: MissingnessAssumption, query: &Query) -> Vec<(String, f64, f64)> {
    let Some(cov) = &fit.beta_cov else {
        return Vec::new();
    };
    let design = &fit.outcome.model.design;
    let contrast = |x1: &[f64], t1: f64, x0: &[f64], t0: f64| -> Vec<f64> {
        let a = design.row(&Vars { x: x1, t: t1, y: 0.0 });
        let b = design.row(&Vars { x: x0, t: t0, y: 0.0 });
        a.iter().zip(&b).map(|(u, v)| u - v).collect()
    };
    let mut cases = Vec::new();
    match assumption {
        MissingnessAssumption::A2 => {
            cases.push(("treatment".to_string(), contrast(&query.x, 1.0, &query.x, 0.0)));
        }
        MissingnessAssumption::A3 { .. } => {
            for j in assumption.identifying_columns(query.x.len()) {
                for t in [query.t1, query.t0] {
                    let mut x1 = query.x.clone();
                    let mut x0 = query.x.clone();
                    x1[j] = 1.0;
                    x0[j] = 0.0;
                    cases.push((format!("x{} at t = {t}", j + 1), contrast(&x1, t, &x0, t)));
                }
            }
        }
        _ => {}
    }
    cases
        .into_iter()
        .map(|(name, c)| {
            let est: f64 = c.iter().zip(&fit.outcome.coef).map(|(a, b)| a * b).sum();
            let var: f64 = (0..c.len())
                .map(|j| (0..c.len()).map(|k| c[j] * cov[j][k] * c[k]).sum::<f64>())
                .sum();
            (name, est, var.max(0.0).sqrt())
        })
        .collect()
}

/// Plug-in CATE from an EM fit.
pub fn cate_from_fit(fit: &EmFit, miss: &MissingnessModel, query: &Query) -> CateEstimate {
    let o = &fit.outcome;
    let tau = match o.model.family {
        OutcomeFamily::GaussianLinear => o.eta(&query.x, query.t1) - o.eta(&query.x, query.t0),
        _ => o.mean(&query.x, query.t1) - o.mean(&query.x, query.t0),
    };
    let mut est = CateEstimate::new(tau, query, "para");
    est.notes.extend(fit.notes.iter().cloned());
    est.diagnostics.insert("loglik".into(), fit.loglik());
    est.diagnostics.insert("iterations".into(), fit.iterations as f64);
    est.diagnostics.insert("converged".into(), f64::from(u8::from(fit.converged)));
    if let Some(e) = fit.min_ess {
        est.diagnostics.insert("min_ess".into(), e);
    }
    if miss.offset_delta != 0.0 {
        est.diagnostics.insert("delta".into(), miss.offset_delta);
    }
    for (name, slope, se) in instrument_slope(fit, miss.assumption, query) {
        if slope.abs() < 2.0 * se {
            est.notes.push(format!(
                "near-degenerate completeness: outcome slope in {name} is {slope:.4} (se {se:.4})"
            ));
        }
    }
    est
}

/// Output of [`estimate_cate_param`], with the fit kept for warm starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub estimate: CateEstimate,
    pub fit: EmFit,
}

pub fn estimate_cate_param(
    d: &Dataset,
    outcome: &OutcomeModel,
    miss: &MissingnessModel,
    cfg: &EmConfig,
    query: &Query,
) -> Result<ParamEstimate> {
    estimate_cate_param_from(d, outcome, miss, cfg, query, None)
}

pub fn estimate_cate_param_from(
    d: &Dataset,
    outcome: &OutcomeModel,
    miss: &MissingnessModel,
    cfg: &EmConfig,
    query: &Query,
    start: Option<&EmStart>,
) -> Result<ParamEstimate> {
    if query.x.len() != d.p() {
        return Err(Error::InvalidInput(format!(
            "query has {} covariates, data has {}",
            query.x.len(),
            d.p()
        )));
    }
    let fit = fit_em(d, outcome, miss, cfg, start)?;
    let estimate = cate_from_fit(&fit, miss, query);
    Ok(ParamEstimate { estimate, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Unit, VariableKind};
    use crate::dgp::{simulate, true_cate, ScenarioConfig, TwoPartConfig, DEFAULT_CALIBRATION_SEED};
    use crate::stats::expit;
    use rand::Rng as _;
    use VariableKind::{Binary, Continuous};

    fn dataset(units: Vec<Unit>, y: VariableKind) -> Dataset {
        Dataset::new(units, vec![Binary], Binary, y)
    }

    #[test]
    fn noiseless_gaussian_is_exact() {
        let mut units = Vec::new();
        for t in [0.0, 1.0] {
            for x in [0.0, 1.0] {
                for _ in 0..3 {
                    units.push(Unit::complete(vec![x], t, 1.0 + 2.0 * t + 3.0 * x));
                }
            }
        }
        let model = OutcomeModel {
            family: OutcomeFamily::GaussianLinear,
            design: glm::Design::parse("1 + t + x1").unwrap(),
        };
        let f = fit_initial_outcome(&dataset(units, Continuous), &model).unwrap();
        for (a, b) in f.coef.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(f.scale < 1e-20);
    }

    #[test]
    fn too_few_rows_is_an_error() {
        let units = vec![Unit::complete(vec![0.0], 0.0, 1.0), Unit::complete(vec![1.0], 1.0, 2.0)];
        let model = OutcomeModel::standard(Continuous, 1);
        assert!(matches!(
            fit_initial_outcome(&dataset(units, Continuous), &model),
            Err(Error::InsufficientData(_))
        ));
    }

    /// Plain Newton–Raphson with a dense inverse.
    fn newton_logistic(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let p = x[0].len();
        let mut b = vec![0.0; p];
        for _ in 0..100 {
            let mut g = nalgebra::DVector::<f64>::zeros(p);
            let mut h = DMatrix::<f64>::zeros(p, p);
            for (r, &yi) in x.iter().zip(y) {
                let mu = expit(r.iter().zip(&b).map(|(a, c)| a * c).sum());
                for j in 0..p {
                    g[j] += (yi - mu) * r[j];
                    for k in 0..p {
                        h[(j, k)] += mu * (1.0 - mu) * r[j] * r[k];
                    }
                }
            }
            let step = h.try_inverse().unwrap() * g;
            for j in 0..p {
                b[j] += step[j];
            }
            if step.norm() < 1e-14 {
                break;
            }
        }
        b
    }

    #[test]
    fn logistic_matches_independent_newton() {
        let mut rng = rng_from(4);
        let mut units = Vec::new();
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..400 {
            let x = f64::from(u8::from(rng.random::<f64>() < 0.5));
            let t = f64::from(u8::from(rng.random::<f64>() < 0.5));
            let y = f64::from(u8::from(rng.random::<f64>() < expit(-0.3 + 0.8 * t + 0.5 * x - 0.4 * t * x)));
            units.push(Unit::complete(vec![x], t, y));
            rows.push(vec![1.0, t, x, t * x]);
            ys.push(y);
        }
        let f = fit_initial_outcome(&dataset(units, Binary), &OutcomeModel::standard(Binary, 1)).unwrap();
        let oracle = newton_logistic(&rows, &ys);
        for (a, b) in f.coef.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    fn bern_fit(p1: f64) -> OutcomeFit {
        OutcomeFit {
            model: OutcomeModel {
                family: OutcomeFamily::BernoulliLogit,
                design: glm::Design::parse("1").unwrap(),
            },
            coef: vec![logit(p1)],
            scale: 1.0,
            magnitude: None,
        }
    }

    #[test]
    fn exact_posterior_examples() {
        let miss = MissingnessModel {
            assumption: MissingnessAssumption::A2,
            design: glm::Design::parse("1 + y").unwrap(),
            offset_delta: 0.0,
            offset_term: OffsetTerm::None,
        };
        // Flat selection.
        let p = e_step_exact_discrete(&[0.0], 0.0, &bern_fit(0.3), &miss, &[0.0, 0.0]).unwrap();
        assert!((p[1] - 0.3).abs() < 1e-12);
        // pi(y=0) = 0.5, pi(y=1) = 0.9.
        let lam = [0.0, logit(0.9)];
        let p = e_step_exact_discrete(&[0.0], 0.0, &bern_fit(0.5), &miss, &lam).unwrap();
        assert!((p[1] - 1.0 / 6.0).abs() < 1e-12);
        let mut degenerate = bern_fit(0.5);
        degenerate.coef = vec![800.0];
        let p = e_step_exact_discrete(&[0.0], 0.0, &degenerate, &miss, &lam).unwrap();
        assert_eq!(p, [0.0, 1.0]);
    }

    #[test]
    fn weight_normalization_and_ess() {
        let w = normalize_weights(&[0.3, 0.1]).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-12 && (w[1] - 0.25).abs() < 1e-12);
        assert!(normalize_weights(&[0.0, 0.0]).is_err());
        assert!((effective_sample_size(&[0.25; 4]) - 4.0).abs() < 1e-12);
    }

    fn a2_continuous() -> (ScenarioConfig, Dataset) {
        let cfg = ScenarioConfig::standard(Continuous, Continuous, Continuous, MissingnessAssumption::A2)
            .calibrated(DEFAULT_CALIBRATION_SEED)
            .unwrap();
        let d = simulate(&cfg, 600, 21).unwrap().observed;
        (cfg, d)
    }

    #[test]
    fn flat_selection_at_initial_fit_gives_uniform_weights() {
        let (_, d) = a2_continuous();
        let model = OutcomeModel::standard(Continuous, 1);
        let init = fit_initial_outcome(&d, &model).unwrap();
        let miss = MissingnessModel {
            assumption: MissingnessAssumption::A2,
            design: glm::Design::parse("1 + x1").unwrap(),
            offset_delta: 0.0,
            offset_term: OffsetTerm::None,
        };
        let cfg = EmConfig { m: 10, ..Default::default() };
        let set = fractional_impute(&d, &init, &init, &miss, &[0.3, -0.2], &cfg).unwrap();
        for w in &set.weights {
            for v in w {
                assert!((v - 0.1).abs() < 1e-12);
            }
        }
        for e in set.ess() {
            assert!((e - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn no_missing_outcomes_reduce_to_complete_case_fit() {
        let cfg = ScenarioConfig::standard(Binary, Binary, Binary, MissingnessAssumption::A2)
            .calibrated(DEFAULT_CALIBRATION_SEED)
            .unwrap();
        let mut d = simulate(&cfg, 500, 1).unwrap().latent;
        d.units.iter_mut().for_each(|u| u.ry = true);
        let model = OutcomeModel::standard(Binary, 1);
        let miss = MissingnessModel::default_for(MissingnessAssumption::A2, 1, model.family).unwrap();
        let fit = fit_em(&d, &model, &miss, &EmConfig::default(), None).unwrap();
        let cc = fit_initial_outcome(&d, &model).unwrap();
        assert_eq!(fit.outcome.coef, cc.coef);
        assert_eq!(fit.iterations, 1);
        assert!(fit.lambda_clipped);
    }

    #[test]
    fn exact_trace_is_monotone_and_converges() {
        let cfg = ScenarioConfig::standard(Binary, Binary, Binary, MissingnessAssumption::A2)
            .calibrated(DEFAULT_CALIBRATION_SEED)
            .unwrap();
        let d = simulate(&cfg, 1000, 2).unwrap().observed;
        let model = OutcomeModel::standard(Binary, 1);
        let miss = MissingnessModel::default_for(MissingnessAssumption::A2, 1, model.family).unwrap();
        let fit = fit_em(&d, &model, &miss, &EmConfig::default(), None).unwrap();
        assert_eq!(fit.mode, EStepMode::Exact);
        for w in fit.trace.windows(2) {
            assert!(w[1] >= w[0] - ASCENT_SLACK * w[0].abs());
        }
        assert!(fit.converged);
    }

    #[test]
    fn fractional_trace_is_monotone() {
        let (_, d) = a2_continuous();
        let model = OutcomeModel::standard(Continuous, 1);
        let miss = MissingnessModel::default_for(MissingnessAssumption::A2, 1, model.family).unwrap();
        let fit = fit_em(&d, &model, &miss, &EmConfig { m: 20, ..Default::default() }, None).unwrap();
        assert_eq!(fit.mode, EStepMode::Fractional);
        for w in fit.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn large_sample_binary_a2_recovers_coefficients() {
        let cfg = ScenarioConfig::standard(Binary, Binary, Binary, MissingnessAssumption::A2)
            .calibrated(DEFAULT_CALIBRATION_SEED)
            .unwrap();
        let d = simulate(&cfg, 100_000, 3).unwrap().observed;
        let model = OutcomeModel::standard(Binary, 1);
        let miss = MissingnessModel::default_for(MissingnessAssumption::A2, 1, model.family).unwrap();
        let fit = fit_em(&d, &model, &miss, &EmConfig::default(), None).unwrap();
        let yp = cfg.y_params;
        for (a, b) in fit.outcome.coef.iter().zip([yp.beta0, yp.beta_t, yp.beta_x, yp.beta_tx]) {
            assert!((a - b).abs() < 0.05, "{:?}", fit.outcome.coef);
        }
    }

    #[test]
    fn null_a2_scenario_estimate_is_near_zero() {
        let cfg = ScenarioConfig::standard(Binary, Binary, Binary, MissingnessAssumption::A2)
            .into_null()
            .calibrated(DEFAULT_CALIBRATION_SEED)
            .unwrap();
        let d = simulate(&cfg, 100_000, 4).unwrap().observed;
        let model = OutcomeModel::standard(Binary, 1);
        let miss = MissingnessModel::default_for(MissingnessAssumption::A2, 1, model.family).unwrap();
        let est = estimate_cate_param(&d, &model, &miss, &EmConfig::default(), &cfg.default_query()).unwrap();
        assert!(est.estimate.tau.abs() < 0.03, "{}", est.estimate.tau);
    }

    #[test]
    fn response_model_is_constant_in_barred_variable() {
        let (cfg, d) = a2_continuous();
        let model = OutcomeModel::standard(Continuous, 1);
        let miss = MissingnessModel::default_for(MissingnessAssumption::A2, 1, model.family).unwrap();
        let fit = fit_em(&d, &model, &miss, &EmConfig { m: 10, ..Default::default() }, None).unwrap();
        let a = miss.pi(&fit.lambda, &Vars { x: &[0.3], t: -1.0, y: 0.5 });
        let b = miss.pi(&fit.lambda, &Vars { x: &[0.3], t: 2.0, y: 0.5 });
        assert_eq!(a, b);
        let _ = cfg;
    }

    #[test]
    fn gaussian_a2_estimate_is_close() {
        let (cfg, _) = a2_continuous();
        let d = simulate(&cfg, 5000, 33).unwrap().observed;
        let q = cfg.default_query();
        let model = OutcomeModel::standard(Continuous, 1);
        let miss = MissingnessModel::default_for(MissingnessAssumption::A2, 1, model.family).unwrap();
        let est = estimate_cate_param(&d, &model, &miss, &EmConfig::default(), &q).unwrap();
        let truth = true_cate(&cfg, &q.x, q.t1, q.t0);
        assert!(((est.estimate.tau - truth) / truth).abs() < 0.1, "{} vs {truth}", est.estimate.tau);
    }

    #[test]
    fn flat_outcome_slope_triggers_completeness_warning() {
        let mut rng = rng_from(8);
        let units: Vec<Unit> = (0..400)
            .map(|_| {
                let x = f64::from(u8::from(rng.random::<f64>() < 0.5));
                let t = f64::from(u8::from(rng.random::<f64>() < 0.5));
                let y = 1.0 + x + rng.random::<f64>() - 0.5;
                Unit::masked(&[x], t, y, &[true], true, rng.random::<f64>() < 0.8)
            })
            .collect();
        let d = dataset(units, Continuous);
        let model = OutcomeModel::standard(Continuous, 1);
        let miss = MissingnessModel::default_for(MissingnessAssumption::A2, 1, model.family).unwrap();
        let est = estimate_cate_param(&d, &model, &miss, &EmConfig { m: 10, ..Default::default() }, &Query::new(vec![1.0], 1.0, 0.0)).unwrap();
        assert!(est.estimate.notes.iter().any(|n| n.starts_with("near-degenerate completeness")));
    }

    #[test]
    fn two_part_with_certain_positivity_is_gamma_mean_difference() {
        let tp = TwoPartConfig::standard(MissingnessAssumption::A2);
        let mut d = tp.simulate(2000, 5).unwrap().latent;
        // Strictly positive outcomes: the positivity part is degenerate.
        for u in &mut d.units {
            if u.y == Some(0.0) {
                u.y = Some(1.0);
            }
        }
        let model = OutcomeModel::two_part(1);
        let fit = fit_initial_outcome(&d, &model).unwrap();
        let q = Query::new(vec![1.0], 1.0, 0.0);
        let g = fit.magnitude.as_ref().unwrap();
        let m = |t: f64| model.design.linear_predictor(&g.coef, &Vars { x: &q.x, t, y: 0.0 }).exp();
        let expected = m(1.0) - m(0.0);
        let est = fit.mean(&q.x, 1.0) - fit.mean(&q.x, 0.0);
        assert!((est - expected).abs() < 1e-6 * expected.abs().max(1.0));
    }

    #[test]
    fn two_part_em_recovers_effect() {
        let tp = TwoPartConfig::standard(MissingnessAssumption::A2);
        let d = tp.simulate(20_000, 6).unwrap().observed;
        let model = OutcomeModel::two_part(1);
        let miss = MissingnessModel::default_for(MissingnessAssumption::A2, 1, model.family).unwrap();
        let q = Query::new(vec![1.0], 1.0, 0.0);
        let est = estimate_cate_param(&d, &model, &miss, &EmConfig::default(), &q).unwrap();
        let truth = tp.true_cate(1.0, 1.0, 0.0);
        assert!((est.estimate.tau - truth).abs() < 0.1 * truth.abs().max(0.5), "{} vs {truth}", est.estimate.tau);
    }
}
