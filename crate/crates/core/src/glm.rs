//! Model formulas and weighted maximum-likelihood fits for the generalized
//! linear models used throughout: logistic, Gaussian linear and Gamma with a
//! log link. All fits accept prior weights (fractional-imputation weights,
//! posterior masses) and an optional fixed offset.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{expit, log1m_expit, log_expit};

/// Atomic variable appearing in a model term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Factor {
    T,
    /// Covariate column (0-based).
    X(usize),
    Y,
    /// Positivity indicator `1(Y > 0)`.
    D,
    /// Dummy `1(X_j == level)`.
    XLevel(usize, f64),
}

impl Factor {
    fn eval(&self, v: &Vars<'_>) -> f64 {
        match *self {
            Factor::T => v.t,
            Factor::X(j) => v.x[j],
            Factor::Y => v.y,
            Factor::D => {
                if v.y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Factor::XLevel(j, level) => {
                if v.x[j] == level {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((lhs, rhs)) = s.split_once("==") {
            let j = parse_x_index(lhs.trim())?;
            let level: f64 = rhs
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad level in term {s:?}")))?;
            return Ok(Factor::XLevel(j, level));
        }
        match s {
            "t" => Ok(Factor::T),
            "y" => Ok(Factor::Y),
            "d" => Ok(Factor::D),
            other => parse_x_index(other).map(Factor::X),
        }
    }
}

fn parse_x_index(s: &str) -> Result<usize> {
    let idx = s
        .strip_prefix('x')
        .ok_or_else(|| Error::Config(format!("unknown model variable {s:?}")))?;
    if idx.is_empty() {
        return Ok(0);
    }
    let j: usize = idx
        .parse()
        .map_err(|_| Error::Config(format!("unknown model variable {s:?}")))?;
    if j == 0 {
        return Err(Error::Config("covariates are numbered from x1".into()));
    }
    Ok(j - 1)
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Factor::T => write!(f, "t"),
            Factor::X(j) => write!(f, "x{}", j + 1),
            Factor::Y => write!(f, "y"),
            Factor::D => write!(f, "d"),
            Factor::XLevel(j, l) => write!(f, "x{}=={}", j + 1, l),
        }
    }
}

/// Values a design row is evaluated at.
#[derive(Debug, Clone, Copy)]
pub struct Vars<'a> {
    pub x: &'a [f64],
    pub t: f64,
    pub y: f64,
}

/// Product of factors; the empty product is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term(pub Vec<Factor>);

impl Term {
    pub fn intercept() -> Self {
        Term(Vec::new())
    }

    pub fn of(f: Factor) -> Self {
        Term(vec![f])
    }

    pub fn eval(&self, v: &Vars<'_>) -> f64 {
        self.0.iter().map(|f| f.eval(v)).product()
    }

    pub fn uses(&self, pred: impl Fn(&Factor) -> bool) -> bool {
        self.0.iter().any(pred)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "1");
        }
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        write!(f, "{}", parts.join(":"))
    }
}

/// Ordered list of terms, e.g. `1 + t + x1 + t:x1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub terms: Vec<Term>,
}

impl Design {
    pub fn new(terms: Vec<Term>) -> Self {
        Design { terms }
    }

    /// Parses `+`-separated terms; `1`/`intercept` is the constant and `:`
    /// forms products.
    pub fn parse(formula: &str) -> Result<Self> {
        let mut terms = Vec::new();
        for raw in formula.split('+') {
            let raw = raw.trim();
            if raw.is_empty() {
                return Err(Error::Config(format!("empty term in {formula:?}")));
            }
            if raw == "1" || raw == "intercept" {
                terms.push(Term::intercept());
                continue;
            }
            let factors = raw
                .split(':')
                .map(Factor::parse)
                .collect::<Result<Vec<_>>>()?;
            terms.push(Term(factors));
        }
        Ok(Design { terms })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn row_into(&self, v: &Vars<'_>, out: &mut Vec<f64>) {
        out.extend(self.terms.iter().map(|t| t.eval(v)));
    }

    pub fn row(&self, v: &Vars<'_>) -> Vec<f64> {
        let mut r = Vec::with_capacity(self.len());
        self.row_into(v, &mut r);
        r
    }

    pub fn uses(&self, pred: impl Fn(&Factor) -> bool + Copy) -> bool {
        self.terms.iter().any(|t| t.uses(pred))
    }

    pub fn uses_outcome(&self) -> bool {
        self.uses(|f| matches!(f, Factor::Y | Factor::D))
    }

    pub fn uses_treatment(&self) -> bool {
        self.uses(|f| matches!(f, Factor::T))
    }

    pub fn uses_covariate(&self, j: usize) -> bool {
        self.uses(|f| matches!(f, Factor::X(k) | Factor::XLevel(k, _) if *k == j))
    }

    pub fn max_covariate(&self) -> Option<usize> {
        self.terms
            .iter()
            .flat_map(|t| t.0.iter())
            .filter_map(|f| match f {
                Factor::X(j) | Factor::XLevel(j, _) => Some(*j),
                _ => None,
            })
            .max()
    }

    pub fn linear_predictor(&self, coef: &[f64], v: &Vars<'_>) -> f64 {
        self.terms
            .iter()
            .zip(coef)
            .map(|(t, b)| t.eval(v) * b)
            .sum()
    }

    /// `intercept + t + x_j ... + t:x_j ...` for `p` covariates.
    pub fn saturated_linear(p: usize) -> Self {
        let mut terms = vec![Term::intercept(), Term::of(Factor::T)];
        terms.extend((0..p).map(|j| Term::of(Factor::X(j))));
        terms.extend((0..p).map(|j| Term(vec![Factor::T, Factor::X(j)])));
        Design { terms }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.terms.iter().map(ToString::to_string).collect();
        write!(f, "{}", parts.join(" + "))
    }
}

/// Row-major dense design matrix.
#[derive(Debug, Clone, Default)]
pub struct Matrix {
    pub data: Vec<f64>,
    pub ncol: usize,
}

impl Matrix {
    pub fn with_cols(ncol: usize) -> Self {
        Matrix {
            data: Vec::new(),
            ncol,
        }
    }

    pub fn nrow(&self) -> usize {
        if self.ncol == 0 {
            0
        } else {
            self.data.len() / self.ncol
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncol..(i + 1) * self.ncol]
    }

    pub fn push_row(&mut self, r: &[f64]) {
        debug_assert_eq!(r.len(), self.ncol);
        self.data.extend_from_slice(r);
    }

    pub fn dot_row(&self, i: usize, b: &[f64]) -> f64 {
        self.row(i).iter().zip(b).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// Logistic regression for a 0/1 response.
    Bernoulli,
    /// Linear regression with Gaussian errors.
    Gaussian,
    /// Gamma regression with a log link.
    Gamma,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Box bound on logistic coefficients; `None` turns divergence into a
    /// separation error instead.
    pub clip: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 200,
            grad_tol: 1e-8,
            clip: None,
        }
    }
}

/// Magnitude beyond which an unclipped logistic fit is declared separated.
const SEPARATION_BOUND: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub coef: Vec<f64>,
    /// Gaussian: error variance (MLE). Gamma: Pearson dispersion. Bernoulli: 1.
    pub scale: f64,
    pub iterations: usize,
    pub clipped: bool,
}

fn weighted_cross(x: &Matrix, w: &[f64]) -> DMatrix<f64> {
    let p = x.ncol;
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..x.nrow() {
        let wi = w[i];
        if wi == 0.0 {
            continue;
        }
        let r = x.row(i);
        for j in 0..p {
            let v = wi * r[j];
            if v == 0.0 {
                continue;
            }
            for k in j..p {
                a[(j, k)] += v * r[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            a[(j, k)] = a[(k, j)];
        }
    }
    a
}

fn solve_spd(a: DMatrix<f64>, b: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularDesign(what.to_string()))?;
    // Reject numerically rank-deficient designs that Cholesky happens to pass.
    let l = chol.l();
    let min_diag = l.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(min_diag * min_diag > 1e-12 * scale) {
        return Err(Error::SingularDesign(what.to_string()));
    }
    Ok(chol.solve(&b))
}

/// Checks that the columns of `x` are linearly independent on rows with
/// positive weight.
pub fn check_full_rank(x: &Matrix, w: &[f64], what: &str) -> Result<()> {
    let a = weighted_cross(x, w);
    let b = DVector::zeros(x.ncol);
    solve_spd(a, b, what).map(|_| ())
}

fn offset_at(offset: Option<&[f64]>, i: usize) -> f64 {
    offset.map_or(0.0, |o| o[i])
}

/// Weighted log-likelihood of a logistic model.
pub fn logistic_loglik(x: &Matrix, y: &[f64], w: &[f64], offset: Option<&[f64]>, b: &[f64]) -> f64 {
    (0..x.nrow())
        .map(|i| {
            if w[i] == 0.0 {
                return 0.0;
            }
            let eta = x.dot_row(i, b) + offset_at(offset, i);
            w[i] * (y[i] * log_expit(eta) + (1.0 - y[i]) * log1m_expit(eta))
        })
        .sum()
}

fn fit_logistic(
    x: &Matrix,
    y: &[f64],
    w: &[f64],
    offset: Option<&[f64]>,
    init: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<GlmFit> {
    let p = x.ncol;
    let mut b: Vec<f64> = init.map_or_else(|| vec![0.0; p], <[f64]>::to_vec);
    let mut ll = logistic_loglik(x, y, w, offset, &b);
    let mut clipped = false;
    for iter in 0..opts.max_iter {
        let mut grad = DVector::<f64>::zeros(p);
        let mut wv = vec![0.0; x.nrow()];
        for i in 0..x.nrow() {
            if w[i] == 0.0 {
                continue;
            }
            let eta = x.dot_row(i, &b) + offset_at(offset, i);
            let mu = expit(eta);
            let r = x.row(i);
            for j in 0..p {
                grad[j] += w[i] * (y[i] - mu) * r[j];
            }
            wv[i] = w[i] * mu * (1.0 - mu);
        }
        let active: Vec<bool> = (0..p)
            .map(|j| match opts.clip {
                Some(c) if b[j].abs() >= c => {
                    // Pinned at the bound with the gradient pushing outwards.
                    !(b[j].signum() * grad[j] > 0.0)
                }
                _ => true,
            })
            .collect();
        let gnorm = (0..p)
            .filter(|&j| active[j])
            .map(|j| grad[j] * grad[j])
            .sum::<f64>()
            .sqrt();
        if gnorm < opts.grad_tol {
            return Ok(GlmFit {
                coef: b,
                scale: 1.0,
                iterations: iter,
                clipped,
            });
        }
        let mut info = weighted_cross(x, &wv);
        for j in 0..p {
            if !active[j] {
                for k in 0..p {
                    info[(j, k)] = 0.0;
                    info[(k, j)] = 0.0;
                }
                info[(j, j)] = 1.0;
                grad[j] = 0.0;
            }
        }
        // Tiny ridge keeps the step defined when mu saturates.
        for j in 0..p {
            info[(j, j)] += 1e-12;
        }
        let step = match solve_spd(info, grad.clone(), "logistic information") {
            Ok(s) => s,
            Err(_) => {
                if opts.clip.is_none() {
                    return Err(Error::Separation("logistic model".into()));
                }
                grad.clone() * 0.1
            }
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let mut cand: Vec<f64> = b.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let mut hit = false;
            if let Some(c) = opts.clip {
                for v in cand.iter_mut() {
                    if v.abs() > c {
                        *v = v.signum() * c;
                        hit = true;
                    }
                }
            }
            let cll = logistic_loglik(x, y, w, offset, &cand);
            if cll >= ll - 1e-12 * ll.abs().max(1.0) {
                let moved = cand
                    .iter()
                    .zip(&b)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                b = cand;
                clipped |= hit;
                let improved = cll - ll;
                ll = cll;
                accepted = true;
                if moved < 1e-13 || (improved.abs() < 1e-15 && t < 1.0) {
                    return Ok(GlmFit {
                        coef: b,
                        scale: 1.0,
                        iterations: iter + 1,
                        clipped,
                    });
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Ok(GlmFit {
                coef: b,
                scale: 1.0,
                iterations: iter + 1,
                clipped,
            });
        }
        if opts.clip.is_none() && b.iter().any(|v| v.abs() > SEPARATION_BOUND) {
            return Err(Error::Separation("logistic model".into()));
        }
    }
    Ok(GlmFit {
        coef: b,
        scale: 1.0,
        iterations: opts.max_iter,
        clipped,
    })
}

fn fit_gaussian(x: &Matrix, y: &[f64], w: &[f64], offset: Option<&[f64]>) -> Result<GlmFit> {
    let p = x.ncol;
    let a = weighted_cross(x, w);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut wsum = 0.0;
    for i in 0..x.nrow() {
        if w[i] == 0.0 {
            continue;
        }
        let r = x.row(i);
        let yi = y[i] - offset_at(offset, i);
        for j in 0..p {
            rhs[j] += w[i] * r[j] * yi;
        }
        wsum += w[i];
    }
    let b = solve_spd(a, rhs, "linear model")?;
    let coef: Vec<f64> = b.iter().copied().collect();
    let mut ss = 0.0;
    for i in 0..x.nrow() {
        if w[i] == 0.0 {
            continue;
        }
        let r = y[i] - offset_at(offset, i) - x.dot_row(i, &coef);
        ss += w[i] * r * r;
    }
    Ok(GlmFit {
        coef,
        scale: ss / wsum,
        iterations: 1,
        clipped: false,
    })
}

fn fit_gamma(
    x: &Matrix,
    y: &[f64],
    w: &[f64],
    offset: Option<&[f64]>,
    init: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<GlmFit> {
    let p = x.ncol;
    if y.iter().zip(w).any(|(&v, &wi)| wi > 0.0 && v <= 0.0) {
        return Err(Error::InvalidInput("gamma response must be positive".into()));
    }
    let mut b: Vec<f64> = match init {
        Some(i) => i.to_vec(),
        None => {
            // Start from least squares on log(y).
            let ly: Vec<f64> = y.iter().map(|v| v.max(1e-300).ln()).collect();
            fit_gaussian(x, &ly, w, offset)?.coef
        }
    };
    let mut iterations = 0;
    for iter in 0..opts.max_iter {
        iterations = iter + 1;
        let mut grad = DVector::<f64>::zeros(p);
        for i in 0..x.nrow() {
            if w[i] == 0.0 {
                continue;
            }
            let mu = (x.dot_row(i, &b) + offset_at(offset, i)).exp();
            let r = x.row(i);
            for j in 0..p {
                grad[j] += w[i] * (y[i] - mu) / mu * r[j];
            }
        }
        if grad.norm() < opts.grad_tol {
            break;
        }
        // Fisher scoring: working weights are the prior weights under the log link.
        let info = weighted_cross(x, w);
        let step = solve_spd(info, grad, "gamma model")?;
        let dev = |b: &[f64]| -> f64 {
            (0..x.nrow())
                .map(|i| {
                    let mu = (x.dot_row(i, b) + offset_at(offset, i)).exp();
                    w[i] * ((y[i] - mu) / mu - (y[i] / mu).ln())
                })
                .sum()
        };
        let d0 = dev(&b);
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = b.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            if dev(&cand) <= d0 + 1e-12 * d0.abs().max(1.0) || t < 1e-8 {
                b = cand;
                break;
            }
            t *= 0.5;
        }
    }
    let mut pearson = 0.0;
    let mut wsum = 0.0;
    for i in 0..x.nrow() {
        if w[i] == 0.0 {
            continue;
        }
        let mu = (x.dot_row(i, &b) + offset_at(offset, i)).exp();
        pearson += w[i] * ((y[i] - mu) / mu).powi(2);
        wsum += w[i];
    }
    let dof = (wsum - p as f64).max(1.0);
    Ok(GlmFit {
        coef: b,
        scale: pearson / dof,
        iterations,
        clipped: false,
    })
}

/// Weighted maximum-likelihood fit.
pub fn fit(
    family: Family,
    x: &Matrix,
    y: &[f64],
    w: &[f64],
    offset: Option<&[f64]>,
    init: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<GlmFit> {
    assert_eq!(x.nrow(), y.len());
    assert_eq!(x.nrow(), w.len());
    match family {
        Family::Bernoulli => {
            check_full_rank(x, w, "logistic design")?;
            fit_logistic(x, y, w, offset, init, opts)
        }
        Family::Gaussian => fit_gaussian(x, y, w, offset),
        Family::Gamma => fit_gamma(x, y, w, offset, init, opts),
    }
}

/// Mean response at linear predictor `eta`.
pub fn inverse_link(family: Family, eta: f64) -> f64 {
    match family {
        Family::Bernoulli => expit(eta),
        Family::Gaussian => eta,
        Family::Gamma => eta.exp(),
    }
}

/// Log density of `y` for a Bernoulli or Gaussian response at linear predictor `eta`.
pub fn log_density(family: Family, eta: f64, scale: f64, y: f64) -> f64 {
    match family {
        Family::Bernoulli => {
            if y > 0.5 {
                log_expit(eta)
            } else {
                log1m_expit(eta)
            }
        }
        Family::Gaussian => {
            let r = y - eta;
            -0.5 * (2.0 * std::f64::consts::PI * scale).ln() - r * r / (2.0 * scale)
        }
        Family::Gamma => {
            let shape = 1.0 / scale;
            let mu = eta.exp();
            let rate = shape / mu;
            shape * rate.ln() + (shape - 1.0) * y.ln() - rate * y - statrs::function::gamma::ln_gamma(shape)
        }
    }
}
