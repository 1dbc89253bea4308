//! Series two-stage least squares for the response-odds function.
//!
//! The first stage smooths `P(R^Y = 0 | instrument, selection)` and
//! `E{phi(selection, Y) 1(R^Y = 1) | instrument, selection}` at evaluation
//! points; the second stage solves the stacked sieve system under a quadratic
//! bound. The implied weights `1 + zeta` then enter a weighted complete-case
//! regression of `Y` on `(T, X)`.
//!
//! Under A2 the instrument is `T` and the odds depend on `(X, Y)`. Under A3 the
//! instrument is the identifying covariate and the odds depend on
//! `(T, X^c, Y)`. Discrete selection variables split the problem into
//! separate systems; continuous ones enter through a tensor-product sieve.

pub mod basis;
pub mod regularized;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{
    complete_cases, subset_observed_xt, CateEstimate, Dataset, MissingnessAssumption, Query, Unit,
    VariableKind,
};
use crate::error::{Error, Result};
use crate::stats::{quantile_sorted, silverman_bandwidth, sorted};

pub use basis::{hermite_envelope_basis, saturated_binary_basis, AffineStandardizer, BasisKind};
pub use regularized::{solve_regularized, RegularizedSolution};

/// A conditioning variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Var {
    T,
    X(usize),
}

impl Var {
    pub fn value(self, u: &Unit) -> Option<f64> {
        match self {
            Var::T => u.t,
            Var::X(j) => u.x.get(j).copied().flatten(),
        }
    }

    pub fn kind(self, d: &Dataset) -> VariableKind {
        match self {
            Var::T => d.t_kind,
            Var::X(j) => d.x_kinds[j],
        }
    }

    pub fn name(self) -> String {
        match self {
            Var::T => "t".into(),
            Var::X(j) => format!("x{}", j + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SieveConfig {
    /// Basis dimension in the outcome.
    pub j: usize,
    /// Basis dimension per continuous selection variable.
    pub jx: usize,
    /// `None` picks the saturated basis for a binary outcome and the
    /// Hermite envelope otherwise.
    pub basis_kind: Option<BasisKind>,
    /// Jointly whiten continuous selection variables with a continuous outcome.
    pub whiten: bool,
    /// Quantile evaluation points per continuous instrument or selection variable.
    pub grid_size: usize,
}

impl Default for SieveConfig {
    fn default() -> Self {
        SieveConfig {
            j: 4,
            jx: 3,
            basis_kind: None,
            whiten: true,
            grid_size: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegularizationConfig {
    /// Penalty matrix; identity when absent.
    pub lambda_matrix: Option<Vec<Vec<f64>>>,
    pub bound_b: f64,
    pub pi_min: f64,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        RegularizationConfig {
            lambda_matrix: None,
            bound_b: 10.0,
            pi_min: 0.05,
        }
    }
}

impl RegularizationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bound_b > 0.0 && self.bound_b.is_finite()) {
            return Err(Error::Config(format!("bound_b must be positive, got {}", self.bound_b)));
        }
        if !(self.pi_min > 0.0 && self.pi_min < 1.0) {
            return Err(Error::Config(format!("pi_min must lie in (0, 1), got {}", self.pi_min)));
        }
        if let Some(l) = &self.lambda_matrix {
            let k = l.len();
            if l.iter().any(|r| r.len() != k) {
                return Err(Error::Config("lambda_matrix must be square".into()));
            }
            for i in 0..k {
                for j in 0..i {
                    if (l[i][j] - l[j][i]).abs() > 1e-12 * (1.0 + l[i][j].abs()) {
                        return Err(Error::Config("lambda_matrix must be symmetric".into()));
                    }
                }
            }
            let m = DMatrix::from_fn(k, k, |i, j| l[i][j]);
            if m.cholesky().is_none() {
                return Err(Error::Config("lambda_matrix must be positive definite".into()));
            }
        }
        Ok(())
    }

    fn lambda(&self, dim: usize) -> Result<DMatrix<f64>> {
        match &self.lambda_matrix {
            None => Ok(DMatrix::identity(dim, dim)),
            Some(l) if l.len() == dim => Ok(DMatrix::from_fn(dim, dim, |i, j| l[i][j])),
            Some(l) => Err(Error::Config(format!(
                "lambda_matrix is {0}x{0} but the sieve has dimension {dim}",
                l.len()
            ))),
        }
    }
}

/// Every data-dependent tuning choice, frozen so that resamples reuse it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpTuning {
    pub assumption: MissingnessAssumption,
    pub sieve: SieveConfig,
    pub reg: RegularizationConfig,
    pub basis: BasisKind,
    /// Effective outcome basis dimension.
    pub j: usize,
    pub instrument: Vec<Var>,
    pub selection: Vec<Var>,
    pub bandwidths: Vec<(Var, f64)>,
    pub grids: Vec<(Var, Vec<f64>)>,
    /// Applied to `(continuous selection values..., y)` before the basis;
    /// `y` is included only for a continuous outcome.
    pub standardizer: AffineStandardizer,
    pub y_kind: VariableKind,
    pub var_kinds: Vec<(Var, VariableKind)>,
}

impl NpTuning {
    pub fn bandwidth(&self, v: Var) -> f64 {
        self.bandwidths
            .iter()
            .find(|(w, _)| *w == v)
            .map(|(_, h)| *h)
            .expect("bandwidth for every continuous variable")
    }

    pub fn grid(&self, v: Var) -> &[f64] {
        self.grids
            .iter()
            .find(|(w, _)| *w == v)
            .map(|(_, g)| g.as_slice())
            .expect("grid for every continuous instrument or selection variable")
    }

    fn is_continuous(&self, v: Var) -> bool {
        self.var_kinds
            .iter()
            .any(|(w, k)| *w == v && *k == VariableKind::Continuous)
    }

    fn selection_continuous(&self) -> Vec<Var> {
        self.selection.iter().copied().filter(|&v| self.is_continuous(v)).collect()
    }

    fn selection_discrete(&self) -> Vec<Var> {
        self.selection.iter().copied().filter(|&v| !self.is_continuous(v)).collect()
    }

    /// Sieve dimension of the response-odds function.
    pub fn dimension(&self) -> usize {
        self.sieve.jx.pow(self.selection_continuous().len() as u32) * self.j
    }

    /// `phi(selection, y)` for a complete case.
    pub fn basis_at(&self, u: &Unit) -> Option<Vec<f64>> {
        let sc = self.selection_continuous();
        let mut raw: Vec<f64> = sc.iter().map(|v| v.value(u)).collect::<Option<_>>()?;
        let y = u.y?;
        if self.y_kind == VariableKind::Continuous {
            raw.push(y);
        }
        let z = self.standardizer.apply(&raw);
        let mut g = vec![1.0];
        for zi in &z[..sc.len()] {
            g = basis::kron(&g, &basis::hermite_standardized(*zi, self.sieve.jx));
        }
        let h = match self.basis {
            BasisKind::SaturatedBinary => saturated_binary_basis(y),
            BasisKind::HermiteEnvelope => basis::hermite_standardized(z[sc.len()], self.j),
        };
        Some(basis::kron(&g, &h))
    }

    /// Values of the discrete selection variables.
    pub fn level_of(&self, u: &Unit) -> Option<Vec<f64>> {
        self.selection_discrete().iter().map(|v| v.value(u)).collect()
    }
}

/// Instrument and selection variables for an assumption.
pub fn roles(assumption: MissingnessAssumption, p: usize) -> Result<(Vec<Var>, Vec<Var>)> {
    match assumption {
        MissingnessAssumption::A1 | MissingnessAssumption::Mar | MissingnessAssumption::Mcar => {
            Ok((vec![], vec![]))
        }
        MissingnessAssumption::A2 => Ok((vec![Var::T], (0..p).map(Var::X).collect())),
        MissingnessAssumption::A3 { .. } => {
            assumption.validate(p)?;
            let ids = assumption.identifying_columns(p);
            let inst = ids.iter().map(|&j| Var::X(j)).collect();
            let mut sel = vec![Var::T];
            sel.extend((0..p).filter(|j| !ids.contains(j)).map(Var::X));
            Ok((inst, sel))
        }
        MissingnessAssumption::General => Err(Error::InvalidInput(
            "the outcome distribution is not identified without an exclusion restriction".into(),
        )),
    }
}

fn all_vars(p: usize) -> Vec<Var> {
    std::iter::once(Var::T).chain((0..p).map(Var::X)).collect()
}

/// Bandwidths, grids and standardization from the data at hand.
pub fn select_tuning(
    d: &Dataset,
    assumption: MissingnessAssumption,
    sieve: &SieveConfig,
    reg: &RegularizationConfig,
) -> Result<NpTuning> {
    reg.validate()?;
    if sieve.j == 0 || sieve.jx == 0 || sieve.grid_size == 0 {
        return Err(Error::Config("sieve dimensions and grid size must be positive".into()));
    }
    let (instrument, selection) = roles(assumption, d.p())?;
    let basis = match (sieve.basis_kind, d.y_kind) {
        (Some(BasisKind::SaturatedBinary), VariableKind::Continuous) => {
            return Err(Error::Config("saturated basis requires a binary outcome".into()))
        }
        (Some(k), _) => k,
        (None, VariableKind::Binary) => BasisKind::SaturatedBinary,
        (None, VariableKind::Continuous) => BasisKind::HermiteEnvelope,
    };
    let j = if basis == BasisKind::SaturatedBinary { 2 } else { sieve.j };
    let xt = subset_observed_xt(d);
    let cc = complete_cases(d);
    if cc.is_empty() {
        return Err(Error::InsufficientData("no complete cases".into()));
    }
    let var_kinds: Vec<(Var, VariableKind)> = all_vars(d.p()).into_iter().map(|v| (v, v.kind(d))).collect();
    let mut bandwidths = Vec::new();
    let mut grids = Vec::new();
    for &(v, k) in &var_kinds {
        if k != VariableKind::Continuous {
            continue;
        }
        let vals: Vec<f64> = xt.units.iter().filter_map(|u| v.value(u)).collect();
        if vals.len() < 2 {
            return Err(Error::InsufficientData(format!("fewer than two observed values of {}", v.name())));
        }
        let h = silverman_bandwidth(&vals);
        if !(h > 0.0) {
            return Err(Error::InsufficientVariation(format!("{} has no spread", v.name())));
        }
        bandwidths.push((v, h));
        if instrument.contains(&v) || selection.contains(&v) {
            let s = sorted(&vals);
            let g = sieve.grid_size;
            let mut pts: Vec<f64> = (0..g)
                .map(|i| quantile_sorted(&s, (i + 1) as f64 / (g + 1) as f64))
                .collect();
            pts.dedup();
            grids.push((v, pts));
        }
    }
    let sel_cont: Vec<Var> = selection
        .iter()
        .copied()
        .filter(|v| v.kind(d) == VariableKind::Continuous)
        .collect();
    let y_cont = d.y_kind == VariableKind::Continuous;
    let dim = sel_cont.len() + usize::from(y_cont);
    let rows: Vec<Vec<f64>> = cc
        .units
        .iter()
        .map(|u| {
            let mut r: Vec<f64> = sel_cont.iter().map(|v| v.value(u).unwrap()).collect();
            if y_cont {
                r.push(u.y.unwrap());
            }
            r
        })
        .collect();
    let standardizer = if dim == 0 || selection.is_empty() {
        AffineStandardizer::identity(dim)
    } else if sieve.whiten && y_cont && !sel_cont.is_empty() {
        AffineStandardizer::whitening(&rows, dim)?
    } else {
        AffineStandardizer::diagonal(&rows, dim)?
    };
    Ok(NpTuning {
        assumption,
        sieve: sieve.clone(),
        reg: reg.clone(),
        basis,
        j,
        instrument,
        selection,
        bandwidths,
        grids,
        standardizer,
        y_kind: d.y_kind,
        var_kinds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStage {
    /// Row-major stacked design.
    pub m: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    /// Instrument values followed by continuous selection values per row.
    pub eval_points: Vec<Vec<f64>>,
    /// Discrete selection level the system belongs to.
    pub level: Vec<f64>,
    pub warnings: Vec<String>,
}

impl FirstStage {
    pub fn design(&self) -> DMatrix<f64> {
        let k = self.m.first().map_or(0, Vec::len);
        DMatrix::from_fn(self.m.len(), k, |i, j| self.m[i][j])
    }

    pub fn response(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.b)
    }
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

fn gaussian(u: f64) -> f64 {
    (-0.5 * u * u).exp()
}

/// Stacked sample analogue of the integral equation for one discrete
/// selection level.
pub fn build_first_stage(d: &Dataset, tuning: &NpTuning, level: &[f64]) -> Result<FirstStage> {
    let sel_disc = tuning.selection_discrete();
    let sel_cont = tuning.selection_continuous();
    let inst_disc: Vec<Var> = tuning.instrument.iter().copied().filter(|&v| !tuning.is_continuous(v)).collect();
    let inst_cont: Vec<Var> = tuning.instrument.iter().copied().filter(|&v| tuning.is_continuous(v)).collect();

    let units: Vec<&Unit> = d
        .units
        .iter()
        .filter(|u| u.xt_observed())
        .filter(|u| sel_disc.iter().zip(level).all(|(v, l)| v.value(u) == Some(*l)))
        .collect();
    if units.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no units with observed (X, T) at selection level {level:?}"
        )));
    }
    let phi: Vec<Option<Vec<f64>>> = units
        .iter()
        .map(|u| if u.ry { tuning.basis_at(u) } else { None })
        .collect();
    let k = tuning.dimension();

    let mut disc_levels: Vec<Vec<f64>> = units
        .iter()
        .map(|u| inst_disc.iter().map(|v| v.value(u).unwrap()).collect())
        .collect();
    disc_levels.sort_by(|a: &Vec<f64>, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    disc_levels.dedup();

    let kernel_vars: Vec<Var> = inst_cont.iter().chain(&sel_cont).copied().collect();
    let kernel_axes: Vec<Vec<f64>> = kernel_vars.iter().map(|&v| tuning.grid(v).to_vec()).collect();
    let kernel_points = cartesian(&kernel_axes);
    let h: Vec<f64> = kernel_vars.iter().map(|&v| tuning.bandwidth(v)).collect();
    let kv: Vec<Vec<f64>> = units
        .iter()
        .map(|u| kernel_vars.iter().map(|v| v.value(u).unwrap()).collect())
        .collect();
    let dv: Vec<Vec<f64>> = units
        .iter()
        .map(|u| inst_disc.iter().map(|v| v.value(u).unwrap()).collect())
        .collect();

    let mut fs = FirstStage {
        m: Vec::new(),
        b: Vec::new(),
        eval_points: Vec::new(),
        level: level.to_vec(),
        warnings: Vec::new(),
    };
    for dl in &disc_levels {
        for kp in &kernel_points {
            let mut w_tot = 0.0;
            let mut miss = 0.0;
            let mut row = vec![0.0; k];
            for i in 0..units.len() {
                if dv[i] != *dl {
                    continue;
                }
                let w: f64 = kv[i]
                    .iter()
                    .zip(kp)
                    .zip(&h)
                    .map(|((a, b), hh)| gaussian((a - b) / hh))
                    .product();
                if w == 0.0 {
                    continue;
                }
                w_tot += w;
                match &phi[i] {
                    Some(f) => {
                        for (r, v) in row.iter_mut().zip(f) {
                            *r += w * v;
                        }
                    }
                    None => miss += w,
                }
            }
            let mut point = dl.clone();
            point.extend(kp);
            if !(w_tot > 0.0) {
                fs.warnings.push(format!("no kernel mass at evaluation point {point:?}; row omitted"));
                continue;
            }
            fs.m.push(row.into_iter().map(|v| v / w_tot).collect());
            fs.b.push(miss / w_tot);
            fs.eval_points.push(point);
        }
    }
    if fs.m.len() < k {
        fs.warnings.push(format!(
            "{} evaluation rows for a sieve of dimension {k}; system is underdetermined",
            fs.m.len()
        ));
    }
    Ok(fs)
}

/// Fitted sieve coefficients for one discrete selection level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddsSystem {
    pub level: Vec<f64>,
    pub coef: Vec<f64>,
    pub residual: f64,
    pub rank: usize,
    pub rows: usize,
    pub constraint_active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseOddsFit {
    pub systems: Vec<OddsSystem>,
    pub warnings: Vec<String>,
}

impl ResponseOddsFit {
    pub fn zeta(&self, tuning: &NpTuning, u: &Unit) -> Option<f64> {
        let level = tuning.level_of(u)?;
        let sys = self.systems.iter().find(|s| s.level == level)?;
        let phi = tuning.basis_at(u)?;
        Some(phi.iter().zip(&sys.coef).map(|(a, b)| a * b).sum())
    }
}

/// Solves the regularized system for each requested selection level.
pub fn fit_response_odds(d: &Dataset, tuning: &NpTuning, levels: &[Vec<f64>]) -> Result<ResponseOddsFit> {
    let lambda = tuning.reg.lambda(tuning.dimension())?;
    let mut fit = ResponseOddsFit {
        systems: Vec::new(),
        warnings: Vec::new(),
    };
    for level in levels {
        let fs = build_first_stage(d, tuning, level)?;
        fit.warnings.extend(fs.warnings.iter().cloned());
        if fs.m.is_empty() {
            return Err(Error::InsufficientData(format!("no first-stage rows at level {level:?}")));
        }
        let sol = solve_regularized(&fs.design(), &fs.response(), &lambda, tuning.reg.bound_b)?;
        fit.systems.push(OddsSystem {
            level: level.clone(),
            coef: sol.beta.clone(),
            residual: sol.residual,
            rank: sol.rank,
            rows: fs.m.len(),
            constraint_active: sol.constraint_active(),
        });
    }
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectedWeights {
    pub weights: Vec<f64>,
    pub clamped_fraction: f64,
}

/// `clamp(1 + zeta, 1, 1/pi_min)` for each complete case of `d`, in order.
pub fn corrected_weights<F: Fn(&Unit) -> f64>(d: &Dataset, zeta_fn: F, pi_min: f64) -> CorrectedWeights {
    let upper = 1.0 / pi_min;
    let mut clamped = 0usize;
    let weights: Vec<f64> = d
        .units
        .iter()
        .filter(|u| u.is_complete())
        .map(|u| {
            let raw = 1.0 + zeta_fn(u);
            let w = if raw.is_nan() { upper } else { raw.clamp(1.0, upper) };
            if w != raw {
                clamped += 1;
            }
            w
        })
        .collect();
    let n = weights.len().max(1) as f64;
    CorrectedWeights {
        clamped_fraction: clamped as f64 / n,
        weights,
    }
}

/// Weighted local-constant regression of `Y` on `(T, X)` among complete cases:
/// exact matching on discrete coordinates, Gaussian product kernel on
/// continuous ones.
pub fn weighted_regression(cc: &[&Unit], weights: &[f64], t: f64, x: &[f64], tuning: &NpTuning) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (u, w) in cc.iter().zip(weights) {
        let mut k = *w;
        for &(v, kind) in &tuning.var_kinds {
            let target = match v {
                Var::T => t,
                Var::X(j) => x[j],
            };
            let val = v.value(u).expect("complete case");
            if kind == VariableKind::Continuous {
                k *= gaussian((val - target) / tuning.bandwidth(v));
            } else if val != target {
                k = 0.0;
                break;
            }
        }
        if k > 0.0 {
            num += k * u.y.expect("complete case");
            den += k;
        }
    }
    if !(den > 0.0) {
        return Err(Error::Estimation(format!(
            "no complete cases near cell t = {t}, x = {x:?}"
        )));
    }
    Ok(num / den)
}

/// Output of [`estimate_cate_np`], carrying the tuning for reuse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpEstimate {
    pub estimate: CateEstimate,
    pub tuning: NpTuning,
}

/// Series 2SLS CATE with tuning selected on `d`.
pub fn estimate_cate_np(
    d: &Dataset,
    assumption: MissingnessAssumption,
    sieve: &SieveConfig,
    reg: &RegularizationConfig,
    query: &Query,
) -> Result<NpEstimate> {
    let tuning = select_tuning(d, assumption, sieve, reg)?;
    let estimate = estimate_cate_np_tuned(d, &tuning, query)?;
    Ok(NpEstimate { estimate, tuning })
}

/// Series 2SLS CATE with frozen tuning.
pub fn estimate_cate_np_tuned(d: &Dataset, tuning: &NpTuning, query: &Query) -> Result<CateEstimate> {
    if query.x.len() != d.p() {
        return Err(Error::InvalidInput(format!(
            "query has {} covariates, data has {}",
            query.x.len(),
            d.p()
        )));
    }
    let cc_data = complete_cases(d);
    let mut est = CateEstimate::new(0.0, query, "np");
    // Complete cases that can receive kernel weight at either query cell.
    let relevant = |u: &Unit| {
        tuning.var_kinds.iter().all(|&(v, kind)| {
            kind == VariableKind::Continuous
                || match v {
                    Var::T => u.t == Some(query.t1) || u.t == Some(query.t0),
                    Var::X(j) => u.x[j] == Some(query.x[j]),
                }
        })
    };
    let cc: Vec<&Unit> = cc_data.units.iter().filter(|u| relevant(u)).collect();

    let weights = if tuning.selection.is_empty() && tuning.instrument.is_empty() {
        est.notes.push("unweighted complete-case regression".into());
        vec![1.0; cc.len()]
    } else {
        let mut levels: Vec<Vec<f64>> = cc.iter().filter_map(|u| tuning.level_of(u)).collect();
        levels.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        levels.dedup();
        let fit = fit_response_odds(d, tuning, &levels)?;
        est.notes.extend(fit.warnings.iter().cloned());
        let sub = d.with_units(cc.iter().map(|u| (*u).clone()).collect());
        let cw = corrected_weights(&sub, |u| fit.zeta(tuning, u).unwrap_or(f64::NAN), tuning.reg.pi_min);
        est.diagnostics.insert("clamped_fraction".into(), cw.clamped_fraction);
        est.diagnostics.insert(
            "residual".into(),
            fit.systems.iter().map(|s| s.residual).sum(),
        );
        est.diagnostics.insert(
            "min_rank".into(),
            fit.systems.iter().map(|s| s.rank).min().unwrap_or(0) as f64,
        );
        est.diagnostics.insert(
            "first_stage_rows".into(),
            fit.systems.iter().map(|s| s.rows).sum::<usize>() as f64,
        );
        est.diagnostics
            .insert("sieve_dimension".into(), tuning.dimension() as f64);
        if fit.systems.iter().any(|s| s.constraint_active) {
            est.notes.push("regularization bound active".into());
        }
        cw.weights
    };
    for &(v, h) in &tuning.bandwidths {
        est.diagnostics.insert(format!("bandwidth_{}", v.name()), h);
    }
    let m1 = weighted_regression(&cc, &weights, query.t1, &query.x, tuning)?;
    let m0 = weighted_regression(&cc, &weights, query.t0, &query.x, tuning)?;
    est.tau = m1 - m0;
    Ok(est)
}
