//! Synthetic scenarios for the benchmark: covariate, treatment and outcome
//! models with logistic response mechanisms whose intercepts are calibrated
//! to a target observation rate.

use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MissingnessAssumption, Unit, VariableKind};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, Rng};
use crate::stats::expit;

/// Monte Carlo sample size used by intercept calibration.
pub const CALIBRATION_DRAWS: usize = 100_000;
/// Tolerance on the calibrated observation rate.
pub const CALIBRATION_TOL: f64 = 1e-3;
const CALIBRATION_RANGE: (f64, f64) = (-20.0, 20.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateParams {
    /// `P(X = 1)` for a binary covariate.
    pub p: f64,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreatmentParams {
    pub alpha0: f64,
    pub alpha_x: f64,
    /// Residual sd, continuous treatment only.
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeParams {
    pub beta0: f64,
    pub beta_t: f64,
    pub beta_x: f64,
    pub beta_tx: f64,
    /// Residual sd, continuous outcome only.
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RxParams {
    /// Calibrated when `None`.
    pub gamma0: Option<f64>,
    pub gamma_x: f64,
    pub gamma_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtParams {
    pub eta0: Option<f64>,
    pub eta_x: f64,
    pub eta_t: f64,
    pub eta_r: f64,
}

/// `logit P(R^Y = 1) = phi0 + rx_coef R^X + rt_coef R^T + u_x X + u_t T + u_y Y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RyParams {
    pub phi0: Option<f64>,
    pub rx_coef: f64,
    pub rt_coef: f64,
    pub u_x: f64,
    pub u_t: f64,
    pub u_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub x_kind: VariableKind,
    pub t_kind: VariableKind,
    pub y_kind: VariableKind,
    pub x_params: CovariateParams,
    pub t_params: TreatmentParams,
    pub y_params: OutcomeParams,
    pub rx_params: RxParams,
    pub rt_params: RtParams,
    pub ry_params: RyParams,
    pub assumption: MissingnessAssumption,
    #[serde(default)]
    pub null_effect: bool,
    pub target_obs_rate: f64,
}

impl ScenarioConfig {
    /// Benchmark scenario for a kind combination and assumption. Each response
    /// model uses the coefficient set matching the kind of the variable it
    /// governs; intercepts are left for calibration.
    pub fn standard(
        x_kind: VariableKind,
        t_kind: VariableKind,
        y_kind: VariableKind,
        assumption: MissingnessAssumption,
    ) -> Self {
        use VariableKind::*;
        let x_params = CovariateParams {
            p: 0.5,
            mean: 0.2,
            sd: 1.0,
        };
        let t_params = match t_kind {
            Binary => TreatmentParams {
                alpha0: -0.3,
                alpha_x: 0.9,
                sigma: 1.0,
            },
            Continuous => TreatmentParams {
                alpha0: 0.5,
                alpha_x: 0.9,
                sigma: 1.0,
            },
        };
        let y_params = match y_kind {
            Binary => OutcomeParams {
                beta0: -0.4,
                beta_t: 1.1,
                beta_x: 0.9,
                beta_tx: 0.5,
                sigma: 1.0,
            },
            Continuous => OutcomeParams {
                beta0: -0.3,
                beta_t: 1.0,
                beta_x: 0.8,
                beta_tx: 0.5,
                sigma: 1.0,
            },
        };
        let rx_params = match x_kind {
            Binary => RxParams {
                gamma0: None,
                gamma_x: 0.6,
                gamma_t: -0.4,
            },
            Continuous => RxParams {
                gamma0: None,
                gamma_x: -1.0,
                gamma_t: 0.6,
            },
        };
        let rt_params = match t_kind {
            Binary => RtParams {
                eta0: None,
                eta_x: 0.4,
                eta_t: 0.4,
                eta_r: 0.5,
            },
            Continuous => RtParams {
                eta0: None,
                eta_x: -0.6,
                eta_t: -0.4,
                eta_r: 0.5,
            },
        };
        let (u_x, u_t, u_y) = match (y_kind, assumption) {
            (Binary, MissingnessAssumption::A1) => (-0.8, 0.9, 0.0),
            (Binary, MissingnessAssumption::A2) => (-0.8, 0.0, 2.2),
            (Binary, MissingnessAssumption::A3 { .. }) => (0.0, 0.9, 2.2),
            (Continuous, MissingnessAssumption::A1) => (-0.4, -0.4, 0.0),
            (Continuous, MissingnessAssumption::A2) => (-0.4, 0.0, -1.8),
            (Continuous, MissingnessAssumption::A3 { .. }) => (0.0, -0.4, -1.8),
            _ => (0.0, 0.0, 0.0),
        };
        ScenarioConfig {
            x_kind,
            t_kind,
            y_kind,
            x_params,
            t_params,
            y_params,
            rx_params,
            rt_params,
            ry_params: RyParams {
                phi0: None,
                rx_coef: 0.4,
                rt_coef: 0.4,
                u_x,
                u_t,
                u_y,
            },
            assumption,
            null_effect: false,
            target_obs_rate: 0.8,
        }
    }

    /// The same scenario with no treatment effect (`beta_t = beta_tx = 0`).
    pub fn into_null(mut self) -> Self {
        self.null_effect = true;
        self.y_params.beta_t = 0.0;
        self.y_params.beta_tx = 0.0;
        self
    }

    /// Short identifier such as `X=bin,T=cont,Y=bin,A2` (suffix `,null`).
    pub fn id(&self) -> String {
        let k = |v: VariableKind| if v.is_binary() { "bin" } else { "cont" };
        format!(
            "X={},T={},Y={},{}{}",
            k(self.x_kind),
            k(self.t_kind),
            k(self.y_kind),
            self.assumption,
            if self.null_effect { ",null" } else { "" }
        )
    }

    /// Query point used by the benchmark: `x = 1` for binary and `x = 0` for
    /// continuous covariates, contrasting `t = 1` with `t = 0`.
    pub fn default_query(&self) -> crate::data::Query {
        let x = if self.x_kind.is_binary() { 1.0 } else { 0.0 };
        crate::data::Query::new(vec![x], 1.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.ry_params;
        let bad = |msg: &str| Err(Error::Config(format!("{}: {msg}", self.id())));
        match self.assumption {
            MissingnessAssumption::A1 if r.u_y != 0.0 => {
                return bad("A1 outcome response may not depend on Y")
            }
            MissingnessAssumption::A2 if r.u_t != 0.0 => {
                return bad("A2 outcome response may not depend on T")
            }
            MissingnessAssumption::A3 { .. } if r.u_x != 0.0 => {
                return bad("A3 outcome response may not depend on X")
            }
            MissingnessAssumption::Mcar | MissingnessAssumption::Mar
                if r.u_x != 0.0 || r.u_t != 0.0 || r.u_y != 0.0 =>
            {
                return bad("MCAR/MAR outcome response may not depend on X, T or Y")
            }
            _ => {}
        }
        if self.null_effect && (self.y_params.beta_t != 0.0 || self.y_params.beta_tx != 0.0) {
            return bad("null effect requires beta_t = beta_tx = 0");
        }
        if !(self.target_obs_rate > 0.0 && self.target_obs_rate < 1.0) {
            return bad("target observation rate must lie in (0, 1)");
        }
        if self.x_kind.is_binary() && !(0.0..=1.0).contains(&self.x_params.p) {
            return bad("P(X = 1) must lie in [0, 1]");
        }
        if !self.x_kind.is_binary() && self.x_params.sd <= 0.0 {
            return bad("covariate sd must be positive");
        }
        Ok(())
    }

    pub fn is_calibrated(&self) -> bool {
        self.rx_params.gamma0.is_some()
            && self.rt_params.eta0.is_some()
            && self.ry_params.phi0.is_some()
    }

    fn draw_xty(&self, rng: &mut Rng) -> (f64, f64, f64) {
        let x = match self.x_kind {
            VariableKind::Binary => bernoulli(rng, self.x_params.p),
            VariableKind::Continuous => self.x_params.mean + self.x_params.sd * normal(rng),
        };
        let tp = &self.t_params;
        let t_lin = tp.alpha0 + tp.alpha_x * x;
        let t = match self.t_kind {
            VariableKind::Binary => bernoulli(rng, expit(t_lin)),
            VariableKind::Continuous => t_lin + tp.sigma * normal(rng),
        };
        let yp = &self.y_params;
        let y_lin = yp.beta0 + yp.beta_t * t + yp.beta_x * x + yp.beta_tx * t * x;
        let y = match self.y_kind {
            VariableKind::Binary => bernoulli(rng, expit(y_lin)),
            VariableKind::Continuous => y_lin + yp.sigma * normal(rng),
        };
        (x, t, y)
    }

    fn rx_slope(&self, x: f64, t: f64) -> f64 {
        self.rx_params.gamma_x * x + self.rx_params.gamma_t * t
    }

    fn rt_slope(&self, x: f64, t: f64, rx: bool) -> f64 {
        let p = &self.rt_params;
        p.eta_x * x + p.eta_t * t + p.eta_r * f64::from(u8::from(rx))
    }

    fn ry_slope(&self, x: f64, t: f64, y: f64, rx: bool, rt: bool) -> f64 {
        let p = &self.ry_params;
        p.rx_coef * f64::from(u8::from(rx))
            + p.rt_coef * f64::from(u8::from(rt))
            + p.u_x * x
            + p.u_t * t
            + p.u_y * y
    }

    /// Fills every missing intercept by calibration on one frozen Monte Carlo
    /// sample, in causal order (`R^X`, then `R^T`, then `R^Y`).
    pub fn calibrated(&self, seed: u64) -> Result<Self> {
        self.validate()?;
        let mut cfg = self.clone();
        if cfg.is_calibrated() {
            return Ok(cfg);
        }
        let mut rng = rng_from(derive_seed(seed, 0xCA11));
        let draws: Vec<(f64, f64, f64, f64, f64)> = (0..CALIBRATION_DRAWS)
            .map(|_| {
                let (x, t, y) = cfg.draw_xty(&mut rng);
                (x, t, y, rng.random::<f64>(), rng.random::<f64>())
            })
            .collect();
        let target = cfg.target_obs_rate;
        let gamma0 = match cfg.rx_params.gamma0 {
            Some(g) => g,
            None => {
                let lin: Vec<f64> = draws.iter().map(|d| cfg.rx_slope(d.0, d.1)).collect();
                calibrate_on_draws(&lin, target, CALIBRATION_TOL)?
            }
        };
        cfg.rx_params.gamma0 = Some(gamma0);
        let rx: Vec<bool> = draws
            .iter()
            .map(|d| d.3 < expit(gamma0 + cfg.rx_slope(d.0, d.1)))
            .collect();
        let eta0 = match cfg.rt_params.eta0 {
            Some(e) => e,
            None => {
                let lin: Vec<f64> = draws
                    .iter()
                    .zip(&rx)
                    .map(|(d, &r)| cfg.rt_slope(d.0, d.1, r))
                    .collect();
                calibrate_on_draws(&lin, target, CALIBRATION_TOL)?
            }
        };
        cfg.rt_params.eta0 = Some(eta0);
        if cfg.ry_params.phi0.is_none() {
            let lin: Vec<f64> = draws
                .iter()
                .zip(&rx)
                .map(|(d, &r)| {
                    let rt = d.4 < expit(eta0 + cfg.rt_slope(d.0, d.1, r));
                    cfg.ry_slope(d.0, d.1, d.2, r, rt)
                })
                .collect();
            cfg.ry_params.phi0 = Some(calibrate_on_draws(&lin, target, CALIBRATION_TOL)?);
        }
        Ok(cfg)
    }
}

fn bernoulli(rng: &mut Rng, p: f64) -> f64 {
    if rng.random::<f64>() < p {
        1.0
    } else {
        0.0
    }
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn mean_rate(draws: &[f64], c: f64) -> f64 {
    draws.iter().map(|d| expit(c + d)).sum::<f64>() / draws.len() as f64
}

/// Bisection for `c` with `mean(expit(c + draw)) = target` on a fixed sample.
pub fn calibrate_on_draws(draws: &[f64], target: f64, tol: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) || draws.is_empty() {
        return Err(Error::Config(format!(
            "calibration target {target} must lie in (0, 1)"
        )));
    }
    let (mut lo, mut hi) = CALIBRATION_RANGE;
    let f_lo = mean_rate(draws, lo);
    let f_hi = mean_rate(draws, hi);
    if target < f_lo - tol || target > f_hi + tol {
        return Err(Error::Calibration {
            target,
            low: f_lo,
            high: f_hi,
        });
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let f = mean_rate(draws, mid);
        if (f - target).abs() < 1e-13 || hi - lo < 1e-12 {
            break;
        }
        if f < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let achieved = mean_rate(draws, mid);
    if (achieved - target).abs() > tol {
        return Err(Error::Calibration {
            target,
            low: f_lo,
            high: f_hi,
        });
    }
    Ok(mid)
}

/// Calibrates an intercept against `CALIBRATION_DRAWS` frozen draws of the
/// non-intercept part of a logit.
pub fn calibrate_intercept<F>(mut sampler: F, target: f64, tol: f64, seed: u64) -> Result<f64>
where
    F: FnMut(&mut Rng) -> f64,
{
    let mut rng = rng_from(seed);
    let draws: Vec<f64> = (0..CALIBRATION_DRAWS).map(|_| sampler(&mut rng)).collect();
    calibrate_on_draws(&draws, target, tol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedData {
    pub observed: Dataset,
    /// Fully observed shadow copy with the latent values.
    pub latent: Dataset,
    /// Configuration with calibrated intercepts.
    pub config: ScenarioConfig,
}

/// Seed used for calibration when `simulate` is given an uncalibrated config.
pub const DEFAULT_CALIBRATION_SEED: u64 = 20_240_917;

/// Draws `n` units. Deterministic in `(cfg, n, seed)`.
pub fn simulate(cfg: &ScenarioConfig, n: usize, seed: u64) -> Result<SimulatedData> {
    let cfg = cfg.calibrated(DEFAULT_CALIBRATION_SEED)?;
    let gamma0 = cfg.rx_params.gamma0.unwrap_or_default();
    let eta0 = cfg.rt_params.eta0.unwrap_or_default();
    let phi0 = cfg.ry_params.phi0.unwrap_or_default();
    let mut rng = rng_from(seed);
    let mut observed = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, t, y) = cfg.draw_xty(&mut rng);
        let rx = rng.random::<f64>() < expit(gamma0 + cfg.rx_slope(x, t));
        let rt = rng.random::<f64>() < expit(eta0 + cfg.rt_slope(x, t, rx));
        let ry = rng.random::<f64>() < expit(phi0 + cfg.ry_slope(x, t, y, rx, rt));
        observed.push(Unit::masked(&[x], t, y, &[rx], rt, ry));
        latent.push(Unit::complete(vec![x], t, y));
    }
    let kinds = (vec![cfg.x_kind], cfg.t_kind, cfg.y_kind);
    Ok(SimulatedData {
        observed: Dataset::new(observed, kinds.0.clone(), kinds.1, kinds.2),
        latent: Dataset::new(latent, kinds.0, kinds.1, kinds.2),
        config: cfg,
    })
}

/// Analytic conditional effect under the scenario's outcome model.
pub fn true_cate(cfg: &ScenarioConfig, x: &[f64], t1: f64, t0: f64) -> f64 {
    let p = &cfg.y_params;
    let x = x[0];
    match cfg.y_kind {
        VariableKind::Continuous => (p.beta_t + p.beta_tx * x) * (t1 - t0),
        VariableKind::Binary => {
            let m = |t: f64| expit(p.beta0 + p.beta_t * t + p.beta_x * x + p.beta_tx * t * x);
            m(t1) - m(t0)
        }
    }
}

// ---------------------------------------------------------------------------
// Semicontinuous outcome scenario
// ---------------------------------------------------------------------------

/// Binary covariate and treatment with a semicontinuous outcome: a logistic
/// positivity part `D` and a Gamma magnitude with log-linear mean. Outcome
/// response depends on the outcome only through `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPartConfig {
    pub p_x: f64,
    pub t_params: TreatmentParams,
    /// `logit P(D = 1) = a + b_t t + b_x x + b_tx t x`, stored as
    /// `(beta0, beta_t, beta_x, beta_tx)`.
    pub d_params: OutcomeParams,
    /// Log-mean of positive outcomes, same layout as `d_params`.
    pub m_params: OutcomeParams,
    pub gamma_shape: f64,
    pub rx_params: RxParams,
    pub rt_params: RtParams,
    /// `u_y` multiplies `D` here.
    pub ry_params: RyParams,
    pub assumption: MissingnessAssumption,
    pub target_obs_rate: f64,
}

impl TwoPartConfig {
    pub fn standard(assumption: MissingnessAssumption) -> Self {
        let (u_x, u_t, u_y) = match assumption {
            MissingnessAssumption::A1 => (-0.8, 0.9, 0.0),
            MissingnessAssumption::A2 => (-0.8, 0.0, 2.0),
            MissingnessAssumption::A3 { .. } => (0.0, 0.9, 2.0),
            _ => (0.0, 0.0, 0.0),
        };
        TwoPartConfig {
            p_x: 0.5,
            t_params: TreatmentParams {
                alpha0: -0.3,
                alpha_x: 0.9,
                sigma: 1.0,
            },
            d_params: OutcomeParams {
                beta0: 0.6,
                beta_t: 0.8,
                beta_x: -0.7,
                beta_tx: 0.4,
                sigma: 1.0,
            },
            m_params: OutcomeParams {
                beta0: 1.0,
                beta_t: 0.3,
                beta_x: 0.2,
                beta_tx: -0.1,
                sigma: 1.0,
            },
            gamma_shape: 2.0,
            rx_params: RxParams {
                gamma0: None,
                gamma_x: 0.6,
                gamma_t: -0.4,
            },
            rt_params: RtParams {
                eta0: None,
                eta_x: 0.4,
                eta_t: 0.4,
                eta_r: 0.5,
            },
            ry_params: RyParams {
                phi0: None,
                rx_coef: 0.4,
                rt_coef: 0.4,
                u_x,
                u_t,
                u_y,
            },
            assumption,
            target_obs_rate: 0.8,
        }
    }

    fn as_scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            x_kind: VariableKind::Binary,
            t_kind: VariableKind::Binary,
            y_kind: VariableKind::Binary,
            x_params: CovariateParams {
                p: self.p_x,
                mean: 0.0,
                sd: 1.0,
            },
            t_params: self.t_params,
            y_params: self.d_params,
            rx_params: self.rx_params,
            rt_params: self.rt_params,
            ry_params: self.ry_params,
            assumption: self.assumption,
            null_effect: false,
            target_obs_rate: self.target_obs_rate,
        }
    }

    pub fn positive_probability(&self, t: f64, x: f64) -> f64 {
        let p = &self.d_params;
        expit(p.beta0 + p.beta_t * t + p.beta_x * x + p.beta_tx * t * x)
    }

    pub fn positive_mean(&self, t: f64, x: f64) -> f64 {
        let p = &self.m_params;
        (p.beta0 + p.beta_t * t + p.beta_x * x + p.beta_tx * t * x).exp()
    }

    pub fn true_cate(&self, x: f64, t1: f64, t0: f64) -> f64 {
        self.positive_probability(t1, x) * self.positive_mean(t1, x)
            - self.positive_probability(t0, x) * self.positive_mean(t0, x)
    }

    /// Draws `n` units; the outcome response uses `D` in place of `Y`.
    pub fn simulate(&self, n: usize, seed: u64) -> Result<SimulatedData> {
        // Calibration only needs (X, T, D), which the binary scenario reproduces.
        let cal = self.as_scenario().calibrated(DEFAULT_CALIBRATION_SEED)?;
        let gamma0 = cal.rx_params.gamma0.unwrap_or_default();
        let eta0 = cal.rt_params.eta0.unwrap_or_default();
        let phi0 = cal.ry_params.phi0.unwrap_or_default();
        let shape = self.gamma_shape;
        let mut rng = rng_from(seed);
        let mut observed = Vec::with_capacity(n);
        let mut latent = Vec::with_capacity(n);
        for _ in 0..n {
            let x = bernoulli(&mut rng, self.p_x);
            let t = bernoulli(&mut rng, expit(self.t_params.alpha0 + self.t_params.alpha_x * x));
            let d = bernoulli(&mut rng, self.positive_probability(t, x));
            let y = if d > 0.0 {
                let mean = self.positive_mean(t, x);
                Gamma::new(shape, mean / shape)
                    .map_err(|e| Error::Config(e.to_string()))?
                    .sample(&mut rng)
                    .max(f64::MIN_POSITIVE)
            } else {
                0.0
            };
            let rx = rng.random::<f64>() < expit(gamma0 + cal.rx_slope(x, t));
            let rt = rng.random::<f64>() < expit(eta0 + cal.rt_slope(x, t, rx));
            let ry = rng.random::<f64>() < expit(phi0 + cal.ry_slope(x, t, d, rx, rt));
            observed.push(Unit::masked(&[x], t, y, &[rx], rt, ry));
            latent.push(Unit::complete(vec![x], t, y));
        }
        let kinds = (
            vec![VariableKind::Binary],
            VariableKind::Binary,
            VariableKind::Continuous,
        );
        Ok(SimulatedData {
            observed: Dataset::new(observed, kinds.0.clone(), kinds.1, kinds.2),
            latent: Dataset::new(latent, kinds.0, kinds.1, kinds.2),
            config: cal,
        })
    }
}

/// Every kind combination in the order `(X, T, Y)` with `X` varying slowest.
pub fn kind_grid() -> Vec<(VariableKind, VariableKind, VariableKind)> {
    use VariableKind::*;
    let k = [Binary, Continuous];
    let mut out = Vec::with_capacity(8);
    for &x in &k {
        for &t in &k {
            for &y in &k {
                out.push((x, t, y));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{validate_dataset, Unit};
    use crate::stats::{chi_square_independence, logit};
    use VariableKind::*;

    #[test]
    fn degenerate_sampler_calibrates_to_logit() {
        let c = calibrate_intercept(|_| 0.0, 0.8, CALIBRATION_TOL, 1).unwrap();
        assert!((c - logit(0.8)).abs() < 1e-6, "{c}");
        let c = calibrate_intercept(|_| 0.0, 0.5, CALIBRATION_TOL, 1).unwrap();
        assert!(c.abs() < 1e-6);
    }

    #[test]
    fn unreachable_target_reports_range() {
        let err = calibrate_on_draws(&[100.0; 10], 0.3, CALIBRATION_TOL).unwrap_err();
        match err {
            Error::Calibration { low, high, .. } => {
                assert!(low > 0.99 && high > 0.99);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn binary_covariate_response_calibration_matches_monte_carlo() {
        let cfg = ScenarioConfig::standard(Binary, Binary, Binary, MissingnessAssumption::A2);
        let draw_cfg = cfg.clone();
        let gamma0 = calibrate_intercept(
            move |rng| {
                let (x, t, _) = draw_cfg.draw_xty(rng);
                0.6 * x - 0.4 * t
            },
            0.8,
            CALIBRATION_TOL,
            11,
        )
        .unwrap();
        // Independent check on a fresh sample of 10^6 draws.
        let mut rng = rng_from(99);
        let n = 1_000_000;
        let mut observed = 0usize;
        for _ in 0..n {
            let (x, t, _) = cfg.draw_xty(&mut rng);
            if rng.random::<f64>() < expit(gamma0 + 0.6 * x - 0.4 * t) {
                observed += 1;
            }
        }
        let rate = observed as f64 / n as f64;
        assert!((rate - 0.8).abs() < 0.01, "{rate}");
    }

    #[test]
    fn marginal_missing_rates_near_twenty_percent() {
        let cfg = ScenarioConfig::standard(Binary, Binary, Binary, MissingnessAssumption::A2);
        let sim = simulate(&cfg, 100_000, 5).unwrap();
        let (rx, rt, ry) = sim.observed.missing_rates();
        for r in [rx[0], rt, ry] {
            assert!((r - 0.2).abs() < 0.02, "{r}");
        }
    }

    #[test]
    fn all_kind_combinations_calibrate() {
        for (x, t, y) in kind_grid() {
            for a in [
                MissingnessAssumption::A1,
                MissingnessAssumption::A2,
                MissingnessAssumption::a3(),
            ] {
                let cfg = ScenarioConfig::standard(x, t, y, a);
                let sim = simulate(&cfg, 20_000, 3).unwrap();
                let (rx, rt, ry) = sim.observed.missing_rates();
                for r in [rx[0], rt, ry] {
                    assert!((r - 0.2).abs() < 0.03, "{} {r}", cfg.id());
                }
                assert!(validate_dataset(&sim.observed).is_empty());
            }
        }
    }

    #[test]
    fn saturated_intercepts_give_no_missingness() {
        let mut cfg = ScenarioConfig::standard(Continuous, Binary, Continuous, MissingnessAssumption::A1);
        cfg.rx_params = RxParams {
            gamma0: Some(20.0),
            gamma_x: 0.0,
            gamma_t: 0.0,
        };
        cfg.rt_params = RtParams {
            eta0: Some(20.0),
            eta_x: 0.0,
            eta_t: 0.0,
            eta_r: 0.0,
        };
        cfg.ry_params.phi0 = Some(20.0);
        cfg.ry_params.u_x = 0.0;
        cfg.ry_params.u_t = 0.0;
        let sim = simulate(&cfg, 2_000, 1).unwrap();
        assert!(sim.observed.units.iter().all(Unit::is_complete));
    }

    #[test]
    fn simulate_is_deterministic_and_masks_latent() {
        let cfg = ScenarioConfig::standard(Continuous, Continuous, Binary, MissingnessAssumption::a3());
        let a = simulate(&cfg, 500, 42).unwrap();
        let b = simulate(&cfg, 500, 42).unwrap();
        assert_eq!(a, b);
        for (o, l) in a.observed.units.iter().zip(&a.latent.units) {
            if o.rx[0] {
                assert_eq!(o.x[0], l.x[0]);
            }
            if o.rt {
                assert_eq!(o.t, l.t);
            }
            if o.ry {
                assert_eq!(o.y, l.y);
            }
        }
    }

    #[test]
    fn true_cate_examples() {
        let c = ScenarioConfig::standard(Binary, Binary, Continuous, MissingnessAssumption::A2);
        assert!((true_cate(&c, &[0.0], 1.0, 0.0) - 1.0).abs() < 1e-15);
        let b = ScenarioConfig::standard(Binary, Binary, Binary, MissingnessAssumption::A2);
        let expected = expit(2.1) - expit(0.5);
        assert!((true_cate(&b, &[1.0], 1.0, 0.0) - expected).abs() < 1e-15);
        assert!((expected - 0.2684).abs() < 1e-4);
        let null = b.into_null();
        assert_eq!(true_cate(&null, &[1.0], 1.0, 0.0), 0.0);
        assert_eq!(true_cate(&null, &[0.0], 1.0, 0.0), 0.0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ScenarioConfig::standard(Binary, Binary, Binary, MissingnessAssumption::A2);
        c.ry_params.u_t = 0.3;
        assert!(simulate(&c, 10, 0).is_err());
        let mut c = ScenarioConfig::standard(Binary, Binary, Binary, MissingnessAssumption::A2);
        c.null_effect = true;
        assert!(c.validate().is_err());
    }

    /// Under A2, within strata of `(X, Y, R^X, R^T)` the outcome response does
    /// not depend on `T`.
    #[test]
    fn a2_response_independent_of_treatment_within_strata() {
        let cfg = ScenarioConfig::standard(Binary, Binary, Binary, MissingnessAssumption::A2)
            .calibrated(DEFAULT_CALIBRATION_SEED)
            .unwrap();
        let mut rejections = 0;
        for seed in 0..20 {
            let sim = simulate(&cfg, 100_000, 1000 + seed).unwrap();
            // stratum -> [t][ry] counts
            let mut tables = vec![vec![vec![0.0; 2]; 2]; 16];
            for (o, l) in sim.observed.units.iter().zip(&sim.latent.units) {
                let s = (l.x[0].unwrap() as usize)
                    | (l.y.unwrap() as usize) << 1
                    | usize::from(o.rx[0]) << 2
                    | usize::from(o.rt) << 3;
                tables[s][l.t.unwrap() as usize][usize::from(o.ry)] += 1.0;
            }
            let (mut stat, mut df) = (0.0, 0usize);
            for t in &tables {
                let (s, d, _) = chi_square_independence(t);
                stat += s;
                df += d;
            }
            use statrs::distribution::{ChiSquared, ContinuousCDF};
            let p = 1.0 - ChiSquared::new(df as f64).unwrap().cdf(stat);
            if p < 0.01 {
                rejections += 1;
            }
        }
        assert!(rejections <= 2, "{rejections} rejections out of 20");
    }

    #[test]
    fn two_part_truth_and_masking() {
        let cfg = TwoPartConfig::standard(MissingnessAssumption::A2);
        let sim = cfg.simulate(5_000, 3).unwrap();
        let (_, _, ry) = sim.observed.missing_rates();
        assert!((ry - 0.2).abs() < 0.03);
        let zero = sim.latent.units.iter().filter(|u| u.y == Some(0.0)).count();
        assert!(zero > 0 && zero < 5_000);
        let tau = cfg.true_cate(1.0, 1.0, 0.0);
        let direct = cfg.positive_probability(1.0, 1.0) * cfg.positive_mean(1.0, 1.0)
            - cfg.positive_probability(0.0, 1.0) * cfg.positive_mean(0.0, 1.0);
        assert_eq!(tau, direct);
    }
}
