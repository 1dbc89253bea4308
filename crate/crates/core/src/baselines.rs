//! Reference estimators: oracle, complete-case analysis and the
//! missing-indicator augmented complete-case fit.

use crate::data::{CateEstimate, Dataset, Query, Unit, VariableKind};
use crate::dgp::SimulatedData;
use crate::error::{Error, Result};
use crate::glm::{Design, Factor, Term};
use crate::param_em::{fit_initial_outcome, OutcomeFamily, OutcomeFit, OutcomeModel};

/// `E(Y | x, t1) - E(Y | x, t0)` under a fitted outcome model.
pub fn plug_in_cate(fit: &OutcomeFit, query: &Query, label: &str) -> CateEstimate {
    let tau = match fit.model.family {
        OutcomeFamily::GaussianLinear => fit.eta(&query.x, query.t1) - fit.eta(&query.x, query.t0),
        _ => fit.mean(&query.x, query.t1) - fit.mean(&query.x, query.t0),
    };
    CateEstimate::new(tau, query, label)
}

fn check_query(d: &Dataset, query: &Query) -> Result<()> {
    if query.x.len() != d.p() {
        return Err(Error::InvalidInput(format!(
            "query has {} covariates, data has {}",
            query.x.len(),
            d.p()
        )));
    }
    Ok(())
}

/// Maximum likelihood on the latent, fully observed copy of simulated data.
pub fn oracle_fit(sim: &SimulatedData, model: &OutcomeModel, query: &Query) -> Result<CateEstimate> {
    oracle_fit_latent(&sim.latent, model, query)
}

/// Oracle fit from a latent dataset read back from disk.
pub fn oracle_fit_latent(latent: &Dataset, model: &OutcomeModel, query: &Query) -> Result<CateEstimate> {
    check_query(latent, query)?;
    if latent.units.iter().any(|u| !u.is_complete()) {
        return Err(Error::InvalidInput("oracle data must be fully observed".into()));
    }
    let fit = fit_initial_outcome(latent, model)?;
    Ok(plug_in_cate(&fit, query, "oracle"))
}

/// Maximum likelihood on units with every variable observed.
pub fn cca_fit(d: &Dataset, model: &OutcomeModel, query: &Query) -> Result<CateEstimate> {
    check_query(d, query)?;
    let fit = fit_initial_outcome(d, model)?;
    let mut est = plug_in_cate(&fit, query, "cca");
    let n_cc = d.units.iter().filter(|u| u.is_complete()).count();
    est.diagnostics.insert("complete_cases".into(), n_cc as f64);
    Ok(est)
}

/// Complete-case fit on units with observed treatment and outcome, with
/// masked covariates filled by 0 and one `1 - R^X_j` indicator per covariate
/// that is ever missing. The effect is evaluated with every indicator at 0.
pub fn miss_indicator_fit(d: &Dataset, model: &OutcomeModel, query: &Query) -> Result<CateEstimate> {
    check_query(d, query)?;
    model.validate(d.p())?;
    let p = d.p();
    let kept: Vec<&Unit> = d
        .units
        .iter()
        .filter(|u| u.rt && u.ry && u.t.is_some() && u.y.is_some())
        .collect();
    let flagged: Vec<usize> = (0..p)
        .filter(|&j| kept.iter().any(|u| !u.rx[j] || u.x[j].is_none()))
        .collect();

    let units: Vec<Unit> = kept
        .iter()
        .map(|u| {
            let mut x: Vec<f64> = (0..p)
                .map(|j| if u.rx[j] { u.x[j].unwrap_or(0.0) } else { 0.0 })
                .collect();
            x.extend(flagged.iter().map(|&j| f64::from(u8::from(!u.rx[j] || u.x[j].is_none()))));
            Unit::complete(x, u.t.unwrap(), u.y.unwrap())
        })
        .collect();
    let mut kinds = d.x_kinds.clone();
    kinds.extend(flagged.iter().map(|_| VariableKind::Binary));
    let augmented = Dataset::new(units, kinds, d.t_kind, d.y_kind);

    let mut terms = model.design.terms.clone();
    terms.extend((0..flagged.len()).map(|k| Term::of(Factor::X(p + k))));
    let aug_model = OutcomeModel {
        family: model.family,
        design: Design::new(terms),
    };
    let fit = fit_initial_outcome(&augmented, &aug_model).map_err(|e| match e {
        Error::SingularDesign(m) => Error::SingularDesign(format!("missing-indicator design: {m}")),
        other => other,
    })?;

    let mut x = query.x.clone();
    x.extend(flagged.iter().map(|_| 0.0));
    let aug_query = Query::new(x, query.t1, query.t0);
    let mut est = plug_in_cate(&fit, &aug_query, "miss-ind");
    est.x_query = query.x.clone();
    if flagged.is_empty() {
        est.notes
            .push("no missing covariates among retained units; indicator dropped".into());
    }
    est.diagnostics.insert("indicator_columns".into(), flagged.len() as f64);
    est.diagnostics.insert("retained_units".into(), augmented.n() as f64);
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{complete_cases, MissingnessAssumption};
    use crate::dgp::{simulate, ScenarioConfig};
    use VariableKind::{Binary, Continuous};

    #[test]
    fn noiseless_latent_data_gives_exact_effect() {
        let cfg = ScenarioConfig::standard(Continuous, Continuous, Continuous, MissingnessAssumption::A1);
        let mut sim = simulate(&cfg, 300, 4).unwrap();
        // beta = (1, 2, -1, 0.5) for (1, t, x, t:x)
        for u in &mut sim.latent.units {
            let (x, t) = (u.x[0].unwrap(), u.t.unwrap());
            u.y = Some(1.0 + 2.0 * t - x + 0.5 * t * x);
        }
        let model = OutcomeModel::standard(Continuous, 1);
        let fit = fit_initial_outcome(&sim.latent, &model).unwrap();
        for (c, e) in fit.coef.iter().zip([1.0, 2.0, -1.0, 0.5]) {
            assert!((c - e).abs() < 1e-9, "{:?}", fit.coef);
        }
        let q = Query::new(vec![2.0], 1.0, 0.0);
        let est = oracle_fit(&sim, &model, &q).unwrap();
        assert!((est.tau - 3.0).abs() < 1e-9);
        assert_eq!(est.estimator, "oracle");
    }

    #[test]
    fn fully_observed_data_gives_identical_baselines() {
        for y in [Binary, Continuous] {
            let cfg = ScenarioConfig::standard(Binary, Binary, y, MissingnessAssumption::A1);
            let sim = simulate(&cfg, 800, 11).unwrap();
            let full = sim.latent.clone();
            let model = OutcomeModel::standard(y, 1);
            let q = cfg.default_query();
            let o = oracle_fit(&sim, &model, &q).unwrap();
            let c = cca_fit(&full, &model, &q).unwrap();
            let m = miss_indicator_fit(&full, &model, &q).unwrap();
            assert_eq!(o.tau, c.tau);
            assert_eq!(c.tau, m.tau);
            assert!(m.notes.iter().any(|n| n.contains("indicator dropped")));
        }
    }

    #[test]
    fn no_missing_covariates_matches_cca_on_observed_treatment_and_outcome() {
        let cfg = ScenarioConfig::standard(Continuous, Binary, Continuous, MissingnessAssumption::A2);
        let sim = simulate(&cfg, 1500, 2).unwrap();
        let mut d = sim.observed.clone();
        for (u, l) in d.units.iter_mut().zip(&sim.latent.units) {
            u.x = l.x.clone();
            u.rx = vec![true];
        }
        let model = OutcomeModel::standard(Continuous, 1);
        let q = cfg.default_query();
        let m = miss_indicator_fit(&d, &model, &q).unwrap();
        let c = cca_fit(&complete_cases(&d), &model, &q).unwrap();
        assert!((m.tau - c.tau).abs() < 1e-12);
        assert_eq!(m.diagnostics["indicator_columns"], 0.0);
    }

    #[test]
    fn indicator_is_zero_at_the_query() {
        let cfg = ScenarioConfig::standard(Continuous, Binary, Continuous, MissingnessAssumption::A1);
        let sim = simulate(&cfg, 2000, 8).unwrap();
        let model = OutcomeModel::standard(Continuous, 1);
        let q = Query::new(vec![0.5], 1.0, 0.0);
        let est = miss_indicator_fit(&sim.observed, &model, &q).unwrap();
        assert_eq!(est.diagnostics["indicator_columns"], 1.0);
        assert_eq!(est.x_query, vec![0.5]);

        // Refit by hand: the indicator enters as a main effect only, so it
        // cancels in the contrast and the slope part must agree.
        let kept = sim.observed.filter(|u| u.rt && u.ry);
        let units: Vec<Unit> = kept
            .units
            .iter()
            .map(|u| {
                let miss = f64::from(u8::from(!u.rx[0]));
                let x = if u.rx[0] { u.x[0].unwrap() } else { 0.0 };
                Unit::complete(vec![x, miss], u.t.unwrap(), u.y.unwrap())
            })
            .collect();
        let aug = Dataset::new(units, vec![Continuous, Binary], Binary, Continuous);
        let design = Design::parse("1 + t + x1 + t:x1 + x2").unwrap();
        let fit = fit_initial_outcome(
            &aug,
            &OutcomeModel {
                family: OutcomeFamily::GaussianLinear,
                design,
            },
        )
        .unwrap();
        let hand = fit.coef[1] + fit.coef[3] * 0.5;
        assert!((est.tau - hand).abs() < 1e-10);
    }

    #[test]
    fn query_dimension_is_checked() {
        let cfg = ScenarioConfig::standard(Binary, Binary, Binary, MissingnessAssumption::A1);
        let sim = simulate(&cfg, 200, 1).unwrap();
        let model = OutcomeModel::standard(Binary, 1);
        let q = Query::new(vec![1.0, 0.0], 1.0, 0.0);
        assert!(cca_fit(&sim.observed, &model, &q).is_err());
        assert!(miss_indicator_fit(&sim.observed, &model, &q).is_err());
        assert!(oracle_fit(&sim, &model, &q).is_err());
    }
}
