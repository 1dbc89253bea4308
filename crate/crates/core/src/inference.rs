//! Nonparametric (case-resampling) bootstrap percentile intervals.
//!
//! Interval endpoints are type-7 quantiles of the retained replicate
//! estimates: linear interpolation between order statistics at position
//! `q (B' - 1)`, where `B'` counts the resamples that did not fail.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CateEstimate, Dataset, Interval};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};
use crate::stats::{quantile_sorted, sorted};

/// Share of failed resamples above which an interval is flagged.
pub const MAX_FAILURE_SHARE: f64 = 0.10;
pub const UNRELIABLE_INTERVAL: &str = "bootstrap-unreliable";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: 500,
            level: 0.95,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resamples < 2 {
            return Err(Error::Config(format!(
                "at least 2 bootstrap resamples required, got {}",
                self.resamples
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("level must lie in (0, 1), got {}", self.level)));
        }
        Ok(())
    }
}

/// Row indices of resample `b`; depends only on `(seed, b, n)`.
pub fn resample_indices(seed: u64, b: usize, n: usize) -> Vec<usize> {
    let mut rng = stream_rng(seed, 2 * b as u64);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Seed handed to the estimator on resample `b`.
pub fn resample_seed(seed: u64, b: usize) -> u64 {
    derive_seed(seed, 2 * b as u64 + 1)
}

/// Replicate estimates in resample order; `None` where the estimator failed.
pub fn bootstrap_replicates<F>(d: &Dataset, estimator: &F, cfg: &BootstrapConfig) -> Result<Vec<Option<f64>>>
where
    F: Fn(&Dataset, u64) -> Result<CateEstimate> + Sync,
{
    cfg.validate()?;
    if d.is_empty() {
        return Err(Error::InsufficientData("cannot resample an empty dataset".into()));
    }
    Ok((0..cfg.resamples)
        .into_par_iter()
        .map(|b| {
            let rs = d.resample(&resample_indices(cfg.seed, b, d.n()));
            estimator(&rs, resample_seed(cfg.seed, b))
                .ok()
                .map(|e| e.tau)
                .filter(|t| t.is_finite())
        })
        .collect())
}

/// Equal-tailed percentile interval of `values` at `level`.
pub fn percentile_interval(values: &[f64], level: f64) -> Interval {
    let s = sorted(values);
    let alpha = 1.0 - level;
    Interval {
        lower: quantile_sorted(&s, alpha / 2.0),
        upper: quantile_sorted(&s, 1.0 - alpha / 2.0),
        level,
    }
}

/// Point estimate on `d` plus a percentile interval from `cfg.resamples`
/// case resamples.
///
/// The estimator receives the data and a seed and must be deterministic in
/// both; tuning chosen on the full sample is frozen by capturing it in the
/// closure. Failed resamples are dropped and counted.
pub fn bootstrap_ci<F>(d: &Dataset, estimator: F, cfg: &BootstrapConfig) -> Result<CateEstimate>
where
    F: Fn(&Dataset, u64) -> Result<CateEstimate> + Sync,
{
    cfg.validate()?;
    let mut est = estimator(d, cfg.seed)?;
    let reps = bootstrap_replicates(d, &estimator, cfg)?;
    let kept: Vec<f64> = reps.iter().flatten().copied().collect();
    let failed = reps.len() - kept.len();
    if kept.is_empty() {
        return Err(Error::Estimation(format!(
            "all {} bootstrap resamples failed",
            cfg.resamples
        )));
    }
    est.interval = Some(percentile_interval(&kept, cfg.level));
    est.diagnostics.insert("bootstrap_resamples".into(), cfg.resamples as f64);
    est.diagnostics.insert("bootstrap_failures".into(), failed as f64);
    if failed as f64 > MAX_FAILURE_SHARE * cfg.resamples as f64 {
        est.notes.push(UNRELIABLE_INTERVAL.into());
        est.notes.push(format!(
            "{failed} of {} bootstrap resamples failed",
            cfg.resamples
        ));
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Query, Unit, VariableKind};
    use crate::stats::mean;

    fn data(n: usize) -> Dataset {
        let units = (0..n)
            .map(|i| Unit::complete(vec![0.0], (i % 2) as f64, i as f64))
            .collect();
        Dataset::new(units, vec![VariableKind::Binary], VariableKind::Binary, VariableKind::Continuous)
    }

    fn q() -> Query {
        Query::new(vec![0.0], 1.0, 0.0)
    }

    fn mean_y(d: &Dataset, _seed: u64) -> Result<CateEstimate> {
        let y: Vec<f64> = d.units.iter().map(|u| u.y.unwrap()).collect();
        Ok(CateEstimate::new(mean(&y), &q(), "mean"))
    }

    #[test]
    fn constant_estimator_gives_degenerate_interval() {
        let cfg = BootstrapConfig { resamples: 50, level: 0.95, seed: 1 };
        let est = bootstrap_ci(&data(20), |_, _| Ok(CateEstimate::new(3.0, &q(), "c")), &cfg).unwrap();
        let i = est.interval.unwrap();
        assert_eq!((i.lower, i.upper), (3.0, 3.0));
        assert_eq!(est.diagnostics["bootstrap_failures"], 0.0);
    }

    #[test]
    fn same_seed_same_interval() {
        let cfg = BootstrapConfig { resamples: 200, level: 0.9, seed: 42 };
        let a = bootstrap_ci(&data(40), mean_y, &cfg).unwrap();
        let b = bootstrap_ci(&data(40), mean_y, &cfg).unwrap();
        assert_eq!(a.interval, b.interval);
        let c = bootstrap_ci(&data(40), mean_y, &BootstrapConfig { seed: 43, ..cfg.clone() }).unwrap();
        assert_ne!(a.interval, c.interval);
    }

    #[test]
    fn earlier_resamples_do_not_depend_on_count() {
        let d = data(30);
        let small = bootstrap_replicates(&d, &mean_y, &BootstrapConfig { resamples: 10, level: 0.9, seed: 5 }).unwrap();
        let large = bootstrap_replicates(&d, &mean_y, &BootstrapConfig { resamples: 100, level: 0.9, seed: 5 }).unwrap();
        assert_eq!(small[..], large[..10]);
    }

    #[test]
    fn wider_level_gives_weakly_wider_interval() {
        let d = data(50);
        let reps: Vec<f64> = bootstrap_replicates(&d, &mean_y, &BootstrapConfig { resamples: 300, level: 0.9, seed: 9 })
            .unwrap()
            .into_iter()
            .flatten()
            .collect();
        let mut prev = percentile_interval(&reps, 0.5);
        for level in [0.6, 0.8, 0.9, 0.95, 0.99] {
            let i = percentile_interval(&reps, level);
            assert!(i.lower <= prev.lower && i.upper >= prev.upper);
            prev = i;
        }
        let s = sorted(&reps);
        let i = percentile_interval(&reps, 0.9);
        assert!(s.iter().any(|&v| v <= i.lower) && s.iter().any(|&v| v >= i.upper));
    }

    #[test]
    fn interval_endpoints_follow_type_7() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        let i = percentile_interval(&v, 0.5);
        assert_eq!((i.lower, i.upper), (2.0, 4.0));
        let i = percentile_interval(&v, 0.9);
        assert!((i.lower - 1.2).abs() < 1e-12 && (i.upper - 4.8).abs() < 1e-12);
    }

    #[test]
    fn failures_are_dropped_and_flagged() {
        let d = data(30);
        let cfg = BootstrapConfig { resamples: 100, level: 0.95, seed: 3 };
        let flaky = |rs: &Dataset, seed: u64| {
            if seed % 5 == 0 {
                Err(Error::Solver("unlucky".into()))
            } else {
                mean_y(rs, seed)
            }
        };
        let reps = bootstrap_replicates(&d, &flaky, &cfg).unwrap();
        let expected_failures = (0..100).filter(|&b| resample_seed(3, b) % 5 == 0).count();
        assert_eq!(reps.iter().filter(|r| r.is_none()).count(), expected_failures);
        let est = bootstrap_ci(&d, mean_y, &cfg).unwrap();
        assert!(!est.has_note(UNRELIABLE_INTERVAL));

        let mostly_failing = |rs: &Dataset, seed: u64| {
            if seed % 4 == 0 {
                mean_y(rs, seed)
            } else {
                Err(Error::Solver("unlucky".into()))
            }
        };
        let cfg = BootstrapConfig { seed: 4, ..cfg };
        let est = bootstrap_ci(&d, mostly_failing, &cfg).unwrap();
        assert!(est.has_note(UNRELIABLE_INTERVAL));
        assert!(est.diagnostics["bootstrap_failures"] > 10.0);
        let never = |_: &Dataset, s: u64| {
            if s == 4 {
                mean_y(&d, s)
            } else {
                Err(Error::Solver("never".into()))
            }
        };
        assert!(bootstrap_ci(&d, never, &cfg).is_err());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let d = data(10);
        for cfg in [
            BootstrapConfig { resamples: 1, level: 0.95, seed: 0 },
            BootstrapConfig { resamples: 10, level: 1.0, seed: 0 },
            BootstrapConfig { resamples: 10, level: 0.0, seed: 0 },
        ] {
            assert!(bootstrap_ci(&d, mean_y, &cfg).unwrap_err().is_config());
        }
    }
}
