use std::fs;
use std::path::{Path, PathBuf};

use mnar_cate::baselines::{cca_fit, miss_indicator_fit, oracle_fit_latent};
use mnar_cate::data::{read_csv_path, write_csv, CateEstimate, Dataset, MissingnessAssumption, Query, VariableKind};
use mnar_cate::dgp::{kind_grid, simulate, true_cate, ScenarioConfig, TwoPartConfig, DEFAULT_CALIBRATION_SEED};
use mnar_cate::discrete_ident::counterexamples::{verify_counterexample_1, verify_counterexample_2};
use mnar_cate::glm::Design;
use mnar_cate::harness::{run_study, EstimatorKind, StudyConfig};
use mnar_cate::inference::{bootstrap_ci, BootstrapConfig};
use mnar_cate::np2sls::{estimate_cate_np_tuned, select_tuning};
use mnar_cate::param_em::{
    estimate_cate_param, estimate_cate_param_from, EmConfig, MissingnessModel, OffsetTerm, OutcomeFamily,
    OutcomeModel,
};
use mnar_cate::sensitivity::{linear_grid, render_curve_svg, sensitivity_curve, write_curve_csv, SensitivitySpec, SweepMode};
use serde_json::json;

use crate::config::{self, FileConfig, ModelConfig};
use crate::{BenchArgs, Cli, CliError, Command, DataArgs, EstimateArgs, Family, Kind, Method, Mode, SensitivityArgs, SimulateArgs};

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = config::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Simulate(a) => simulate_cmd(cli, &cfg, a),
        Command::Estimate(a) => estimate_cmd(cli, &cfg.model, a),
        Command::Sensitivity(a) => sensitivity_cmd(cli, &cfg.model, a),
        Command::Bench(a) => bench_cmd(cli, &cfg, a),
        Command::Verify => verify_cmd(),
    }
}

fn kind(k: Kind) -> VariableKind {
    match k {
        Kind::Bin => VariableKind::Binary,
        Kind::Cont => VariableKind::Continuous,
    }
}

fn assumption(s: &str) -> Result<MissingnessAssumption, CliError> {
    Ok(MissingnessAssumption::parse(s)?)
}

fn out_dir(cli: &Cli, default: &str) -> Result<PathBuf, CliError> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))
}

fn write_dataset(path: &Path, d: &Dataset) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))?;
    Ok(write_csv(d, file)?)
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn simulate_cmd(cli: &Cli, cfg: &FileConfig, a: &SimulateArgs) -> Result<(), CliError> {
    let seed = cli.seed.unwrap_or(0);
    let dir = out_dir(cli, ".")?;
    let (sim, scenario_json, query, tau) = if a.two_part {
        let tp = TwoPartConfig::standard(assumption(&a.assumption)?);
        let sim = tp.simulate(a.n, seed)?;
        let query = Query::new(vec![1.0], 1.0, 0.0);
        let tau = tp.true_cate(1.0, 1.0, 0.0);
        (sim, pretty(&tp), query, tau)
    } else {
        let base = match &cfg.scenario {
            Some(s) => s.clone(),
            None => ScenarioConfig::standard(kind(a.x), kind(a.t), kind(a.y), assumption(&a.assumption)?),
        };
        let base = if a.null { base.into_null() } else { base };
        let scenario = base.calibrated(DEFAULT_CALIBRATION_SEED)?;
        let sim = simulate(&scenario, a.n, seed)?;
        let query = scenario.default_query();
        let tau = true_cate(&scenario, &query.x, query.t1, query.t0);
        (sim, pretty(&scenario), query, tau)
    };
    write_dataset(&dir.join("observed.csv"), &sim.observed)?;
    write_dataset(&dir.join("oracle.csv"), &sim.latent)?;
    write_file(&dir.join("scenario.json"), &scenario_json)?;
    let (rx, rt, ry) = sim.observed.missing_rates();
    println!(
        "{}",
        pretty(&json!({
            "n": a.n,
            "seed": seed,
            "missing_rate": {"x": rx, "t": rt, "y": ry},
            "query": query,
            "true_cate": tau,
            "files": ["observed.csv", "oracle.csv", "scenario.json"],
        }))
        .trim_end()
    );
    Ok(())
}

/// Number of covariates from the header `x1..xp,t,y,...`.
fn covariate_count(path: &Path) -> Result<usize, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let header = text.lines().next().unwrap_or_default();
    Ok(header.split(',').take_while(|c| c.trim() != "t").count())
}

fn infer_kind(values: impl Iterator<Item = Option<f64>>) -> VariableKind {
    let mut seen = false;
    for v in values.flatten() {
        seen = true;
        if v != 0.0 && v != 1.0 {
            return VariableKind::Continuous;
        }
    }
    if seen {
        VariableKind::Binary
    } else {
        VariableKind::Continuous
    }
}

fn read_dataset(path: &Path, args: &DataArgs) -> Result<Dataset, CliError> {
    let p = covariate_count(path)?;
    let cont = VariableKind::Continuous;
    let raw = read_csv_path(path, vec![cont; p], cont, cont).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let x_kinds = match &args.x_kinds {
        Some(k) if k.len() != p => {
            return Err(CliError::Config(format!("--x-kinds lists {} kinds for {p} covariates", k.len())))
        }
        Some(k) => k.iter().map(|&k| kind(k)).collect(),
        None => (0..p).map(|j| infer_kind(raw.units.iter().map(|u| u.x[j]))).collect(),
    };
    let t_kind = args.t_kind.map(kind).unwrap_or_else(|| infer_kind(raw.units.iter().map(|u| u.t)));
    let y_kind = args.y_kind.map(kind).unwrap_or_else(|| infer_kind(raw.units.iter().map(|u| u.y)));
    Ok(Dataset::new(raw.units, x_kinds, t_kind, y_kind))
}

/// Everything `estimate` and `sensitivity` need besides the data.
struct Setup {
    assumption: Option<MissingnessAssumption>,
    outcome: OutcomeModel,
    response_formula: Option<String>,
    query: Query,
    em: EmConfig,
    boot: Option<BootstrapConfig>,
}

impl Setup {
    fn build(cli: &Cli, m: &ModelConfig, args: &DataArgs, d: &Dataset) -> Result<Self, CliError> {
        let p = d.p();
        let assumption = args
            .assumption
            .as_deref()
            .or(m.assumption.as_deref())
            .map(assumption)
            .transpose()?;
        let family = match args.family {
            Some(Family::Bernoulli) => OutcomeFamily::BernoulliLogit,
            Some(Family::Gaussian) => OutcomeFamily::GaussianLinear,
            Some(Family::TwoPart) => OutcomeFamily::TwoPart,
            None => m.family.unwrap_or(match d.y_kind {
                VariableKind::Binary => OutcomeFamily::BernoulliLogit,
                VariableKind::Continuous => OutcomeFamily::GaussianLinear,
            }),
        };
        let design = match &m.outcome_formula {
            Some(f) => Design::parse(f)?,
            None => Design::saturated_linear(p),
        };
        let outcome = OutcomeModel { family, design };
        outcome.validate(p).map_err(|e| CliError::Config(e.to_string()))?;
        let x = args.x.clone().or_else(|| m.x.clone()).unwrap_or_else(|| {
            d.x_kinds
                .iter()
                .map(|k| if k.is_binary() { 1.0 } else { 0.0 })
                .collect()
        });
        if x.len() != p {
            return Err(CliError::Config(format!("query has {} covariates, data has {p}", x.len())));
        }
        let query = Query::new(x, args.t1.or(m.t1).unwrap_or(1.0), args.t0.or(m.t0).unwrap_or(0.0));
        let seed = cli.seed.unwrap_or(m.em.seed);
        let em = EmConfig { seed, ..m.em.clone() };
        em.validate()?;
        let boot = args
            .bootstrap
            .map(|resamples| {
                let b = BootstrapConfig { resamples, level: args.level, seed };
                b.validate().map(|_| b)
            })
            .transpose()?;
        Ok(Setup {
            assumption,
            outcome,
            response_formula: m.response_formula.clone(),
            query,
            em,
            boot,
        })
    }

    fn assumption(&self) -> Result<MissingnessAssumption, CliError> {
        self.assumption
            .ok_or_else(|| CliError::Config("this method needs --assumption".into()))
    }

    fn missingness(&self, p: usize) -> Result<MissingnessModel, CliError> {
        let a = self.assumption()?;
        let model = match &self.response_formula {
            Some(f) => MissingnessModel {
                assumption: a,
                design: Design::parse(f)?,
                offset_delta: 0.0,
                offset_term: OffsetTerm::None,
            },
            None => MissingnessModel::default_for(a, p, self.outcome.family)?,
        };
        model.validate(p).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(model)
    }
}

fn with_interval<F>(d: &Dataset, boot: Option<&BootstrapConfig>, seed: u64, f: F) -> Result<CateEstimate, CliError>
where
    F: Fn(&Dataset, u64) -> mnar_cate::Result<CateEstimate> + Sync,
{
    Ok(match boot {
        Some(b) => bootstrap_ci(d, f, b)?,
        None => f(d, seed)?,
    })
}

fn estimate_cmd(cli: &Cli, m: &ModelConfig, a: &EstimateArgs) -> Result<(), CliError> {
    let d = read_dataset(&a.data.data, &a.data)?;
    let s = Setup::build(cli, m, &a.data, &d)?;
    let (q, model, boot, seed) = (&s.query, &s.outcome, s.boot.as_ref(), s.em.seed);
    let report = match a.method {
        Method::Np => {
            let tuning = select_tuning(&d, s.assumption()?, &m.sieve, &m.reg)?;
            let est = with_interval(&d, boot, seed, |r, _| estimate_cate_np_tuned(r, &tuning, q))?;
            json!({"method": "np", "estimate": est, "tuning": tuning})
        }
        Method::Para => {
            let miss = s.missingness(d.p())?;
            let full = estimate_cate_param(&d, model, &miss, &s.em, q)?;
            let start = full.fit.start();
            let mut est = full.estimate.clone();
            if let Some(b) = boot {
                // Resamples start from the full-sample fit; the point estimate stays the cold fit.
                let booted = bootstrap_ci(
                    &d,
                    |r, seed| {
                        let em = EmConfig { seed, ..s.em.clone() };
                        Ok(estimate_cate_param_from(r, model, &miss, &em, q, Some(&start))?.estimate)
                    },
                    b,
                )?;
                est.interval = booted.interval;
                for (k, v) in booted.diagnostics.iter().filter(|(k, _)| k.starts_with("bootstrap_")) {
                    est.diagnostics.insert(k.clone(), *v);
                }
                for n in booted.notes {
                    if !est.notes.contains(&n) {
                        est.notes.push(n);
                    }
                }
            }
            let fit = &full.fit;
            json!({
                "method": "para",
                "estimate": est,
                "outcome": {"formula": model.design.to_string(), "coefficients": fit.outcome.coef, "scale": fit.outcome.scale},
                "response": {"formula": miss.design.to_string(), "coefficients": fit.lambda, "clipped": fit.lambda_clipped},
                "em": {
                    "mode": fit.mode,
                    "iterations": fit.iterations,
                    "converged": fit.converged,
                    "initial_loglik": fit.trace.first(),
                    "final_loglik": fit.loglik(),
                    "min_ess": fit.min_ess,
                    "notes": fit.notes,
                },
            })
        }
        Method::Oracle => {
            let path = a
                .oracle
                .as_ref()
                .ok_or_else(|| CliError::Config("the oracle method needs --oracle <csv>".into()))?;
            let latent = read_dataset(path, &a.data)?;
            let latent = Dataset::new(latent.units, d.x_kinds.clone(), d.t_kind, d.y_kind);
            let est = with_interval(&latent, boot, seed, |r, _| oracle_fit_latent(r, model, q))?;
            json!({"method": "oracle", "estimate": est})
        }
        Method::Cca => {
            let est = with_interval(&d, boot, seed, |r, _| cca_fit(r, model, q))?;
            json!({"method": "cca", "estimate": est})
        }
        Method::MissInd => {
            let est = with_interval(&d, boot, seed, |r, _| miss_indicator_fit(r, model, q))?;
            json!({"method": "miss-ind", "estimate": est})
        }
    };
    let text = pretty(&report);
    if cli.out.is_some() {
        write_file(&out_dir(cli, ".")?.join("estimate.json"), &text)?;
    }
    print!("{text}");
    Ok(())
}

fn sensitivity_cmd(cli: &Cli, m: &ModelConfig, a: &SensitivityArgs) -> Result<(), CliError> {
    let d = read_dataset(&a.data.data, &a.data)?;
    let s = Setup::build(cli, m, &a.data, &d)?;
    if s.response_formula.is_some() {
        return Err(CliError::Config(
            "sensitivity uses the default response design; drop response_formula".into(),
        ));
    }
    if a.svg && cli.out.is_none() {
        return Err(CliError::Config("--svg needs --out".into()));
    }
    if a.points < 2 || !(a.lo < a.hi) {
        return Err(CliError::Config("need --lo < --hi and at least 2 points".into()));
    }
    let spec = SensitivitySpec {
        assumption: s.assumption()?,
        delta_grid: m.delta_grid.clone().unwrap_or_else(|| linear_grid(a.lo, a.hi, a.points)),
        query: s.query.clone(),
    };
    let mode = match a.mode {
        Mode::Warm => SweepMode::Warm,
        Mode::Cold => SweepMode::Cold,
    };
    let curve = sensitivity_curve(&d, &s.outcome, &spec, &s.em, s.boot.as_ref(), mode)?;
    if curve.gaps() == curve.points.len() {
        return Err(CliError::Failure("every grid point failed to fit".into()));
    }
    let mut csv = Vec::new();
    write_curve_csv(&curve, &mut csv)?;
    let csv = String::from_utf8(csv).expect("utf-8 csv");
    match &cli.out {
        Some(_) => {
            let dir = out_dir(cli, ".")?;
            write_file(&dir.join("sensitivity.csv"), &csv)?;
            if a.svg {
                let title = format!("Sensitivity of the CATE, {}", spec.assumption);
                write_file(&dir.join("sensitivity.svg"), &render_curve_svg(&curve, &title))?;
            }
            eprintln!("{} grid points, {} gaps", curve.points.len(), curve.gaps());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn bench_cmd(cli: &Cli, cfg: &FileConfig, a: &BenchArgs) -> Result<(), CliError> {
    let mut study = match &cfg.study {
        Some(s) => s.clone(),
        None => {
            let mut scenarios = Vec::new();
            for name in &a.assumptions {
                let asm = assumption(name)?;
                for (x, t, y) in kind_grid() {
                    let s = ScenarioConfig::standard(x, t, y, asm);
                    scenarios.push(if a.null { s.into_null() } else { s });
                }
            }
            StudyConfig {
                scenarios,
                ..StudyConfig::default()
            }
        }
    };
    if let Some(r) = a.replicates {
        study.replicates = r;
    }
    if let Some(n) = a.n {
        study.n = n;
    }
    if let Some(list) = &a.estimators {
        study.estimators = list.iter().map(|e| e.parse()).collect::<mnar_cate::Result<Vec<EstimatorKind>>>()?;
    }
    if let Some(seed) = cli.seed {
        study.seed = seed;
    }
    study.log |= a.log;
    study.output_dir = Some(out_dir(cli, "bench")?);
    let report = run_study(&study)?;
    println!("{:<28} {:<9} {:>4} {:>6} {:>10} {:>10} {:>10}", "scenario", "estimator", "ok", "failed", "mean", "median", "iqr");
    for r in &report.summary {
        println!(
            "{:<28} {:<9} {:>4} {:>6} {:>10.3} {:>10.3} {:>10.3}",
            r.scenario,
            r.estimator.label(),
            r.ok,
            r.failed,
            r.mean,
            r.median,
            r.iqr
        );
    }
    Ok(())
}

fn verify_cmd() -> Result<(), CliError> {
    let reports = [verify_counterexample_1(), verify_counterexample_2()];
    let mut ok = true;
    for r in &reports {
        println!("{}", r.title);
        for c in &r.checks {
            println!(
                "  {} {:<40} expected {:<10} got {}",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.expected,
                c.actual
            );
        }
        ok &= r.passed();
    }
    let total: usize = reports.iter().map(|r| r.checks.len()).sum();
    let failed: usize = reports.iter().flat_map(|r| &r.checks).filter(|c| !c.pass).count();
    println!("{} of {total} checks passed", total - failed);
    if ok {
        Ok(())
    } else {
        Err(CliError::Failure(format!("{failed} counterexample checks failed")))
    }
}
