//! Outcome and outcome-response model specifications.

use serde::{Deserialize, Serialize};

use crate::data::{MissingnessAssumption, VariableKind};
use crate::error::{Error, Result};
use crate::glm::{Design, Factor, Family, GlmFit, Term, Vars};
use crate::stats::{expit, log1m_expit, log_expit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeFamily {
    BernoulliLogit,
    GaussianLinear,
    /// Logistic model for `D = 1(Y > 0)` and a log-link Gamma model for the
    /// positive part.
    TwoPart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub family: OutcomeFamily,
    /// Regressors `U(x, t)`; shared by both parts of a two-part model.
    pub design: Design,
}

impl OutcomeModel {
    /// `1 + t + x_j + t:x_j` with the family matching the outcome kind.
    pub fn standard(y_kind: VariableKind, p: usize) -> Self {
        OutcomeModel {
            family: match y_kind {
                VariableKind::Binary => OutcomeFamily::BernoulliLogit,
                VariableKind::Continuous => OutcomeFamily::GaussianLinear,
            },
            design: Design::saturated_linear(p),
        }
    }

    pub fn two_part(p: usize) -> Self {
        OutcomeModel {
            family: OutcomeFamily::TwoPart,
            design: Design::saturated_linear(p),
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.design.is_empty() {
            return Err(Error::Config("outcome design has no terms".into()));
        }
        if self.design.uses_outcome() {
            return Err(Error::Config("outcome design may not depend on the outcome".into()));
        }
        if let Some(j) = self.design.max_covariate() {
            if j >= p {
                return Err(Error::Config(format!(
                    "outcome design references x{} but the data has {p} covariates",
                    j + 1
                )));
            }
        }
        Ok(())
    }

    /// Family of the part fitted by EM.
    pub fn em_family(&self) -> Family {
        match self.family {
            OutcomeFamily::BernoulliLogit | OutcomeFamily::TwoPart => Family::Bernoulli,
            OutcomeFamily::GaussianLinear => Family::Gaussian,
        }
    }

    /// Response of the EM part: `D` for a two-part model, `Y` otherwise.
    pub fn em_response(&self, y: f64) -> f64 {
        match self.family {
            OutcomeFamily::TwoPart => f64::from(u8::from(y > 0.0)),
            _ => y,
        }
    }

    pub fn is_discrete(&self) -> bool {
        self.em_family() == Family::Bernoulli
    }
}

/// Fitted outcome model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeFit {
    pub model: OutcomeModel,
    pub coef: Vec<f64>,
    /// Gaussian error variance; 1 for a logistic part.
    pub scale: f64,
    /// Positive-part Gamma fit of a two-part model.
    pub magnitude: Option<GlmFit>,
}

impl OutcomeFit {
    pub fn eta(&self, x: &[f64], t: f64) -> f64 {
        self.model
            .design
            .linear_predictor(&self.coef, &Vars { x, t, y: 0.0 })
    }

    /// Log density of the EM response (`Y`, or `D` for a two-part model).
    pub fn log_density(&self, x: &[f64], t: f64, r: f64) -> f64 {
        let eta = self.eta(x, t);
        match self.model.em_family() {
            Family::Bernoulli => {
                if r > 0.5 {
                    log_expit(eta)
                } else {
                    log1m_expit(eta)
                }
            }
            fam => crate::glm::log_density(fam, eta, self.scale, r),
        }
    }

    /// `E(Y | x, t)` under the fitted model.
    pub fn mean(&self, x: &[f64], t: f64) -> f64 {
        let eta = self.eta(x, t);
        match self.model.family {
            OutcomeFamily::BernoulliLogit => expit(eta),
            OutcomeFamily::GaussianLinear => eta,
            OutcomeFamily::TwoPart => {
                let m = self
                    .magnitude
                    .as_ref()
                    .map(|g| {
                        self.model
                            .design
                            .linear_predictor(&g.coef, &Vars { x, t, y: 0.0 })
                            .exp()
                    })
                    .unwrap_or(f64::NAN);
                expit(eta) * m
            }
        }
    }
}

/// Variable multiplying the fixed sensitivity offset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum OffsetTerm {
    None,
    /// `Y`, or `D` for a two-part model.
    Outcome,
    Treatment,
    /// Sum of the listed covariates; for binary covariates this is the sum of
    /// non-baseline dummies.
    Covariates(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingnessModel {
    pub assumption: MissingnessAssumption,
    /// Regressors `Z(x, t, y)` of the outcome response logit.
    pub design: Design,
    pub offset_delta: f64,
    pub offset_term: OffsetTerm,
}

impl MissingnessModel {
    /// Main-effects design allowed by the assumption: A1 uses `(x, t)`, A2
    /// `(x, y)`, A3 `(t, x^c, y)`; a two-part outcome enters through `D`.
    pub fn default_for(assumption: MissingnessAssumption, p: usize, family: OutcomeFamily) -> Result<Self> {
        assumption.validate(p)?;
        let outcome = if family == OutcomeFamily::TwoPart {
            Factor::D
        } else {
            Factor::Y
        };
        let mut terms = vec![Term::intercept()];
        match assumption {
            MissingnessAssumption::Mcar => {}
            MissingnessAssumption::Mar | MissingnessAssumption::A1 => {
                terms.push(Term::of(Factor::T));
                terms.extend((0..p).map(|j| Term::of(Factor::X(j))));
            }
            MissingnessAssumption::A2 => {
                terms.extend((0..p).map(|j| Term::of(Factor::X(j))));
                terms.push(Term::of(outcome));
            }
            MissingnessAssumption::A3 { .. } => {
                let ids = assumption.identifying_columns(p);
                terms.push(Term::of(Factor::T));
                terms.extend((0..p).filter(|j| !ids.contains(j)).map(|j| Term::of(Factor::X(j))));
                terms.push(Term::of(outcome));
            }
            MissingnessAssumption::General => {
                return Err(Error::InvalidInput(
                    "no exclusion restriction: the outcome distribution is not identified".into(),
                ))
            }
        }
        Ok(MissingnessModel {
            assumption,
            design: Design::new(terms),
            offset_delta: 0.0,
            offset_term: OffsetTerm::None,
        })
    }

    pub fn with_offset(mut self, term: OffsetTerm, delta: f64) -> Self {
        self.offset_term = term;
        self.offset_delta = delta;
        self
    }

    /// The design must exclude whatever the assumption bars from the response model.
    pub fn validate(&self, p: usize) -> Result<()> {
        self.assumption.validate(p)?;
        if let Some(j) = self.design.max_covariate() {
            if j >= p {
                return Err(Error::Config(format!(
                    "missingness design references x{} but the data has {p} covariates",
                    j + 1
                )));
            }
        }
        match self.assumption {
            MissingnessAssumption::A1 | MissingnessAssumption::Mar | MissingnessAssumption::Mcar
                if self.design.uses_outcome() =>
            {
                Err(Error::Config(format!(
                    "{} response model may not depend on the outcome",
                    self.assumption
                )))
            }
            MissingnessAssumption::A2 if self.design.uses_treatment() => Err(Error::Config(
                "A2 response model may not depend on the treatment".into(),
            )),
            MissingnessAssumption::A3 { .. } => {
                for j in self.assumption.identifying_columns(p) {
                    if self.design.uses_covariate(j) {
                        return Err(Error::Config(format!(
                            "A3 response model may not depend on the identifying covariate x{}",
                            j + 1
                        )));
                    }
                }
                Ok(())
            }
            MissingnessAssumption::General => Err(Error::InvalidInput(
                "no exclusion restriction: the outcome distribution is not identified".into(),
            )),
            _ => Ok(()),
        }
    }

    /// `offset_delta * s(x, t, y)`.
    pub fn offset(&self, v: &Vars<'_>) -> f64 {
        if self.offset_delta == 0.0 {
            return 0.0;
        }
        let s = match &self.offset_term {
            OffsetTerm::None => 0.0,
            OffsetTerm::Outcome => v.y,
            OffsetTerm::Treatment => v.t,
            OffsetTerm::Covariates(cols) => cols.iter().map(|&j| v.x[j]).sum(),
        };
        self.offset_delta * s
    }

    pub fn eta(&self, lambda: &[f64], v: &Vars<'_>) -> f64 {
        self.design.linear_predictor(lambda, v) + self.offset(v)
    }

    /// `P(R^Y = 1 | x, t, y)`.
    pub fn pi(&self, lambda: &[f64], v: &Vars<'_>) -> f64 {
        expit(self.eta(lambda, v))
    }

    pub fn intercept_index(&self) -> Option<usize> {
        self.design.terms.iter().position(|t| t.0.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_designs_respect_restrictions() {
        for a in [
            MissingnessAssumption::A1,
            MissingnessAssumption::A2,
            MissingnessAssumption::a3(),
        ] {
            let m = MissingnessModel::default_for(a, 1, OutcomeFamily::GaussianLinear).unwrap();
            m.validate(1).unwrap();
        }
        let a2 = MissingnessModel::default_for(MissingnessAssumption::A2, 1, OutcomeFamily::BernoulliLogit).unwrap();
        assert_eq!(a2.design.to_string(), "1 + x1 + y");
        let a3 = MissingnessModel::default_for(MissingnessAssumption::a3(), 2, OutcomeFamily::TwoPart).unwrap();
        assert_eq!(a3.design.to_string(), "1 + t + d");
        let a3c = MissingnessModel::default_for(
            MissingnessAssumption::A3 { identifying_covariate: Some(1) },
            2,
            OutcomeFamily::TwoPart,
        )
        .unwrap();
        assert_eq!(a3c.design.to_string(), "1 + t + x1 + d");
    }

    #[test]
    fn barred_variables_are_rejected() {
        let bad = MissingnessModel {
            assumption: MissingnessAssumption::A2,
            design: Design::parse("1 + t + y").unwrap(),
            offset_delta: 0.0,
            offset_term: OffsetTerm::None,
        };
        assert!(bad.validate(1).unwrap_err().is_config());
        let bad = MissingnessModel {
            assumption: MissingnessAssumption::a3(),
            design: Design::parse("1 + x1 + y").unwrap(),
            ..bad
        };
        assert!(bad.validate(1).is_err());
        let bad = MissingnessModel {
            assumption: MissingnessAssumption::A1,
            design: Design::parse("1 + x1 + y").unwrap(),
            ..bad
        };
        assert!(bad.validate(1).is_err());
        let outcome = OutcomeModel {
            family: OutcomeFamily::GaussianLinear,
            design: Design::parse("1 + t + y").unwrap(),
        };
        assert!(outcome.validate(1).is_err());
    }

    #[test]
    fn offsets() {
        let m = MissingnessModel::default_for(MissingnessAssumption::A2, 2, OutcomeFamily::GaussianLinear)
            .unwrap()
            .with_offset(OffsetTerm::Covariates(vec![0, 1]), 0.5);
        let v = Vars { x: &[1.0, 1.0], t: 3.0, y: 2.0 };
        assert_eq!(m.offset(&v), 1.0);
        let m = m.with_offset(OffsetTerm::Treatment, -2.0);
        assert_eq!(m.offset(&v), -6.0);
        let m = m.with_offset(OffsetTerm::Outcome, 0.0);
        assert_eq!(m.offset(&v), 0.0);
    }
}
