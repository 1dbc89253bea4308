//! Conditional average treatment effects when covariates, treatment and
//! outcome are each partially observed, possibly missing not at random.

pub mod baselines;
pub mod data;
pub mod dgp;
pub mod discrete_ident;
pub mod error;
pub mod glm;
pub mod harness;
pub mod inference;
pub mod np2sls;
pub mod param_em;
pub mod rng;
pub mod sensitivity;
pub mod stats;
pub mod svg;

pub use data::{
    complete_cases, subset_observed_xt, validate_dataset, CateEstimate, Dataset, Interval,
    MissingnessAssumption, Query, Unit, VariableKind,
};
pub use error::{Error, Result};
