//! Counterfactual survival curves `t -> P(T_a > t)` from right-censored,
//! discrete-time data: Kaplan-Meier, plug-in, IPCW, estimating equations,
//! iterative TMLE and the monotone one-step TMLE, with pointwise and
//! simultaneous confidence bands.
//!
//! Everything numeric is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`.

pub mod cli;
pub mod data;
pub mod eif;
pub mod error;
pub mod estimators;
pub mod glm;
pub mod inference;
pub mod linalg;
pub mod nuisance;
pub mod scalar;
pub mod sim;

pub use data::Arm;
pub use error::{Error, Result};
pub use estimators::Method;

pub type Dataset = data::SurvivalDataset<f64>;
pub type Observation = data::Observation<f64>;
pub type Predictions = nuisance::Predictions<f64>;
pub type NuisanceConfig = nuisance::NuisanceConfig<f64>;
pub type Curve = estimators::CurveEstimate<f64>;
pub type Eif = eif::EifMatrix<f64>;
pub type Band = inference::BandResult<f64>;
pub type StudyConfig = sim::StudyConfig<f64>;

pub type Dataset32 = data::SurvivalDataset<f32>;
pub type Predictions32 = nuisance::Predictions<f32>;
pub type Curve32 = estimators::CurveEstimate<f32>;
