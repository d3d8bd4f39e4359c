//! Regime-switching state-space models with latent within- and
//! between-individual predictors of regime transitions.
//!
//! The crate provides the model class ([`model`]), Bartlett factor scores
//! for the time-invariant block ([`factor_scores`]), the extended Kim filter
//! ([`filter`]), approximate maximum-likelihood estimation with Rprop and
//! OPG/Hessian standard errors ([`estimate`]), a data-generating process
//! ([`simulate`]) and the forecast evaluation metrics ([`evaluate`]).
//! [`config`], [`io`] and [`pipeline`] back the `rsss` command-line tool.

pub mod config;
pub mod data;
pub mod error;
pub mod estimate;
pub mod evaluate;
pub mod factor_scores;
pub mod filter;
pub mod io;
pub mod kernel;
pub mod model;
pub mod pipeline;
pub mod presets;
pub mod simulate;

pub use data::PanelDataset;
pub use error::{Result, RsssError};
pub use model::{Layout, ModelSpec, ParameterSet, ParameterVector};
