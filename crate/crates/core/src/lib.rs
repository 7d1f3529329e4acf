//! From raw GPS training records to a predictive running-performance
//! equation.
//!
//! The pipeline: ingest timestamped cumulative-distance records and cut
//! them into sessions ([`gps`]); summarise each session as a time-above-
//! speed curve, smooth it monotonically, clean implausible sessions and
//! average per training period ([`profile`]); join with field-test
//! performances and laboratory covariates into a regression table
//! ([`study`]); fit a log-linear multiplicative performance model with an
//! elastic net at several speed-interval resolutions, pick the resolution
//! by held-out error and export the winning fit as a closed-form
//! predictive equation ([`elasticnet`], [`multires`]). A synthetic-study
//! generator with known ground truth makes the whole pipeline testable
//! end to end ([`synth`]).

pub mod elasticnet;
mod error;
pub mod gps;
pub mod grid;
pub mod isotonic;
pub mod multires;
pub mod profile;
pub mod seed;
pub mod study;
pub mod synth;

pub use error::{Error, Result};
