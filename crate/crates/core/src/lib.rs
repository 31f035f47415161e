//! Temporal adaptation for short-horizon text classification.
//!
//! The crate bundles a small trainable text encoder, six ways of conditioning
//! it on time (`TM`, `SEP`, `DCWE`, `LMSOC`, `TAPH`, `TDA`), the time-based
//! evaluation protocols `CONT`, `TEMP` and `PROG`, and the metrics used to
//! quantify temporal drift (F1, temporal rigidity, phase NMI, McNemar).
//!
//! A synthetic corpus generator with controllable semantic shift and
//! neologisms drives the end-to-end experiments in [`experiment`].

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod splits;
pub mod temporal;
pub mod train;

pub use error::{Error, Result};
