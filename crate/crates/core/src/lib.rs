//! Product lifecycle analytics over review streams.

pub mod analytics;
pub mod competition;
pub mod error;
pub mod forecast;
pub mod ingest;
pub mod kde;
pub mod ksc;
pub mod linalg;
pub mod series;
pub mod synth;
pub mod varx;

pub use error::{Error, Result};
