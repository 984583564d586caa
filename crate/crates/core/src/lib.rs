//! Power-grid modeling, monitoring and optimization.
//!
//! The crate builds AC and DC network models from JSON case files and runs
//! state estimation, bad-data analysis, observability, outage identification
//! and waveform analysis on top of them, together with economic dispatch,
//! DC optimal power flow, unit commitment and flexible-load scheduling.

pub mod commitment;
pub mod dispatch;
pub mod error;
pub mod estimation;
pub mod fixtures;
pub mod flexload;
pub mod linalg;
pub mod netmodel;
pub mod optim;
pub mod outage;
pub mod powerflow;
pub mod signals;

pub use error::{GridError, Result};
