//! Trace-driven simulation of multi-tenant GPU datacenters.
//!
//! The crate replays job traces against VC-partitioned clusters under several
//! queue policies, including QSSF, which orders jobs by predicted GPU time,
//! and evaluates CES, a forecast-driven controller that puts idle nodes to
//! sleep. Trace analytics cover utilization, duration and demand
//! distributions, job outcomes, and per-user consumption.

pub mod analytics;
pub mod ces;
pub mod error;
pub mod pipeline;
pub mod predictor;
pub mod sched;
pub mod sim;
pub mod trace;

pub use error::{Error, Result};
