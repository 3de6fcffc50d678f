//! Deterministic engine and replay simulator for event-linked perpetuals.
//!
//! The crate builds each variant's contract-level underlying from per-leg
//! prediction-market series, runs the contract lifecycle (funding, margin,
//! halts, rolls, settlement) over recorded or synthetic paths, and emits
//! replay reports.

pub mod constructors;
pub mod io;
pub mod model;
pub mod replay;
pub mod risk;
pub mod schedule;
pub mod settlement;
