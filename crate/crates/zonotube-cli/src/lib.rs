//! Experiment harness around the `zonotube` library: JSON-configured
//! pipelines, a shipped double-integrator scenario, deterministic seeding,
//! and CSV/JSON artifacts for external tooling.

pub mod bounds;
pub mod config;
pub mod pipeline;
pub mod plotdata;
