//! Micro-ecology engine: a deterministic simulator of autopoietic recurrent
//! units living on a toroidal lattice, fed by raw data streams and selected
//! only by their energy budget.

pub mod config;
pub mod evolution;
pub mod genome;
pub mod metrics;
pub mod neural;
pub mod physics;
pub mod plasticity;
pub mod rng;
pub mod runner;
pub mod streams;
pub mod unit;
pub mod world;

pub use config::SimConfig;
pub use unit::{Unit, UnitId};
pub use world::{TickReport, World};
