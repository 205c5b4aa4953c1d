//! Configuration, orchestration and persistence for the stochastic
//! hydrogen ground-state simulator: run configs with strict parsing and
//! documented defaults, ensemble drivers with derived per-trajectory seeds,
//! record/checkpoint formats, histogram exports with conjecture overlays,
//! and the field-statistics verification harness.

pub mod checkpoint;
pub mod config;
pub mod ensemble;
pub mod field_check;
pub mod records;
pub mod summary;
