//! Configuration, presets and runners for the reproducible experiments.

pub mod config;
pub mod experiments;
pub mod fixture;
pub mod manifest;
