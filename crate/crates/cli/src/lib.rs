//! Command-line and HTTP front ends for the contract engine.

pub mod api;
pub mod commands;
