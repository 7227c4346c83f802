//! Experiment harness: configuration files, the exit-distribution and
//! boundary-window experiments, statistical reports, CSV and plot-script
//! output.

pub mod config;
pub mod experiments;
pub mod plot;
pub mod report;
