//! IO companion to the core continual-learning crate: configuration files,
//! dataset/report formats, the experiment runner commands, and runtime
//! verification suites with independent reference implementations.

pub mod config;
pub mod io;
pub mod reports;
pub mod runner;
pub mod verify;
