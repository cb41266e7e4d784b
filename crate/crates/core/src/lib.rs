//! Loss-minimizing frequency and reactive-power dispatch for an offshore
//! wind farm exporting through a diode rectifier HVDC link.

pub mod conic;
pub mod devices;
pub mod error;
pub mod farm;
pub mod network;
pub mod opf;
pub mod oracle;
pub mod powerflow;
pub mod report;
pub mod solver;
pub mod study;

pub use error::{Error, Result};
