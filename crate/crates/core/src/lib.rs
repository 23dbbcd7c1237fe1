//! Link-level Monte Carlo simulation of overloaded non-orthogonal uplink
//! transmission: K single-antenna users share every OFDM resource element
//! toward a receiver with as few as one antenna.
//!
//! The crate covers the whole chain, from per-user convolutional coding and
//! QAM mapping over TDL-A Doppler fading channels and pilot-based channel
//! estimation to a family of soft-output multiuser receivers:
//!
//! * orthogonal time sharing with single-user demapping ([`DetectorKind::Oma`]),
//! * two-user power-domain NOMA with SIC,
//! * MMSE soft SIC,
//! * exhaustive joint max-log detection,
//! * single-tree-search soft-output sphere detection,
//! * iterative detection and decoding around the sphere detector.
//!
//! [`sim`] drives Monte Carlo drops and reports block error rate, goodput
//! spectral efficiency and multiplication counts; [`capacity`] evaluates
//! the sum capacity of the corresponding single-antenna multiple-access
//! channel.
//!
//! [`DetectorKind::Oma`]: config::DetectorKind::Oma

pub mod capacity;
pub mod channel;
pub mod cli;
pub mod config;
pub mod decoder;
pub mod detect;
pub mod estimation;
pub mod oracle;
pub mod selftest;
pub mod sim;
pub mod tx;

pub use num_complex::Complex64 as C64;

pub use config::{validate, DetectorKind, McsConfig, SimConfig, ValidatedConfig};
