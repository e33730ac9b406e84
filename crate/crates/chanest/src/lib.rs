//! Link-level simulator for uplink channel estimation in a multi-user
//! SIMO-OFDM system assisted by a reconfigurable intelligent surface (RIS).
//!
//! The crate is organised as a pipeline:
//!
//! * [`linalg`] — complex matrix primitives and seeded random streams shared
//!   by every stage.
//! * [`channel`] — correlated-Rayleigh synthesis of the direct, UE-RIS and
//!   RIS-BS links, and their assembly into per-subcarrier channels.
//! * [`frame`] — pilot allocation, RIS reflection patterns, hardware
//!   impairments and synthesis of the received training frame.
//! * [`estimators`] — least-squares and LMMSE estimation of the effective
//!   channel, unmixing into direct/cascaded parts, and the NMSE metric.
//! * [`dip`] — an untrained deep-image-prior denoiser that refines the
//!   least-squares estimate; forward, manual backward and Adam are all
//!   implemented in this crate.
//! * [`harness`] — experiment configuration, Monte-Carlo sweeps and CSV
//!   output; this is what the `chanest` binary drives.
//!
//! Everything is deterministic given a master seed: every random quantity is
//! drawn from a dedicated stream keyed by `(master_seed, trial, purpose)`, so
//! adding an estimator or re-ordering work never perturbs existing draws.

pub mod channel;
pub mod dip;
pub mod estimators;
pub mod frame;
pub mod harness;
pub mod linalg;
