//! Joint embedded index coding and multi-group multicast beamforming for
//! half-duplex MIMO device-to-device data shuffling.
//!
//! Every user caches part of a file library and requests one file it lacks.
//! In round `t` user `t` may multiplex several XOR-coded messages with
//! per-message beamformers; the goal is the smallest total delivery time.
//!
//! * [`model`]: scenarios (demands, caches) and their generation.
//! * [`channel`]: block-fading reciprocal MIMO links and composite channels.
//! * [`eic`]: decodability, per-round action tables, feasible code enumeration.
//! * [`beamforming`]: SINR, round time, MRT and the Dinkelbach/Riemannian
//!   conjugate-gradient max-min multicast solver.
//! * [`env`]: the sequential episode exposed to learning agents.
//! * [`joint`]: exhaustive joint search and the code-first sequential baseline.
//! * [`service`]: newline-delimited JSON protocol over stdio or TCP.
//! * [`sweep`]: reproducible experiment sweeps with CSV output.

pub mod beamforming;
pub mod channel;
pub mod eic;
pub mod env;
pub mod error;
pub mod instances;
pub mod joint;
pub mod model;
pub mod service;
pub mod sweep;

pub use error::{Result, WeicError};
pub use model::{generate_scenario, Scenario, SystemConfig};
