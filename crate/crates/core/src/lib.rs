//! Discrete-time simulation of inverter-based DER agents running distributed
//! secondary consensus control over an attackable communication network.
//!
//! The crate is `no_std` (it needs `alloc`) and has no IO. It covers:
//!
//! - [`graph`]: communication topology, Laplacian, delay bound, switching schedules
//! - [`plant`]: reduced-order droop inverter and lossless coupling network
//! - [`control`]: consensus input and the secondary PI loops
//! - [`attack`]: per-edge channels with latency, dropout, time-shift and false-data attacks
//! - [`mca`]: the per-agent semantic compensation layer
//! - [`engine`]: the fixed-step orchestrator and the pure delayed-consensus mode
//! - [`metrics`]: convergence classification and phase portraits
//! - [`scenarios`]: the built-in scenario library
//!
//! ```
//! use dersec_core::scenarios;
//!
//! let scenario = scenarios::builtin("abstract-k5").unwrap();
//! let points = dersec_core::engine::sweep_delay(&scenario, &[0.1]).unwrap();
//! assert!(points[0].converged);
//! ```
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod attack;
pub mod control;
pub mod engine;
pub mod graph;
pub mod matrix;
pub mod mca;
pub mod metrics;
pub mod plant;
pub mod rng;
pub mod scenarios;

pub use attack::{AttackKind, AttackSpec, Packet, Targets};
pub use control::{Psi, ScParams, Zeta};
pub use engine::{
    run_scenario, AbstractConfig, AbstractTrace, McaConfig, Scenario, ScenarioConfig, SimError,
    Trace,
};
pub use graph::{CyberGraph, LaplacianView, TopologySchedule};
pub use mca::{McaParams, McaState};
pub use metrics::{ConvergenceCriteria, ConvergenceMode, ConvergenceReport};
pub use plant::{DerState, DroopParams, ElectricalNetwork, InnerLoopParams};
