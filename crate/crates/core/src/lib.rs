//! Deterministic discrete-event model of a residential/campus smart-grid
//! testbed.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. Scenario
//! files, trace files and the command line live in the `gridbed` crate.
//!
//! Module map:
//!
//! * [`simcore`]: virtual clock, ordered event queue, named random streams.
//! * [`network`]: HAN/NAN topology and per-hop latency/jitter/loss transport.
//! * [`premises`]: units, appliances, base-load profiles, occupancy and sensors.
//! * [`drm`]: centralized peak shaving, pricing signals, reserve classes.
//! * [`analytics`]: occupancy inference, wastage, appliance identification,
//!   impairment metrics.
//! * [`scheduler`]: meeting-room scheduling under per-slot prices.
//! * [`trace`]: trace records shared by the simulator and the analytics.
//! * [`testbed`]: the event-driven experiment that wires everything together.

#![no_std]
#![deny(rustdoc::broken_intra_doc_links)]

extern crate alloc;

pub mod analytics;
pub mod drm;
pub mod network;
pub mod premises;
pub mod scheduler;
pub mod simcore;
pub mod testbed;
pub mod trace;

pub use simcore::{Engine, RngStreams, SimTime};

/// Absolute tolerance used when comparing accumulated kW / kWh / SGD sums.
pub const EPS: f64 = 1e-9;
