//! Deterministic discrete-event simulator for an extended-reality operating
//! system organised around one shared physical-digital world model.
//!
//! Modules map onto the system's components: [`world_model`] (shared store,
//! leases, placement), [`scheduler`] (frame budget, context switching),
//! [`display`] (overload control), [`offloading`] (profiler, edge client),
//! [`network`] (hybrid NACK/FEC), [`privacy`] (input/output/network filters)
//! and [`interaction`] (proxemics, latency compensation). [`engine`] wires them
//! into one event loop driven by a [`scenario`].

pub mod display;
pub mod engine;
pub mod experiments;
pub mod geometry;
pub mod ids;
pub mod interaction;
pub mod network;
pub mod offloading;
pub mod par;
pub mod privacy;
pub mod report;
pub mod scenario;
pub mod scheduler;
pub mod sim;
pub mod world_model;
