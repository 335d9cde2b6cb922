//! Deterministic discrete-event simulator for clone-assisted mobile edge
//! networks: per-user clones at the network edge provide compute
//! offloading, content caching, clone-to-clone sharing and retransmission
//! buffering, under a controller that allocates radio rate and cloud
//! compute jointly.
//!
//! For a fixed `(config, seed)` every counter in a run's report is
//! bit-identical across runs and hosts: events fire in `(time, sequence)`
//! order, all randomness derives from the seed through SplitMix64, and
//! packet-loss draws are indexed by `(flow, packet, link, attempt)` rather
//! than drawn from a shared stream.

// `!(x > 0.0)` on config values is intentional: NaN must fail validation,
// and `x <= 0.0` would let it through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clone;
pub mod config;
pub mod controller;
pub mod metrics;
pub mod net;
pub mod offload;
pub mod runner;
pub mod scenarios;
pub mod sim;
pub mod world;
