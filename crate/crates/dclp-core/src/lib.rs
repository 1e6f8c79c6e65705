//! Desk-scale cooperative logistics platform: a sharded, replicated document
//! store with a trusted frontend that mediates every cross-actor query,
//! exercised by a deterministic supply-chain workload inside a simulated
//! network with fault injection.
//!
//! The crate is organized around five subsystems:
//!
//! - [`store`] — a single replica set: one master accepting writes, slaves
//!   converging through asynchronous oplog replication, majority leases and
//!   failover elections.
//! - [`fabric`] — the sharding layer: versioned chunk metadata on a
//!   three-server config group, shard-key routing, chunk splits, migrations
//!   and balancing under actor pinning.
//! - [`overlay`] — the trusted frontend: actor registry, sharing contracts,
//!   field-level redaction, update-link synchronization, external data
//!   providers and query aggregation.
//! - [`workload`] — the hospital-supply-chain domain: a seeded stream
//!   generator driven by static order profiles, plus the scenario queries
//!   (delivery ETA, truck status, carrier ranking, stock search, demand
//!   forecast input).
//! - [`sim`] — the deterministic harness: logical clock, link-classed
//!   message fabric, partitions and crashes, scenario scripts and metrics.
//!
//! Everything advances on one logical clock; a run is a pure function of
//! (topology, generator config, script, seed). Batch sweeps over many seeds
//! run data-parallel via [`trials`] when the `parallel` feature (default)
//! is enabled.

pub mod doc;
pub mod fabric;
pub mod overlay;
pub mod sim;
pub mod store;
pub mod trials;
pub mod workload;

/// Logical time. All timing in the platform is expressed in ticks; live mode
/// maps ticks to a wall-clock interval at the very edge only.
pub type Tick = u64;

pub use doc::{Document, FieldTree, FieldValue, Visibility};
pub use store::{ReadPreference, ReplicaSet, StoreError};
