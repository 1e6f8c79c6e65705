//! The deterministic harness: a logical clock, a link-classed message
//! fabric with partitions and crashes, cluster wiring, scenario scripts and
//! metrics.
//!
//! All platform traffic is classified as control (CL), data (DL), update
//! (UL) or external (EL); per-class latency is configurable. Messages
//! between nodes in different partition groups are dropped, never delayed,
//! and in-flight messages are dropped when a partition lands on top of
//! them, so no byte ever crosses a partition boundary.

pub mod cluster;
pub mod scenario;
pub mod topology;

pub use cluster::{Cluster, MetricsReport};
pub use scenario::{run_scenario, ScenarioScript, ScriptError, StepResult};
pub use topology::{TopologyConfig, TopologyError};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{Connectivity, OplogEntry};
use crate::Tick;

/// The four traffic classes of the platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkClass {
    Control,
    Data,
    Update,
    External,
}

impl LinkClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            LinkClass::Control => "cl",
            LinkClass::Data => "dl",
            LinkClass::Update => "ul",
            LinkClass::External => "el",
        }
    }
}

/// One-way tick delay per link class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkLatency {
    pub cl: Tick,
    pub dl: Tick,
    pub ul: Tick,
    pub el: Tick,
}

impl Default for LinkLatency {
    fn default() -> Self {
        LinkLatency { cl: 1, dl: 2, ul: 2, el: 5 }
    }
}

impl LinkLatency {
    pub fn of(&self, class: LinkClass) -> Tick {
        match class {
            LinkClass::Control => self.cl,
            LinkClass::Data => self.dl,
            LinkClass::Update => self.ul,
            LinkClass::External => self.el,
        }
    }
}

/// Payloads of the asynchronous node-to-node protocol traffic. Query and
/// sync traffic is frontend-synchronous and accounted separately.
#[derive(Debug, Clone)]
pub enum Payload {
    HeartbeatPing {
        set_id: String,
        master: String,
        term: u64,
    },
    HeartbeatReply {
        set_id: String,
        term: u64,
        applied_seq: u64,
        last_entry_term: u64,
    },
    PullRequest {
        set_id: String,
        slave: String,
    },
    PullEntries {
        set_id: String,
        slave: String,
        master: String,
        master_term: u64,
        entries: Vec<OplogEntry>,
    },
    PullNeedsResync {
        set_id: String,
        slave: String,
        master: String,
    },
    ResyncRequest {
        set_id: String,
        slave: String,
    },
    ResyncSnapshot {
        set_id: String,
        slave: String,
        snapshot: crate::store::NodeSnapshot,
    },
}

#[derive(Debug, Clone)]
pub struct Message {
    pub seq: u64,
    pub from: String,
    pub to: String,
    pub class: LinkClass,
    pub sent_at: Tick,
    pub deliver_at: Tick,
    pub bytes: u64,
    pub payload: Payload,
}

#[derive(Debug, Clone, Default)]
pub struct NetStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped_partition: u64,
    pub dropped_crash: u64,
    pub bytes_by_class: BTreeMap<LinkClass, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("groups must partition the node set: disjoint, non-empty, covering")]
pub struct InvalidGrouping;

/// The message-passing fabric. Delivery order between a fixed sender and
/// receiver preserves send order (latency is per-class constant and the
/// global send seq breaks ties deterministically).
#[derive(Debug, Clone)]
pub struct SimNetwork {
    pub latency: LinkLatency,
    next_seq: u64,
    in_flight: BTreeMap<(Tick, u64), Message>,
    partition: Option<Vec<BTreeSet<String>>>,
    crashed: BTreeSet<String>,
    pub stats: NetStats,
}

impl SimNetwork {
    pub fn new(latency: LinkLatency) -> Self {
        SimNetwork {
            latency,
            next_seq: 0,
            in_flight: BTreeMap::new(),
            partition: None,
            crashed: BTreeSet::new(),
            stats: NetStats::default(),
        }
    }

    pub fn in_flight_count(&self) -> usize {
        self.in_flight.len()
    }

    pub fn is_partitioned(&self) -> bool {
        self.partition.is_some()
    }

    /// Send a message; it is dropped right here if the endpoints are
    /// separated or the sender is down.
    pub fn send(
        &mut self,
        now: Tick,
        from: &str,
        to: &str,
        class: LinkClass,
        bytes: u64,
        payload: Payload,
    ) {
        self.stats.sent += 1;
        if self.crashed.contains(from) {
            self.stats.dropped_crash += 1;
            return;
        }
        if !self.connected(from, to) {
            self.stats.dropped_partition += 1;
            return;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let deliver_at = now + self.latency.of(class);
        *self.stats.bytes_by_class.entry(class).or_insert(0) += bytes;
        self.in_flight.insert(
            (deliver_at, seq),
            Message {
                seq,
                from: from.to_string(),
                to: to.to_string(),
                class,
                sent_at: now,
                deliver_at,
                bytes,
                payload,
            },
        );
    }

    /// Remove and return every message due at or before `now`, in
    /// (deliver_at, send seq) order. Messages to crashed receivers drop
    /// here.
    pub fn take_due(&mut self, now: Tick) -> Vec<Message> {
        let mut due = Vec::new();
        let keys: Vec<(Tick, u64)> = self
            .in_flight
            .range(..=(now, u64::MAX))
            .map(|(k, _)| *k)
            .collect();
        for k in keys {
            let msg = self.in_flight.remove(&k).expect("key just enumerated");
            if self.crashed.contains(&msg.to) {
                self.stats.dropped_crash += 1;
                continue;
            }
            debug_assert!(
                self.connected(&msg.from, &msg.to),
                "no message crosses a partition boundary"
            );
            self.stats.delivered += 1;
            due.push(msg);
        }
        due
    }

    /// Split the node set into isolated groups. Cross-group in-flight
    /// messages are dropped immediately.
    pub fn inject_partition(
        &mut self,
        groups: Vec<BTreeSet<String>>,
        all_nodes: &BTreeSet<String>,
    ) -> Result<(), InvalidGrouping> {
        let mut seen = BTreeSet::new();
        for g in &groups {
            if g.is_empty() {
                return Err(InvalidGrouping);
            }
            for n in g {
                if !seen.insert(n.clone()) || !all_nodes.contains(n) {
                    return Err(InvalidGrouping);
                }
            }
        }
        if seen != *all_nodes {
            return Err(InvalidGrouping);
        }
        self.partition = Some(groups);
        let stale: Vec<(Tick, u64)> = self
            .in_flight
            .iter()
            .filter(|(_, m)| !self.connected(&m.from, &m.to))
            .map(|(k, _)| *k)
            .collect();
        for k in stale {
            self.in_flight.remove(&k);
            self.stats.dropped_partition += 1;
        }
        Ok(())
    }

    pub fn heal(&mut self) {
        self.partition = None;
    }

    pub fn crash_node(&mut self, node: &str) {
        self.crashed.insert(node.to_string());
    }

    pub fn restart_node(&mut self, node: &str) {
        self.crashed.remove(node);
    }
}

impl Connectivity for SimNetwork {
    fn connected(&self, a: &str, b: &str) -> bool {
        if a == b {
            return true;
        }
        match &self.partition {
            None => true,
            Some(groups) => groups
                .iter()
                .any(|g| g.contains(a) && g.contains(b)),
        }
    }
}
