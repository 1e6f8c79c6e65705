//! Cluster topology files: the shard list (one per actor), replica-set
//! sizing, the three config servers, pin assignments and timing parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::LinkLatency;
use crate::workload::Role;
use crate::Tick;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("invalid topology: {0}")]
    Invalid(String),
    #[error("cannot read topology: {0}")]
    Io(String),
    #[error("cannot parse topology: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorSpec {
    pub id: String,
    pub role: Role,
    #[serde(default = "default_update_period")]
    pub update_period: Tick,
    /// Shard this actor's chunks are pinned to; defaults to the actor's own
    /// shard.
    #[serde(default)]
    pub pin: Option<String>,
    /// Optional contract file; the role's stock contract applies otherwise.
    #[serde(default)]
    pub contract_file: Option<String>,
}

fn default_update_period() -> Tick {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologyConfig {
    pub seed: u64,
    /// Metadata server count; production clusters run exactly three.
    pub config_servers: u32,
    pub replica_set_size: u32,
    pub split_threshold: u64,
    pub node_budget_entries: u64,
    pub lease_ticks: Tick,
    pub heartbeat_period: Tick,
    pub election_timeout: Tick,
    pub replication_period: Tick,
    pub balance_period: Tick,
    pub monitor_period: Tick,
    pub external_ttl: Tick,
    pub obsolete_ttl: Tick,
    pub latency: LinkLatency,
    pub actor: Vec<ActorSpec>,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            seed: 0,
            config_servers: 3,
            replica_set_size: 3,
            split_threshold: 64,
            node_budget_entries: 10_000,
            lease_ticks: 10,
            heartbeat_period: 3,
            election_timeout: 20,
            replication_period: 2,
            balance_period: 200,
            monitor_period: 50,
            external_ttl: 20,
            obsolete_ttl: 500,
            latency: LinkLatency::default(),
            actor: Vec::new(),
        }
    }
}

impl TopologyConfig {
    /// The stock desk-scale population: two hospitals, two suppliers, one
    /// carrier.
    pub fn default_desk(seed: u64) -> Self {
        let mut topo = TopologyConfig {
            seed,
            ..TopologyConfig::default()
        };
        for (id, role) in [
            ("hospital-1", Role::Hospital),
            ("hospital-2", Role::Hospital),
            ("supplier-1", Role::Supplier),
            ("supplier-2", Role::Supplier),
            ("carrier-1", Role::Carrier),
        ] {
            topo.actor.push(ActorSpec {
                id: id.to_string(),
                role,
                update_period: 10,
                pin: None,
                contract_file: None,
            });
        }
        topo
    }

    pub fn load(path: &Path) -> Result<TopologyConfig, TopologyError> {
        let text = std::fs::read_to_string(path).map_err(|e| TopologyError::Io(e.to_string()))?;
        let topo: TopologyConfig =
            toml::from_str(&text).map_err(|e| TopologyError::Parse(e.to_string()))?;
        topo.validate()?;
        Ok(topo)
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.config_servers != 3 {
            return Err(TopologyError::Invalid(format!(
                "sharded clusters need exactly 3 config servers, got {}",
                self.config_servers
            )));
        }
        if self.replica_set_size == 0 {
            return Err(TopologyError::Invalid("replica_set_size must be >= 1".into()));
        }
        if self.actor.is_empty() {
            return Err(TopologyError::Invalid("topology declares no actors".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.actor {
            if a.id.is_empty()
                || !a
                    .id
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
            {
                return Err(TopologyError::Invalid(format!(
                    "actor id {:?} must be non-empty [a-zA-Z0-9_-]",
                    a.id
                )));
            }
            if !seen.insert(&a.id) {
                return Err(TopologyError::Invalid(format!("duplicate actor id {}", a.id)));
            }
            if a.update_period == 0 {
                return Err(TopologyError::Invalid(format!(
                    "actor {} update_period must be >= 1",
                    a.id
                )));
            }
        }
        if self.heartbeat_period == 0 || self.replication_period == 0 {
            return Err(TopologyError::Invalid("periods must be >= 1".into()));
        }
        Ok(())
    }

    pub fn shard_of(&self, actor_id: &str) -> String {
        format!("shard-{actor_id}")
    }

    pub fn config_server_ids(&self) -> [String; 3] {
        ["cfg-0".into(), "cfg-1".into(), "cfg-2".into()]
    }
}
