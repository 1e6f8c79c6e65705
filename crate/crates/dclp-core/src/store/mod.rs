//! A single replica set: one master accepting writes, N slaves converging
//! through asynchronous oplog replication.
//!
//! The consistency story is CP-shaped. Writes are accepted only by a master
//! holding a majority lease (heartbeat replies from a majority of the set
//! within `lease_ticks`); a partitioned master therefore refuses writes once
//! its lease lapses, while stale (`secondary_eventual`) reads stay available
//! on every live node. A write acknowledgment means the master applied the
//! operation; the write becomes *durable* once a majority of nodes hold it
//! (`committed_seq`), which is the level failover preserves: elections pick
//! the highest applied seq inside a majority partition, and any majority
//! intersects the committed majority, so no committed write can be lost.
//! Acknowledged-but-uncommitted writes on a deposed master are rolled back
//! through a full resync when it rejoins, which is the usual trade of
//! master-local acknowledgment.

mod oplog;

pub use oplog::{OpKind, OplogBuffer, OplogEntry};

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc::{get_path, Digest, Document, FieldValue, StateHasher};
use crate::Tick;

/// Identifies one node of a replica set.
pub type NodeId = String;

/// Answers "can `a` exchange messages with `b` right now". The harness
/// implements this over its partition state; tests use [`FullMesh`].
pub trait Connectivity {
    fn connected(&self, a: &str, b: &str) -> bool;
}

/// Everybody reaches everybody.
pub struct FullMesh;

impl Connectivity for FullMesh {
    fn connected(&self, _a: &str, _b: &str) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Master,
    Slave,
    SteppedDown,
}

/// Read routing: strong reads go to the leaseholding master and reflect all
/// acknowledged writes; eventual reads are served by whatever node is
/// addressed and may be stale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadPreference {
    PrimaryStrong,
    SecondaryEventual,
}

/// Comparison operator of a filter predicate. Values of different kinds
/// order by kind, which keeps evaluation total and deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cmp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub path: String,
    pub cmp: Cmp,
    pub value: FieldValue,
}

impl Predicate {
    pub fn new(path: impl Into<String>, cmp: Cmp, value: impl Into<FieldValue>) -> Self {
        Predicate {
            path: path.into(),
            cmp,
            value: value.into(),
        }
    }
}

/// A conjunction of predicates; the empty filter matches everything.
/// Paths resolve against the document's own fields, with `id`, `owner`,
/// `updated_at` and `visibility` available as virtual top-level paths.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Filter(pub Vec<Predicate>);

impl Filter {
    pub fn all() -> Self {
        Filter(Vec::new())
    }

    pub fn by_id(id: &str) -> Self {
        Filter(vec![Predicate::new("id", Cmp::Eq, id)])
    }

    pub fn and(mut self, pred: Predicate) -> Self {
        self.0.push(pred);
        self
    }

    pub fn matches(&self, doc: &Document) -> bool {
        self.0.iter().all(|p| {
            let resolved;
            let v = match p.path.as_str() {
                "id" => {
                    resolved = FieldValue::Str(doc.id.clone());
                    Some(&resolved)
                }
                "owner" => {
                    resolved = FieldValue::Str(doc.owner.clone());
                    Some(&resolved)
                }
                "updated_at" => {
                    resolved = FieldValue::Int(doc.updated_at as i64);
                    Some(&resolved)
                }
                "visibility" => {
                    resolved = FieldValue::Str(
                        match doc.visibility {
                            crate::doc::Visibility::Shared => "shared",
                            crate::doc::Visibility::Confidential => "confidential",
                        }
                        .into(),
                    );
                    Some(&resolved)
                }
                path => get_path(&doc.fields, path),
            };
            match v {
                None => false,
                Some(v) => match p.cmp {
                    Cmp::Eq => *v == p.value,
                    Cmp::Ne => *v != p.value,
                    Cmp::Lt => *v < p.value,
                    Cmp::Le => *v <= p.value,
                    Cmp::Gt => *v > p.value,
                    Cmp::Ge => *v >= p.value,
                },
            }
        })
    }
}

/// A write submitted to the master.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum WriteOp {
    Insert(Document),
    Update(Document),
    Delete { id: String },
}

/// Successful write: the sequence number the master assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteAck {
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("node {0} is not the master; retry at the master")]
    NotMaster(NodeId),
    #[error("master cannot reach a majority; write refused")]
    NoMajority,
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("unknown id {0}")]
    UnknownId(String),
    #[error("strong read addressed to a node that is not the leaseholding master")]
    StalePrimary,
    #[error("node {0} is down")]
    NodeUnavailable(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PullError {
    /// The slave's next needed entry was evicted from the capped oplog, or
    /// its history diverged from the current master's; recover with
    /// [`ReplicaSet::full_resync`].
    #[error("oplog gap: slave requires a full resync")]
    OplogGap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no partition side holds a majority")]
pub struct NoQuorum;

/// Tunables for one replica set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreConfig {
    /// Per-node storage budget in entries; the capped oplog is sized as
    /// `max(64, ceil(0.05 * budget))`.
    pub node_budget_entries: u64,
    /// A master holds its lease while heartbeat replies from a majority are
    /// no older than this.
    pub lease_ticks: Tick,
    /// How often masters ping their peers.
    pub heartbeat_period: Tick,
    /// A slave that has not heard its master for this long considers the
    /// master gone and an election may be attempted.
    pub election_timeout: Tick,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            node_budget_entries: 10_000,
            lease_ticks: 10,
            heartbeat_period: 3,
            election_timeout: 20,
        }
    }
}

impl StoreConfig {
    pub fn oplog_capacity(&self) -> usize {
        let five_pct = (self.node_budget_entries as f64 * 0.05).ceil() as usize;
        five_pct.max(64)
    }
}

/// One node of a replica set. Documents live in per-collection hash indexes
/// keyed by id, so key lookups are expected constant time; scans sort by id
/// before returning so every read is deterministic.
#[derive(Debug, Clone)]
pub struct ReplicaNode {
    pub node_id: NodeId,
    pub role: Role,
    collections: BTreeMap<String, HashMap<String, Document>>,
    oplog: OplogBuffer,
    pub applied_seq: u64,
    pub term: u64,
    /// Term of the last applied entry; with applied_seq this orders
    /// candidate histories during elections.
    pub last_entry_term: u64,
    /// Seq this node had when it last won an election, and the term of the
    /// entry at that seq; the anchor for verifying that a puller's history
    /// is a prefix of this master's.
    election_base: u64,
    election_base_term: u64,
    /// Master bookkeeping: when each peer last answered a heartbeat.
    last_heartbeat_reply: BTreeMap<NodeId, Tick>,
    /// Master bookkeeping: each peer's applied seq as last reported.
    peer_applied: BTreeMap<NodeId, u64>,
    /// Slave bookkeeping: last tick a valid master ping arrived.
    pub last_master_contact: Option<Tick>,
    crashed: bool,
    needs_resync: bool,
    /// Last tick this node was known fully caught up with its master
    /// (masters are trivially caught up). Drives replication-lag metrics.
    pub caught_up_at: Tick,
}

impl ReplicaNode {
    fn new(node_id: NodeId, oplog_capacity: usize) -> Self {
        ReplicaNode {
            node_id,
            role: Role::Slave,
            collections: BTreeMap::new(),
            oplog: OplogBuffer::new(oplog_capacity),
            applied_seq: 0,
            term: 0,
            last_entry_term: 0,
            election_base: 0,
            election_base_term: 0,
            last_heartbeat_reply: BTreeMap::new(),
            peer_applied: BTreeMap::new(),
            last_master_contact: None,
            crashed: false,
            needs_resync: false,
            caught_up_at: 0,
        }
    }

    pub fn is_crashed(&self) -> bool {
        self.crashed
    }

    pub fn needs_resync(&self) -> bool {
        self.needs_resync
    }

    pub fn oplog(&self) -> &OplogBuffer {
        &self.oplog
    }

    pub fn collection_names(&self) -> impl Iterator<Item = &str> {
        self.collections.keys().map(|s| s.as_str())
    }

    fn apply_entry(&mut self, entry: &OplogEntry) {
        let coll = self.collections.entry(entry.collection.clone()).or_default();
        match entry.op {
            OpKind::Insert | OpKind::Update => {
                let doc = entry.payload.clone().expect("post-image present");
                coll.insert(doc.id.clone(), doc);
            }
            OpKind::Delete => {
                coll.remove(&entry.doc_id);
            }
        }
        self.applied_seq = entry.seq;
        self.last_entry_term = entry.term;
    }

    /// Order-independent digest of the node's logical state.
    pub fn state_digest(&self) -> Digest {
        let mut hasher = StateHasher::new();
        for (name, coll) in &self.collections {
            let mut ids: Vec<&String> = coll.keys().collect();
            ids.sort();
            for id in ids {
                hasher.record(name, id, &coll[id].canonical_json());
            }
        }
        hasher.finish()
    }

    pub fn doc_count(&self, collection: &str) -> usize {
        self.collections.get(collection).map_or(0, |c| c.len())
    }
}

/// A full-state copy used for resynchronization.
#[derive(Debug, Clone)]
pub struct NodeSnapshot {
    collections: BTreeMap<String, HashMap<String, Document>>,
    applied_seq: u64,
    term: u64,
    last_entry_term: u64,
    election_base: u64,
    election_base_term: u64,
}

/// A replica set: the unit of sharded storage. All mutation goes through the
/// master; slaves converge by pulling the oplog.
#[derive(Debug, Clone)]
pub struct ReplicaSet {
    pub set_id: String,
    pub config: StoreConfig,
    nodes: Vec<ReplicaNode>,
}

impl ReplicaSet {
    pub fn new(set_id: impl Into<String>, node_ids: Vec<NodeId>, config: StoreConfig) -> Self {
        assert!(!node_ids.is_empty());
        let cap = config.oplog_capacity();
        ReplicaSet {
            set_id: set_id.into(),
            config,
            nodes: node_ids.into_iter().map(|id| ReplicaNode::new(id, cap)).collect(),
        }
    }

    /// Fresh set with an elected master and valid leases at tick 0; the
    /// lowest node id wins the initial election.
    pub fn bootstrap(set_id: impl Into<String>, node_ids: Vec<NodeId>, config: StoreConfig) -> Self {
        let mut set = Self::new(set_id, node_ids, config);
        set.elect_master(&FullMesh, 0).expect("full mesh always has quorum");
        set.heartbeat_round(&FullMesh, 0);
        set
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Votes needed for quorum: floor(N/2) + 1 of the full membership.
    pub fn majority(&self) -> usize {
        self.nodes.len() / 2 + 1
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.nodes.iter().map(|n| n.node_id.clone()).collect()
    }

    pub fn node(&self, node_id: &str) -> Option<&ReplicaNode> {
        self.nodes.iter().find(|n| n.node_id == node_id)
    }

    fn node_mut(&mut self, node_id: &str) -> Option<&mut ReplicaNode> {
        self.nodes.iter_mut().find(|n| n.node_id == node_id)
    }

    fn index_of(&self, node_id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.node_id == node_id)
    }

    /// The current master's id. During a partition an unfenced old master
    /// may still hold the role; the one with the highest term is
    /// authoritative.
    pub fn master_id(&self) -> Option<NodeId> {
        self.master_index().map(|i| self.nodes[i].node_id.clone())
    }

    /// Every node that currently believes it is master (at most one per
    /// partition side).
    pub fn believed_masters(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.role == Role::Master)
            .map(|n| n.node_id.clone())
            .collect()
    }

    fn master_index(&self) -> Option<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].role == Role::Master)
            .max_by(|&a, &b| {
                self.nodes[a]
                    .term
                    .cmp(&self.nodes[b].term)
                    .then_with(|| self.nodes[b].node_id.cmp(&self.nodes[a].node_id))
            })
    }

    /// Does the master hold a valid majority lease at `now`?
    pub fn master_has_lease(&self, now: Tick) -> bool {
        match self.master_index() {
            None => false,
            Some(i) => self.node_has_lease(i, now),
        }
    }

    fn node_has_lease(&self, idx: usize, now: Tick) -> bool {
        let node = &self.nodes[idx];
        if node.crashed {
            return false;
        }
        let horizon = now.saturating_sub(self.config.lease_ticks);
        let fresh = node
            .last_heartbeat_reply
            .values()
            .filter(|&&t| t >= horizon)
            .count();
        // A single-node set is its own majority.
        1 + fresh >= self.majority()
    }

    /// Highest seq known to be applied by a majority of the set; the
    /// durability line that failover never crosses.
    pub fn committed_seq(&self) -> u64 {
        let Some(mi) = self.master_index() else {
            return 0;
        };
        let master = &self.nodes[mi];
        let mut seqs: Vec<u64> = vec![master.applied_seq];
        for n in &self.nodes {
            if n.node_id != master.node_id {
                seqs.push(*master.peer_applied.get(&n.node_id).unwrap_or(&0));
            }
        }
        seqs.sort_unstable_by(|a, b| b.cmp(a));
        seqs[self.majority() - 1]
    }

    // ------------------------------------------------------------------
    // Writes and reads
    // ------------------------------------------------------------------

    /// Submit a write to the node `addressed`. Acknowledgment means the
    /// master applied the operation and logged it under the returned seq.
    pub fn write(
        &mut self,
        addressed: &str,
        op: WriteOp,
        collection: &str,
        now: Tick,
    ) -> Result<WriteAck, StoreError> {
        let idx = self
            .index_of(addressed)
            .ok_or_else(|| StoreError::UnknownNode(addressed.to_string()))?;
        if self.nodes[idx].crashed {
            return Err(StoreError::NodeUnavailable(addressed.to_string()));
        }
        if self.nodes[idx].role != Role::Master {
            return Err(StoreError::NotMaster(addressed.to_string()));
        }
        if !self.node_has_lease(idx, now) {
            return Err(StoreError::NoMajority);
        }

        let node = &mut self.nodes[idx];
        let existing = node
            .collections
            .get(collection)
            .and_then(|c| match &op {
                WriteOp::Insert(d) | WriteOp::Update(d) => c.get(&d.id),
                WriteOp::Delete { id } => c.get(id),
            })
            .cloned();

        let (kind, doc_id, payload) = match op {
            WriteOp::Insert(doc) => {
                if existing.is_some() {
                    return Err(StoreError::DuplicateId(doc.id));
                }
                (OpKind::Insert, doc.id.clone(), Some(doc))
            }
            WriteOp::Update(mut doc) => {
                let Some(prev) = existing else {
                    return Err(StoreError::UnknownId(doc.id));
                };
                // Visibility is immutable and freshness never regresses.
                doc.visibility = prev.visibility;
                doc.updated_at = doc.updated_at.max(prev.updated_at);
                (OpKind::Update, doc.id.clone(), Some(doc))
            }
            WriteOp::Delete { id } => {
                if existing.is_none() {
                    return Err(StoreError::UnknownId(id));
                }
                (OpKind::Delete, id, None)
            }
        };

        let seq = node.applied_seq + 1;
        let entry = OplogEntry {
            seq,
            term: node.term,
            op: kind,
            collection: collection.to_string(),
            doc_id,
            payload,
            ts: now,
        };
        node.apply_entry(&entry);
        node.oplog.push(entry);
        node.caught_up_at = now;
        Ok(WriteAck { seq })
    }

    /// Read matching documents from the addressed node, sorted by id.
    /// Unknown collections read as empty.
    pub fn read(
        &self,
        addressed: &str,
        collection: &str,
        filter: &Filter,
        pref: ReadPreference,
        now: Tick,
    ) -> Result<Vec<Document>, StoreError> {
        let idx = self
            .index_of(addressed)
            .ok_or_else(|| StoreError::UnknownNode(addressed.to_string()))?;
        let node = &self.nodes[idx];
        if node.crashed {
            return Err(StoreError::NodeUnavailable(addressed.to_string()));
        }
        if pref == ReadPreference::PrimaryStrong
            && (node.role != Role::Master || !self.node_has_lease(idx, now))
        {
            return Err(StoreError::StalePrimary);
        }
        let mut out: Vec<Document> = node
            .collections
            .get(collection)
            .map(|c| c.values().filter(|d| filter.matches(d)).cloned().collect())
            .unwrap_or_default();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }

    /// Constant-time-expected lookup by id on the addressed node.
    pub fn key_lookup(&self, addressed: &str, collection: &str, id: &str) -> Option<Document> {
        let node = self.node(addressed)?;
        if node.crashed {
            return None;
        }
        node.collections.get(collection).and_then(|c| c.get(id)).cloned()
    }

    // ------------------------------------------------------------------
    // Replication
    // ------------------------------------------------------------------

    /// Pull and apply, in seq order, every retained master entry the slave
    /// is missing. Returns how many were applied. The message-driven
    /// harness performs the same exchange with latency via
    /// [`ReplicaSet::peek_pull`] and [`ReplicaSet::apply_pull_entries`].
    pub fn replicate_pull(&mut self, slave_id: &str) -> Result<usize, PullError> {
        let mi = self.master_index().expect("replica set has a master");
        let si = self.index_of(slave_id).expect("known slave");
        assert_ne!(mi, si, "master does not pull from itself");
        let (master_term, entries) = self.peek_pull(slave_id)?;
        Ok(self.apply_pull_entries(slave_id, master_term, &entries))
    }

    /// Copy the master's full state onto the slave and mark it caught up.
    /// Idempotent; recovers from oplog gaps and divergent histories.
    pub fn full_resync(&mut self, slave_id: &str) {
        let mi = self.master_index().expect("replica set has a master");
        let snap = self.snapshot_of(&self.nodes[mi].node_id.clone());
        self.install_snapshot(slave_id, snap);
    }

    /// The full logical state of one node, for resync transfer.
    pub fn snapshot_of(&self, node_id: &str) -> NodeSnapshot {
        let n = self.node(node_id).expect("known node");
        NodeSnapshot {
            collections: n.collections.clone(),
            applied_seq: n.applied_seq,
            term: n.term,
            last_entry_term: n.last_entry_term,
            election_base: n.election_base,
            election_base_term: n.election_base_term,
        }
    }

    /// Approximate transfer size of a snapshot, for traffic accounting.
    pub fn snapshot_bytes(&self, node_id: &str) -> u64 {
        let Some(n) = self.node(node_id) else { return 0 };
        n.collections
            .values()
            .flat_map(|c| c.values())
            .map(|d| d.canonical_json().len() as u64)
            .sum()
    }

    /// Install a master snapshot on a slave, clearing any divergence.
    pub fn install_snapshot(&mut self, slave_id: &str, snap: NodeSnapshot) {
        let si = self.index_of(slave_id).expect("known slave");
        let s = &mut self.nodes[si];
        s.collections = snap.collections;
        s.applied_seq = snap.applied_seq;
        s.term = snap.term;
        s.last_entry_term = snap.last_entry_term;
        s.election_base = snap.election_base;
        s.election_base_term = snap.election_base_term;
        s.needs_resync = false;
        if s.role == Role::SteppedDown || s.role == Role::Master {
            s.role = Role::Slave;
        }
        let sid = s.node_id.clone();
        if let Some(mi) = self.master_index() {
            if mi != si {
                self.nodes[mi].peer_applied.insert(sid, snap.applied_seq);
            }
        }
    }

    /// Read-only half of a pull, served at the master: the retained entries
    /// past the slave's applied seq, or the gap/divergence verdict.
    ///
    /// Entries are served only when the slave's history is verifiably a
    /// prefix of the master's: its last applied (seq, term) must match the
    /// master's retained entry at that seq, the master's election anchor,
    /// or the master's own tail. Anything else takes the full-resync path.
    pub fn peek_pull(&self, slave_id: &str) -> Result<(u64, Vec<OplogEntry>), PullError> {
        let mi = self.master_index().expect("replica set has a master");
        let si = self.index_of(slave_id).expect("known slave");
        let master_term = self.nodes[mi].term;
        let slave = &self.nodes[si];
        if slave.needs_resync
            || !self.prefix_verified(mi, slave.applied_seq, slave.last_entry_term)
        {
            return Err(PullError::OplogGap);
        }
        let entries = self.nodes[mi]
            .oplog
            .entries_after(slave.applied_seq)
            .ok_or(PullError::OplogGap)?;
        if !entries.is_empty() && entries[0].seq != slave.applied_seq + 1 {
            return Err(PullError::OplogGap);
        }
        // The retained log must bridge the slave all the way to the
        // master's tail; a fresh post-election log starts empty and cannot.
        if slave.applied_seq + entries.len() as u64 != self.nodes[mi].applied_seq {
            return Err(PullError::OplogGap);
        }
        Ok((master_term, entries))
    }

    /// Is a history ending at (applied, last_term) a verified prefix of the
    /// master's history?
    fn prefix_verified(&self, mi: usize, applied: u64, last_term: u64) -> bool {
        let m = &self.nodes[mi];
        if applied > m.applied_seq {
            return false;
        }
        if applied == m.applied_seq {
            return last_term == m.last_entry_term;
        }
        if applied == 0 {
            return true;
        }
        if applied == m.election_base {
            return last_term == m.election_base_term;
        }
        m.oplog
            .iter()
            .find(|e| e.seq == applied)
            .is_some_and(|e| e.term == last_term)
    }

    /// Apply pulled entries at the slave, in seq order. A node that pulls
    /// is following someone else's log: if it still carried the master
    /// role (a deposed master that was never fenced), it stands down here.
    pub fn apply_pull_entries(
        &mut self,
        slave_id: &str,
        master_term: u64,
        entries: &[OplogEntry],
    ) -> usize {
        let si = self.index_of(slave_id).expect("known slave");
        if self.nodes[si].role == Role::Master {
            self.nodes[si].role = Role::Slave;
            self.nodes[si].oplog.clear();
        }
        let mut applied = 0;
        for e in entries {
            if e.seq == self.nodes[si].applied_seq + 1 {
                self.nodes[si].apply_entry(e);
                applied += 1;
            }
        }
        if master_term > self.nodes[si].term {
            self.nodes[si].term = master_term;
        }
        let post = self.nodes[si].applied_seq;
        let sid = self.nodes[si].node_id.clone();
        if let Some(mi) = self.master_index() {
            if mi != si {
                self.nodes[mi].peer_applied.insert(sid, post);
            }
        }
        applied
    }

    // ------------------------------------------------------------------
    // Heartbeats and leases
    // ------------------------------------------------------------------

    /// One synchronous heartbeat exchange between the master and every
    /// reachable live peer. The message-driven harness performs the same
    /// state transitions with latency via [`ReplicaSet::on_heartbeat_ping`]
    /// and [`ReplicaSet::on_heartbeat_reply`].
    pub fn heartbeat_round(&mut self, view: &dyn Connectivity, now: Tick) {
        let Some(mi) = self.master_index() else {
            return;
        };
        if self.nodes[mi].crashed {
            return;
        }
        let master_id = self.nodes[mi].node_id.clone();
        let term = self.nodes[mi].term;
        let peers: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|n| n.node_id != master_id && !n.crashed)
            .map(|n| n.node_id.clone())
            .collect();
        for peer in peers {
            if !view.connected(&master_id, &peer) {
                continue;
            }
            if let Some((reply_term, applied, let_term)) = self.on_heartbeat_ping(&peer, term, now) {
                self.on_heartbeat_reply(&master_id, &peer, reply_term, applied, let_term, now);
            }
        }
    }

    /// A master ping arrived at `node_id`. Returns the reply (term, applied
    /// seq, last entry term) to route back, or `None` if the node is down.
    pub fn on_heartbeat_ping(
        &mut self,
        node_id: &str,
        master_term: u64,
        now: Tick,
    ) -> Option<(u64, u64, u64)> {
        let idx = self.index_of(node_id)?;
        let node = &mut self.nodes[idx];
        if node.crashed {
            return None;
        }
        if master_term >= node.term {
            if master_term > node.term && node.role == Role::Master {
                // A newer master exists; stand down and resync before serving.
                node.role = Role::SteppedDown;
                node.needs_resync = true;
            }
            node.term = master_term;
            node.last_master_contact = Some(now);
        }
        Some((node.term, node.applied_seq, node.last_entry_term))
    }

    /// A heartbeat reply arrived back at the master. The peer's applied seq
    /// counts toward commitment only when its history is a verified prefix
    /// of the master's lineage.
    pub fn on_heartbeat_reply(
        &mut self,
        master_id: &str,
        from_peer: &str,
        peer_term: u64,
        peer_applied: u64,
        peer_last_entry_term: u64,
        now: Tick,
    ) {
        let Some(mi) = self.index_of(master_id) else {
            return;
        };
        if self.nodes[mi].crashed || self.nodes[mi].role != Role::Master {
            return;
        }
        if peer_term > self.nodes[mi].term {
            let m = &mut self.nodes[mi];
            m.role = Role::SteppedDown;
            m.needs_resync = true;
            m.term = peer_term;
            return;
        }
        let verified = self.prefix_verified(mi, peer_applied, peer_last_entry_term);
        let m = &mut self.nodes[mi];
        m.last_heartbeat_reply.insert(from_peer.to_string(), now);
        if verified {
            m.peer_applied.insert(from_peer.to_string(), peer_applied);
        }
    }

    // ------------------------------------------------------------------
    // Failover
    // ------------------------------------------------------------------

    /// Elect a master among the nodes mutually reachable in a majority
    /// partition: highest applied seq wins, ties break to the lowest node
    /// id. Any previous master inside that group becomes a slave; one
    /// outside it keeps its role until it is fenced on contact.
    pub fn elect_master(&mut self, view: &dyn Connectivity, now: Tick) -> Result<NodeId, NoQuorum> {
        let alive: Vec<usize> = (0..self.nodes.len()).filter(|&i| !self.nodes[i].crashed).collect();
        // Mutually-reachable groups among live nodes.
        let mut groups: Vec<Vec<usize>> = Vec::new();
        'outer: for &i in &alive {
            for g in groups.iter_mut() {
                if g.iter().all(|&j| {
                    view.connected(&self.nodes[i].node_id, &self.nodes[j].node_id)
                        && view.connected(&self.nodes[j].node_id, &self.nodes[i].node_id)
                }) {
                    g.push(i);
                    continue 'outer;
                }
            }
            groups.push(vec![i]);
        }
        let electorate = groups
            .into_iter()
            .find(|g| g.len() >= self.majority())
            .ok_or(NoQuorum)?;

        // History comparison puts the entry term first: a candidate that
        // applied entries of a newer master supersedes a deposed master's
        // longer-but-stale history. With equal terms this is the plain
        // highest-applied-seq rule.
        let winner = *electorate
            .iter()
            .max_by(|&&a, &&b| {
                self.nodes[a]
                    .last_entry_term
                    .cmp(&self.nodes[b].last_entry_term)
                    .then_with(|| self.nodes[a].applied_seq.cmp(&self.nodes[b].applied_seq))
                    .then_with(|| self.nodes[b].node_id.cmp(&self.nodes[a].node_id))
            })
            .expect("electorate is non-empty");

        let new_term = electorate
            .iter()
            .map(|&i| self.nodes[i].term)
            .max()
            .unwrap_or(0)
            + 1;

        for &i in &electorate {
            let n = &mut self.nodes[i];
            if i == winner {
                n.role = Role::Master;
                n.term = new_term;
                n.election_base = n.applied_seq;
                n.election_base_term = n.last_entry_term;
                n.oplog.clear();
                n.last_heartbeat_reply.clear();
                n.peer_applied.clear();
                n.needs_resync = false;
                n.caught_up_at = now;
            } else {
                n.role = Role::Slave;
                n.term = new_term;
                n.last_master_contact = Some(now);
            }
        }
        let winner_id = self.nodes[winner].node_id.clone();
        // Give the new master an immediate lease among its electorate.
        // Commit bookkeeping is not seeded: peer histories count only once
        // verified through heartbeats or pulls.
        for &i in &electorate {
            if i != winner {
                let peer = self.nodes[i].node_id.clone();
                self.nodes[winner].last_heartbeat_reply.insert(peer, now);
            }
        }
        Ok(winner_id)
    }

    // ------------------------------------------------------------------
    // Faults and inspection
    // ------------------------------------------------------------------

    /// Stop a node. Its state is preserved; it simply stops participating
    /// until restarted.
    pub fn crash(&mut self, node_id: &str) {
        if let Some(n) = self.node_mut(node_id) {
            n.crashed = true;
        }
    }

    pub fn restart(&mut self, node_id: &str) {
        if let Some(n) = self.node_mut(node_id) {
            n.crashed = false;
        }
    }

    pub fn state_digest(&self, node_id: &str) -> Option<Digest> {
        self.node(node_id).map(|n| n.state_digest())
    }

    /// True when every live node holds identical logical state.
    pub fn converged(&self) -> bool {
        let mut digests = self
            .nodes
            .iter()
            .filter(|n| !n.crashed)
            .map(|n| n.state_digest());
        match digests.next() {
            None => true,
            Some(first) => digests.all(|d| d == first),
        }
    }

    /// Record that `slave` was fully caught up at `now` (used by the
    /// harness to track replication lag).
    pub fn note_caught_up(&mut self, node_id: &str, now: Tick) {
        if let Some(n) = self.node_mut(node_id) {
            n.caught_up_at = now;
        }
    }

    /// Retained oplog entries must form one contiguous seq interval on
    /// every node; used by the harness invariant monitors.
    pub fn check_oplog_contiguity(&self) -> Result<(), String> {
        for n in &self.nodes {
            let mut prev: Option<u64> = None;
            for e in n.oplog.iter() {
                if let Some(p) = prev {
                    if e.seq != p + 1 {
                        return Err(format!(
                            "oplog gap on {}: {p} then {}",
                            n.node_id, e.seq
                        ));
                    }
                }
                prev = Some(e.seq);
            }
        }
        Ok(())
    }
}
