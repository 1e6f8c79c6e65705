//! The sharding layer: versioned chunk metadata on a three-server config
//! group, shard-key routing with stale-cache refresh, and chunk splitting,
//! migration and balancing under actor pinning.

mod config;
mod keys;
mod map;

pub use config::{ConfigGroup, ConfigServer};
pub use keys::{KeyBound, ShardId, ShardKey};
pub use map::{ChunkDescriptor, ChunkMap, SplitError};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::store::{Connectivity, Filter, ReadPreference, ReplicaSet, WriteOp};
use crate::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FabricError {
    #[error("fewer than two config servers reachable")]
    ConfigUnavailable,
    #[error("metadata version conflict; another commit won")]
    VersionConflict,
    #[error("split key falls outside the chunk's open interior")]
    KeyOutOfRange,
    #[error("chunk is pinned to a different shard")]
    PinViolation,
    #[error("destination shard is unavailable")]
    ShardUnavailable,
}

impl From<SplitError> for FabricError {
    fn from(_: SplitError) -> Self {
        FabricError::KeyOutOfRange
    }
}

/// All replica sets of the cluster, addressed by shard id.
pub type ShardMap = BTreeMap<ShardId, ReplicaSet>;

/// What one shard believes it owns. Reads check the addressed shard against
/// this; a key outside the owned ranges is the version mismatch that makes
/// a stale router refresh.
#[derive(Debug, Clone, Default)]
pub struct Ownership {
    pub version: u64,
    pub ranges: Vec<(KeyBound, KeyBound)>,
}

impl Ownership {
    pub fn covers(&self, key: &ShardKey) -> bool {
        self.ranges.iter().any(|(lo, hi)| lo.le_key(key) && hi.gt_key(key))
    }
}

/// A performed chunk migration, for reports and tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Migration {
    pub lo: KeyBound,
    pub hi: KeyBound,
    pub from_shard: ShardId,
    pub to_shard: ShardId,
    pub new_version: u64,
}

/// Sharding control plane: the config group plus each shard's view of what
/// it owns.
#[derive(Debug, Clone)]
pub struct Fabric {
    pub group: ConfigGroup,
    pub ownership: BTreeMap<ShardId, Ownership>,
    pub split_threshold: u64,
}

impl Fabric {
    /// Build the control plane with the initial full-range map on the first
    /// listed shard and every shard registered.
    pub fn new(config_server_ids: [String; 3], shard_ids: &[ShardId], split_threshold: u64) -> Self {
        assert!(!shard_ids.is_empty());
        let initial = ChunkMap::initial(shard_ids[0].clone());
        let group = ConfigGroup::new(config_server_ids, initial.clone());
        let mut fabric = Fabric {
            group,
            ownership: shard_ids
                .iter()
                .map(|s| (s.clone(), Ownership::default()))
                .collect(),
            split_threshold,
        };
        fabric.adopt_map(&initial);
        fabric
    }

    pub fn shard_owns(&self, shard: &str, key: &ShardKey) -> bool {
        self.ownership.get(shard).is_some_and(|o| o.covers(key))
    }

    fn adopt_map(&mut self, map: &ChunkMap) {
        for (shard, own) in self.ownership.iter_mut() {
            own.version = map.version;
            own.ranges = map.ranges_of(shard);
        }
    }

    /// Commit a map mutation and atomically update shard ownership.
    fn commit(
        &mut self,
        new_map: &ChunkMap,
        view: &dyn Connectivity,
        from: &str,
        now: Tick,
    ) -> Result<u64, FabricError> {
        let v = self.group.commit_metadata(new_map, view, from, now)?;
        self.adopt_map(new_map);
        Ok(v)
    }

    /// Split the chunk containing `split_key` at that key.
    pub fn split_chunk(
        &mut self,
        split_key: &ShardKey,
        view: &dyn Connectivity,
        from: &str,
        now: Tick,
    ) -> Result<u64, FabricError> {
        let map = self.group.lookup_metadata(view, from)?;
        let next = map.split_at(split_key)?;
        self.commit(&next, view, from, now)
    }

    /// Ensure a chunk boundary exists exactly at `key`.
    fn ensure_boundary(
        &mut self,
        key: &ShardKey,
        view: &dyn Connectivity,
        from: &str,
        now: Tick,
    ) -> Result<(), FabricError> {
        match self.split_chunk(key, view, from, now) {
            // KeyOutOfRange here means the boundary already exists.
            Ok(_) | Err(FabricError::KeyOutOfRange) => Ok(()),
            Err(e) => Err(e),
        }
    }

    fn dest_available(
        &self,
        shards: &ShardMap,
        to_shard: &str,
        view: &dyn Connectivity,
        from: &str,
        now: Tick,
    ) -> bool {
        let Some(set) = shards.get(to_shard) else {
            return false;
        };
        let Some(master) = set.master_id() else {
            return false;
        };
        set.master_has_lease(now) && view.connected(from, &master)
    }

    /// Move the chunk at map index `idx` to `to_shard`: copy its documents,
    /// commit the metadata change, then delete from the source. A routed
    /// read at any point sees the documents at the pre- or post-migration
    /// location, never at neither.
    pub fn migrate_chunk(
        &mut self,
        shards: &mut ShardMap,
        idx: usize,
        to_shard: &str,
        view: &dyn Connectivity,
        from: &str,
        now: Tick,
    ) -> Result<u64, FabricError> {
        let map = self.group.lookup_metadata(view, from)?;
        let chunk = map.chunks.get(idx).ok_or(FabricError::KeyOutOfRange)?.clone();
        if let Some(pin) = &chunk.pinned_to {
            if pin != to_shard {
                return Err(FabricError::PinViolation);
            }
        }
        if chunk.shard == to_shard {
            // Already placed: metadata-only move, still a version bump.
            let next = map.with_chunk_moved(idx, to_shard);
            return self.commit(&next, view, from, now);
        }
        if !self.dest_available(shards, to_shard, view, from, now) {
            return Err(FabricError::ShardUnavailable);
        }

        let moving = docs_in_range(shards, &chunk.shard, &chunk.lo, &chunk.hi);

        // Copy into the destination through the normal write path.
        for (collection, doc) in &moving {
            let set = shards.get_mut(to_shard).expect("destination exists");
            let master = set.master_id().ok_or(FabricError::ShardUnavailable)?;
            let op = if set.key_lookup(&master, collection, &doc.id).is_some() {
                WriteOp::Update(doc.clone())
            } else {
                WriteOp::Insert(doc.clone())
            };
            set.write(&master, op, collection, now)
                .map_err(|_| FabricError::ShardUnavailable)?;
        }

        let next = map.with_chunk_moved(idx, to_shard);
        let version = self.commit(&next, view, from, now)?;

        // Source cleanup after the commit; stale-routed reads now refresh.
        if let Some(set) = shards.get_mut(&chunk.shard) {
            if let Some(master) = set.master_id() {
                for (collection, doc) in &moving {
                    let _ = set.write(
                        &master,
                        WriteOp::Delete { id: doc.id.clone() },
                        collection,
                        now,
                    );
                }
            }
        }
        Ok(version)
    }

    /// Carve out the actor's key band, migrate it onto `shard` and pin it
    /// there. Called once at actor registration.
    pub fn pin_actor(
        &mut self,
        shards: &mut ShardMap,
        actor_id: &str,
        shard: &str,
        view: &dyn Connectivity,
        from: &str,
        now: Tick,
    ) -> Result<(), FabricError> {
        let start = ShardKey::actor_start(actor_id);
        let end = ShardKey::actor_end(actor_id);
        self.ensure_boundary(&start, view, from, now)?;
        self.ensure_boundary(&end, view, from, now)?;
        loop {
            let map = self.group.lookup_metadata(view, from)?;
            match map
                .chunks
                .iter()
                .position(|c| within_band(c, &start, &end) && c.shard != shard)
            {
                Some(idx) => {
                    self.migrate_chunk(shards, idx, shard, view, from, now)?;
                }
                None => break,
            }
        }
        let map = self.group.lookup_metadata(view, from)?;
        if map
            .chunks
            .iter()
            .any(|c| within_band(c, &start, &end) && c.pinned_to.as_deref() != Some(shard))
        {
            let mut next = map;
            for c in next.chunks.iter_mut() {
                if within_band(c, &start, &end) {
                    c.pinned_to = Some(shard.to_string());
                }
            }
            next.version += 1;
            self.commit(&next, view, from, now)?;
        }
        Ok(())
    }

    /// Recount every chunk's documents from shard contents, then split any
    /// chunk over the threshold at its median resident key.
    pub fn maintenance_round(
        &mut self,
        shards: &mut ShardMap,
        view: &dyn Connectivity,
        from: &str,
        now: Tick,
    ) -> Result<(), FabricError> {
        let mut map = self.group.lookup_metadata(view, from)?;
        let mut changed = false;
        for c in map.chunks.iter_mut() {
            let count = docs_in_range(shards, &c.shard, &c.lo, &c.hi).len() as u64;
            if count != c.doc_count {
                c.doc_count = count;
                changed = true;
            }
        }
        if changed {
            map.version += 1;
            self.commit(&map, view, from, now)?;
        }

        loop {
            let map = self.group.lookup_metadata(view, from)?;
            let Some(over) = map
                .chunks
                .iter()
                .find(|c| c.doc_count > self.split_threshold)
                .cloned()
            else {
                return Ok(());
            };
            let mut keys: Vec<ShardKey> = docs_in_range(shards, &over.shard, &over.lo, &over.hi)
                .iter()
                .map(|(coll, d)| ShardKey::for_doc(&d.owner, coll, &d.id))
                .collect();
            keys.sort();
            let median = keys[keys.len() / 2].clone();
            if KeyBound::Key(median.clone()) == over.lo {
                // All docs share one key prefix point; nothing to split.
                return Ok(());
            }
            let mut next = map.split_at(&median)?;
            for c in next.chunks.iter_mut() {
                if c.shard == over.shard && (c.lo == over.lo || c.hi == over.hi) {
                    c.doc_count = docs_in_range(shards, &c.shard, &c.lo, &c.hi).len() as u64;
                }
            }
            self.commit(&next, view, from, now)?;
        }
    }

    /// One balancing pass: among unpinned chunks on available shards, move
    /// chunks from the fullest shard to the emptiest until the spread is at
    /// most one. Pinned chunks never move; unavailable shards are skipped.
    pub fn balance_round(
        &mut self,
        shards: &mut ShardMap,
        view: &dyn Connectivity,
        from: &str,
        now: Tick,
    ) -> Vec<Migration> {
        let mut performed = Vec::new();
        loop {
            let Ok(map) = self.group.lookup_metadata(view, from) else {
                return performed;
            };
            let mut counts: BTreeMap<String, u64> = self
                .ownership
                .keys()
                .filter(|s| self.dest_available(shards, s, view, from, now))
                .map(|s| (s.clone(), 0))
                .collect();
            if counts.len() < 2 {
                return performed;
            }
            for c in &map.chunks {
                if c.pinned_to.is_none() {
                    if let Some(n) = counts.get_mut(&c.shard) {
                        *n += 1;
                    }
                }
            }
            // Ties break to the lexicographically smallest shard id.
            let (max_shard, max_n) = counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
                .map(|(s, n)| (s.clone(), *n))
                .expect("at least two shards");
            let (min_shard, min_n) = counts
                .iter()
                .min_by(|a, b| a.1.cmp(b.1).then_with(|| a.0.cmp(b.0)))
                .map(|(s, n)| (s.clone(), *n))
                .expect("at least two shards");
            if max_n.saturating_sub(min_n) <= 1 {
                return performed;
            }
            let Some(idx) = map
                .chunks
                .iter()
                .position(|c| c.pinned_to.is_none() && c.shard == max_shard)
            else {
                return performed;
            };
            let (lo, hi) = (map.chunks[idx].lo.clone(), map.chunks[idx].hi.clone());
            match self.migrate_chunk(shards, idx, &min_shard, view, from, now) {
                Ok(new_version) => performed.push(Migration {
                    lo,
                    hi,
                    from_shard: max_shard,
                    to_shard: min_shard,
                    new_version,
                }),
                Err(_) => return performed,
            }
        }
    }
}

/// The chunk lies fully inside the half-open band [start, end).
fn within_band(c: &ChunkDescriptor, start: &ShardKey, end: &ShardKey) -> bool {
    let lo_ok = match &c.lo {
        KeyBound::Key(k) => k >= start,
        _ => false,
    };
    let hi_ok = match &c.hi {
        KeyBound::Key(k) => k <= end,
        _ => false,
    };
    lo_ok && hi_ok
}

/// (collection, document) pairs on a shard's master whose shard key falls
/// inside [lo, hi), sorted by key.
fn docs_in_range(
    shards: &ShardMap,
    shard: &str,
    lo: &KeyBound,
    hi: &KeyBound,
) -> Vec<(String, crate::doc::Document)> {
    let Some(set) = shards.get(shard) else {
        return Vec::new();
    };
    let Some(master) = set.master_id() else {
        return Vec::new();
    };
    let Some(node) = set.node(&master) else {
        return Vec::new();
    };
    let names: Vec<String> = node.collection_names().map(|s| s.to_string()).collect();
    let mut out: Vec<(ShardKey, String, crate::doc::Document)> = Vec::new();
    for coll in names {
        for doc in set
            .read(&master, &coll, &Filter::all(), ReadPreference::SecondaryEventual, now_irrelevant())
            .unwrap_or_default()
        {
            let key = ShardKey::for_doc(&doc.owner, &coll, &doc.id);
            if lo.le_key(&key) && hi.gt_key(&key) {
                out.push((key, coll.clone(), doc));
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out.into_iter().map(|(_, c, d)| (c, d)).collect()
}

fn now_irrelevant() -> Tick {
    0
}

/// A routing cache: resolves shard keys against a cached map copy,
/// refreshing once from the config group when the addressed shard disowns
/// the key.
#[derive(Debug, Clone)]
pub struct Router {
    pub cached_map: ChunkMap,
}

impl Router {
    pub fn new(map: ChunkMap) -> Self {
        Router { cached_map: map }
    }

    pub fn cache_version(&self) -> u64 {
        self.cached_map.version
    }

    /// Pure cache lookup.
    pub fn route(&self, key: &ShardKey) -> ShardId {
        self.cached_map.locate(key).shard.clone()
    }

    /// Cache lookup with the mismatch path: when the resolved shard does
    /// not own the key, refresh the cache once and re-resolve.
    pub fn route_checked(
        &mut self,
        key: &ShardKey,
        fabric: &mut Fabric,
        view: &dyn Connectivity,
        from: &str,
    ) -> Result<ShardId, FabricError> {
        let shard = self.route(key);
        if fabric.shard_owns(&shard, key) {
            return Ok(shard);
        }
        self.cached_map = fabric.group.lookup_metadata(view, from)?;
        Ok(self.route(key))
    }
}
