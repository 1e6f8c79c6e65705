//! The versioned chunk map: a range partition of the shard-key space onto
//! shards. Ranges are pairwise disjoint, cover (-inf, +inf), and every split
//! or migration bumps the version by exactly one.

use serde::{Deserialize, Serialize};

use super::keys::{KeyBound, ShardId, ShardKey};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkDescriptor {
    pub lo: KeyBound,
    pub hi: KeyBound,
    pub shard: ShardId,
    pub pinned_to: Option<ShardId>,
    pub doc_count: u64,
}

impl ChunkDescriptor {
    pub fn contains(&self, key: &ShardKey) -> bool {
        self.lo.le_key(key) && self.hi.gt_key(key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkMap {
    pub version: u64,
    pub chunks: Vec<ChunkDescriptor>,
}

impl ChunkMap {
    /// Version-1 map: one unpinned full-range chunk on `shard`.
    pub fn initial(shard: ShardId) -> Self {
        ChunkMap {
            version: 1,
            chunks: vec![ChunkDescriptor {
                lo: KeyBound::NegInf,
                hi: KeyBound::PosInf,
                shard,
                pinned_to: None,
                doc_count: 0,
            }],
        }
    }

    /// The unique chunk whose range contains `key`.
    pub fn locate(&self, key: &ShardKey) -> &ChunkDescriptor {
        let idx = self
            .chunks
            .partition_point(|c| !c.hi.gt_key(key));
        debug_assert!(self.chunks[idx].contains(key));
        &self.chunks[idx]
    }

    /// Coverage, disjointness and ordering of the whole map.
    pub fn validate(&self) -> Result<(), String> {
        if self.chunks.is_empty() {
            return Err("empty chunk list".into());
        }
        if self.chunks.first().unwrap().lo != KeyBound::NegInf {
            return Err("first chunk must start at -inf".into());
        }
        if self.chunks.last().unwrap().hi != KeyBound::PosInf {
            return Err("last chunk must end at +inf".into());
        }
        for (i, c) in self.chunks.iter().enumerate() {
            if c.lo >= c.hi {
                return Err(format!("chunk {i} has empty or inverted range"));
            }
            if let Some(p) = &c.pinned_to {
                if *p != c.shard {
                    return Err(format!("chunk {i} pinned to {p} but placed on {}", c.shard));
                }
            }
            if i + 1 < self.chunks.len() && self.chunks[i + 1].lo != c.hi {
                return Err(format!("gap or overlap between chunks {i} and {}", i + 1));
            }
        }
        Ok(())
    }

    /// Split the chunk containing `split_key` at that key. The two halves
    /// stay on the same shard with the same pin; version bumps by one.
    pub fn split_at(&self, split_key: &ShardKey) -> Result<ChunkMap, SplitError> {
        let mut next = self.clone();
        let idx = next
            .chunks
            .iter()
            .position(|c| c.contains(split_key))
            .ok_or(SplitError::KeyOutOfRange)?;
        let cur = &next.chunks[idx];
        // Splitting exactly at lo would create an empty left half.
        if cur.lo == KeyBound::Key(split_key.clone()) {
            return Err(SplitError::KeyOutOfRange);
        }
        let hi_half = ChunkDescriptor {
            lo: KeyBound::Key(split_key.clone()),
            hi: cur.hi.clone(),
            shard: cur.shard.clone(),
            pinned_to: cur.pinned_to.clone(),
            doc_count: 0,
        };
        next.chunks[idx].hi = KeyBound::Key(split_key.clone());
        next.chunks[idx].doc_count = 0;
        next.chunks.insert(idx + 1, hi_half);
        next.version += 1;
        debug_assert!(next.validate().is_ok());
        Ok(next)
    }

    /// Reassign the chunk at `idx` to `to_shard`; version bumps by one.
    pub fn with_chunk_moved(&self, idx: usize, to_shard: &str) -> ChunkMap {
        let mut next = self.clone();
        next.chunks[idx].shard = to_shard.to_string();
        next.version += 1;
        next
    }

    /// The ranges currently placed on `shard`.
    pub fn ranges_of(&self, shard: &str) -> Vec<(KeyBound, KeyBound)> {
        self.chunks
            .iter()
            .filter(|c| c.shard == shard)
            .map(|c| (c.lo.clone(), c.hi.clone()))
            .collect()
    }

    /// One line per chunk: version, lo, hi, shard, pinned_to, doc_count.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for c in &self.chunks {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.version,
                c.lo,
                c.hi,
                c.shard,
                c.pinned_to.as_deref().unwrap_or(""),
                c.doc_count
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum SplitError {
    #[error("split key falls outside the chunk's open interior")]
    KeyOutOfRange,
}
