//! Shard keys and chunk ranges. Keys order lexicographically by
//! (actor id, minor), so each actor's documents form one contiguous band of
//! the key space.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Identifies one shard (a replica set) of the cluster.
pub type ShardId = String;

/// The sharding key of a document: the owning actor is the major component,
/// the collection-specific minor ("orders/ord-0042") the tie-breaker.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ShardKey {
    pub actor_id: String,
    pub minor: String,
}

impl ShardKey {
    pub fn new(actor_id: impl Into<String>, minor: impl Into<String>) -> Self {
        ShardKey {
            actor_id: actor_id.into(),
            minor: minor.into(),
        }
    }

    /// The key of a stored document.
    pub fn for_doc(owner: &str, collection: &str, id: &str) -> Self {
        ShardKey::new(owner, format!("{collection}/{id}"))
    }

    /// First key of an actor's band.
    pub fn actor_start(actor_id: &str) -> Self {
        ShardKey::new(actor_id, "")
    }

    /// First key past an actor's band: the successor string of the actor id
    /// with an empty minor.
    pub fn actor_end(actor_id: &str) -> Self {
        ShardKey::new(format!("{actor_id}\u{0}"), "")
    }
}

impl fmt::Display for ShardKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", escape(&self.actor_id), escape(&self.minor))
    }
}

/// One endpoint of a half-open chunk range.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KeyBound {
    NegInf,
    Key(ShardKey),
    PosInf,
}

impl KeyBound {
    /// Is `key` at or above this bound?
    pub fn le_key(&self, key: &ShardKey) -> bool {
        match self {
            KeyBound::NegInf => true,
            KeyBound::Key(k) => k <= key,
            KeyBound::PosInf => false,
        }
    }

    /// Is `key` strictly below this bound?
    pub fn gt_key(&self, key: &ShardKey) -> bool {
        match self {
            KeyBound::NegInf => false,
            KeyBound::Key(k) => key < k,
            KeyBound::PosInf => true,
        }
    }
}

impl fmt::Display for KeyBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyBound::NegInf => write!(f, "-inf"),
            KeyBound::Key(k) => write!(f, "{k}"),
            KeyBound::PosInf => write!(f, "+inf"),
        }
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        match b {
            b'|' | b'%' | b',' => out.push_str(&format!("%{b:02x}")),
            0x00..=0x1f => out.push_str(&format!("%{b:02x}")),
            _ => out.push(b as char),
        }
    }
    out
}
