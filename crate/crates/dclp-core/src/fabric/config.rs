//! The config group: exactly three metadata servers holding copies of the
//! chunk map. Reads and writes need agreement of two of the three; a commit
//! first takes version promises, then stores, so two racing committers for
//! the same version cannot both win.

use std::collections::BTreeMap;

use crate::store::Connectivity;
use crate::Tick;

use super::map::ChunkMap;
use super::FabricError;

/// How long a version promise lives before it can be taken over; guards
/// against a committer that obtained promises and never stored.
const PROMISE_TTL: Tick = 10;

#[derive(Debug, Clone)]
pub struct ConfigServer {
    pub server_id: String,
    map: ChunkMap,
    promise: Option<Promise>,
    crashed: bool,
}

#[derive(Debug, Clone)]
struct Promise {
    version: u64,
    committer: String,
    granted_at: Tick,
}

#[derive(Debug, Clone)]
pub struct ConfigGroup {
    servers: Vec<ConfigServer>,
}

impl ConfigGroup {
    /// A fresh group of exactly three servers, all at the given initial map.
    pub fn new(server_ids: [String; 3], initial: ChunkMap) -> Self {
        ConfigGroup {
            servers: server_ids
                .into_iter()
                .map(|server_id| ConfigServer {
                    server_id,
                    map: initial.clone(),
                    promise: None,
                    crashed: false,
                })
                .collect(),
        }
    }

    pub fn server_ids(&self) -> Vec<String> {
        self.servers.iter().map(|s| s.server_id.clone()).collect()
    }

    pub fn server_version(&self, idx: usize) -> u64 {
        self.servers[idx].map.version
    }

    pub fn crash(&mut self, server_id: &str) {
        if let Some(s) = self.servers.iter_mut().find(|s| s.server_id == server_id) {
            s.crashed = true;
        }
    }

    pub fn restart(&mut self, server_id: &str) {
        if let Some(s) = self.servers.iter_mut().find(|s| s.server_id == server_id) {
            s.crashed = false;
        }
    }

    fn reachable_indices(&self, view: &dyn Connectivity, from: &str) -> Vec<usize> {
        (0..self.servers.len())
            .filter(|&i| !self.servers[i].crashed && view.connected(from, &self.servers[i].server_id))
            .collect()
    }

    /// Highest-version map held by a reachable majority; reachable stragglers
    /// are repaired to it before returning.
    pub fn lookup_metadata(
        &mut self,
        view: &dyn Connectivity,
        from: &str,
    ) -> Result<ChunkMap, FabricError> {
        let reachable = self.reachable_indices(view, from);
        if reachable.len() < 2 {
            return Err(FabricError::ConfigUnavailable);
        }
        let best = reachable
            .iter()
            .max_by_key(|&&i| self.servers[i].map.version)
            .copied()
            .expect("non-empty");
        let map = self.servers[best].map.clone();
        for &i in &reachable {
            if self.servers[i].map.version < map.version {
                self.servers[i].map = map.clone();
                self.servers[i].promise = None;
            }
        }
        Ok(map)
    }

    /// Ask one server for a promise on `version`. Granted only when the
    /// server sits at `version - 1` and has no live promise for the same
    /// version from another committer.
    pub fn try_promise(&mut self, idx: usize, version: u64, committer: &str, now: Tick) -> bool {
        let s = &mut self.servers[idx];
        if s.crashed || s.map.version != version - 1 {
            return false;
        }
        match &s.promise {
            Some(p)
                if p.version == version
                    && p.committer != committer
                    && now < p.granted_at + PROMISE_TTL =>
            {
                false
            }
            _ => {
                s.promise = Some(Promise {
                    version,
                    committer: committer.to_string(),
                    granted_at: now,
                });
                true
            }
        }
    }

    /// Store a committed map on one server, clearing its promise.
    pub fn store(&mut self, idx: usize, map: &ChunkMap) {
        let s = &mut self.servers[idx];
        if s.crashed {
            return;
        }
        if map.version > s.map.version {
            s.map = map.clone();
        }
        s.promise = None;
    }

    /// Commit `new_map` (which must be exactly one version ahead of the
    /// committed one): take promises from a reachable majority, then store
    /// on every reachable server. Exactly one of two racing committers for
    /// the same version can succeed.
    pub fn commit_metadata(
        &mut self,
        new_map: &ChunkMap,
        view: &dyn Connectivity,
        from: &str,
        now: Tick,
    ) -> Result<u64, FabricError> {
        let reachable = self.reachable_indices(view, from);
        if reachable.len() < 2 {
            return Err(FabricError::ConfigUnavailable);
        }
        let committed = reachable
            .iter()
            .map(|&i| self.servers[i].map.version)
            .max()
            .expect("non-empty");
        if new_map.version != committed + 1 {
            return Err(FabricError::VersionConflict);
        }
        let mut promised = Vec::new();
        for &i in &reachable {
            if self.try_promise(i, new_map.version, from, now) {
                promised.push(i);
            }
        }
        if promised.len() < 2 {
            // Release our own promises; someone else is winning this version.
            for &i in &promised {
                self.servers[i].promise = None;
            }
            return Err(FabricError::VersionConflict);
        }
        for &i in &reachable {
            self.store(i, new_map);
        }
        Ok(new_map.version)
    }

    /// Per-server versions, for inspection and tests.
    pub fn versions(&self) -> BTreeMap<String, u64> {
        self.servers
            .iter()
            .map(|s| (s.server_id.clone(), s.map.version))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::keys::ShardKey;
    use crate::store::FullMesh;

    fn group() -> ConfigGroup {
        ConfigGroup::new(
            ["cfg-0".into(), "cfg-1".into(), "cfg-2".into()],
            ChunkMap::initial("shard-a".into()),
        )
    }

    struct Unreachable(Vec<String>);
    impl Connectivity for Unreachable {
        fn connected(&self, _a: &str, b: &str) -> bool {
            !self.0.iter().any(|x| x == b)
        }
    }

    #[test]
    fn lookup_agreeing_servers_returns_their_map() {
        let mut g = group();
        let map = g.lookup_metadata(&FullMesh, "router").unwrap();
        assert_eq!(map.version, 1);
    }

    #[test]
    fn lookup_repairs_lagging_server_to_highest_version() {
        let mut g = group();
        let v2 = g
            .lookup_metadata(&FullMesh, "router")
            .unwrap()
            .split_at(&ShardKey::new("m", ""))
            .unwrap();
        // Commit while cfg-2 is unreachable, leaving it at v1.
        let view = Unreachable(vec!["cfg-2".into()]);
        g.commit_metadata(&v2, &view, "router", 0).unwrap();
        assert_eq!(g.versions()["cfg-2"], 1);
        let map = g.lookup_metadata(&FullMesh, "router").unwrap();
        assert_eq!(map.version, 2);
        assert_eq!(g.versions()["cfg-2"], 2);
    }

    #[test]
    fn single_reachable_server_is_unavailable() {
        let mut g = group();
        let view = Unreachable(vec!["cfg-0".into(), "cfg-1".into()]);
        assert_eq!(
            g.lookup_metadata(&view, "router").unwrap_err(),
            FabricError::ConfigUnavailable
        );
        let v2 = ChunkMap {
            version: 2,
            ..ChunkMap::initial("shard-a".into())
        };
        assert_eq!(
            g.commit_metadata(&v2, &view, "router", 0).unwrap_err(),
            FabricError::ConfigUnavailable
        );
        // Nothing was stored anywhere.
        assert!(g.versions().values().all(|&v| v == 1));
    }

    #[test]
    fn commit_advances_all_reachable_servers() {
        let mut g = group();
        let v2 = g
            .lookup_metadata(&FullMesh, "router")
            .unwrap()
            .split_at(&ShardKey::new("m", ""))
            .unwrap();
        let committed = g.commit_metadata(&v2, &FullMesh, "router", 0).unwrap();
        assert_eq!(committed, 2);
        assert!(g.versions().values().all(|&v| v == 2));
    }

    #[test]
    fn racing_commits_of_same_version_have_one_winner() {
        let mut g = group();
        let base = g.lookup_metadata(&FullMesh, "router").unwrap();
        let a = base.split_at(&ShardKey::new("a", "")).unwrap();
        let b = base.split_at(&ShardKey::new("b", "")).unwrap();
        // A takes its promises first.
        assert!(g.try_promise(0, 2, "committer-a", 0));
        assert!(g.try_promise(1, 2, "committer-a", 0));
        // B races for the same version and is refused a majority.
        assert!(!g.try_promise(0, 2, "committer-b", 0));
        assert!(!g.try_promise(1, 2, "committer-b", 0));
        assert!(g.try_promise(2, 2, "committer-b", 0));
        // A completes; B's later full commit conflicts.
        g.store(0, &a);
        g.store(1, &a);
        assert_eq!(
            g.commit_metadata(&b, &FullMesh, "committer-b", 1).unwrap_err(),
            FabricError::VersionConflict
        );
        let final_map = g.lookup_metadata(&FullMesh, "router").unwrap();
        assert_eq!(final_map, a);
    }
}
