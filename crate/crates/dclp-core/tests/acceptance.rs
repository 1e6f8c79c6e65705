//! The acceptance gate: one test per criterion, each printing a PASS line.
//! Run with `cargo test --test acceptance -- --nocapture` to see them.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{build_domain_world, privacy_trial};
use dclp_core::doc::{get_path, set_path, Document, FieldTree, FieldValue};
use dclp_core::fabric::{Fabric, Router, ShardKey, ShardMap};
use dclp_core::sim::cluster::run_cluster;
use dclp_core::sim::scenario::{run_scenario, ScenarioScript};
use dclp_core::sim::topology::TopologyConfig;
use dclp_core::store::{
    Connectivity, Filter, FullMesh, PullError, ReadPreference, ReplicaSet, StoreConfig,
    StoreError, WriteOp,
};
use dclp_core::trials::run_trials;
use dclp_core::workload::{generate_stream, ledger, GeneratorConfig, ProfileRow};
use dclp_core::Tick;

fn pass(n: u32, name: &str) {
    println!("criterion {n} ({name}): PASS");
}

// ---------------------------------------------------------------------
// 1. Eventual consistency
// ---------------------------------------------------------------------

fn ec_trial(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_nodes = rng.gen_range(3..=5usize);
    let node_ids: Vec<String> = (0..n_nodes).map(|i| format!("n{i}")).collect();
    let budget = if rng.gen_bool(0.3) { 100 } else { 10_000 };
    let mut set = ReplicaSet::bootstrap(
        "rs",
        node_ids.clone(),
        StoreConfig {
            node_budget_entries: budget,
            ..StoreConfig::default()
        },
    );
    let master = set.master_id().unwrap();
    let slaves: Vec<String> = node_ids.iter().filter(|n| **n != master).cloned().collect();

    let n_writes = rng.gen_range(1..=500usize);
    let mut issued = 0usize;
    while issued < n_writes {
        if rng.gen_bool(0.7) {
            let id = format!("d{:02}", rng.gen_range(0..60));
            let coll = ["orders", "stock", "offers"][rng.gen_range(0..3)];
            let exists = set.key_lookup(&master, coll, &id).is_some();
            let doc = Document::new(&id, "actor", issued as u64)
                .with("v", rng.gen_range(0..1_000_000i64));
            let op = if exists {
                if rng.gen_bool(0.25) {
                    WriteOp::Delete { id: id.clone() }
                } else {
                    WriteOp::Update(doc)
                }
            } else {
                WriteOp::Insert(doc)
            };
            set.write(&master, op, coll, 0).map_err(|e| e.to_string())?;
            issued += 1;
        } else {
            let slave = &slaves[rng.gen_range(0..slaves.len())];
            match set.replicate_pull(slave) {
                Ok(_) => {}
                Err(PullError::OplogGap) => set.full_resync(slave),
            }
        }
    }
    loop {
        let mut progressed = false;
        for slave in &slaves {
            match set.replicate_pull(slave) {
                Ok(0) => {}
                Ok(_) => progressed = true,
                Err(PullError::OplogGap) => {
                    set.full_resync(slave);
                    progressed = true;
                }
            }
        }
        if !progressed {
            break;
        }
    }
    let digests: Vec<_> = node_ids.iter().map(|n| set.state_digest(n).unwrap()).collect();
    if digests.windows(2).all(|w| w[0] == w[1]) {
        Ok(())
    } else {
        Err(format!("divergent digests under seed {seed}"))
    }
}

#[test]
fn criterion_1_eventual_consistency() {
    let started = Instant::now();
    let failures: Vec<String> = run_trials(0xEC, 1000, ec_trial)
        .into_iter()
        .filter_map(|r| r.err())
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "suite took {elapsed:?}, budget 60s");
    pass(1, "eventual consistency, 1000 randomized histories");
}

// ---------------------------------------------------------------------
// 2. CP behavior under partitions
// ---------------------------------------------------------------------

#[derive(Clone)]
struct Groups(Option<Vec<BTreeSet<String>>>);

impl Connectivity for Groups {
    fn connected(&self, a: &str, b: &str) -> bool {
        if a == b {
            return true;
        }
        match &self.0 {
            None => true,
            Some(groups) => groups.iter().any(|g| g.contains(a) && g.contains(b)),
        }
    }
}

fn cp_trial(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_nodes = rng.gen_range(3..=5usize);
    let node_ids: Vec<String> = (0..n_nodes).map(|i| format!("n{i}")).collect();
    let config = StoreConfig::default();
    let lease = config.lease_ticks;
    let election_timeout = config.election_timeout;
    let mut set = ReplicaSet::bootstrap("rs", node_ids.clone(), config);
    let mut view = Groups(None);

    // (term, seq, id, image) of every acknowledged write; durable indexes.
    let mut acks: Vec<(u64, u64, String, Option<Document>)> = Vec::new();
    let mut durable: BTreeSet<usize> = BTreeSet::new();
    let mut isolated_since: Option<(String, Tick)> = None;
    let mut refusals = 0u64;
    let mut last_master_seen: BTreeMap<String, Tick> = BTreeMap::new();

    let ticks = rng.gen_range(150..350u64);
    for t in 1..=ticks {
        set.heartbeat_round(&view, t);

        if let Some(m) = set.master_id() {
            for n in &node_ids {
                if view.connected(n, &m) {
                    last_master_seen.insert(n.clone(), t);
                }
            }
        }

        match rng.gen_range(0..12) {
            0..=4 => {
                // Client write to the authoritative master.
                if let Some(m) = set.master_id() {
                    let id = format!("d{:02}", rng.gen_range(0..30));
                    let exists = set.key_lookup(&m, "c", &id).is_some();
                    let doc =
                        Document::new(&id, "actor", t).with("v", rng.gen_range(0..1_000i64));
                    let op = if exists {
                        WriteOp::Update(doc.clone())
                    } else {
                        WriteOp::Insert(doc.clone())
                    };
                    match set.write(&m, op, "c", t) {
                        Ok(ack) => {
                            let term = set.node(&m).unwrap().term;
                            acks.push((term, ack.seq, id, Some(doc)));
                        }
                        Err(StoreError::NoMajority) => refusals += 1,
                        Err(e) => return Err(format!("seed {seed}: write: {e}")),
                    }
                }
            }
            5..=7 => {
                // Replication respects connectivity.
                if let Some(m) = set.master_id() {
                    let slaves: Vec<String> = node_ids
                        .iter()
                        .filter(|n| **n != m && view.connected(n, &m))
                        .cloned()
                        .collect();
                    if !slaves.is_empty() {
                        let s = &slaves[rng.gen_range(0..slaves.len())];
                        match set.replicate_pull(s) {
                            Ok(_) => {}
                            Err(PullError::OplogGap) => set.full_resync(s),
                        }
                    }
                }
            }
            8 => {
                // Inject a partition; half the time isolate the master.
                if view.0.is_none() {
                    let isolate = rng.gen_bool(0.5);
                    let target = if isolate {
                        set.master_id().unwrap_or_else(|| node_ids[0].clone())
                    } else {
                        node_ids[rng.gen_range(0..node_ids.len())].clone()
                    };
                    let a: BTreeSet<String> = [target.clone()].into_iter().collect();
                    let b: BTreeSet<String> =
                        node_ids.iter().filter(|n| **n != target).cloned().collect();
                    view = Groups(Some(vec![a, b]));
                    if Some(&target) == set.master_id().as_ref() {
                        isolated_since = Some((target, t));
                    }
                }
            }
            9 => {
                if view.0.is_some() {
                    view = Groups(None);
                    isolated_since = None;
                }
            }
            _ => {}
        }

        // The CP refusal: once the lease has lapsed, the isolated master
        // refuses writes while eventual reads still succeed everywhere.
        if let Some((old_master, since)) = &isolated_since {
            if t >= since + lease + 1 {
                let probe = Document::new(format!("probe-{t}"), "actor", t).with("v", 0i64);
                match set.write(old_master, WriteOp::Insert(probe), "c", t) {
                    Err(StoreError::NoMajority) => refusals += 1,
                    Err(StoreError::NotMaster(_)) => {} // already fenced
                    other => {
                        return Err(format!(
                            "seed {seed}: isolated master accepted a write after lease: {other:?}"
                        ))
                    }
                }
            }
        }
        for n in &node_ids {
            set.read(n, "c", &Filter::all(), ReadPreference::SecondaryEventual, t)
                .map_err(|e| format!("seed {seed}: eventual read on {n} failed: {e}"))?;
        }

        // Majority-side election after silence.
        let master_healthy = set.believed_masters().iter().any(|m| {
            let reachable = node_ids.iter().filter(|n| view.connected(n, m)).count();
            reachable >= set.majority()
        });
        if !master_healthy {
            let silent = node_ids.iter().any(|n| {
                last_master_seen
                    .get(n)
                    .map_or(t > election_timeout, |c| t.saturating_sub(*c) > election_timeout)
            });
            if silent {
                let _ = set.elect_master(&view, t);
            }
        }

        // Durability marking under the current term.
        if let Some(m) = set.master_id() {
            let term = set.node(&m).unwrap().term;
            let committed = set.committed_seq();
            for (i, (ack_term, seq, ..)) in acks.iter().enumerate() {
                if *ack_term == term && *seq <= committed {
                    durable.insert(i);
                }
            }
        }
    }

    // Heal and quiesce: convergence with zero committed-write loss.
    view = Groups(None);
    let mut t = ticks;
    for _ in 0..200 {
        t += 1;
        set.heartbeat_round(&view, t);
        let Some(m) = set.master_id() else {
            let _ = set.elect_master(&view, t);
            continue;
        };
        let mut progressed = false;
        for n in &node_ids {
            if *n == m {
                continue;
            }
            match set.replicate_pull(n) {
                Ok(0) => {}
                Ok(_) => progressed = true,
                Err(PullError::OplogGap) => {
                    set.full_resync(n);
                    progressed = true;
                }
            }
        }
        if !progressed {
            break;
        }
    }
    if !set.converged() {
        return Err(format!("seed {seed}: no convergence after heal"));
    }
    let master = set.master_id().unwrap();
    for &i in &durable {
        let (_, seq, id, image) = &acks[i];
        let current = set.key_lookup(&master, "c", id);
        let matches = match image {
            Some(doc) => current.as_ref().map(|c| c.fields == doc.fields).unwrap_or(false),
            None => current.is_none(),
        };
        let overwritten = acks
            .iter()
            .filter(|(_, s2, id2, _)| id2 == id && s2 > seq)
            .any(|(.., img)| match img {
                Some(doc) => current.as_ref().map(|c| c.fields == doc.fields).unwrap_or(false),
                None => current.is_none(),
            });
        if !matches && !overwritten {
            return Err(format!("seed {seed}: committed write seq {seq} to {id} lost"));
        }
    }
    let _ = refusals;
    Ok(())
}

#[test]
fn criterion_2_cp_partitions() {
    let failures: Vec<String> = run_trials(0xC9, 200, cp_trial)
        .into_iter()
        .filter_map(|r| r.err())
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
    pass(2, "CP refusal, availability of eventual reads, zero committed-write loss");
}

// ---------------------------------------------------------------------
// 3. Privacy
// ---------------------------------------------------------------------

#[test]
fn criterion_3_privacy() {
    let started = Instant::now();
    // 200 worlds x 50 fuzzed queries = 10^4 taint-scanned responses.
    let failures: Vec<String> = run_trials(0x9A11CE, 200, |seed| privacy_trial(seed, 50))
        .into_iter()
        .filter_map(|r| r.err())
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 120, "suite took {elapsed:?}, budget 120s");
    pass(3, "10^4 fuzzed queries, zero unshared or confidential fields leaked");
}

// ---------------------------------------------------------------------
// 4. Routing
// ---------------------------------------------------------------------

fn random_key(rng: &mut ChaCha8Rng) -> ShardKey {
    ShardKey::new(
        format!("a{:03}", rng.gen_range(0..600)),
        format!("c/{:03}", rng.gen_range(0..100)),
    )
}

fn routing_trial(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shard_ids: Vec<String> = (0..rng.gen_range(2..5usize))
        .map(|i| format!("shard-{i}"))
        .collect();
    let mut shards = ShardMap::new();
    for sid in &shard_ids {
        shards.insert(
            sid.clone(),
            ReplicaSet::bootstrap(
                sid,
                (0..3).map(|i| format!("{sid}-{i}")).collect(),
                StoreConfig::default(),
            ),
        );
    }
    let mut fabric = Fabric::new(
        ["cfg-0".into(), "cfg-1".into(), "cfg-2".into()],
        &shard_ids,
        64,
    );

    // Build a fuzzed map through real splits and migrations.
    for step in 0..rng.gen_range(10..60u64) {
        if rng.gen_bool(0.6) {
            let _ = fabric.split_chunk(&random_key(&mut rng), &FullMesh, "frontend", step);
        } else {
            let map = fabric.group.lookup_metadata(&FullMesh, "frontend").unwrap();
            let idx = rng.gen_range(0..map.chunks.len());
            let to = &shard_ids[rng.gen_range(0..shard_ids.len())];
            let _ = fabric.migrate_chunk(&mut shards, idx, to, &FullMesh, "frontend", step);
        }
    }
    let map = fabric.group.lookup_metadata(&FullMesh, "frontend").unwrap();
    map.validate().map_err(|e| format!("seed {seed}: {e}"))?;

    // The pure cache lookup agrees with the linear-scan oracle.
    let router = Router::new(map.clone());
    for _ in 0..100 {
        let key = random_key(&mut rng);
        let oracle = map
            .chunks
            .iter()
            .find(|c| c.lo.le_key(&key) && c.hi.gt_key(&key))
            .map(|c| c.shard.clone())
            .ok_or_else(|| format!("seed {seed}: no covering chunk"))?;
        if router.route(&key) != oracle {
            return Err(format!("seed {seed}: route mismatch for {key}"));
        }
    }

    // Stale cache across a migration: correct after exactly one refresh.
    let mut stale = Router::new(map.clone());
    let movable: Vec<usize> = map
        .chunks
        .iter()
        .enumerate()
        .filter(|(_, c)| c.pinned_to.is_none())
        .map(|(i, _)| i)
        .collect();
    if !movable.is_empty() {
        let idx = movable[rng.gen_range(0..movable.len())];
        let from_shard = map.chunks[idx].shard.clone();
        let to = shard_ids
            .iter()
            .find(|s| **s != from_shard)
            .cloned()
            .unwrap_or_else(|| from_shard.clone());
        let probe = match (&map.chunks[idx].lo, &map.chunks[idx].hi) {
            (dclp_core::fabric::KeyBound::Key(k), _) => k.clone(),
            (dclp_core::fabric::KeyBound::NegInf, _) => ShardKey::new("", ""),
            _ => unreachable!(),
        };
        fabric
            .migrate_chunk(&mut shards, idx, &to, &FullMesh, "frontend", 1_000)
            .map_err(|e| format!("seed {seed}: migrate: {e}"))?;
        let v_before = stale.cache_version();
        let resolved = stale
            .route_checked(&probe, &mut fabric, &FullMesh, "frontend")
            .map_err(|e| format!("seed {seed}: {e}"))?;
        let fresh = fabric.group.lookup_metadata(&FullMesh, "frontend").unwrap();
        let oracle = fresh
            .chunks
            .iter()
            .find(|c| c.lo.le_key(&probe) && c.hi.gt_key(&probe))
            .map(|c| c.shard.clone())
            .unwrap();
        if resolved != oracle {
            return Err(format!("seed {seed}: stale-cache route wrong"));
        }
        if stale.cache_version() < v_before {
            return Err(format!("seed {seed}: cache went backwards"));
        }
    }
    Ok(())
}

#[test]
fn criterion_4_routing_oracle() {
    let failures: Vec<String> = run_trials(0x40D7E, 100, routing_trial)
        .into_iter()
        .filter_map(|r| r.err())
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
    pass(4, "route agrees with the linear-scan oracle, stale caches recover");
}

// ---------------------------------------------------------------------
// 5. Balancing
// ---------------------------------------------------------------------

fn balance_trial(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_shards = rng.gen_range(2..=8usize);
    let shard_ids: Vec<String> = (0..n_shards).map(|i| format!("shard-{i}")).collect();
    let mut shards = ShardMap::new();
    for sid in &shard_ids {
        shards.insert(
            sid.clone(),
            ReplicaSet::bootstrap(
                sid,
                (0..3).map(|i| format!("{sid}-{i}")).collect(),
                StoreConfig::default(),
            ),
        );
    }
    let mut fabric = Fabric::new(
        ["cfg-0".into(), "cfg-1".into(), "cfg-2".into()],
        &shard_ids,
        64,
    );
    // Carve chunks and scatter them (some pinned).
    let n_chunks = rng.gen_range(2..30usize);
    for i in 1..n_chunks {
        fabric
            .split_chunk(&ShardKey::new(format!("k{i:03}"), ""), &FullMesh, "frontend", 0)
            .map_err(|e| format!("seed {seed}: split: {e}"))?;
    }
    let map = fabric.group.lookup_metadata(&FullMesh, "frontend").unwrap();
    let mut scattered = map.clone();
    for c in scattered.chunks.iter_mut() {
        c.shard = shard_ids[rng.gen_range(0..n_shards)].clone();
        if rng.gen_bool(0.3) {
            c.pinned_to = Some(c.shard.clone());
        }
    }
    scattered.version += 1;
    fabric
        .group
        .commit_metadata(&scattered, &FullMesh, "frontend", 0)
        .map_err(|e| format!("seed {seed}: commit: {e}"))?;
    // Ownership must follow the scattered map before balancing.
    let refreshed = fabric.group.lookup_metadata(&FullMesh, "frontend").unwrap();
    for sid in &shard_ids {
        fabric.ownership.get_mut(sid).unwrap().ranges = refreshed.ranges_of(sid);
        fabric.ownership.get_mut(sid).unwrap().version = refreshed.version;
    }

    let pinned_before: Vec<(String, String)> = refreshed
        .chunks
        .iter()
        .filter(|c| c.pinned_to.is_some())
        .map(|c| (format!("{}-{}", c.lo, c.hi), c.shard.clone()))
        .collect();
    let total_unpinned = refreshed.chunks.iter().filter(|c| c.pinned_to.is_none()).count();

    let moved = fabric.balance_round(&mut shards, &FullMesh, "frontend", 1);
    if moved.len() > total_unpinned {
        return Err(format!(
            "seed {seed}: {} migrations for {total_unpinned} unpinned chunks",
            moved.len()
        ));
    }

    let after = fabric.group.lookup_metadata(&FullMesh, "frontend").unwrap();
    after.validate().map_err(|e| format!("seed {seed}: {e}"))?;
    let mut counts: BTreeMap<&String, u64> = shard_ids.iter().map(|s| (s, 0)).collect();
    for c in &after.chunks {
        if c.pinned_to.is_none() {
            *counts.get_mut(&c.shard).unwrap() += 1;
        }
    }
    let max = counts.values().max().unwrap();
    let min = counts.values().min().unwrap();
    if max - min > 1 {
        return Err(format!("seed {seed}: spread {} after one round", max - min));
    }
    let pinned_after: Vec<(String, String)> = after
        .chunks
        .iter()
        .filter(|c| c.pinned_to.is_some())
        .map(|c| (format!("{}-{}", c.lo, c.hi), c.shard.clone()))
        .collect();
    if pinned_before != pinned_after {
        return Err(format!("seed {seed}: a pinned chunk moved"));
    }
    Ok(())
}

#[test]
fn criterion_5_balancing() {
    let failures: Vec<String> = run_trials(0xBA1, 300, balance_trial)
        .into_iter()
        .filter_map(|r| r.err())
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
    pass(5, "one balance round reaches spread <= 1, pinned chunks never move");
}

// ---------------------------------------------------------------------
// 6. Config majority
// ---------------------------------------------------------------------

fn config_majority_subsets() -> Result<(), String> {
    use dclp_core::fabric::{ChunkMap, ConfigGroup, FabricError};
    struct Reach(BTreeSet<String>);
    impl Connectivity for Reach {
        fn connected(&self, _a: &str, b: &str) -> bool {
            self.0.contains(b)
        }
    }
    let ids = ["cfg-0", "cfg-1", "cfg-2"];
    for mask in 0u8..8 {
        let reachable: BTreeSet<String> = ids
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, s)| s.to_string())
            .collect();
        let n = reachable.len();
        let view = Reach(reachable);
        let mut g = ConfigGroup::new(
            ids.map(String::from),
            ChunkMap::initial("shard-a".into()),
        );
        let next = {
            let mut m = ChunkMap::initial("shard-a".into());
            m.version = 2;
            m
        };
        let result = g.commit_metadata(&next, &view, "committer", 0);
        match (n >= 2, result) {
            (true, Ok(2)) => {}
            (false, Err(FabricError::ConfigUnavailable)) => {
                if g.versions().values().any(|&v| v != 1) {
                    return Err(format!("mask {mask}: failed commit stored state"));
                }
            }
            (want, got) => return Err(format!("mask {mask}: want success={want}, got {got:?}")),
        }
    }
    Ok(())
}

fn config_race_trial(seed: u64) -> Result<(), String> {
    use dclp_core::fabric::ChunkMap;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = dclp_core::fabric::ConfigGroup::new(
        ["cfg-0".into(), "cfg-1".into(), "cfg-2".into()],
        ChunkMap::initial("shard-a".into()),
    );
    let map_a = ChunkMap::initial("shard-a".into())
        .split_at(&ShardKey::new("a", ""))
        .unwrap();
    let map_b = ChunkMap::initial("shard-a".into())
        .split_at(&ShardKey::new("b", ""))
        .unwrap();

    // Interleave the two committers' promise phases in a random order.
    let mut steps: Vec<(usize, usize)> = Vec::new(); // (committer, server)
    let mut order_a = vec![0usize, 1, 2];
    let mut order_b = vec![0usize, 1, 2];
    for i in (1..3).rev() {
        order_a.swap(i, rng.gen_range(0..=i));
        order_b.swap(i, rng.gen_range(0..=i));
    }
    let mut ia = 0;
    let mut ib = 0;
    while ia < 3 || ib < 3 {
        if ib >= 3 || (ia < 3 && rng.gen_bool(0.5)) {
            steps.push((0, order_a[ia]));
            ia += 1;
        } else {
            steps.push((1, order_b[ib]));
            ib += 1;
        }
    }
    let mut promises = [0usize; 2];
    for (committer, server) in steps {
        let name = if committer == 0 { "committer-a" } else { "committer-b" };
        if g.try_promise(server, 2, name, 0) {
            promises[committer] += 1;
        }
    }
    let winners: Vec<usize> = (0..2).filter(|&c| promises[c] >= 2).collect();
    if winners.len() != 1 {
        return Err(format!(
            "seed {seed}: promise counts {promises:?} produced {} winners",
            winners.len()
        ));
    }
    let winner = winners[0];
    let winner_map = if winner == 0 { &map_a } else { &map_b };
    for s in 0..3 {
        g.store(s, winner_map);
    }
    // The loser's full commit attempt conflicts.
    let loser_map = if winner == 0 { &map_b } else { &map_a };
    match g.commit_metadata(loser_map, &FullMesh, "loser", 1) {
        Err(dclp_core::fabric::FabricError::VersionConflict) => {}
        other => return Err(format!("seed {seed}: loser got {other:?}")),
    }
    let final_map = g.lookup_metadata(&FullMesh, "reader").unwrap();
    if final_map != *winner_map {
        return Err(format!("seed {seed}: final map is not the winner's"));
    }
    Ok(())
}

#[test]
fn criterion_6_config_majority() {
    config_majority_subsets().unwrap();
    let failures: Vec<String> = run_trials(0xC0F, 200, config_race_trial)
        .into_iter()
        .filter_map(|r| r.err())
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
    pass(6, "2-of-3 metadata commits, exactly one winner under races");
}

// ---------------------------------------------------------------------
// 7. Scenario-query oracles
// ---------------------------------------------------------------------

fn best_carrier_trial(seed: u64) -> Result<(), String> {
    let mut dw = build_domain_world(seed);
    let supplier = dw
        .world
        .actors
        .values()
        .find(|a| a.role == dclp_core::workload::Role::Supplier)
        .map(|a| a.actor_id.clone())
        .ok_or("no supplier")?;
    let result = dw.world.query(&supplier, "best_carrier", FieldTree::new(), 5);

    // O(n^2) dominance oracle over the known offers.
    let surviving: Vec<&(String, i64, i64)> = dw
        .offers
        .iter()
        .filter(|a| {
            !dw.offers
                .iter()
                .any(|b| b.1 <= a.1 && b.2 <= a.2 && (b.1 < a.1 || b.2 < a.2))
        })
        .collect();

    match result {
        Err(dclp_core::overlay::OverlayError::Query(
            dclp_core::workload::QueryError::NoOffers,
        )) => {
            if !dw.offers.is_empty() {
                return Err(format!("seed {seed}: offers exist but NoOffers"));
            }
            Ok(())
        }
        Ok(resp) => {
            let ranking = resp
                .payload
                .get("ranking")
                .and_then(|v| v.as_list())
                .ok_or("no ranking")?;
            let mut got: Vec<String> = ranking
                .iter()
                .map(|e| {
                    get_path(e.as_tree().unwrap(), "carrier")
                        .unwrap()
                        .as_str()
                        .unwrap()
                        .to_string()
                })
                .collect();
            let ordered = got.clone();
            got.sort();
            let mut expected: Vec<String> = surviving.iter().map(|o| o.0.clone()).collect();
            expected.sort();
            if got != expected {
                return Err(format!("seed {seed}: frontier {got:?} != oracle {expected:?}"));
            }
            // Order check: normalized score ascending, computed in floats
            // as an independent route.
            let p_max = dw.offers.iter().map(|o| o.1).max().unwrap_or(1) as f64;
            let d_max = dw.offers.iter().map(|o| o.2).max().unwrap_or(1) as f64;
            let score = |c: &String| {
                let o = dw.offers.iter().find(|o| &o.0 == c).unwrap();
                o.1 as f64 / p_max + o.2 as f64 / d_max
            };
            for w in ordered.windows(2) {
                if score(&w[0]) > score(&w[1]) + 1e-9 {
                    return Err(format!("seed {seed}: ranking not score-ordered"));
                }
            }
            Ok(())
        }
        Err(e) => Err(format!("seed {seed}: {e}")),
    }
}

fn supplier_stock_trial(seed: u64) -> Result<(), String> {
    let mut dw = build_domain_world(seed);
    let product =
        dw.products[ChaCha8Rng::seed_from_u64(seed ^ 1).gen_range(0..dw.products.len())].clone();
    let mut params = FieldTree::new();
    set_path(&mut params, "product_id", FieldValue::Str(product.clone()));
    let resp = dw
        .world
        .query("hospital-1", "supplier_with_stock", params, 5)
        .map_err(|e| format!("seed {seed}: {e}"))?;

    // Exhaustive oracle over (supplier, carrier) pairs.
    let min_duration = dw.offers.iter().map(|o| o.2).min().unwrap_or(0);
    let mut best: Option<(i64, String)> = None;
    for (supplier, p, qty) in &dw.stock {
        if p != &product || *qty <= 0 {
            continue;
        }
        let lead = dw.lead_times[&(supplier.clone(), product.clone())];
        let candidate = (lead + min_duration, supplier.clone());
        best = Some(match best {
            None => candidate,
            Some(cur) => {
                if candidate.0 < cur.0 || (candidate.0 == cur.0 && candidate.1 < cur.1) {
                    candidate
                } else {
                    cur
                }
            }
        });
    }
    let found = get_path(&resp.payload, "found").and_then(|v| match v {
        FieldValue::Bool(b) => Some(*b),
        _ => None,
    });
    match (best, found) {
        (None, Some(false)) => Ok(()),
        (Some((d, s)), Some(true)) => {
            let got_s = get_path(&resp.payload, "supplier").unwrap().as_str().unwrap();
            let got_d = get_path(&resp.payload, "deliverable_in").unwrap().as_int().unwrap();
            if got_s != s || got_d != d {
                return Err(format!("seed {seed}: got ({got_s},{got_d}), oracle ({s},{d})"));
            }
            // Never a supplier with zero shared stock.
            let qty = dw
                .stock
                .iter()
                .find(|(sup, p, _)| sup == got_s && p == &product)
                .map(|(_, _, q)| *q)
                .unwrap_or(0);
            if qty <= 0 {
                return Err(format!("seed {seed}: returned supplier without stock"));
            }
            Ok(())
        }
        (b, f) => Err(format!("seed {seed}: oracle {b:?} vs found {f:?}")),
    }
}

fn forecast_trial(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ticks = rng.gen_range(120..280u64);
    let gen_cfg = GeneratorConfig {
        seed,
        rows: vec![
            ProfileRow {
                family: "pharma".into(),
                subfamily: "antibiotics".into(),
                annual_qty: rng.gen_range(2_000..12_000),
            },
            ProfileRow {
                family: "consumables".into(),
                subfamily: "gloves".into(),
                annual_qty: rng.gen_range(1_000..6_000),
            },
        ],
        ..GeneratorConfig::default()
    };
    let topo = TopologyConfig::default_desk(seed);
    let mut cluster =
        run_cluster(topo, Some(gen_cfg.clone())).map_err(|e| format!("seed {seed}: {e}"))?;
    cluster.advance(ticks);
    // Freeze the workload and let the pipeline drain.
    cluster.detach_generator();
    cluster.advance(60);

    let supplier = if rng.gen_bool(0.5) { "supplier-1" } else { "supplier-2" };
    let resp = cluster
        .query(supplier, "demand_forecast_input", FieldTree::new())
        .map_err(|e| format!("seed {seed}: {e}"))?;

    // Ledger oracle: regenerate the exact stream the cluster consumed
    // (ticks 0..=ticks) and recompute the sums from final document states.
    let events = generate_stream(&gen_cfg, ticks + 1);
    let mut final_docs: BTreeMap<(String, String), Document> = BTreeMap::new();
    for e in &events {
        final_docs.insert((e.collection.clone(), e.doc.id.clone()), e.doc.clone());
    }
    let mut catalog: BTreeMap<String, String> = BTreeMap::new();
    for ((coll, _), doc) in &final_docs {
        if coll == "products" && doc.owner == supplier {
            let pid = get_path(&doc.fields, "product_id").unwrap().as_str().unwrap();
            let fam = get_path(&doc.fields, "family").unwrap().as_str().unwrap();
            let sub = get_path(&doc.fields, "subfamily").unwrap().as_str().unwrap();
            catalog.insert(pid.to_string(), format!("{fam}/{sub}"));
        }
    }
    let mut expected: BTreeMap<String, BTreeMap<String, i64>> = BTreeMap::new();
    for ((coll, _), doc) in &final_docs {
        if coll != "orders" || doc.visibility == dclp_core::Visibility::Confidential {
            continue;
        }
        if get_path(&doc.fields, "supplier").and_then(|v| v.as_str()) != Some(supplier) {
            continue;
        }
        let placed = get_path(&doc.fields, "placed_at").unwrap().as_int().unwrap();
        let bucket = format!("{:06}", placed as u64 / 100);
        let Some(FieldValue::List(lines)) = doc.fields.get("lines") else { continue };
        for line in lines {
            let t = line.as_tree().unwrap();
            let pid = t.get("product_id").unwrap().as_str().unwrap();
            let qty = t.get("qty").unwrap().as_int().unwrap();
            if let Some(group) = catalog.get(pid) {
                *expected
                    .entry(group.clone())
                    .or_default()
                    .entry(bucket.clone())
                    .or_insert(0) += qty;
            }
        }
    }

    let got_series = resp
        .payload
        .get("series")
        .and_then(|v| v.as_tree())
        .ok_or("no series")?;
    let mut got: BTreeMap<String, BTreeMap<String, i64>> = BTreeMap::new();
    for (group, buckets) in got_series {
        let mut b = BTreeMap::new();
        for (k, v) in buckets.as_tree().unwrap() {
            b.insert(k.clone(), v.as_int().unwrap());
        }
        got.insert(group.clone(), b);
    }
    if got != expected {
        return Err(format!(
            "seed {seed}: forecast mismatch\n got: {got:?}\n want: {expected:?}"
        ));
    }
    Ok(())
}

#[test]
fn criterion_7_scenario_query_oracles() {
    let failures: Vec<String> = run_trials(0xB5C, 500, best_carrier_trial)
        .into_iter()
        .filter_map(|r| r.err())
        .collect();
    assert!(failures.is_empty(), "best_carrier: {failures:?}");

    let failures: Vec<String> = run_trials(0x57C, 500, supplier_stock_trial)
        .into_iter()
        .filter_map(|r| r.err())
        .collect();
    assert!(failures.is_empty(), "supplier_with_stock: {failures:?}");

    let failures: Vec<String> = run_trials(0xF0C, 500, forecast_trial)
        .into_iter()
        .filter_map(|r| r.err())
        .collect();
    assert!(failures.is_empty(), "forecast: {failures:?}");
    pass(7, "best_carrier, supplier_with_stock and forecast match their oracles");
}

// ---------------------------------------------------------------------
// 8. Determinism
// ---------------------------------------------------------------------

#[test]
fn criterion_8_determinism() {
    let cfg = GeneratorConfig {
        seed: 42,
        rows: vec![
            ProfileRow {
                family: "pharma".into(),
                subfamily: "antibiotics".into(),
                annual_qty: 8_000,
            },
            ProfileRow {
                family: "consumables".into(),
                subfamily: "gloves".into(),
                annual_qty: 3_000,
            },
        ],
        ..GeneratorConfig::default()
    };
    let a = ledger(&generate_stream(&cfg, 10_000));
    let b = ledger(&generate_stream(&cfg, 10_000));
    assert!(!a.is_empty());
    assert_eq!(a, b, "ledgers diverged across runs");

    let script = ScenarioScript::parse(
        "advance 60\npartition shard-hospital-1-0 | *\nadvance 40\nheal\nadvance 120\nassert-converged all\n",
    )
    .unwrap();
    let run = || {
        let (report, results) =
            run_scenario(&script, TopologyConfig::default_desk(42), Some(cfg.clone())).unwrap();
        (report.to_csv(), results)
    };
    let (csv_a, res_a) = run();
    let (csv_b, res_b) = run();
    assert_eq!(csv_a, csv_b, "metrics CSV diverged across runs");
    assert_eq!(res_a, res_b);
    for r in &res_a {
        assert!(r.pass, "step {}: {}", r.step, r.detail);
    }
    pass(8, "byte-identical ledgers and metrics across runs");
}

// ---------------------------------------------------------------------
// 9. Freshness
// ---------------------------------------------------------------------

#[test]
fn criterion_9_freshness() {
    // Planted expired lot flags every query touching it.
    let gen_cfg = GeneratorConfig {
        seed: 11,
        rows: vec![ProfileRow {
            family: "pharma".into(),
            subfamily: "antibiotics".into(),
            annual_qty: 8_000,
        }],
        plant_expired_lot: true,
        ..GeneratorConfig::default()
    };
    let (_, _, lot_id) = gen_cfg.planted_lot().unwrap();
    let product_id = lot_id.split('/').nth(1).unwrap().to_string();
    let mut cluster = run_cluster(TopologyConfig::default_desk(11), Some(gen_cfg)).unwrap();
    cluster.advance(300);
    for _ in 0..10 {
        cluster.advance(40);
        let mut params = FieldTree::new();
        set_path(&mut params, "product_id", FieldValue::Str(product_id.clone()));
        let resp = cluster
            .query("hospital-1", "supplier_with_stock", params)
            .unwrap();
        assert!(
            resp.flags.contains("contains_obsolete"),
            "expired lot unflagged at tick {}",
            cluster.now
        );
    }

    // Propagation bound in steady state: any locally settled version is on
    // every live replica within update_period + the replication round.
    let topo = TopologyConfig::default_desk(12);
    let gen_cfg = GeneratorConfig {
        seed: 12,
        rows: vec![ProfileRow {
            family: "pharma".into(),
            subfamily: "antibiotics".into(),
            annual_qty: 9_000,
        }],
        ..GeneratorConfig::default()
    };
    let mut cluster = run_cluster(topo.clone(), Some(gen_cfg)).unwrap();
    cluster.advance(400);
    let window = topo.actor.iter().map(|a| a.update_period).max().unwrap()
        + topo.replication_period
        + 2 * topo.latency.dl
        + 1;
    for _ in 0..6 {
        cluster.advance(30);
        let now = cluster.now;
        for (actor_id, actor) in &cluster.actors {
            let shard_id = cluster.frontend.actor_shard(actor_id).unwrap().clone();
            let set = &cluster.shards[&shard_id];
            let contract = &cluster.frontend.contracts()[actor_id];
            for shared in &contract.share {
                let Some(local) = actor.local_store.get(&shared.collection) else { continue };
                for (id, local_doc) in local {
                    if local_doc.updated_at + window > now {
                        continue;
                    }
                    for node in set.node_ids() {
                        let copy_at = set
                            .key_lookup(&node, &shared.collection, id)
                            .map(|d| d.updated_at);
                        assert_eq!(
                            copy_at,
                            Some(local_doc.updated_at),
                            "{actor_id}/{}/{id} on {node} at tick {now}",
                            shared.collection
                        );
                    }
                }
            }
        }
    }
    assert_eq!(cluster.violations, Vec::<String>::new());
    pass(9, "expired lots flagged, staleness bounded by period + replication lag");
}

// ---------------------------------------------------------------------
// 10. End-to-end desk-scale run
// ---------------------------------------------------------------------

#[test]
fn criterion_10_end_to_end_desk_run() {
    let started = Instant::now();
    let gen_cfg = GeneratorConfig {
        seed: 1042,
        rows: vec![
            ProfileRow {
                family: "pharma".into(),
                subfamily: "antibiotics".into(),
                annual_qty: 8_000,
            },
            ProfileRow {
                family: "pharma".into(),
                subfamily: "analgesics".into(),
                annual_qty: 5_000,
            },
            ProfileRow {
                family: "consumables".into(),
                subfamily: "gloves".into(),
                annual_qty: 3_000,
            },
        ],
        ..GeneratorConfig::default()
    };
    let mut cluster = run_cluster(TopologyConfig::default_desk(1042), Some(gen_cfg)).unwrap();
    cluster.monitors_enabled = true;

    let mut hard_failures = Vec::new();
    let mut query_rounds = 0u32;
    for _ in 0..20 {
        cluster.advance(500);
        query_rounds += 1;
        for (actor, kind, outcome) in cluster.issue_scenario_queries() {
            if let Err(e) = outcome {
                hard_failures.push(format!("tick {}: {actor} {kind}: {e}", cluster.now));
            }
        }
    }
    assert_eq!(cluster.now, 10_000);
    assert_eq!(query_rounds, 20);
    assert!(hard_failures.is_empty(), "{hard_failures:?}");
    assert_eq!(cluster.violations, Vec::<String>::new(), "invariant monitors fired");
    assert!(
        cluster.metrics.generated_events > 10_000,
        "workload too thin: {} events",
        cluster.metrics.generated_events
    );
    assert!(cluster.frontend.stats.queries_handled >= 80);

    // The report's per-class byte counts partition total traffic.
    let report = cluster.report();
    let csv = report.to_csv();
    let grab = |k: &str| -> u64 {
        csv.lines()
            .find(|l| l.starts_with(&format!("traffic,{k},")))
            .and_then(|l| l.rsplit(',').next())
            .and_then(|v| v.parse().ok())
            .unwrap()
    };
    assert_eq!(
        grab("total_bytes"),
        grab("cl_bytes") + grab("dl_bytes") + grab("ul_bytes") + grab("el_bytes")
    );

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 300, "run took {elapsed:?}, budget 5 minutes");
    pass(10, "five actors, 10k ticks, all scenario queries, zero violations");
}
