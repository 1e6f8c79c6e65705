//! Shared fixtures for the integration and acceptance suites: randomized
//! taint-tagged actor worlds and the leak scanner.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dclp_core::doc::{set_path, Document, FieldTree, FieldValue};
use dclp_core::fabric::{Fabric, ShardMap};
use dclp_core::overlay::{Actor, AggregateResponse, Frontend, SharingContract};
use dclp_core::store::{FullMesh, ReplicaSet, StoreConfig};
use dclp_core::workload::Role;

pub const COLLECTIONS: [&str; 3] = ["alpha", "beta", "gamma"];
pub const PATHS: [&str; 6] = ["p0", "p1", "p2", "nest.q0", "nest.q1", "extra"];

/// Taint marker carried by every generated field value:
/// `taint|owner|collection|path` plus `|CONF` on confidential documents.
pub fn taint(owner: &str, collection: &str, path: &str, confidential: bool) -> String {
    let base = format!("taint|{owner}|{collection}|{path}");
    if confidential {
        format!("{base}|CONF")
    } else {
        base
    }
}

/// A self-contained overlay world: shards, fabric, frontend, actors.
pub struct FuzzWorld {
    pub fabric: Fabric,
    pub shards: ShardMap,
    pub frontend: Frontend,
    pub actors: BTreeMap<String, Actor>,
}

impl FuzzWorld {
    pub fn sync_all(&mut self, now: u64) {
        let ids: Vec<String> = self.actors.keys().cloned().collect();
        for id in ids {
            let actor = self.actors.get_mut(&id).unwrap();
            self.frontend
                .sync_update_link(actor, &mut self.fabric, &mut self.shards, &FullMesh, now)
                .expect("sync succeeds in a healthy world");
        }
    }

    pub fn query(
        &mut self,
        requester: &str,
        kind: &str,
        params: FieldTree,
        now: u64,
    ) -> Result<AggregateResponse, dclp_core::overlay::OverlayError> {
        let request = dclp_core::overlay::WireRequest {
            requester: requester.to_string(),
            kind: kind.to_string(),
            params,
        };
        self.frontend
            .handle_query(&request, &mut self.fabric, &mut self.shards, &FullMesh, now)
    }
}

/// Build a randomized population with random field-level contracts and
/// taint-tagged documents, registered and synced into real shards.
pub fn build_world(seed: u64) -> FuzzWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_actors = rng.gen_range(3..=6usize);
    let actor_ids: Vec<String> = (0..n_actors).map(|i| format!("actor-{i}")).collect();
    let shard_ids: Vec<String> = actor_ids.iter().map(|a| format!("shard-{a}")).collect();

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
    let mut frontend = Frontend::new("frontend", &mut fabric, seed);

    let roles = [Role::Hospital, Role::Supplier, Role::Carrier];
    let mut actors = BTreeMap::new();
    for (i, actor_id) in actor_ids.iter().enumerate() {
        let role = roles[rng.gen_range(0..roles.len())];
        let mut actor = Actor::new(actor_id, role, 10);

        // Random field-level contract over 1..=3 collections.
        let mut contract = SharingContract::new(actor_id);
        let n_colls = rng.gen_range(1..=COLLECTIONS.len());
        let mut colls: Vec<&str> = COLLECTIONS.to_vec();
        for _ in 0..n_colls {
            let c = colls.remove(rng.gen_range(0..colls.len()));
            let n_paths = rng.gen_range(1..=PATHS.len() - 1);
            let mut pool: Vec<&str> = PATHS.to_vec();
            let mut fields = Vec::new();
            for _ in 0..n_paths {
                fields.push(pool.remove(rng.gen_range(0..pool.len())));
            }
            contract = contract.with(c, &fields);
        }

        frontend
            .register_actor(
                &mut actor,
                contract.clone(),
                &shard_ids[i],
                &mut fabric,
                &mut shards,
                &FullMesh,
                0,
            )
            .expect("registration succeeds");

        // Local documents: taint every leaf; include unshared paths and the
        // occasional confidential document.
        for shared in &contract.share {
            let coll = shared.collection.clone();
            for d in 0..rng.gen_range(1..=5usize) {
                let confidential = rng.gen_bool(0.2);
                let mut doc = Document::new(format!("{actor_id}-{coll}-{d}"), actor_id, 0);
                if confidential {
                    doc = doc.confidential();
                }
                for path in PATHS {
                    if rng.gen_bool(0.8) {
                        set_path(
                            &mut doc.fields,
                            path,
                            FieldValue::Str(taint(actor_id, &coll, path, confidential)),
                        );
                    }
                }
                actor
                    .local_store
                    .entry(coll.clone())
                    .or_default()
                    .insert(doc.id.clone(), doc);
            }
        }
        actors.insert(actor_id.clone(), actor);
    }

    let mut world = FuzzWorld { fabric, shards, frontend, actors };
    world.sync_all(1);
    world
}

/// Scan a response payload for taint markers that should never have reached
/// this requester. Returns violation descriptions.
pub fn scan_for_leaks(
    requester: &str,
    payload: &FieldTree,
    contracts: &BTreeMap<String, SharingContract>,
) -> Vec<String> {
    let mut violations = Vec::new();
    fn walk(v: &FieldValue, out: &mut Vec<String>) {
        match v {
            FieldValue::Str(s) if s.starts_with("taint|") => out.push(s.clone()),
            FieldValue::List(l) => l.iter().for_each(|v| walk(v, out)),
            FieldValue::Tree(t) => t.values().for_each(|v| walk(v, out)),
            _ => {}
        }
    }
    let mut taints = Vec::new();
    for v in payload.values() {
        walk(v, &mut taints);
    }
    for t in taints {
        let parts: Vec<&str> = t.split('|').collect();
        let (owner, collection, path) = (parts[1], parts[2], parts[3]);
        if owner == requester {
            continue;
        }
        if parts.len() > 4 && parts[4] == "CONF" {
            violations.push(format!("confidential leak: {t} reached {requester}"));
            continue;
        }
        let shared = contracts
            .get(owner)
            .and_then(|c| c.paths_for(collection))
            .map(|paths| dclp_core::doc::path_is_covered(path, paths))
            .unwrap_or(false);
        if !shared {
            violations.push(format!("unshared path leak: {t} reached {requester}"));
        }
    }
    violations
}

/// Is this path shared by at least one actor for the collection?
pub fn shared_by_someone(
    contracts: &BTreeMap<String, SharingContract>,
    collection: &str,
    path: &str,
) -> bool {
    contracts.values().any(|c| {
        c.paths_for(collection)
            .is_some_and(|paths| dclp_core::doc::path_is_covered(path, paths))
    })
}

/// Random generic_filter parameters probing shared, unshared and metadata
/// paths. Returns the targeted collection alongside the params.
pub fn generic_filter_params(rng: &mut ChaCha8Rng, world: &FuzzWorld) -> (String, FieldTree) {
    let collection = COLLECTIONS[rng.gen_range(0..COLLECTIONS.len())].to_string();
    let mut params = FieldTree::new();
    set_path(&mut params, "collection", FieldValue::Str(collection.clone()));
    let mut preds = Vec::new();
    for _ in 0..rng.gen_range(0..3usize) {
        let path = if rng.gen_bool(0.2) {
            "owner".to_string()
        } else {
            PATHS[rng.gen_range(0..PATHS.len())].to_string()
        };
        let value: FieldValue = if rng.gen_bool(0.5) {
            let owners: Vec<&String> = world.actors.keys().collect();
            let owner = owners[rng.gen_range(0..owners.len())];
            FieldValue::Str(taint(owner, &collection, &path, false))
        } else {
            FieldValue::Str("nope".into())
        };
        let mut p = FieldTree::new();
        set_path(&mut p, "path", FieldValue::Str(path));
        set_path(
            &mut p,
            "cmp",
            FieldValue::Str(if rng.gen_bool(0.8) { "eq" } else { "ne" }.into()),
        );
        set_path(&mut p, "value", value);
        preds.push(FieldValue::Tree(p));
    }
    params.insert("predicates".into(), FieldValue::List(preds));
    (collection, params)
}

/// One privacy fuzz trial: a fresh taint-tagged world, `queries` fuzzed
/// queries, zero leaks, loud failures exactly when a predicate names a
/// path nobody shares.
pub fn privacy_trial(seed: u64, queries: usize) -> Result<(), String> {
    use dclp_core::overlay::OverlayError;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut world = build_world(seed);
    world
        .frontend
        .check_projection_soundness(&world.shards)
        .map_err(|e| format!("seed {seed}: projection: {e}"))?;

    let actor_ids: Vec<String> = world.actors.keys().cloned().collect();
    for q in 0..queries {
        let requester = actor_ids[rng.gen_range(0..actor_ids.len())].clone();
        let (collection, params) = generic_filter_params(&mut rng, &world);
        let must_violate = params
            .get("predicates")
            .and_then(|p| p.as_list())
            .map(|preds| {
                preds.iter().any(|p| {
                    let t = p.as_tree().unwrap();
                    let path = t.get("path").unwrap().as_str().unwrap();
                    path != "owner"
                        && !shared_by_someone(world.frontend.contracts(), &collection, path)
                })
            })
            .unwrap_or(false);

        let now = 2 + q as u64;
        match world.query(&requester, "generic_filter", params, now) {
            Ok(resp) => {
                if must_violate {
                    return Err(format!(
                        "seed {seed}: filter naming an unshared path succeeded silently"
                    ));
                }
                let leaks = scan_for_leaks(&requester, &resp.payload, world.frontend.contracts());
                if !leaks.is_empty() {
                    return Err(format!("seed {seed}: {leaks:?}"));
                }
            }
            Err(OverlayError::PolicyViolation(_)) => {
                if !must_violate {
                    return Err(format!(
                        "seed {seed}: spurious policy violation for shared paths"
                    ));
                }
            }
            Err(e) => return Err(format!("seed {seed}: unexpected error {e}")),
        }
    }
    Ok(())
}

/// A domain-shaped world: hospitals, suppliers with stock and catalogs,
/// carriers with offers — synced into real shards for oracle comparisons.
pub struct DomainWorld {
    pub world: FuzzWorld,
    pub offers: Vec<(String, i64, i64)>,
    pub stock: Vec<(String, String, i64)>,
    pub lead_times: BTreeMap<(String, String), i64>,
    pub products: Vec<String>,
}

pub fn build_domain_world(seed: u64) -> DomainWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_carriers = rng.gen_range(0..=8usize);
    let n_suppliers = rng.gen_range(1..=4usize);
    let n_products = rng.gen_range(1..=4usize);
    let products: Vec<String> = (0..n_products).map(|i| format!("prod-{i}")).collect();

    let mut actor_specs: Vec<(String, Role)> = vec![("hospital-1".into(), Role::Hospital)];
    for i in 1..=n_suppliers {
        actor_specs.push((format!("supplier-{i}"), Role::Supplier));
    }
    for i in 1..=n_carriers {
        actor_specs.push((format!("carrier-{i}"), Role::Carrier));
    }

    let mut shards = ShardMap::new();
    let shard_ids: Vec<String> = actor_specs.iter().map(|(a, _)| format!("shard-{a}")).collect();
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
    let mut frontend = Frontend::new("frontend", &mut fabric, seed);

    let mut actors = BTreeMap::new();
    let mut offers = Vec::new();
    let mut stock = Vec::new();
    let mut lead_times = BTreeMap::new();

    for (i, (actor_id, role)) in actor_specs.iter().enumerate() {
        let mut actor = Actor::new(actor_id, *role, 10);
        let contract = SharingContract::default_for_role(actor_id, *role);
        frontend
            .register_actor(
                &mut actor,
                contract,
                &shard_ids[i],
                &mut fabric,
                &mut shards,
                &FullMesh,
                0,
            )
            .expect("registration succeeds");

        match role {
            Role::Carrier => {
                let price = rng.gen_range(1..500i64);
                let duration = rng.gen_range(1..300i64);
                offers.push((actor_id.clone(), price, duration));
                let doc = Document::new(format!("{actor_id}/offer"), actor_id, 0)
                    .with("carrier", actor_id.as_str())
                    .with("price", price)
                    .with("duration", duration);
                actor
                    .local_store
                    .entry("offers".to_string())
                    .or_default()
                    .insert(doc.id.clone(), doc);
            }
            Role::Supplier => {
                for p in &products {
                    let lead = rng.gen_range(1..60i64);
                    lead_times.insert((actor_id.clone(), p.clone()), lead);
                    let cat = Document::new(format!("{actor_id}/{p}"), actor_id, 0)
                        .with("product_id", p.as_str())
                        .with("family", "fam")
                        .with("subfamily", "sub")
                        .with("lead_time", lead);
                    actor
                        .local_store
                        .entry("products".to_string())
                        .or_default()
                        .insert(cat.id.clone(), cat);

                    let qty = if rng.gen_bool(0.4) { 0 } else { rng.gen_range(0..200i64) };
                    stock.push((actor_id.clone(), p.clone(), qty));
                    let st = Document::new(format!("{actor_id}/{p}"), actor_id, 0)
                        .with("supplier", actor_id.as_str())
                        .with("product_id", p.as_str())
                        .with("qty_available", qty)
                        .with("location", "loc-1");
                    actor
                        .local_store
                        .entry("stock".to_string())
                        .or_default()
                        .insert(st.id.clone(), st);
                }
            }
            _ => {}
        }
        actors.insert(actor_id.clone(), actor);
    }

    let mut world = FuzzWorld { fabric, shards, frontend, actors };
    world.sync_all(1);
    DomainWorld { world, offers, stock, lead_times, products }
}
