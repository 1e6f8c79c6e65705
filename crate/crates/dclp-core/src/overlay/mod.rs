//! The trusted frontend: the single mediation point between actors and the
//! sharded store. It registers actors with their sharing contracts, feeds
//! shards from actor-local stores over the update link, answers queries by
//! fetching through the data link and redacting everything to contract
//! scope, and stubs external web data behind a cache.
//!
//! Actors hold no shard endpoints; every cross-actor byte flows through the
//! functions in this module, which is where the privacy guarantee lives.

mod contract;
mod external;
pub mod wire;

pub use contract::{SharedCollection, SharingContract};
pub use external::{ExternalProvider, RoadTrafficStub, WeatherStub};
pub use wire::{WireRequest, WireResponse};

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::doc::{leaf_paths, path_is_covered, project_paths, Document, FieldTree, FieldValue, Visibility};
use crate::fabric::{Fabric, FabricError, Router, ShardId, ShardKey, ShardMap};
use crate::store::{Cmp, Connectivity, Filter, Predicate, ReadPreference, StoreError, WriteOp};
use crate::workload::{evaluate, expire_check, Event, QueryError, QueryKind, Role};
use crate::Tick;

/// Owner id of cluster-level system collections (external data cache).
/// Sorts after every ordinary actor id, and its chunks stay unpinned so the
/// balancer has something to move.
pub const SYSTEM_ACTOR: &str = "~sys";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OverlayError {
    #[error("actor {0} is already registered")]
    DuplicateActor(String),
    #[error("sharing contract is empty; sharing is the condition of membership")]
    EmptyContract,
    #[error("actor {0} is not registered")]
    UnknownActor(String),
    #[error("unknown query kind {0}")]
    UnknownQueryKind(String),
    #[error("policy violation: {0}")]
    PolicyViolation(String),
    #[error("shard write refused; sync will retry next period")]
    ShardWriteRefused,
    #[error("no provider serves external kind {0}")]
    NoProvider(String),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Query(#[from] QueryError),
}

/// A supply-chain participant: private local store plus platform identity.
/// Actors never see shards or other actors; the frontend does all talking.
#[derive(Debug, Clone)]
pub struct Actor {
    pub actor_id: String,
    pub role: Role,
    pub update_period: Tick,
    pub shard: Option<ShardId>,
    pub local_store: BTreeMap<String, BTreeMap<String, Document>>,
    pub last_synced: Option<Tick>,
}

impl Actor {
    pub fn new(actor_id: impl Into<String>, role: Role, update_period: Tick) -> Self {
        Actor {
            actor_id: actor_id.into(),
            role,
            update_period,
            shard: None,
            local_store: BTreeMap::new(),
            last_synced: None,
        }
    }

    /// Apply one generated event to the local store.
    pub fn apply_event(&mut self, event: &Event) {
        debug_assert_eq!(event.doc.owner, self.actor_id);
        let coll = self.local_store.entry(event.collection.clone()).or_default();
        match coll.get(&event.doc.id) {
            Some(prev) if prev.updated_at > event.doc.updated_at => {}
            _ => {
                coll.insert(event.doc.id.clone(), event.doc.clone());
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FrontendStats {
    pub dl_bytes: u64,
    pub cl_bytes: u64,
    pub ul_bytes: u64,
    pub el_bytes: u64,
    pub el_provider_calls: u64,
    pub el_cache_hits: u64,
    pub queries_handled: u64,
    pub policy_violations: u64,
}

#[derive(Debug, Clone)]
struct ActorMeta {
    role: Role,
    shard: ShardId,
    update_period: Tick,
}

/// The aggregated answer to one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregateResponse {
    pub payload: FieldTree,
    pub provenance: Vec<(String, u64)>,
    pub max_staleness: Tick,
    pub flags: BTreeSet<String>,
}

impl AggregateResponse {
    pub fn to_wire(&self) -> WireResponse {
        WireResponse {
            payload: self.payload.clone(),
            provenance: self.provenance.clone(),
            max_staleness: self.max_staleness,
            flags: self.flags.iter().cloned().collect(),
        }
    }
}

/// Fill staleness and obsolescence annotations from the documents the
/// answer was derived from.
pub fn annotate_staleness(
    response: &mut AggregateResponse,
    used: &[Document],
    now: Tick,
    obsolete_ttl: Tick,
) {
    let oldest = used.iter().map(|d| d.updated_at).min();
    response.max_staleness = oldest.map_or(0, |t| now.saturating_sub(t));
    if used
        .iter()
        .any(|d| expire_check(d, now, obsolete_ttl) == crate::workload::Freshness::Obsolete)
    {
        response.flags.insert("contains_obsolete".to_string());
    }
}

/// Keep exactly what the owner's contract shares. The requester's own
/// documents pass untouched; other actors' confidential documents vanish.
pub fn redact(
    doc: &Document,
    collection: &str,
    requester: &str,
    contracts: &BTreeMap<String, SharingContract>,
) -> Option<Document> {
    if doc.owner == requester {
        return Some(doc.clone());
    }
    if doc.visibility == Visibility::Confidential {
        return None;
    }
    let paths = contracts.get(&doc.owner)?.paths_for(collection)?;
    let mut out = doc.clone();
    out.fields = project_paths(&doc.fields, paths);
    Some(out)
}

/// The trusted third party.
pub struct Frontend {
    pub node_id: String,
    actors: BTreeMap<String, ActorMeta>,
    contracts: BTreeMap<String, SharingContract>,
    router: Router,
    providers: Vec<Box<dyn ExternalProvider>>,
    pub external_ttl: Tick,
    pub obsolete_ttl: Tick,
    pub stats: FrontendStats,
}

impl Frontend {
    pub fn new(node_id: impl Into<String>, fabric: &mut Fabric, seed: u64) -> Self {
        let map = fabric
            .group
            .lookup_metadata(&crate::store::FullMesh, "frontend")
            .expect("fresh config group is reachable");
        Frontend {
            node_id: node_id.into(),
            actors: BTreeMap::new(),
            contracts: BTreeMap::new(),
            router: Router::new(map),
            providers: vec![
                Box::new(RoadTrafficStub { seed }),
                Box::new(WeatherStub { seed: seed.wrapping_add(1) }),
            ],
            external_ttl: 20,
            obsolete_ttl: 500,
            stats: FrontendStats::default(),
        }
    }

    pub fn contracts(&self) -> &BTreeMap<String, SharingContract> {
        &self.contracts
    }

    pub fn is_registered(&self, actor_id: &str) -> bool {
        self.actors.contains_key(actor_id)
    }

    pub fn actor_role(&self, actor_id: &str) -> Option<Role> {
        self.actors.get(actor_id).map(|m| m.role)
    }

    pub fn actor_shard(&self, actor_id: &str) -> Option<&ShardId> {
        self.actors.get(actor_id).map(|m| &m.shard)
    }

    pub fn update_period(&self, actor_id: &str) -> Option<Tick> {
        self.actors.get(actor_id).map(|m| m.update_period)
    }

    /// Admit an actor: record its contract, assign the shard and pin the
    /// actor's key band there.
    pub fn register_actor(
        &mut self,
        actor: &mut Actor,
        sharing: SharingContract,
        shard_id: &str,
        fabric: &mut Fabric,
        shards: &mut ShardMap,
        view: &dyn Connectivity,
        now: Tick,
    ) -> Result<ShardId, OverlayError> {
        if self.actors.contains_key(&actor.actor_id) {
            return Err(OverlayError::DuplicateActor(actor.actor_id.clone()));
        }
        if sharing.is_empty() {
            return Err(OverlayError::EmptyContract);
        }
        fabric.pin_actor(shards, &actor.actor_id, shard_id, view, &self.node_id, now)?;
        self.actors.insert(
            actor.actor_id.clone(),
            ActorMeta {
                role: actor.role,
                shard: shard_id.to_string(),
                update_period: actor.update_period,
            },
        );
        self.contracts.insert(actor.actor_id.clone(), sharing);
        actor.shard = Some(shard_id.to_string());
        self.refresh_router(fabric, view)?;
        Ok(shard_id.to_string())
    }

    fn refresh_router(
        &mut self,
        fabric: &mut Fabric,
        view: &dyn Connectivity,
    ) -> Result<(), OverlayError> {
        self.router.cached_map = fabric.group.lookup_metadata(view, &self.node_id)?;
        self.stats.cl_bytes += self.router.cached_map.dump().len() as u64;
        Ok(())
    }

    /// Push the actor's locally modified documents into its shard,
    /// projected to the contract's shared field paths. Returns how many
    /// documents were pushed.
    pub fn sync_update_link(
        &mut self,
        actor: &mut Actor,
        fabric: &mut Fabric,
        shards: &mut ShardMap,
        view: &dyn Connectivity,
        now: Tick,
    ) -> Result<usize, OverlayError> {
        if !self.actors.contains_key(&actor.actor_id) {
            return Err(OverlayError::UnknownActor(actor.actor_id.clone()));
        }
        let sharing = self.contracts[&actor.actor_id].clone();
        let cutoff = actor.last_synced;

        let mut pushed = 0usize;
        for shared in &sharing.share {
            let Some(coll) = actor.local_store.get(&shared.collection) else {
                continue;
            };
            let due: Vec<Document> = coll
                .values()
                .filter(|d| cutoff.map_or(true, |c| d.updated_at > c))
                .cloned()
                .collect();
            for doc in due {
                let mut projected = doc.clone();
                projected.fields = project_paths(&doc.fields, &shared.fields);
                let key = ShardKey::for_doc(&doc.owner, &shared.collection, &doc.id);
                let shard = self
                    .router
                    .route_checked(&key, fabric, view, &self.node_id)?;
                let set = shards.get_mut(&shard).ok_or(OverlayError::ShardWriteRefused)?;
                let master = set.master_id().ok_or(OverlayError::ShardWriteRefused)?;
                if !view.connected(&self.node_id, &master) {
                    return Err(OverlayError::ShardWriteRefused);
                }
                let op = if set.key_lookup(&master, &shared.collection, &doc.id).is_some() {
                    WriteOp::Update(projected.clone())
                } else {
                    WriteOp::Insert(projected.clone())
                };
                match set.write(&master, op, &shared.collection, now) {
                    Ok(_) => {
                        self.stats.ul_bytes += projected.canonical_json().len() as u64;
                        pushed += 1;
                    }
                    Err(
                        StoreError::NoMajority
                        | StoreError::NotMaster(_)
                        | StoreError::NodeUnavailable(_),
                    ) => return Err(OverlayError::ShardWriteRefused),
                    Err(e) => {
                        debug_assert!(false, "unexpected sync write error: {e}");
                        return Err(OverlayError::ShardWriteRefused);
                    }
                }
            }
        }
        actor.last_synced = Some(now);
        Ok(pushed)
    }

    /// Read one collection across every shard through the data link:
    /// secondary-eventual reads from the lowest-id reachable replica, kept
    /// only for keys the shard actually owns. Returns the raw (unredacted)
    /// documents plus per-shard provenance.
    fn fetch_collection(
        &mut self,
        collection: &str,
        shards: &ShardMap,
        fabric: &Fabric,
        view: &dyn Connectivity,
        now: Tick,
    ) -> (Vec<Document>, Vec<(String, u64)>) {
        let mut docs = Vec::new();
        let mut provenance = Vec::new();
        for (shard_id, set) in shards.iter() {
            let Some(serving) = set
                .node_ids()
                .into_iter()
                .find(|n| {
                    set.node(n).is_some_and(|nd| !nd.is_crashed())
                        && view.connected(&self.node_id, n)
                })
            else {
                continue;
            };
            let Ok(found) = set.read(
                &serving,
                collection,
                &Filter::all(),
                ReadPreference::SecondaryEventual,
                now,
            ) else {
                continue;
            };
            let own_version = fabric.ownership.get(shard_id).map_or(0, |o| o.version);
            let mut contributed = false;
            for doc in found {
                let key = ShardKey::for_doc(&doc.owner, collection, &doc.id);
                if !fabric.shard_owns(shard_id, &key) {
                    continue;
                }
                self.stats.dl_bytes += doc.canonical_json().len() as u64;
                docs.push(doc);
                contributed = true;
            }
            if contributed {
                provenance.push((shard_id.clone(), own_version));
            }
        }
        docs.sort_by(|a, b| (&a.owner, &a.id).cmp(&(&b.owner, &b.id)));
        (docs, provenance)
    }

    /// External data with caching in the `external_cache` system
    /// collection: a hit younger than `external_ttl` skips the provider.
    pub fn fetch_external(
        &mut self,
        kind: &str,
        params: &FieldTree,
        fabric: &mut Fabric,
        shards: &mut ShardMap,
        view: &dyn Connectivity,
        now: Tick,
    ) -> Result<FieldTree, OverlayError> {
        let node_id = self.node_id.clone();
        fetch_external_inner(
            &self.providers,
            &mut self.stats,
            &mut self.router,
            self.external_ttl,
            &node_id,
            kind,
            params,
            fabric,
            shards,
            view,
            now,
        )
        .map_err(|e| match e {
            QueryError::NoProvider(k) => OverlayError::NoProvider(k),
            other => OverlayError::Query(other),
        })
    }

    /// Answer one query: resolve shards over the control link, fetch over
    /// the data link, redact to contract scope, aggregate per the query
    /// kind, and annotate staleness and provenance.
    pub fn handle_query(
        &mut self,
        request: &WireRequest,
        fabric: &mut Fabric,
        shards: &mut ShardMap,
        view: &dyn Connectivity,
        now: Tick,
    ) -> Result<AggregateResponse, OverlayError> {
        self.stats.queries_handled += 1;
        let requester = request.requester.clone();
        let Some(meta) = self.actors.get(&requester).cloned() else {
            return Err(OverlayError::UnknownActor(requester));
        };
        let Some(kind) = QueryKind::parse(&request.kind) else {
            return Err(OverlayError::UnknownQueryKind(request.kind.clone()));
        };

        if kind == QueryKind::GenericFilter {
            return self.generic_filter(&requester, &request.params, fabric, shards, view, now);
        }

        // Fetch and redact the collections this kind aggregates over.
        let mut docs: BTreeMap<String, Vec<Document>> = BTreeMap::new();
        let mut provenance: Vec<(String, u64)> = Vec::new();
        for collection in kind.collections() {
            let (raw, prov) = self.fetch_collection(collection, shards, fabric, view, now);
            provenance.extend(prov);
            let redacted: Vec<Document> = raw
                .iter()
                .filter_map(|d| redact(d, collection, &requester, &self.contracts))
                .collect();
            docs.insert(collection.to_string(), redacted);
        }

        let mut ext_provenance: Vec<(String, u64)> = Vec::new();
        let outcome = {
            let providers = &self.providers;
            let stats = &mut self.stats;
            let router = &mut self.router;
            let external_ttl = self.external_ttl;
            let node_id = self.node_id.clone();
            let mut ext = |ext_kind: &str, ext_params: &FieldTree| {
                fetch_external_inner(
                    providers, stats, router, external_ttl, &node_id, ext_kind, ext_params,
                    fabric, shards, view, now,
                )
                .map(|tree| {
                    ext_provenance.push((ext_kind.to_string(), 0));
                    tree
                })
            };
            evaluate(kind, &requester, meta.role, &request.params, &docs, &mut ext, now)?
        };

        provenance.extend(ext_provenance);
        provenance.sort();
        provenance.dedup();
        let mut response = AggregateResponse {
            payload: outcome.payload,
            provenance,
            max_staleness: 0,
            flags: BTreeSet::new(),
        };
        annotate_staleness(&mut response, &outcome.used, now, self.obsolete_ttl);
        self.stats.dl_bytes += serde_json::to_string(&FieldValue::Tree(response.payload.clone()))
            .expect("payload serializes")
            .len() as u64;
        Ok(response)
    }

    /// The raw filtered listing: a conjunction of predicates over one
    /// collection, evaluated on the redacted view. Naming a field path
    /// nobody shares fails loudly instead of silently returning nothing.
    fn generic_filter(
        &mut self,
        requester: &str,
        params: &FieldTree,
        fabric: &mut Fabric,
        shards: &mut ShardMap,
        view: &dyn Connectivity,
        now: Tick,
    ) -> Result<AggregateResponse, OverlayError> {
        let collection = params
            .get("collection")
            .and_then(|v| v.as_str())
            .ok_or_else(|| OverlayError::Query(QueryError::BadParams("missing collection".into())))?
            .to_string();
        let filter = parse_filter(params)?;

        // A predicate may name metadata or a path some contract shares.
        let meta_paths = ["id", "owner", "updated_at", "visibility"];
        for p in &filter.0 {
            if meta_paths.contains(&p.path.as_str()) {
                continue;
            }
            let shared_somewhere = self.contracts.values().any(|c| {
                c.paths_for(&collection)
                    .is_some_and(|paths| path_is_covered(&p.path, paths))
            });
            if !shared_somewhere {
                self.stats.policy_violations += 1;
                return Err(OverlayError::PolicyViolation(format!(
                    "field path {} of {} is not shared by any actor",
                    p.path, collection
                )));
            }
        }

        let (raw, provenance) = self.fetch_collection(&collection, shards, fabric, view, now);
        let mut matches = Vec::new();
        for doc in &raw {
            let Some(redacted) = redact(doc, &collection, requester, &self.contracts) else {
                continue;
            };
            if filter.matches(&redacted) {
                matches.push(redacted);
            }
        }

        let mut payload = FieldTree::new();
        payload.insert(
            "docs".into(),
            FieldValue::List(matches.iter().map(|d| d.canonical_value()).collect()),
        );
        let mut response = AggregateResponse {
            payload,
            provenance,
            max_staleness: 0,
            flags: BTreeSet::new(),
        };
        annotate_staleness(&mut response, &matches, now, self.obsolete_ttl);
        self.stats.dl_bytes += serde_json::to_string(&FieldValue::Tree(response.payload.clone()))
            .expect("payload serializes")
            .len() as u64;
        Ok(response)
    }

    /// Projection soundness check used by the harness monitors: every
    /// shard-resident document's leaf paths must sit inside its owner's
    /// contract.
    pub fn check_projection_soundness(&self, shards: &ShardMap) -> Result<(), String> {
        for (shard_id, set) in shards.iter() {
            let Some(any_node) = set.node_ids().first().cloned() else {
                continue;
            };
            let Some(node) = set.node(&any_node) else { continue };
            for collection in node.collection_names().map(|s| s.to_string()) {
                if collection == "external_cache" {
                    continue;
                }
                let docs = set
                    .read(&any_node, &collection, &Filter::all(), ReadPreference::SecondaryEventual, 0)
                    .unwrap_or_default();
                for doc in docs {
                    let Some(contract) = self.contracts.get(&doc.owner) else {
                        return Err(format!(
                            "doc {}/{} on {shard_id} owned by unregistered {}",
                            collection, doc.id, doc.owner
                        ));
                    };
                    let Some(paths) = contract.paths_for(&collection) else {
                        return Err(format!(
                            "doc {}/{} on {shard_id}: collection not in {}'s contract",
                            collection, doc.id, doc.owner
                        ));
                    };
                    for leaf in leaf_paths(&doc.fields) {
                        if !path_is_covered(&leaf, paths) {
                            return Err(format!(
                                "doc {}/{} on {shard_id} leaks path {leaf} of {}",
                                collection, doc.id, doc.owner
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn parse_filter(params: &FieldTree) -> Result<Filter, OverlayError> {
    let mut filter = Filter::all();
    let Some(preds) = params.get("predicates") else {
        return Ok(filter);
    };
    let Some(list) = preds.as_list() else {
        return Err(OverlayError::Query(QueryError::BadParams(
            "predicates must be a list".into(),
        )));
    };
    for p in list {
        let Some(t) = p.as_tree() else {
            return Err(OverlayError::Query(QueryError::BadParams(
                "predicate must be an object".into(),
            )));
        };
        let path = t
            .get("path")
            .and_then(|v| v.as_str())
            .ok_or_else(|| OverlayError::Query(QueryError::BadParams("predicate.path".into())))?;
        let cmp = match t.get("cmp").and_then(|v| v.as_str()).unwrap_or("eq") {
            "eq" => Cmp::Eq,
            "ne" => Cmp::Ne,
            "lt" => Cmp::Lt,
            "le" => Cmp::Le,
            "gt" => Cmp::Gt,
            "ge" => Cmp::Ge,
            other => {
                return Err(OverlayError::Query(QueryError::BadParams(format!(
                    "unknown comparator {other}"
                ))))
            }
        };
        let value = t
            .get("value")
            .cloned()
            .ok_or_else(|| OverlayError::Query(QueryError::BadParams("predicate.value".into())))?;
        filter = filter.and(Predicate { path: path.to_string(), cmp, value });
    }
    Ok(filter)
}

fn hex_prefix(bytes: &[u8], n: usize) -> String {
    bytes.iter().take(n).map(|b| format!("{b:02x}")).collect()
}

/// Free-function core of [`Frontend::fetch_external`], callable while the
/// frontend's document view is borrowed.
#[allow(clippy::too_many_arguments)]
fn fetch_external_inner(
    providers: &[Box<dyn ExternalProvider>],
    stats: &mut FrontendStats,
    router: &mut Router,
    external_ttl: Tick,
    node_id: &str,
    kind: &str,
    params: &FieldTree,
    fabric: &mut Fabric,
    shards: &mut ShardMap,
    view: &dyn Connectivity,
    now: Tick,
) -> Result<FieldTree, QueryError> {
    let Some(provider) = providers.iter().find(|p| p.serves(kind)) else {
        return Err(QueryError::NoProvider(kind.to_string()));
    };

    let params_json =
        serde_json::to_string(&FieldValue::Tree(params.clone())).expect("params serialize");
    let mut hasher = Sha256::new();
    hasher.update(kind.as_bytes());
    hasher.update(params_json.as_bytes());
    let digest = hasher.finalize();
    let cache_id = format!("{kind}/{}", hex_prefix(&digest, 8));
    let key = ShardKey::for_doc(SYSTEM_ACTOR, "external_cache", &cache_id);

    // The cache is best-effort: an unreachable config group or shard just
    // means a direct provider call.
    let shard = router.route_checked(&key, fabric, view, node_id).ok();
    if let Some(shard) = &shard {
        if let Some(set) = shards.get(shard) {
            if let Some(master) = set.master_id() {
                if view.connected(node_id, &master) {
                    if let Some(hit) = set.key_lookup(&master, "external_cache", &cache_id) {
                        if now < hit.updated_at + external_ttl {
                            stats.el_cache_hits += 1;
                            if let Some(FieldValue::Tree(t)) = hit.fields.get("result") {
                                return Ok(t.clone());
                            }
                        }
                    }
                }
            }
        }
    }

    let result = provider.respond(params);
    stats.el_provider_calls += 1;
    stats.el_bytes += serde_json::to_string(&FieldValue::Tree(result.clone()))
        .expect("results serialize")
        .len() as u64;

    if let Some(shard) = &shard {
        if let Some(set) = shards.get_mut(shard) {
            if let Some(master) = set.master_id() {
                if view.connected(node_id, &master) {
                    let mut doc = Document::new(&cache_id, SYSTEM_ACTOR, now).with("kind", kind);
                    doc.fields.insert("result".into(), FieldValue::Tree(result.clone()));
                    let op = if set.key_lookup(&master, "external_cache", &cache_id).is_some() {
                        WriteOp::Update(doc)
                    } else {
                        WriteOp::Insert(doc)
                    };
                    let _ = set.write(&master, op, "external_cache", now);
                }
            }
        }
    }
    Ok(result)
}
