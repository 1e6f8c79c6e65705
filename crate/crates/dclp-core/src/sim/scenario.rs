//! Scenario scripts: line-oriented step lists that drive a fresh cluster
//! through faults, writes, queries and assertions, producing a metrics
//! report and one pass/fail verdict per assertion.
//!
//! ```text
//! advance 20
//! partition shard-hospital-1-0 | *
//! assert-write-refused shard-hospital-1-0
//! heal
//! advance 50
//! assert-converged all
//! ```

use std::collections::BTreeSet;

use thiserror::Error;

use crate::doc::{Document, FieldTree, FieldValue};
use crate::sim::cluster::{run_cluster, MetricsReport};
use crate::sim::topology::TopologyConfig;
use crate::store::{Filter, ReadPreference, StoreError};
use crate::workload::GeneratorConfig;
use crate::Tick;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("script error at step {step}: {msg}")]
pub struct ScriptError {
    pub step: usize,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Step {
    Advance(Tick),
    Partition(Vec<Vec<String>>),
    Heal,
    Crash(String),
    Restart(String),
    Insert {
        node: String,
        collection: String,
        id: String,
        fields_json: String,
    },
    Query {
        actor: String,
        kind: String,
        params_json: String,
    },
    AssertQueryOk,
    AssertQueryError(String),
    AssertFlag(String),
    AssertNoFlag(String),
    AssertConverged(String),
    AssertMaster { set_id: String, node: String },
    AssertWriteRefused(String),
    AssertWriteOk(String),
    AssertReadOk { node: String, collection: String },
    AssertStalenessLe(Tick),
}

impl Step {
    fn is_assertion(&self) -> bool {
        matches!(
            self,
            Step::AssertQueryOk
                | Step::AssertQueryError(_)
                | Step::AssertFlag(_)
                | Step::AssertNoFlag(_)
                | Step::AssertConverged(_)
                | Step::AssertMaster { .. }
                | Step::AssertWriteRefused(_)
                | Step::AssertWriteOk(_)
                | Step::AssertReadOk { .. }
                | Step::AssertStalenessLe(_)
        )
    }
}

/// A parsed script: the ordered steps plus the original line of each for
/// reporting.
#[derive(Debug, Clone)]
pub struct ScenarioScript {
    steps: Vec<(usize, String, Step)>,
}

/// Outcome of one assertion step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepResult {
    pub step: usize,
    pub line: String,
    pub pass: bool,
    pub detail: String,
}

impl ScenarioScript {
    pub fn parse(text: &str) -> Result<ScenarioScript, ScriptError> {
        let mut steps = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let step = Self::parse_line(line).map_err(|msg| ScriptError { step: idx, msg })?;
            steps.push((idx, line.to_string(), step));
        }
        Ok(ScenarioScript { steps })
    }

    fn parse_line(line: &str) -> Result<Step, String> {
        let mut parts = line.split_whitespace();
        let cmd = parts.next().expect("line is non-empty");
        let rest = || line[cmd.len()..].trim().to_string();
        match cmd {
            "advance" => {
                let n: Tick = parts
                    .next()
                    .ok_or("advance needs a tick count")?
                    .parse()
                    .map_err(|e| format!("advance: {e}"))?;
                Ok(Step::Advance(n))
            }
            "partition" => {
                let groups: Vec<Vec<String>> = rest()
                    .split('|')
                    .map(|g| g.split_whitespace().map(|s| s.to_string()).collect())
                    .collect();
                if groups.iter().any(|g: &Vec<String>| g.is_empty()) {
                    return Err("partition: empty group".into());
                }
                Ok(Step::Partition(groups))
            }
            "heal" => Ok(Step::Heal),
            "crash" => Ok(Step::Crash(parts.next().ok_or("crash needs a node")?.into())),
            "restart" => Ok(Step::Restart(parts.next().ok_or("restart needs a node")?.into())),
            "insert" => {
                let node = parts.next().ok_or("insert needs node")?.to_string();
                let collection = parts.next().ok_or("insert needs collection")?.to_string();
                let id = parts.next().ok_or("insert needs id")?.to_string();
                let consumed = line.find(&id).map(|p| p + id.len()).unwrap_or(line.len());
                let fields_json = line[consumed..].trim().to_string();
                if fields_json.is_empty() {
                    return Err("insert needs a JSON field object".into());
                }
                Ok(Step::Insert { node, collection, id, fields_json })
            }
            "query" => {
                let actor = parts.next().ok_or("query needs actor")?.to_string();
                let kind = parts.next().ok_or("query needs kind")?.to_string();
                let consumed = line.find(&kind).map(|p| p + kind.len()).unwrap_or(line.len());
                let params_json = line[consumed..].trim().to_string();
                Ok(Step::Query {
                    actor,
                    kind,
                    params_json: if params_json.is_empty() { "{}".into() } else { params_json },
                })
            }
            "assert-query-ok" => Ok(Step::AssertQueryOk),
            "assert-query-error" => Ok(Step::AssertQueryError(rest())),
            "assert-flag" => Ok(Step::AssertFlag(rest())),
            "assert-no-flag" => Ok(Step::AssertNoFlag(rest())),
            "assert-converged" => Ok(Step::AssertConverged(rest())),
            "assert-master" => {
                let set_id = parts.next().ok_or("assert-master needs set")?.to_string();
                let node = parts.next().ok_or("assert-master needs node")?.to_string();
                Ok(Step::AssertMaster { set_id, node })
            }
            "assert-write-refused" => Ok(Step::AssertWriteRefused(
                parts.next().ok_or("assert-write-refused needs a node")?.into(),
            )),
            "assert-write-ok" => Ok(Step::AssertWriteOk(
                parts.next().ok_or("assert-write-ok needs a node")?.into(),
            )),
            "assert-read-ok" => {
                let node = parts.next().ok_or("assert-read-ok needs node")?.to_string();
                let collection = parts.next().ok_or("assert-read-ok needs collection")?.to_string();
                Ok(Step::AssertReadOk { node, collection })
            }
            "assert-staleness-le" => {
                let n: Tick = parts
                    .next()
                    .ok_or("assert-staleness-le needs a bound")?
                    .parse()
                    .map_err(|e| format!("assert-staleness-le: {e}"))?;
                Ok(Step::AssertStalenessLe(n))
            }
            other => Err(format!("unknown step {other}")),
        }
    }
}

fn parse_fields(json: &str) -> Result<FieldTree, String> {
    let v: FieldValue = serde_json::from_str(json).map_err(|e| e.to_string())?;
    match v {
        FieldValue::Tree(t) => Ok(t),
        _ => Err("expected a JSON object".into()),
    }
}

/// Execute a script against a fresh cluster built from `topo` (and an
/// optional workload). Assertion verdicts are collected; non-assertion
/// failures abort with a `ScriptError` carrying the step index.
pub fn run_scenario(
    script: &ScenarioScript,
    topo: TopologyConfig,
    generator: Option<GeneratorConfig>,
) -> Result<(MetricsReport, Vec<StepResult>), ScriptError> {
    let mut cluster = run_cluster(topo, generator)
        .map_err(|e| ScriptError { step: 0, msg: e.to_string() })?;
    let mut results = Vec::new();
    let mut probe_counter = 0u64;

    for (step, line, op) in &script.steps {
        let err = |msg: String| ScriptError { step: *step, msg };
        let mut verdict = |pass: bool, detail: String| {
            results.push(StepResult { step: *step, line: line.clone(), pass, detail });
        };
        match op {
            Step::Advance(n) => cluster.advance(*n),
            Step::Partition(groups) => {
                let named: BTreeSet<String> =
                    groups.iter().flatten().filter(|s| *s != "*").cloned().collect();
                let expanded: Vec<BTreeSet<String>> = groups
                    .iter()
                    .map(|g| {
                        if g.iter().any(|s| s == "*") {
                            cluster
                                .all_nodes()
                                .iter()
                                .filter(|n| !named.contains(*n))
                                .cloned()
                                .chain(g.iter().filter(|s| *s != "*").cloned())
                                .collect()
                        } else {
                            g.iter().cloned().collect()
                        }
                    })
                    .collect();
                cluster
                    .inject_partition(expanded)
                    .map_err(|e| err(e.to_string()))?;
            }
            Step::Heal => cluster.heal(),
            Step::Crash(node) => {
                if !cluster.crash_node(node) {
                    return Err(err(format!("unknown node {node}")));
                }
            }
            Step::Restart(node) => {
                if !cluster.restart_node(node) {
                    return Err(err(format!("unknown node {node}")));
                }
            }
            Step::Insert { node, collection, id, fields_json } => {
                let fields = parse_fields(fields_json).map_err(err)?;
                let owner = node_owner(node);
                let mut doc = Document::new(id, owner, cluster.now);
                doc.fields = fields;
                cluster.write_at(node, collection, doc).map_err(|e| err(e.to_string()))?;
            }
            Step::Query { actor, kind, params_json } => {
                let params = parse_fields(params_json).map_err(err)?;
                let _ = cluster.query(actor, kind, params);
            }
            Step::AssertQueryOk => match &cluster.last_query {
                Some(Ok(_)) => verdict(true, "query ok".into()),
                Some(Err(e)) => verdict(false, format!("query failed: {e}")),
                None => verdict(false, "no query issued".into()),
            },
            Step::AssertQueryError(expect) => match &cluster.last_query {
                Some(Err(e)) if e.to_string().contains(expect.as_str()) => {
                    verdict(true, e.to_string())
                }
                Some(Err(e)) => verdict(false, format!("wrong error: {e}")),
                Some(Ok(_)) => verdict(false, "query unexpectedly succeeded".into()),
                None => verdict(false, "no query issued".into()),
            },
            Step::AssertFlag(flag) => match &cluster.last_query {
                Some(Ok(resp)) => {
                    let has = resp.flags.contains(flag);
                    verdict(has, format!("flags: {:?}", resp.flags));
                }
                _ => verdict(false, "no successful query".into()),
            },
            Step::AssertNoFlag(flag) => match &cluster.last_query {
                Some(Ok(resp)) => {
                    let has = resp.flags.contains(flag);
                    verdict(!has, format!("flags: {:?}", resp.flags));
                }
                _ => verdict(false, "no successful query".into()),
            },
            Step::AssertConverged(which) => {
                let pass = if which == "all" {
                    cluster.shards.values().all(|s| s.converged())
                } else {
                    cluster
                        .shards
                        .get(which)
                        .is_some_and(|s| s.converged())
                };
                verdict(pass, format!("converged({which})"));
            }
            Step::AssertMaster { set_id, node } => {
                let master = cluster.shards.get(set_id).and_then(|s| s.master_id());
                let pass = master.as_deref() == Some(node.as_str());
                verdict(pass, format!("master is {master:?}"));
            }
            Step::AssertWriteRefused(node) => {
                probe_counter += 1;
                let doc = probe_doc(node, probe_counter, cluster.now);
                let result = cluster.write_at(node, "orders", doc);
                let pass = matches!(result, Err(StoreError::NoMajority));
                verdict(pass, format!("write result: {result:?}"));
            }
            Step::AssertWriteOk(node) => {
                probe_counter += 1;
                let doc = probe_doc(node, probe_counter, cluster.now);
                let result = cluster.write_at(node, "orders", doc);
                let pass = result.is_ok();
                verdict(pass, format!("write result: {result:?}"));
            }
            Step::AssertReadOk { node, collection } => {
                let set = cluster
                    .shards
                    .values()
                    .find(|s| s.node_ids().iter().any(|n| n == node));
                let pass = set.is_some_and(|s| {
                    s.read(node, collection, &Filter::all(), ReadPreference::SecondaryEventual, 0)
                        .is_ok()
                });
                verdict(pass, format!("read {collection} at {node}"));
            }
            Step::AssertStalenessLe(bound) => match &cluster.last_query {
                Some(Ok(resp)) => verdict(
                    resp.max_staleness <= *bound,
                    format!("max_staleness {} vs bound {bound}", resp.max_staleness),
                ),
                _ => verdict(false, "no successful query".into()),
            },
        }
        let _ = op.is_assertion();
    }

    Ok((cluster.report(), results))
}

/// Probe writes land in the shard owner's `orders` collection with only a
/// contract-covered field, so the projection monitors stay quiet.
fn probe_doc(node: &str, counter: u64, now: Tick) -> Document {
    Document::new(format!("probe-{counter:04}"), node_owner(node), now).with("status", "placed")
}

/// shard-<actor>-<n> -> <actor>
fn node_owner(node: &str) -> String {
    let without = node.strip_prefix("shard-").unwrap_or(node);
    match without.rsplit_once('-') {
        Some((actor, suffix)) if suffix.chars().all(|c| c.is_ascii_digit()) => actor.to_string(),
        _ => without.to_string(),
    }
}
