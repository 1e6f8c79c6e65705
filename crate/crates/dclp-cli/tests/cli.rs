//! End-to-end checks of the `dclp` binary: ledger determinism, the golden
//! carrier-ranking query, chunk dumps, scenario runs and usage errors.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dclp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dclp"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let args = |out: &Path| {
        vec![
            "gen".to_string(),
            fixture("profile.csv").display().to_string(),
            "--ticks".into(),
            "1000".into(),
            "--seed".into(),
            "42".into(),
            "--out".into(),
            out.display().to_string(),
        ]
    };
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ledger");
    let b = dir.path().join("b.ledger");
    run_ok(dclp().args(args(&a)));
    run_ok(dclp().args(args(&b)));
    let la = std::fs::read(&a).unwrap();
    let lb = std::fs::read(&b).unwrap();
    assert!(!la.is_empty());
    assert_eq!(la, lb);

    // A different seed produces a different ledger.
    let c = dir.path().join("c.ledger");
    run_ok(dclp().args([
        "gen",
        &fixture("profile.csv").display().to_string(),
        "--ticks",
        "1000",
        "--seed",
        "43",
        "--out",
        &c.display().to_string(),
    ]));
    assert_ne!(la, std::fs::read(&c).unwrap());
}

#[test]
fn best_carrier_query_matches_committed_golden() {
    let out = run_ok(dclp().args([
        "query",
        "--topology",
        &fixture("topology.toml").display().to_string(),
        "--profile",
        &fixture("profile.csv").display().to_string(),
        "--seed",
        "42",
        "--actor",
        "supplier-1",
        "--kind",
        "best_carrier",
        "--warmup",
        "600",
    ]));
    let got = String::from_utf8(out.stdout).unwrap();
    let golden = std::fs::read_to_string(fixture("best_carrier.golden.json")).unwrap();
    assert_eq!(got, golden);
}

#[test]
fn golden_ranking_is_the_pareto_frontier_of_the_generated_offers() {
    // Independent oracle: rebuild the offers visible at query time from the
    // event ledger, generated with the same populations the query world
    // runs (the fixture topology has 1 hospital, 1 supplier, 3 carriers).
    let warmup = 600u64;
    let sync_horizon = warmup - 20;
    let out = run_ok(dclp().args([
        "gen",
        &fixture("profile.csv").display().to_string(),
        "--ticks",
        &warmup.to_string(),
        "--seed",
        "42",
        "--hospitals",
        "1",
        "--suppliers",
        "1",
        "--carriers",
        "3",
    ]));
    let ledger = String::from_utf8(out.stdout).unwrap();
    let mut offers: std::collections::BTreeMap<String, (i64, i64, u64)> =
        std::collections::BTreeMap::new();
    for line in ledger.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        if v["collection"] != "offers" {
            continue;
        }
        let tick = v["tick"].as_u64().unwrap();
        if tick > sync_horizon {
            continue;
        }
        let carrier = v["doc"]["fields"]["carrier"].as_str().unwrap().to_string();
        let price = v["doc"]["fields"]["price"].as_i64().unwrap();
        let duration = v["doc"]["fields"]["duration"].as_i64().unwrap();
        let keep = offers.get(&carrier).map_or(true, |(_, _, t)| tick >= *t);
        if keep {
            offers.insert(carrier, (price, duration, tick));
        }
    }
    assert_eq!(offers.len(), 3, "three carriers publish offers");

    // O(n^2) dominance oracle plus the normalized-score order.
    let all: Vec<(String, i64, i64)> = offers
        .iter()
        .map(|(c, (p, d, _))| (c.clone(), *p, *d))
        .collect();
    let p_max = all.iter().map(|o| o.1).max().unwrap() as f64;
    let d_max = all.iter().map(|o| o.2).max().unwrap() as f64;
    let mut frontier: Vec<&(String, i64, i64)> = all
        .iter()
        .filter(|a| {
            !all.iter()
                .any(|b| b.1 <= a.1 && b.2 <= a.2 && (b.1 < a.1 || b.2 < a.2))
        })
        .collect();
    frontier.sort_by(|a, b| {
        let sa = a.1 as f64 / p_max + a.2 as f64 / d_max;
        let sb = b.1 as f64 / p_max + b.2 as f64 / d_max;
        sa.partial_cmp(&sb)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.0.cmp(&b.0))
    });

    let golden = std::fs::read_to_string(fixture("best_carrier.golden.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&golden).unwrap();
    let ranking = v["payload"]["ranking"].as_array().unwrap();
    let got: Vec<(String, i64, i64)> = ranking
        .iter()
        .map(|e| {
            (
                e["carrier"].as_str().unwrap().to_string(),
                e["price"].as_i64().unwrap(),
                e["duration"].as_i64().unwrap(),
            )
        })
        .collect();
    let expected: Vec<(String, i64, i64)> = frontier.into_iter().cloned().collect();
    assert_eq!(got, expected);
}

#[test]
fn dump_chunks_lists_pinned_actor_bands() {
    let out = run_ok(dclp().args([
        "dump-chunks",
        "--topology",
        &fixture("topology.toml").display().to_string(),
        "--seed",
        "42",
    ]));
    let dump = String::from_utf8(out.stdout).unwrap();
    for actor in ["hospital-1", "supplier-1", "carrier-1", "carrier-2", "carrier-3"] {
        assert!(
            dump.lines().any(|l| l.contains(&format!("shard-{actor},shard-{actor}"))),
            "missing pinned chunk for {actor}:\n{dump}"
        );
    }
    // version,lo,hi,shard,pinned_to,doc_count columns
    for line in dump.lines() {
        assert_eq!(line.split(',').count(), 6, "bad dump line: {line}");
    }
}

#[test]
fn scenario_subcommand_runs_the_cp_script() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("metrics.csv");
    let out = run_ok(dclp().args([
        "scenario",
        &fixture("cp_scenario.txt").display().to_string(),
        "--seed",
        "42",
        "--report",
        &report.display().to_string(),
    ]));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("0 failed"), "{stdout}");
    let csv = std::fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("section,key,value"));

    // Scenario metrics are identical across runs.
    let report2 = dir.path().join("metrics2.csv");
    run_ok(dclp().args([
        "scenario",
        &fixture("cp_scenario.txt").display().to_string(),
        "--seed",
        "42",
        "--report",
        &report2.display().to_string(),
    ]));
    assert_eq!(csv, std::fs::read_to_string(&report2).unwrap());
}

#[test]
fn report_subcommand_summarizes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("metrics.csv");
    run_ok(dclp().args([
        "run",
        "--seed",
        "7",
        "--ticks",
        "300",
        "--query-every",
        "100",
        "--report",
        &report.display().to_string(),
    ]));
    let out = run_ok(dclp().args(["report", &report.display().to_string()]));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("traffic.total_bytes"));
    assert!(stdout.contains("query "));
}

#[test]
fn unknown_subcommand_and_bad_usage_exit_nonzero() {
    let out = dclp().arg("frobnicate").output().unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());

    let out = dclp().args(["gen", "/nonexistent.csv", "--ticks", "5"]).output().unwrap();
    assert!(!out.status.success());

    let out = dclp()
        .args(["query", "--actor", "ghost", "--kind", "best_carrier", "--warmup", "5"])
        .output()
        .unwrap();
    assert!(!out.status.success(), "unregistered actor must fail");
}

#[test]
fn wire_flag_emits_decodable_length_prefixed_frame() {
    let out = run_ok(dclp().args([
        "query",
        "--seed",
        "42",
        "--actor",
        "supplier-1",
        "--kind",
        "best_carrier",
        "--warmup",
        "300",
        "--wire",
    ]));
    let bytes = out.stdout;
    assert!(bytes.len() > 4);
    let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    assert_eq!(bytes.len(), 4 + len);
    let body: serde_json::Value = serde_json::from_slice(&bytes[4..]).unwrap();
    assert!(body.get("payload").is_some());
    assert!(body.get("provenance").is_some());
    assert!(body.get("max_staleness").is_some());
    assert!(body.get("flags").is_some());
}
