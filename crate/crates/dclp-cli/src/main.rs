//! Command-line driver: run a simulated cluster under workload, execute
//! scenario scripts, generate event ledgers, issue queries and inspect
//! chunk metadata.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dclp_core::doc::{FieldTree, FieldValue};
use dclp_core::overlay::wire;
use dclp_core::sim::cluster::{run_cluster, Cluster};
use dclp_core::sim::scenario::{run_scenario, ScenarioScript};
use dclp_core::sim::topology::TopologyConfig;
use dclp_core::workload::{generate_stream, ledger, load_static_profile, GeneratorConfig, ProfileRow};

#[derive(Parser)]
#[command(name = "dclp", about = "Desk-scale cooperative logistics platform simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct WorldArgs {
    /// Topology file (TOML); the built-in five-actor desk topology applies
    /// otherwise.
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Static order profile CSV (family,subfamily,annual_qty); a built-in
    /// demo profile applies otherwise.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Seed for the whole run.
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Run a cluster under workload for a number of ticks and write the
    /// metrics report.
    Run {
        #[command(flatten)]
        world: WorldArgs,
        #[arg(long, default_value_t = 10_000)]
        ticks: u64,
        /// Issue the standing scenario queries every this many ticks.
        #[arg(long, default_value_t = 500)]
        query_every: u64,
        /// Map one tick to this many wall-clock milliseconds (0 = free run).
        #[arg(long, default_value_t = 0)]
        tick_ms: u64,
        /// Metrics CSV output path.
        #[arg(long, default_value = "metrics.csv")]
        report: PathBuf,
    },
    /// Execute a scenario script against a fresh cluster.
    Scenario {
        script: PathBuf,
        #[command(flatten)]
        world: WorldArgs,
        /// Metrics CSV output path.
        #[arg(long, default_value = "metrics.csv")]
        report: PathBuf,
        /// Skip the workload generator.
        #[arg(long)]
        no_workload: bool,
    },
    /// Generate the deterministic event ledger from a static profile.
    Gen {
        profile: PathBuf,
        #[arg(long)]
        ticks: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Write the ledger here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeded Poisson arrivals instead of exact fractional accumulation.
        #[arg(long)]
        poisson: bool,
        #[arg(long, default_value_t = 2)]
        hospitals: u32,
        #[arg(long, default_value_t = 2)]
        suppliers: u32,
        #[arg(long, default_value_t = 1)]
        carriers: u32,
    },
    /// Boot a cluster, warm it up, and issue one query as an actor.
    Query {
        #[command(flatten)]
        world: WorldArgs,
        #[arg(long)]
        actor: String,
        #[arg(long)]
        kind: String,
        /// Query parameters as JSON text.
        #[arg(long, default_value = "{}")]
        params: String,
        /// Warm-up ticks before the query.
        #[arg(long, default_value_t = 600)]
        warmup: u64,
        /// Emit the raw length-prefixed response frame instead of JSON text.
        #[arg(long)]
        wire: bool,
    },
    /// Boot a cluster and print the chunk map, one chunk per line.
    DumpChunks {
        #[command(flatten)]
        world: WorldArgs,
        #[arg(long, default_value_t = 0)]
        warmup: u64,
    },
    /// Summarize a metrics CSV produced by run or scenario.
    Report { metrics: PathBuf },
}

fn demo_profile_rows() -> Vec<ProfileRow> {
    vec![
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
    ]
}

fn load_world(world: &WorldArgs) -> Result<(TopologyConfig, GeneratorConfig)> {
    let mut topo = match &world.topology {
        Some(path) => TopologyConfig::load(path)
            .with_context(|| format!("loading topology {}", path.display()))?,
        None => TopologyConfig::default_desk(world.seed),
    };
    topo.seed = world.seed;
    let mut gen_cfg = match &world.profile {
        Some(path) => load_static_profile(path)
            .with_context(|| format!("loading profile {}", path.display()))?,
        None => GeneratorConfig {
            rows: demo_profile_rows(),
            ..GeneratorConfig::default()
        },
    };
    gen_cfg.seed = world.seed;
    // The generator drives conventionally named actors; size its
    // populations to the topology.
    let count = |prefix: &str| {
        topo.actor
            .iter()
            .filter(|a| a.id.starts_with(prefix))
            .count() as u32
    };
    gen_cfg.hospitals = count("hospital-").max(1);
    gen_cfg.suppliers = count("supplier-").max(1);
    gen_cfg.carriers = count("carrier-").max(1);
    Ok((topo, gen_cfg))
}

fn parse_params(text: &str) -> Result<FieldTree> {
    let v: FieldValue = serde_json::from_str(text).context("params must be JSON")?;
    match v {
        FieldValue::Tree(t) => Ok(t),
        _ => bail!("params must be a JSON object"),
    }
}

fn boot(world: &WorldArgs, warmup: u64) -> Result<Cluster> {
    let (topo, gen_cfg) = load_world(world)?;
    let mut cluster = run_cluster(topo, Some(gen_cfg)).map_err(|e| anyhow::anyhow!("{e}"))?;
    cluster.advance(warmup);
    Ok(cluster)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { world, ticks, query_every, tick_ms, report } => {
            let (topo, gen_cfg) = load_world(&world)?;
            let mut cluster =
                run_cluster(topo, Some(gen_cfg)).map_err(|e| anyhow::anyhow!("{e}"))?;
            let mut next_query = query_every;
            let mut advanced = 0;
            while advanced < ticks {
                let chunk = if query_every == 0 {
                    ticks - advanced
                } else {
                    (next_query - advanced).min(ticks - advanced)
                };
                cluster.advance(chunk);
                advanced += chunk;
                if tick_ms > 0 {
                    std::thread::sleep(std::time::Duration::from_millis(tick_ms * chunk));
                }
                if query_every > 0 && advanced == next_query {
                    for (actor, kind, outcome) in cluster.issue_scenario_queries() {
                        if let Err(e) = outcome {
                            eprintln!("tick {advanced}: {actor} {kind}: {e}");
                        }
                    }
                    next_query += query_every;
                }
            }
            let csv = cluster.report().to_csv();
            std::fs::write(&report, &csv)
                .with_context(|| format!("writing {}", report.display()))?;
            println!(
                "ran {ticks} ticks: {} events, {} queries, {} violations; report at {}",
                cluster.metrics.generated_events,
                cluster.frontend.stats.queries_handled,
                cluster.violations.len(),
                report.display()
            );
            if !cluster.violations.is_empty() {
                for v in &cluster.violations {
                    eprintln!("violation: {v}");
                }
                bail!("{} invariant violations", cluster.violations.len());
            }
        }
        Command::Scenario { script, world, report, no_workload } => {
            let text = std::fs::read_to_string(&script)
                .with_context(|| format!("reading {}", script.display()))?;
            let parsed = ScenarioScript::parse(&text).map_err(|e| anyhow::anyhow!("{e}"))?;
            let (topo, gen_cfg) = load_world(&world)?;
            let workload = if no_workload { None } else { Some(gen_cfg) };
            let (metrics, results) =
                run_scenario(&parsed, topo, workload).map_err(|e| anyhow::anyhow!("{e}"))?;
            std::fs::write(&report, metrics.to_csv())
                .with_context(|| format!("writing {}", report.display()))?;
            let mut failed = 0;
            for r in &results {
                let verdict = if r.pass { "pass" } else { "FAIL" };
                println!("step {:>3} {verdict}  {}  [{}]", r.step, r.line, r.detail);
                if !r.pass {
                    failed += 1;
                }
            }
            println!(
                "{} assertions, {} failed; report at {}",
                results.len(),
                failed,
                report.display()
            );
            if failed > 0 {
                bail!("{failed} assertions failed");
            }
        }
        Command::Gen { profile, ticks, seed, out, poisson, hospitals, suppliers, carriers } => {
            let mut cfg = load_static_profile(&profile)
                .with_context(|| format!("loading profile {}", profile.display()))?;
            cfg.seed = seed;
            cfg.poisson = poisson;
            cfg.hospitals = hospitals;
            cfg.suppliers = suppliers;
            cfg.carriers = carriers;
            let events = generate_stream(&cfg, ticks);
            let text = ledger(&events);
            match out {
                Some(path) => std::fs::write(&path, text)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => {
                    std::io::stdout().write_all(text.as_bytes())?;
                }
            }
        }
        Command::Query { world, actor, kind, params, warmup, wire: emit_wire } => {
            let params = parse_params(&params)?;
            let mut cluster = boot(&world, warmup)?;
            let request = wire::WireRequest {
                requester: actor,
                kind,
                params,
            };
            let frame = wire::encode_request(&request);
            let (request, _) = wire::decode_request(&frame).expect("own frame decodes");
            let result = cluster.frontend.handle_query(
                &request,
                &mut cluster.fabric,
                &mut cluster.shards,
                &cluster.net,
                cluster.now,
            );
            match result {
                Ok(resp) => {
                    let wire_resp = resp.to_wire();
                    if emit_wire {
                        std::io::stdout().write_all(&wire::encode_response(&wire_resp))?;
                    } else {
                        println!("{}", serde_json::to_string_pretty(&wire_resp)?);
                    }
                }
                Err(e) => bail!("query failed: {e}"),
            }
        }
        Command::DumpChunks { world, warmup } => {
            let mut cluster = boot(&world, warmup)?;
            print!("{}", cluster.dump_chunks().map_err(|e| anyhow::anyhow!("{e}"))?);
        }
        Command::Report { metrics } => {
            let text = std::fs::read_to_string(&metrics)
                .with_context(|| format!("reading {}", metrics.display()))?;
            print_report_summary(&text, &metrics)?;
        }
    }
    Ok(())
}

fn print_report_summary(csv_text: &str, path: &Path) -> Result<()> {
    let mut latencies: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    let mut staleness: Vec<u64> = Vec::new();
    let mut singles: BTreeMap<String, String> = BTreeMap::new();
    for (i, line) in csv_text.lines().enumerate() {
        if i == 0 {
            if line != "section,key,value" {
                bail!("{} is not a metrics CSV", path.display());
            }
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let (Some(section), Some(key), Some(value)) = (parts.next(), parts.next(), parts.next())
        else {
            continue;
        };
        match section {
            "query_latency" => latencies
                .entry(key.to_string())
                .or_default()
                .push(value.parse().unwrap_or(0)),
            "staleness" if key == "sample" => staleness.push(value.parse().unwrap_or(0)),
            _ => {
                singles.insert(format!("{section}.{key}"), value.to_string());
            }
        }
    }
    println!("metrics: {}", path.display());
    for (k, v) in &singles {
        println!("  {k} = {v}");
    }
    for (kind, ls) in &latencies {
        let n = ls.len() as u64;
        let sum: u64 = ls.iter().sum();
        let max = ls.iter().max().copied().unwrap_or(0);
        println!("  query {kind}: n={n} mean={} max={max}", if n > 0 { sum / n } else { 0 });
    }
    if !staleness.is_empty() {
        let n = staleness.len() as u64;
        let sum: u64 = staleness.iter().sum();
        let max = staleness.iter().max().copied().unwrap_or(0);
        println!("  staleness: n={n} mean={} max={max}", sum / n);
    }
    Ok(())
}
