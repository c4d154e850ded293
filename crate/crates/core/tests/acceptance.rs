//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use invsig::ingest::{self, load_price_file, FillPolicy};
use invsig::nodestore::{self, NodeStore, MANIFEST_FILE, NODES_FILE, RECORDS_FILE};
use invsig::pipeline::service::SimilarResponse;
use invsig::pipeline::{self, BuildConfig, SynthSpec, SynthTruth, TRUTH_FILE};
use invsig::ranker::{self, RankMode, RankQuery};
use invsig::transform::{self, make_inverse, self_label};
use invsig::treelearn::{self, best_split, TreeParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_invsig");

const TRANSFORM_VECTORS: usize = 10_000;
const TREE_ORACLE_SETS: usize = 200;
const TREE_ORACLE_MAX_INSTANCES: usize = 12;
const RANKER_ORACLE_STORES: usize = 50;
const PLANTED_REQUIRED: usize = 10;
const NOISY_TOP: usize = 5;
const NOISY_REQUIRED: usize = 8;
const TIME_LIMIT: Duration = Duration::from_secs(60);

type Outcome = Result<String, String>;

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| format!("spawn {BIN}: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "`invsig {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn synth_cli(dir: &Path, seed: u64, instruments: usize, days: usize, pairs: usize, noise: f64) -> Result<SynthTruth, String> {
    run_cli(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        &seed.to_string(),
        "--instruments",
        &instruments.to_string(),
        "--days",
        &days.to_string(),
        "--planted-pairs",
        &pairs.to_string(),
        "--noise-sigma",
        &noise.to_string(),
    ])?;
    let text = fs::read_to_string(dir.join(TRUTH_FILE)).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn build_cli(input: &Path, store: &Path) -> Result<(), String> {
    run_cli(&["build", "--input", input.to_str().unwrap(), "--store", store.to_str().unwrap()]).map(|_| ())
}

fn query_cli(store: &Path, symbol: &str, top: usize) -> Result<SimilarResponse, String> {
    let out = run_cli(&[
        "query",
        "--store",
        store.to_str().unwrap(),
        "--symbol",
        symbol,
        "--mode",
        "inverse",
        "--top",
        &top.to_string(),
        "--format",
        "json",
    ])?;
    serde_json::from_str(&out).map_err(|e| format!("bad query JSON: {e}"))
}

fn tmp() -> TempDir {
    tempfile::tempdir().expect("tempdir")
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Store invariants plus disk round-trip, collected for the last criterion.
fn store_checks(store_dir: &Path) -> Result<NodeStore, String> {
    let store = NodeStore::open(store_dir).map_err(|e| e.to_string())?;
    let verdict = std::panic::catch_unwind(|| common::check_store_invariants(&store));
    verdict.map_err(|_| format!("store invariants violated in {}", store_dir.display()))?;
    Ok(store)
}

fn doubling_law() -> Outcome {
    let mut details = Vec::new();
    for m in [3usize, 200] {
        let dir = tmp();
        pipeline::generate_synthetic(&SynthSpec::new(11, m, 261, 0), dir.path()).map_err(|e| e.to_string())?;
        let series: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .map(|p| load_price_file(&p).unwrap())
            .collect();
        let calendar = ingest::build_calendar(&series, 0.5).map_err(|e| e.to_string())?;
        let universe = ingest::align(&series, &calendar, FillPolicy::default()).map_err(|e| e.to_string())?;
        let eligibility = ingest::slice_eligibility(&universe, 5);
        let k_max = universe.slice_count(5);
        for k in 1..=k_max {
            let ts = transform::build_training_set(&universe, k, 5).map_err(|e| e.to_string())?;
            let eligible = eligibility.iter().filter(|((_, kk), &e)| *kk == k && e).count();
            check(eligible == m, || format!("m={m} slice {k}: {eligible} eligible"))?;
            check(ts.len() == 2 * eligible, || {
                format!("m={m} slice {k}: {} instances for {eligible} eligible", ts.len())
            })?;
        }
        details.push(format!("m={m}: {k_max} slices x {} instances", 2 * m));
    }
    Ok(details.join("; "))
}

struct PlantedRun {
    ranks: Vec<Option<usize>>,
    elapsed: Duration,
}

fn planted_run(noise: f64, top: usize) -> Result<PlantedRun, String> {
    let input = tmp();
    let store_dir = tmp();
    let truth = synth_cli(input.path(), 42, 200, 261, 10, noise)?;
    let start = Instant::now();
    build_cli(input.path(), store_dir.path())?;
    let mut ranks = Vec::new();
    for pair in &truth.pairs {
        let resp = query_cli(store_dir.path(), &pair.original, top)?;
        ranks.push(resp.results.iter().find(|r| r.symbol == pair.inverse).map(|r| r.rank));
    }
    let elapsed = start.elapsed();
    store_checks(store_dir.path())?;
    Ok(PlantedRun { ranks, elapsed })
}

fn planted_exact() -> Outcome {
    let run = planted_run(0.0, 20)?;
    let hits = run.ranks.iter().filter(|r| **r == Some(1)).count();
    check(hits >= PLANTED_REQUIRED, || format!("partner ranked #1 for {hits}/10, ranks {:?}", run.ranks))?;
    check(run.elapsed < TIME_LIMIT, || format!("build+query took {:?}", run.elapsed))?;
    Ok(format!("{hits}/10 partners at rank 1; build+query {:.2?}", run.elapsed))
}

fn planted_noisy() -> Outcome {
    let run = planted_run(0.2, NOISY_TOP)?;
    let hits = run.ranks.iter().filter(|r| r.is_some()).count();
    let detail = format!(
        "observed {hits}/10 partners in top {NOISY_TOP} (ranks {:?}); build+query {:.2?}",
        run.ranks, run.elapsed
    );
    check(hits >= NOISY_REQUIRED, || detail.clone())?;
    Ok(detail)
}

fn scale_invariance() -> Outcome {
    let base = tmp();
    let scaled = tmp();
    pipeline::generate_synthetic(&SynthSpec::new(5, 60, 131, 5), base.path()).map_err(|e| e.to_string())?;
    let target = "SYN0007";
    for entry in fs::read_dir(base.path()).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_owned();
        if path.file_stem().unwrap() == target {
            let doubled = load_price_file(&path).unwrap().scaled(2.0);
            fs::write(scaled.path().join(&name), doubled.to_csv()).unwrap();
        } else {
            fs::copy(&path, scaled.path().join(&name)).unwrap();
        }
    }
    check(
        fs::read(base.path().join(format!("{target}.csv"))).unwrap()
            != fs::read(scaled.path().join(format!("{target}.csv"))).unwrap(),
        || "scaled file unchanged".into(),
    )?;

    let store_a = tmp();
    let store_b = tmp();
    let manifest_a = pipeline::build(&BuildConfig::new(base.path(), store_a.path())).map_err(|e| e.to_string())?;
    let manifest_b = pipeline::build(&BuildConfig::new(scaled.path(), store_b.path())).map_err(|e| e.to_string())?;
    for file in [NODES_FILE, RECORDS_FILE] {
        check(
            fs::read(store_a.path().join(file)).unwrap() == fs::read(store_b.path().join(file)).unwrap(),
            || format!("{file} differs after scaling {target}"),
        )?;
    }
    check(manifest_a.input_digest != manifest_b.input_digest, || "input digest did not change".into())?;
    let mut a = manifest_a.clone();
    a.input_digest = manifest_b.input_digest.clone();
    check(a == manifest_b, || "manifests differ beyond the input digest".into())?;

    let sa = store_checks(store_a.path())?;
    let sb = store_checks(store_b.path())?;
    let mut queries = 0;
    for symbol in sa.symbols() {
        for mode in [RankMode::Direct, RankMode::Inverse] {
            let q = RankQuery::new(symbol, mode).with_top_k(1000);
            check(ranker::rank(&sa, &q) == ranker::rank(&sb, &q), || format!("ranking differs for {symbol} {mode}"))?;
            queries += 1;
        }
    }
    Ok(format!(
        "tables byte-identical, manifests equal modulo input digest, {queries} rankings identical"
    ))
}

fn transform_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1d);
    for i in 0..TRANSFORM_VECTORS {
        let len = rng.random_range(1..=10);
        let x: Vec<f64> = (0..len)
            .map(|_| match rng.random_range(0..4) {
                0 => 0.0,
                1 => rng.random_range(-1.0..1.0) * 1e-3,
                _ => rng.random_range(-0.2..0.2),
            })
            .collect();
        let inv = make_inverse(&x);
        let back = make_inverse(&inv);
        check(back.iter().zip(&x).all(|(a, b)| a.to_bits() == b.to_bits()), || {
            format!("involution failed on vector {i}: {x:?}")
        })?;
        check(self_label(&inv).to_bits() == (-self_label(&x)).to_bits(), || {
            format!("antisymmetry failed on vector {i}: {x:?}")
        })?;
    }
    Ok(format!("{TRANSFORM_VECTORS} vectors, bit-exact"))
}

fn tree_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7ee);
    let mut mismatches = 0usize;
    let mut compared = 0usize;
    let mut first_mismatch = None;
    for set in 0..TREE_ORACLE_SETS {
        let n = rng.random_range(2..=TREE_ORACLE_MAX_INSTANCES);
        let width = rng.random_range(1..=5);
        let params = TreeParams {
            min_node_records: if rng.random_bool(0.7) { 2 } else { 3 },
            ..TreeParams::default()
        };
        let instances = common::random_instances(&mut rng, n, width);
        let ts = transform::SliceTrainingSet {
            slice_index: 1,
            instances,
        };
        let tree = treelearn::train_tree(&ts, &params).map_err(|e| e.to_string())?;
        for node in &tree.nodes {
            let oracle = common::brute_force_best_split(&ts.instances, &node.members, &params);
            let greedy = best_split(&ts.instances, &node.members, &params);
            let agree = match (node.split, oracle) {
                (Some(s), Some((f, t, r))) => {
                    let g = greedy.expect("split node has a candidate");
                    s.feature == f && s.threshold == t && (g.variance_reduction - r).abs() <= 1e-12
                }
                (None, None) => true,
                (None, Some(_)) => node.depth >= params.max_depth,
                (Some(_), None) => false,
            };
            compared += 1;
            if !agree {
                mismatches += 1;
                first_mismatch.get_or_insert(format!("set {set} node {}: tree {:?} oracle {oracle:?}", node.node_id, node.split));
            }
        }
    }
    check(mismatches == 0, || {
        format!("{mismatches} mismatches over {compared} nodes; first: {}", first_mismatch.unwrap())
    })?;
    Ok(format!("{TREE_ORACLE_SETS} training sets, {compared} nodes, 0 mismatches"))
}

fn ranker_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4a4b);
    let mut queries = 0;
    for i in 0..RANKER_ORACLE_STORES {
        let (store, symbols) = common::random_store(&mut rng);
        std::panic::catch_unwind(|| common::check_store_invariants(&store))
            .map_err(|_| format!("random store {i} violates invariants"))?;
        for symbol in &symbols {
            for mode in [RankMode::Direct, RankMode::Inverse] {
                let q = RankQuery::new(symbol.clone(), mode).with_top_k(rng.random_range(1..12));
                let fast = ranker::rank(&store, &q).map_err(|e| e.to_string())?;
                let slow = ranker::rank_bruteforce(&store, &q).map_err(|e| e.to_string())?;
                check(fast == slow, || format!("store {i} query {q:?}: {fast:?} vs {slow:?}"))?;
                queries += 1;
            }
        }
    }
    Ok(format!("{RANKER_ORACLE_STORES} stores, {queries} queries, exact equality"))
}

fn determinism() -> Outcome {
    let input = tmp();
    pipeline::generate_synthetic(&SynthSpec::new(42, 200, 261, 10), input.path()).map_err(|e| e.to_string())?;
    let mut contents = Vec::new();
    for jobs in [1usize, 1, 8] {
        let out = tmp();
        let config = BuildConfig {
            jobs,
            ..BuildConfig::new(input.path(), out.path())
        };
        pipeline::build(&config).map_err(|e| e.to_string())?;
        store_checks(out.path())?;
        contents.push((jobs, common::dir_contents(out.path())));
    }
    let reference = &contents[0].1;
    check(
        reference.keys().collect::<Vec<_>>() == vec![MANIFEST_FILE, NODES_FILE, RECORDS_FILE],
        || format!("unexpected store files {:?}", reference.keys().collect::<Vec<_>>()),
    )?;
    for (jobs, c) in &contents[1..] {
        check(c == reference, || format!("store built with jobs={jobs} differs"))?;
    }
    Ok("serial x2 and jobs=8 stores byte-identical".into())
}

fn store_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5707e);
    let mut stores = 0;
    for i in 0..25 {
        let (store, _) = common::random_store(&mut rng);
        let dir = tmp();
        nodestore::write_store(store.manifest(), store.metas(), store.records(), dir.path()).map_err(|e| e.to_string())?;
        let reopened = store_checks(dir.path())?;
        check(reopened.metas() == store.metas(), || format!("store {i}: metas changed on round trip"))?;
        check(reopened.records() == store.records(), || format!("store {i}: records changed on round trip"))?;
        stores += 1;
    }

    // a real build, opened through the public API
    let input = tmp();
    let out = tmp();
    pipeline::generate_synthetic(&SynthSpec::new(9, 40, 66, 3), input.path()).map_err(|e| e.to_string())?;
    let manifest = pipeline::build(&BuildConfig::new(input.path(), out.path())).map_err(|e| e.to_string())?;
    let store = store_checks(out.path())?;
    check(store.manifest() == &manifest, || "reopened manifest differs".into())?;
    stores += 1;
    Ok(format!("{stores} stores round-tripped; counts, filter and containment duality hold (plus every store above)"))
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("doubling law (m=3, m=200)", doubling_law),
        ("planted exact-inverse recovery (10/10 at #1, < 60 s)", planted_exact),
        ("noisy-inverse robustness (>= 8/10 in top 5)", planted_noisy),
        ("scale invariance (x2.0 price file)", scale_invariance),
        ("transform identities (10^4 vectors, bit-exact)", transform_identities),
        ("tree oracle (200 sets of <= 12 instances)", tree_oracle),
        ("ranker oracle (50 random stores)", ranker_oracle),
        ("determinism (repeat and jobs 1 vs 8)", determinism),
        ("store round-trip and consistency invariants", store_round_trip),
    ];

    let mut failed = 0;
    let mut summary = BTreeMap::new();
    for (name, criterion) in &criteria {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(criterion).unwrap_or_else(|_| Err("panicked".into()));
        let took = started.elapsed();
        match &outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{took:.2?}]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{took:.2?}]");
            }
        }
        summary.insert(*name, outcome.is_ok());
    }
    println!(
        "acceptance: {} passed, {} failed",
        summary.values().filter(|ok| **ok).count(),
        failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
