#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use invsig::nodestore::{NodeMeta, NodeRecord, NodeStore, StoreManifest, FORMAT_VERSION};
use invsig::transform::{LabeledInstance, Polarity};
use invsig::treelearn::{TreeParams, SPLIT_TIE_EPS};
use rand::seq::SliceRandom;
use rand::Rng;

/// Population variance by direct two-pass evaluation.
fn variance(labels: &[f64]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let n = labels.len() as f64;
    let mean = labels.iter().sum::<f64>() / n;
    labels.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n
}

/// Every (feature, midpoint) candidate evaluated by explicit partitioning.
///
/// Candidates are scanned in (feature, threshold) order and a later one wins
/// only if it beats the incumbent by more than the relative tie slack, the
/// same acceptance rule the tree uses. Returns (feature, threshold, reduction).
pub fn brute_force_best_split(
    instances: &[LabeledInstance],
    members: &[usize],
    params: &TreeParams,
) -> Option<(usize, f64, f64)> {
    let n = members.len();
    if n < 2 * params.min_node_records {
        return None;
    }
    let labels: Vec<f64> = members.iter().map(|&i| instances[i].label).collect();
    let parent = variance(&labels);
    let scale = labels.iter().map(|y| y * y).sum::<f64>() / n as f64;
    let tol = SPLIT_TIE_EPS * scale;
    let width = instances[members[0]].features.len();

    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..width {
        let mut values: Vec<f64> = members.iter().map(|&i| instances[i].features[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for pair in values.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            let mid = (lo + hi) * 0.5;
            let threshold = if mid < hi { mid } else { lo };
            let mut left = Vec::new();
            let mut right = Vec::new();
            for &i in members {
                if instances[i].features[f] <= threshold {
                    left.push(instances[i].label);
                } else {
                    right.push(instances[i].label);
                }
            }
            if left.len() < params.min_node_records || right.len() < params.min_node_records {
                continue;
            }
            let weighted = (left.len() as f64 * variance(&left) + right.len() as f64 * variance(&right)) / n as f64;
            let reduction = parent - weighted;
            if reduction <= params.min_variance_reduction + tol {
                continue;
            }
            if best.is_some_and(|(_, _, b)| reduction <= b + tol) {
                continue;
            }
            best = Some((f, threshold, reduction));
        }
    }
    best
}

/// Random training set: `n` instances of `width` features. Feature values are
/// drawn from a small grid half of the time to provoke duplicate values.
pub fn random_instances(rng: &mut impl Rng, n: usize, width: usize) -> Vec<LabeledInstance> {
    let gridded = rng.random_bool(0.5);
    (0..n)
        .map(|i| {
            let features: Vec<f64> = (0..width)
                .map(|_| {
                    if gridded {
                        rng.random_range(-3i32..=3) as f64 * 0.01
                    } else {
                        rng.random_range(-0.05..0.05)
                    }
                })
                .collect();
            let label = if rng.random_bool(0.3) {
                features.iter().sum::<f64>()
            } else {
                rng.random_range(-0.1..0.1)
            };
            LabeledInstance {
                symbol: format!("T{i:02}"),
                polarity: Polarity::Original,
                slice_index: 1,
                features,
                label,
            }
        })
        .collect()
}

pub fn blank_manifest(symbols: Vec<String>, metas: &[NodeMeta], records: &[NodeRecord]) -> StoreManifest {
    StoreManifest {
        calendar_days: 0,
        calendar_end: None,
        calendar_start: None,
        config_hash: String::new(),
        files: BTreeMap::new(),
        fill_policy: Default::default(),
        format_version: FORMAT_VERSION,
        h: 5,
        input_digest: String::new(),
        instrument_count: symbols.len(),
        k_max: metas.iter().map(|m| m.slice_index).max().unwrap_or(0),
        max_node_records: 50,
        min_presence: 0.5,
        skipped_slices: vec![],
        symbols,
        total_nodes: metas.len(),
        total_records: records.len(),
        tree_params: TreeParams::default(),
        trees: 0,
        variance_threshold: 1e-4,
    }
}

/// A random store: a few slices, each with a handful of nodes drawn over a
/// small symbol universe. Returns the store and its symbols.
pub fn random_store(rng: &mut impl Rng) -> (NodeStore, Vec<String>) {
    let n_symbols = rng.random_range(2..10);
    let symbols: Vec<String> = (0..n_symbols).map(|i| format!("R{i}")).collect();
    let keys: Vec<(String, Polarity)> = symbols
        .iter()
        .flat_map(|s| [(s.clone(), Polarity::Original), (s.clone(), Polarity::Inverse)])
        .collect();

    let mut metas = Vec::new();
    let mut records = Vec::new();
    for slice_index in 1..=rng.random_range(1..5) {
        for node_id in 0..rng.random_range(0..8) {
            if rng.random_bool(0.3) {
                continue;
            }
            let size = rng.random_range(2..=keys.len().min(8));
            let mut picked = keys.clone();
            picked.shuffle(rng);
            picked.truncate(size);
            metas.push(NodeMeta {
                slice_index,
                node_id,
                record_count: size,
                label_variance: rng.random_range(0.0..1e-4),
            });
            for (symbol, polarity) in picked {
                records.push(NodeRecord {
                    slice_index,
                    node_id,
                    symbol,
                    polarity,
                });
            }
        }
    }
    let manifest = blank_manifest(symbols.clone(), &metas, &records);
    (NodeStore::from_parts(manifest, metas, records).expect("valid random store"), symbols)
}

/// Asserts round-trip, count consistency, filter soundness and containment
/// duality on a store.
pub fn check_store_invariants(store: &NodeStore) {
    let m = store.manifest();
    assert_eq!(m.total_records, store.records().len());
    assert_eq!(m.total_nodes, store.metas().len());
    assert_eq!(
        store.metas().iter().map(|n| n.record_count).sum::<usize>(),
        store.records().len()
    );
    for meta in store.metas() {
        assert!(meta.record_count >= 2 && meta.record_count <= m.max_node_records);
        assert!(meta.label_variance <= m.variance_threshold);
        let members = store.node_members_from_store(meta.slice_index, meta.node_id).unwrap();
        assert_eq!(members.len(), meta.record_count);
        let mut sorted = members.clone();
        sorted.sort();
        assert_eq!(members, sorted);
        for (s, p) in &members {
            assert!(store
                .query_nodes_containing(s, *p)
                .contains(&(meta.slice_index, meta.node_id)));
        }
    }
    for symbol in store.symbols() {
        for p in [Polarity::Original, Polarity::Inverse] {
            let nodes = store.query_nodes_containing(symbol, p);
            assert!(nodes.windows(2).all(|w| w[0] < w[1]));
            for &(s, n) in nodes {
                let members = store.node_members_from_store(s, n).unwrap();
                assert!(members.iter().any(|(x, q)| x == symbol && *q == p));
            }
        }
    }
}

/// File name -> bytes for every file in `dir`.
pub fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).unwrap())
        })
        .collect()
}
