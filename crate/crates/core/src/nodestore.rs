//! The classification-results store: filtered node membership tables.
//!
//! Layout of a store directory (format version 1):
//!
//! - `manifest.json`: [`StoreManifest`], keys sorted, with sha256 checksums of
//!   the two tables
//! - `nodes.tsv`: `slice	node	count	variance`
//! - `records.tsv`: `slice	node	symbol	polarity`, polarity `O` or `I`
//!
//! Rows are sorted, and writing the same inputs twice produces identical bytes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::transform::Polarity;
use crate::treelearn::{Tree, TreeParams};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const NODES_FILE: &str = "nodes.tsv";
pub const RECORDS_FILE: &str = "records.tsv";
pub const NODES_HEADER: &str = "slice\tnode\tcount\tvariance";
pub const RECORDS_HEADER: &str = "slice\tnode\tsymbol\tpolarity";

pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 1e-4;
pub const DEFAULT_MAX_NODE_RECORDS: usize = 50;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("store corrupt: {0}")]
    Corrupt(String),
    #[error("manifest/count mismatch: {0}")]
    CountMismatch(String),
    #[error("unknown node (slice {slice_index}, node {node_id})")]
    UnknownNode { slice_index: usize, node_id: usize },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One row of the classification-results table.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeRecord {
    pub slice_index: usize,
    pub node_id: usize,
    pub symbol: String,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMeta {
    pub slice_index: usize,
    pub node_id: usize,
    pub record_count: usize,
    pub label_variance: f64,
}

impl NodeMeta {
    fn key(&self) -> (usize, usize) {
        (self.slice_index, self.node_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub calendar_days: usize,
    pub calendar_end: Option<String>,
    pub calendar_start: Option<String>,
    /// Hash of the build parameters that shape the store.
    pub config_hash: String,
    /// sha256 of each table file, filled in by [`write_store`].
    pub files: BTreeMap<String, String>,
    pub fill_policy: crate::ingest::FillPolicy,
    pub format_version: u32,
    pub h: usize,
    /// Hash over every input file's symbol and content.
    pub input_digest: String,
    pub instrument_count: usize,
    pub k_max: usize,
    pub max_node_records: usize,
    pub min_presence: f64,
    pub skipped_slices: Vec<usize>,
    pub symbols: Vec<String>,
    pub total_nodes: usize,
    pub total_records: usize,
    pub tree_params: TreeParams,
    pub trees: usize,
    pub variance_threshold: f64,
}

impl StoreManifest {
    /// Canonical JSON: object keys sorted at every level, trailing newline.
    pub fn to_canonical_json(&self) -> Result<String, StoreError> {
        let value = serde_json::to_value(self)?;
        let mut out = serde_json::to_string_pretty(&sort_keys(value))?;
        out.push('\n');
        Ok(out)
    }
}

fn sort_keys(value: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match value {
        Value::Object(map) => {
            let sorted: BTreeMap<String, Value> = map.into_iter().map(|(k, v)| (k, sort_keys(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

/// Nodes of `tree` with 2..=max_node_records members and label variance at
/// most `variance_threshold`, plus one record per member. Ordered by node id,
/// then member order.
pub fn extract_node_records(
    tree: &Tree,
    variance_threshold: f64,
    max_node_records: usize,
) -> (Vec<NodeMeta>, Vec<NodeRecord>) {
    let mut metas = Vec::new();
    let mut records = Vec::new();
    for node in &tree.nodes {
        let count = node.members.len();
        if count < 2 || count > max_node_records || !(node.label_variance <= variance_threshold) {
            continue;
        }
        metas.push(NodeMeta {
            slice_index: tree.slice_index,
            node_id: node.node_id,
            record_count: count,
            label_variance: node.label_variance,
        });
        records.extend(node.members.iter().map(|&i| {
            let (symbol, polarity) = tree.key(i);
            NodeRecord {
                slice_index: tree.slice_index,
                node_id: node.node_id,
                symbol: symbol.to_string(),
                polarity,
            }
        }));
    }
    (metas, records)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn render_nodes(metas: &[NodeMeta]) -> String {
    let mut out = String::with_capacity(32 * (metas.len() + 1));
    out.push_str(NODES_HEADER);
    out.push('\n');
    for m in metas {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            m.slice_index, m.node_id, m.record_count, m.label_variance
        ));
    }
    out
}

fn render_records(records: &[NodeRecord]) -> String {
    let mut out = String::with_capacity(24 * (records.len() + 1));
    out.push_str(RECORDS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", r.slice_index, r.node_id, r.symbol, r.polarity));
    }
    out
}

/// Checks record/node consistency and the storage filter. Inputs must already
/// be sorted.
fn check_consistency(manifest: &StoreManifest, metas: &[NodeMeta], records: &[NodeRecord]) -> Result<(), StoreError> {
    if manifest.total_records != records.len() {
        return Err(StoreError::CountMismatch(format!(
            "manifest says {} records, found {}",
            manifest.total_records,
            records.len()
        )));
    }
    if manifest.total_nodes != metas.len() {
        return Err(StoreError::CountMismatch(format!(
            "manifest says {} nodes, found {}",
            manifest.total_nodes,
            metas.len()
        )));
    }
    if let Some(w) = metas.windows(2).find(|w| w[0].key() >= w[1].key()) {
        return Err(StoreError::Corrupt(format!("node {:?} out of order or duplicated", w[1].key())));
    }
    if let Some(w) = records.windows(2).find(|w| w[0] >= w[1]) {
        return Err(StoreError::Corrupt(format!(
            "record ({}, {}, {}, {}) out of order or duplicated",
            w[1].slice_index, w[1].node_id, w[1].symbol, w[1].polarity
        )));
    }
    for m in metas {
        if m.record_count < 2 || m.record_count > manifest.max_node_records {
            return Err(StoreError::Corrupt(format!(
                "node {:?} has {} records, outside 2..={}",
                m.key(),
                m.record_count,
                manifest.max_node_records
            )));
        }
        if !(m.label_variance <= manifest.variance_threshold) {
            return Err(StoreError::Corrupt(format!(
                "node {:?} variance {} exceeds threshold {}",
                m.key(),
                m.label_variance,
                manifest.variance_threshold
            )));
        }
    }
    let mut pos = 0;
    for m in metas {
        let start = pos;
        while pos < records.len() && (records[pos].slice_index, records[pos].node_id) == m.key() {
            pos += 1;
        }
        if pos - start != m.record_count {
            return Err(StoreError::CountMismatch(format!(
                "node {:?} declares {} records, found {}",
                m.key(),
                m.record_count,
                pos - start
            )));
        }
    }
    if pos != records.len() {
        let r = &records[pos];
        return Err(StoreError::Corrupt(format!(
            "record references unknown node ({}, {})",
            r.slice_index, r.node_id
        )));
    }
    Ok(())
}

/// Writes the three store files into `dir` (created if needed) and returns
/// the manifest with its file checksums filled in.
pub fn write_store(
    manifest: &StoreManifest,
    metas: &[NodeMeta],
    records: &[NodeRecord],
    dir: &Path,
) -> Result<StoreManifest, StoreError> {
    let mut metas = metas.to_vec();
    metas.sort_by_key(NodeMeta::key);
    let mut records = records.to_vec();
    records.sort();
    check_consistency(manifest, &metas, &records)?;

    let nodes_text = render_nodes(&metas);
    let records_text = render_records(&records);
    let mut manifest = manifest.clone();
    manifest.format_version = FORMAT_VERSION;
    manifest.files = BTreeMap::from([
        (NODES_FILE.to_string(), sha256_hex(nodes_text.as_bytes())),
        (RECORDS_FILE.to_string(), sha256_hex(records_text.as_bytes())),
    ]);

    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, body) in [
        (NODES_FILE, nodes_text),
        (RECORDS_FILE, records_text),
        (MANIFEST_FILE, manifest.to_canonical_json()?),
    ] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(manifest)
}

/// An opened, validated store with in-memory containment indexes. Immutable.
#[derive(Debug, Clone)]
pub struct NodeStore {
    manifest: StoreManifest,
    metas: Vec<NodeMeta>,
    records: Vec<NodeRecord>,
    spans: BTreeMap<(usize, usize), Range<usize>>,
    containing: HashMap<(String, Polarity), Vec<(usize, usize)>>,
    symbols: BTreeSet<String>,
}

impl NodeStore {
    /// Builds a store from in-memory tables, validating them as `open` would.
    pub fn from_parts(
        manifest: StoreManifest,
        mut metas: Vec<NodeMeta>,
        mut records: Vec<NodeRecord>,
    ) -> Result<Self, StoreError> {
        metas.sort_by_key(NodeMeta::key);
        records.sort();
        check_consistency(&manifest, &metas, &records)?;

        let symbols: BTreeSet<String> = manifest.symbols.iter().cloned().collect();
        let mut spans = BTreeMap::new();
        let mut containing: HashMap<(String, Polarity), Vec<(usize, usize)>> = HashMap::new();
        let mut pos = 0;
        for m in &metas {
            let span = pos..pos + m.record_count;
            for r in &records[span.clone()] {
                if !symbols.contains(&r.symbol) {
                    return Err(StoreError::Corrupt(format!("record symbol `{}` missing from manifest", r.symbol)));
                }
                containing
                    .entry((r.symbol.clone(), r.polarity))
                    .or_default()
                    .push(m.key());
            }
            pos = span.end;
            spans.insert(m.key(), span);
        }

        Ok(Self {
            manifest,
            metas,
            records,
            spans,
            containing,
            symbols,
        })
    }

    /// Opens a store directory, verifying checksums and counts.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(io_err(&path))
        };
        let manifest: StoreManifest = serde_json::from_str(&read(MANIFEST_FILE)?)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(StoreError::Corrupt(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        let nodes_text = read(NODES_FILE)?;
        let records_text = read(RECORDS_FILE)?;
        for (name, text) in [(NODES_FILE, &nodes_text), (RECORDS_FILE, &records_text)] {
            let expected = manifest
                .files
                .get(name)
                .ok_or_else(|| StoreError::Corrupt(format!("manifest has no checksum for {name}")))?;
            if &sha256_hex(text.as_bytes()) != expected {
                return Err(StoreError::Corrupt(format!("checksum mismatch for {name}")));
            }
        }
        let metas = parse_nodes(&nodes_text)?;
        let records = parse_records(&records_text)?;
        Self::from_parts(manifest, metas, records)
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    pub fn metas(&self) -> &[NodeMeta] {
        &self.metas
    }

    /// All records, sorted (slice, node, symbol, polarity).
    pub fn records(&self) -> &[NodeRecord] {
        &self.records
    }

    /// Every symbol of the build universe, whether or not it was stored.
    pub fn symbols(&self) -> impl Iterator<Item = &str> {
        self.symbols.iter().map(String::as_str)
    }

    pub fn knows_symbol(&self, symbol: &str) -> bool {
        self.symbols.contains(symbol)
    }

    pub fn meta(&self, slice_index: usize, node_id: usize) -> Option<&NodeMeta> {
        let span = self.spans.get(&(slice_index, node_id))?;
        let idx = self.metas.binary_search_by_key(&(slice_index, node_id), NodeMeta::key).ok()?;
        debug_assert_eq!(self.metas[idx].record_count, span.len());
        Some(&self.metas[idx])
    }

    /// Stored nodes holding the (symbol, polarity) record, sorted.
    pub fn query_nodes_containing(&self, symbol: &str, polarity: Polarity) -> &[(usize, usize)] {
        self.containing
            .get(&(symbol.to_string(), polarity))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Records of one stored node, sorted by (symbol, polarity).
    pub fn node_records(&self, slice_index: usize, node_id: usize) -> Result<&[NodeRecord], StoreError> {
        self.spans
            .get(&(slice_index, node_id))
            .map(|span| &self.records[span.clone()])
            .ok_or(StoreError::UnknownNode { slice_index, node_id })
    }

    pub fn node_members_from_store(
        &self,
        slice_index: usize,
        node_id: usize,
    ) -> Result<Vec<(String, Polarity)>, StoreError> {
        Ok(self
            .node_records(slice_index, node_id)?
            .iter()
            .map(|r| (r.symbol.clone(), r.polarity))
            .collect())
    }
}

fn table_lines<'a>(text: &'a str, header: &str, name: &str) -> Result<impl Iterator<Item = (usize, &'a str)>, StoreError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == header => Ok(lines.map(|(i, l)| (i + 1, l))),
        _ => Err(StoreError::Corrupt(format!("{name}: bad header"))),
    }
}

fn field<T: std::str::FromStr>(value: Option<&str>, name: &str, line: usize) -> Result<T, StoreError> {
    value
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| StoreError::Corrupt(format!("{name}:{line}: bad row")))
}

fn parse_nodes(text: &str) -> Result<Vec<NodeMeta>, StoreError> {
    table_lines(text, NODES_HEADER, NODES_FILE)?
        .map(|(line, row)| {
            let mut cols = row.split('\t');
            let meta = NodeMeta {
                slice_index: field(cols.next(), NODES_FILE, line)?,
                node_id: field(cols.next(), NODES_FILE, line)?,
                record_count: field(cols.next(), NODES_FILE, line)?,
                label_variance: field(cols.next(), NODES_FILE, line)?,
            };
            if cols.next().is_some() {
                return Err(StoreError::Corrupt(format!("{NODES_FILE}:{line}: extra columns")));
            }
            Ok(meta)
        })
        .collect()
}

fn parse_records(text: &str) -> Result<Vec<NodeRecord>, StoreError> {
    table_lines(text, RECORDS_HEADER, RECORDS_FILE)?
        .map(|(line, row)| {
            let mut cols = row.split('\t');
            let record = NodeRecord {
                slice_index: field(cols.next(), RECORDS_FILE, line)?,
                node_id: field(cols.next(), RECORDS_FILE, line)?,
                symbol: field(cols.next(), RECORDS_FILE, line)?,
                polarity: field(cols.next(), RECORDS_FILE, line)?,
            };
            if cols.next().is_some() {
                return Err(StoreError::Corrupt(format!("{RECORDS_FILE}:{line}: extra columns")));
            }
            Ok(record)
        })
        .collect()
}
