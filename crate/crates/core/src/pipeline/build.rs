use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use tracing::{debug, info};

use super::PipelineError;
use crate::ingest::{self, FillPolicy, PriceSeries, DEFAULT_MIN_PRESENCE};
use crate::nodestore::{
    self, NodeMeta, NodeRecord, StoreManifest, DEFAULT_MAX_NODE_RECORDS, DEFAULT_VARIANCE_THRESHOLD, FORMAT_VERSION,
};
use crate::transform::{self, DEFAULT_SLICE_WIDTH};
use crate::treelearn::{self, TreeParams};

#[derive(Debug, Clone, PartialEq)]
pub struct BuildConfig {
    pub input_dir: PathBuf,
    pub store_dir: PathBuf,
    pub h: usize,
    pub variance_threshold: f64,
    pub max_node_records: usize,
    pub tree: TreeParams,
    pub fill: FillPolicy,
    pub min_presence: f64,
    /// Worker threads for loading and per-slice training.
    pub jobs: usize,
}

impl BuildConfig {
    pub fn new(input_dir: impl Into<PathBuf>, store_dir: impl Into<PathBuf>) -> Self {
        Self {
            input_dir: input_dir.into(),
            store_dir: store_dir.into(),
            h: DEFAULT_SLICE_WIDTH,
            variance_threshold: DEFAULT_VARIANCE_THRESHOLD,
            max_node_records: DEFAULT_MAX_NODE_RECORDS,
            tree: TreeParams::default(),
            fill: FillPolicy::default(),
            min_presence: DEFAULT_MIN_PRESENCE,
            jobs: 1,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::InvalidConfig(msg));
        if self.h == 0 {
            return bad("h must be at least 1".into());
        }
        if !(self.variance_threshold >= 0.0) {
            return bad(format!("variance threshold must be >= 0, got {}", self.variance_threshold));
        }
        if self.max_node_records < 2 {
            return bad(format!("max node records must be >= 2, got {}", self.max_node_records));
        }
        if !(self.min_presence > 0.0 && self.min_presence <= 1.0) {
            return bad(format!("min presence must lie in (0, 1], got {}", self.min_presence));
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        self.tree.validate()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct HashedConfig<'a> {
    fill_policy: &'a FillPolicy,
    format_version: u32,
    h: usize,
    max_node_records: usize,
    min_presence: f64,
    tree_params: &'a TreeParams,
    variance_threshold: f64,
}

/// sha256 of the parameters that determine store content. Paths and the
/// worker count are excluded.
pub fn config_hash(config: &BuildConfig) -> String {
    let hashed = HashedConfig {
        fill_policy: &config.fill,
        format_version: FORMAT_VERSION,
        h: config.h,
        max_node_records: config.max_node_records,
        min_presence: config.min_presence,
        tree_params: &config.tree,
        variance_threshold: config.variance_threshold,
    };
    let json = serde_json::to_string(&hashed).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceReport {
    pub slice_index: usize,
    pub eligible: usize,
    /// Zero when the slice was skipped.
    pub tree_nodes: usize,
    pub stored_nodes: usize,
    pub stored_records: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildReport {
    pub manifest: StoreManifest,
    pub slices: Vec<SliceReport>,
}

struct LoadedFile {
    series: PriceSeries,
    digest: String,
}

fn load_file(path: &Path) -> Result<LoadedFile, PipelineError> {
    let symbol = ingest::symbol_from_path(path)?;
    let bytes = fs::read(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let text = std::str::from_utf8(&bytes).map_err(|e| ingest::IngestError::MalformedRow {
        path: path.to_path_buf(),
        line: 0,
        reason: format!("not UTF-8: {e}"),
    })?;
    let series = ingest::parse_price_csv(&symbol, text, path)?;
    Ok(LoadedFile {
        series,
        digest: hex::encode(Sha256::digest(&bytes)),
    })
}

fn list_inputs(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let entries = fs::read_dir(dir).map_err(|source| PipelineError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|source| PipelineError::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .path();
        if path.is_file() && path.extension().is_some_and(|e| e == "csv") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(PipelineError::EmptyInput(dir.to_path_buf()));
    }
    Ok(files)
}

pub fn build(config: &BuildConfig) -> Result<StoreManifest, PipelineError> {
    build_with_report(config).map(|r| r.manifest)
}

/// Runs ingest, transform, tree learning and extraction for every slice, then
/// writes the store. Slices are processed by `config.jobs` workers and merged
/// in slice order, so the output does not depend on the worker count.
pub fn build_with_report(config: &BuildConfig) -> Result<BuildReport, PipelineError> {
    config.validate()?;
    let files = list_inputs(&config.input_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| PipelineError::ThreadPool(e.to_string()))?;

    pool.install(|| run(config, &files))
}

type SliceOutcome = (SliceReport, Vec<NodeMeta>, Vec<NodeRecord>);

fn run(config: &BuildConfig, files: &[PathBuf]) -> Result<BuildReport, PipelineError> {
    let loaded: Vec<LoadedFile> = files.par_iter().map(|p| load_file(p)).collect::<Result<_, _>>()?;
    info!(instruments = loaded.len(), "loaded price files");

    let mut input_hasher = Sha256::new();
    for file in &loaded {
        input_hasher.update(format!("{}\t{}\n", file.series.symbol(), file.digest).as_bytes());
    }
    let input_digest = hex::encode(input_hasher.finalize());

    let all_series: Vec<PriceSeries> = loaded.into_iter().map(|f| f.series).collect();
    let calendar = ingest::build_calendar(&all_series, config.min_presence)?;
    if calendar.len() < config.h + 1 {
        return Err(PipelineError::CalendarTooShort {
            days: calendar.len(),
            h: config.h,
        });
    }
    let universe = ingest::align(&all_series, &calendar, config.fill)?;
    let k_max = universe.slice_count(config.h);
    info!(days = calendar.len(), k_max, "aligned universe");

    let outcomes: Vec<SliceOutcome> = (1..=k_max)
        .into_par_iter()
        .map(|k| -> Result<SliceOutcome, PipelineError> {
            let training_set = transform::build_training_set(&universe, k, config.h)?;
            let eligible = training_set.instrument_count();
            if eligible < 2 {
                info!(slice = k, eligible, "skipping slice with fewer than 2 eligible instruments");
                let report = SliceReport {
                    slice_index: k,
                    eligible,
                    tree_nodes: 0,
                    stored_nodes: 0,
                    stored_records: 0,
                };
                return Ok((report, Vec::new(), Vec::new()));
            }
            let tree = treelearn::train_tree(&training_set, &config.tree)?;
            let (metas, records) =
                nodestore::extract_node_records(&tree, config.variance_threshold, config.max_node_records);
            debug!(
                slice = k,
                eligible,
                tree_nodes = tree.nodes.len(),
                stored_nodes = metas.len(),
                stored_records = records.len(),
                "trained slice"
            );
            let report = SliceReport {
                slice_index: k,
                eligible,
                tree_nodes: tree.nodes.len(),
                stored_nodes: metas.len(),
                stored_records: records.len(),
            };
            Ok((report, metas, records))
        })
        .collect::<Result<_, _>>()?;

    let mut reports = Vec::with_capacity(outcomes.len());
    let mut metas = Vec::new();
    let mut records = Vec::new();
    for (report, m, r) in outcomes {
        reports.push(report);
        metas.extend(m);
        records.extend(r);
    }
    let skipped_slices: Vec<usize> = reports
        .iter()
        .filter(|r| r.tree_nodes == 0)
        .map(|r| r.slice_index)
        .collect();
    let trees = reports.len() - skipped_slices.len();
    if trees == 0 {
        return Err(PipelineError::NoEligibleSlices);
    }

    let manifest = StoreManifest {
        calendar_days: calendar.len(),
        calendar_end: Some(calendar.last().to_string()),
        calendar_start: Some(calendar.first().to_string()),
        config_hash: config_hash(config),
        files: Default::default(),
        fill_policy: config.fill,
        format_version: FORMAT_VERSION,
        h: config.h,
        input_digest,
        instrument_count: universe.len(),
        k_max,
        max_node_records: config.max_node_records,
        min_presence: config.min_presence,
        skipped_slices,
        symbols: universe.symbols().map(str::to_string).collect(),
        total_nodes: metas.len(),
        total_records: records.len(),
        tree_params: config.tree,
        trees,
        variance_threshold: config.variance_threshold,
    };
    let manifest = nodestore::write_store(&manifest, &metas, &records, &config.store_dir)?;
    info!(
        trees,
        nodes = manifest.total_nodes,
        records = manifest.total_records,
        store = %config.store_dir.display(),
        "store written"
    );
    Ok(BuildReport {
        manifest,
        slices: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    #[test]
    fn empty_input_dir_is_an_error() {
        let input = tempfile::tempdir().unwrap();
        let store = tempfile::tempdir().unwrap();
        let err = build(&BuildConfig::new(input.path(), store.path())).unwrap_err();
        assert!(matches!(err, PipelineError::EmptyInput(_)));
    }

    #[test]
    fn short_calendar_is_an_error() {
        let input = tempfile::tempdir().unwrap();
        let store = tempfile::tempdir().unwrap();
        write(input.path(), "A.csv", "date,adj_close\n2011-01-03,1\n2011-01-04,2\n");
        let err = build(&BuildConfig::new(input.path(), store.path())).unwrap_err();
        assert!(matches!(err, PipelineError::CalendarTooShort { days: 2, h: 5 }));
    }

    #[test]
    fn single_instrument_has_no_eligible_slice() {
        let input = tempfile::tempdir().unwrap();
        let store = tempfile::tempdir().unwrap();
        let mut body = String::from("date,adj_close\n");
        for d in 3..=9 {
            body.push_str(&format!("2011-01-{d:02},{}\n", d as f64));
        }
        write(input.path(), "A.csv", &body);
        let err = build(&BuildConfig::new(input.path(), store.path())).unwrap_err();
        assert!(matches!(err, PipelineError::NoEligibleSlices));
    }

    #[test]
    fn bad_file_propagates() {
        let input = tempfile::tempdir().unwrap();
        let store = tempfile::tempdir().unwrap();
        write(input.path(), "A.csv", "date,adj_close\n2011-01-03,0\n");
        let err = build(&BuildConfig::new(input.path(), store.path())).unwrap_err();
        assert!(matches!(err, PipelineError::Ingest(ingest::IngestError::NonPositivePrice { .. })));
    }

    #[test]
    fn config_validation() {
        let mut c = BuildConfig::new("a", "b");
        assert!(c.validate().is_ok());
        c.h = 0;
        assert!(c.validate().is_err());
        let mut c = BuildConfig::new("a", "b");
        c.tree.min_node_records = 1;
        assert!(c.validate().is_err());
        let mut c = BuildConfig::new("a", "b");
        c.jobs = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_hash_ignores_paths_and_jobs() {
        let a = BuildConfig::new("a", "b");
        let mut b = BuildConfig::new("c", "d");
        b.jobs = 8;
        assert_eq!(config_hash(&a), config_hash(&b));
        b.h = 4;
        assert_ne!(config_hash(&a), config_hash(&b));
    }
}
