//! Co-occurrence ranking over stored nodes.
//!
//! For a query symbol S, every stored node holding S's original record is
//! visited, and each other instrument gains one count per visited node in
//! which it appears with the polarity selected by the mode: inverse records
//! for inverse mode, original records for direct mode.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nodestore::{NodeRecord, NodeStore};
use crate::transform::Polarity;

pub const DEFAULT_TOP_K: usize = 20;
/// Size guard for [`rank_bruteforce`].
pub const BRUTEFORCE_MAX_RECORDS: usize = 100_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RankError {
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("top_k must be positive")]
    ZeroTopK,
    #[error("store has {records} records; brute force is limited to {limit}")]
    StoreTooLarge { records: usize, limit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankMode {
    Direct,
    Inverse,
}

impl RankMode {
    /// Polarity of co-member records that score in this mode.
    pub fn counted_polarity(self) -> Polarity {
        match self {
            RankMode::Direct => Polarity::Original,
            RankMode::Inverse => Polarity::Inverse,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RankMode::Direct => "direct",
            RankMode::Inverse => "inverse",
        }
    }
}

impl fmt::Display for RankMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RankMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(RankMode::Direct),
            "inverse" => Ok(RankMode::Inverse),
            other => Err(format!("mode must be `direct` or `inverse`, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankQuery {
    pub symbol: String,
    pub mode: RankMode,
    pub top_k: usize,
}

impl RankQuery {
    pub fn new(symbol: impl Into<String>, mode: RankMode) -> Self {
        Self {
            symbol: symbol.into(),
            mode,
            top_k: DEFAULT_TOP_K,
        }
    }

    pub fn with_top_k(mut self, top_k: usize) -> Self {
        self.top_k = top_k;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub symbol: String,
    pub counter: u64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedList {
    pub query: RankQuery,
    pub entries: Vec<RankedEntry>,
    /// Stored nodes containing the query's original record.
    pub nodes_visited: usize,
}

fn check_query(store: &NodeStore, query: &RankQuery) -> Result<(), RankError> {
    if query.top_k == 0 {
        return Err(RankError::ZeroTopK);
    }
    if !store.knows_symbol(&query.symbol) {
        return Err(RankError::UnknownSymbol(query.symbol.clone()));
    }
    Ok(())
}

/// Sorts counters descending, ties by ascending symbol, and keeps `top_k`.
fn finish(query: &RankQuery, counters: HashMap<&str, u64>, nodes_visited: usize) -> RankedList {
    let mut scored: Vec<(&str, u64)> = counters.into_iter().collect();
    scored.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let entries = scored
        .into_iter()
        .take(query.top_k)
        .enumerate()
        .map(|(i, (symbol, counter))| RankedEntry {
            symbol: symbol.to_string(),
            counter,
            rank: i + 1,
        })
        .collect();
    RankedList {
        query: query.clone(),
        entries,
        nodes_visited,
    }
}

pub fn rank(store: &NodeStore, query: &RankQuery) -> Result<RankedList, RankError> {
    check_query(store, query)?;
    let wanted = query.mode.counted_polarity();
    let nodes = store.query_nodes_containing(&query.symbol, Polarity::Original);
    let mut counters: HashMap<&str, u64> = HashMap::new();
    for &(slice_index, node_id) in nodes {
        let members = store
            .node_records(slice_index, node_id)
            .expect("containment index only references stored nodes");
        for r in members {
            if r.polarity == wanted && r.symbol != query.symbol {
                *counters.entry(r.symbol.as_str()).or_default() += 1;
            }
        }
    }
    Ok(finish(query, counters, nodes.len()))
}

/// Same ranking by a naive scan of the flat record list: no indexes, no
/// reliance on record order. Test oracle for [`rank`].
pub fn rank_bruteforce(store: &NodeStore, query: &RankQuery) -> Result<RankedList, RankError> {
    check_query(store, query)?;
    let records: &[NodeRecord] = store.records();
    if records.len() > BRUTEFORCE_MAX_RECORDS {
        return Err(RankError::StoreTooLarge {
            records: records.len(),
            limit: BRUTEFORCE_MAX_RECORDS,
        });
    }
    let wanted = query.mode.counted_polarity();

    let mut visited: Vec<(usize, usize)> = Vec::new();
    for r in records {
        if r.symbol == query.symbol && r.polarity == Polarity::Original {
            let key = (r.slice_index, r.node_id);
            if !visited.contains(&key) {
                visited.push(key);
            }
        }
    }

    let mut counters: HashMap<&str, u64> = HashMap::new();
    for &(slice_index, node_id) in &visited {
        for r in records {
            if r.slice_index == slice_index
                && r.node_id == node_id
                && r.polarity == wanted
                && r.symbol != query.symbol
            {
                *counters.entry(r.symbol.as_str()).or_default() += 1;
            }
        }
    }
    Ok(finish(query, counters, visited.len()))
}
