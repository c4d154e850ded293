//! Inverse-signal search engine.
//!
//! Daily adjusted closes are turned into fractional change vectors, cut into
//! fixed-width slices, and doubled with their negations. Every slice is
//! self-labeled with the sum of its changes and fed to a regression tree.
//! Small, low-variance tree nodes are persisted as flat tables, and instruments
//! are ranked by how often they share those nodes with a query instrument.
//!
//! Module map, in pipeline order:
//!
//! - [`ingest`]: price files, trading calendar, alignment, slice eligibility
//! - [`transform`]: change vectors, slicing, inverse signals, self-labels
//! - [`treelearn`]: per-slice variance-reduction regression trees
//! - [`nodestore`]: the on-disk node membership tables
//! - [`ranker`]: co-occurrence ranking over stored nodes
//! - [`pipeline`]: build orchestration, synthetic data, HTTP service

pub mod ingest;
pub mod nodestore;
pub mod pipeline;
pub mod ranker;
pub mod transform;
pub mod treelearn;

pub use ingest::{AlignedUniverse, FillPolicy, PriceSeries, TradingCalendar};
pub use nodestore::{NodeMeta, NodeRecord, NodeStore, StoreManifest};
pub use pipeline::{BuildConfig, SynthSpec};
pub use ranker::{RankMode, RankQuery, RankedList};
pub use transform::{LabeledInstance, Polarity, SliceTrainingSet};
pub use treelearn::{Tree, TreeNode, TreeParams};
