//! Change vectors, fixed-width slicing, inverse signals and self-labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::AlignedUniverse;

pub const DEFAULT_SLICE_WIDTH: usize = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TransformError {
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("slice index {index} out of range 1..={k_max}")]
    SliceOutOfRange { index: usize, k_max: usize },
    #[error("slice width must be at least 1")]
    ZeroWidth,
}

/// Whether an instance is the instrument's own signal or its negation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarity {
    #[serde(rename = "O")]
    Original,
    #[serde(rename = "I")]
    Inverse,
}

impl Polarity {
    pub fn code(self) -> char {
        match self {
            Polarity::Original => 'O',
            Polarity::Inverse => 'I',
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Original => Polarity::Inverse,
            Polarity::Inverse => Polarity::Original,
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "O" => Ok(Polarity::Original),
            "I" => Ok(Polarity::Inverse),
            other => Err(format!("bad polarity `{other}`")),
        }
    }
}

/// Fractional daily changes C_1..C_{n-1}; `None` where either price is missing.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeSeries {
    pub symbol: String,
    pub changes: Vec<Option<f64>>,
}

/// `P[j+1] / P[j] - 1` for every consecutive pair of slots.
pub fn changes_from_slots(slots: &[Option<f64>]) -> Vec<Option<f64>> {
    slots
        .windows(2)
        .map(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => Some(b / a - 1.0),
            _ => None,
        })
        .collect()
}

pub fn to_changes(universe: &AlignedUniverse, symbol: &str) -> Result<ChangeSeries, TransformError> {
    let slots = universe
        .slots(symbol)
        .ok_or_else(|| TransformError::UnknownSymbol(symbol.to_string()))?;
    Ok(ChangeSeries {
        symbol: symbol.to_string(),
        changes: changes_from_slots(slots),
    })
}

/// Cuts changes into consecutive slices of `h`, anchored at the first change.
/// Slices with a missing change and the trailing remainder are not emitted.
pub fn slice_changes(series: &ChangeSeries, h: usize) -> Vec<(usize, Vec<f64>)> {
    assert!(h >= 1, "slice width must be positive");
    series
        .changes
        .chunks_exact(h)
        .enumerate()
        .filter_map(|(i, chunk)| {
            chunk
                .iter()
                .copied()
                .collect::<Option<Vec<f64>>>()
                .map(|features| (i + 1, features))
        })
        .collect()
}

pub fn make_inverse(features: &[f64]) -> Vec<f64> {
    features.iter().map(|&c| -c).collect()
}

/// Left-to-right sum of the features.
///
/// An exactly cancelling sum is +0 under IEEE rounding for both a vector and
/// its negation, so a zero result takes the sign of the first non-zero
/// feature (or the first feature) to keep `label(-x) == -label(x)` bit-exact.
pub fn self_label(features: &[f64]) -> f64 {
    let Some((&first, rest)) = features.split_first() else {
        return 0.0;
    };
    let sum = rest.iter().fold(first, |acc, &c| acc + c);
    if sum == 0.0 {
        let sign_source = features.iter().copied().find(|c| *c != 0.0).unwrap_or(first);
        0.0f64.copysign(sign_source)
    } else {
        sum
    }
}

/// One instrument's slice signal with its self-generated label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInstance {
    pub symbol: String,
    pub polarity: Polarity,
    pub slice_index: usize,
    pub features: Vec<f64>,
    pub label: f64,
}

impl LabeledInstance {
    pub fn original(symbol: impl Into<String>, slice_index: usize, features: Vec<f64>) -> Self {
        let label = self_label(&features);
        Self {
            symbol: symbol.into(),
            polarity: Polarity::Original,
            slice_index,
            features,
            label,
        }
    }

    pub fn inverse_of(original: &LabeledInstance) -> Self {
        Self {
            symbol: original.symbol.clone(),
            polarity: original.polarity.flipped(),
            slice_index: original.slice_index,
            features: make_inverse(&original.features),
            label: -original.label,
        }
    }
}

/// Originals and inverses for one slice, ordered by symbol, original first.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceTrainingSet {
    pub slice_index: usize,
    pub instances: Vec<LabeledInstance>,
}

impl SliceTrainingSet {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Number of instruments contributing to the slice.
    pub fn instrument_count(&self) -> usize {
        self.instances.len() / 2
    }
}

/// Features of slice `k` (1-based) straight from the price slots, if complete.
pub fn slice_features(slots: &[Option<f64>], slice_index: usize, h: usize) -> Option<Vec<f64>> {
    let start = (slice_index - 1) * h;
    let window = slots.get(start..=start + h)?;
    changes_from_slots(window).into_iter().collect()
}

pub fn build_training_set(
    universe: &AlignedUniverse,
    slice_index: usize,
    h: usize,
) -> Result<SliceTrainingSet, TransformError> {
    if h == 0 {
        return Err(TransformError::ZeroWidth);
    }
    let k_max = universe.slice_count(h);
    if slice_index == 0 || slice_index > k_max {
        return Err(TransformError::SliceOutOfRange {
            index: slice_index,
            k_max,
        });
    }
    let mut instances = Vec::new();
    for (symbol, slots) in universe.iter() {
        if let Some(features) = slice_features(slots, slice_index, h) {
            let original = LabeledInstance::original(symbol, slice_index, features);
            let inverse = LabeledInstance::inverse_of(&original);
            instances.push(original);
            instances.push(inverse);
        }
    }
    Ok(SliceTrainingSet {
        slice_index,
        instances,
    })
}
