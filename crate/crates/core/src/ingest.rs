//! Price file loading, trading calendar construction and alignment.
//!
//! Input is one `<SYMBOL>.csv` per instrument with a `date,adj_close` header
//! and ascending `YYYY-MM-DD,<decimal>` rows.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CSV_HEADER: &str = "date,adj_close";
pub const DEFAULT_MIN_PRESENCE: f64 = 0.5;
pub const DEFAULT_MAX_FILL_GAP: usize = 5;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: expected header `{CSV_HEADER}`, found `{found}`")]
    BadHeader { path: PathBuf, found: String },
    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: non-positive price {price}")]
    NonPositivePrice {
        path: PathBuf,
        line: usize,
        price: f64,
    },
    #[error("{path}:{line}: duplicate date {date}")]
    DuplicateDate {
        path: PathBuf,
        line: usize,
        date: NaiveDate,
    },
    #[error("{path}:{line}: dates not ascending ({date} follows a later date)")]
    NotAscending {
        path: PathBuf,
        line: usize,
        date: NaiveDate,
    },
    #[error("invalid symbol `{0}`")]
    InvalidSymbol(String),
    #[error("duplicate symbol `{0}`")]
    DuplicateSymbol(String),
    #[error("min_presence must lie in (0, 1], got {0}")]
    InvalidMinPresence(f64),
    #[error("no price series supplied")]
    NoSeries,
    #[error("calendar is empty: no date reaches the presence threshold")]
    EmptyCalendar,
    #[error("calendar days must be strictly ascending")]
    CalendarNotAscending,
}

/// Instrument identifiers: non-empty, uppercase ASCII letters, digits, `.` and `-`.
pub fn validate_symbol(symbol: &str) -> Result<(), IngestError> {
    let ok = !symbol.is_empty()
        && symbol
            .bytes()
            .all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b == b'.' || b == b'-');
    if ok {
        Ok(())
    } else {
        Err(IngestError::InvalidSymbol(symbol.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub date: NaiveDate,
    pub price: f64,
}

/// One instrument's dated adjusted closes, strictly ascending by date.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    symbol: String,
    observations: Vec<Observation>,
}

impl PriceSeries {
    pub fn new(symbol: impl Into<String>, observations: Vec<Observation>) -> Result<Self, IngestError> {
        let symbol = symbol.into();
        validate_symbol(&symbol)?;
        let path = PathBuf::from(format!("{symbol}.csv"));
        for (i, obs) in observations.iter().enumerate() {
            let line = i + 2;
            if !(obs.price > 0.0) || !obs.price.is_finite() {
                return Err(IngestError::NonPositivePrice {
                    path,
                    line,
                    price: obs.price,
                });
            }
            if i > 0 {
                check_order(&path, line, observations[i - 1].date, obs.date)?;
            }
        }
        Ok(Self {
            symbol,
            observations,
        })
    }

    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Multiplies every price by `factor`. Used for scale-invariance checks.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            symbol: self.symbol.clone(),
            observations: self
                .observations
                .iter()
                .map(|o| Observation {
                    date: o.date,
                    price: o.price * factor,
                })
                .collect(),
        }
    }

    /// Renders the series in the input file format.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(16 + self.observations.len() * 24);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for obs in &self.observations {
            out.push_str(&format!("{},{}\n", obs.date.format("%Y-%m-%d"), obs.price));
        }
        out
    }
}

fn check_order(path: &Path, line: usize, prev: NaiveDate, date: NaiveDate) -> Result<(), IngestError> {
    if date == prev {
        Err(IngestError::DuplicateDate {
            path: path.to_path_buf(),
            line,
            date,
        })
    } else if date < prev {
        Err(IngestError::NotAscending {
            path: path.to_path_buf(),
            line,
            date,
        })
    } else {
        Ok(())
    }
}

/// Parses price file contents. `path` is only used in error messages.
pub fn parse_price_csv(symbol: &str, text: &str, path: &Path) -> Result<PriceSeries, IngestError> {
    validate_symbol(symbol)?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l.trim()).unwrap_or("");
    if header != CSV_HEADER {
        return Err(IngestError::BadHeader {
            path: path.to_path_buf(),
            found: header.to_string(),
        });
    }

    let mut observations: Vec<Observation> = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let malformed = |reason: String| IngestError::MalformedRow {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut fields = row.split(',');
        let (Some(date_field), Some(price_field), None) = (fields.next(), fields.next(), fields.next())
        else {
            return Err(malformed(format!("expected 2 fields in `{row}`")));
        };
        let date = NaiveDate::parse_from_str(date_field.trim(), "%Y-%m-%d")
            .map_err(|e| malformed(format!("bad date `{date_field}`: {e}")))?;
        let price: f64 = price_field
            .trim()
            .parse()
            .map_err(|e| malformed(format!("bad price `{price_field}`: {e}")))?;
        if !price.is_finite() {
            return Err(malformed(format!("non-finite price `{price_field}`")));
        }
        if price <= 0.0 {
            return Err(IngestError::NonPositivePrice {
                path: path.to_path_buf(),
                line,
                price,
            });
        }
        if let Some(prev) = observations.last() {
            check_order(path, line, prev.date, date)?;
        }
        observations.push(Observation { date, price });
    }

    Ok(PriceSeries {
        symbol: symbol.to_string(),
        observations,
    })
}

/// Symbol implied by a `<SYMBOL>.csv` file name.
pub fn symbol_from_path(path: &Path) -> Result<String, IngestError> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| IngestError::InvalidSymbol(path.display().to_string()))?;
    validate_symbol(stem)?;
    Ok(stem.to_string())
}

pub fn load_price_file(path: &Path) -> Result<PriceSeries, IngestError> {
    let symbol = symbol_from_path(path)?;
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_price_csv(&symbol, &text, path)
}

/// Ordered trading days t_1..t_n.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TradingCalendar {
    days: Vec<NaiveDate>,
}

impl TradingCalendar {
    pub fn new(days: Vec<NaiveDate>) -> Result<Self, IngestError> {
        if days.is_empty() {
            return Err(IngestError::EmptyCalendar);
        }
        if days.windows(2).any(|w| w[0] >= w[1]) {
            return Err(IngestError::CalendarNotAscending);
        }
        Ok(Self { days })
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn first(&self) -> NaiveDate {
        self.days[0]
    }

    pub fn last(&self) -> NaiveDate {
        self.days[self.days.len() - 1]
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.days.binary_search(&date).ok()
    }

    /// Number of complete slices of `h` changes: floor((n - 1) / h).
    pub fn slice_count(&self, h: usize) -> usize {
        assert!(h >= 1, "slice width must be positive");
        self.days.len().saturating_sub(1) / h
    }
}

/// Keeps every date on which at least `min_presence` of the instruments trade.
pub fn build_calendar(all_series: &[PriceSeries], min_presence: f64) -> Result<TradingCalendar, IngestError> {
    if !(min_presence > 0.0 && min_presence <= 1.0) {
        return Err(IngestError::InvalidMinPresence(min_presence));
    }
    if all_series.is_empty() {
        return Err(IngestError::NoSeries);
    }
    let mut counts: BTreeMap<NaiveDate, usize> = BTreeMap::new();
    for series in all_series {
        for obs in series.observations() {
            *counts.entry(obs.date).or_default() += 1;
        }
    }
    let m = all_series.len() as f64;
    let days: Vec<NaiveDate> = counts
        .into_iter()
        .filter(|&(_, c)| c as f64 / m >= min_presence)
        .map(|(d, _)| d)
        .collect();
    TradingCalendar::new(days)
}

/// How interior calendar days without a price are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum FillPolicy {
    /// Carry the previous price over runs of at most `max_gap` missing days.
    ForwardFill { max_gap: usize },
    Exclude,
}

impl Default for FillPolicy {
    fn default() -> Self {
        FillPolicy::ForwardFill {
            max_gap: DEFAULT_MAX_FILL_GAP,
        }
    }
}

impl fmt::Display for FillPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FillPolicy::ForwardFill { max_gap } => write!(f, "forward_fill(max_gap={max_gap})"),
            FillPolicy::Exclude => f.write_str("exclude"),
        }
    }
}

/// Every instrument mapped onto the shared calendar. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedUniverse {
    calendar: TradingCalendar,
    series: BTreeMap<String, Vec<Option<f64>>>,
    fill_policy: FillPolicy,
}

impl AlignedUniverse {
    pub fn calendar(&self) -> &TradingCalendar {
        &self.calendar
    }

    pub fn fill_policy(&self) -> FillPolicy {
        self.fill_policy
    }

    /// Symbols in ascending order.
    pub fn symbols(&self) -> impl Iterator<Item = &str> {
        self.series.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// Per-day price slots for `symbol`, one per calendar day.
    pub fn slots(&self, symbol: &str) -> Option<&[Option<f64>]> {
        self.series.get(symbol).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Option<f64>])> {
        self.series.iter().map(|(s, v)| (s.as_str(), v.as_slice()))
    }

    pub fn slice_count(&self, h: usize) -> usize {
        self.calendar.slice_count(h)
    }

    /// Slice `k` (1-based) needs price slots (k-1)h ..= kh.
    pub fn is_eligible(&self, symbol: &str, slice_index: usize, h: usize) -> bool {
        if slice_index == 0 || slice_index > self.slice_count(h) {
            return false;
        }
        self.slots(symbol)
            .map(|slots| slots[(slice_index - 1) * h..=slice_index * h].iter().all(Option::is_some))
            .unwrap_or(false)
    }

    /// Present observations only, as plain series.
    pub fn to_series(&self) -> Vec<PriceSeries> {
        self.series
            .iter()
            .map(|(symbol, slots)| PriceSeries {
                symbol: symbol.clone(),
                observations: self
                    .calendar
                    .days()
                    .iter()
                    .zip(slots)
                    .filter_map(|(&date, p)| p.map(|price| Observation { date, price }))
                    .collect(),
            })
            .collect()
    }
}

/// Maps each series onto `calendar`. Prices on dates outside the calendar are
/// dropped; days before the first or after the last observation stay missing.
pub fn align(
    all_series: &[PriceSeries],
    calendar: &TradingCalendar,
    fill_policy: FillPolicy,
) -> Result<AlignedUniverse, IngestError> {
    let mut series = BTreeMap::new();
    for s in all_series {
        let mut slots = vec![None; calendar.len()];
        for obs in s.observations() {
            if let Some(i) = calendar.index_of(obs.date) {
                slots[i] = Some(obs.price);
            }
        }
        if let FillPolicy::ForwardFill { max_gap } = fill_policy {
            forward_fill(&mut slots, max_gap);
        }
        if series.insert(s.symbol().to_string(), slots).is_some() {
            return Err(IngestError::DuplicateSymbol(s.symbol().to_string()));
        }
    }
    Ok(AlignedUniverse {
        calendar: calendar.clone(),
        series,
        fill_policy,
    })
}

/// Fills interior runs of missing slots no longer than `max_gap`.
fn forward_fill(slots: &mut [Option<f64>], max_gap: usize) {
    let Some(first) = slots.iter().position(Option::is_some) else {
        return;
    };
    let last = slots.iter().rposition(Option::is_some).unwrap_or(first);
    let mut i = first;
    while i < last {
        if slots[i].is_some() {
            i += 1;
            continue;
        }
        let start = i;
        while slots[i].is_none() {
            i += 1;
        }
        if i - start <= max_gap {
            let carry = slots[start - 1];
            slots[start..i].fill(carry);
        }
    }
}

/// Eligibility of every (symbol, slice) pair for slices 1..=k_max.
pub fn slice_eligibility(universe: &AlignedUniverse, h: usize) -> BTreeMap<(String, usize), bool> {
    let k_max = universe.slice_count(h);
    let mut out = BTreeMap::new();
    for symbol in universe.symbols() {
        for k in 1..=k_max {
            out.insert((symbol.to_string(), k), universe.is_eligible(symbol, k, h));
        }
    }
    out
}
