use std::fs;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::ingest::{Observation, PriceSeries};

pub const TRUTH_FILE: &str = "truth.json";

/// Daily changes are clamped to this magnitude so prices stay positive.
const MAX_ABS_CHANGE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_instruments: usize,
    pub n_days: usize,
    /// Number of (X, Y) pairs where Y's changes negate X's.
    pub planted_pairs: usize,
    /// Noise on Y's changes, as a fraction of |change|.
    pub noise_sigma: f64,
    /// Typical daily change standard deviation; each instrument draws its own
    /// in [0.5, 1.5) times this.
    pub base_volatility: f64,
    /// First trading day; weekends are skipped.
    pub start: NaiveDate,
}

impl SynthSpec {
    pub fn new(seed: u64, n_instruments: usize, n_days: usize, planted_pairs: usize) -> Self {
        Self {
            seed,
            n_instruments,
            n_days,
            planted_pairs,
            noise_sigma: 0.0,
            base_volatility: 0.02,
            start: NaiveDate::from_ymd_opt(2011, 1, 3).expect("valid date"),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::InvalidConfig(msg));
        if 2 * self.planted_pairs > self.n_instruments {
            return bad(format!(
                "{} planted pairs need {} instruments, only {} requested",
                self.planted_pairs,
                2 * self.planted_pairs,
                self.n_instruments
            ));
        }
        if self.n_instruments == 0 || self.n_days < 2 {
            return bad("need at least one instrument and two days".into());
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!("noise sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        if !(self.base_volatility > 0.0) || !self.base_volatility.is_finite() {
            return bad(format!("base volatility must be positive, got {}", self.base_volatility));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedPair {
    pub original: String,
    /// Instrument whose changes negate `original`'s.
    pub inverse: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub seed: u64,
    pub n_instruments: usize,
    pub n_days: usize,
    pub noise_sigma: f64,
    pub pairs: Vec<PlantedPair>,
}

fn symbol(i: usize) -> String {
    format!("SYN{i:04}")
}

fn trading_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    start
        .iter_days()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .take(n)
        .collect()
}

fn prices_from_changes(start: f64, changes: &[f64]) -> Vec<f64> {
    let mut prices = Vec::with_capacity(changes.len() + 1);
    prices.push(start);
    let mut p = start;
    for c in changes {
        p *= 1.0 + c;
        prices.push(p);
    }
    prices
}

/// Writes `<SYMBOL>.csv` random-walk files and `truth.json` into `out_dir`.
/// Output depends only on `spec`.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<SynthTruth, PipelineError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_instruments;
    let steps = spec.n_days - 1;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let pairs: Vec<(usize, usize)> = (0..spec.planted_pairs)
        .map(|p| (order[2 * p], order[2 * p + 1]))
        .collect();
    let mut partner_of = vec![None; n];
    for &(x, y) in &pairs {
        partner_of[y] = Some(x);
    }

    let start_prices: Vec<f64> = (0..n).map(|_| rng.random_range(10.0..200.0)).collect();
    let vols: Vec<f64> = (0..n)
        .map(|_| spec.base_volatility * rng.random_range(0.5..1.5))
        .collect();

    let mut changes: Vec<Vec<f64>> = vec![Vec::new(); n];
    for i in 0..n {
        if partner_of[i].is_some() {
            continue;
        }
        changes[i] = (0..steps)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                (vols[i] * z).clamp(-MAX_ABS_CHANGE, MAX_ABS_CHANGE)
            })
            .collect();
    }
    for &(x, y) in &pairs {
        changes[y] = changes[x]
            .iter()
            .map(|&c| {
                let z: f64 = rng.sample(StandardNormal);
                (-c + spec.noise_sigma * c.abs() * z).clamp(-MAX_ABS_CHANGE, MAX_ABS_CHANGE)
            })
            .collect();
    }

    let days = trading_days(spec.start, spec.n_days);
    fs::create_dir_all(out_dir).map_err(|source| PipelineError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    for i in 0..n {
        let prices = prices_from_changes(start_prices[i], &changes[i]);
        let observations = days
            .iter()
            .zip(prices)
            .map(|(&date, price)| Observation { date, price })
            .collect();
        let series = PriceSeries::new(symbol(i), observations)?;
        let path = out_dir.join(format!("{}.csv", series.symbol()));
        fs::write(&path, series.to_csv()).map_err(|source| PipelineError::Io { path, source })?;
    }

    let truth = SynthTruth {
        seed: spec.seed,
        n_instruments: n,
        n_days: spec.n_days,
        noise_sigma: spec.noise_sigma,
        pairs: pairs
            .iter()
            .map(|&(x, y)| PlantedPair {
                original: symbol(x),
                inverse: symbol(y),
            })
            .collect(),
    };
    let path = out_dir.join(TRUTH_FILE);
    let mut json = serde_json::to_string_pretty(&truth)?;
    json.push('\n');
    fs::write(&path, json).map_err(|source| PipelineError::Io { path, source })?;
    Ok(truth)
}
