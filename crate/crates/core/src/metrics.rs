//! Objective quantities per block and epoch, and cross-mode comparison.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amount::Amount;
use crate::market::PriceVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// No balancer phase at all.
    Off,
    Autobalancer,
    /// Same arbitrage logic, but profits leave the network.
    External,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Off, Mode::Autobalancer, Mode::External];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Off => "off",
            Mode::Autobalancer => "autobalancer",
            Mode::External => "external",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Mode, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (expected off, autobalancer or external)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub delta_cap: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights { lambda1: 1.0, lambda2: 0.1, delta_cap: 0.05 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSample {
    pub block: u64,
    pub cumulative_discrepancy: f64,
    pub utilization: f64,
    pub psi: f64,
    pub scalarized: f64,
    /// Largest |Δp| over all (asset, venue) pairs after the balancer phase.
    pub max_abs_deviation: f64,
    pub captured_profit: Amount,
}

/// Σ over unordered venue pairs and assets of `|P_i − P_j|`. Each pair is
/// counted once; the ordered-pair sum is exactly twice this value.
pub fn cumulative_discrepancy(vectors: &[PriceVector]) -> f64 {
    let mut total = 0.0;
    for (i, a) in vectors.iter().enumerate() {
        for b in &vectors[i + 1..] {
            total += a
                .prices
                .iter()
                .zip(&b.prices)
                .skip(1)
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>();
        }
    }
    total
}

/// Largest relative deviation from the reference over venues and assets.
pub fn max_abs_deviation(vectors: &[PriceVector]) -> f64 {
    let Some(reference) = vectors.iter().find(|v| v.is_reference) else {
        return 0.0;
    };
    vectors
        .iter()
        .filter(|v| !v.is_reference)
        .flat_map(|v| v.prices.iter().zip(&reference.prices).skip(1).map(|(p, r)| ((p - r) / r).abs()))
        .fold(0.0, f64::max)
}

pub fn scalarized_objective(cumulative_discrepancy: f64, utilization: f64, weights: &ObjectiveWeights) -> f64 {
    weights.lambda1 * cumulative_discrepancy - weights.lambda2 * utilization
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ConstraintStatus {
    Satisfied { mean_psi: f64 },
    Violated { mean_psi: f64 },
}

impl ConstraintStatus {
    pub fn mean_psi(&self) -> f64 {
        match self {
            ConstraintStatus::Satisfied { mean_psi } | ConstraintStatus::Violated { mean_psi } => *mean_psi,
        }
    }
}

/// Mean per-block ψ against the cap δ. An empty epoch is trivially satisfied.
pub fn epoch_constraint_check(samples: &[ObjectiveSample], delta_cap: f64) -> ConstraintStatus {
    let mean_psi = if samples.is_empty() {
        0.0
    } else {
        samples.iter().map(|s| s.psi).sum::<f64>() / samples.len() as f64
    };
    if mean_psi <= delta_cap {
        ConstraintStatus::Satisfied { mean_psi }
    } else {
        ConstraintStatus::Violated { mean_psi }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub mode: Mode,
    pub time_avg_discrepancy: f64,
    pub captured_value: f64,
    pub leaked_value: f64,
    pub max_abs_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub runs: usize,
    pub mean_discrepancy: f64,
    pub std_discrepancy: f64,
    pub mean_captured: f64,
    pub std_captured: f64,
    pub mean_leaked: f64,
    pub std_leaked: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub summaries: Vec<ModeSummary>,
    pub rows: Vec<SeedRow>,
}

impl ComparisonReport {
    pub fn row(&self, seed: u64, mode: Mode) -> Option<&SeedRow> {
        self.rows.iter().find(|r| r.seed == seed && r.mode == mode)
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn summarize(mode: Mode, rows: &[SeedRow]) -> ModeSummary {
    let pick = |f: fn(&SeedRow) -> f64| -> Vec<f64> { rows.iter().filter(|r| r.mode == mode).map(f).collect() };
    let d = pick(|r| r.time_avg_discrepancy);
    let (mean_discrepancy, std_discrepancy) = mean_std(&d);
    let (mean_captured, std_captured) = mean_std(&pick(|r| r.captured_value));
    let (mean_leaked, std_leaked) = mean_std(&pick(|r| r.leaked_value));
    ModeSummary { mode, runs: d.len(), mean_discrepancy, std_discrepancy, mean_captured, std_captured, mean_leaked, std_leaked }
}

/// Runs every (seed, mode) pair in parallel from the same scenario. Each run
/// is single-threaded and seeded, so the table does not depend on scheduling.
pub fn run_baseline_comparison(
    config: &crate::scenario::ScenarioConfig,
    modes: &[Mode],
    seeds: &[u64],
) -> Result<ComparisonReport, crate::sim::SimError> {
    let jobs: Vec<(u64, Mode)> = seeds.iter().flat_map(|&s| modes.iter().map(move |&m| (s, m))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(seed, mode)| {
            let report = crate::sim::run(config, seed, mode)?;
            Ok(SeedRow {
                seed,
                mode,
                time_avg_discrepancy: report.totals.time_avg_discrepancy,
                captured_value: report.totals.captured_value.to_f64(),
                leaked_value: report.totals.leaked_value.to_f64(),
                max_abs_deviation: report.totals.max_abs_deviation,
            })
        })
        .collect::<Result<Vec<_>, crate::sim::SimError>>()?;
    Ok(ComparisonReport {
        config_hash: config.config_hash(),
        seeds: seeds.to_vec(),
        summaries: modes.iter().map(|&m| summarize(m, &rows)).collect(),
        rows,
    })
}
