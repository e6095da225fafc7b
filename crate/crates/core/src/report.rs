//! Run reports and their JSON / CSV encodings.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::amount::Amount;
use crate::chain::{BalancerTx, Block};
use crate::market::Pool;
use crate::metrics::{ComparisonReport, ConstraintStatus, Mode, ObjectiveSample};
use crate::rewards::RewardLedger;
use crate::searcher::{Credibility, SearcherProposal, Selection};
use crate::state::AccountId;

pub const PRODUCER_FEE_NOTE: &str =
    "producer fees are paid from balancer gas fees and are additive to the profit pool, not deducted from it";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub mode: Mode,
    pub producer_fee_note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub epoch: u64,
    pub sample: ObjectiveSample,
    /// Gas left for the balancer phase after the user phase.
    pub residual_after_users: u64,
    /// The producer executed the active set in a shuffled order.
    pub permuted: bool,
    pub producer_fee: Amount,
    pub slashed: Amount,
    pub block: Block,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub index: u64,
    pub proposals: Vec<SearcherProposal>,
    pub selection: Option<Selection>,
    pub active_set: Vec<BalancerTx>,
    pub ledger: RewardLedger,
    pub constraint: ConstraintStatus,
    pub credibility: Vec<Credibility>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccountBalance {
    pub account: AccountId,
    pub balances: Vec<Amount>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub blocks: u64,
    pub user_generated: u64,
    pub user_applied: u64,
    pub user_rejected: u64,
    pub user_pending: u64,
    pub balancer_committed: u64,
    pub balancer_reverted: u64,
    pub balancer_skipped: u64,
    /// Net balancer profit kept by the network.
    pub captured_value: Amount,
    /// Net arbitrage profit taken by the external arbitrageur.
    pub leaked_value: Amount,
    pub producer_fees: Amount,
    pub slashed: Amount,
    pub slash_count: u64,
    pub time_avg_discrepancy: f64,
    pub max_abs_deviation: f64,
    pub mean_utilization: f64,
}

impl Totals {
    /// Every generated user transaction is accounted for exactly once.
    pub fn reconciles(&self) -> bool {
        self.user_generated == self.user_applied + self.user_rejected + self.user_pending
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub header: ReportHeader,
    pub blocks: Vec<BlockReport>,
    pub epochs: Vec<EpochReport>,
    pub final_pools: Vec<Pool>,
    pub final_treasury: Vec<Amount>,
    pub final_balances: Vec<AccountBalance>,
    pub totals: Totals,
}

impl RunReport {
    pub fn samples(&self) -> impl Iterator<Item = &ObjectiveSample> {
        self.blocks.iter().map(|b| &b.sample)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<RunReport, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("block,discrepancy,utilization,psi,captured_profit\n");
        for s in self.samples() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                s.block, s.cumulative_discrepancy, s.utilization, s.psi, s.captured_profit
            ));
        }
        out
    }
}

pub fn comparison_csv(report: &ComparisonReport) -> String {
    let mut out = String::from("mode,runs,mean_discrepancy,std_discrepancy,mean_captured,std_captured,mean_leaked,std_leaked\n");
    for s in &report.summaries {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.mode, s.runs, s.mean_discrepancy, s.std_discrepancy, s.mean_captured, s.std_captured, s.mean_leaked, s.std_leaked
        ));
    }
    out
}

pub fn comparison_rows_csv(report: &ComparisonReport) -> String {
    let mut out = String::from("seed,mode,time_avg_discrepancy,captured_value,leaked_value,max_abs_deviation\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.seed, r.mode, r.time_avg_discrepancy, r.captured_value, r.leaked_value, r.max_abs_deviation
        ));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

fn write_file(path: &Path, contents: &str) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    f.flush()
}

/// Writes `report` into `dir` as `<stem>.json` or `<stem>.csv`.
pub fn write_report(report: &RunReport, format: Format, dir: &Path, stem: &str) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let (path, body) = match format {
        Format::Json => (dir.join(format!("{stem}.json")), report.to_json()),
        Format::Csv => (dir.join(format!("{stem}.csv")), report.to_csv()),
    };
    write_file(&path, &body)?;
    Ok(path)
}

/// Writes the comparison as JSON plus the per-mode summary and per-seed CSVs.
pub fn write_comparison(report: &ComparisonReport, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let files = [
        (dir.join("comparison.json"), serde_json::to_string_pretty(report).expect("comparison serializes")),
        (dir.join("comparison_summary.csv"), comparison_csv(report)),
        (dir.join("comparison_seeds.csv"), comparison_rows_csv(report)),
    ];
    let mut out = Vec::new();
    for (path, body) in files {
        write_file(&path, &body)?;
        out.push(path);
    }
    Ok(out)
}
