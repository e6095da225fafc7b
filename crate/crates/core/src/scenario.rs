//! Scenario files: one TOML document describing a full run.
//!
//! Every field outside `assets` and `pools` has a default; see the README
//! for the reference table. Validation reports every violation at once,
//! each tagged with the path of the offending field.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::amount::Amount;
use crate::arbitrage::{Funding, Threshold};
use crate::chain::{FeasibilityPredicate, UserFlowParams};
use crate::market::{AssetId, Fee, GasModel, Pool, VenueId};
use crate::metrics::{Mode, ObjectiveWeights};
use crate::rewards::{RewardWeights, WeightSchedule};
use crate::searcher::{GovernanceConditions, MarketContext, SearcherProfile};
use crate::state::{AccountId, ChainState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub venue: u32,
    pub asset: String,
    pub reserve_base: f64,
    pub reserve_quote: f64,
    #[serde(default = "default_fee")]
    pub fee: f64,
    #[serde(default)]
    pub is_reference: bool,
}

fn default_fee() -> f64 {
    0.003
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UserFlowConfig {
    pub arrival_rate: f64,
    pub size_mu: f64,
    pub size_sigma: f64,
    /// One weight per venue in ascending venue order; uniform when empty.
    pub venue_weights: Vec<f64>,
    pub users: u32,
    /// Starting numéraire per user; base endowments hold the same value.
    pub endowment: f64,
}

impl Default for UserFlowConfig {
    fn default() -> Self {
        UserFlowConfig {
            arrival_rate: 8.0,
            size_mu: 1000f64.ln(),
            size_sigma: 1.0,
            venue_weights: Vec::new(),
            users: 16,
            endowment: 100_000_000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub epsilon: f64,
    pub flash_fee: f64,
    pub gas_price: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig { epsilon: 0.003, flash_fee: 0.0009, gas_price: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GasConfig {
    pub per_swap: u64,
    pub balancer_overhead: u64,
}

impl Default for GasConfig {
    fn default() -> Self {
        let g = GasModel::default();
        GasConfig { per_swap: g.per_swap, balancer_overhead: g.per_balancer_tx }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub from_epoch: u64,
    pub weights: RewardWeights,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardsConfig {
    pub weights: RewardWeights,
    /// Overrides `weights` from the given epochs onward.
    pub schedule: Vec<ScheduleEntry>,
    pub gamma: f64,
    pub slash_multiplier: u64,
}

impl Default for RewardsConfig {
    fn default() -> Self {
        RewardsConfig { weights: RewardWeights::default(), schedule: Vec::new(), gamma: 0.5, slash_multiplier: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub delta: f64,
    pub knee: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig { lambda1: 1.0, lambda2: 0.1, delta: 0.05, knee: 0.9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GovernanceConfig {
    /// Recent blocks used to estimate and replay proposals.
    pub lookback: usize,
    pub beta: f64,
    pub max_set_size: usize,
    pub allowed_funding: BTreeSet<Funding>,
    pub max_txs_per_block: usize,
    pub min_net_profit: f64,
}

impl Default for GovernanceConfig {
    fn default() -> Self {
        GovernanceConfig {
            lookback: 8,
            beta: 0.8,
            max_set_size: 32,
            allowed_funding: BTreeSet::from([Funding::FlashLoan, Funding::NetworkLiquidity]),
            max_txs_per_block: 32,
            min_net_profit: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreasuryConfig {
    pub numeraire: f64,
    pub lender_liquidity: f64,
}

impl Default for TreasuryConfig {
    fn default() -> Self {
        TreasuryConfig { numeraire: 10_000_000.0, lender_liquidity: 1_000_000_000.0 }
    }
}

pub fn default_searchers() -> Vec<SearcherProfile> {
    [(0.0, 1.0, Funding::FlashLoan), (0.1, 0.9, Funding::NetworkLiquidity), (0.3, 0.75, Funding::FlashLoan), (0.6, 0.5, Funding::NetworkLiquidity)]
        .into_iter()
        .enumerate()
        .map(|(i, (noise, coverage, funding))| SearcherProfile { id: i as u32, noise, coverage, funding })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Asset names; the first is the numéraire.
    pub assets: Vec<String>,
    pub pools: Vec<PoolConfig>,
    pub block_capacity: u64,
    pub epoch_length: u64,
    pub epochs: u64,
    pub user_flow: UserFlowConfig,
    pub threshold: ThresholdConfig,
    pub gas: GasConfig,
    pub rewards: RewardsConfig,
    pub objective: ObjectiveConfig,
    pub governance: GovernanceConfig,
    pub searchers: Vec<SearcherProfile>,
    /// Per-block probability that the producer shuffles the active set.
    pub producer_dishonesty: f64,
    /// Probability that an otherwise valid balancer execution is forced to revert.
    pub revert_injection: f64,
    pub treasury: TreasuryConfig,
    pub seeds: Vec<u64>,
    pub mode: Mode,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "scenario".into(),
            assets: Vec::new(),
            pools: Vec::new(),
            block_capacity: 1_000_000,
            epoch_length: 10,
            epochs: 20,
            user_flow: UserFlowConfig::default(),
            threshold: ThresholdConfig::default(),
            gas: GasConfig::default(),
            rewards: RewardsConfig::default(),
            objective: ObjectiveConfig::default(),
            governance: GovernanceConfig::default(),
            searchers: default_searchers(),
            producer_dishonesty: 0.0,
            revert_injection: 0.0,
            treasury: TreasuryConfig::default(),
            seeds: vec![1],
            mode: Mode::Autobalancer,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{} validation error(s):\n{}", .0.len(), .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let config: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    let violations = config.validate();
    if violations.is_empty() {
        Ok(config)
    } else {
        Err(ScenarioError::Invalid(violations))
    }
}

fn probability(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

impl ScenarioConfig {
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut bad = |path: &str, message: String| out.push(Violation { path: path.into(), message });

        if self.assets.len() < 2 {
            bad("assets", "need the numéraire and at least one traded asset".into());
        }
        let names: BTreeSet<&String> = self.assets.iter().collect();
        if names.len() != self.assets.len() {
            bad("assets", "asset names must be unique".into());
        }

        let mut references: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for (i, p) in self.pools.iter().enumerate() {
            let path = format!("pools[{i}]");
            match self.assets.iter().position(|a| *a == p.asset) {
                None => bad(&format!("{path}.asset"), format!("unknown asset `{}`", p.asset)),
                Some(0) => bad(&format!("{path}.asset"), "pools trade a base asset against the numéraire".into()),
                Some(_) => {}
            }
            if !seen.insert((p.venue, p.asset.clone())) {
                bad(&path, format!("duplicate pool for venue {} asset `{}`", p.venue, p.asset));
            }
            for (field, v) in [("reserve_base", p.reserve_base), ("reserve_quote", p.reserve_quote)] {
                if !(v.is_finite() && v > 0.0) || Amount::from_f64(v).is_none_or(|a| a.is_zero()) {
                    bad(&format!("{path}.{field}"), format!("reserve must be positive, got {v}"));
                }
            }
            if Fee::from_fraction(p.fee).is_err() {
                bad(&format!("{path}.fee"), format!("fee must lie in [0, 0.1), got {}", p.fee));
            }
            if p.is_reference {
                references.entry(p.venue).or_default().push(i);
            }
        }
        let venues: BTreeSet<u32> = self.pools.iter().map(|p| p.venue).collect();
        match references.len() {
            0 if !self.pools.is_empty() => bad("pools", "no pool is flagged is_reference".into()),
            0 => bad("pools", "no pools defined".into()),
            1 => {
                let (&venue, flagged) = references.iter().next().expect("one entry");
                let total = self.pools.iter().filter(|p| p.venue == venue).count();
                if flagged.len() != total {
                    bad("pools", format!("venue {venue} is the reference but not all its pools are flagged is_reference"));
                }
            }
            _ => {
                let named: Vec<String> =
                    references.iter().map(|(v, idx)| format!("venue {v} (pools[{}])", idx[0])).collect();
                bad("pools", format!("multiple reference venues: {}", named.join(", ")));
            }
        }
        if venues.len() < 2 && !self.pools.is_empty() {
            bad("pools", "need a reference and at least one trading venue".into());
        }
        for &v in &venues {
            for asset in self.assets.iter().skip(1) {
                if !self.pools.iter().any(|p| p.venue == v && p.asset == *asset) {
                    bad("pools", format!("venue {v} has no pool for asset `{asset}`"));
                }
            }
        }

        if self.block_capacity == 0 {
            bad("block_capacity", "must be positive".into());
        }
        if self.epoch_length == 0 {
            bad("epoch_length", "must be positive".into());
        }

        let f = &self.user_flow;
        if !(f.arrival_rate.is_finite() && f.arrival_rate >= 0.0) {
            bad("user_flow.arrival_rate", format!("must be non-negative, got {}", f.arrival_rate));
        }
        if !f.size_mu.is_finite() {
            bad("user_flow.size_mu", "must be finite".into());
        }
        if !(f.size_sigma.is_finite() && f.size_sigma >= 0.0) {
            bad("user_flow.size_sigma", format!("must be non-negative, got {}", f.size_sigma));
        }
        if !f.venue_weights.is_empty() {
            if f.venue_weights.len() != venues.len() {
                bad("user_flow.venue_weights", format!("expected {} weights, got {}", venues.len(), f.venue_weights.len()));
            }
            if f.venue_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || f.venue_weights.iter().all(|w| *w == 0.0) {
                bad("user_flow.venue_weights", "weights must be non-negative and not all zero".into());
            }
        }
        if f.users == 0 {
            bad("user_flow.users", "need at least one user".into());
        }
        if !(f.endowment.is_finite() && f.endowment >= 0.0) {
            bad("user_flow.endowment", "must be non-negative".into());
        }

        let t = &self.threshold;
        if !(t.epsilon.is_finite() && t.epsilon > 0.0) {
            bad("threshold.epsilon", format!("must be positive, got {}", t.epsilon));
        }
        if !(t.flash_fee.is_finite() && (0.0..0.01).contains(&t.flash_fee)) {
            bad("threshold.flash_fee", format!("must lie in [0, 0.01), got {}", t.flash_fee));
        }
        if !(t.gas_price.is_finite() && t.gas_price >= 0.0) {
            bad("threshold.gas_price", format!("must be non-negative, got {}", t.gas_price));
        }
        if self.gas.per_swap == 0 {
            bad("gas.per_swap", "must be positive".into());
        }
        if 2 * self.gas.per_swap + self.gas.balancer_overhead > self.block_capacity {
            bad("gas.balancer_overhead", "a balancer transaction does not fit in an empty block".into());
        }

        let r = &self.rewards;
        if let Err(e) = r.weights.validate() {
            bad("rewards.weights", e.to_string());
        }
        for (i, entry) in r.schedule.iter().enumerate() {
            if let Err(e) = entry.weights.validate() {
                bad(&format!("rewards.schedule[{i}].weights"), e.to_string());
            }
        }
        if !(r.gamma > 0.0 && r.gamma < 1.0) {
            bad("rewards.gamma", format!("must lie in (0, 1), got {}", r.gamma));
        }

        let o = &self.objective;
        if !(o.lambda1 >= 0.0 && o.lambda2 >= 0.0) || (o.lambda1 == 0.0 && o.lambda2 == 0.0) {
            bad("objective", "lambda1 and lambda2 must be non-negative and not both zero".into());
        }
        if !(o.delta.is_finite() && o.delta >= 0.0) {
            bad("objective.delta", "must be non-negative".into());
        }
        if !(o.knee > 0.0 && o.knee < 1.0) {
            bad("objective.knee", format!("must lie in (0, 1), got {}", o.knee));
        }

        let g = &self.governance;
        if g.lookback == 0 {
            bad("governance.lookback", "must be positive".into());
        }
        if !probability(g.beta) {
            bad("governance.beta", format!("must lie in [0, 1], got {}", g.beta));
        }
        if g.allowed_funding.is_empty() {
            bad("governance.allowed_funding", "at least one funding mode must be allowed".into());
        }
        if !g.min_net_profit.is_finite() {
            bad("governance.min_net_profit", "must be finite".into());
        }

        let mut ids = BTreeSet::new();
        for (i, s) in self.searchers.iter().enumerate() {
            if !ids.insert(s.id) {
                bad(&format!("searchers[{i}].id"), format!("duplicate searcher id {}", s.id));
            }
            if !(s.noise.is_finite() && s.noise >= 0.0) {
                bad(&format!("searchers[{i}].noise"), "must be non-negative".into());
            }
            if !probability(s.coverage) {
                bad(&format!("searchers[{i}].coverage"), "must lie in [0, 1]".into());
            }
        }
        if !probability(self.producer_dishonesty) {
            bad("producer_dishonesty", "must lie in [0, 1]".into());
        }
        if !probability(self.revert_injection) {
            bad("revert_injection", "must lie in [0, 1]".into());
        }
        if !(self.treasury.numeraire >= 0.0 && self.treasury.lender_liquidity >= 0.0) {
            bad("treasury", "balances must be non-negative".into());
        }
        if self.seeds.is_empty() {
            bad("seeds", "need at least one seed".into());
        }
        out
    }

    /// SHA-256 over the canonical JSON form of the full config.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn venues(&self) -> Vec<VenueId> {
        let set: BTreeSet<u32> = self.pools.iter().map(|p| p.venue).collect();
        set.into_iter().map(VenueId).collect()
    }

    pub fn reference_venue(&self) -> Option<VenueId> {
        self.pools.iter().find(|p| p.is_reference).map(|p| VenueId(p.venue))
    }

    fn asset_id(&self, name: &str) -> AssetId {
        AssetId(self.assets.iter().position(|a| a == name).expect("validated asset") as u16)
    }

    pub fn gas_model(&self) -> GasModel {
        GasModel { per_swap: self.gas.per_swap, per_balancer_tx: self.gas.balancer_overhead }
    }

    pub fn threshold(&self) -> Threshold {
        Threshold::new(self.threshold.epsilon, self.threshold.flash_fee, self.threshold.gas_price).expect("validated threshold")
    }

    pub fn weight_schedule(&self) -> WeightSchedule {
        let mut entries = vec![(0, self.rewards.weights)];
        entries.extend(self.rewards.schedule.iter().map(|e| (e.from_epoch, e.weights)));
        // Later entries win on equal start epochs.
        let mut dedup: BTreeMap<u64, RewardWeights> = BTreeMap::new();
        for (from, w) in entries {
            dedup.insert(from, w);
        }
        WeightSchedule { entries: dedup.into_iter().collect() }
    }

    pub fn objective_weights(&self) -> ObjectiveWeights {
        ObjectiveWeights { lambda1: self.objective.lambda1, lambda2: self.objective.lambda2, delta_cap: self.objective.delta }
    }

    pub fn flow_params(&self) -> UserFlowParams {
        let n = self.venues().len();
        let venue_weights = if self.user_flow.venue_weights.is_empty() { vec![1.0; n] } else { self.user_flow.venue_weights.clone() };
        UserFlowParams {
            arrival_rate: self.user_flow.arrival_rate,
            size_mu: self.user_flow.size_mu,
            size_sigma: self.user_flow.size_sigma,
            venue_weights,
            users: self.user_flow.users,
        }
    }

    pub fn market_context(&self) -> MarketContext {
        let g = &self.governance;
        MarketContext {
            threshold: self.threshold(),
            gas: self.gas_model(),
            predicate: FeasibilityPredicate {
                max_txs_per_block: g.max_txs_per_block,
                min_net_profit: g.min_net_profit,
                allowed_funding: g.allowed_funding.clone(),
            },
            conditions: GovernanceConditions {
                allowed_funding: g.allowed_funding.clone(),
                reference_venue: self.reference_venue().unwrap_or(VenueId(0)),
                max_set_size: g.max_set_size,
            },
            block_capacity: self.block_capacity,
            epoch_length: self.epoch_length,
        }
    }

    pub fn build_pools(&self) -> Vec<Pool> {
        self.pools
            .iter()
            .map(|p| {
                Pool::new(
                    VenueId(p.venue),
                    self.asset_id(&p.asset),
                    Amount::from_f64(p.reserve_base).expect("validated reserve"),
                    Amount::from_f64(p.reserve_quote).expect("validated reserve"),
                    Fee::from_fraction(p.fee).expect("validated fee"),
                    p.is_reference,
                )
                .expect("validated pool")
            })
            .collect()
    }

    /// Reference-venue spot prices, numéraire first.
    pub fn initial_prices(&self) -> Vec<f64> {
        let reference = self.reference_venue();
        let mut prices = vec![1.0; self.n_assets()];
        for p in &self.pools {
            if Some(VenueId(p.venue)) == reference {
                prices[self.asset_id(&p.asset).index()] = p.reserve_quote / p.reserve_base;
            }
        }
        prices
    }

    /// Genesis state: pools, treasury, lender liquidity and user endowments.
    pub fn initial_state(&self) -> Result<ChainState, crate::state::StateError> {
        let n = self.n_assets();
        let mut treasury = vec![Amount::ZERO; n];
        treasury[0] = Amount::from_f64(self.treasury.numeraire).unwrap_or(Amount::ZERO);
        let mut state = ChainState::new(n, self.build_pools(), treasury)?;
        state.credit(AccountId::Lender, AssetId::NUMERAIRE, Amount::from_f64(self.treasury.lender_liquidity).unwrap_or(Amount::ZERO));
        let prices = self.initial_prices();
        for u in 0..self.user_flow.users {
            for (a, price) in prices.iter().enumerate() {
                let amount = Amount::from_f64(self.user_flow.endowment / price).unwrap_or(Amount::ZERO);
                state.credit(AccountId::User(u), AssetId(a as u16), amount);
            }
        }
        Ok(state)
    }
}
