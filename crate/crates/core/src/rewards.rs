//! Epoch profit distribution, producer fees and slashing.

use serde::{Deserialize, Serialize};

use crate::amount::Amount;
use crate::chain::Block;
use crate::market::{AssetId, VenueId};
use crate::state::{AccountId, ChainState, StateError};

/// Weights are applied at this resolution so splits stay in integers.
const WEIGHT_SCALE: u128 = 1_000_000_000_000;
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("reward weights must lie in [0, 1], got {0:?}")]
    OutOfRange([f64; 3]),
    #[error("reward weights sum to {0:.12}, expected 1")]
    NotSimplex(f64),
    #[error("producer share gamma must lie in (0, 1), got {0}")]
    InvalidGamma(f64),
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub w_searchers: f64,
    pub w_marketplaces: f64,
    pub w_treasury: f64,
}

impl RewardWeights {
    pub fn new(w_searchers: f64, w_marketplaces: f64, w_treasury: f64) -> Result<RewardWeights, RewardError> {
        let w = RewardWeights { w_searchers, w_marketplaces, w_treasury };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        let all = [self.w_searchers, self.w_marketplaces, self.w_treasury];
        if all.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(RewardError::OutOfRange(all));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(RewardError::NotSimplex(sum));
        }
        Ok(())
    }
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { w_searchers: 0.4, w_marketplaces: 0.4, w_treasury: 0.2 }
    }
}

/// Per-epoch weights: each entry applies from `from_epoch` until the next.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSchedule {
    pub entries: Vec<(u64, RewardWeights)>,
}

impl WeightSchedule {
    pub fn constant(w: RewardWeights) -> WeightSchedule {
        WeightSchedule { entries: vec![(0, w)] }
    }

    pub fn weights_for(&self, epoch: u64) -> RewardWeights {
        self.entries
            .iter()
            .filter(|(from, _)| *from <= epoch)
            .max_by_key(|(from, _)| *from)
            .or_else(|| self.entries.iter().min_by_key(|(from, _)| *from))
            .map(|(_, w)| *w)
            .unwrap_or_default()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocations {
    pub searchers: Amount,
    pub marketplaces: Amount,
    pub treasury: Amount,
}

impl Allocations {
    pub fn total(&self) -> Amount {
        self.searchers + self.marketplaces + self.treasury
    }
}

fn weighted(amount: Amount, w: f64) -> Amount {
    let scaled = (w * WEIGHT_SCALE as f64).round() as u128;
    Amount::from_raw(mul_div_rem(amount.raw(), scaled, WEIGHT_SCALE).0)
}

/// `F_x = ω_x·Π`, floored to nano-units; the treasury takes the remainder so
/// the shares sum to the pool exactly.
pub fn split_pool(profit_pool: Amount, weights: &RewardWeights) -> Allocations {
    let searchers = weighted(profit_pool, weights.w_searchers);
    let marketplaces = weighted(profit_pool, weights.w_marketplaces);
    let rest = profit_pool.raw() - searchers.raw().min(profit_pool.raw());
    let marketplaces = Amount::from_raw(marketplaces.raw().min(rest));
    let treasury = Amount::from_raw(rest - marketplaces.raw());
    Allocations { searchers, marketplaces, treasury }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarketplaceContribution {
    pub venue: VenueId,
    pub rho: Amount,
}

/// `ρ(l)`: committed net profit whose non-reference leg traded on venue `l`.
/// Every venue in `venues` is listed, in order, even with zero contribution.
pub fn measure_contribution(blocks: &[Block], venues: &[VenueId]) -> Vec<MarketplaceContribution> {
    let mut out: Vec<MarketplaceContribution> =
        venues.iter().map(|&venue| MarketplaceContribution { venue, rho: Amount::ZERO }).collect();
    for record in blocks.iter().flat_map(|b| b.balancer_records()) {
        if let Some(profit) = record.net_profit() {
            match out.iter_mut().find(|c| c.venue == record.venue) {
                Some(c) => c.rho += profit,
                None => out.push(MarketplaceContribution { venue: record.venue, rho: profit }),
            }
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarketplaceSplit {
    pub per_venue: Vec<(VenueId, Amount)>,
    /// Allocation with no contributing venue, returned to the treasury.
    pub diverted: Amount,
}

/// `F_l = G·ρ(l)/Σρ` by largest remainder: floors first, then the leftover
/// nano-units go to the largest fractional parts (ties to the earlier venue).
pub fn split_marketplaces(group_allocation: Amount, contributions: &[MarketplaceContribution]) -> MarketplaceSplit {
    let total: u128 = contributions.iter().map(|c| c.rho.raw()).sum();
    if total == 0 {
        if !group_allocation.is_zero() {
            log::info!("no marketplace contributed; {group_allocation} diverted to treasury");
        }
        return MarketplaceSplit {
            per_venue: contributions.iter().map(|c| (c.venue, Amount::ZERO)).collect(),
            diverted: group_allocation,
        };
    }
    let g = group_allocation.raw();
    let mut shares: Vec<(u128, u128)> = contributions
        .iter()
        .map(|c| mul_div_rem(g, c.rho.raw(), total))
        .collect();
    let assigned: u128 = shares.iter().map(|s| s.0).sum();
    let mut leftover = g - assigned;
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| shares[b].1.cmp(&shares[a].1).then(a.cmp(&b)));
    for i in order {
        if leftover == 0 {
            break;
        }
        if shares[i].1 > 0 {
            shares[i].0 += 1;
            leftover -= 1;
        }
    }
    MarketplaceSplit {
        per_venue: contributions.iter().zip(&shares).map(|(c, s)| (c.venue, Amount::from_raw(s.0))).collect(),
        diverted: Amount::ZERO,
    }
}

/// `(a·b / d, a·b mod d)`, splitting `a` by `d` when the product overflows.
/// Exact while `(a mod d)·b` fits, which holds for `b ≤ d < 2^64`.
fn mul_div_rem(a: u128, b: u128, d: u128) -> (u128, u128) {
    match a.checked_mul(b) {
        Some(p) => (p / d, p % d),
        None => {
            let (qa, ra) = (a / d, a % d);
            let p = ra.checked_mul(b).expect("marketplace split overflow");
            (qa * b + p / d, p % d)
        }
    }
}

/// `γ × fee-bearing balancer gas × gas price`, floored to nano-units.
pub fn pay_producer(balancer_gas: u64, gamma: f64, gas_price: Amount) -> Amount {
    let fees = Amount::from_raw(balancer_gas as u128 * gas_price.raw());
    weighted(fees, gamma)
}

/// True when the executed (non-skipped) priorities respect the prescribed
/// order, i.e. are strictly increasing.
pub fn is_order_consistent(executed_priorities: &[usize]) -> bool {
    executed_priorities.windows(2).all(|w| w[0] < w[1])
}

pub fn executed_priorities(block: &Block) -> Vec<usize> {
    block.balancer_records().filter(|r| r.was_executed()).map(|r| r.priority).collect()
}

/// Deducts `penalty` (capped at the producer's balance) into the treasury if
/// the block's executions were out of order. Returns the amount slashed.
pub fn apply_slashing(state: &mut ChainState, block: &Block, penalty: Amount) -> Amount {
    if is_order_consistent(&executed_priorities(block)) {
        return Amount::ZERO;
    }
    let taken = penalty.min(state.balance(AccountId::Producer, AssetId::NUMERAIRE));
    if !taken.is_zero() {
        state
            .debit(AccountId::Producer, AssetId::NUMERAIRE, taken)
            .expect("slash capped at producer balance");
        state.credit_treasury(AssetId::NUMERAIRE, taken);
    }
    taken
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardLedger {
    pub epoch: u64,
    pub profit_pool: Amount,
    pub weights: RewardWeights,
    pub allocations: Allocations,
    pub marketplace_allocations: Vec<(VenueId, Amount)>,
    pub diverted_to_treasury: Amount,
    pub recipient_searcher: Option<u32>,
    pub producer_fees: Amount,
    pub slashed: Amount,
    pub slash_count: usize,
}

impl RewardLedger {
    pub fn is_exact(&self) -> bool {
        let mp: Amount = self.marketplace_allocations.iter().map(|(_, a)| *a).sum();
        self.allocations.total() == self.profit_pool && mp + self.diverted_to_treasury == self.allocations.marketplaces
    }
}

/// Splits the epoch pool, already sitting in the treasury, and pays the
/// searcher and marketplace shares out of it. `producer_fees` and `slashed`
/// were settled block by block and are only recorded here.
#[allow(clippy::too_many_arguments)]
pub fn distribute_epoch(
    state: &mut ChainState,
    epoch: u64,
    blocks: &[Block],
    profit_pool: Amount,
    weights: &RewardWeights,
    searcher: Option<u32>,
    producer_fees: Amount,
    slashed: Amount,
    slash_count: usize,
) -> Result<RewardLedger, RewardError> {
    weights.validate()?;
    let mut allocations = split_pool(profit_pool, weights);
    if searcher.is_none() && !allocations.searchers.is_zero() {
        allocations.treasury += allocations.searchers;
        allocations.searchers = Amount::ZERO;
    }
    let venues: Vec<VenueId> = state.trading_venues().collect();
    let split = split_marketplaces(allocations.marketplaces, &measure_contribution(blocks, &venues));
    let n = AssetId::NUMERAIRE;
    if let Some(id) = searcher {
        state.debit_treasury(n, allocations.searchers)?;
        state.credit(AccountId::Searcher(id), n, allocations.searchers);
    }
    for &(venue, amount) in &split.per_venue {
        if !amount.is_zero() {
            state.debit_treasury(n, amount)?;
            state.credit(AccountId::Marketplace(venue), n, amount);
        }
    }
    Ok(RewardLedger {
        epoch,
        profit_pool,
        weights: *weights,
        allocations,
        marketplace_allocations: split.per_venue,
        diverted_to_treasury: split.diverted,
        recipient_searcher: searcher,
        producer_fees,
        slashed,
        slash_count,
    })
}
