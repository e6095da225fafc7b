//! Deviation detection, trade sizing and atomic execution of balancer trades.
//!
//! A balancer trade always has two legs: buy the asset with numéraire on the
//! cheaper of (venue, reference) and sell it back on the dearer one. The
//! principal is either flash-borrowed from the designated lender or fronted
//! by the treasury. Execution happens on copies of the two pools and is only
//! written back once repayment, gas and the no-inventory-risk condition are
//! all satisfied, so a revert leaves the state untouched.

use serde::{Deserialize, Serialize};

use crate::amount::{Amount, SCALE};
use crate::market::{AssetId, Fee, GasModel, MarketError, Pool, PriceVector, SwapDirection, Timestamp, VenueId};
use crate::state::{AccountId, ChainState};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ArbError {
    #[error("no reference price vector in snapshot")]
    MissingReference,
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("flash fee {0} outside [0, 0.01)")]
    InvalidFlashFee(f64),
    #[error("gas price {0} must be finite and non-negative")]
    InvalidGasPrice(f64),
    #[error("no pool for venue {venue:?}, asset {asset:?}")]
    MissingPool { venue: VenueId, asset: AssetId },
    #[error(transparent)]
    Market(#[from] MarketError),
}

/// `(p_venue - p_ref) / p_ref`.
pub fn relative_deviation(venue_price: f64, reference_price: f64) -> f64 {
    (venue_price - reference_price) / reference_price
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub asset: AssetId,
    pub venue: VenueId,
    pub delta_p: f64,
    pub observed_at: Timestamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TradeDirection {
    BuyOnVenueSellOnRef,
    BuyOnRefSellOnVenue,
}

impl TradeDirection {
    /// Buy where the asset is cheaper. `None` when prices agree.
    pub fn for_deviation(delta_p: f64) -> Option<TradeDirection> {
        if delta_p > 0.0 {
            Some(TradeDirection::BuyOnRefSellOnVenue)
        } else if delta_p < 0.0 {
            Some(TradeDirection::BuyOnVenueSellOnRef)
        } else {
            None
        }
    }

    pub fn mirrored(self) -> TradeDirection {
        match self {
            TradeDirection::BuyOnVenueSellOnRef => TradeDirection::BuyOnRefSellOnVenue,
            TradeDirection::BuyOnRefSellOnVenue => TradeDirection::BuyOnVenueSellOnRef,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Funding {
    FlashLoan,
    NetworkLiquidity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub epsilon: f64,
    pub flash_fee: Fee,
    /// Nano-numéraire per gas unit.
    pub gas_price: Amount,
}

impl Threshold {
    pub fn new(epsilon: f64, flash_fee: f64, gas_price: f64) -> Result<Threshold, ArbError> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(ArbError::InvalidEpsilon(epsilon));
        }
        if !(flash_fee.is_finite() && (0.0..0.01).contains(&flash_fee)) {
            return Err(ArbError::InvalidFlashFee(flash_fee));
        }
        let flash_fee = Fee::from_fraction(flash_fee).map_err(|_| ArbError::InvalidFlashFee(flash_fee))?;
        let gas_price = Amount::from_f64(gas_price).ok_or(ArbError::InvalidGasPrice(gas_price))?;
        Ok(Threshold { epsilon, flash_fee, gas_price })
    }

    pub fn gas_cost(&self, gas: u64) -> Amount {
        Amount::from_raw(self.gas_price.raw() * gas as u128)
    }

    pub fn flash_fee_for(&self, funding: Funding) -> f64 {
        match funding {
            Funding::FlashLoan => self.flash_fee.fraction(),
            Funding::NetworkLiquidity => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Opportunity {
    pub deviation: Deviation,
    pub direction: TradeDirection,
    /// Numéraire principal spent on the first leg.
    pub optimal_size: Amount,
    /// Model profit before gas, after the flash fee.
    pub gross_profit: f64,
    /// Model profit net of flash fee and gas.
    pub expected_profit: f64,
    pub gas_estimate: u64,
    pub funding: Funding,
}

/// Deviation of every non-reference venue from the reference, per asset.
pub fn scan_deviations(vectors: &[PriceVector]) -> Result<Vec<Deviation>, ArbError> {
    let reference = vectors.iter().find(|v| v.is_reference).ok_or(ArbError::MissingReference)?;
    let mut out = Vec::new();
    for vector in vectors.iter().filter(|v| !v.is_reference) {
        for a in 1..reference.prices.len() {
            let asset = AssetId(a as u16);
            out.push(Deviation {
                asset,
                venue: vector.venue,
                delta_p: relative_deviation(vector.price(asset), reference.price(asset)),
                observed_at: vector.as_of,
            });
        }
    }
    Ok(out)
}

/// Lower edge of the no-trade band: the venue-cheap deviation below which a
/// round trip through both pools cannot repay the loan.
pub fn fee_band(fee_cheap: f64, fee_dear: f64, flash_fee: f64) -> f64 {
    1.0 - (1.0 - fee_cheap) * (1.0 - fee_dear) / (1.0 + flash_fee)
}

/// Largest `|Δp|` left unarbitraged in `direction`. When the venue is the
/// cheap side this is [`fee_band`]; when it is the dear side the bound is
/// the reciprocal ratio, measured against the reference price.
pub fn no_trade_band(direction: TradeDirection, fee_venue: f64, fee_reference: f64, flash_fee: f64) -> f64 {
    let retained = (1.0 - fee_venue) * (1.0 - fee_reference) / (1.0 + flash_fee);
    match direction {
        TradeDirection::BuyOnVenueSellOnRef => 1.0 - retained,
        TradeDirection::BuyOnRefSellOnVenue => 1.0 / retained - 1.0,
    }
}

#[derive(Clone, Copy, Debug)]
struct Leg {
    reserve_in: f64,
    reserve_out: f64,
    retain: f64,
}

impl Leg {
    fn new(pool: &Pool, direction: SwapDirection) -> Leg {
        let (r_in, r_out) = pool.reserves_for(direction);
        Leg { reserve_in: r_in.to_f64(), reserve_out: r_out.to_f64(), retain: 1.0 - pool.fee.fraction() }
    }

    fn out(&self, x: f64) -> f64 {
        let xe = x * self.retain;
        self.reserve_out * xe / (self.reserve_in + xe)
    }

    fn slope(&self, x: f64) -> f64 {
        let d = self.reserve_in + x * self.retain;
        self.reserve_out * self.reserve_in * self.retain / (d * d)
    }
}

/// Continuous two-leg profit model: numéraire in on `cheap`, base out, base
/// in on `dear`, numéraire out, minus principal and flash fee.
#[derive(Clone, Copy, Debug)]
pub struct ProfitCurve {
    buy: Leg,
    sell: Leg,
    repay: f64,
}

impl ProfitCurve {
    pub fn new(cheap: &Pool, dear: &Pool, flash_fee: f64) -> ProfitCurve {
        ProfitCurve {
            buy: Leg::new(cheap, SwapDirection::QuoteIn),
            sell: Leg::new(dear, SwapDirection::BaseIn),
            repay: 1.0 + flash_fee,
        }
    }

    pub fn profit(&self, x: f64) -> f64 {
        self.sell.out(self.buy.out(x)) - x * self.repay
    }

    pub fn marginal(&self, x: f64) -> f64 {
        self.sell.slope(self.buy.out(x)) * self.buy.slope(x) - self.repay
    }
}

/// Profit-maximizing principal for a cheap→dear round trip, and the model
/// profit at that size. `(0, 0)` when no positive size is profitable.
///
/// The curve is concave, so a ternary search brackets the maximum; the
/// bracket is then polished by bisecting on the sign of the marginal profit,
/// which resolves the optimum far below the flat top of the value curve.
pub fn optimal_trade_size(cheap: &Pool, dear: &Pool, flash_fee: f64) -> (Amount, f64) {
    if !cheap.is_tradeable() || !dear.is_tradeable() {
        return (Amount::ZERO, 0.0);
    }
    let curve = ProfitCurve::new(cheap, dear, flash_fee);
    if curve.marginal(0.0) <= 0.0 {
        return (Amount::ZERO, 0.0);
    }
    let mut upper = cheap.reserve_quote.to_f64();
    for _ in 0..128 {
        if curve.marginal(upper) <= 0.0 {
            break;
        }
        upper *= 2.0;
    }

    let (mut lo, mut hi) = (0.0f64, upper);
    for _ in 0..200 {
        if hi - lo <= upper * 1e-6 {
            break;
        }
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if curve.profit(m1) < curve.profit(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    if curve.marginal(lo) <= 0.0 {
        lo = 0.0;
    }
    if curve.marginal(hi) > 0.0 {
        hi = upper;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if curve.marginal(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let size = match Amount::from_f64(0.5 * (lo + hi)) {
        Some(a) if !a.is_zero() => a,
        _ => return (Amount::ZERO, 0.0),
    };
    let profit = curve.profit(size.to_f64());
    if profit <= 0.0 {
        return (Amount::ZERO, 0.0);
    }
    (size, profit)
}

/// Returns `(cheap, dear)` pools for a trade on `(asset, venue)`.
pub fn trade_pools(
    state: &ChainState,
    asset: AssetId,
    venue: VenueId,
    direction: TradeDirection,
) -> Result<(Pool, Pool), ArbError> {
    let venue_pool = *state.pool(venue, asset).ok_or(ArbError::MissingPool { venue, asset })?;
    let reference = state.reference_venue();
    let ref_pool = *state
        .pool(reference, asset)
        .ok_or(ArbError::MissingPool { venue: reference, asset })?;
    Ok(match direction {
        TradeDirection::BuyOnVenueSellOnRef => (venue_pool, ref_pool),
        TradeDirection::BuyOnRefSellOnVenue => (ref_pool, venue_pool),
    })
}

/// Live deviation of `(asset, venue)` against the reference pool.
pub fn current_deviation(
    state: &ChainState,
    asset: AssetId,
    venue: VenueId,
    at: Timestamp,
) -> Result<Deviation, ArbError> {
    let venue_pool = state.pool(venue, asset).ok_or(ArbError::MissingPool { venue, asset })?;
    let reference = state.reference_venue();
    let ref_pool = state
        .pool(reference, asset)
        .ok_or(ArbError::MissingPool { venue: reference, asset })?;
    Ok(Deviation {
        asset,
        venue,
        delta_p: relative_deviation(venue_pool.spot_price()?, ref_pool.spot_price()?),
        observed_at: at,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Assessment {
    BelowEpsilon(Deviation),
    Unprofitable(Deviation),
    Opportunity(Opportunity),
}

/// Sizes the trade for one deviation. Negative or zero net profit after the
/// flash fee and gas makes the deviation unprofitable.
pub fn assess_deviation(
    state: &ChainState,
    deviation: Deviation,
    threshold: &Threshold,
    funding: Funding,
    gas: &GasModel,
) -> Result<Assessment, ArbError> {
    if deviation.delta_p.abs() <= threshold.epsilon {
        return Ok(Assessment::BelowEpsilon(deviation));
    }
    let Some(direction) = TradeDirection::for_deviation(deviation.delta_p) else {
        return Ok(Assessment::BelowEpsilon(deviation));
    };
    let (cheap, dear) = trade_pools(state, deviation.asset, deviation.venue, direction)?;
    let (size, gross) = optimal_trade_size(&cheap, &dear, threshold.flash_fee_for(funding));
    let gas_estimate = gas.balancer_tx_gas();
    let net = gross - threshold.gas_cost(gas_estimate).to_f64();
    if size.is_zero() || net <= 0.0 {
        return Ok(Assessment::Unprofitable(deviation));
    }
    Ok(Assessment::Opportunity(Opportunity {
        deviation,
        direction,
        optimal_size: size,
        gross_profit: gross,
        expected_profit: net,
        gas_estimate,
        funding,
    }))
}

pub fn assess(
    state: &ChainState,
    asset: AssetId,
    venue: VenueId,
    threshold: &Threshold,
    funding: Funding,
    gas: &GasModel,
    at: Timestamp,
) -> Result<Assessment, ArbError> {
    let deviation = current_deviation(state, asset, venue, at)?;
    assess_deviation(state, deviation, threshold, funding, gas)
}

pub fn detect_opportunities(
    deviations: &[Deviation],
    threshold: &Threshold,
    state: &ChainState,
    funding: Funding,
    gas: &GasModel,
) -> Result<Vec<Opportunity>, ArbError> {
    let mut out = Vec::new();
    for &d in deviations {
        if let Assessment::Opportunity(o) = assess_deviation(state, d, threshold, funding, gas)? {
            out.push(o);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevertReason {
    InsufficientProceeds,
    InsufficientTreasury,
    InsufficientLenderLiquidity,
    GasExhausted,
    DegeneratePool,
    /// Forced failure from the fault injector.
    Injected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Settlement {
    /// Numéraire returned to the funding source on top of the principal.
    pub flash_fee: Amount,
    pub gas_fee: Amount,
    pub net_profit: Amount,
}

/// Splits second-leg proceeds into repayment, gas and profit. Fails when the
/// proceeds cannot cover principal, flash fee and gas together.
pub fn settle(
    principal: Amount,
    proceeds: Amount,
    flash_fee: Fee,
    gas_fee: Amount,
) -> Result<Settlement, RevertReason> {
    let fee = principal
        .mul_div_ceil(flash_fee.ppb() as u128, SCALE)
        .ok_or(RevertReason::InsufficientProceeds)?;
    let owed = principal + fee + gas_fee;
    let net_profit = proceeds.checked_sub(owed).ok_or(RevertReason::InsufficientProceeds)?;
    Ok(Settlement { flash_fee: fee, gas_fee, net_profit })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Beneficiary {
    Treasury,
    External,
}

#[derive(Clone, Copy, Debug)]
pub struct ExecContext<'a> {
    pub gas_budget: u64,
    pub gas: &'a GasModel,
    pub threshold: &'a Threshold,
    pub beneficiary: Beneficiary,
    pub inject_revert: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commit {
    pub funding: Funding,
    pub principal: Amount,
    pub proceeds: Amount,
    pub settlement: Settlement,
    pub gas_used: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ExecOutcome {
    Committed(Commit),
    Reverted { reason: RevertReason, gas_used: u64 },
}

/// Executes both legs atomically. On any failure the state is unchanged; a
/// failure after the gas check still consumes the transaction's gas.
pub fn execute_atomic(state: &mut ChainState, opportunity: &Opportunity, ctx: &ExecContext<'_>) -> ExecOutcome {
    let tx_gas = ctx.gas.balancer_tx_gas();
    if ctx.gas_budget < tx_gas {
        return ExecOutcome::Reverted { reason: RevertReason::GasExhausted, gas_used: 0 };
    }
    let revert = |reason| ExecOutcome::Reverted { reason, gas_used: tx_gas };

    let asset = opportunity.deviation.asset;
    let venue = opportunity.deviation.venue;
    let (Some(vi), Some(ri)) = (state.pool_index(venue, asset), state.pool_index(state.reference_venue(), asset))
    else {
        return revert(RevertReason::DegeneratePool);
    };
    let principal = opportunity.optimal_size;
    let funding = match ctx.beneficiary {
        Beneficiary::External => Funding::FlashLoan,
        Beneficiary::Treasury => opportunity.funding,
    };
    match funding {
        Funding::FlashLoan if state.balance(AccountId::Lender, AssetId::NUMERAIRE) < principal => {
            return revert(RevertReason::InsufficientLenderLiquidity)
        }
        Funding::NetworkLiquidity if state.treasury[AssetId::NUMERAIRE.index()] < principal => {
            return revert(RevertReason::InsufficientTreasury)
        }
        _ => {}
    }

    let mut venue_pool = state.pools[vi];
    let mut ref_pool = state.pools[ri];
    let (buy, sell) = match opportunity.direction {
        TradeDirection::BuyOnVenueSellOnRef => (&mut venue_pool, &mut ref_pool),
        TradeDirection::BuyOnRefSellOnVenue => (&mut ref_pool, &mut venue_pool),
    };
    let Ok(base_out) = buy.apply(SwapDirection::QuoteIn, principal) else {
        return revert(RevertReason::DegeneratePool);
    };
    if base_out.is_zero() {
        return revert(RevertReason::InsufficientProceeds);
    }
    let Ok(proceeds) = sell.apply(SwapDirection::BaseIn, base_out) else {
        return revert(RevertReason::DegeneratePool);
    };
    let flash_fee = match funding {
        Funding::FlashLoan => ctx.threshold.flash_fee,
        Funding::NetworkLiquidity => Fee::ZERO,
    };
    let settlement = match settle(principal, proceeds, flash_fee, ctx.threshold.gas_cost(tx_gas)) {
        Ok(s) => s,
        Err(reason) => return revert(reason),
    };
    if ctx.inject_revert {
        return revert(RevertReason::Injected);
    }

    // Principal is borrowed and returned within the transaction, so only the
    // fee, gas and profit move between accounts.
    state.pools[vi] = venue_pool;
    state.pools[ri] = ref_pool;
    if !settlement.flash_fee.is_zero() {
        state.credit(AccountId::Lender, AssetId::NUMERAIRE, settlement.flash_fee);
    }
    state.credit(AccountId::FeeCollector, AssetId::NUMERAIRE, settlement.gas_fee);
    match ctx.beneficiary {
        Beneficiary::Treasury => state.credit_treasury(AssetId::NUMERAIRE, settlement.net_profit),
        Beneficiary::External => state.credit(AccountId::External, AssetId::NUMERAIRE, settlement.net_profit),
    }
    ExecOutcome::Committed(Commit { funding, principal, proceeds, settlement, gas_used: tx_gas })
}
