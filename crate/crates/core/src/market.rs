//! Assets, constant-product venues and price snapshots.
//!
//! Every pool trades one base asset against the numéraire (asset 0). A venue
//! is a set of pools sharing a `VenueId`; exactly one venue is flagged as the
//! reference market against which deviations are measured.

use serde::{Deserialize, Serialize};

use crate::amount::{Amount, SCALE};

/// Index into the asset universe. Asset 0 is the numéraire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AssetId(pub u16);

impl AssetId {
    pub const NUMERAIRE: AssetId = AssetId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VenueId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapDirection {
    BaseIn,
    QuoteIn,
}

impl SwapDirection {
    pub fn reversed(self) -> Self {
        match self {
            SwapDirection::BaseIn => SwapDirection::QuoteIn,
            SwapDirection::QuoteIn => SwapDirection::BaseIn,
        }
    }
}

/// Fraction of the input retained by the pool, in parts per billion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fee(u32);

/// Fees must stay below 10%.
pub const MAX_FEE_PPB: u32 = 100_000_000;

impl Fee {
    pub const ZERO: Fee = Fee(0);

    pub fn from_fraction(fraction: f64) -> Result<Fee, MarketError> {
        let ppb = (fraction * 1e9).round();
        if !fraction.is_finite() || fraction < 0.0 || ppb >= MAX_FEE_PPB as f64 {
            return Err(MarketError::InvalidFee(fraction));
        }
        Ok(Fee(ppb as u32))
    }

    pub fn ppb(self) -> u32 {
        self.0
    }

    pub fn fraction(self) -> f64 {
        self.0 as f64 / 1e9
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MarketError {
    #[error("venue {venue:?} pool for asset {asset:?} has a zero reserve")]
    Degenerate { venue: VenueId, asset: AssetId },
    #[error("swap input must be positive")]
    NonPositiveInput,
    #[error("asset {asset:?} is not the base asset of this pool")]
    WrongAsset { asset: AssetId },
    #[error("fee {0} outside [0, 0.1)")]
    InvalidFee(f64),
    #[error("pool base and quote must differ")]
    SameAsset,
    #[error("arithmetic overflow in swap")]
    Overflow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool {
    pub venue: VenueId,
    pub base: AssetId,
    pub quote: AssetId,
    pub reserve_base: Amount,
    pub reserve_quote: Amount,
    pub fee: Fee,
    pub is_reference: bool,
}

impl Pool {
    pub fn new(
        venue: VenueId,
        base: AssetId,
        reserve_base: Amount,
        reserve_quote: Amount,
        fee: Fee,
        is_reference: bool,
    ) -> Result<Pool, MarketError> {
        if base == AssetId::NUMERAIRE {
            return Err(MarketError::SameAsset);
        }
        Ok(Pool {
            venue,
            base,
            quote: AssetId::NUMERAIRE,
            reserve_base,
            reserve_quote,
            fee,
            is_reference,
        })
    }

    pub fn is_tradeable(&self) -> bool {
        !self.reserve_base.is_zero() && !self.reserve_quote.is_zero()
    }

    fn ensure_tradeable(&self) -> Result<(), MarketError> {
        if self.is_tradeable() {
            Ok(())
        } else {
            Err(MarketError::Degenerate { venue: self.venue, asset: self.base })
        }
    }

    /// Marginal fee-exclusive price of the base asset in quote units.
    pub fn spot_price(&self) -> Result<f64, MarketError> {
        self.ensure_tradeable()?;
        Ok(self.reserve_quote.to_f64() / self.reserve_base.to_f64())
    }

    /// `(reserve_in, reserve_out)` for a trade in `direction`.
    pub fn reserves_for(&self, direction: SwapDirection) -> (Amount, Amount) {
        match direction {
            SwapDirection::BaseIn => (self.reserve_base, self.reserve_quote),
            SwapDirection::QuoteIn => (self.reserve_quote, self.reserve_base),
        }
    }

    pub fn quote(&self, direction: SwapDirection, amount_in: Amount) -> Result<Amount, MarketError> {
        if amount_in.is_zero() {
            return Err(MarketError::NonPositiveInput);
        }
        self.ensure_tradeable()?;
        let (reserve_in, reserve_out) = self.reserves_for(direction);
        let effective_in = amount_in
            .mul_div_floor(SCALE - self.fee.ppb() as u128, SCALE)
            .ok_or(MarketError::Overflow)?;
        let denom = reserve_in.checked_add(effective_in).ok_or(MarketError::Overflow)?;
        // floor(r_out * x_eff / (r_in + x_eff)) keeps the product from shrinking.
        reserve_out
            .mul_div_floor(effective_in.raw(), denom.raw())
            .ok_or(MarketError::Overflow)
    }

    /// Applies a swap in place and returns the output amount.
    pub fn apply(&mut self, direction: SwapDirection, amount_in: Amount) -> Result<Amount, MarketError> {
        let out = self.quote(direction, amount_in)?;
        let (reserve_in, reserve_out) = self.reserves_for(direction);
        let new_in = reserve_in.checked_add(amount_in).ok_or(MarketError::Overflow)?;
        let new_out = reserve_out.checked_sub(out).ok_or(MarketError::Overflow)?;
        match direction {
            SwapDirection::BaseIn => {
                self.reserve_base = new_in;
                self.reserve_quote = new_out;
            }
            SwapDirection::QuoteIn => {
                self.reserve_quote = new_in;
                self.reserve_base = new_out;
            }
        }
        Ok(out)
    }

    /// The constant-product invariant in squared units, as a float.
    pub fn invariant(&self) -> f64 {
        self.reserve_base.to_f64() * self.reserve_quote.to_f64()
    }
}

/// Gas charged per execution, in gas units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasModel {
    pub per_swap: u64,
    pub per_balancer_tx: u64,
}

impl Default for GasModel {
    fn default() -> Self {
        GasModel { per_swap: 21_000, per_balancer_tx: 90_000 }
    }
}

impl GasModel {
    /// A balancer transaction is the fixed overhead plus its two swap legs.
    pub fn balancer_tx_gas(&self) -> u64 {
        self.per_balancer_tx + 2 * self.per_swap
    }
}

pub fn spot_price(pool: &Pool, asset: AssetId) -> Result<f64, MarketError> {
    if asset != pool.base {
        return Err(MarketError::WrongAsset { asset });
    }
    pool.spot_price()
}

pub fn quote_swap(pool: &Pool, direction: SwapDirection, amount_in: Amount) -> Result<Amount, MarketError> {
    pool.quote(direction, amount_in)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SwapOutcome {
    pub amount_out: Amount,
    pub gas_used: u64,
}

pub fn execute_swap(
    pool: &mut Pool,
    direction: SwapDirection,
    amount_in: Amount,
    gas: &GasModel,
) -> Result<SwapOutcome, MarketError> {
    let amount_out = pool.apply(direction, amount_in)?;
    Ok(SwapOutcome { amount_out, gas_used: gas.per_swap })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    User,
    Balancer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Timestamp {
    pub block: u64,
    pub phase: Phase,
}

/// Per-venue prices indexed by asset, numéraire first (always 1.0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceVector {
    pub venue: VenueId,
    pub is_reference: bool,
    pub prices: Vec<f64>,
    pub as_of: Timestamp,
}

impl PriceVector {
    pub fn label(&self) -> String {
        if self.is_reference {
            "R".to_string()
        } else {
            format!("V{}", self.venue.0)
        }
    }

    pub fn price(&self, asset: AssetId) -> f64 {
        self.prices[asset.index()]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Snapshot {
    pub vectors: Vec<PriceVector>,
    /// Venues left out because one of their pools could not be priced.
    pub degenerate: Vec<VenueId>,
}

impl Snapshot {
    pub fn reference(&self) -> Option<&PriceVector> {
        self.vectors.iter().find(|v| v.is_reference)
    }
}

/// One price vector per venue, in ascending venue order. A venue missing a
/// pool for some asset, or holding an untradeable pool, is omitted and
/// reported in `degenerate`.
pub fn snapshot_prices(pools: &[Pool], n_assets: usize, as_of: Timestamp) -> Snapshot {
    let mut venues: Vec<VenueId> = pools.iter().map(|p| p.venue).collect();
    venues.sort();
    venues.dedup();
    let mut snapshot = Snapshot::default();
    for venue in venues {
        let mut prices = vec![f64::NAN; n_assets];
        if n_assets > 0 {
            prices[0] = 1.0;
        }
        let mut is_reference = false;
        let mut ok = true;
        for pool in pools.iter().filter(|p| p.venue == venue) {
            is_reference |= pool.is_reference;
            match pool.spot_price() {
                Ok(p) if pool.base.index() < n_assets => prices[pool.base.index()] = p,
                _ => ok = false,
            }
        }
        if ok && prices.iter().all(|p| p.is_finite() && *p > 0.0) {
            snapshot.vectors.push(PriceVector { venue, is_reference, prices, as_of });
        } else {
            log::warn!("venue {} omitted from price snapshot at block {}", venue.0, as_of.block);
            snapshot.degenerate.push(venue);
        }
    }
    snapshot
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pool(base: f64, quote: f64, fee: f64) -> Pool {
        Pool::new(
            VenueId(1),
            AssetId(1),
            Amount::from_f64(base).unwrap(),
            Amount::from_f64(quote).unwrap(),
            Fee::from_fraction(fee).unwrap(),
            false,
        )
        .unwrap()
    }

    const TS: Timestamp = Timestamp { block: 0, phase: Phase::User };

    #[test]
    fn spot_price_is_reserve_ratio() {
        assert_eq!(spot_price(&pool(1000.0, 2000.0, 0.0), AssetId(1)).unwrap(), 2.0);
        assert_eq!(spot_price(&pool(1000.0, 1000.0, 0.0), AssetId(1)).unwrap(), 1.0);
        assert_eq!(spot_price(&pool(1.0, 3.0, 0.0), AssetId(1)).unwrap(), 3.0);
    }

    #[test]
    fn spot_price_rejects_degenerate_and_wrong_asset() {
        let p = pool(0.0, 10.0, 0.0);
        assert!(matches!(p.spot_price(), Err(MarketError::Degenerate { .. })));
        let p = pool(10.0, 10.0, 0.0);
        assert!(matches!(spot_price(&p, AssetId(0)), Err(MarketError::WrongAsset { .. })));
    }

    #[test]
    fn quote_without_fee() {
        let out = quote_swap(&pool(1000.0, 1000.0, 0.0), SwapDirection::BaseIn, Amount::from_units(100)).unwrap();
        let expected = 1000.0 - 1e6 / 1100.0;
        assert!((out.to_f64() - expected).abs() < 1e-9);
    }

    #[test]
    fn quote_with_fee() {
        let out = quote_swap(&pool(1000.0, 1000.0, 0.003), SwapDirection::BaseIn, Amount::from_units(100)).unwrap();
        // independent: 1000 - 10^6 / (1000 + 100*0.997)
        let expected = 1000.0 - 1e6 / (1000.0 + 99.7);
        assert!((out.to_f64() - 90.661_089_388_0).abs() < 1e-9);
        assert!((out.to_f64() - expected).abs() < 1e-9);
    }

    #[test]
    fn quote_rejects_zero_input() {
        assert_eq!(
            pool(10.0, 10.0, 0.0).quote(SwapDirection::BaseIn, Amount::ZERO),
            Err(MarketError::NonPositiveInput)
        );
    }

    #[test]
    fn execute_updates_reserves() {
        let mut p = pool(1000.0, 1000.0, 0.0);
        let out = execute_swap(&mut p, SwapDirection::BaseIn, Amount::from_units(100), &GasModel::default()).unwrap();
        assert_eq!(out.gas_used, 21_000);
        assert_eq!(p.reserve_base, Amount::from_units(1100));
        assert!((p.reserve_quote.to_f64() - 909.090_909_090_9).abs() < 1e-8);
    }

    #[test]
    fn sequential_swaps_compose() {
        let mut p = pool(1000.0, 1000.0, 0.003);
        let first = Amount::from_units(40);
        let second = Amount::from_units(60);
        let q1 = p.quote(SwapDirection::QuoteIn, first).unwrap();
        p.apply(SwapDirection::QuoteIn, first).unwrap();
        let intermediate = p;
        let q2 = intermediate.quote(SwapDirection::QuoteIn, second).unwrap();
        assert_eq!(p.apply(SwapDirection::QuoteIn, second).unwrap(), q2);
        assert!(q1 > Amount::ZERO);
    }

    #[test]
    fn snapshot_shape_and_labels() {
        let mut pools = Vec::new();
        for v in 0..3 {
            pools.push(
                Pool::new(VenueId(v), AssetId(1), Amount::from_units(100), Amount::from_units(200), Fee::ZERO, v == 0)
                    .unwrap(),
            );
        }
        let snap = snapshot_prices(&pools, 2, TS);
        assert_eq!(snap.vectors.len(), 3);
        assert!(snap.vectors.iter().all(|v| v.prices.len() == 2));
        assert_eq!(snap.reference().unwrap().label(), "R");
        assert!(snap.vectors.windows(2).all(|w| w[0].prices == w[1].prices));
    }

    #[test]
    fn snapshot_omits_degenerate_venue() {
        let pools = vec![
            Pool::new(VenueId(0), AssetId(1), Amount::from_units(1), Amount::from_units(1), Fee::ZERO, true).unwrap(),
            Pool::new(VenueId(1), AssetId(1), Amount::ZERO, Amount::from_units(1), Fee::ZERO, false).unwrap(),
        ];
        let snap = snapshot_prices(&pools, 2, TS);
        assert_eq!(snap.vectors.len(), 1);
        assert_eq!(snap.degenerate, vec![VenueId(1)]);
    }

    proptest! {
        #[test]
        fn swap_invariants(
            rb in 1_000u64..10_000_000,
            rq in 1_000u64..10_000_000,
            fee_bps in prop_oneof![Just(0u32), 1u32..1000],
            frac in 0.0001f64..0.5,
            base_in in any::<bool>(),
        ) {
            let mut p = pool(rb as f64, rq as f64, fee_bps as f64 / 10_000.0);
            let dir = if base_in { SwapDirection::BaseIn } else { SwapDirection::QuoteIn };
            let reserve_in = p.reserves_for(dir).0.to_f64();
            let amount = Amount::from_f64(reserve_in * frac).unwrap();
            let k_pre = p.invariant();
            let price_pre = p.spot_price().unwrap();
            let quoted = p.quote(dir, amount).unwrap();
            let out = p.apply(dir, amount).unwrap();
            prop_assert_eq!(quoted, out);
            let k_post = p.invariant();
            let rel = (k_post - k_pre) / k_pre;
            if fee_bps == 0 {
                prop_assert!(rel.abs() < 1e-12);
            } else {
                prop_assert!(rel > 1e-12);
            }
            let price_post = p.spot_price().unwrap();
            match dir {
                SwapDirection::BaseIn => prop_assert!(price_post < price_pre),
                SwapDirection::QuoteIn => prop_assert!(price_post > price_pre),
            }
            prop_assert!(out < p.reserves_for(dir).1 + out);
        }
    }
}
