//! Chain state: pools, accounts and the network treasury.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::amount::Amount;
use crate::market::{AssetId, Pool, VenueId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum AccountId {
    User(u32),
    /// Flash-loan lending market designated by governance.
    Lender,
    Producer,
    /// Receives balancer gas fees; producers are paid out of it.
    FeeCollector,
    Searcher(u32),
    Marketplace(VenueId),
    /// Off-network arbitrageur used by the external baseline.
    External,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StateError {
    #[error("no reference venue among the pools")]
    MissingReference,
    #[error("multiple reference venues: {0:?}")]
    MultipleReferences(Vec<VenueId>),
    #[error("duplicate pool for venue {venue:?}, asset {asset:?}")]
    DuplicatePool { venue: VenueId, asset: AssetId },
    #[error("venue {venue:?} has no pool for asset {asset:?}")]
    MissingPool { venue: VenueId, asset: AssetId },
    #[error("asset {asset:?} outside the universe of {n_assets} assets")]
    UnknownAsset { asset: AssetId, n_assets: usize },
    #[error("insufficient balance of asset {asset:?} in {account:?}")]
    InsufficientBalance { account: AccountId, asset: AssetId },
    #[error("insufficient treasury balance of asset {0:?}")]
    InsufficientTreasury(AssetId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    n_assets: usize,
    pub pools: Vec<Pool>,
    pub treasury: Vec<Amount>,
    pub accounts: BTreeMap<AccountId, Vec<Amount>>,
    pub block_height: u64,
    reference: VenueId,
    venues: Vec<VenueId>,
    lookup: HashMap<(VenueId, AssetId), usize>,
}

impl ChainState {
    /// Every venue must carry one pool per non-numéraire asset, and exactly
    /// one venue may be flagged as the reference.
    pub fn new(n_assets: usize, pools: Vec<Pool>, treasury: Vec<Amount>) -> Result<ChainState, StateError> {
        let mut lookup = HashMap::new();
        let mut venues: Vec<VenueId> = Vec::new();
        let mut references: Vec<VenueId> = Vec::new();
        for (i, pool) in pools.iter().enumerate() {
            if pool.base.index() >= n_assets {
                return Err(StateError::UnknownAsset { asset: pool.base, n_assets });
            }
            if lookup.insert((pool.venue, pool.base), i).is_some() {
                return Err(StateError::DuplicatePool { venue: pool.venue, asset: pool.base });
            }
            if !venues.contains(&pool.venue) {
                venues.push(pool.venue);
            }
            if pool.is_reference && !references.contains(&pool.venue) {
                references.push(pool.venue);
            }
        }
        venues.sort();
        references.sort();
        let reference = match references.as_slice() {
            [] => return Err(StateError::MissingReference),
            [one] => *one,
            _ => return Err(StateError::MultipleReferences(references)),
        };
        for &venue in &venues {
            for a in 1..n_assets {
                let asset = AssetId(a as u16);
                if !lookup.contains_key(&(venue, asset)) {
                    return Err(StateError::MissingPool { venue, asset });
                }
            }
        }
        let mut treasury = treasury;
        treasury.resize(n_assets, Amount::ZERO);
        Ok(ChainState {
            n_assets,
            pools,
            treasury,
            accounts: BTreeMap::new(),
            block_height: 0,
            reference,
            venues,
            lookup,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn reference_venue(&self) -> VenueId {
        self.reference
    }

    pub fn venues(&self) -> &[VenueId] {
        &self.venues
    }

    pub fn trading_venues(&self) -> impl Iterator<Item = VenueId> + '_ {
        self.venues.iter().copied().filter(move |v| *v != self.reference)
    }

    pub fn assets(&self) -> impl Iterator<Item = AssetId> {
        (1..self.n_assets).map(|a| AssetId(a as u16))
    }

    pub fn pool_index(&self, venue: VenueId, asset: AssetId) -> Option<usize> {
        self.lookup.get(&(venue, asset)).copied()
    }

    pub fn pool(&self, venue: VenueId, asset: AssetId) -> Option<&Pool> {
        self.pool_index(venue, asset).map(|i| &self.pools[i])
    }

    pub fn balance(&self, account: AccountId, asset: AssetId) -> Amount {
        self.accounts
            .get(&account)
            .and_then(|b| b.get(asset.index()).copied())
            .unwrap_or(Amount::ZERO)
    }

    pub fn credit(&mut self, account: AccountId, asset: AssetId, amount: Amount) {
        let n = self.n_assets;
        let balances = self.accounts.entry(account).or_insert_with(|| vec![Amount::ZERO; n]);
        balances[asset.index()] += amount;
    }

    pub fn debit(&mut self, account: AccountId, asset: AssetId, amount: Amount) -> Result<(), StateError> {
        let slot = self
            .accounts
            .get_mut(&account)
            .map(|b| &mut b[asset.index()])
            .ok_or(StateError::InsufficientBalance { account, asset })?;
        *slot = slot.checked_sub(amount).ok_or(StateError::InsufficientBalance { account, asset })?;
        Ok(())
    }

    pub fn transfer(&mut self, from: AccountId, to: AccountId, asset: AssetId, amount: Amount) -> Result<(), StateError> {
        self.debit(from, asset, amount)?;
        self.credit(to, asset, amount);
        Ok(())
    }

    pub fn credit_treasury(&mut self, asset: AssetId, amount: Amount) {
        self.treasury[asset.index()] += amount;
    }

    pub fn debit_treasury(&mut self, asset: AssetId, amount: Amount) -> Result<(), StateError> {
        let slot = &mut self.treasury[asset.index()];
        *slot = slot.checked_sub(amount).ok_or(StateError::InsufficientTreasury(asset))?;
        Ok(())
    }

    /// Sum of one asset across pools, accounts and treasury, in nano-units.
    pub fn total_supply(&self, asset: AssetId) -> u128 {
        let i = asset.index();
        let pools: u128 = self
            .pools
            .iter()
            .map(|p| {
                let mut s = 0;
                if p.base == asset {
                    s += p.reserve_base.raw();
                }
                if p.quote == asset {
                    s += p.reserve_quote.raw();
                }
                s
            })
            .sum();
        let accounts: u128 = self.accounts.values().map(|b| b[i].raw()).sum();
        pools + accounts + self.treasury[i].raw()
    }

    pub fn supplies(&self) -> Vec<u128> {
        (0..self.n_assets).map(|a| self.total_supply(AssetId(a as u16))).collect()
    }
}
