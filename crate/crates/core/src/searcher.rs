//! Searchers, proposals and epoch governance.
//!
//! Each searcher looks at the cleared (post-user-phase) states of recent
//! blocks, estimates the expected net profit `E[Π(T_k)] - E[G(T_k)]` of every
//! balancer template it covers, and proposes the templates ordered by that
//! estimate. Governance replays every proposal on recent states and picks the
//! credibility-weighted best. The ordering family here is greedy-by-estimate
//! with per-profile noise; other ordering functions can be plugged in by
//! producing a [`SearcherProposal`] through a different builder.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::arbitrage::{assess, Assessment, Beneficiary, Funding, Threshold};
use crate::chain::{
    check_feasibility, execute_block_balancer_phase, BalancerPhaseContext, BalancerTx, Block, FeasibilityPredicate,
};
use crate::market::{GasModel, Phase, Timestamp, VenueId};
use crate::state::ChainState;

/// RNG streams for searchers start here, one per searcher id.
pub const SEARCHER_STREAM_BASE: u64 = 1_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearcherProfile {
    pub id: u32,
    /// Log-scale standard deviation of the multiplicative estimate noise.
    pub noise: f64,
    /// Fraction of templates the searcher monitors.
    pub coverage: f64,
    pub funding: Funding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GovernanceConditions {
    pub allowed_funding: BTreeSet<Funding>,
    pub reference_venue: VenueId,
    pub max_set_size: usize,
}

/// Everything shared by proposal building, replay and governance.
#[derive(Clone, Debug)]
pub struct MarketContext {
    pub threshold: Threshold,
    pub gas: GasModel,
    pub predicate: FeasibilityPredicate,
    pub conditions: GovernanceConditions,
    pub block_capacity: u64,
    pub epoch_length: u64,
}

impl MarketContext {
    fn phase_ctx(&self) -> BalancerPhaseContext<'_> {
        BalancerPhaseContext {
            threshold: &self.threshold,
            gas: &self.gas,
            allowed_funding: &self.conditions.allowed_funding,
            beneficiary: Beneficiary::Treasury,
        }
    }

    /// Funding the governance conditions allow, preferring `preferred`.
    pub fn funding_for(&self, preferred: Funding) -> Funding {
        if self.conditions.allowed_funding.contains(&preferred) {
            preferred
        } else {
            self.conditions.allowed_funding.iter().next().copied().unwrap_or(preferred)
        }
    }
}

/// Trailing estimate of the coming epoch: recent cleared states and the mean
/// residual gas they left.
#[derive(Clone, Debug)]
pub struct EpochOutlook {
    pub states: Vec<ChainState>,
    pub mean_residual: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub blocks: usize,
    /// Mean committed balancer transactions per block.
    pub expected_fills: f64,
    /// Relative shortfall of the sequential replay against the naive sum of
    /// stand-alone estimates.
    pub slippage: f64,
    /// Mean fraction of the set reached before residual gas ran out.
    pub inclusion_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearcherProposal {
    pub searcher_id: u32,
    pub ordered_txs: Vec<BalancerTx>,
    /// Expected net profit over one epoch.
    pub profit_estimate: f64,
    /// Expected balancer gas over one epoch.
    pub gas_estimate: u64,
    pub simulation: SimulationReport,
}

impl SearcherProposal {
    pub fn is_empty(&self) -> bool {
        self.ordered_txs.is_empty()
    }
}

/// Template enumeration shared by all searchers: asset-major over the
/// trading venues.
pub fn enumerate_templates(state: &ChainState, epsilon: f64, funding: Funding) -> Vec<BalancerTx> {
    let mut out = Vec::new();
    for asset in state.assets() {
        for venue in state.trading_venues() {
            out.push(BalancerTx {
                template_id: out.len() as u32,
                asset,
                venue,
                funding,
                epsilon,
                est_net_profit: 0.0,
            });
        }
    }
    out
}

/// Non-increasing by estimated net profit, ties by ascending template id.
pub fn order_by_net_profit(txs: &mut [BalancerTx]) {
    txs.sort_by(|a, b| {
        b.est_net_profit
            .total_cmp(&a.est_net_profit)
            .then(a.template_id.cmp(&b.template_id))
    });
}

pub fn is_priority_ordered(txs: &[BalancerTx]) -> bool {
    txs.windows(2).all(|w| {
        w[0].est_net_profit > w[1].est_net_profit
            || (w[0].est_net_profit == w[1].est_net_profit && w[0].template_id < w[1].template_id)
    })
}

/// Mean stand-alone net profit of `tx` across `states`.
pub fn estimate_template(tx: &BalancerTx, states: &[ChainState], ctx: &MarketContext) -> f64 {
    if states.is_empty() {
        return 0.0;
    }
    let threshold = Threshold { epsilon: tx.epsilon, ..ctx.threshold };
    let mut total = 0.0;
    for (i, state) in states.iter().enumerate() {
        let at = Timestamp { block: i as u64, phase: Phase::User };
        if let Ok(Assessment::Opportunity(o)) = assess(state, tx.asset, tx.venue, &threshold, tx.funding, &ctx.gas, at) {
            total += o.expected_profit;
        }
    }
    total / states.len() as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ReplayResult {
    pub mean_profit: f64,
    pub mean_gas: f64,
    pub mean_fills: f64,
    pub mean_reached: f64,
}

/// Executes `ordered` in priority order on a scratch copy of each state with
/// `residual` gas available, as the balancer phase would.
pub fn replay(ordered: &[BalancerTx], states: &[ChainState], residual: u64, ctx: &MarketContext) -> ReplayResult {
    if states.is_empty() || ordered.is_empty() {
        return ReplayResult::default();
    }
    let order: Vec<usize> = (0..ordered.len()).collect();
    let phase = ctx.phase_ctx();
    let mut acc = ReplayResult::default();
    for (i, state) in states.iter().enumerate() {
        let mut scratch = state.clone();
        let mut block = Block::new(i as u64, ctx.block_capacity);
        block.work = ctx.block_capacity - residual.min(ctx.block_capacity);
        execute_block_balancer_phase(&mut scratch, &mut block, ordered, &order, &phase, &mut || false);
        acc.mean_profit += block.committed_profit().to_f64();
        acc.mean_gas += block.balancer_gas() as f64;
        acc.mean_fills += block.balancer_records().filter(|r| r.is_committed()).count() as f64;
        acc.mean_reached += block.balancer_records().count() as f64 / ordered.len() as f64;
    }
    let n = states.len() as f64;
    ReplayResult {
        mean_profit: acc.mean_profit / n,
        mean_gas: acc.mean_gas / n,
        mean_fills: acc.mean_fills / n,
        mean_reached: acc.mean_reached / n,
    }
}

/// A searcher with its fixed template coverage and private noise stream.
pub struct Searcher {
    pub profile: SearcherProfile,
    covered: Vec<bool>,
    rng: ChaCha8Rng,
}

impl Searcher {
    pub fn new(profile: SearcherProfile, n_templates: usize, seed: u64) -> Searcher {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(SEARCHER_STREAM_BASE + profile.id as u64);
        let covered = (0..n_templates).map(|_| rng.random::<f64>() < profile.coverage).collect();
        Searcher { profile, covered, rng }
    }

    pub fn covers(&self, template_id: u32) -> bool {
        self.covered.get(template_id as usize).copied().unwrap_or(false)
    }

    fn noise_factor(&mut self) -> f64 {
        let s = self.profile.noise;
        if s == 0.0 {
            return 1.0;
        }
        let z: f64 = StandardNormal.sample(&mut self.rng);
        (s * z - 0.5 * s * s).exp()
    }

    /// Builds this searcher's ordered proposal for the coming epoch.
    pub fn build_proposal(&mut self, outlook: &EpochOutlook, ctx: &MarketContext) -> SearcherProposal {
        let Some(base) = outlook.states.first() else {
            return empty_proposal(self.profile.id);
        };
        let funding = ctx.funding_for(self.profile.funding);
        let mut candidates: Vec<BalancerTx> = Vec::new();
        let mut naive = 0.0;
        for mut tx in enumerate_templates(base, ctx.threshold.epsilon, funding) {
            if !self.covers(tx.template_id) {
                continue;
            }
            let estimate = estimate_template(&tx, &outlook.states, ctx);
            tx.est_net_profit = estimate * self.noise_factor();
            if tx.est_net_profit >= ctx.predicate.min_net_profit {
                naive += estimate;
                candidates.push(tx);
            }
        }
        order_by_net_profit(&mut candidates);
        candidates.truncate(ctx.conditions.max_set_size.min(ctx.predicate.max_txs_per_block));
        debug_assert!(check_feasibility(&ctx.predicate, &candidates));

        let replayed = replay(&candidates, &outlook.states, outlook.mean_residual, ctx);
        let epoch = ctx.epoch_length as f64;
        let slippage = if naive > 0.0 { 1.0 - replayed.mean_profit / naive } else { 0.0 };
        SearcherProposal {
            searcher_id: self.profile.id,
            profit_estimate: replayed.mean_profit * epoch * self.noise_factor(),
            gas_estimate: (replayed.mean_gas * epoch).round() as u64,
            simulation: SimulationReport {
                blocks: outlook.states.len(),
                expected_fills: replayed.mean_fills,
                slippage,
                inclusion_rate: replayed.mean_reached,
            },
            ordered_txs: candidates,
        }
    }
}

fn empty_proposal(searcher_id: u32) -> SearcherProposal {
    SearcherProposal {
        searcher_id,
        ordered_txs: Vec::new(),
        profit_estimate: 0.0,
        gas_estimate: 0,
        simulation: SimulationReport { blocks: 0, expected_fills: 0.0, slippage: 0.0, inclusion_rate: 0.0 },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Credibility {
    pub searcher_id: u32,
    pub score: f64,
    /// Clamped realized/predicted ratio per epoch in which the searcher won.
    pub history: Vec<f64>,
}

impl Credibility {
    pub fn new(searcher_id: u32) -> Credibility {
        Credibility { searcher_id, score: 1.0, history: Vec::new() }
    }
}

/// `score ← β·score + (1−β)·clamp(realized/predicted, 0, 1)`. A non-positive
/// prediction counts as ratio 1 when nothing was lost, 0 otherwise.
pub fn update_credibility(c: &Credibility, predicted: f64, realized: f64, beta: f64) -> Credibility {
    let ratio = if predicted > 0.0 {
        (realized / predicted).clamp(0.0, 1.0)
    } else if realized >= 0.0 {
        1.0
    } else {
        0.0
    };
    let ratio = if ratio.is_nan() { 0.0 } else { ratio };
    let mut next = c.clone();
    next.score = (beta * c.score + (1.0 - beta) * ratio).clamp(0.0, 1.0);
    next.history.push(ratio);
    next
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalScore {
    pub searcher_id: u32,
    pub credibility: f64,
    pub simulated_net_profit: f64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Index into the evaluated proposals; `None` means an empty active set.
    pub selected: Option<usize>,
    pub scores: Vec<ProposalScore>,
}

/// Highest `credibility × simulated profit`, ties to the lowest searcher id.
pub fn select_by_score(scores: &[ProposalScore]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(b) => match s.score.total_cmp(&scores[b].score) {
                Ordering::Greater => Some(i),
                Ordering::Equal if s.searcher_id < scores[b].searcher_id => Some(i),
                _ => Some(b),
            },
        };
    }
    best
}

/// Replays every proposal on the `recent` cleared states and selects one.
pub fn evaluate_proposals(
    proposals: &[SearcherProposal],
    recent: &EpochOutlook,
    credibility: &[Credibility],
    ctx: &MarketContext,
) -> Selection {
    let scores: Vec<ProposalScore> = proposals
        .iter()
        .map(|p| {
            let cred = credibility
                .iter()
                .find(|c| c.searcher_id == p.searcher_id)
                .map(|c| c.score)
                .unwrap_or(1.0);
            let simulated = replay(&p.ordered_txs, &recent.states, recent.mean_residual, ctx).mean_profit
                * ctx.epoch_length as f64;
            ProposalScore { searcher_id: p.searcher_id, credibility: cred, simulated_net_profit: simulated, score: cred * simulated }
        })
        .collect();
    let selected = match proposals.len() {
        0 => None,
        1 => Some(0),
        _ if proposals.iter().all(SearcherProposal::is_empty) => None,
        _ => select_by_score(&scores),
    };
    Selection { selected, scores }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingAudit {
    pub candidates: usize,
    pub greedy_profit: f64,
    pub optimal_profit: f64,
    pub best_single: f64,
}

impl OrderingAudit {
    pub fn ratio(&self) -> f64 {
        if self.optimal_profit > 0.0 {
            self.greedy_profit / self.optimal_profit
        } else {
            1.0
        }
    }
}

/// Compares the greedy priority order against the best of all orderings of a
/// small candidate set executed in one block's `residual` gas.
///
/// Orderings are enumerated depth-first. The state after any prefix depends
/// only on the committed transactions in it, so prefixes sharing the same
/// remaining set and committed sequence are evaluated once.
pub fn audit_ordering(candidates: &[BalancerTx], state: &ChainState, residual: u64, ctx: &MarketContext) -> OrderingAudit {
    assert!(candidates.len() <= 16, "exhaustive audit is limited to small sets");
    let mut greedy = candidates.to_vec();
    for tx in &mut greedy {
        tx.est_net_profit = estimate_template(tx, std::slice::from_ref(state), ctx);
    }
    order_by_net_profit(&mut greedy);
    let single = std::slice::from_ref(state);
    let greedy_profit = replay(&greedy, single, residual, ctx).mean_profit;
    let best_single = candidates
        .iter()
        .map(|t| replay(std::slice::from_ref(t), single, residual, ctx).mean_profit)
        .fold(0.0, f64::max);

    let mut block = Block::new(0, ctx.block_capacity);
    block.work = ctx.block_capacity - residual.min(ctx.block_capacity);
    let mut search = OrderSearch { candidates, ctx, memo: HashMap::new() };
    let full = (1u32 << candidates.len()) - 1;
    let optimal_profit = search.best(state.clone(), block, full, &mut Vec::new());
    OrderingAudit { candidates: candidates.len(), greedy_profit, optimal_profit, best_single }
}

struct OrderSearch<'a> {
    candidates: &'a [BalancerTx],
    ctx: &'a MarketContext,
    memo: HashMap<(u32, Vec<u8>), f64>,
}

impl OrderSearch<'_> {
    fn best(&mut self, state: ChainState, block: Block, remaining: u32, committed: &mut Vec<u8>) -> f64 {
        if remaining == 0 || block.residual() < self.ctx.gas.balancer_tx_gas() {
            return 0.0;
        }
        let key = (remaining, committed.clone());
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let phase = self.ctx.phase_ctx();
        let mut best = 0.0f64;
        for i in 0..self.candidates.len() {
            if remaining & (1 << i) == 0 {
                continue;
            }
            let mut next_state = state.clone();
            let mut next_block = block.clone();
            let before = next_block.events.len();
            execute_block_balancer_phase(&mut next_state, &mut next_block, self.candidates, &[i], &phase, &mut || false);
            let record = next_block.events[before..].iter().find_map(|e| match e {
                crate::chain::BlockEvent::Balancer(r) => Some(r),
                _ => None,
            });
            let did_commit = record.is_some_and(|r| r.is_committed());
            let gained = record.and_then(|r| r.net_profit()).map(|a| a.to_f64()).unwrap_or(0.0);
            if did_commit {
                committed.push(i as u8);
            }
            let value = gained + self.best(next_state, next_block, remaining & !(1 << i), committed);
            if did_commit {
                committed.pop();
            }
            best = best.max(value);
        }
        self.memo.insert(key, best);
        best
    }
}
