//! Epoch/block orchestration for one seeded run.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::amount::Amount;
use crate::arbitrage::{Beneficiary, Funding};
use crate::chain::{
    execute_block_balancer_phase, execute_block_user_phase, performance_cost_psi, utilization, BalancerPhaseContext,
    BalancerStatus, BalancerTx, Block, ChainError, UserFlow, UserTxStatus,
};
use crate::market::{snapshot_prices, AssetId, Phase, Timestamp};
use crate::metrics::{
    cumulative_discrepancy, epoch_constraint_check, max_abs_deviation, scalarized_objective, Mode, ObjectiveSample,
};
use crate::report::{AccountBalance, BlockReport, EpochReport, ReportHeader, RunReport, Totals, PRODUCER_FEE_NOTE};
use crate::rewards::{
    apply_slashing, distribute_epoch, executed_priorities, is_order_consistent, pay_producer, RewardError,
};
use crate::scenario::{ScenarioConfig, Violation};
use crate::searcher::{
    enumerate_templates, evaluate_proposals, update_credibility, Credibility, EpochOutlook, MarketContext, Searcher,
    SearcherProposal,
};
use crate::state::{AccountId, ChainState, StateError};

pub const REVERT_STREAM: u64 = 2;
pub const PRODUCER_STREAM: u64 = 3;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Config(Vec<Violation>),
    #[error("genesis state: {0}")]
    Genesis(StateError),
    #[error("user flow: {0}")]
    Flow(#[from] ChainError),
    #[error("epoch {epoch}, block {block}: {source}")]
    State { epoch: u64, block: u64, source: StateError },
    #[error("epoch {epoch}: {source}")]
    Reward { epoch: u64, source: RewardError },
}

/// Per-block view handed to observers after the block is finalized.
pub struct BlockView<'a> {
    pub report: &'a BlockReport,
    /// State after the user phase, before any balancer execution.
    pub cleared: &'a ChainState,
    pub state: &'a ChainState,
}

pub fn run(config: &ScenarioConfig, seed: u64, mode: Mode) -> Result<RunReport, SimError> {
    run_with_observer(config, seed, mode, &mut |_| {})
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn mode_context(config: &ScenarioConfig, mode: Mode) -> MarketContext {
    let mut ctx = config.market_context();
    if mode == Mode::External {
        // Outside arbitrageurs have no access to network-owned liquidity.
        let flash = BTreeSet::from([Funding::FlashLoan]);
        ctx.conditions.allowed_funding = flash.clone();
        ctx.predicate.allowed_funding = flash;
    }
    ctx
}

pub fn run_with_observer(
    config: &ScenarioConfig,
    seed: u64,
    mode: Mode,
    observer: &mut dyn FnMut(&BlockView<'_>),
) -> Result<RunReport, SimError> {
    let violations = config.validate();
    if !violations.is_empty() {
        return Err(SimError::Config(violations));
    }
    let ctx = mode_context(config, mode);
    let gas_price = ctx.threshold.gas_price;
    let mut state = config.initial_state().map_err(SimError::Genesis)?;
    let venues = state.venues().to_vec();
    let mut flow = UserFlow::new(seed, &config.flow_params(), &venues, &config.initial_prices(), &ctx.gas)?;
    let n_templates = enumerate_templates(&state, ctx.threshold.epsilon, Funding::FlashLoan).len();
    let mut searchers: Vec<Searcher> =
        config.searchers.iter().map(|p| Searcher::new(p.clone(), n_templates, seed)).collect();
    let mut credibility: Vec<Credibility> = config.searchers.iter().map(|p| Credibility::new(p.id)).collect();
    let mut revert_rng = rng(seed, REVERT_STREAM);
    let mut producer_rng = rng(seed, PRODUCER_STREAM);
    let schedule = config.weight_schedule();
    let objective = config.objective_weights();
    let lookback = config.governance.lookback;
    let beneficiary = if mode == Mode::External { Beneficiary::External } else { Beneficiary::Treasury };

    let mut pending = VecDeque::new();
    let mut cleared_history: VecDeque<ChainState> = VecDeque::new();
    let mut residual_history: VecDeque<u64> = VecDeque::new();
    let mut blocks: Vec<BlockReport> = Vec::new();
    let mut epochs: Vec<EpochReport> = Vec::new();
    let mut totals = Totals::default();

    for e in 0..config.epochs {
        let mut proposals: Vec<SearcherProposal> = Vec::new();
        let mut selection = None;
        let mut active_set: Vec<BalancerTx> = Vec::new();
        if mode != Mode::Off {
            let outlook = outlook(&cleared_history, &residual_history, &state, config.block_capacity);
            proposals = searchers.par_iter_mut().map(|s| s.build_proposal(&outlook, &ctx)).collect();
            let sel = evaluate_proposals(&proposals, &outlook, &credibility, &ctx);
            if let Some(i) = sel.selected {
                active_set = proposals[i].ordered_txs.clone();
            }
            selection = Some(sel);
        }

        let epoch_start = blocks.len();
        let (mut producer_fees, mut slashed, mut slash_count) = (Amount::ZERO, Amount::ZERO, 0usize);
        for b in 0..config.epoch_length {
            let height = e * config.epoch_length + b;
            state.block_height = height;
            pending.extend(flow.next_block(height));
            let mut block = Block::new(height, config.block_capacity);
            execute_block_user_phase(&mut state, &mut block, &mut pending);
            let residual_after_users = block.residual();
            let cleared = state.clone();

            let mut permuted = false;
            if mode != Mode::Off && !active_set.is_empty() {
                let mut order: Vec<usize> = (0..active_set.len()).collect();
                if config.producer_dishonesty > 0.0 && producer_rng.random_bool(config.producer_dishonesty) {
                    order.shuffle(&mut producer_rng);
                    permuted = order.windows(2).any(|w| w[0] > w[1]);
                }
                let phase = BalancerPhaseContext {
                    threshold: &ctx.threshold,
                    gas: &ctx.gas,
                    allowed_funding: &ctx.conditions.allowed_funding,
                    beneficiary,
                };
                let p = config.revert_injection;
                let mut inject = || p > 0.0 && revert_rng.random_bool(p);
                execute_block_balancer_phase(&mut state, &mut block, &active_set, &order, &phase, &mut inject);
            }

            let producer_fee = pay_producer(block.fee_bearing_gas(), config.rewards.gamma, gas_price);
            if !producer_fee.is_zero() {
                state
                    .transfer(AccountId::FeeCollector, AccountId::Producer, AssetId::NUMERAIRE, producer_fee)
                    .map_err(|source| SimError::State { epoch: e, block: height, source })?;
            }
            let penalty = Amount::from_raw(producer_fee.raw() * config.rewards.slash_multiplier as u128);
            let out_of_order = !is_order_consistent(&executed_priorities(&block));
            let block_slash = if out_of_order { apply_slashing(&mut state, &block, penalty) } else { Amount::ZERO };
            slash_count += out_of_order as usize;
            producer_fees += producer_fee;
            slashed += block_slash;

            let snapshot = snapshot_prices(&state.pools, state.n_assets(), Timestamp { block: height, phase: Phase::Balancer });
            let discrepancy = cumulative_discrepancy(&snapshot.vectors);
            let u = utilization(&block);
            let committed = block.committed_profit();
            let sample = ObjectiveSample {
                block: height,
                cumulative_discrepancy: discrepancy,
                utilization: u,
                psi: performance_cost_psi(&block, config.objective.knee),
                scalarized: scalarized_objective(discrepancy, u, &objective),
                max_abs_deviation: max_abs_deviation(&snapshot.vectors),
                captured_profit: if mode == Mode::Autobalancer { committed } else { Amount::ZERO },
            };
            tally(&mut totals, &block, mode, committed);

            residual_history.push_back(residual_after_users);
            if residual_history.len() > lookback {
                residual_history.pop_front();
            }
            // The user records already carry every applied transaction.
            block.user_txs.clear();
            let report = BlockReport { epoch: e, sample, residual_after_users, permuted, producer_fee, slashed: block_slash, block };
            observer(&BlockView { report: &report, cleared: &cleared, state: &state });
            cleared_history.push_back(cleared);
            if cleared_history.len() > lookback {
                cleared_history.pop_front();
            }
            blocks.push(report);
        }

        let epoch_blocks: Vec<Block> = blocks[epoch_start..].iter().map(|r| r.block.clone()).collect();
        let realized: Amount = epoch_blocks.iter().map(|b| b.committed_profit()).sum();
        let pool = if mode == Mode::Autobalancer { realized } else { Amount::ZERO };
        let winner = selection
            .as_ref()
            .and_then(|s| s.selected)
            .map(|i| &proposals[i])
            .filter(|p| !p.is_empty());
        let ledger = distribute_epoch(
            &mut state,
            e,
            &epoch_blocks,
            pool,
            &schedule.weights_for(e),
            winner.map(|p| p.searcher_id).filter(|_| mode == Mode::Autobalancer),
            producer_fees,
            slashed,
            slash_count,
        )
        .map_err(|source| SimError::Reward { epoch: e, source })?;
        if let Some(p) = winner {
            if let Some(c) = credibility.iter_mut().find(|c| c.searcher_id == p.searcher_id) {
                *c = update_credibility(c, p.profit_estimate, realized.to_f64(), config.governance.beta);
            }
        }
        let samples: Vec<ObjectiveSample> = blocks[epoch_start..].iter().map(|r| r.sample).collect();
        epochs.push(EpochReport {
            index: e,
            proposals,
            selection,
            active_set,
            constraint: epoch_constraint_check(&samples, config.objective.delta),
            ledger,
            credibility: credibility.clone(),
        });
        totals.producer_fees += producer_fees;
        totals.slashed += slashed;
        totals.slash_count += slash_count as u64;
    }

    totals.blocks = blocks.len() as u64;
    totals.user_generated = flow.generated();
    totals.user_pending = pending.len() as u64;
    if !blocks.is_empty() {
        let n = blocks.len() as f64;
        totals.time_avg_discrepancy = blocks.iter().map(|b| b.sample.cumulative_discrepancy).sum::<f64>() / n;
        totals.mean_utilization = blocks.iter().map(|b| b.sample.utilization).sum::<f64>() / n;
        totals.max_abs_deviation = blocks.iter().map(|b| b.sample.max_abs_deviation).fold(0.0, f64::max);
    }

    Ok(RunReport {
        header: ReportHeader {
            scenario: config.name.clone(),
            config_hash: config.config_hash(),
            seed,
            mode,
            producer_fee_note: PRODUCER_FEE_NOTE.into(),
        },
        blocks,
        epochs,
        final_pools: state.pools.clone(),
        final_treasury: state.treasury.clone(),
        final_balances: state
            .accounts
            .iter()
            .map(|(account, balances)| AccountBalance { account: *account, balances: balances.clone() })
            .collect(),
        totals,
    })
}

fn outlook(
    cleared: &VecDeque<ChainState>,
    residuals: &VecDeque<u64>,
    current: &ChainState,
    capacity: u64,
) -> EpochOutlook {
    if cleared.is_empty() {
        return EpochOutlook { states: vec![current.clone()], mean_residual: capacity };
    }
    let mean = residuals.iter().sum::<u64>() as f64 / residuals.len().max(1) as f64;
    EpochOutlook { states: cleared.iter().cloned().collect(), mean_residual: mean.round() as u64 }
}

fn tally(totals: &mut Totals, block: &Block, mode: Mode, committed: Amount) {
    for u in block.user_records() {
        match u.status {
            UserTxStatus::Applied => totals.user_applied += 1,
            UserTxStatus::Rejected => totals.user_rejected += 1,
        }
    }
    for r in block.balancer_records() {
        match r.status {
            BalancerStatus::Committed { .. } => totals.balancer_committed += 1,
            BalancerStatus::Reverted { .. } => totals.balancer_reverted += 1,
            BalancerStatus::Skipped { .. } => totals.balancer_skipped += 1,
        }
    }
    match mode {
        Mode::Autobalancer => totals.captured_value += committed,
        Mode::External => totals.leaked_value += committed,
        Mode::Off => {}
    }
}
