//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use autobalancer::amount::Amount;
use autobalancer::arbitrage::{fee_band, no_trade_band, optimal_trade_size, Funding, TradeDirection};
use autobalancer::chain::{BalancerRecord, BalancerStatus, BalancerTx, Block, BlockEvent, SkipReason};
use autobalancer::market::{AssetId, Fee, Pool, VenueId};
use autobalancer::metrics::{run_baseline_comparison, Mode};
use autobalancer::rewards::apply_slashing;
use autobalancer::scenario::load_scenario;
use autobalancer::searcher::{audit_ordering, enumerate_templates};
use autobalancer::sim::{run, run_with_observer};
use autobalancer::state::{AccountId, ChainState};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed < Duration::from_secs(limit_s)
}

fn c1_deviation_closure() -> Outcome {
    let start = Instant::now();
    let config = common::basic(20, 10);
    let report = run(&config, 11, Mode::Autobalancer).expect("run");
    let elapsed = start.elapsed();
    let eps = config.threshold.epsilon;
    let phi = config.threshold.flash_fee;
    let (mut commits, mut violations, mut literal_exceeded, mut worst) = (0, 0, 0, 0.0f64);
    let mut literal_venue_cheap = 0;
    for b in &report.blocks {
        for r in b.block.balancer_records() {
            let BalancerStatus::Committed { direction, .. } = r.status else { continue };
            commits += 1;
            let flash = if r.funding == Funding::FlashLoan { phi } else { 0.0 };
            let band = no_trade_band(direction, 0.003, 0.003, flash).max(eps);
            let after = r.delta_after.expect("committed trade has a post-trade deviation").abs();
            worst = worst.max(after - band);
            if after > band + 1e-9 {
                violations += 1;
            }
            if after > fee_band(0.003, 0.003, flash).max(eps) + 1e-9 {
                literal_exceeded += 1;
                literal_venue_cheap += (direction == TradeDirection::BuyOnVenueSellOnRef) as usize;
            }
        }
    }
    let pass = commits > 0 && violations == 0 && within(elapsed, 10);
    outcome(
        pass,
        format!(
            "{commits} commits over {} blocks, {violations} outside band (max excess {worst:.3e}), \
             {literal_exceeded} above the venue-cheap formula ({literal_venue_cheap} venue-cheap), {:.2?}",
            report.blocks.len(),
            elapsed
        ),
    )
}

/// Independent two-leg constant-product profit for principal `x`.
fn oracle_profit(cheap: &Pool, dear: &Pool, phi: f64, x: f64) -> f64 {
    let g1 = 1.0 - cheap.fee.fraction();
    let g2 = 1.0 - dear.fee.fraction();
    let (qi, bo) = (cheap.reserve_quote.to_f64(), cheap.reserve_base.to_f64());
    let base = bo * x * g1 / (qi + x * g1);
    let (bi, qo) = (dear.reserve_base.to_f64(), dear.reserve_quote.to_f64());
    qo * base * g2 / (bi + base * g2) - x * (1.0 + phi)
}

fn oracle_max(cheap: &Pool, dear: &Pool, phi: f64) -> f64 {
    // The optimum never exceeds the dear pool's quote reserve.
    let scale = dear.reserve_quote.to_f64();
    let step = scale * 1e-4;
    let mut best = (0.0, 0.0);
    for i in 1..=10_000 {
        let x = step * i as f64;
        let p = oracle_profit(cheap, dear, phi, x);
        if p > best.1 {
            best = (x, p);
        }
    }
    let (mut lo, mut hi) = ((best.0 - step).max(0.0), best.0 + step);
    for _ in 0..300 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if oracle_profit(cheap, dear, phi, m1) < oracle_profit(cheap, dear, phi, m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    oracle_profit(cheap, dear, phi, 0.5 * (lo + hi)).max(best.1).max(0.0)
}

fn c2_sizing_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let fees = [0.0, 0.003, 0.01];
    let log_uniform = |rng: &mut ChaCha8Rng| 10f64.powf(rng.random_range(3.0..7.0));
    let (mut worst, mut failures, mut profitable) = (0.0f64, 0, 0);
    for i in 0..1000 {
        let fa = Fee::from_fraction(fees[rng.random_range(0..3)]).unwrap();
        let fb = Fee::from_fraction(fees[rng.random_range(0..3)]).unwrap();
        let (ba, qa) = (log_uniform(&mut rng), log_uniform(&mut rng));
        let bb = log_uniform(&mut rng);
        // Half the pairs are near-priced so the fee band matters.
        let qb = if i % 2 == 0 { log_uniform(&mut rng) } else { bb * qa / ba * (1.0 + rng.random_range(-0.05..0.05)) };
        let amt = |v: f64| Amount::from_f64(v).unwrap();
        let a = Pool::new(VenueId(0), AssetId(1), amt(ba), amt(qa), fa, true).unwrap();
        let b = Pool::new(VenueId(1), AssetId(1), amt(bb), amt(qb), fb, false).unwrap();
        let (cheap, dear) = if a.spot_price().unwrap() <= b.spot_price().unwrap() { (a, b) } else { (b, a) };
        let phi = if rng.random_bool(0.5) { 0.0009 } else { 0.0 };
        let expected = oracle_max(&cheap, &dear, phi);
        let (size, _) = optimal_trade_size(&cheap, &dear, phi);
        let got = if size.is_zero() { 0.0 } else { oracle_profit(&cheap, &dear, phi, size.to_f64()) };
        if expected > 0.0 {
            profitable += 1;
        }
        // A nano-unit floor covers pairs whose best profit rounds to nothing.
        let err = (expected - got).abs();
        let tol = 1e-5 * expected.abs() + 1e-9;
        worst = worst.max(if expected > 0.0 { err / expected } else { 0.0 });
        if err > tol {
            failures += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures == 0 && within(elapsed, 30),
        format!("1000 pairs ({profitable} profitable), {failures} mismatches, worst rel error {worst:.2e}, {elapsed:.2?}"),
    )
}

fn c3_no_inventory_risk() -> Outcome {
    let mut config = common::basic(10, 20);
    config.revert_injection = 0.2;
    let report = run(&config, 3, Mode::Autobalancer).expect("run");
    let (mut commits, mut reverts, mut violations) = (0, 0, 0);
    for b in &report.blocks {
        for r in b.block.balancer_records() {
            match r.status {
                BalancerStatus::Committed { .. } => {
                    commits += 1;
                    if r.treasury_after.iter().zip(&r.treasury_before).any(|(a, b)| a < b) {
                        violations += 1;
                    }
                }
                BalancerStatus::Reverted { .. } => {
                    reverts += 1;
                    if r.treasury_after != r.treasury_before {
                        violations += 1;
                    }
                }
                BalancerStatus::Skipped { .. } => {}
            }
        }
    }
    outcome(
        violations == 0 && commits > 0 && reverts > 0,
        format!("{commits} commits, {reverts} reverts, {violations} violations"),
    )
}

fn c4_conservation() -> Outcome {
    let mut config = common::basic(10, 20);
    config.revert_injection = 0.1;
    config.producer_dishonesty = 0.2;
    let mut checked = 0;
    let mut worst = 0u128;
    for mode in Mode::ALL {
        let genesis = config.initial_state().unwrap().supplies();
        run_with_observer(&config, 4, mode, &mut |view| {
            checked += 1;
            for (now, then) in view.state.supplies().iter().zip(&genesis) {
                worst = worst.max(now.abs_diff(*then));
            }
        })
        .expect("run");
    }
    // Supplies are integer nano-units; 1e-9 absolute is one unit.
    outcome(worst <= 1, format!("{checked} block checks over 3 modes, max drift {worst} nano-units"))
}

fn c5_mechanism_benefit() -> Outcome {
    let config = common::basic(10, 10);
    let seeds: Vec<u64> = (100..124).collect();
    let cmp = run_baseline_comparison(&config, &[Mode::Off, Mode::Autobalancer], &seeds).expect("comparison");
    let band = no_trade_band(TradeDirection::BuyOnRefSellOnVenue, 0.003, 0.003, config.threshold.flash_fee)
        .max(config.threshold.epsilon);
    let (mut lower, mut capture_ok) = (0, true);
    for &s in &seeds {
        let off = cmp.row(s, Mode::Off).unwrap();
        let on = cmp.row(s, Mode::Autobalancer).unwrap();
        if on.time_avg_discrepancy < off.time_avg_discrepancy {
            lower += 1;
        }
        if off.max_abs_deviation > band && on.captured_value <= 0.0 {
            capture_ok = false;
        }
    }
    let off_mean = cmp.summaries[0].mean_discrepancy;
    let on_mean = cmp.summaries[1].mean_discrepancy;
    let frac = lower as f64 / seeds.len() as f64;
    outcome(
        on_mean < off_mean && frac >= 0.9 && capture_ok,
        format!(
            "{} seeds, mean discrepancy off {off_mean:.4} vs on {on_mean:.4}, lower in {:.0}% of seeds, capture rule {}",
            seeds.len(),
            frac * 100.0,
            if capture_ok { "held" } else { "broken" }
        ),
    )
}

fn record(priority: usize, status: BalancerStatus) -> BalancerRecord {
    BalancerRecord {
        priority,
        template_id: priority as u32,
        asset: AssetId(1),
        venue: VenueId(1),
        funding: Funding::FlashLoan,
        delta_before: None,
        delta_after: None,
        gas: 0,
        treasury_before: [Amount::ZERO; 2],
        treasury_after: [Amount::ZERO; 2],
        status,
    }
}

fn c6_reward_exactness() -> Outcome {
    let mut config = common::basic(10, 10);
    config.producer_dishonesty = 0.3;
    let report = run(&config, 6, Mode::Autobalancer).expect("run");
    let (mut inexact, mut disproportionate, mut worst) = (0, 0, 0.0f64);
    let mut checked_markets = 0;
    for epoch in &report.epochs {
        let l = &epoch.ledger;
        if !l.is_exact() {
            inexact += 1;
        }
        // ρ straight from the block event log.
        let mut rho: std::collections::BTreeMap<VenueId, f64> = Default::default();
        for b in report.blocks.iter().filter(|b| b.epoch == epoch.index) {
            for r in b.block.balancer_records() {
                if let Some(p) = r.net_profit() {
                    *rho.entry(r.venue).or_default() += p.to_f64();
                }
            }
        }
        let total: f64 = rho.values().sum();
        if total <= 0.0 {
            continue;
        }
        let group = l.allocations.marketplaces.to_f64();
        for (venue, f) in &l.marketplace_allocations {
            checked_markets += 1;
            let r = rho.get(venue).copied().unwrap_or(0.0);
            // F_l·Σρ = G·ρ(l), compared per unit of Σρ.
            let err = (f.to_f64() * total - group * r).abs() / total;
            worst = worst.max(err);
            if err > 1e-9 + 1e-12 * group {
                disproportionate += 1;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let pools = vec![Pool::new(VenueId(0), AssetId(1), Amount::from_units(10), Amount::from_units(10), Fee::ZERO, true).unwrap()];
    let (mut mismatches, mut fired) = (0, 0);
    for _ in 0..10_000 {
        let n = rng.random_range(1..=12);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut block = Block::new(0, 1_000_000);
        let mut executed = Vec::new();
        for &p in &order {
            let status = match rng.random_range(0..3) {
                0 => BalancerStatus::Skipped { reason: SkipReason::BelowEpsilon },
                1 => BalancerStatus::Reverted { reason: autobalancer::arbitrage::RevertReason::Injected },
                _ => BalancerStatus::Committed {
                    direction: TradeDirection::BuyOnRefSellOnVenue,
                    size: Amount::ZERO,
                    proceeds: Amount::ZERO,
                    flash_fee: Amount::ZERO,
                    gas_fee: Amount::ZERO,
                    net_profit: Amount::ZERO,
                    band: 0.0,
                },
            };
            if !matches!(status, BalancerStatus::Skipped { .. }) {
                executed.push(p);
            }
            block.events.push(BlockEvent::Balancer(record(p, status)));
        }
        let mut state = ChainState::new(2, pools.clone(), vec![]).unwrap();
        state.credit(AccountId::Producer, AssetId(0), Amount::from_units(5));
        let slashed = apply_slashing(&mut state, &block, Amount::from_units(1));
        let expect = common::has_inversion(&executed);
        fired += expect as usize;
        if (slashed > Amount::ZERO) != expect {
            mismatches += 1;
        }
    }
    outcome(
        inexact == 0 && disproportionate == 0 && mismatches == 0,
        format!(
            "{} epochs exact-sum failures {inexact}, {checked_markets} venue shares off by > 1e-9: {disproportionate} \
             (worst {worst:.2e}), slashing mismatches {mismatches}/10000 ({fired} inversions)",
            report.epochs.len()
        ),
    )
}

fn c7_ordering_audit() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut below_single, mut ratios) = (0, Vec::new());
    for _ in 0..200 {
        let traded = rng.random_range(1..=3);
        let venues = rng.random_range(2..=4);
        let mut config = common::scenario(traded, venues, 0.0, 1, 1);
        for p in config.pools.iter_mut().filter(|p| !p.is_reference) {
            p.reserve_quote *= 1.0 + rng.random_range(-0.04..0.04);
            p.reserve_base *= 10f64.powf(rng.random_range(-0.5..0.5));
        }
        let state = config.initial_state().unwrap();
        let ctx = config.market_context();
        let mut templates: Vec<BalancerTx> = enumerate_templates(&state, ctx.threshold.epsilon, Funding::FlashLoan);
        templates.shuffle(&mut rng);
        templates.truncate(rng.random_range(1..=10));
        for t in &mut templates {
            if rng.random_bool(0.5) {
                t.funding = Funding::NetworkLiquidity;
            }
        }
        let slots = rng.random_range(1..=4u64);
        let residual = slots * ctx.gas.balancer_tx_gas() + rng.random_range(0..ctx.gas.balancer_tx_gas());
        let audit = audit_ordering(&templates, &state, residual, &ctx);
        if audit.greedy_profit < audit.best_single {
            below_single += 1;
        }
        ratios.push(audit.ratio());
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let optimal = ratios.iter().filter(|r| **r >= 1.0 - 1e-12).count();
    outcome(
        below_single == 0,
        format!(
            "200 instances, greedy below best single in {below_single}, greedy/optimal mean {mean:.6} min {min:.6}, \
             optimal in {optimal}, {:.2?}",
            start.elapsed()
        ),
    )
}

fn c8_determinism() -> Outcome {
    let mut config = common::basic(6, 10);
    config.revert_injection = 0.1;
    config.producer_dishonesty = 0.2;
    let mut identical = true;
    for mode in Mode::ALL {
        let a = run(&config, 8, mode).unwrap().to_json();
        let b = run(&config, 8, mode).unwrap().to_json();
        identical &= a == b;
    }
    outcome(identical, "same config and seed give byte-identical JSON in every mode")
}

fn c9_scale() -> Outcome {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/large.toml");
    let config = load_scenario(path).expect("large scenario");
    let start = Instant::now();
    let report = run(&config, config.seeds[0], Mode::Autobalancer).expect("run");
    let elapsed = start.elapsed();
    let assets = config.assets.len();
    let venues = config.venues().len();
    let ok = report.blocks.len() == 10_000 && venues == 5 && assets == 9 && config.searchers.len() == 4;
    outcome(
        ok && within(elapsed, 60),
        format!(
            "{} blocks, {venues} venues, {} traded assets + numéraire, {} searchers, {} commits, {elapsed:.2?}",
            report.blocks.len(),
            assets - 1,
            config.searchers.len(),
            report.totals.balancer_committed
        ),
    )
}

type Check = fn() -> Outcome;

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("deviation closure", c1_deviation_closure),
        ("sizing oracle equivalence", c2_sizing_oracle),
        ("no inventory risk", c3_no_inventory_risk),
        ("conservation", c4_conservation),
        ("mechanism benefit", c5_mechanism_benefit),
        ("reward exactness", c6_reward_exactness),
        ("ordering audit", c7_ordering_audit),
        ("determinism", c8_determinism),
        ("scale", c9_scale),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        println!("criterion {} {:<26} {}  {}", i + 1, name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += (!o.pass) as usize;
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
