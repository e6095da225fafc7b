#![allow(dead_code)]

use autobalancer::scenario::{PoolConfig, ScenarioConfig};

pub const NAMES: [&str; 9] = ["USD", "ETH", "BTC", "SOL", "LINK", "UNI", "AAVE", "ARB", "OP"];
const PRICES: [f64; 8] = [10.0, 40.0, 2.0, 5.0, 1.5, 25.0, 0.8, 3.0];

/// A reference venue plus `trading_venues` venues over `traded` assets.
/// Trading pools start mispriced by up to `skew` in either direction.
pub fn scenario(traded: usize, trading_venues: u32, skew: f64, epochs: u64, epoch_length: u64) -> ScenarioConfig {
    assert!(traded >= 1 && traded <= PRICES.len());
    let mut pools = Vec::new();
    for (a, price) in PRICES.iter().take(traded).enumerate() {
        pools.push(PoolConfig {
            venue: 0,
            asset: NAMES[a + 1].into(),
            reserve_base: 500_000.0,
            reserve_quote: 500_000.0 * price,
            fee: 0.003,
            is_reference: true,
        });
        for v in 1..=trading_venues {
            let offset = ((v as usize + a) % 3) as f64 - 1.0;
            let tilt = if offset == 0.0 { 0.5 } else { offset };
            pools.push(PoolConfig {
                venue: v,
                asset: NAMES[a + 1].into(),
                reserve_base: 100_000.0,
                reserve_quote: 100_000.0 * price * (1.0 + skew * tilt),
                fee: 0.003,
                is_reference: false,
            });
        }
    }
    ScenarioConfig {
        name: format!("test-{traded}x{trading_venues}"),
        assets: NAMES.iter().take(traded + 1).map(|s| s.to_string()).collect(),
        pools,
        epochs,
        epoch_length,
        ..ScenarioConfig::default()
    }
}

/// Three trading venues and a reference over two assets.
pub fn basic(epochs: u64, epoch_length: u64) -> ScenarioConfig {
    scenario(2, 3, 0.01, epochs, epoch_length)
}

/// Independent count of inversions by checking every pair.
pub fn has_inversion(seq: &[usize]) -> bool {
    for i in 0..seq.len() {
        for j in i + 1..seq.len() {
            if seq[i] > seq[j] {
                return true;
            }
        }
    }
    false
}
