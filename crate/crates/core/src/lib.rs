pub mod amount;
pub mod arbitrage;
pub mod market;
pub mod state;
pub mod chain;
pub mod searcher;
pub mod rewards;
pub mod metrics;
pub mod scenario;
pub mod report;
pub mod sim;
