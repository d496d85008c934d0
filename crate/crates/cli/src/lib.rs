//! Scenario runner, fairness sweep and load benchmarks for the trading
//! simulator. The `bdtf` binary is a thin wrapper over these modules.

pub mod bench;
pub mod scenarios;
pub mod sweep;
