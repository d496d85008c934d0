//! Named scenarios and scenario files.
//!
//! A scenario is a simulator config plus the assertions that must hold on
//! its final report. Files are plain JSON configs; they get the generic
//! assertions only.

use std::collections::BTreeSet;
use std::path::Path;

use bdtf_core::clients::Outcome;
use bdtf_core::exchange::IngestOutcome;
use bdtf_core::sim::{
    run_simulation, FakeChain, Halt, Kill, Party, Reorg, SimConfig, SimConfigError, SimOutput,
    SimReport, Tamper, LAST_STEP,
};
use serde::Serialize;
use thiserror::Error;

pub const BUILTIN: [&str; 8] = [
    "honest-trade",
    "mismatched-data",
    "refuse-to-pay",
    "double-spend",
    "fake-chain-attack",
    "exchange-kill",
    "multi-exchange",
    "tampered-enclave",
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario `{0}` (not a built-in name or a readable file)")]
    Unknown(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Config(#[from] SimConfigError),
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub label: String,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub config: SimConfig,
    builtin: Option<&'static str>,
}

pub struct ScenarioRun {
    pub output: SimOutput,
    pub checks: Vec<Check>,
}

impl ScenarioRun {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// The config behind a built-in name.
pub fn builtin_config(name: &str, seed: u64) -> Option<SimConfig> {
    let mut cfg = SimConfig {
        seed,
        ..SimConfig::default()
    };
    let adv = &mut cfg.adversary;
    match name {
        "honest-trade" => {}
        "mismatched-data" => adv.fake_data = vec![0],
        "refuse-to-pay" => {
            adv.halt = Some(Halt {
                party: Party::Buyer,
                index: 0,
                step: 11,
            })
        }
        "double-spend" => adv.reorg = Some(Reorg::default()),
        "fake-chain-attack" => {
            adv.fake_chain = Some(FakeChain {
                easier_shift: 8,
                length: 10,
            })
        }
        "exchange-kill" => {
            cfg.exchanges = 3;
            cfg.adversary.kill_exchange = vec![
                Kill {
                    exchange: 0,
                    after_step: 11,
                },
                Kill {
                    exchange: 1,
                    after_step: 11,
                },
            ];
        }
        "multi-exchange" => cfg.exchanges = 3,
        "tampered-enclave" => {
            adv.tamper_enclave = Some(Tamper {
                exchange: 0,
                from_step: 5,
            })
        }
        _ => return None,
    }
    Some(cfg)
}

/// Resolves a built-in name or a path to a JSON config. `seed` overrides the
/// config's seed when given.
pub fn load(arg: &str, seed: Option<u64>) -> Result<Scenario, ScenarioError> {
    if let Some(&name) = BUILTIN.iter().find(|n| **n == arg) {
        let config = builtin_config(name, seed.unwrap_or(0)).expect("listed");
        return Ok(Scenario {
            name: name.to_string(),
            config,
            builtin: Some(name),
        });
    }
    let path = Path::new(arg);
    if !path.is_file() {
        return Err(ScenarioError::Unknown(arg.to_string()));
    }
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: arg.to_string(),
        source,
    })?;
    let mut config = SimConfig::from_json(&text)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(Scenario {
        name: path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        config,
        builtin: None,
    })
}

impl Scenario {
    pub fn run(&self) -> Result<ScenarioRun, SimConfigError> {
        let output = run_simulation(&self.config)?;
        let checks = checks(self.builtin, &self.config, &output.report);
        Ok(ScenarioRun { output, checks })
    }
}

fn check(out: &mut Vec<Check>, label: &str, passed: bool) {
    out.push(Check {
        label: label.to_string(),
        passed,
    });
}

/// Steps observed anywhere in the trade: buyer, seller, and exchanges.
fn steps_seen(r: &SimReport) -> BTreeSet<u8> {
    let mut s = BTreeSet::new();
    for b in &r.buyers {
        s.extend(b.steps.iter().map(|(k, _)| *k));
    }
    for x in &r.sellers {
        s.extend(x.steps.iter().map(|(k, _)| *k));
    }
    for e in &r.exchanges {
        s.extend(e.steps.iter().map(|st| st.step));
    }
    s
}

fn checks(builtin: Option<&str>, cfg: &SimConfig, r: &SimReport) -> Vec<Check> {
    let mut c = Vec::new();
    check(&mut c, "audit found no violations", r.violations.is_empty());
    let b = &r.buyers[0];
    let s = &r.sellers[0];
    let fee = cfg.network.service_fee * cfg.trade_exchanges() as u64;
    let spent = b.initial_balance - b.balance;
    match builtin {
        None => {
            if cfg.adversary.is_benign() {
                // More buyers than sellers leaves some unmatched; that is
                // not a failed trade.
                check(
                    &mut c,
                    "every matched buyer completed",
                    r.buyers
                        .iter()
                        .all(|b| matches!(b.outcome, Outcome::Completed | Outcome::NoMatch)),
                );
                check(
                    &mut c,
                    "at least one trade completed",
                    r.buyers.iter().any(|b| b.outcome == Outcome::Completed),
                );
            }
        }
        Some("honest-trade") | Some("multi-exchange") => {
            check(&mut c, "trade completed", b.outcome == Outcome::Completed);
            check(
                &mut c,
                "all 15 steps executed",
                steps_seen(r) == (1..=LAST_STEP).collect(),
            );
            check(&mut c, "recovered file is byte-identical", b.data_matches);
            check(&mut c, "buyer paid exactly price + fees", spent == cfg.price + fee);
            check(&mut c, "seller received exactly the price", s.balance == cfg.price);
            check(&mut c, "review visible on chain", s.reviews_received >= 1);
            check(
                &mut c,
                "ciphertext deposited at every exchange",
                s.deposited_at.len() == cfg.trade_exchanges(),
            );
        }
        Some("mismatched-data") => {
            check(&mut c, "buyer aborted at step 10", b.outcome == Outcome::AbortedAtStep(10));
            check(&mut c, "buyer lost only the exchange fee", spent == fee);
            check(&mut c, "seller unpaid", s.balance == 0);
        }
        Some("refuse-to-pay") => {
            check(&mut c, "buyer aborted at step 11", b.outcome == Outcome::AbortedAtStep(11));
            check(&mut c, "buyer holds only the sample", b.holds_sample && !b.obtained_data);
            check(&mut c, "seller unpaid", s.balance == 0);
            check(
                &mut c,
                "no data released",
                r.exchanges.iter().all(|e| e.release_egress == 0),
            );
        }
        Some("double-spend") => {
            let reorg = r.reorg.as_ref();
            check(&mut c, "heavier branch published", reorg.is_some());
            check(
                &mut c,
                "payment orphaned by the reorg",
                reorg.is_some_and(|x| x.payment_reverted),
            );
            check(
                &mut c,
                "evidence never released data",
                reorg.is_some_and(|x| x.releases_to_buyer == 0) && !b.obtained_data,
            );
            check(&mut c, "seller unpaid", s.balance == 0);
        }
        Some("fake-chain-attack") => {
            let fake = r.fake_chain.as_ref();
            check(
                &mut c,
                "enclave rejected all fake headers",
                fake.is_some_and(|f| {
                    f.all_rejected
                        && f.outcomes
                            .values()
                            .flatten()
                            .all(|o| *o == IngestOutcome::RejectedDifficulty)
                }),
            );
            check(&mut c, "buyer got no data", !b.obtained_data);
            check(&mut c, "seller unpaid", s.balance == 0);
        }
        Some("exchange-kill") => {
            check(&mut c, "trade completed", b.outcome == Outcome::Completed);
            check(&mut c, "recovered file is byte-identical", b.data_matches);
            check(
                &mut c,
                "one exchange survived",
                r.exchanges.iter().filter(|e| e.alive).count() == 1,
            );
            check(&mut c, "seller paid exactly once", s.balance == cfg.price);
        }
        Some("tampered-enclave") => {
            check(&mut c, "seller aborted at step 6", s.outcome == Outcome::AbortedAtStep(6));
            check(&mut c, "no ciphertext deposited", s.deposited_at.is_empty());
            check(&mut c, "buyer got no data", !b.obtained_data);
            check(&mut c, "seller unpaid", s.balance == 0);
        }
        Some(other) => unreachable!("no assertions for {other}"),
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_passes() {
        for name in BUILTIN {
            let run = load(name, Some(2)).unwrap().run().unwrap();
            let failed: Vec<_> = run.checks.iter().filter(|c| !c.passed).collect();
            assert!(failed.is_empty(), "{name}: {failed:?} {:?}", run.output.report.violations);
        }
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(load("no-such-scenario", None), Err(ScenarioError::Unknown(_))));
    }

    #[test]
    fn builtin_configs_round_trip_through_json() {
        for name in BUILTIN {
            let cfg = builtin_config(name, 9).unwrap();
            assert_eq!(SimConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        }
    }
}
