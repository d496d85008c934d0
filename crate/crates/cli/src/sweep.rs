//! The adversarial fairness sweep: halt every party at every step, plus the
//! attack scenarios, across many seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::{Duration, Instant};

use bdtf_core::sim::{
    run_simulation, FakeChain, Halt, Kill, Party, Reorg, SimConfig, SimReport, Tamper,
    ViolationKind, LAST_STEP,
};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Special {
    DoubleSpend,
    FakeChain,
    ExchangeKill,
    TamperedEnclave,
}

impl Special {
    pub const ALL: [Special; 4] = [
        Special::DoubleSpend,
        Special::FakeChain,
        Special::ExchangeKill,
        Special::TamperedEnclave,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Special::DoubleSpend => "double-spend",
            Special::FakeChain => "fake-chain",
            Special::ExchangeKill => "exchange-kill",
            Special::TamperedEnclave => "tampered-enclave",
        }
    }
}

impl FromStr for Special {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Special::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown special scenario `{s}`"))
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub parties: Vec<Party>,
    pub steps: Vec<u8>,
    pub specials: Vec<Special>,
    pub seeds: u64,
    pub first_seed: u64,
    pub disable_release_gate: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            parties: Party::ALL.to_vec(),
            steps: (1..=LAST_STEP).collect(),
            specials: Special::ALL.to_vec(),
            // 49 cells x 21 seeds = 1029 runs
            seeds: 21,
            first_seed: 0,
            disable_release_gate: false,
        }
    }
}

impl SweepSpec {
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &p in &self.parties {
            for &s in &self.steps {
                out.push(Cell::Halt(p, s));
            }
        }
        out.extend(self.specials.iter().map(|&s| Cell::Special(s)));
        out
    }

    pub fn run_count(&self) -> u64 {
        self.cells().len() as u64 * self.seeds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Cell {
    Halt(Party, u8),
    Special(Special),
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cell::Halt(p, s) => write!(f, "halt({p},{s})"),
            Cell::Special(s) => f.write_str(s.name()),
        }
    }
}

/// Seeds also vary the shape of each run: odd seeds use three exchanges,
/// and attack parameters walk through their ranges.
pub fn cell_config(cell: Cell, seed: u64) -> SimConfig {
    let mut cfg = SimConfig {
        seed,
        ..SimConfig::default()
    };
    if seed % 2 == 1 {
        cfg.exchanges = 3;
    }
    let adv = &mut cfg.adversary;
    match cell {
        Cell::Halt(party, step) => adv.halt = Some(Halt { party, index: 0, step }),
        Cell::Special(Special::DoubleSpend) => adv.reorg = Some(Reorg::default()),
        Cell::Special(Special::FakeChain) => {
            adv.fake_chain = Some(FakeChain {
                easier_shift: 8,
                length: 5 + seed % 46,
            })
        }
        Cell::Special(Special::ExchangeKill) => {
            cfg.exchanges = 3;
            let after_step = 9 + (seed % 5) as u8;
            cfg.adversary.kill_exchange = vec![
                Kill { exchange: 0, after_step },
                Kill { exchange: 1, after_step },
            ];
        }
        Cell::Special(Special::TamperedEnclave) => {
            adv.tamper_enclave = Some(Tamper {
                exchange: 0,
                from_step: 1 + (seed % 14) as u8,
            })
        }
    }
    cfg
}

#[derive(Debug, Clone, Serialize)]
pub struct Finding {
    pub scenario: String,
    pub seed: u64,
    pub party: Party,
    pub step: u8,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CellStats {
    pub runs: u64,
    pub failed_runs: u64,
}

#[derive(Debug, Default)]
pub struct SweepResult {
    pub cells: BTreeMap<Cell, CellStats>,
    pub runs: u64,
    /// Runs whose release-gating (taint) audit was clean.
    pub taint_clean: u64,
    pub fairness: Vec<Finding>,
    /// Violations that are not fairness breaches (step order, liveness).
    pub other: Vec<Finding>,
    pub elapsed: Duration,
}

impl SweepResult {
    pub fn passed(&self) -> bool {
        self.fairness.is_empty()
    }
}

#[derive(Debug, PartialEq, Eq)]
pub struct EmptyMatrix;

fn findings(cell: Cell, r: &SimReport) -> (Vec<Finding>, Vec<Finding>) {
    r.violations
        .iter()
        .map(|v| Finding {
            scenario: cell.to_string(),
            seed: r.seed,
            party: v.party,
            step: v.step,
            kind: v.kind,
            detail: v.detail.clone(),
        })
        .partition(|f| f.kind.is_fairness())
}

pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult, EmptyMatrix> {
    let cells = spec.cells();
    if cells.is_empty() || spec.seeds == 0 {
        return Err(EmptyMatrix);
    }
    let started = Instant::now();
    let mut res = SweepResult::default();
    for cell in cells {
        let stats = res.cells.entry(cell).or_default();
        for seed in spec.first_seed..spec.first_seed + spec.seeds {
            let mut cfg = cell_config(cell, seed);
            cfg.disable_release_gate = spec.disable_release_gate;
            let out = run_simulation(&cfg).expect("sweep configs are valid");
            let r = &out.report;
            let (fair, other) = findings(cell, r);
            stats.runs += 1;
            if !fair.is_empty() {
                stats.failed_runs += 1;
            }
            if !r.violations.iter().any(|v| v.kind == ViolationKind::TaintedEgress) {
                res.taint_clean += 1;
            }
            res.runs += 1;
            res.fairness.extend(fair);
            res.other.extend(other);
        }
    }
    res.elapsed = started.elapsed();
    Ok(res)
}

/// Pass/fail matrix: one row per party, one column per step, then the
/// attack scenarios.
pub fn render(res: &SweepResult) -> String {
    let mut s = String::new();
    let halts: Vec<(Party, u8)> = res
        .cells
        .keys()
        .filter_map(|c| match c {
            Cell::Halt(p, k) => Some((*p, *k)),
            _ => None,
        })
        .collect();
    if !halts.is_empty() {
        let mut steps: Vec<u8> = halts.iter().map(|h| h.1).collect();
        steps.sort_unstable();
        steps.dedup();
        let _ = write!(s, "{:<10}", "halt at");
        for k in &steps {
            let _ = write!(s, "{k:>4}");
        }
        s.push('\n');
        for p in Party::ALL {
            if !halts.iter().any(|h| h.0 == p) {
                continue;
            }
            let _ = write!(s, "{:<10}", p.name());
            for k in &steps {
                let mark = match res.cells.get(&Cell::Halt(p, *k)) {
                    None => "",
                    Some(c) if c.failed_runs == 0 => "ok",
                    Some(_) => "FAIL",
                };
                let _ = write!(s, "{mark:>4}");
            }
            s.push('\n');
        }
    }
    for (cell, st) in &res.cells {
        if let Cell::Special(x) = cell {
            let mark = if st.failed_runs == 0 { "ok" } else { "FAIL" };
            let _ = writeln!(s, "{:<18}{mark:>4}  ({} runs)", x.name(), st.runs);
        }
    }
    let _ = writeln!(
        s,
        "runs: {}  fairness violations: {}  other audit findings: {}",
        res.runs,
        res.fairness.len(),
        res.other.len()
    );
    let _ = writeln!(
        s,
        "release gating (taint audit): clean in {}/{} runs",
        res.taint_clean, res.runs
    );
    let _ = writeln!(s, "elapsed: {:.2}s", res.elapsed.as_secs_f64());
    s
}

pub fn parse_steps(s: &str) -> Result<Vec<u8>, String> {
    if s == "none" {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for part in s.split(',') {
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (a, b),
            None => (part, part),
        };
        let lo: u8 = lo.trim().parse().map_err(|_| format!("bad step `{part}`"))?;
        let hi: u8 = hi.trim().parse().map_err(|_| format!("bad step `{part}`"))?;
        if lo == 0 || hi > LAST_STEP || lo > hi {
            return Err(format!("steps must lie in 1..={LAST_STEP}, got `{part}`"));
        }
        out.extend(lo..=hi);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

pub fn parse_parties(s: &str) -> Result<Vec<Party>, String> {
    if s == "none" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| {
            Party::ALL
                .into_iter()
                .find(|x| x.name() == p.trim())
                .ok_or_else(|| format!("unknown party `{p}`"))
        })
        .collect()
}

pub fn parse_specials(s: &str) -> Result<Vec<Special>, String> {
    if s == "none" {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| p.trim().parse()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matrix_is_big_enough() {
        assert!(SweepSpec::default().run_count() >= 1000);
    }

    #[test]
    fn step_lists() {
        assert_eq!(parse_steps("1-3,5,3").unwrap(), vec![1, 2, 3, 5]);
        assert_eq!(parse_steps("none").unwrap(), Vec::<u8>::new());
        assert!(parse_steps("0").is_err());
        assert!(parse_steps("16").is_err());
        assert!(parse_steps("4-2").is_err());
    }

    #[test]
    fn party_and_special_lists() {
        assert_eq!(parse_parties("buyer,exchange").unwrap(), vec![Party::Buyer, Party::Exchange]);
        assert!(parse_parties("miner").is_err());
        assert_eq!(parse_specials("fake-chain").unwrap(), vec![Special::FakeChain]);
        assert!(parse_specials("nope").is_err());
    }

    #[test]
    fn empty_matrix_refused() {
        let spec = SweepSpec {
            parties: vec![],
            specials: vec![],
            ..SweepSpec::default()
        };
        assert_eq!(run_sweep(&spec).unwrap_err(), EmptyMatrix);
        let spec = SweepSpec {
            seeds: 0,
            ..SweepSpec::default()
        };
        assert_eq!(run_sweep(&spec).unwrap_err(), EmptyMatrix);
    }

    #[test]
    fn sweep_configs_validate() {
        let spec = SweepSpec::default();
        for cell in spec.cells() {
            for seed in 0..14 {
                cell_config(cell, seed).validate().unwrap();
            }
        }
    }
}
