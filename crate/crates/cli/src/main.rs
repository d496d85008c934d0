use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use bdtf_cli::bench::{self, LoadSpec, MetricsReport, SCHEMA};
use bdtf_cli::scenarios::{self, BUILTIN};
use bdtf_cli::sweep::{self, SweepSpec};
use bdtf_core::sim::{Party, LAST_STEP};
use clap::{Parser, Subcommand};
use serde_json::json;

// List-valued flags parsed in one piece; the aliases keep clap from
// treating them as repeated arguments.
type Parties = Vec<Party>;
type Steps = Vec<u8>;
type Specials = Vec<sweep::Special>;

const PASS: u8 = 0;
const ASSERTION_FAILED: u8 = 1;
const CONFIG_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "bdtf", version, about = "Fair data trading simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and check its assertions.
    Run {
        /// Built-in scenario name or path to a JSON config.
        #[arg(long)]
        scenario: String,
        #[arg(long, env = "BDTF_SEED")]
        seed: Option<u64>,
        /// Write the event trace as JSON Lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the final report and assertion results as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// List built-in scenarios.
    List,
    /// Print a scenario's config as JSON.
    Show {
        #[arg(long)]
        scenario: String,
        #[arg(long, env = "BDTF_SEED")]
        seed: Option<u64>,
    },
    /// Run the adversarial matrix and audit every run.
    Sweep {
        /// Run the fairness matrix (halts at every step plus attacks).
        #[arg(long)]
        fairness: bool,
        /// Seeds per cell.
        #[arg(long, default_value_t = SweepSpec::default().seeds)]
        seeds: u64,
        /// First seed.
        #[arg(long, env = "BDTF_SEED", default_value_t = 0)]
        seed: u64,
        /// Comma-separated parties, or `none`.
        #[arg(long, default_value = "buyer,seller,exchange", value_parser = sweep::parse_parties)]
        parties: Parties,
        /// Steps as a list of numbers and ranges, or `none`.
        #[arg(long, default_value = "1-15", value_parser = sweep::parse_steps)]
        steps: Steps,
        /// Attack scenarios, or `none`.
        #[arg(
            long,
            default_value = "double-spend,fake-chain,exchange-kill,tampered-enclave",
            value_parser = sweep::parse_specials
        )]
        specials: Specials,
        /// Test hook: exchanges release data without checking payment.
        #[arg(long, hide = true)]
        disable_release_gate: bool,
    },
    /// Measure chain throughput/latency under load and enclave response time.
    Bench {
        /// Offered load in transactions per simulated second; comma-separated
        /// for several points.
        #[arg(long, value_delimiter = ',', required = true)]
        load: Vec<f64>,
        /// Measurement window, simulated seconds.
        #[arg(long, default_value_t = 60)]
        duration: u64,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 1000)]
        enclave_reps: usize,
        /// Plaintext size of each trade in the enclave benchmark.
        #[arg(long, default_value_t = 64 * 1024)]
        enclave_data_bytes: usize,
        #[arg(long, env = "BDTF_SEED", default_value_t = 0)]
        seed: u64,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            scenario,
            seed,
            trace,
            report,
        } => run(&scenario, seed, trace, report),
        Command::List => {
            for name in BUILTIN {
                println!("{name}");
            }
            PASS
        }
        Command::Show { scenario, seed } => match scenarios::load(&scenario, seed) {
            Ok(s) => {
                println!("{}", s.config.to_json());
                PASS
            }
            Err(e) => {
                eprintln!("error: {e}");
                CONFIG_ERROR
            }
        },
        Command::Sweep {
            fairness,
            seeds,
            seed,
            parties,
            steps,
            specials,
            disable_release_gate,
        } => {
            if !fairness {
                eprintln!("error: nothing to sweep; pass --fairness");
                return ExitCode::from(CONFIG_ERROR);
            }
            let spec = SweepSpec {
                parties,
                steps,
                specials,
                seeds,
                first_seed: seed,
                disable_release_gate,
            };
            run_sweep(&spec)
        }
        Command::Bench {
            load,
            duration,
            reps,
            enclave_reps,
            enclave_data_bytes,
            seed,
            out,
        } => {
            if load.iter().any(|l| l.is_nan() || *l <= 0.0) || duration == 0 || reps == 0 || enclave_reps == 0 {
                eprintln!("error: load, duration and repetition counts must be positive");
                return ExitCode::from(CONFIG_ERROR);
            }
            let spec = LoadSpec {
                loads: load,
                duration_secs: duration,
                repetitions: reps,
                seed,
                ..LoadSpec::default()
            };
            let report = MetricsReport {
                schema: SCHEMA,
                simulated: bench::chain_load(&spec),
                wall_clock: bench::enclave_response(enclave_reps, enclave_data_bytes.max(1), seed),
            };
            let text = serde_json::to_string_pretty(&report).expect("serializable");
            match write_out(out.as_ref(), &text) {
                Ok(()) => PASS,
                Err(e) => {
                    eprintln!("error: {e}");
                    CONFIG_ERROR
                }
            }
        }
    };
    ExitCode::from(code)
}

fn write_out(path: Option<&PathBuf>, text: &str) -> io::Result<()> {
    match path {
        Some(p) => std::fs::write(p, format!("{text}\n")),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(name: &str, seed: Option<u64>, trace: Option<PathBuf>, report: Option<PathBuf>) -> u8 {
    let scenario = match scenarios::load(name, seed) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return CONFIG_ERROR;
        }
    };
    let result = match scenario.run() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return CONFIG_ERROR;
        }
    };
    let r = &result.output.report;
    println!("scenario {} (seed {})", scenario.name, scenario.config.seed);
    for (i, b) in r.buyers.iter().enumerate() {
        println!("  buyer-{i}: {:?}", b.outcome);
    }
    for (i, s) in r.sellers.iter().enumerate() {
        println!("  seller-{i}: {:?}", s.outcome);
    }
    println!("  blocks: {}  trace events: {}", r.height, r.trace_len);
    for v in &r.violations {
        println!("  violation: {} at ({}, step {}): {}", v.kind.name(), v.party, v.step, v.detail);
    }
    for c in &result.checks {
        println!("  [{}] {}", if c.passed { "pass" } else { "FAIL" }, c.label);
    }

    if let Some(path) = trace {
        let written = File::create(&path).and_then(|f| {
            let mut w = BufWriter::new(f);
            result.output.trace.write_jsonl(&mut w)?;
            w.flush()
        });
        if let Err(e) = written {
            eprintln!("error: {}: {e}", path.display());
            return CONFIG_ERROR;
        }
    }
    if let Some(path) = report {
        let doc = json!({
            "scenario": scenario.name,
            "config": scenario.config,
            "passed": result.passed(),
            "checks": result.checks,
            "report": r,
        });
        let text = serde_json::to_string_pretty(&doc).expect("serializable");
        if let Err(e) = std::fs::write(&path, text + "\n") {
            eprintln!("error: {}: {e}", path.display());
            return CONFIG_ERROR;
        }
    }
    if result.passed() {
        println!("PASS");
        PASS
    } else {
        println!("FAIL");
        ASSERTION_FAILED
    }
}

fn run_sweep(spec: &SweepSpec) -> u8 {
    let res = match sweep::run_sweep(spec) {
        Ok(r) => r,
        Err(_) => {
            eprintln!("error: the adversary matrix is empty");
            return CONFIG_ERROR;
        }
    };
    print!("{}", sweep::render(&res));
    for f in &res.other {
        println!(
            "note: {} at ({}, step {}) seed {} [{}]: {}",
            f.kind.name(),
            f.party,
            f.step,
            f.seed,
            f.scenario,
            f.detail
        );
    }
    if res.passed() {
        println!("PASS: no fairness violations");
        PASS
    } else {
        for f in &res.fairness {
            println!(
                "violation: party={} step={} seed={} kind={} scenario={}: {}",
                f.party,
                f.step,
                f.seed,
                f.kind.name(),
                f.scenario,
                f.detail
            );
        }
        debug_assert!(res.fairness.iter().all(|f| (1..=LAST_STEP).contains(&f.step)));
        println!("FAIL: {} fairness violations", res.fairness.len());
        ASSERTION_FAILED
    }
}
