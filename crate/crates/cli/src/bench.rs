//! Load benchmarks.
//!
//! Chain metrics run in simulated time: Poisson arrivals at the offered rate
//! feed a FIFO mempool, and a miner produces a block every interval holding
//! at most `capacity` transactions. Blocks are mined and validated by the
//! real ledger, signatures included. Enclave metrics are wall-clock timings
//! of payment-evidence requests served end to end from their encoded frames.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Instant;

use bdtf_core::attestation::SoftwareRoot;
use bdtf_core::chain::{mine_block, Allocation, ChainState, NetworkConfig, SignedTransaction, Target};
use bdtf_core::crypto::{encrypt_chunked, hash, DataKey, KeyPair};
use bdtf_core::exchange::{DepositOutcome, Enclave, EnclaveConfig, IngestOutcome, PaymentOutcome};
use bdtf_core::net::Message;
use bdtf_core::sim::{dataset, derive_seed, BLOCK_CAPACITY};
use bdtf_core::spv::{build_evidence, PaymentEvidence};
use bdtf_core::types::Endpoint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

pub const SCHEMA: &str = "bdtf-metrics/1";

#[derive(Debug, Clone)]
pub struct LoadSpec {
    /// Offered loads, transactions per simulated second.
    pub loads: Vec<f64>,
    pub duration_secs: u64,
    pub repetitions: usize,
    pub block_interval_ms: u64,
    pub block_capacity: usize,
    pub seed: u64,
}

impl Default for LoadSpec {
    fn default() -> Self {
        LoadSpec {
            loads: vec![10.0, 25.0, 40.0, 50.0, 60.0, 80.0, 100.0],
            duration_secs: 60,
            repetitions: 100,
            block_interval_ms: 10_000,
            block_capacity: BLOCK_CAPACITY,
            seed: 0,
        }
    }
}

impl LoadSpec {
    pub fn capacity_tps(&self) -> f64 {
        self.block_capacity as f64 * 1000.0 / self.block_interval_ms as f64
    }
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct Stats {
    pub min: f64,
    pub avg: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Option<Stats> {
        let mut n = 0usize;
        let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for x in xs {
            n += 1;
            min = min.min(x);
            max = max.max(x);
            sum += x;
        }
        // Clamp: a float mean can drift a hair outside [min, max].
        (n > 0).then(|| Stats {
            min,
            avg: (sum / n as f64).clamp(min, max),
            max,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ThroughputPoint {
    pub offered_tps: f64,
    /// Transactions validated inside the measurement window, per simulated
    /// second, across repetitions.
    pub validated_tps: Stats,
}

#[derive(Debug, Clone, Serialize)]
pub struct LatencyPoint {
    pub offered_tps: f64,
    pub transactions: u64,
    /// Arrival to inclusion in a validated block, simulated milliseconds.
    pub latency_ms: Stats,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainMetrics {
    pub time_base: &'static str,
    pub block_interval_ms: u64,
    pub block_capacity: usize,
    pub capacity_tps: f64,
    pub duration_secs: u64,
    pub repetitions: usize,
    pub tx_throughput: Vec<ThroughputPoint>,
    pub validation_latency: Vec<LatencyPoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnclaveTiming {
    pub time_base: &'static str,
    pub requests: usize,
    pub data_bytes: usize,
    /// Wall-clock milliseconds per request.
    pub response_ms: Stats,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub schema: &'static str,
    pub simulated: ChainMetrics,
    pub wall_clock: EnclaveTiming,
}

fn exp_arrivals(rng: &mut ChaCha20Rng, rate_per_ms: f64, horizon_ms: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        let u: f64 = rng.gen();
        t += -(1.0 - u).ln() / rate_per_ms;
        if t >= horizon_ms {
            return out;
        }
        out.push(t);
    }
}

struct RepResult {
    in_window: u64,
    latencies: Vec<f64>,
}

fn sender(i: usize) -> KeyPair {
    let mut seed = b"bench-sender".to_vec();
    seed.extend_from_slice(&(i as u64).to_le_bytes());
    KeyPair::from_seed(hash(&seed).0)
}

fn run_rep(net: &NetworkConfig, pool: &[SignedTransaction], arrivals: &[f64], spec: &LoadSpec) -> RepResult {
    let mut chain = ChainState::new(net.clone());
    let window = spec.duration_secs as f64 * 1000.0;
    let mut queue: VecDeque<(f64, &SignedTransaction)> = VecDeque::new();
    let mut next = 0;
    let mut res = RepResult {
        in_window: 0,
        latencies: Vec::with_capacity(arrivals.len()),
    };
    let mut k = 1u64;
    while next < arrivals.len() || !queue.is_empty() {
        let t = (k * spec.block_interval_ms) as f64;
        while next < arrivals.len() && arrivals[next] <= t {
            queue.push_back((arrivals[next], &pool[next]));
            next += 1;
        }
        let take = queue.len().min(spec.block_capacity);
        let batch: Vec<_> = queue.drain(..take).collect();
        let parent = chain.tip_header().clone();
        let txs = batch.iter().map(|(_, tx)| (*tx).clone()).collect();
        let ts = net.genesis_timestamp + k * spec.block_interval_ms / 1000;
        let block = mine_block(&parent, txs, net.target, ts).expect("easy target");
        chain.validate_and_apply(block).expect("bench block valid");
        for (arrived, _) in &batch {
            res.latencies.push(t - arrived);
        }
        if t <= window {
            res.in_window += batch.len() as u64;
        }
        k += 1;
    }
    res
}

/// Throughput and latency for each offered load.
pub fn chain_load(spec: &LoadSpec) -> ChainMetrics {
    assert!(spec.loads.iter().all(|l| *l > 0.0), "loads must be positive");
    let horizon = spec.duration_secs as f64 * 1000.0;
    let mut schedules = Vec::new();
    for (li, load) in spec.loads.iter().enumerate() {
        let reps: Vec<Vec<f64>> = (0..spec.repetitions)
            .map(|r| {
                let label = format!("bench/load{li}/rep{r}");
                let mut rng = ChaCha20Rng::from_seed(derive_seed(spec.seed, &label));
                exp_arrivals(&mut rng, load / 1000.0, horizon)
            })
            .collect();
        schedules.push(reps);
    }
    let most = schedules.iter().flatten().map(Vec::len).max().unwrap_or(0);
    // One funded sender per transaction, each spending nonce 0, so any
    // prefix of the pool is valid in any order.
    let sink = sender(usize::MAX).address();
    let keys: Vec<KeyPair> = (0..most).map(sender).collect();
    let pool: Vec<SignedTransaction> = keys.iter().map(|k| SignedTransaction::payment(k, sink, 1, 0)).collect();
    let net = NetworkConfig::new(
        Target::pow2(250),
        keys.iter()
            .map(|k| Allocation {
                address: k.address(),
                amount: 1,
            })
            .collect(),
    );

    let mut tx_throughput = Vec::new();
    let mut validation_latency = Vec::new();
    for (load, reps) in spec.loads.iter().zip(&schedules) {
        let mut tps = Vec::new();
        let mut lat = Vec::new();
        for arrivals in reps {
            let r = run_rep(&net, &pool, arrivals, spec);
            tps.push(r.in_window as f64 / spec.duration_secs as f64);
            lat.extend(r.latencies);
        }
        tx_throughput.push(ThroughputPoint {
            offered_tps: *load,
            validated_tps: Stats::of(tps).unwrap_or(Stats { min: 0.0, avg: 0.0, max: 0.0 }),
        });
        validation_latency.push(LatencyPoint {
            offered_tps: *load,
            transactions: lat.len() as u64,
            latency_ms: Stats::of(lat.iter().copied()).unwrap_or(Stats { min: 0.0, avg: 0.0, max: 0.0 }),
        });
    }
    ChainMetrics {
        time_base: "simulated",
        block_interval_ms: spec.block_interval_ms,
        block_capacity: spec.block_capacity,
        capacity_tps: spec.capacity_tps(),
        duration_secs: spec.duration_secs,
        repetitions: spec.repetitions,
        tx_throughput,
        validation_latency,
    }
}

/// Times `requests` payment-evidence requests against one enclave. Each
/// request is a fresh trade with `data_bytes` of deposited ciphertext; only
/// decoding the request frame, verifying the evidence, and encoding the
/// release is timed.
pub fn enclave_response(requests: usize, data_bytes: usize, seed: u64) -> EnclaveTiming {
    assert!(requests > 0 && data_bytes > 0);
    let buyer = KeyPair::from_seed(derive_seed(seed, "bench/buyer"));
    let seller = KeyPair::from_seed(derive_seed(seed, "bench/seller"));
    let owner = KeyPair::from_seed(derive_seed(seed, "bench/owner"));
    let price = 100;
    let mut net = NetworkConfig::new(
        Target::pow2(250),
        vec![Allocation {
            address: buyer.address(),
            amount: requests as u64 * (price + 10),
        }],
    );
    net.service_fee = 10;
    let mut chain = ChainState::new(net.clone());
    let cfg = EnclaveConfig::from_network(&net, chain.genesis_hash(), owner.address());
    let root = Arc::new(SoftwareRoot::new(KeyPair::from_seed(derive_seed(seed, "bench/root"))));
    let mut enclave = Enclave::launch(cfg, root, derive_seed(seed, "bench/enclave"));

    let mut txs = Vec::with_capacity(2 * requests);
    for i in 0..requests as u64 {
        txs.push(SignedTransaction::payment(&buyer, owner.address(), net.service_fee, 2 * i));
        txs.push(SignedTransaction::payment(&buyer, seller.address(), price, 2 * i + 1));
    }
    let hashes: Vec<_> = txs.iter().map(|t| t.tx.tx_hash()).collect();
    let mut blocks: Vec<Vec<SignedTransaction>> = txs.chunks(BLOCK_CAPACITY).map(<[_]>::to_vec).collect();
    blocks.extend((0..net.confirm_depth).map(|_| Vec::new()));
    for body in blocks {
        let parent = chain.tip_header().clone();
        let b = mine_block(&parent, body, net.target, parent.timestamp + 10).expect("easy target");
        chain.validate_and_apply(b).expect("valid");
        let h = chain.tip_header().clone();
        assert_eq!(enclave.ingest_header(&h), IngestOutcome::Accepted);
    }
    let evidence: Vec<PaymentEvidence> = hashes
        .iter()
        .map(|h| build_evidence(&chain, h).expect("mined"))
        .collect();

    let data = dataset(seed, data_bytes);
    let endpoint = Endpoint::new("10.0.0.1:7000").expect("valid endpoint");
    let key = DataKey(derive_seed(seed, "bench/key"));
    let mut times = Vec::with_capacity(requests);
    for i in 0..requests {
        let id = enclave
            .open_trade(&evidence[2 * i], price, buyer.address(), seller.address(), endpoint.clone())
            .expect("fee evidence valid")
            .id;
        let chunks = encrypt_chunked(&key, &data, &id).expect("non-empty");
        assert!(matches!(enclave.deposit_data(&id, chunks), DepositOutcome::SampleSent { .. }));
        let frame = Message::PaymentEvidence {
            id,
            evidence: evidence[2 * i + 1].clone(),
        }
        .to_frame();

        let start = Instant::now();
        let Ok(Message::PaymentEvidence { id, evidence }) = Message::from_frame(&frame) else {
            panic!("request frame did not round-trip");
        };
        let PaymentOutcome::DataReleased { chunks, .. } = enclave.submit_payment_evidence(&id, &evidence) else {
            panic!("valid payment refused");
        };
        let reply = Message::DataRelease { id, chunks }.to_frame();
        times.push(start.elapsed().as_secs_f64() * 1000.0);

        std::hint::black_box(reply);
        let now = enclave.now();
        enclave.gc(now);
    }
    EnclaveTiming {
        time_base: "wall_clock",
        requests,
        data_bytes,
        response_ms: Stats::of(times).expect("requests > 0"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_order() {
        let s = Stats::of([3.0, 1.0, 2.0]).unwrap();
        assert_eq!((s.min, s.avg, s.max), (1.0, 2.0, 3.0));
        assert_eq!(Stats::of(std::iter::empty()), None);
        let same = Stats::of([0.1; 7]).unwrap();
        assert!(same.min <= same.avg && same.avg <= same.max);
    }

    #[test]
    fn underload_throughput_matches_offered() {
        let spec = LoadSpec {
            loads: vec![5.0],
            duration_secs: 100,
            repetitions: 3,
            ..LoadSpec::default()
        };
        let m = chain_load(&spec);
        let t = &m.tx_throughput[0].validated_tps;
        assert!((t.avg - 5.0).abs() < 1.0, "{t:?}");
        // Every transaction waits at most one block interval.
        assert!(m.validation_latency[0].latency_ms.max <= 10_000.0);
    }

    #[test]
    fn enclave_timing_orders() {
        let t = enclave_response(5, 1000, 1);
        assert_eq!(t.requests, 5);
        assert!(t.response_ms.min <= t.response_ms.avg && t.response_ms.avg <= t.response_ms.max);
    }
}
