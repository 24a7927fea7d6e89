use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::sync::Arc;
use std::time::Duration;

use clap::Args;
use num_bigint::BigUint;
use ppdns_core::analysis::{
    cache_experiment, intersection_attack_advantage, ppdns_advantages, simulate_fixed_intersection,
    simulate_intersection, simulate_range_retry, AdvantageModel,
};
use ppdns_core::overlay::{run_workload, trace_events, write_metrics, ClientParams, Popularity, SyntheticWorkload};
use ppdns_core::pir::{chunk_count, chunked_retrieve, communication_cost, query_framing_bits, response_framing_bits};
use ppdns_core::store::{read_trace, trace_ttls, IngestOptions, TraceRecord};
use ppdns_core::{
    estimate_density, verify_signatures, ClientConfig, NameStore, QueryGenerator, RecordSigner, Resolver, Ring,
    RingConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::CliError;

const SEED_RING: u64 = 1;
const SEED_CLIENT: u64 = 2;
const SEED_WORKLOAD: u64 = 3;
const SEED_PIR: u64 = 4;
const SEED_ANALYSIS: u64 = 5;

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn open_input(path: &std::path::Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// JSON lines to `--out` or standard output, starting with a header record.
struct Report {
    out: Box<dyn Write>,
}

impl Report {
    fn open(config: &RunConfig, format: &str, fields: &[&str]) -> Result<Self, CliError> {
        let out: Box<dyn Write> = match &config.out {
            Some(path) => Box::new(BufWriter::new(
                File::create(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
            )),
            None => Box::new(BufWriter::new(std::io::stdout())),
        };
        let mut report = Report { out };
        report.header(format, fields)?;
        Ok(report)
    }

    fn raw(config: &RunConfig) -> Result<Box<dyn Write>, CliError> {
        Ok(match &config.out {
            Some(path) => Box::new(BufWriter::new(
                File::create(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
            )),
            None => Box::new(BufWriter::new(std::io::stdout())),
        })
    }

    fn header(&mut self, format: &str, fields: &[&str]) -> Result<(), CliError> {
        self.line(&json!({"format": format, "version": 1, "fields": fields}))
    }

    fn line(&mut self, value: &Value) -> Result<(), CliError> {
        writeln!(self.out, "{value}").map_err(runtime)
    }

    fn finish(mut self) -> Result<(), CliError> {
        self.out.flush().map_err(runtime)
    }
}

fn load_trace(config: &RunConfig) -> Result<Option<Vec<TraceRecord>>, CliError> {
    config
        .trace
        .as_deref()
        .map(|path| read_trace(open_input(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display()))))
        .transpose()
}

fn ingest(reader: impl std::io::BufRead, trace: Option<&[TraceRecord]>) -> Result<NameStore, CliError> {
    let options = IngestOptions {
        ttl_overrides: trace.map(trace_ttls).unwrap_or_default(),
        ..IngestOptions::default()
    };
    let (store, report) = NameStore::ingest_names(reader, &options).map_err(runtime)?;
    if report.distinct == 0 {
        return Err(CliError::Usage("no valid names in the input".into()));
    }
    Ok(store)
}

/// The snapshot if given, else the names file, else the trace's names.
fn load_store(config: &RunConfig, trace: Option<&[TraceRecord]>) -> Result<NameStore, CliError> {
    if let Some(path) = &config.snapshot {
        return NameStore::read_snapshot(open_input(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())));
    }
    if let Some(path) = &config.names {
        return ingest(open_input(path)?, trace);
    }
    if let Some(records) = trace {
        let names: String = records.iter().map(|r| format!("{}\n", r.name)).collect();
        return ingest(names.as_bytes(), trace);
    }
    Err(CliError::Usage("give --snapshot, --names or --trace".into()))
}

fn build_ring(config: &RunConfig, store: NameStore, cache_capacity: Option<usize>) -> Result<Ring, CliError> {
    let mut ring_config = RingConfig::new(config.nodes, config.derived_seed(SEED_RING));
    ring_config.cache_capacity = cache_capacity;
    Ring::build(&ring_config, Arc::new(store)).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn build(config: &RunConfig) -> Result<(), CliError> {
    let names = config.names.as_deref().ok_or_else(|| CliError::Usage("build needs --names".into()))?;
    let snapshot = config.out.as_deref().ok_or_else(|| CliError::Usage("build needs --out for the snapshot".into()))?;
    let trace = load_trace(config)?;
    let options = IngestOptions {
        ttl_overrides: trace.as_deref().map(trace_ttls).unwrap_or_default(),
        ..IngestOptions::default()
    };
    let (store, report) = NameStore::ingest_names(open_input(names)?, &options).map_err(runtime)?;
    if report.distinct == 0 {
        return Err(CliError::Usage(format!("{}: no valid names", names.display())));
    }
    let file = File::create(snapshot).map_err(|e| CliError::Usage(format!("{}: {e}", snapshot.display())))?;
    let mut writer = BufWriter::new(file);
    store.write_snapshot(&mut writer).map_err(runtime)?;
    writer.flush().map_err(runtime)?;

    let density = estimate_density(store.len() as u64, &store.space().size()).map_err(runtime)?;
    eprintln!(
        "stored {} names ({} duplicates, {} skipped); density 2^{:.3}",
        report.distinct,
        report.duplicates,
        report.skipped,
        density.log2()
    );
    let mut out = std::io::stdout().lock();
    let header = json!({"format": "ppdns-build", "version": 1,
        "fields": ["snapshot", "lines", "distinct", "duplicates", "skipped", "density", "density_log2"]});
    let record = json!({
        "snapshot": snapshot.display().to_string(),
        "lines": report.lines,
        "distinct": report.distinct,
        "duplicates": report.duplicates,
        "skipped": report.skipped,
        "density": density.to_string(),
        "density_log2": density.log2(),
    });
    writeln!(out, "{header}\n{record}").map_err(runtime)
}

#[derive(Args, Debug)]
pub struct ResolveArgs {
    pub name: String,
    /// Local node index; drawn from the seed when absent.
    #[arg(long)]
    pub local: Option<usize>,
}

fn render_rdata(rtype: ppdns_core::RecordType, data: &[u8]) -> String {
    match (rtype, data) {
        (ppdns_core::RecordType::A, [a, b, c, d]) => format!("{a}.{b}.{c}.{d}"),
        _ => data.iter().map(|b| format!("{b:02x}")).collect(),
    }
}

pub fn resolve(config: &RunConfig, args: &ResolveArgs) -> Result<(), CliError> {
    let trace = load_trace(config)?;
    let store = load_store(config, trace.as_deref())?;
    let mut ring = build_ring(config, store, None)?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.derived_seed(SEED_CLIENT));
    let local = match args.local {
        Some(i) if i < ring.len() => i,
        Some(i) => return Err(CliError::Usage(format!("--local {i} but the ring has {} nodes", ring.len()))),
        None => rng.random_range(0..ring.len()),
    };
    let client = ClientConfig {
        m: config.m,
        use_pir: config.pir,
        n_pir: config.npir,
        block_bits: config.block_bits,
        modulus_bits: config.modulus_bits,
        ..ClientConfig::default()
    };
    let mut resolver = Resolver::new(client, local, rng.random()).map_err(|e| CliError::Usage(e.to_string()))?;
    resolver.bootstrap_density(&ring).map_err(runtime)?;
    let result = resolver.resolve(&args.name, &mut ring, 0.0).map_err(|e| match e {
        ppdns_core::ResolveError::Id(e) => CliError::Usage(e.to_string()),
        other => runtime(other),
    })?;

    let signer = RecordSigner::default();
    let records: Vec<Value> = result
        .rrset
        .iter()
        .flat_map(|set| set.records())
        .map(|r| json!({"name": r.name, "type": format!("{:?}", r.rtype), "ttl": r.ttl, "data": render_rdata(r.rtype, &r.data)}))
        .collect();
    let verdict = result.rrset.as_ref().map(|set| verify_signatures(set, &signer));
    let status = if result.found() { "found" } else { "not-found" };

    match &result.rrset {
        Some(set) => {
            for r in set.records() {
                eprintln!("{}\t{}\tIN\t{:?}\t{}", r.name, r.ttl, r.rtype, render_rdata(r.rtype, &r.data));
            }
        }
        None => eprintln!("{}: not found", result.name),
    }
    eprintln!(
        "range {} (2^{} ids, {} entries), {} split(s), {} message(s), {} bytes up, {} bytes down{}",
        result.range,
        result.range.size_exponent(),
        result.entries_in_range,
        result.splits,
        result.messages,
        result.bytes_up,
        result.bytes_down,
        if result.pir_used { ", via cPIR" } else { "" }
    );

    let mut report = Report::open(
        config,
        "ppdns-resolve",
        &[
            "status", "name", "identifier", "local_node", "range_start", "range_end", "size_exponent", "entries_in_range",
            "splits", "messages", "bytes_up", "bytes_down", "cache_hit", "pir_used", "pir_block", "pir_fallback",
            "signature", "records",
        ],
    )?;
    report.line(&json!({
        "status": status,
        "name": result.name,
        "identifier": result.target.to_hex(),
        "local_node": local,
        "range_start": result.range.start().to_hex(),
        "range_end": result.range.end().to_hex(),
        "size_exponent": result.range.size_exponent(),
        "entries_in_range": result.entries_in_range,
        "splits": result.splits,
        "messages": result.messages,
        "bytes_up": result.bytes_up,
        "bytes_down": result.bytes_down,
        "cache_hit": result.cache_hit,
        "pir_used": result.pir_used,
        "pir_block": result.pir_block,
        "pir_fallback": result.pir_fallback,
        "signature": verdict,
        "records": records,
    }))?;
    report.finish()
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Queries per second across all clients (synthetic workload).
    #[arg(long, default_value_t = 20.0)]
    pub rate: f64,
    /// Simulated seconds (synthetic workload).
    #[arg(long, default_value_t = 3600.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 200)]
    pub clients: usize,
    /// `uniform` or `zipf:THETA`.
    #[arg(long, default_value = "zipf:1.0")]
    pub popularity: String,
    /// Distinct local nodes the clients attach to.
    #[arg(long = "local-nodes", default_value_t = 8)]
    pub local_nodes: usize,
    /// Per-node cache bound; unbounded when absent.
    #[arg(long = "cache-capacity")]
    pub cache_capacity: Option<usize>,
}

fn parse_popularity(s: &str) -> Result<Popularity, CliError> {
    match s.split_once(':') {
        None if s == "uniform" => Ok(Popularity::Uniform),
        Some(("zipf", theta)) => theta
            .parse::<f64>()
            .ok()
            .filter(|t| *t > 0.0)
            .map(Popularity::Zipf)
            .ok_or_else(|| CliError::Usage(format!("bad zipf exponent in {s:?}"))),
        _ => Err(CliError::Usage(format!("--popularity {s:?}: expected uniform or zipf:THETA"))),
    }
}

pub fn simulate(config: &RunConfig, args: &SimulateArgs) -> Result<(), CliError> {
    let trace = load_trace(config)?;
    let store = load_store(config, trace.as_deref())?;
    let events = match &trace {
        Some(records) => trace_events(records, args.clients, config.derived_seed(SEED_WORKLOAD)),
        None => {
            let mut names: Vec<String> = store.entries().map(|e| e.name().to_string()).collect();
            let mut rng = ChaCha20Rng::seed_from_u64(config.derived_seed(SEED_WORKLOAD));
            rand::seq::SliceRandom::shuffle(names.as_mut_slice(), &mut rng);
            SyntheticWorkload {
                popularity: parse_popularity(&args.popularity)?,
                rate: args.rate,
                duration: args.duration,
                clients: args.clients,
                seed: rng.random(),
            }
            .events(&names)
            .map_err(|e| CliError::Usage(e.to_string()))?
        }
    };
    let store = Arc::new(store);
    let mut runs = Vec::new();
    for mode in &config.modes {
        let mut ring_config = RingConfig::new(config.nodes, config.derived_seed(SEED_RING));
        ring_config.cache_capacity = args.cache_capacity;
        let mut ring = Ring::build(&ring_config, store.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
        let params = ClientParams {
            mode: *mode,
            local_nodes: args.local_nodes,
            seed: config.derived_seed(SEED_CLIENT),
        };
        let metrics = run_workload(&mut ring, &events, &params).map_err(runtime)?;
        eprintln!(
            "{}: {} queries, hit ratio {:.4}, {:.2} messages/query, split ratio {:.4}",
            metrics.mode,
            metrics.queries,
            metrics.hit_ratio(),
            metrics.messages_sent as f64 / metrics.queries.max(1) as f64,
            metrics.split_ratio()
        );
        runs.push(metrics);
    }
    let mut out = Report::raw(config)?;
    write_metrics(&runs, &mut out).map_err(runtime)?;
    out.flush().map_err(runtime)
}

#[derive(Args, Debug)]
pub struct PirBenchArgs {
    #[arg(long, default_value_t = 3)]
    pub trials: usize,
    /// Keep the safe prime across trials.
    #[arg(long = "reuse-safe-prime")]
    pub reuse_safe_prime: bool,
}

fn millis(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub fn pir_bench(config: &RunConfig, args: &PirBenchArgs) -> Result<(), CliError> {
    if args.trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let (t, l, b) = (config.npir, config.block_bits, config.modulus_bits);
    let cost = communication_cost(t, l, b);
    let chunks = chunk_count(l, b);
    let mut rng = ChaCha20Rng::seed_from_u64(config.derived_seed(SEED_PIR));
    let blocks: Vec<BigUint> = (0..t)
        .map(|_| {
            let bytes: Vec<u8> = (0..l.div_ceil(8)).map(|_| rng.random()).collect();
            BigUint::from_bytes_be(&bytes) >> (l.div_ceil(8) * 8 - l)
        })
        .collect();
    let mut generator = QueryGenerator::new(b).reuse_safe_prime(args.reuse_safe_prime);
    let mut report = Report::open(
        config,
        "ppdns-pir-bench",
        &[
            "trial", "t", "l", "modulus_bits", "target", "chunks", "upstream_bits", "downstream_bits", "trivial_bits",
            "query_bytes", "response_bytes", "query_framing_bits", "response_framing_bits", "query_ms", "crt_ms",
            "exponentiation_ms", "pohlig_hellman_ms", "correct",
        ],
    )?;
    for trial in 0..args.trials {
        let target = rng.random_range(1..=t as usize);
        let (value, stats) = chunked_retrieve(&blocks, l, target, &mut generator, &mut rng).map_err(runtime)?;
        let correct = value == blocks[target - 1];
        eprintln!(
            "trial {trial}: query {:.1} ms, crt {:.1} ms, exp {:.1} ms, recover {:.1} ms",
            millis(stats.query_time),
            millis(stats.encode_time),
            millis(stats.respond_time),
            millis(stats.recover_time)
        );
        report.line(&json!({
            "trial": trial,
            "t": t,
            "l": l,
            "modulus_bits": b,
            "target": target,
            "chunks": chunks,
            "upstream_bits": cost.upstream_bits,
            "downstream_bits": cost.downstream_bits,
            "trivial_bits": cost.trivial_bits,
            "query_bytes": stats.query_bytes,
            "response_bytes": stats.response_bytes,
            "query_framing_bits": query_framing_bits(t),
            "response_framing_bits": response_framing_bits(chunks),
            "query_ms": millis(stats.query_time),
            "crt_ms": millis(stats.encode_time),
            "exponentiation_ms": millis(stats.respond_time),
            "pohlig_hellman_ms": millis(stats.recover_time),
            "correct": correct,
        }))?;
        if !correct {
            return Err(CliError::Runtime(format!("trial {trial} recovered the wrong block")));
        }
    }
    report.finish()
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// random-set, fixed-set, caching, ppdns-local or ppdns-authoritative.
    #[arg(long)]
    pub model: AdvantageModel,
    /// Candidate pool size, or names in the space for the range models.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Largest repetition count; the curve covers 1..=k.
    #[arg(long, default_value_t = 1)]
    pub k: u32,
    /// Monte Carlo trials per point; 0 reports closed forms only.
    #[arg(long, default_value_t = 0)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub volume: u64,
    #[arg(long = "volume-a", default_value_t = 0)]
    pub volume_a: u64,
    #[arg(long = "volume-b", default_value_t = 0)]
    pub volume_b: u64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, default_value_t = 60.0)]
    pub ttl: f64,
    #[arg(long, default_value_t = 1e5)]
    pub window: f64,
    #[arg(long = "space-bits", default_value_t = 24)]
    pub space_bits: u32,
}

pub fn analyze(config: &RunConfig, args: &AnalyzeArgs) -> Result<(), CliError> {
    let seed = config.derived_seed(SEED_ANALYSIS);
    let m = config.m;
    let usage = |e: ppdns_core::analysis::AnalysisError| CliError::Usage(e.to_string());
    match args.model {
        AdvantageModel::RandomSet | AdvantageModel::FixedSet => {
            if args.k == 0 || m == 0 || (m as usize) > args.n {
                return Err(CliError::Usage("need k >= 1 and 1 <= m <= n".into()));
            }
            let mut report = Report::open(config, "ppdns-advantage-curve", &["model", "n", "m", "k", "adv1", "adv1_empirical"])?;
            for k in 1..=args.k {
                let analytic = match args.model {
                    AdvantageModel::RandomSet if (m as usize) < args.n => intersection_attack_advantage(args.n as u64, m, k),
                    AdvantageModel::RandomSet => 1.0 / m as f64,
                    _ => 1.0 / m as f64,
                };
                let empirical = if args.trials > 0 {
                    let sim = match args.model {
                        AdvantageModel::RandomSet => simulate_intersection(args.n, m as usize, k, args.trials, seed),
                        _ => simulate_fixed_intersection(args.n, m as usize, k, args.trials, seed),
                    }
                    .map_err(usage)?;
                    Some(sim.inverse_mean.value)
                } else {
                    None
                };
                report.line(&json!({"model": args.model, "n": args.n, "m": m, "k": k, "adv1": analytic, "adv1_empirical": empirical}))?;
            }
            report.finish()
        }
        AdvantageModel::Caching => {
            let trials = args.trials.max(1);
            let experiment = cache_experiment(args.lambda, args.ttl, args.window, trials, seed).map_err(usage)?;
            let mut report = Report::open(
                config,
                "ppdns-advantage-caching",
                &["model", "lambda", "ttl", "window", "lambda_hat", "std_error", "adv2_empirical", "trials"],
            )?;
            report.line(&json!({
                "model": args.model,
                "lambda": args.lambda,
                "ttl": args.ttl,
                "window": args.window,
                "lambda_hat": experiment.estimate.value,
                "std_error": experiment.estimate.std_error,
                "adv2_empirical": experiment.within_tolerance.value,
                "trials": trials,
            }))?;
            report.finish()
        }
        AdvantageModel::PpdnsLocal | AdvantageModel::PpdnsAuthoritative => {
            let analytic = ppdns_advantages(m, args.volume, args.volume_a, args.volume_b);
            let warning = (args.volume == 0).then_some("zero volume: adv2 = 1, the adversary learns the query count exactly");
            if let Some(w) = warning {
                eprintln!("warning: {w}");
            }
            let empirical = if args.trials > 0 {
                let sim = simulate_range_retry(args.n, args.space_bits, m, args.k.max(1), args.trials, seed).map_err(usage)?;
                Some(sim.success.value)
            } else {
                None
            };
            let mut report = Report::open(
                config,
                "ppdns-advantage",
                &["model", "m", "volume", "volume_a", "volume_b", "adv1", "adv2", "adv3", "adv1_empirical", "warning"],
            )?;
            report.line(&json!({
                "model": args.model,
                "m": m,
                "volume": args.volume,
                "volume_a": args.volume_a,
                "volume_b": args.volume_b,
                "adv1": analytic.adv1,
                "adv2": analytic.adv2,
                "adv3": analytic.adv3,
                "adv1_empirical": empirical,
                "warning": warning,
            }))?;
            report.finish()
        }
    }
}
