//! Adversary-advantage formulas, volume estimators, and Monte Carlo
//! harnesses that check them.
//!
//! Empirical identity advantage comes in two flavours. `inverse_mean` is
//! `1 / E|I|` for the adversary's candidate set `I`, which is the quantity
//! the intersection closed form describes. `success` is `E[1 / |I|]`, the
//! probability that a uniform guess from `I` is the target.

use std::collections::BTreeSet;
use std::io::Write;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ident::{estimate_density, form_range, range_size_exponent, IdSpace, Identifier};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("estimator is degenerate when n = m")]
    Degenerate,
    #[error("observation window saturated: t = {window} <= ttl * k = {busy}")]
    Saturated { window: String, busy: String },
}

fn check_set(pool_size: usize, target: usize, m: usize) -> Result<(), AnalysisError> {
    if m == 0 || pool_size < m {
        return Err(AnalysisError::Parameter(format!("need 1 <= m <= n, got m={m} n={pool_size}")));
    }
    if target >= pool_size {
        return Err(AnalysisError::Parameter(format!("target {target} outside a pool of {pool_size}")));
    }
    Ok(())
}

/// The target plus `m - 1` members drawn uniformly without replacement from
/// the rest of the pool. Returned sorted.
pub fn random_set_build<R: Rng + ?Sized>(
    pool_size: usize,
    target: usize,
    m: usize,
    rng: &mut R,
) -> Result<Vec<usize>, AnalysisError> {
    check_set(pool_size, target, m)?;
    let mut set: Vec<usize> = sample(rng, pool_size - 1, m - 1)
        .into_iter()
        .map(|i| if i >= target { i + 1 } else { i })
        .collect();
    set.push(target);
    set.sort_unstable();
    Ok(set)
}

/// A set fixed by `(seed, target_key)`: members are keyed digests of
/// `(seed, key, counter)` reduced modulo the pool size, skipping repeats.
pub fn fixed_set_build(
    seed: u64,
    target_key: &[u8],
    target: usize,
    m: usize,
    pool_size: usize,
) -> Result<Vec<usize>, AnalysisError> {
    check_set(pool_size, target, m)?;
    let mut set = BTreeSet::from([target]);
    let mut counter = 0u64;
    while set.len() < m {
        let digest = Sha256::new()
            .chain_update(seed.to_be_bytes())
            .chain_update((target_key.len() as u32).to_be_bytes())
            .chain_update(target_key)
            .chain_update(counter.to_be_bytes())
            .finalize();
        counter += 1;
        let word = u64::from_be_bytes(digest[..8].try_into().unwrap());
        set.insert((word % pool_size as u64) as usize);
    }
    Ok(set.into_iter().collect())
}

/// Expected intersection size of `k` random sets for one target:
/// `(m - 1)^k / (n - 1)^(k - 1) + 1`.
pub fn expected_intersection(n: u64, m: u64, k: u32) -> f64 {
    let p = (m as f64 - 1.0) / (n as f64 - 1.0);
    (n as f64 - 1.0) * p.powi(k as i32) + 1.0
}

/// Identity advantage of the intersection attack after `k` observations.
pub fn intersection_attack_advantage(n: u64, m: u64, k: u32) -> f64 {
    assert!(n > m && m >= 1 && k >= 1, "need n > m >= 1 and k >= 1");
    1.0 / expected_intersection(n, m, k)
}

/// `(k, adv1)` for each `k` in `ks`.
pub fn intersection_curve(n: u64, m: u64, ks: impl IntoIterator<Item = u32>) -> Vec<(u32, f64)> {
    ks.into_iter().map(|k| (k, intersection_attack_advantage(n, m, k))).collect()
}

pub fn write_curve<W: Write>(mut out: W, n: u64, m: u64, curve: &[(u32, f64)]) -> std::io::Result<()> {
    writeln!(out, "{}", serde_json::json!({"format": "ppdns-curve", "n": n, "m": m, "fields": ["k", "adv1"]}))?;
    for (k, adv) in curve {
        writeln!(out, "{}", serde_json::json!({"k": k, "adv1": adv}))?;
    }
    Ok(())
}

/// Per-name query counts an adversary saw over an interval.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationLog {
    pub interval_seconds: u64,
    /// `counts[d]` for every name in the pool, zeros included.
    pub counts: Vec<u64>,
    pub m: u64,
}

impl ObservationLog {
    pub fn pool_size(&self) -> u64 {
        self.counts.len() as u64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// `q(d)(n - 1)/(n - m) - sigma(m - 1)/(m(n - m))` for every name, exactly.
pub fn random_set_volume_estimator(log: &ObservationLog) -> Result<Vec<BigRational>, AnalysisError> {
    let n = log.pool_size();
    let m = log.m;
    if m == 0 || n < m {
        return Err(AnalysisError::Parameter(format!("need 1 <= m <= n, got m={m} n={n}")));
    }
    if n == m {
        return Err(AnalysisError::Degenerate);
    }
    let int = |v: u64| BigInt::from(v);
    let scale = BigRational::new(int(n - 1), int(n - m));
    let offset = BigRational::new(int(log.total()) * int(m - 1), int(m) * int(n - m));
    Ok(log
        .counts
        .iter()
        .map(|&q| BigRational::from_integer(int(q)) * &scale - &offset)
        .collect())
}

pub fn volume_estimates_f64(log: &ObservationLog) -> Result<Vec<f64>, AnalysisError> {
    Ok(random_set_volume_estimator(log)?
        .iter()
        .map(|r| r.to_f64().unwrap_or(f64::NAN))
        .collect())
}

/// `(n - 1)(q_a - q_b)/(n - m)`.
pub fn relative_volume_estimator(q_a: u64, q_b: u64, n: u64, m: u64) -> Result<f64, AnalysisError> {
    if n <= m {
        return Err(AnalysisError::Degenerate);
    }
    Ok((n as f64 - 1.0) * (q_a as f64 - q_b as f64) / (n as f64 - m as f64))
}

/// `(lambda, t * lambda)` with `lambda = k / (t - ttl * k)`.
pub fn poisson_cache_estimator(k: u64, window: f64, ttl: f64) -> Result<(f64, f64), AnalysisError> {
    let busy = ttl * k as f64;
    if window <= busy {
        return Err(AnalysisError::Saturated {
            window: window.to_string(),
            busy: busy.to_string(),
        });
    }
    let lambda = k as f64 / (window - busy);
    Ok((lambda, window * lambda))
}

/// Aggregate volume over several observed resolvers `(k_l, ttl_l)`.
pub fn aggregate_cache_volume(observations: &[(u64, f64)], window: f64) -> Result<f64, AnalysisError> {
    observations
        .iter()
        .map(|&(k, ttl)| poisson_cache_estimator(k, window, ttl).map(|(_, v)| v))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvantageModel {
    RandomSet,
    FixedSet,
    Caching,
    PpdnsLocal,
    PpdnsAuthoritative,
}

impl std::str::FromStr for AdvantageModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random-set" => Ok(AdvantageModel::RandomSet),
            "fixed-set" => Ok(AdvantageModel::FixedSet),
            "caching" => Ok(AdvantageModel::Caching),
            "ppdns-local" | "ppdns" => Ok(AdvantageModel::PpdnsLocal),
            "ppdns-authoritative" => Ok(AdvantageModel::PpdnsAuthoritative),
            other => Err(format!("unknown model {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantageReport {
    pub model: AdvantageModel,
    pub adv1: Option<f64>,
    pub adv2: Option<f64>,
    pub adv3: Option<f64>,
}

/// Closed forms for the range scheme: `1/m`, `1/(V + 1)`, `1/(V_a + V_b + 1)`.
pub fn ppdns_advantages(m: u64, volume: u64, volume_a: u64, volume_b: u64) -> AdvantageReport {
    assert!(m >= 1, "m must be at least 1");
    AdvantageReport {
        model: AdvantageModel::PpdnsLocal,
        adv1: Some(1.0 / m as f64),
        adv2: Some(1.0 / (volume as f64 + 1.0)),
        adv3: Some(1.0 / (volume_a as f64 + volume_b as f64 + 1.0)),
    }
}

/// A Monte Carlo mean with its standard error and a normal 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub trials: usize,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len().max(1) as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let se = (var / n).sqrt();
        Estimate {
            value: mean,
            std_error: se,
            ci_low: mean - 1.96 * se,
            ci_high: mean + 1.96 * se,
            trials: samples.len(),
        }
    }

    /// `1 / mean` with a delta-method interval.
    pub fn reciprocal(&self) -> Self {
        let value = 1.0 / self.value;
        let se = self.std_error / (self.value * self.value);
        Estimate {
            value,
            std_error: se,
            ci_low: value - 1.96 * se,
            ci_high: value + 1.96 * se,
            trials: self.trials,
        }
    }

    pub fn relative_error(&self, reference: f64) -> f64 {
        ((self.value - reference) / reference).abs()
    }
}

/// Both readings of the identity advantage from one set of trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityAdvantage {
    pub mean_candidates: Estimate,
    pub inverse_mean: Estimate,
    pub success: Estimate,
}

impl IdentityAdvantage {
    fn from_sizes(sizes: &[usize]) -> Self {
        let as_f64: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
        let inv: Vec<f64> = sizes.iter().map(|&s| 1.0 / s as f64).collect();
        let mean_candidates = Estimate::from_samples(&as_f64);
        IdentityAdvantage {
            mean_candidates,
            inverse_mean: mean_candidates.reciprocal(),
            success: Estimate::from_samples(&inv),
        }
    }
}

/// Independent per-trial generators derived from a master seed.
fn trial_rng(seed: u64, stream: u64, trial: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(trial) << 20);
    ChaCha20Rng::seed_from_u64(rng.next_u64())
}

/// Intersection of `k` random sets for the same target, one size per trial.
pub fn simulate_intersection(n: usize, m: usize, k: u32, trials: usize, seed: u64) -> Result<IdentityAdvantage, AnalysisError> {
    check_set(n, 0, m)?;
    let sizes: Vec<usize> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, 1, trial as u64);
            let target = rng.random_range(0..n);
            let mut candidates: Vec<usize> = random_set_build(n, target, m, &mut rng).unwrap();
            for _ in 1..k {
                let next = random_set_build(n, target, m, &mut rng).unwrap();
                candidates.retain(|c| next.binary_search(c).is_ok());
            }
            candidates.len()
        })
        .collect();
    Ok(IdentityAdvantage::from_sizes(&sizes))
}

/// Intersection of `k` fixed sets: always the set itself.
pub fn simulate_fixed_intersection(n: usize, m: usize, k: u32, trials: usize, seed: u64) -> Result<IdentityAdvantage, AnalysisError> {
    check_set(n, 0, m)?;
    let sizes: Vec<usize> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, 2, trial as u64);
            let target = rng.random_range(0..n);
            let key = (target as u64).to_be_bytes();
            let mut candidates = fixed_set_build(seed, &key, target, m, n).unwrap();
            for _ in 1..k {
                let next = fixed_set_build(seed, &key, target, m, n).unwrap();
                candidates.retain(|c| next.binary_search(c).is_ok());
            }
            candidates.len()
        })
        .collect();
    Ok(IdentityAdvantage::from_sizes(&sizes))
}

/// Generates random-set traffic from known true volumes.
pub fn random_set_observations<R: Rng + ?Sized>(true_volumes: &[u64], m: usize, rng: &mut R) -> Result<ObservationLog, AnalysisError> {
    let n = true_volumes.len();
    let mut counts = vec![0u64; n];
    for (d, &eta) in true_volumes.iter().enumerate() {
        for _ in 0..eta {
            for member in random_set_build(n, d, m, rng)? {
                counts[member] += 1;
            }
        }
    }
    Ok(ObservationLog {
        interval_seconds: 0,
        counts,
        m: m as u64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeExperiment {
    pub sigma: u64,
    /// `sum |mean_hat - eta| / sum eta`, estimates averaged over trials.
    pub averaged_relative_error: f64,
    /// The same ratio for single trials, averaged.
    pub single_trial_relative_error: f64,
    /// Whether every trial satisfied `sum eta_hat = sigma / m` exactly.
    pub conservation_exact: bool,
    pub trials: usize,
}

pub fn volume_experiment(true_volumes: &[u64], m: usize, trials: usize, seed: u64) -> Result<VolumeExperiment, AnalysisError> {
    let n = true_volumes.len();
    let per_trial: Vec<(Vec<f64>, bool, u64)> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, 3, trial as u64);
            let log = random_set_observations(true_volumes, m, &mut rng)?;
            let exact = random_set_volume_estimator(&log)?;
            let sum: BigRational = exact.iter().fold(BigRational::zero(), |a, b| a + b);
            let conserved = sum == BigRational::new(BigInt::from(log.total()), BigInt::from(m as u64));
            Ok((exact.iter().map(|r| r.to_f64().unwrap()).collect(), conserved, log.total()))
        })
        .collect::<Result<_, AnalysisError>>()?;
    let total: f64 = true_volumes.iter().map(|&v| v as f64).sum();
    let mut mean = vec![0.0; n];
    let mut single = 0.0;
    for (est, _, _) in &per_trial {
        let mut err = 0.0;
        for d in 0..n {
            mean[d] += est[d] / trials as f64;
            err += (est[d] - true_volumes[d] as f64).abs();
        }
        single += err / total / trials as f64;
    }
    let averaged = mean
        .iter()
        .zip(true_volumes)
        .map(|(m, &t)| (m - t as f64).abs())
        .sum::<f64>()
        / total;
    Ok(VolumeExperiment {
        sigma: per_trial.first().map(|t| t.2).unwrap_or(0),
        averaged_relative_error: averaged,
        single_trial_relative_error: single,
        conservation_exact: per_trial.iter().all(|t| t.1),
        trials,
    })
}

/// Number of queries a TTL cache forwards upstream for Poisson arrivals.
pub fn simulate_cache_misses<R: Rng + ?Sized>(lambda: f64, ttl: f64, window: f64, rng: &mut R) -> u64 {
    let gaps = Exp::new(lambda).expect("positive rate");
    let mut t = 0.0;
    let mut expiry = f64::NEG_INFINITY;
    let mut misses = 0;
    loop {
        t += gaps.sample(rng);
        if t > window {
            return misses;
        }
        if t >= expiry {
            misses += 1;
            expiry = t + ttl;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheExperiment {
    pub lambda: f64,
    pub ttl: f64,
    pub window: f64,
    pub estimate: Estimate,
    /// Fraction of trials whose volume estimate lands within 10% of truth.
    pub within_tolerance: Estimate,
}

pub fn cache_experiment(lambda: f64, ttl: f64, window: f64, trials: usize, seed: u64) -> Result<CacheExperiment, AnalysisError> {
    if !(lambda > 0.0) || ttl < 0.0 || !(window > 0.0) || trials == 0 {
        return Err(AnalysisError::Parameter("need lambda > 0, ttl >= 0, window > 0, trials >= 1".into()));
    }
    let estimates: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, 4, trial as u64);
            let k = simulate_cache_misses(lambda, ttl, window, &mut rng);
            poisson_cache_estimator(k, window, ttl).map(|(l, _)| l)
        })
        .collect::<Result<_, _>>()?;
    let hits: Vec<f64> = estimates
        .iter()
        .map(|l| f64::from(((l - lambda) / lambda).abs() <= 0.10))
        .collect();
    Ok(CacheExperiment {
        lambda,
        ttl,
        window,
        estimate: Estimate::from_samples(&estimates),
        within_tolerance: Estimate::from_samples(&hits),
    })
}

/// A drop-and-retry attack on the range scheme. Each trial scatters `names`
/// identifiers over a `space_bits` space, picks a target, and lets the
/// adversary drop `k - 1` range queries; the retried ranges are intersected.
pub fn simulate_range_retry(
    names: usize,
    space_bits: u32,
    m: u64,
    k: u32,
    trials: usize,
    seed: u64,
) -> Result<IdentityAdvantage, AnalysisError> {
    let space = IdSpace::new(space_bits).map_err(|e| AnalysisError::Parameter(e.to_string()))?;
    if names == 0 || space_bits > 64 || (names as u128) > (1u128 << space_bits) {
        return Err(AnalysisError::Parameter("names must fit in a space of at most 64 bits".into()));
    }
    let sizes: Vec<usize> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, 5, trial as u64);
            let mut ids = BTreeSet::new();
            let mask = if space_bits == 64 { u64::MAX } else { (1u64 << space_bits) - 1 };
            while ids.len() < names {
                ids.insert(rng.next_u64() & mask);
            }
            let ids: Vec<u64> = ids.into_iter().collect();
            let rho = estimate_density(names as u64, &space.size()).unwrap();
            let s = range_size_exponent(m, &rho).min(space_bits);
            let target = ids[rng.random_range(0..ids.len())];
            let mut candidates: Option<Vec<u64>> = None;
            for _ in 0..k {
                let range = form_range(Identifier::from(target), s, space).unwrap();
                let lo = range.start().low_u64();
                let hi = range.end().low_u64();
                let seen: Vec<u64> = ids[ids.partition_point(|&x| x < lo)..ids.partition_point(|&x| x <= hi)].to_vec();
                candidates = Some(match candidates {
                    None => seen,
                    Some(prev) => prev.into_iter().filter(|c| seen.binary_search(c).is_ok()).collect(),
                });
            }
            candidates.unwrap().len()
        })
        .collect();
    Ok(IdentityAdvantage::from_sizes(&sizes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackParams {
    pub n: usize,
    pub m: usize,
    pub k: u32,
    pub trials: usize,
    pub space_bits: u32,
    pub lambda: f64,
    pub ttl: f64,
    pub window: f64,
}

impl Default for AttackParams {
    fn default() -> Self {
        AttackParams {
            n: 1000,
            m: 50,
            k: 1,
            trials: 2000,
            space_bits: 24,
            lambda: 0.5,
            ttl: 60.0,
            window: 1e5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalReport {
    pub model: AdvantageModel,
    pub analytic: AdvantageReport,
    pub identity: Option<IdentityAdvantage>,
    pub volume: Option<Estimate>,
}

/// Simulates the adversary's view under `model` and reports the empirical
/// advantages beside the closed forms.
pub fn run_attack_experiment(model: AdvantageModel, params: &AttackParams, seed: u64) -> Result<EmpiricalReport, AnalysisError> {
    let (n, m, k) = (params.n, params.m, params.k);
    let none = |model| AdvantageReport {
        model,
        adv1: None,
        adv2: None,
        adv3: None,
    };
    match model {
        AdvantageModel::RandomSet => {
            let identity = simulate_intersection(n, m, k, params.trials, seed)?;
            Ok(EmpiricalReport {
                model,
                analytic: AdvantageReport {
                    adv1: (n > m).then(|| intersection_attack_advantage(n as u64, m as u64, k)),
                    ..none(model)
                },
                identity: Some(identity),
                volume: None,
            })
        }
        AdvantageModel::FixedSet => Ok(EmpiricalReport {
            model,
            analytic: AdvantageReport {
                adv1: Some(1.0 / m as f64),
                ..none(model)
            },
            identity: Some(simulate_fixed_intersection(n, m, k, params.trials, seed)?),
            volume: None,
        }),
        AdvantageModel::Caching => {
            let experiment = cache_experiment(params.lambda, params.ttl, params.window, params.trials, seed)?;
            Ok(EmpiricalReport {
                model,
                analytic: none(model),
                identity: None,
                volume: Some(experiment.within_tolerance),
            })
        }
        AdvantageModel::PpdnsLocal | AdvantageModel::PpdnsAuthoritative => {
            let identity = simulate_range_retry(n, params.space_bits, m as u64, k, params.trials, seed)?;
            Ok(EmpiricalReport {
                model,
                analytic: AdvantageReport {
                    model,
                    ..ppdns_advantages(m as u64, 0, 0, 0)
                },
                identity: Some(identity),
                volume: None,
            })
        }
    }
}

/// Exact `1 / (V + 1)` as a rational, for reports that must not round.
pub fn volume_advantage_exact(volume: &BigUint) -> BigRational {
    BigRational::new(BigInt::from(1), BigInt::from(volume + 1u32))
}
