//! Deterministic in-memory round simulator: population layout, log-normal
//! load generation, fault injection, and ground-truth bookkeeping.
//!
//! Every random draw comes from a stream derived by hashing the master
//! seed with a label and indices, so a scenario replays byte-identically
//! regardless of evaluation order or thread count.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

use crate::entities::{self, kic_setup, MeterReport, OpCounters, Setup};
use crate::{Error, Result};

/// Which meters die in a round.
#[derive(Debug, Clone, PartialEq)]
pub enum FaultModel {
    None,
    /// Exactly this many distinct meters, drawn uniformly.
    FixedCount(usize),
    /// Each group independently loses one uniformly chosen member with
    /// this probability.
    PerGroupProbability(f64),
}

/// Full description of a simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n_meters: usize,
    pub d: usize,
    pub rounds: u64,
    pub fault_model: FaultModel,
    pub mu: f64,
    pub sigma: f64,
    /// Multiplier turning a log-normal sample into integer watt-hours.
    pub scale: f64,
    pub seed: u64,
    pub modulus_bits: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_meters: 100,
            d: 10,
            rounds: 1,
            fault_model: FaultModel::None,
            mu: 0.0,
            sigma: 0.5,
            scale: 500.0,
            seed: 0,
            modulus_bits: 512,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::Config("d must be at least 2".into()));
        }
        if self.n_meters == 0 || self.n_meters % self.d != 0 {
            return Err(Error::Config(format!(
                "group size {} must divide the population {}",
                self.d, self.n_meters
            )));
        }
        if self.sigma < 0.0 {
            return Err(Error::Config("sigma must be nonnegative".into()));
        }
        if !(self.scale > 0.0) {
            return Err(Error::Config("scale must be positive".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be positive".into()));
        }
        match self.fault_model {
            FaultModel::FixedCount(m) if m > self.n_meters => {
                Err(Error::Config("fault count exceeds population".into()))
            }
            FaultModel::PerGroupProbability(r) if !(0.0..=1.0).contains(&r) => {
                Err(Error::Config("fault rate must lie in [0, 1]".into()))
            }
            _ => Ok(()),
        }
    }

    /// Parses the flat key=value scenario format. Unknown keys are errors;
    /// missing keys fall back to the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = ScenarioConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::Config(format!("line {}: bad {what}: {value}", lineno + 1));
            match key {
                "n" => config.n_meters = value.parse().map_err(|_| bad("n"))?,
                "d" => config.d = value.parse().map_err(|_| bad("d"))?,
                "rounds" => config.rounds = value.parse().map_err(|_| bad("rounds"))?,
                "mu" => config.mu = value.parse().map_err(|_| bad("mu"))?,
                "sigma" => config.sigma = value.parse().map_err(|_| bad("sigma"))?,
                "scale" => config.scale = value.parse().map_err(|_| bad("scale"))?,
                "seed" => config.seed = value.parse().map_err(|_| bad("seed"))?,
                "bits" => config.modulus_bits = value.parse().map_err(|_| bad("bits"))?,
                "fault_model" => {
                    config.fault_model = if value == "none" {
                        FaultModel::None
                    } else if let Some(m) = value.strip_prefix("fixed:") {
                        FaultModel::FixedCount(m.parse().map_err(|_| bad("fault count"))?)
                    } else if let Some(r) = value.strip_prefix("prob:") {
                        FaultModel::PerGroupProbability(r.parse().map_err(|_| bad("fault rate"))?)
                    } else {
                        return Err(bad("fault_model (none | fixed:M | prob:RATE)"));
                    };
                }
                other => {
                    return Err(Error::Config(format!("line {}: unknown key {other}", lineno + 1)))
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn num_groups(&self) -> usize {
        self.n_meters / self.d
    }
}

/// Stable stream derivation: ChaCha seeded with H(seed ∥ label ∥ a ∥ b).
pub fn derive_rng(seed: u64, label: &str, a: u64, b: u64) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_be_bytes());
    hasher.update(label.as_bytes());
    hasher.update(a.to_be_bytes());
    hasher.update(b.to_be_bytes());
    ChaCha12Rng::from_seed(hasher.finalize().into())
}

/// One log-normal draw: exp(μ + σ·z) with z standard normal (Box–Muller).
pub fn lognormal_sample(mu: f64, sigma: f64, rng: &mut impl Rng) -> f64 {
    let u1: f64 = loop {
        let u = rng.gen::<f64>();
        if u > 0.0 {
            break u;
        }
    };
    let u2: f64 = rng.gen();
    let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    (mu + sigma * z).exp()
}

/// E(x) = e^{μ + σ²/2}
pub fn lognormal_mean(mu: f64, sigma: f64) -> f64 {
    (mu + sigma * sigma / 2.0).exp()
}

/// Quantizes a sample to integer watt-hours, clamped to the reading cap.
pub fn quantize(sample: f64, scale: f64, cap: &BigUint) -> u64 {
    let raw = (sample * scale).round().max(0.0) as u64;
    match cap.to_u64() {
        Some(cap) => raw.min(cap),
        None => raw,
    }
}

/// Draws the set of dead meters for one round.
pub fn inject_faults(
    model: &FaultModel,
    n_meters: usize,
    d: usize,
    rng: &mut impl Rng,
) -> BTreeSet<usize> {
    match model {
        FaultModel::None => BTreeSet::new(),
        FaultModel::FixedCount(m) => {
            let mut dead = BTreeSet::new();
            while dead.len() < *m {
                dead.insert(rng.gen_range(0..n_meters));
            }
            dead
        }
        FaultModel::PerGroupProbability(rate) => {
            let mut dead = BTreeSet::new();
            for group in 0..n_meters / d {
                if rng.gen::<f64>() < *rate {
                    dead.insert(group * d + rng.gen_range(0..d));
                }
            }
            dead
        }
    }
}

/// One substitution as seen by the simulator, with ground-truth identities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubstitutionEvent {
    pub group: u32,
    pub missing_meter: usize,
    pub donor_meter: usize,
    pub m_bar: BigUint,
    /// True when the donor's adjusted contribution wrapped mod n
    /// (donor reading below m̄).
    pub wrapped: bool,
}

/// Per-round outcome with ground truth.
#[derive(Debug, Clone)]
pub struct RoundResult {
    pub t: u64,
    /// Σ of all meters' actual readings, including dead ones.
    pub true_sum: BigUint,
    /// Σ of the recovered group sums.
    pub recovered_sum: BigUint,
    /// (S − S') / S; zero when S = 0.
    pub rel_error: f64,
    pub readings: Vec<u64>,
    pub faults: Vec<usize>,
    pub substitutions: Vec<SubstitutionEvent>,
    pub failed_groups: Vec<u32>,
    pub group_sums: Vec<(u32, BigUint)>,
}

impl RoundResult {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.t,
            self.true_sum,
            self.recovered_sum,
            self.rel_error,
            self.faults.len(),
            self.substitutions.len(),
            self.failed_groups.len()
        )
    }
}

pub const RESULT_CSV_HEADER: &str = "round,S,S_prime,rel_error,faults,substitutions,failed_groups";

/// A completed scenario: per-round results plus the DA's operation counters.
#[derive(Debug)]
pub struct ScenarioRun {
    pub results: Vec<RoundResult>,
    pub counters: OpCounters,
    /// The deployment's Paillier modulus, for exact mod-n cross-checks.
    pub modulus: BigUint,
}

impl ScenarioRun {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(RESULT_CSV_HEADER);
        out.push('\n');
        for r in &self.results {
            let _ = writeln!(out, "{}", r.csv_row());
        }
        out
    }
}

fn signed_rel_error(true_sum: &BigUint, recovered: &BigUint) -> f64 {
    if true_sum.is_zero() {
        return 0.0;
    }
    let s = true_sum.to_f64().unwrap_or(f64::MAX);
    let sp = recovered.to_f64().unwrap_or(f64::MAX);
    (s - sp) / s
}

/// Runs a full scenario: setup, then per round reading generation, fault
/// injection, meter encryption, DA processing, and CC collection.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioRun> {
    config.validate()?;
    let num_groups = config.num_groups();
    let mut setup_rng = derive_rng(config.seed, "setup", 0, 0);
    let mut setup: Setup = kic_setup(config.modulus_bits, config.d, num_groups, &mut setup_rng);

    let mut results = Vec::with_capacity(config.rounds as usize);
    for t in 0..config.rounds {
        // per-meter streams: reading first, then the encryption randomizer
        let readings: Vec<u64> = (0..config.n_meters)
            .map(|i| {
                let mut rng = derive_rng(config.seed, "meter", t, i as u64);
                quantize(
                    lognormal_sample(config.mu, config.sigma, &mut rng),
                    config.scale,
                    &setup.params.reading_cap,
                )
            })
            .collect();

        let mut fault_rng = derive_rng(config.seed, "faults", t, 0);
        let dead = inject_faults(&config.fault_model, config.n_meters, config.d, &mut fault_rng);

        let groups: Vec<Vec<MeterReport>> = (0..num_groups)
            .map(|g| {
                (0..config.d)
                    .filter(|i| !dead.contains(&(g * config.d + i)))
                    .map(|i| {
                        let meter = g * config.d + i;
                        let mut rng = derive_rng(config.seed, "meter", t, meter as u64);
                        // skip the reading draw to stay aligned with the stream above
                        let _ = lognormal_sample(config.mu, config.sigma, &mut rng);
                        entities::meter_report(
                            &setup.keys[g][i],
                            &setup.params,
                            &BigUint::from(readings[meter]),
                            t,
                            &mut rng,
                        )
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;

        let outcome = setup.aggregator.process_round(&groups, t);
        let (recovered_sum, group_sums) = entities::cc_collect(&outcome.aggregates);
        setup.aggregator.finish_round(&recovered_sum);

        let true_sum: BigUint = readings.iter().map(|m| BigUint::from(*m)).sum();
        let substitutions = outcome
            .aggregates
            .iter()
            .flat_map(|agg| {
                agg.substitutions.iter().map(|s| SubstitutionEvent {
                    group: agg.group,
                    missing_meter: agg.group as usize * config.d + s.missing_position,
                    donor_meter: s.donor_group as usize * config.d + s.missing_position,
                    m_bar: s.m_bar.clone(),
                    wrapped: BigUint::from(
                        readings[s.donor_group as usize * config.d + s.missing_position],
                    ) < s.m_bar,
                })
            })
            .collect();

        results.push(RoundResult {
            t,
            rel_error: signed_rel_error(&true_sum, &recovered_sum),
            true_sum,
            recovered_sum,
            readings,
            faults: dead.into_iter().collect(),
            substitutions,
            failed_groups: outcome.failures.iter().map(|(g, _)| *g).collect(),
            group_sums,
        });
    }
    Ok(ScenarioRun {
        results,
        counters: setup.aggregator.counters.clone(),
        modulus: setup.params.n.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lognormal_degenerate_cases() {
        let mut rng = derive_rng(1, "t", 0, 0);
        assert_eq!(lognormal_sample(0.0, 0.0, &mut rng), 1.0);
        assert_eq!(lognormal_mean(0.0, 0.0), 1.0);
        assert!((lognormal_mean(0.0, 1.0) - 0.5f64.exp()).abs() < 1e-12);
        assert!((lognormal_mean(1.0, 0.0) - std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn lognormal_monte_carlo_mean() {
        let mut rng = derive_rng(7, "mc", 0, 0);
        let trials = 1_000_000;
        let sum: f64 = (0..trials).map(|_| lognormal_sample(0.0, 0.5, &mut rng)).sum();
        let mean = sum / trials as f64;
        let want = lognormal_mean(0.0, 0.5); // e^{0.125} ≈ 1.1331
        assert!((mean - want).abs() / want < 0.01, "mean {mean} vs {want}");
    }

    #[test]
    fn lognormal_deterministic_replay() {
        let a: Vec<f64> = {
            let mut rng = derive_rng(3, "x", 1, 2);
            (0..50).map(|_| lognormal_sample(0.1, 0.7, &mut rng)).collect()
        };
        let b: Vec<f64> = {
            let mut rng = derive_rng(3, "x", 1, 2);
            (0..50).map(|_| lognormal_sample(0.1, 0.7, &mut rng)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn inject_fault_boundaries() {
        let mut rng = derive_rng(1, "f", 0, 0);
        assert!(inject_faults(&FaultModel::FixedCount(0), 20, 5, &mut rng).is_empty());
        let all = inject_faults(&FaultModel::FixedCount(20), 20, 5, &mut rng);
        assert_eq!(all.len(), 20);
        assert!(inject_faults(&FaultModel::None, 20, 5, &mut rng).is_empty());
        let three_a: Vec<usize> =
            inject_faults(&FaultModel::FixedCount(3), 20, 5, &mut derive_rng(9, "f", 4, 0))
                .into_iter()
                .collect();
        let three_b: Vec<usize> =
            inject_faults(&FaultModel::FixedCount(3), 20, 5, &mut derive_rng(9, "f", 4, 0))
                .into_iter()
                .collect();
        assert_eq!(three_a, three_b);
        assert_eq!(three_a.len(), 3);
    }

    #[test]
    fn config_parsing() {
        let config = ScenarioConfig::parse(
            "n=20\nd=5\nrounds=3\nfault_model=fixed:2\nmu=0.1\nsigma=0.4\nscale=100\nseed=7\nbits=128\n",
        )
        .unwrap();
        assert_eq!(config.n_meters, 20);
        assert_eq!(config.fault_model, FaultModel::FixedCount(2));
        assert_eq!(config.num_groups(), 4);

        // comments and blank lines
        assert!(ScenarioConfig::parse("# nothing\n\n").is_ok());
        // d must divide n
        assert!(ScenarioConfig::parse("n=21\nd=5\n").is_err());
        // unknown key
        assert!(ScenarioConfig::parse("wat=1\n").is_err());
        // bad fault model
        assert!(ScenarioConfig::parse("fault_model=bogus\n").is_err());
    }

    fn small_config(seed: u64, fault_model: FaultModel) -> ScenarioConfig {
        ScenarioConfig {
            n_meters: 20,
            d: 5,
            rounds: 2,
            fault_model,
            modulus_bits: 128,
            seed,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn fault_free_rounds_are_exact() {
        let run = run_scenario(&small_config(11, FaultModel::None)).unwrap();
        for round in &run.results {
            assert_eq!(round.true_sum, round.recovered_sum);
            assert_eq!(round.rel_error, 0.0);
            assert!(round.substitutions.is_empty());
        }
        assert_eq!(run.counters.sub_mod_exps, 0);
    }

    #[test]
    fn single_fault_matches_substitution_identity() {
        let config = small_config(13, FaultModel::FixedCount(1));
        let run = run_scenario(&config).unwrap();
        for round in &run.results {
            assert!(round.failed_groups.is_empty());
            assert_eq!(round.substitutions.len(), 1);
            let sub = &round.substitutions[0];
            let m_i = round.readings[sub.missing_meter];
            let m_j = round.readings[sub.donor_meter];
            assert_eq!(sub.wrapped, BigUint::from(m_j) < sub.m_bar);
            // the substituted group still holds Σ_{k≠i} m_k + m_j − m̄,
            // so S' = S − m_i + m_j − m̄ unless the group sum goes negative
            let group = sub.group as usize;
            let group_partial: u64 = (group * config.d..(group + 1) * config.d)
                .filter(|k| *k != sub.missing_meter)
                .map(|k| round.readings[k])
                .sum();
            let group_value = num_bigint::BigInt::from(group_partial)
                + num_bigint::BigInt::from(m_j)
                - num_bigint::BigInt::from(sub.m_bar.clone());
            if group_value >= num_bigint::BigInt::from(0) {
                let expected = num_bigint::BigInt::from(round.true_sum.clone())
                    - num_bigint::BigInt::from(m_i)
                    + num_bigint::BigInt::from(m_j)
                    - num_bigint::BigInt::from(sub.m_bar.clone());
                assert_eq!(num_bigint::BigInt::from(round.recovered_sum.clone()), expected);
            }
        }
    }

    #[test]
    fn replay_is_byte_identical() {
        let config = small_config(17, FaultModel::FixedCount(2));
        let a = run_scenario(&config).unwrap();
        let b = run_scenario(&config).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn quantized_readings_respect_cap() {
        let run = run_scenario(&small_config(19, FaultModel::None)).unwrap();
        for round in &run.results {
            for m in &round.readings {
                assert!(*m <= u32::MAX as u64);
            }
        }
    }

    #[test]
    fn all_groups_broken_is_a_recorded_failure() {
        let config = ScenarioConfig {
            n_meters: 4,
            d: 2,
            rounds: 1,
            fault_model: FaultModel::PerGroupProbability(1.0),
            modulus_bits: 128,
            seed: 23,
            ..ScenarioConfig::default()
        };
        let run = run_scenario(&config).unwrap();
        assert_eq!(run.results[0].failed_groups.len(), 2);
        assert!(run.results[0].recovered_sum.is_zero());
    }
}
