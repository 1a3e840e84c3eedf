//! The four protocol roles as deterministic state machines: key
//! initialization (KIC), meter encryption and tagging, aggregator
//! verification/fault-handling/aggregation (DA), and control-center
//! collection (CC).

use std::collections::BTreeMap;

use num_bigint::{BigInt, BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::masking::{self, MaskPublicSet, ScaledWeights, SharePolicy};
use crate::numtheory::{decode_uint, encode_int, encode_uint};
use crate::paillier::{self, Ciphertext, Factors, PaillierPrivate, PaillierPublic};
use crate::{Error, Result};

pub const TAG_LEN: usize = 32;
pub type Tag = [u8; TAG_LEN];

/// Domain-separation prefixes: H1 and H2 are one hash with distinct tags.
const DS_H1: u8 = 0x01;
const DS_H2: u8 = 0x02;

/// H1(t ∥ sᵢ): the share-position identifier a report carries in the clear.
pub fn tag1(t: u64, s: &BigInt) -> Tag {
    let mut hasher = Sha256::new();
    hasher.update([DS_H1]);
    hasher.update(t.to_be_bytes());
    hasher.update(encode_int(s));
    hasher.finalize().into()
}

/// H2(t ∥ Cᵢ ∥ h^{sᵢ}): the integrity tag binding the ciphertext to the
/// round and the sender's mask.
pub fn tag2(t: u64, c: &BigUint, mask: &BigUint) -> Tag {
    let mut hasher = Sha256::new();
    hasher.update([DS_H2]);
    hasher.update(t.to_be_bytes());
    hasher.update(encode_uint(c));
    hasher.update(encode_uint(mask));
    hasher.finalize().into()
}

/// Public system parameters, published by the KIC after setup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemParams {
    pub n: BigUint,
    pub n_sq: BigUint,
    pub g1: BigUint,
    pub g2: BigUint,
    /// h = g₂^q mod n²
    pub h: BigUint,
    pub d: usize,
    pub num_groups: usize,
    /// Per-meter reading cap; setup guarantees N·cap < n.
    pub reading_cap: BigUint,
    pub hash_alg: &'static str,
}

impl SystemParams {
    pub fn public(&self) -> PaillierPublic {
        PaillierPublic {
            n: self.n.clone(),
            n_sq: self.n_sq.clone(),
            g1: self.g1.clone(),
        }
    }
}

/// Per-meter secret key material.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeterKey {
    /// Share index xᵢ; never serialized into any report.
    pub x: u64,
    /// Group id yᵢ.
    pub group: u32,
    /// Share value G(xᵢ), over the integers.
    pub share: BigUint,
    /// Δ·β_{xᵢ}
    pub scaled_weight: BigInt,
    /// sᵢ = Δ·β_{xᵢ}·G(xᵢ)
    pub s: BigInt,
    /// h^{sᵢ} mod n²
    pub mask: BigUint,
}

/// One interval's message from a meter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeterReport {
    pub group: u32,
    pub c: Ciphertext,
    pub tag1: Tag,
    pub tag2: Tag,
    pub t: u64,
}

impl MeterReport {
    /// Wire format: t (8 BE) ∥ yᵢ (4 BE) ∥ Cᵢ (canonical bigint) ∥ tag1 ∥ tag2.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.t.to_be_bytes());
        out.extend_from_slice(&self.group.to_be_bytes());
        out.extend_from_slice(&encode_uint(&self.c.value));
        out.extend_from_slice(&self.tag1);
        out.extend_from_slice(&self.tag2);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Encoding("truncated report header"));
        }
        let t = u64::from_be_bytes(bytes[0..8].try_into().unwrap());
        let group = u32::from_be_bytes(bytes[8..12].try_into().unwrap());
        let (c, used) = decode_uint(&bytes[12..])?;
        let rest = &bytes[12 + used..];
        if rest.len() != 2 * TAG_LEN {
            return Err(Error::Encoding("bad report tag section"));
        }
        Ok(MeterReport {
            group,
            c: Ciphertext { value: c },
            tag1: rest[..TAG_LEN].try_into().unwrap(),
            tag2: rest[TAG_LEN..].try_into().unwrap(),
            t,
        })
    }
}

/// One entry of the DA's verification table: a share position with its
/// tag1 preimage and public mask value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskEntry {
    pub position: usize,
    pub s: BigInt,
    pub mask: BigUint,
}

/// Operation counters for the error-handling path.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpCounters {
    pub sub_mod_exps: u64,
    pub sub_mod_invs: u64,
    pub sub_mod_muls: u64,
    pub tag_comparisons: u64,
    pub hash_evals: u64,
}

/// The DA's mutable state across rounds.
#[derive(Debug, Clone)]
pub struct AggregatorState {
    pub public: PaillierPublic,
    pub secret: PaillierPrivate,
    pub mask_table: Vec<MaskEntry>,
    /// Previous round's network-wide decrypted total; None before round 0.
    pub prev_total: Option<BigUint>,
    pub meter_count: u64,
    pub counters: OpCounters,
}

/// Bookkeeping for one performed substitution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubstitutionRecord {
    pub missing_tag1: Tag,
    pub missing_position: usize,
    pub donor_group: u32,
    pub m_bar: BigUint,
}

/// Per-group decrypted sum plus substitution records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundAggregate {
    pub group: u32,
    pub t: u64,
    pub c_sum: Ciphertext,
    pub m_sum: BigUint,
    pub substitutions: Vec<SubstitutionRecord>,
}

impl RoundAggregate {
    /// Key/value record export: group id, decimal sum, substitution list.
    pub fn to_record(&self) -> String {
        let subs: Vec<String> = self
            .substitutions
            .iter()
            .map(|s| format!("{}:{}:{}", hex_prefix(&s.missing_tag1), s.donor_group, s.m_bar))
            .collect();
        format!(
            "group={} m_sum={} substitutions=[{}]",
            self.group,
            self.m_sum,
            subs.join(",")
        )
    }
}

fn hex_prefix(tag: &Tag) -> String {
    tag[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything the KIC hands out at setup time.
#[derive(Debug, Clone)]
pub struct Setup {
    pub params: SystemParams,
    /// keys[group][index]
    pub keys: Vec<Vec<MeterKey>>,
    pub aggregator: AggregatorState,
    /// Held back for tests and the gated factors export only.
    pub factors: Factors,
}

fn build_setup(
    pubkey: PaillierPublic,
    privkey: PaillierPrivate,
    factors: Factors,
    d: usize,
    num_groups: usize,
    rng: &mut impl Rng,
) -> Setup {
    assert!(d >= 2 && num_groups >= 1);
    let n = pubkey.n.clone();
    let n_sq = pubkey.n_sq.clone();

    // mask base: h = g2^q with g2 in [2, n), coprime to n
    let two = BigUint::from(2u32);
    let g2 = loop {
        let g2 = rng.gen_biguint_range(&two, &n);
        if g2.gcd(&n).is_one() {
            break g2;
        }
    };
    let h = g2.modpow(&factors.q, &n_sq);

    // one global polynomial; every group gets the same share set
    let policy = SharePolicy::contiguous(d);
    let poly = masking::poly_gen(&factors.p, d, &n, rng);
    let shares: Vec<BigUint> = policy.x_points.iter().map(|x| poly.eval(*x)).collect();
    let weights = masking::lagrange_weights(&policy);
    let scaled: ScaledWeights = masking::scale_exponents(&weights, &shares);
    let mask_set = MaskPublicSet::build(&h, &scaled, &n_sq).expect("h is invertible mod n^2");

    let meter_count = (d * num_groups) as u64;
    // cap chosen so N·cap < n always holds
    let cap_by_n = (&n - 1u32) / BigUint::from(meter_count);
    let cap = cap_by_n.min(BigUint::from(u32::MAX));
    assert!(BigUint::from(meter_count) * &cap < n, "aggregate must fit the plaintext space");

    let keys: Vec<Vec<MeterKey>> = (0..num_groups as u32)
        .map(|group| {
            (0..d)
                .map(|i| MeterKey {
                    x: policy.x_points[i],
                    group,
                    share: shares[i].clone(),
                    scaled_weight: scaled.weights[i].clone(),
                    s: scaled.s_list[i].clone(),
                    mask: mask_set.masks[i].clone(),
                })
                .collect()
        })
        .collect();

    let mask_table: Vec<MaskEntry> = (0..d)
        .map(|i| MaskEntry {
            position: i,
            s: scaled.s_list[i].clone(),
            mask: mask_set.masks[i].clone(),
        })
        .collect();

    let params = SystemParams {
        n,
        n_sq,
        g1: pubkey.g1.clone(),
        g2,
        h,
        d,
        num_groups,
        reading_cap: cap,
        hash_alg: "sha256",
    };
    let aggregator = AggregatorState {
        public: pubkey,
        secret: privkey,
        mask_table,
        prev_total: None,
        meter_count,
        counters: OpCounters::default(),
    };
    Setup { params, keys, aggregator, factors }
}

/// Full KIC setup: Paillier keygen, mask polynomial, per-meter keys, and
/// the DA's provisioning (λ, μ, mask table).
pub fn kic_setup(bits: u64, d: usize, num_groups: usize, rng: &mut impl Rng) -> Setup {
    let (pubkey, privkey, factors) = paillier::keygen(bits, rng);
    build_setup(pubkey, privkey, factors, d, num_groups, rng)
}

/// Setup over explicit factors, for fixtures and provisioning reload.
pub fn kic_setup_from_factors(
    p: BigUint,
    q: BigUint,
    g1: BigUint,
    d: usize,
    num_groups: usize,
    rng: &mut impl Rng,
) -> Result<Setup> {
    let (pubkey, privkey, factors) = paillier::from_factors(p, q, g1)?;
    Ok(build_setup(pubkey, privkey, factors, d, num_groups, rng))
}

/// Builds one round's report: Cᵢ = g₁^{mᵢ}·rⁿ·h^{sᵢ} mod n² plus tags.
pub fn meter_report(
    key: &MeterKey,
    params: &SystemParams,
    m: &BigUint,
    t: u64,
    rng: &mut impl Rng,
) -> Result<MeterReport> {
    if *m > params.reading_cap {
        return Err(Error::ReadingRange);
    }
    let pubkey = params.public();
    let inner = paillier::encrypt_with_rng(&pubkey, m, rng)?;
    let c = Ciphertext { value: inner.value * &key.mask % &params.n_sq };
    Ok(MeterReport {
        group: key.group,
        tag1: tag1(t, &key.s),
        tag2: tag2(t, &c.value, &key.mask),
        c,
        t,
    })
}

impl AggregatorState {
    /// m̄ for the current round: the previous round's network-wide total
    /// divided by the meter count, rounded; zero on the first round.
    pub fn m_bar(&self) -> BigUint {
        match &self.prev_total {
            None => BigUint::zero(),
            Some(total) => {
                let count = BigUint::from(self.meter_count);
                (total + &count / 2u32) / count
            }
        }
    }

    /// The tag1 value each share position must carry this round.
    pub fn expected_tags(&mut self, t: u64) -> Vec<(usize, Tag)> {
        self.counters.hash_evals += self.mask_table.len() as u64;
        self.mask_table.iter().map(|e| (e.position, tag1(t, &e.s))).collect()
    }

    /// Verifies a report against the mask table: tag2 must match a table
    /// entry's recomputation, and tag1 must match the same entry.
    pub fn da_verify(&mut self, report: &MeterReport) -> bool {
        for entry in &self.mask_table {
            self.counters.hash_evals += 1;
            self.counters.tag_comparisons += 1;
            if tag2(report.t, &report.c.value, &entry.mask) == report.tag2 {
                self.counters.hash_evals += 1;
                self.counters.tag_comparisons += 1;
                return tag1(report.t, &entry.s) == report.tag1;
            }
        }
        false
    }

    /// Compares a group's tag1 set against a complete reference group and
    /// returns the missing tags. Errors if every group is incomplete.
    pub fn da_detect_faults(
        &mut self,
        groups: &[Vec<MeterReport>],
        group_idx: usize,
        t: u64,
    ) -> Result<Vec<Tag>> {
        let expected = self.expected_tags(t);
        let reference = groups
            .iter()
            .find(|g| {
                let mut tags: Vec<&Tag> = g.iter().map(|r| &r.tag1).collect();
                tags.sort_unstable();
                tags.dedup();
                tags.len() == self.mask_table.len()
                    && expected.iter().all(|(_, t)| tags.binary_search(&t).is_ok())
            })
            .ok_or(Error::NoReferenceGroup)?;
        let present: Vec<&Tag> = groups[group_idx].iter().map(|r| &r.tag1).collect();
        let missing = reference
            .iter()
            .map(|r| r.tag1)
            .filter(|tag| {
                self.counters.tag_comparisons += present.len() as u64;
                !present.contains(&tag)
            })
            .collect();
        Ok(missing)
    }

    /// Eq-19 substitution: divides the donor ciphertext by g₁^{m̄}. The
    /// marginal cost is one modular exponentiation, one inversion, and one
    /// multiplication, tracked in the counters.
    pub fn da_substitute(&mut self, donor: &MeterReport, m_bar: &BigUint) -> Ciphertext {
        self.counters.sub_mod_exps += 1;
        self.counters.sub_mod_invs += 1;
        self.counters.sub_mod_muls += 1;
        paillier::remove_known(&self.public, &donor.c, m_bar)
    }

    /// Multiplies exactly d position-covering ciphertexts and decrypts the
    /// group sum; the masks telescope away once every share position is present.
    pub fn da_aggregate(
        &mut self,
        group: u32,
        t: u64,
        items: &[(usize, Ciphertext)],
        substitutions: Vec<SubstitutionRecord>,
    ) -> Result<RoundAggregate> {
        let mut seen = vec![false; self.mask_table.len()];
        for (pos, _) in items {
            if *pos >= seen.len() {
                return Err(Error::Config(format!("share position {pos} out of range")));
            }
            if seen[*pos] {
                return Err(Error::DuplicatePosition);
            }
            seen[*pos] = true;
        }
        if !seen.iter().all(|s| *s) {
            return Err(Error::IncompleteGroup);
        }
        let c_sum = items.iter().fold(BigUint::one(), |acc, (_, c)| acc * &c.value % &self.public.n_sq);
        let c_sum = Ciphertext { value: c_sum };
        let m_sum = paillier::decrypt(&self.secret, &self.public, &c_sum)?;
        Ok(RoundAggregate { group, t, c_sum, m_sum, substitutions })
    }

    /// One full DA round over all groups: verify, detect faults,
    /// substitute from the lowest-id complete donor group, aggregate.
    pub fn process_round(&mut self, groups: &[Vec<MeterReport>], t: u64) -> RoundOutcome {
        let m_bar = self.m_bar();
        let expected = self.expected_tags(t);
        let tag_to_pos: BTreeMap<Tag, usize> = expected.iter().map(|(p, tag)| (*tag, *p)).collect();

        // verify everything up front; drop reports that fail
        let accepted: Vec<Vec<MeterReport>> = groups
            .iter()
            .map(|g| g.iter().filter(|r| r.t == t).cloned().collect::<Vec<_>>())
            .map(|g: Vec<MeterReport>| g.into_iter().filter(|r| self.da_verify(r)).collect())
            .collect();

        let complete: Vec<usize> = accepted
            .iter()
            .enumerate()
            .filter(|(_, g)| {
                let mut pos: Vec<usize> = g.iter().filter_map(|r| tag_to_pos.get(&r.tag1).copied()).collect();
                pos.sort_unstable();
                pos.dedup();
                pos.len() == self.mask_table.len()
            })
            .map(|(i, _)| i)
            .collect();

        let mut aggregates = Vec::new();
        let mut failures = Vec::new();
        for (gid, reports) in accepted.iter().enumerate() {
            let mut items: Vec<(usize, Ciphertext)> = reports
                .iter()
                .filter_map(|r| tag_to_pos.get(&r.tag1).map(|p| (*p, r.c.clone())))
                .collect();
            let mut records = Vec::new();
            if complete.binary_search(&gid).is_err() {
                let missing = match self.da_detect_faults(&accepted, gid, t) {
                    Ok(m) => m,
                    Err(e) => {
                        failures.push((gid as u32, e));
                        continue;
                    }
                };
                let mut failed = None;
                for tag in missing {
                    let pos = tag_to_pos[&tag];
                    // lowest group id among complete groups holding this tag
                    let donor = complete.iter().find_map(|cg| {
                        accepted[*cg].iter().find(|r| r.tag1 == tag)
                    });
                    match donor {
                        Some(donor) => {
                            let c = self.da_substitute(&donor.clone(), &m_bar);
                            items.push((pos, c));
                            records.push(SubstitutionRecord {
                                missing_tag1: tag,
                                missing_position: pos,
                                donor_group: donor.group,
                                m_bar: m_bar.clone(),
                            });
                        }
                        None => {
                            failed = Some(Error::NoDonor);
                            break;
                        }
                    }
                }
                if let Some(e) = failed {
                    failures.push((gid as u32, e));
                    continue;
                }
            }
            match self.da_aggregate(gid as u32, t, &items, records) {
                Ok(agg) => aggregates.push(agg),
                Err(e) => failures.push((gid as u32, e)),
            }
        }
        RoundOutcome { aggregates, failures }
    }

    /// Records the round's decrypted network total for the next m̄.
    pub fn finish_round(&mut self, total: &BigUint) {
        self.prev_total = Some(total.clone());
    }
}

/// One DA round's output.
#[derive(Debug)]
pub struct RoundOutcome {
    pub aggregates: Vec<RoundAggregate>,
    pub failures: Vec<(u32, Error)>,
}

/// CC collection: plain sum of already-decrypted group totals.
pub fn cc_collect(aggregates: &[RoundAggregate]) -> (BigUint, Vec<(u32, BigUint)>) {
    let breakdown: Vec<(u32, BigUint)> =
        aggregates.iter().map(|a| (a.group, a.m_sum.clone())).collect();
    let total = breakdown.iter().map(|(_, m)| m.clone()).sum();
    (total, breakdown)
}
