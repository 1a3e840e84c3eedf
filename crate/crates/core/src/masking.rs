//! Shamir polynomial over the Paillier prime p, exact Lagrange weights at
//! zero, and integer-scaled mask exponents.
//!
//! Shares are evaluated over the integers: the values live only in the
//! exponent of the mask base h, and the reconstruction identity must hold
//! as an exact exponent identity. Rational Lagrange weights are cleared by
//! a common scale Δ, so the per-meter exponents sᵢ = Δ·βᵢ·G(xᵢ) are signed
//! integers with Σ sᵢ = Δ·p. The aggregate mask h^{Δp} = (g₂^Δ)ⁿ is an
//! n-th residue and vanishes under λ-exponentiation during decryption.

use num_bigint::{BigInt, BigUint, RandBigInt};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;

use crate::numtheory::mod_pow;
use crate::Result;

/// Share-point layout for a group: d distinct positive indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharePolicy {
    pub x_points: Vec<u64>,
}

impl SharePolicy {
    /// The default layout {1, …, d}, identical across groups.
    pub fn contiguous(d: usize) -> Self {
        SharePolicy { x_points: (1..=d as u64).collect() }
    }

    pub fn new(x_points: Vec<u64>) -> crate::Result<Self> {
        let mut seen = x_points.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != x_points.len() || x_points.iter().any(|x| *x == 0) {
            return Err(crate::Error::Config("share indices must be distinct and positive".into()));
        }
        Ok(SharePolicy { x_points })
    }

    pub fn d(&self) -> usize {
        self.x_points.len()
    }
}

/// G(x) = p + a₁x + … + a_{d−1}x^{d−1}, constant term the secret.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPolynomial {
    coeffs: Vec<BigUint>,
}

impl MaskPolynomial {
    pub fn from_coeffs(coeffs: Vec<BigUint>) -> Self {
        assert!(!coeffs.is_empty());
        MaskPolynomial { coeffs }
    }

    pub fn secret(&self) -> &BigUint {
        &self.coeffs[0]
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Horner evaluation over the integers; no modular reduction.
    pub fn eval(&self, x: u64) -> BigUint {
        let x = BigUint::from(x);
        let mut acc = BigUint::zero();
        for c in self.coeffs.iter().rev() {
            acc = acc * &x + c;
        }
        acc
    }
}

/// Samples a degree-(d−1) polynomial with constant term `secret` and
/// coefficients uniform in [1, n).
pub fn poly_gen(secret: &BigUint, d: usize, n: &BigUint, rng: &mut impl Rng) -> MaskPolynomial {
    assert!(d >= 2, "group size must be at least 2");
    let one = BigUint::one();
    let mut coeffs = Vec::with_capacity(d);
    coeffs.push(secret.clone());
    for _ in 1..d {
        coeffs.push(rng.gen_biguint_range(&one, n));
    }
    MaskPolynomial { coeffs }
}

/// Lagrange weights at zero: βᵢ = ∏_{j≠i} xⱼ / (xⱼ − xᵢ), as exact rationals.
pub fn lagrange_weights(policy: &SharePolicy) -> Vec<BigRational> {
    policy
        .x_points
        .iter()
        .map(|xi| {
            let mut beta = BigRational::one();
            for xj in &policy.x_points {
                if xj != xi {
                    let num = BigInt::from(*xj);
                    let den = BigInt::from(*xj) - BigInt::from(*xi);
                    beta *= BigRational::new(num, den);
                }
            }
            beta
        })
        .collect()
}

/// Integer-scaled mask exponents: Δ clears the weight denominators and
/// sᵢ = Δ·βᵢ·G(xᵢ), so Σ sᵢ = Δ·p exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaledWeights {
    pub delta: BigUint,
    /// Δ·βᵢ, the integer weight each meter stores alongside its share.
    pub weights: Vec<BigInt>,
    /// sᵢ = Δ·βᵢ·G(xᵢ)
    pub s_list: Vec<BigInt>,
}

pub fn scale_exponents(weights: &[BigRational], shares: &[BigUint]) -> ScaledWeights {
    assert_eq!(weights.len(), shares.len());
    let mut delta = BigInt::one();
    for w in weights {
        delta = delta.lcm(w.denom());
    }
    let scaled: Vec<BigInt> = weights
        .iter()
        .map(|w| {
            let v = w * BigRational::from_integer(delta.clone());
            assert!(v.is_integer());
            v.to_integer()
        })
        .collect();
    let s_list: Vec<BigInt> = scaled
        .iter()
        .zip(shares)
        .map(|(w, share)| w * BigInt::from(share.clone()))
        .collect();
    ScaledWeights {
        delta: delta.to_biguint().expect("lcm of denominators is positive"),
        weights: scaled,
        s_list,
    }
}

/// h^s mod n², with negative exponents via the inverse of h.
pub fn mask_value(h: &BigUint, s: &BigInt, n_sq: &BigUint) -> Result<BigUint> {
    mod_pow(&BigInt::from(h.clone()), s, n_sq)
}

/// Public mask material: h = g₂^q mod n² and the per-index values h^{sᵢ}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPublicSet {
    pub h: BigUint,
    pub masks: Vec<BigUint>,
}

impl MaskPublicSet {
    pub fn build(h: &BigUint, scaled: &ScaledWeights, n_sq: &BigUint) -> Result<Self> {
        let masks = scaled
            .s_list
            .iter()
            .map(|s| mask_value(h, s, n_sq))
            .collect::<Result<Vec<_>>>()?;
        Ok(MaskPublicSet { h: h.clone(), masks })
    }
}
