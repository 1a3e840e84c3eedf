//! Paillier keygen/encrypt/decrypt plus the two homomorphic primitives the
//! aggregator needs: ciphertext products and division by a known plaintext.

use num_bigint::{BigInt, BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::Rng;

use crate::numtheory::{gen_prime, lcm, mod_inv, mod_pow, paillier_l};
use crate::{Error, Result};

/// Public key: modulus n, its square, and the group generator g1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaillierPublic {
    pub n: BigUint,
    pub n_sq: BigUint,
    pub g1: BigUint,
}

/// Private key: λ = lcm(p−1, q−1) and the precomputed μ = L(g1^λ)⁻¹ mod n.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaillierPrivate {
    pub lambda: BigUint,
    pub mu: BigUint,
}

/// The two primes. `p` doubles as the Shamir secret in the masking layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Factors {
    pub p: BigUint,
    pub q: BigUint,
}

/// A value in [1, n²) coprime to n.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    pub value: BigUint,
}

impl PaillierPublic {
    fn new(n: BigUint, g1: BigUint) -> Self {
        let n_sq = &n * &n;
        PaillierPublic { n, n_sq, g1 }
    }
}

/// Checks the keygen condition gcd(L(g1^λ mod n²), n) = 1 and returns μ.
fn mu_for_generator(g1: &BigUint, lambda: &BigUint, n: &BigUint, n_sq: &BigUint) -> Result<BigUint> {
    let u = g1.modpow(lambda, n_sq);
    let l = paillier_l(&u, n)?;
    mod_inv(&BigInt::from(l), n)
}

/// Generates a key triple with an `bits`-bit modulus. The generator is
/// resampled until the gcd condition holds.
pub fn keygen(bits: u64, rng: &mut impl Rng) -> (PaillierPublic, PaillierPrivate, Factors) {
    assert!(bits >= 16 && bits % 2 == 0, "modulus width must be even and >= 16");
    let p = gen_prime(bits / 2, rng);
    let q = loop {
        let q = gen_prime(bits / 2, rng);
        if q != p {
            break q;
        }
    };
    let n = &p * &q;
    let n_sq = &n * &n;
    let lambda = lcm(&(&p - 1u32), &(&q - 1u32));
    let one = BigUint::one();
    let (g1, mu) = loop {
        let g1 = rng.gen_biguint_range(&one, &n_sq);
        if !g1.gcd(&n).is_one() {
            continue;
        }
        if let Ok(mu) = mu_for_generator(&g1, &lambda, &n, &n_sq) {
            break (g1, mu);
        }
    };
    (
        PaillierPublic { n, n_sq, g1 },
        PaillierPrivate { lambda, mu },
        Factors { p, q },
    )
}

/// Builds a key triple from explicit factors and generator. Used for the
/// hand-checkable fixture (p=5, q=7, g1=36) and provisioning-file reload.
pub fn from_factors(p: BigUint, q: BigUint, g1: BigUint) -> Result<(PaillierPublic, PaillierPrivate, Factors)> {
    if p == q {
        return Err(Error::Config("p and q must differ".into()));
    }
    let n = &p * &q;
    let pubkey = PaillierPublic::new(n.clone(), g1.clone());
    if !g1.gcd(&n).is_one() || g1 >= pubkey.n_sq {
        return Err(Error::Config("g1 must lie in Z*_{n^2}".into()));
    }
    let lambda = lcm(&(&p - 1u32), &(&q - 1u32));
    let mu = mu_for_generator(&g1, &lambda, &n, &pubkey.n_sq)
        .map_err(|_| Error::Config("g1 fails the gcd(L(g1^lambda), n) = 1 condition".into()))?;
    Ok((pubkey, PaillierPrivate { lambda, mu }, Factors { p, q }))
}

/// Encrypts with an explicit randomizer: C = g1^m · r^n mod n².
pub fn encrypt(pubkey: &PaillierPublic, m: &BigUint, r: &BigUint) -> Result<Ciphertext> {
    if *m >= pubkey.n {
        return Err(Error::PlaintextRange);
    }
    if r.is_zero() || *r >= pubkey.n || !r.gcd(&pubkey.n).is_one() {
        return Err(Error::BadRandomizer);
    }
    let gm = pubkey.g1.modpow(m, &pubkey.n_sq);
    let rn = r.modpow(&pubkey.n, &pubkey.n_sq);
    Ok(Ciphertext { value: gm * rn % &pubkey.n_sq })
}

/// Samples a fresh randomizer from [1, n) coprime to n.
pub fn sample_randomizer(pubkey: &PaillierPublic, rng: &mut impl Rng) -> BigUint {
    let one = BigUint::one();
    loop {
        let r = rng.gen_biguint_range(&one, &pubkey.n);
        if r.gcd(&pubkey.n).is_one() {
            return r;
        }
    }
}

/// Encrypts with a freshly sampled randomizer.
pub fn encrypt_with_rng(pubkey: &PaillierPublic, m: &BigUint, rng: &mut impl Rng) -> Result<Ciphertext> {
    let r = sample_randomizer(pubkey, rng);
    encrypt(pubkey, m, &r)
}

/// Decrypts: m = L(C^λ mod n²) · μ mod n.
pub fn decrypt(privkey: &PaillierPrivate, pubkey: &PaillierPublic, c: &Ciphertext) -> Result<BigUint> {
    let u = c.value.modpow(&privkey.lambda, &pubkey.n_sq);
    let l = paillier_l(&u, &pubkey.n)?;
    Ok(l * &privkey.mu % &pubkey.n)
}

/// Homomorphic addition: c1 · c2 mod n² decrypts to m1 + m2 mod n.
pub fn hom_combine(pubkey: &PaillierPublic, c1: &Ciphertext, c2: &Ciphertext) -> Ciphertext {
    Ciphertext { value: &c1.value * &c2.value % &pubkey.n_sq }
}

/// Divides out a known plaintext: c · (g1^k)⁻¹ mod n², shifting the
/// embedded plaintext by −k mod n.
pub fn remove_known(pubkey: &PaillierPublic, c: &Ciphertext, k: &BigUint) -> Ciphertext {
    let shift = mod_pow(&BigInt::from(pubkey.g1.clone()), &-BigInt::from(k.clone()), &pubkey.n_sq)
        .expect("g1 is invertible mod n^2");
    Ciphertext { value: &c.value * shift % &pubkey.n_sq }
}

/// The p=5, q=7, g1=36 fixture used throughout the tests and the selftest.
pub fn toy_fixture() -> (PaillierPublic, PaillierPrivate, Factors) {
    from_factors(BigUint::from(5u32), BigUint::from(7u32), BigUint::from(36u32))
        .expect("fixture parameters are valid")
}
