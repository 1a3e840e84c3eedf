//! Arbitrary-precision integer utilities underlying the cryptographic layer.
//!
//! All randomness flows through caller-supplied seeded generators, so every
//! operation is reproducible from a seed.

use num_bigint::{BigInt, BigUint, RandBigInt, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use rand::Rng;

use crate::{Error, Result};

/// Number of Miller–Rabin rounds; error probability below 4^-40 < 2^-80.
const MILLER_RABIN_ROUNDS: usize = 40;

/// Small primes used to sieve candidates before the probabilistic test.
fn small_primes(limit: usize) -> Vec<u64> {
    let mut primes: Vec<u64> = Vec::with_capacity(limit);
    let mut candidate: u64 = 2;
    while primes.len() < limit {
        if primes.iter().take_while(|p| *p * *p <= candidate).all(|p| candidate % p != 0) {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

/// Miller–Rabin with bases drawn from `rng`.
pub fn is_probable_prime(n: &BigUint, rounds: usize, rng: &mut impl Rng) -> bool {
    let two = BigUint::from(2u32);
    let three = BigUint::from(3u32);
    if *n < two {
        return false;
    }
    if *n == two || *n == three {
        return true;
    }
    if n.is_even() {
        return false;
    }
    let n_minus_one = n - 1u32;
    // n - 1 = d * 2^s with d odd
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;
    'witness: for _ in 0..rounds {
        let a = rng.gen_biguint_range(&two, &n_minus_one);
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_one {
            continue;
        }
        for _ in 0..s.saturating_sub(1) {
            x = x.modpow(&two, n);
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Generates a probable prime with exactly `bits` significant bits.
///
/// The top bit and low bit are forced, candidates are sieved against small
/// primes, survivors go through Miller–Rabin.
pub fn gen_prime(bits: u64, rng: &mut impl Rng) -> BigUint {
    assert!(bits >= 2, "prime width must be at least 2 bits");
    let sieve = small_primes(256);
    loop {
        let mut candidate = rng.gen_biguint(bits);
        candidate.set_bit(bits - 1, true);
        candidate.set_bit(0, true);
        if sieve.iter().any(|p| {
            let bp = BigUint::from(*p);
            candidate != bp && (&candidate % &bp).is_zero()
        }) {
            continue;
        }
        if is_probable_prime(&candidate, MILLER_RABIN_ROUNDS, rng) {
            return candidate;
        }
    }
}

/// Least common multiple.
pub fn lcm(a: &BigUint, b: &BigUint) -> BigUint {
    assert!(!a.is_zero() && !b.is_zero(), "lcm arguments must be positive");
    a.lcm(b)
}

/// Modular inverse: returns x in (0, m) with a·x ≡ 1 (mod m).
pub fn mod_inv(a: &BigInt, m: &BigUint) -> Result<BigUint> {
    assert!(*m > BigUint::one(), "modulus must exceed 1");
    let m_int = BigInt::from(m.clone());
    let ext = a.extended_gcd(&m_int);
    if !ext.gcd.is_one() {
        return Err(Error::NotInvertible);
    }
    let x = ext.x.mod_floor(&m_int);
    Ok(x.to_biguint().expect("mod_floor result is nonnegative"))
}

/// Modular exponentiation; negative exponents go through the inverse of
/// `base`, which must then be invertible mod `m`.
pub fn mod_pow(base: &BigInt, exp: &BigInt, m: &BigUint) -> Result<BigUint> {
    assert!(*m > BigUint::one(), "modulus must exceed 1");
    let m_int = BigInt::from(m.clone());
    if exp.is_negative() {
        let inv = mod_inv(base, m)?;
        let pos = exp.magnitude();
        Ok(inv.modpow(pos, m))
    } else {
        let reduced = base.mod_floor(&m_int).to_biguint().expect("nonnegative");
        Ok(reduced.modpow(exp.magnitude(), m))
    }
}

/// Paillier's L function: L(u) = (u − 1) / n, defined when u ≡ 1 (mod n).
pub fn paillier_l(u: &BigUint, n: &BigUint) -> Result<BigUint> {
    if u.is_zero() {
        return Err(Error::NotLDomain);
    }
    let d = u - 1u32;
    let (q, r) = d.div_rem(n);
    if !r.is_zero() {
        return Err(Error::NotLDomain);
    }
    Ok(q)
}

/// Canonical signed big-integer encoding: 1-byte sign tag (0x00 nonneg,
/// 0x01 negative), 4-byte big-endian magnitude length, minimal big-endian
/// magnitude bytes (empty for zero). This is the byte form hashed by the
/// protocol tags and used on the wire.
pub fn encode_int(x: &BigInt) -> Vec<u8> {
    let tag = if x.is_negative() { 0x01u8 } else { 0x00u8 };
    let mag = if x.is_zero() { Vec::new() } else { x.magnitude().to_bytes_be() };
    let mut out = Vec::with_capacity(5 + mag.len());
    out.push(tag);
    out.extend_from_slice(&(mag.len() as u32).to_be_bytes());
    out.extend_from_slice(&mag);
    out
}

/// Canonical encoding of an unsigned value (sign tag always 0x00).
pub fn encode_uint(x: &BigUint) -> Vec<u8> {
    encode_int(&BigInt::from(x.clone()))
}

/// Decodes one canonical integer, returning the value and bytes consumed.
pub fn decode_int(bytes: &[u8]) -> Result<(BigInt, usize)> {
    if bytes.len() < 5 {
        return Err(Error::Encoding("truncated integer header"));
    }
    let sign_tag = bytes[0];
    if sign_tag > 1 {
        return Err(Error::Encoding("bad sign tag"));
    }
    let len = u32::from_be_bytes(bytes[1..5].try_into().unwrap()) as usize;
    if bytes.len() < 5 + len {
        return Err(Error::Encoding("truncated integer body"));
    }
    let mag = &bytes[5..5 + len];
    if len > 0 && mag[0] == 0 {
        return Err(Error::Encoding("non-minimal magnitude"));
    }
    let value = BigUint::from_bytes_be(mag);
    if sign_tag == 1 && value.is_zero() {
        return Err(Error::Encoding("negative zero"));
    }
    let sign = if sign_tag == 1 { Sign::Minus } else { Sign::Plus };
    Ok((BigInt::from_biguint(sign, value), 5 + len))
}

/// Decodes one canonical unsigned integer.
pub fn decode_uint(bytes: &[u8]) -> Result<(BigUint, usize)> {
    let (v, used) = decode_int(bytes)?;
    if v.is_negative() {
        return Err(Error::Encoding("expected nonnegative integer"));
    }
    Ok((v.to_biguint().unwrap(), used))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::FromPrimitive;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    /// Trial-division oracle, independent of the Miller–Rabin path.
    fn is_prime_trial(n: u64) -> bool {
        if n < 2 {
            return false;
        }
        let mut d = 2u64;
        while d * d <= n {
            if n % d == 0 {
                return false;
            }
            d += 1;
        }
        true
    }

    #[test]
    fn gen_prime_two_bits_is_three() {
        let mut r = rng(1);
        for _ in 0..10 {
            assert_eq!(gen_prime(2, &mut r), BigUint::from(3u32));
        }
    }

    #[test]
    fn gen_prime_eight_bits_in_range_and_prime() {
        let mut r = rng(42);
        for _ in 0..20 {
            let p = gen_prime(8, &mut r);
            let v = u64::try_from(&p).unwrap();
            assert!((128..=255).contains(&v));
            assert!(is_prime_trial(v));
        }
    }

    #[test]
    fn gen_prime_512_bits_passes_independent_witnesses() {
        let mut r = rng(7);
        let p = gen_prime(512, &mut r);
        assert_eq!(p.bits(), 512);
        // independent witness set from a different seed
        let mut w = rng(987654321);
        assert!(is_probable_prime(&p, 40, &mut w));
    }

    #[test]
    fn gen_prime_coprime_to_first_1000_primes() {
        let primes = small_primes(1000);
        let mut r = rng(5);
        let p = gen_prime(128, &mut r);
        for q in primes {
            let bq = BigUint::from(q);
            assert!(p == bq || !(&p % &bq).is_zero());
        }
    }

    #[test]
    fn gen_prime_deterministic_from_seed() {
        let a = gen_prime(64, &mut rng(99));
        let b = gen_prime(64, &mut rng(99));
        assert_eq!(a, b);
    }

    #[test]
    fn lcm_cases() {
        let f = |a: u32, b: u32| lcm(&BigUint::from(a), &BigUint::from(b));
        assert_eq!(f(4, 6), BigUint::from(12u32));
        assert_eq!(f(1, 17), BigUint::from(17u32));
        assert_eq!(f(6, 8), BigUint::from(24u32));
    }

    #[test]
    fn mod_inv_cases() {
        let m = BigUint::from(35u32);
        assert_eq!(mod_inv(&BigInt::from(12), &m).unwrap(), BigUint::from(3u32));
        assert_eq!(mod_inv(&BigInt::one(), &m).unwrap(), BigUint::one());
        assert!(matches!(mod_inv(&BigInt::from(5), &m), Err(Error::NotInvertible)));
    }

    #[test]
    fn mod_inv_matches_extended_euclid_oracle() {
        let mut r = rng(3);
        let m = gen_prime(64, &mut r) * gen_prime(64, &mut r);
        for _ in 0..100 {
            let a = r.gen_biguint_below(&m);
            match mod_inv(&BigInt::from(a.clone()), &m) {
                Ok(x) => assert!(((a * x) % &m).is_one()),
                Err(_) => assert!(!a.gcd(&m).is_one()),
            }
        }
    }

    #[test]
    fn mod_pow_cases() {
        let m = BigUint::from(1225u32);
        assert_eq!(
            mod_pow(&BigInt::from(2), &BigInt::from(35), &m).unwrap(),
            BigUint::from(18u32)
        );
        assert_eq!(mod_pow(&BigInt::from(7), &BigInt::zero(), &m).unwrap(), BigUint::one());
        // (1+n)^k ≡ 1 + kn mod n² with n=35, k=12
        assert_eq!(
            mod_pow(&BigInt::from(36), &BigInt::from(12), &m).unwrap(),
            BigUint::from(421u32)
        );
    }

    #[test]
    fn mod_pow_matches_naive_oracle() {
        let m = BigUint::from(1225u32);
        for base in [2u32, 6, 36, 101] {
            for exp in 0u32..20 {
                let mut acc = BigUint::one();
                for _ in 0..exp {
                    acc = acc * base % &m;
                }
                assert_eq!(
                    mod_pow(&BigInt::from(base), &BigInt::from(exp), &m).unwrap(),
                    acc
                );
            }
        }
    }

    #[test]
    fn mod_pow_negative_exponent() {
        let m = BigUint::from(35u32);
        // 2^-1 mod 35 = 18
        assert_eq!(
            mod_pow(&BigInt::from(2), &BigInt::from(-1), &m).unwrap(),
            BigUint::from(18u32)
        );
        assert!(matches!(
            mod_pow(&BigInt::from(5), &BigInt::from(-2), &m),
            Err(Error::NotInvertible)
        ));
    }

    #[test]
    fn mod_pow_exponent_additivity() {
        let mut r = rng(11);
        let m = gen_prime(128, &mut r) * gen_prime(128, &mut r);
        for _ in 0..1000 {
            let a = BigInt::from(r.gen_biguint_below(&m));
            let b = BigInt::from(r.gen_biguint(64));
            let c = BigInt::from(r.gen_biguint(64));
            let lhs = mod_pow(&a, &(&b + &c), &m).unwrap();
            let rhs = mod_pow(&a, &b, &m).unwrap() * mod_pow(&a, &c, &m).unwrap() % &m;
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn paillier_l_cases() {
        let n = BigUint::from(35u32);
        assert_eq!(paillier_l(&BigUint::one(), &n).unwrap(), BigUint::zero());
        assert_eq!(paillier_l(&BigUint::from(36u32), &n).unwrap(), BigUint::one());
        assert_eq!(paillier_l(&BigUint::from(421u32), &n).unwrap(), BigUint::from(12u32));
        assert!(matches!(paillier_l(&BigUint::from(2u32), &n), Err(Error::NotLDomain)));
    }

    #[test]
    fn paillier_l_inverts_affine_form() {
        let n = BigUint::from(35u32);
        for k in 0u32..35 {
            let u = BigUint::one() + BigUint::from(k) * &n;
            assert_eq!(paillier_l(&u, &n).unwrap(), BigUint::from(k));
        }
    }

    #[test]
    fn encoding_round_trip_and_minimality() {
        for v in [0i64, 1, -1, 255, 256, -70000, i64::MAX] {
            let x = BigInt::from_i64(v).unwrap();
            let bytes = encode_int(&x);
            let (back, used) = decode_int(&bytes).unwrap();
            assert_eq!(back, x);
            assert_eq!(used, bytes.len());
        }
        // zero encodes with empty magnitude
        assert_eq!(encode_uint(&BigUint::zero()), vec![0, 0, 0, 0, 0]);
        // leading zero magnitude is rejected
        assert!(decode_int(&[0, 0, 0, 0, 2, 0, 5]).is_err());
    }
}
