//! Number-theoretic helpers over `BigUint`.

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::RngCore;

/// Right-to-left binary exponentiation: `base^exp mod modulus`.
///
/// `modulus` must be non-zero; `x mod 1` is zero for every `x`.
pub fn mod_pow(base: &BigUint, exp: &BigUint, modulus: &BigUint) -> BigUint {
    assert!(!modulus.is_zero(), "modulus must be non-zero");
    if modulus.is_one() {
        return BigUint::zero();
    }
    let mut result = BigUint::one();
    let mut b = base % modulus;
    let bits = exp.bits();
    for i in 0..bits {
        if exp.bit(i) {
            result = (&result * &b) % modulus;
        }
        if i + 1 < bits {
            b = (&b * &b) % modulus;
        }
    }
    result
}

pub fn gcd(a: &BigUint, b: &BigUint) -> BigUint {
    a.gcd(b)
}

/// Multiplicative inverse of `a` modulo `m` by the extended Euclidean
/// algorithm, or `None` when `gcd(a, m) != 1`.
pub fn mod_inverse(a: &BigUint, m: &BigUint) -> Option<BigUint> {
    if m.is_zero() {
        return None;
    }
    let m_int = BigInt::from_biguint(Sign::Plus, m.clone());
    let (mut old_r, mut r) = (BigInt::from_biguint(Sign::Plus, a % m), m_int.clone());
    let (mut old_s, mut s) = (BigInt::one(), BigInt::zero());
    while !r.is_zero() {
        let q = &old_r / &r;
        let next_r = &old_r - &q * &r;
        old_r = std::mem::replace(&mut r, next_r);
        let next_s = &old_s - &q * &s;
        old_s = std::mem::replace(&mut s, next_s);
    }
    if !old_r.is_one() {
        return None;
    }
    let inv = old_s.mod_floor(&m_int);
    inv.to_biguint()
}

/// Uniform sample from `[0, bound)` by rejection on the bit length of `bound`.
pub fn random_below<R: RngCore + ?Sized>(rng: &mut R, bound: &BigUint) -> BigUint {
    assert!(!bound.is_zero(), "empty range");
    let bits = bound.bits();
    let nbytes = bits.div_ceil(8) as usize;
    let excess = (nbytes as u64 * 8 - bits) as u32;
    let mut buf = vec![0u8; nbytes];
    loop {
        rng.fill_bytes(&mut buf);
        buf[0] &= 0xffu8 >> excess;
        let x = BigUint::from_bytes_be(&buf);
        if &x < bound {
            return x;
        }
    }
}

/// Uniform sample from `[low, high]`.
pub fn random_in_range<R: RngCore + ?Sized>(rng: &mut R, low: &BigUint, high: &BigUint) -> BigUint {
    assert!(low <= high, "empty range");
    let span = high - low + 1u32;
    low + random_below(rng, &span)
}

/// Big-endian bytes left-padded with zeros to `len`. Panics if `x` needs
/// more than `len` bytes.
pub fn to_fixed_be(x: &BigUint, len: usize) -> Vec<u8> {
    let raw = x.to_bytes_be();
    let raw: &[u8] = if x.is_zero() { &[] } else { &raw };
    assert!(raw.len() <= len, "value does not fit in {len} bytes");
    let mut out = vec![0u8; len - raw.len()];
    out.extend_from_slice(raw);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_pow(base: u64, exp: u64, m: u64) -> u64 {
        let mut acc = 1 % m;
        for _ in 0..exp {
            acc = acc * (base % m) % m;
        }
        acc
    }

    #[test]
    fn exhaustive_small_modulus() {
        for m in 1u64..64 {
            for b in 0..m {
                for e in 0..70 {
                    let got = mod_pow(&BigUint::from(b), &BigUint::from(e), &BigUint::from(m));
                    assert_eq!(got, BigUint::from(naive_pow(b, e, m)), "{b}^{e} mod {m}");
                }
            }
        }
    }

    #[test]
    fn textbook_values() {
        let n = BigUint::from(3233u32);
        assert_eq!(mod_pow(&65u32.into(), &17u32.into(), &n), BigUint::from(2790u32));
        assert_eq!(mod_pow(&2790u32.into(), &2753u32.into(), &n), BigUint::from(65u32));
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(mod_inverse(&17u32.into(), &3120u32.into()), Some(BigUint::from(2753u32)));
        assert_eq!(mod_inverse(&6u32.into(), &9u32.into()), None);
        assert_eq!(mod_inverse(&1u32.into(), &1u32.into()), Some(BigUint::zero()));
    }

    #[test]
    fn random_below_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bound = BigUint::from(23u32);
        let mut seen = [false; 23];
        for _ in 0..2000 {
            let x = random_below(&mut rng, &bound);
            assert!(x < bound);
            seen[x.to_u32_digits().first().copied().unwrap_or(0) as usize] = true;
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn fixed_be_padding() {
        assert_eq!(to_fixed_be(&BigUint::zero(), 3), vec![0, 0, 0]);
        assert_eq!(to_fixed_be(&BigUint::from(0x0102u32), 4), vec![0, 0, 1, 2]);
    }

    proptest! {
        #[test]
        fn inverse_is_inverse(a in 1u64..1_000_000, m in 2u64..1_000_000) {
            let (a, m) = (BigUint::from(a), BigUint::from(m));
            match mod_inverse(&a, &m) {
                Some(inv) => prop_assert!(((&a * &inv) % &m).is_one()),
                None => prop_assert!(!gcd(&a, &m).is_one()),
            }
        }
    }
}
