//! Miller–Rabin primality and next-prime search.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arith::{mod_pow, random_in_range};

pub const MILLER_RABIN_ROUNDS: usize = 40;

/// Fixed seed of the witness sequence; primality verdicts are reproducible.
const WITNESS_SEED: u64 = 0x5eed_0f4d_11e5;

const SMALL_PRIMES: [u32; 46] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131, 137,
    139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199,
];

pub fn is_probable_prime(n: &BigUint) -> bool {
    is_probable_prime_rounds(n, MILLER_RABIN_ROUNDS)
}

pub fn is_probable_prime_rounds(n: &BigUint, rounds: usize) -> bool {
    if let Some(small) = n.to_u32() {
        if small < 2 {
            return false;
        }
        for &p in &SMALL_PRIMES {
            if small == p {
                return true;
            }
            if small % p == 0 {
                return false;
            }
        }
        if small < 199 * 199 {
            return true;
        }
    } else {
        for &p in &SMALL_PRIMES {
            if (n % p).is_zero() {
                return false;
            }
        }
    }

    let one = BigUint::one();
    let n_minus_1 = n - &one;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    let two = BigUint::from(2u32);
    let high = n - &two;

    let mut rng = ChaCha8Rng::seed_from_u64(WITNESS_SEED);
    'witness: for _ in 0..rounds {
        let a = random_in_range(&mut rng, &two, &high);
        let mut x = mod_pow(&a, &d, n);
        if x == one || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = (&x * &x) % n;
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Smallest probable prime `>= start`.
pub fn next_prime(start: &BigUint) -> BigUint {
    let two = BigUint::from(2u32);
    if start <= &two {
        return two;
    }
    let mut c = start.clone();
    if !c.bit(0) {
        c += 1u32;
    }
    while !is_probable_prime(&c) {
        c += &two;
    }
    c
}
