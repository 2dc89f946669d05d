//! Finite-field Diffie–Hellman.

use num_bigint::BigUint;
use num_traits::One;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::arith::{mod_pow, random_in_range, to_fixed_be};
use super::prime::is_probable_prime;
use super::CryptoError;

/// 256-bit safe prime `p = 2q + 1` with `p = 3 mod 8`, so 2 generates the
/// full multiplicative group.
const DEFAULT_MODULUS_HEX: &str = "892d054a9572aaac81ba8d894ee474e52524823401810c99d6d6c86d63124f33";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DhParams {
    x: BigUint,
    g: BigUint,
}

/// Named parameter sets selectable from scenario files.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DhParamsId {
    #[default]
    Default256,
    /// x = 23, g = 5. Tiny; handshakes fail on degenerate secrets often.
    Toy23,
}

impl DhParamsId {
    pub fn params(self) -> DhParams {
        match self {
            DhParamsId::Default256 => DhParams::default_256(),
            DhParamsId::Toy23 => DhParams::toy(),
        }
    }
}

impl DhParams {
    pub fn new(x: BigUint, g: BigUint) -> Result<Self, CryptoError> {
        if !is_probable_prime(&x) {
            return Err(CryptoError::InvalidParams("modulus is not prime"));
        }
        if g <= BigUint::one() || g >= x {
            return Err(CryptoError::InvalidParams("generator outside (1, x)"));
        }
        Ok(Self { x, g })
    }

    pub fn default_256() -> Self {
        Self {
            x: BigUint::parse_bytes(DEFAULT_MODULUS_HEX.as_bytes(), 16).expect("valid constant"),
            g: BigUint::from(2u32),
        }
    }

    pub fn toy() -> Self {
        Self {
            x: BigUint::from(23u32),
            g: BigUint::from(5u32),
        }
    }

    pub fn modulus(&self) -> &BigUint {
        &self.x
    }

    pub fn generator(&self) -> &BigUint {
        &self.g
    }

    /// Encoded width of group elements.
    pub fn element_len(&self) -> usize {
        self.x.bits().div_ceil(8) as usize
    }

    pub fn encode(&self, value: &BigUint) -> Vec<u8> {
        to_fixed_be(value, self.element_len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DhKeyPair {
    secret: BigUint,
    pub public: BigUint,
}

impl DhKeyPair {
    pub fn from_secret(params: &DhParams, secret: BigUint) -> Result<Self, CryptoError> {
        if secret < BigUint::one() || secret >= params.x {
            return Err(CryptoError::InvalidParams("secret outside {1..x-1}"));
        }
        let public = mod_pow(&params.g, &secret, &params.x);
        Ok(Self { secret, public })
    }

    pub fn secret(&self) -> &BigUint {
        &self.secret
    }
}

/// Fresh ephemeral pair with the secret uniform in `{1..x-1}`.
pub fn dh_keypair<R: RngCore + ?Sized>(params: &DhParams, rng: &mut R) -> DhKeyPair {
    let secret = random_in_range(rng, &BigUint::one(), &(&params.x - 1u32));
    DhKeyPair::from_secret(params, secret).expect("sampled secret is in range")
}

pub fn dh_shared(own: &DhKeyPair, other_public: &BigUint, params: &DhParams) -> Result<BigUint, CryptoError> {
    if other_public < &BigUint::one() || other_public >= &params.x {
        return Err(CryptoError::PublicOutOfRange);
    }
    Ok(mod_pow(other_public, &own.secret, &params.x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute_pow(b: u64, e: u64, m: u64) -> u64 {
        (0..e).fold(1 % m, |acc, _| acc * b % m)
    }

    #[test]
    fn worked_example() {
        let p = DhParams::toy();
        let a = DhKeyPair::from_secret(&p, 4u32.into()).unwrap();
        let b = DhKeyPair::from_secret(&p, 3u32.into()).unwrap();
        assert_eq!(a.public, BigUint::from(brute_pow(5, 4, 23)));
        assert_eq!(a.public, BigUint::from(4u32));
        assert_eq!(b.public, BigUint::from(brute_pow(5, 3, 23)));
        assert_eq!(b.public, BigUint::from(10u32));
        let s1 = dh_shared(&a, &b.public, &p).unwrap();
        let s2 = dh_shared(&b, &a.public, &p).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1, BigUint::from(brute_pow(10, 4, 23)));
        assert_eq!(s1, BigUint::from(18u32));
    }

    #[test]
    fn fermat_boundary() {
        let p = DhParams::toy();
        let k = DhKeyPair::from_secret(&p, 22u32.into()).unwrap();
        assert_eq!(k.public, BigUint::one());
    }

    #[test]
    fn public_range_checked() {
        let p = DhParams::toy();
        let k = DhKeyPair::from_secret(&p, 4u32.into()).unwrap();
        assert_eq!(dh_shared(&k, &0u32.into(), &p), Err(CryptoError::PublicOutOfRange));
        assert_eq!(dh_shared(&k, &23u32.into(), &p), Err(CryptoError::PublicOutOfRange));
        assert_eq!(dh_shared(&k, &1u32.into(), &p).unwrap(), BigUint::one());
    }

    #[test]
    fn default_group_is_safe_prime_with_generator_two() {
        let p = DhParams::default_256();
        assert_eq!(p.modulus().bits(), 256);
        let q = (p.modulus() - 1u32) >> 1u32;
        assert!(is_probable_prime(p.modulus()));
        assert!(is_probable_prime(&q));
        // 2^q = -1 means 2 is a non-residue, hence of order 2q
        assert_eq!(mod_pow(p.generator(), &q, p.modulus()), p.modulus() - 1u32);
        assert!(DhParams::new(p.modulus().clone(), p.generator().clone()).is_ok());
    }

    #[test]
    fn params_validation() {
        assert!(DhParams::new(21u32.into(), 2u32.into()).is_err());
        assert!(DhParams::new(23u32.into(), 1u32.into()).is_err());
        assert!(DhParams::new(23u32.into(), 23u32.into()).is_err());
    }

    #[test]
    fn agreement_over_seeded_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for params in [DhParams::toy(), DhParams::default_256()] {
            for _ in 0..1000 {
                let a = dh_keypair(&params, &mut rng);
                let b = dh_keypair(&params, &mut rng);
                assert!(a.secret() >= &BigUint::one() && a.secret() < params.modulus());
                assert_eq!(
                    dh_shared(&a, &b.public, &params).unwrap(),
                    dh_shared(&b, &a.public, &params).unwrap()
                );
            }
        }
    }
}
