//! Signature scheme used for transactions, blocks and protocol messages.
//!
//! Two schemes sit behind one contract. `Ed25519` is the real scheme.
//! `HashStandIn` binds a signature to `(public key, message)` with a plain
//! hash; it satisfies the verify contract but is forgeable by anyone who knows
//! the public key, so it exists only to speed up large simulations.

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::RngCore;

use crate::codec::{hash_parts, Digest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Ed25519,
    HashStandIn,
}

impl Scheme {
    pub fn tag(self) -> u8 {
        match self {
            Scheme::Ed25519 => 1,
            Scheme::HashStandIn => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Scheme> {
        match tag {
            1 => Some(Scheme::Ed25519),
            2 => Some(Scheme::HashStandIn),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Ed25519 => "ed25519",
            Scheme::HashStandIn => "hash-stand-in",
        }
    }

    pub fn parse(name: &str) -> Option<Scheme> {
        match name {
            "ed25519" => Some(Scheme::Ed25519),
            "hash-stand-in" => Some(Scheme::HashStandIn),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey {
    pub scheme: Scheme,
    pub bytes: [u8; 32],
}

impl PublicKey {
    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        match self.scheme {
            Scheme::Ed25519 => {
                let Ok(vk) = VerifyingKey::from_bytes(&self.bytes) else {
                    return false;
                };
                let Ok(sig) = ed25519_dalek::Signature::from_slice(&sig.0) else {
                    return false;
                };
                vk.verify(msg, &sig).is_ok()
            }
            Scheme::HashStandIn => sig.0 == stand_in_tag(&self.bytes, msg).0,
        }
    }

    /// Scheme tag followed by the key bytes.
    pub fn to_bytes(&self) -> [u8; 33] {
        let mut out = [0u8; 33];
        out[0] = self.scheme.tag();
        out[1..].copy_from_slice(&self.bytes);
        out
    }

    pub fn short(&self) -> String {
        hex::encode(&self.bytes[..4])
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pk:{}", self.short())
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.short())
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Signature(pub Vec<u8>);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.0.len().min(4);
        write!(f, "sig:{}", hex::encode(&self.0[..n]))
    }
}

#[derive(Clone)]
pub struct KeyPair {
    secret: [u8; 32],
    public: PublicKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn from_seed(scheme: Scheme, seed: [u8; 32]) -> KeyPair {
        let bytes = match scheme {
            Scheme::Ed25519 => SigningKey::from_bytes(&seed).verifying_key().to_bytes(),
            Scheme::HashStandIn => hash_parts(&[b"stand-in-pk", &seed]).0,
        };
        KeyPair { secret: seed, public: PublicKey { scheme, bytes } }
    }

    pub fn generate<R: RngCore + ?Sized>(scheme: Scheme, rng: &mut R) -> KeyPair {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        KeyPair::from_seed(scheme, seed)
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        match self.public.scheme {
            Scheme::Ed25519 => {
                Signature(SigningKey::from_bytes(&self.secret).sign(msg).to_bytes().to_vec())
            }
            Scheme::HashStandIn => Signature(stand_in_tag(&self.public.bytes, msg).0.to_vec()),
        }
    }
}

fn stand_in_tag(pk: &[u8; 32], msg: &[u8]) -> Digest {
    hash_parts(&[b"stand-in-sig", pk, msg])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn round_trip(scheme: Scheme, trials: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..trials {
            let kp = KeyPair::generate(scheme, &mut rng);
            let other = KeyPair::generate(scheme, &mut rng);
            let len = rng.gen_range(1..80);
            let msg: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let sig = kp.sign(&msg);
            assert!(kp.public().verify(&msg, &sig));
            let mut tampered = msg.clone();
            tampered[rng.gen_range(0..len)] ^= 0x01;
            assert!(!kp.public().verify(&tampered, &sig));
            assert!(!other.public().verify(&msg, &sig));
        }
    }

    #[test]
    fn ed25519_contract() {
        round_trip(Scheme::Ed25519, 1000);
    }

    #[test]
    fn stand_in_contract() {
        round_trip(Scheme::HashStandIn, 1000);
    }

    #[test]
    fn malformed_signatures_fail() {
        let kp = KeyPair::from_seed(Scheme::Ed25519, [9; 32]);
        assert!(!kp.public().verify(b"m", &Signature(vec![1, 2, 3])));
        assert!(!kp.public().verify(b"m", &Signature::default()));
    }

    #[test]
    fn keys_are_seed_deterministic() {
        let a = KeyPair::from_seed(Scheme::Ed25519, [5; 32]);
        let b = KeyPair::from_seed(Scheme::Ed25519, [5; 32]);
        assert_eq!(a.public(), b.public());
        assert_eq!(a.sign(b"x"), b.sign(b"x"));
    }
}
