//! Hashed ElGamal hybrid encryption.
//!
//! A keypair is `(x, g^x)`. Encryption to `X` computes
//! `(g^r, AE.Encrypt(Hash'(ad || X^r), msg))`; the associated data is bound
//! by prepending it to the key-derivation hash rather than through an AEAD
//! ad channel, so a mismatched `ad` simply derives the wrong key and
//! authentication fails.

use rand::RngCore;

use super::ae::{self, AeCiphertext, AeKey};
use super::group::{GroupElement, Scalar};
use super::hash::{hash_domain, DomainTag};
use super::CryptoError;
use crate::wire;

#[derive(Debug, Clone)]
pub struct ElGamalKeypair {
    pub public: GroupElement,
    pub secret: Scalar,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElGamalCiphertext {
    pub ephemeral: GroupElement,
    pub body: AeCiphertext,
}

pub fn keygen(rng: &mut dyn RngCore) -> ElGamalKeypair {
    let secret = Scalar::random(rng);
    ElGamalKeypair {
        public: GroupElement::base_mul(&secret),
        secret,
    }
}

fn derive_key(ad: &[u8], shared: &GroupElement) -> AeKey {
    AeKey(hash_domain(
        DomainTag::ElgamalKdf,
        &[ad, shared.to_bytes().as_ref()],
    ))
}

pub fn encrypt(
    pk: &GroupElement,
    ad: &[u8],
    msg: &[u8],
    rng: &mut dyn RngCore,
) -> ElGamalCiphertext {
    let r = Scalar::random(rng);
    let ephemeral = GroupElement::base_mul(&r);
    let shared = pk.mul(&r);
    let key = derive_key(ad, &shared);
    ElGamalCiphertext {
        ephemeral,
        body: ae::encrypt(&key, msg, rng),
    }
}

/// Returns the plaintext, or `None` on any authentication failure (wrong
/// secret key, wrong associated data, or a tampered ciphertext — the
/// failure classes are indistinguishable to the caller).
pub fn decrypt(sk: &Scalar, ad: &[u8], ct: &ElGamalCiphertext) -> Option<Vec<u8>> {
    let shared = ct.ephemeral.mul(sk);
    let key = derive_key(ad, &shared);
    ae::decrypt(&key, &ct.body)
}

impl ElGamalCiphertext {
    pub fn to_bytes(&self) -> Vec<u8> {
        wire::encode_fields(&[self.ephemeral.to_bytes().to_vec(), self.body.to_bytes()])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let fields = wire::decode_fields(bytes)
            .map_err(|e| CryptoError::Encoding(format!("elgamal ciphertext: {e}")))?;
        if fields.len() != 2 {
            return Err(CryptoError::Encoding(
                "elgamal ciphertext needs 2 fields".into(),
            ));
        }
        let ephemeral = GroupElement::from_bytes(&fields[0])?;
        let body = AeCiphertext::from_bytes(&fields[1])
            .ok_or_else(|| CryptoError::Encoding("ae body too short".into()))?;
        Ok(ElGamalCiphertext { ephemeral, body })
    }
}
