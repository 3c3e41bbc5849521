//! Runtime-selectable aggregate-signature backend for the simulator.
//!
//! The concat backend (independent Schnorr signatures, verified one by
//! one) is the default and doubles as the oracle; BLS multisignatures are
//! the compact alternative. Both sit behind the same enum so actor code
//! stays backend-agnostic.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::crypto::aggsig::{
    AggScheme, BlsMultisig, BlsSignature, BlsSigningKey, BlsVerifyKey, ConcatSchnorr,
    SchnorrSignature, SchnorrSigningKey, SchnorrVerifyKey,
};
use crate::crypto::group::{GroupElement, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SigBackend {
    Concat,
    Bls,
}

#[derive(Clone)]
pub enum SignerKey {
    Concat(SchnorrSigningKey),
    Bls(BlsSigningKey),
}

#[derive(Debug, Clone, PartialEq)]
pub enum VerifyKey {
    Concat(SchnorrVerifyKey),
    Bls(BlsVerifyKey),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sig {
    Concat(SchnorrSignature),
    Bls(BlsSignature),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CombinedSig {
    Concat(Vec<SchnorrSignature>),
    Bls(BlsSignature),
}

pub fn keygen(backend: SigBackend, rng: &mut dyn RngCore) -> (SignerKey, VerifyKey) {
    match backend {
        SigBackend::Concat => {
            let (sk, vk) = ConcatSchnorr.keygen(rng);
            (SignerKey::Concat(sk), VerifyKey::Concat(vk))
        }
        SigBackend::Bls => {
            let (sk, vk) = BlsMultisig.keygen(rng);
            (SignerKey::Bls(sk), VerifyKey::Bls(vk))
        }
    }
}

/// Proof-of-possession check at registration (always true for concat).
pub fn register(vk: &VerifyKey) -> bool {
    match vk {
        VerifyKey::Concat(vk) => ConcatSchnorr.register(vk),
        VerifyKey::Bls(vk) => BlsMultisig.register(vk),
    }
}

pub fn sign(sk: &SignerKey, msg: &[u8]) -> Sig {
    match sk {
        SignerKey::Concat(sk) => Sig::Concat(ConcatSchnorr.sign(sk, msg)),
        SignerKey::Bls(sk) => Sig::Bls(BlsMultisig.sign(sk, msg)),
    }
}

pub fn combine(sigs: &[Sig]) -> Option<CombinedSig> {
    match sigs.first()? {
        Sig::Concat(_) => {
            let inner: Option<Vec<SchnorrSignature>> = sigs
                .iter()
                .map(|s| match s {
                    Sig::Concat(s) => Some(s.clone()),
                    _ => None,
                })
                .collect();
            Some(CombinedSig::Concat(ConcatSchnorr.combine(&inner?).ok()?))
        }
        Sig::Bls(_) => {
            let inner: Option<Vec<BlsSignature>> = sigs
                .iter()
                .map(|s| match s {
                    Sig::Bls(s) => Some(s.clone()),
                    _ => None,
                })
                .collect();
            Some(CombinedSig::Bls(BlsMultisig.combine(&inner?).ok()?))
        }
    }
}

/// True iff every key in `vks` contributed a valid signature over `msg`.
pub fn verify(vks: &[VerifyKey], msg: &[u8], combined: &CombinedSig) -> bool {
    match combined {
        CombinedSig::Concat(sigs) => {
            let inner: Option<Vec<SchnorrVerifyKey>> = vks
                .iter()
                .map(|vk| match vk {
                    VerifyKey::Concat(vk) => Some(*vk),
                    _ => None,
                })
                .collect();
            inner.is_some_and(|vks| ConcatSchnorr.verify(&vks, msg, sigs))
        }
        CombinedSig::Bls(sig) => {
            let inner: Option<Vec<BlsVerifyKey>> = vks
                .iter()
                .map(|vk| match vk {
                    VerifyKey::Bls(vk) => Some(vk.clone()),
                    _ => None,
                })
                .collect();
            inner.is_some_and(|vks| BlsMultisig.verify(&vks, msg, sig))
        }
    }
}

// Hex-blob persistence for the concat backend (the one the key ceremony
// writes to disk).

#[derive(Debug, Serialize, Deserialize)]
pub struct PersistedSigner {
    pub backend: SigBackend,
    pub secret_hex: String,
    pub public_hex: String,
}

pub fn persist_signer(sk: &SignerKey, vk: &VerifyKey) -> PersistedSigner {
    match (sk, vk) {
        (SignerKey::Concat(sk), VerifyKey::Concat(vk)) => PersistedSigner {
            backend: SigBackend::Concat,
            secret_hex: hex::encode(sk.secret_bytes()),
            public_hex: hex::encode(vk.0.to_bytes()),
        },
        (SignerKey::Bls(sk), VerifyKey::Bls(vk)) => PersistedSigner {
            backend: SigBackend::Bls,
            secret_hex: hex::encode(sk.to_bytes()),
            public_hex: {
                let mut blob = vk.public.to_compressed().to_vec();
                blob.extend_from_slice(&vk.pop.to_compressed());
                hex::encode(blob)
            },
        },
        _ => unreachable!("mismatched backend pair"),
    }
}

pub fn restore_signer(p: &PersistedSigner) -> Option<(SignerKey, VerifyKey)> {
    match p.backend {
        SigBackend::Concat => {
            let secret = Scalar::from_bytes(&hex::decode(&p.secret_hex).ok()?).ok()?;
            let public = GroupElement::from_bytes(&hex::decode(&p.public_hex).ok()?).ok()?;
            Some((
                SignerKey::Concat(SchnorrSigningKey::from_parts(secret, public)),
                VerifyKey::Concat(SchnorrVerifyKey(public)),
            ))
        }
        SigBackend::Bls => {
            let secret = BlsSigningKey::from_bytes(&hex::decode(&p.secret_hex).ok()?)?;
            let blob = hex::decode(&p.public_hex).ok()?;
            if blob.len() != 96 + 48 {
                return None;
            }
            let public = Option::from(bls12_381::G2Affine::from_compressed(
                blob[..96].try_into().ok()?,
            ))?;
            let pop = Option::from(bls12_381::G1Affine::from_compressed(
                blob[96..].try_into().ok()?,
            ))?;
            Some((
                SignerKey::Bls(secret),
                VerifyKey::Bls(BlsVerifyKey { public, pop }),
            ))
        }
    }
}
