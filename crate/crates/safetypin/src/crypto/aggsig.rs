//! Aggregatable signatures behind a pluggable interface.
//!
//! The epoch protocol only needs "all online HSMs signed this exact
//! message", so the default backend is the trivially-auditable one: a
//! vector of individual Schnorr signatures, verified individually. A true
//! multisignature backend (BLS over BLS12-381, with proof-of-possession at
//! key registration to block rogue-key attacks) is available behind the
//! same interface.

use bls12_381::hash_to_curve::{ExpandMsgXmd, HashToCurve};
use bls12_381::{
    multi_miller_loop, G1Affine, G1Projective, G2Affine, G2Prepared, G2Projective, Gt,
    Scalar as BlsScalar,
};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2_v09::Sha256;

use super::group::{GroupElement, Scalar};
use super::hash::{DomainTag, HashStream};
use super::CryptoError;

/// A signature scheme that supports combining many signatures over one
/// message into a single object verified against the signer set.
pub trait AggScheme {
    type SigningKey: Clone;
    type VerifyKey: Clone + PartialEq;
    type Signature: Clone;
    type Combined: Clone;

    fn keygen(&self, rng: &mut dyn RngCore) -> (Self::SigningKey, Self::VerifyKey);

    /// Validates a verify key at registration time (proof-of-possession
    /// where the backend needs one). Keys that fail must not join the set.
    fn register(&self, vk: &Self::VerifyKey) -> bool;

    fn sign(&self, sk: &Self::SigningKey, msg: &[u8]) -> Self::Signature;

    fn verify_one(&self, vk: &Self::VerifyKey, msg: &[u8], sig: &Self::Signature) -> bool;

    fn combine(&self, sigs: &[Self::Signature]) -> Result<Self::Combined, CryptoError>;

    /// True iff every signer in `vks` contributed a valid signature over
    /// `msg` (positional pairing for backends that keep signatures apart).
    fn verify(&self, vks: &[Self::VerifyKey], msg: &[u8], combined: &Self::Combined) -> bool;
}

// ---------------------------------------------------------------------------
// Concat backend: Schnorr over the ristretto group, one signature per signer.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default)]
pub struct ConcatSchnorr;

#[derive(Debug, Clone)]
pub struct SchnorrSigningKey {
    secret: Scalar,
    public: GroupElement,
}

impl SchnorrSigningKey {
    pub fn from_parts(secret: Scalar, public: GroupElement) -> Self {
        SchnorrSigningKey { secret, public }
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.secret.to_bytes()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchnorrVerifyKey(pub GroupElement);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchnorrSignature {
    pub commitment: [u8; 32],
    pub response: [u8; 32],
}

fn schnorr_challenge(commitment: &[u8; 32], pk: &GroupElement, msg: &[u8]) -> Scalar {
    let mut stream = HashStream::new(
        DomainTag::Commit,
        &[
            b"schnorr-challenge".as_ref(),
            commitment.as_ref(),
            pk.to_bytes().as_ref(),
            msg,
        ],
    );
    Scalar::from_stream(&mut stream)
}

impl AggScheme for ConcatSchnorr {
    type SigningKey = SchnorrSigningKey;
    type VerifyKey = SchnorrVerifyKey;
    type Signature = SchnorrSignature;
    type Combined = Vec<SchnorrSignature>;

    fn keygen(&self, rng: &mut dyn RngCore) -> (Self::SigningKey, Self::VerifyKey) {
        let secret = Scalar::random(rng);
        let public = GroupElement::base_mul(&secret);
        (SchnorrSigningKey { secret, public }, SchnorrVerifyKey(public))
    }

    fn register(&self, _vk: &Self::VerifyKey) -> bool {
        // Individual verification cannot be rogue-keyed.
        true
    }

    fn sign(&self, sk: &Self::SigningKey, msg: &[u8]) -> Self::Signature {
        // Deterministic nonce derived from the secret and message.
        let mut stream = HashStream::new(
            DomainTag::Commit,
            &[
                b"schnorr-nonce".as_ref(),
                sk.secret.to_bytes().as_ref(),
                msg,
            ],
        );
        let k = Scalar::from_stream(&mut stream);
        let commitment = GroupElement::base_mul(&k).to_bytes();
        let e = schnorr_challenge(&commitment, &sk.public, msg);
        let response = k.add(&e.mul(&sk.secret));
        SchnorrSignature {
            commitment,
            response: response.to_bytes(),
        }
    }

    fn verify_one(&self, vk: &Self::VerifyKey, msg: &[u8], sig: &Self::Signature) -> bool {
        let Ok(commitment) = GroupElement::from_bytes(&sig.commitment) else {
            return false;
        };
        let Ok(response) = Scalar::from_bytes(&sig.response) else {
            return false;
        };
        let e = schnorr_challenge(&sig.commitment, &vk.0, msg);
        GroupElement::base_mul(&response) == commitment.add(&vk.0.mul(&e))
    }

    fn combine(&self, sigs: &[Self::Signature]) -> Result<Self::Combined, CryptoError> {
        if sigs.is_empty() {
            return Err(CryptoError::Signature("no signatures to combine".into()));
        }
        Ok(sigs.to_vec())
    }

    fn verify(&self, vks: &[Self::VerifyKey], msg: &[u8], combined: &Self::Combined) -> bool {
        vks.len() == combined.len()
            && vks
                .iter()
                .zip(combined)
                .all(|(vk, sig)| self.verify_one(vk, msg, sig))
    }
}

// ---------------------------------------------------------------------------
// BLS multisignature backend with proof-of-possession.
// ---------------------------------------------------------------------------

const BLS_DST_SIG: &[u8] = b"safetypin/commit:bls-sig";
const BLS_DST_POP: &[u8] = b"safetypin/commit:bls-pop";

#[derive(Debug, Clone, Copy, Default)]
pub struct BlsMultisig;

#[derive(Clone)]
pub struct BlsSigningKey(BlsScalar);

impl BlsSigningKey {
    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let arr: [u8; 32] = bytes.try_into().ok()?;
        Option::from(BlsScalar::from_bytes(&arr)).map(BlsSigningKey)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlsVerifyKey {
    pub public: G2Affine,
    /// Proof of possession: signature over the public key bytes under the
    /// pop domain. Checked at registration.
    pub pop: G1Affine,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlsSignature(pub G1Affine);

fn bls_hash(msg: &[u8], dst: &[u8]) -> G1Projective {
    <G1Projective as HashToCurve<ExpandMsgXmd<Sha256>>>::hash_to_curve(msg, dst)
}

fn bls_scalar(rng: &mut dyn RngCore) -> BlsScalar {
    let mut wide = [0u8; 64];
    rng.fill_bytes(&mut wide);
    BlsScalar::from_bytes_wide(&wide)
}

/// `e(sig, g2) == e(hash, pk)` via one double Miller loop.
fn pairing_check(sig: &G1Affine, hash: &G1Projective, pk: &G2Affine) -> bool {
    let neg_sig = -*sig;
    let lhs = multi_miller_loop(&[
        (&neg_sig, &G2Prepared::from(G2Affine::generator())),
        (&G1Affine::from(hash), &G2Prepared::from(*pk)),
    ])
    .final_exponentiation();
    lhs == Gt::identity()
}

impl AggScheme for BlsMultisig {
    type SigningKey = BlsSigningKey;
    type VerifyKey = BlsVerifyKey;
    type Signature = BlsSignature;
    type Combined = BlsSignature;

    fn keygen(&self, rng: &mut dyn RngCore) -> (Self::SigningKey, Self::VerifyKey) {
        let sk = bls_scalar(rng);
        let public = G2Affine::from(G2Projective::generator() * sk);
        let pop = G1Affine::from(bls_hash(&public.to_compressed(), BLS_DST_POP) * sk);
        (BlsSigningKey(sk), BlsVerifyKey { public, pop })
    }

    fn register(&self, vk: &Self::VerifyKey) -> bool {
        pairing_check(
            &vk.pop,
            &bls_hash(&vk.public.to_compressed(), BLS_DST_POP),
            &vk.public,
        )
    }

    fn sign(&self, sk: &Self::SigningKey, msg: &[u8]) -> Self::Signature {
        BlsSignature(G1Affine::from(bls_hash(msg, BLS_DST_SIG) * sk.0))
    }

    fn verify_one(&self, vk: &Self::VerifyKey, msg: &[u8], sig: &Self::Signature) -> bool {
        pairing_check(&sig.0, &bls_hash(msg, BLS_DST_SIG), &vk.public)
    }

    fn combine(&self, sigs: &[Self::Signature]) -> Result<Self::Combined, CryptoError> {
        if sigs.is_empty() {
            return Err(CryptoError::Signature("no signatures to combine".into()));
        }
        let sum = sigs
            .iter()
            .fold(G1Projective::identity(), |acc, s| acc + G1Projective::from(s.0));
        Ok(BlsSignature(G1Affine::from(sum)))
    }

    fn verify(&self, vks: &[Self::VerifyKey], msg: &[u8], combined: &Self::Combined) -> bool {
        if vks.is_empty() {
            return false;
        }
        let agg_pk = vks
            .iter()
            .fold(G2Projective::identity(), |acc, vk| acc + G2Projective::from(vk.public));
        pairing_check(&combined.0, &bls_hash(msg, BLS_DST_SIG), &G2Affine::from(agg_pk))
    }
}
