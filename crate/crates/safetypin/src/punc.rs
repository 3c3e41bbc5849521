//! Pairing-free Bloom-filter puncturable encryption.
//!
//! The public key is an array of `m` per-slot hashed-ElGamal public keys;
//! the matching slot secret keys live *only* in a secure-deletion tree at
//! the untrusted block server — the key owner holds just the tree's root
//! key. A tag hashes to `k` slots; encryption encrypts the message
//! independently to each of those slot keys, and puncturing a tag securely
//! deletes its slots. Decryption of a fresh tag fails only if all `k` of
//! its slots happen to have been deleted by earlier punctures, which is
//! the usual Bloom false-positive event.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::elgamal::{self, ElGamalCiphertext};
use crate::crypto::group::{GroupElement, Scalar};
use crate::crypto::hash::{hash_domain, DomainTag, HashStream};
use crate::lhe::SharePke;
use crate::sdstore::{self, BlockServer, SdError, TreeHandle};
use crate::wire;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PuncError {
    #[error("invalid parameters: {0}")]
    Parameter(String),
    #[error("store failure: {0}")]
    Store(#[from] SdError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BloomParams {
    /// Slot count `m`.
    pub slot_count: u32,
    /// Hashes per tag `k`; equals the decryption-failure exponent.
    pub hashes_per_tag: u16,
    /// Number of punctures the key is sized for.
    pub supported_punctures: u32,
    /// Failure probability target at full puncture load: `2^-target_fail_exp`.
    pub target_fail_exp: u8,
}

impl BloomParams {
    /// Sizes the filter for `supported_punctures` punctures and a fresh-tag
    /// failure probability of at most `2^-target_fail_exp` after all of
    /// them: `k = target_fail_exp`, and `m` the smallest count at or above
    /// `k P / ln 2` that meets the bound.
    pub fn derive(supported_punctures: u32, target_fail_exp: u8) -> Self {
        assert!(target_fail_exp >= 1 && supported_punctures >= 1);
        let k = target_fail_exp as u32;
        let mut m = ((k as f64 * supported_punctures as f64) / std::f64::consts::LN_2).ceil() as u32;
        let target = 2f64.powi(-(target_fail_exp as i32));
        loop {
            let candidate = BloomParams {
                slot_count: m,
                hashes_per_tag: target_fail_exp as u16,
                supported_punctures,
                target_fail_exp,
            };
            if candidate.analytic_failure_rate(supported_punctures) <= target {
                return candidate;
            }
            m += 1 + m / 4096;
        }
    }

    pub fn validate(&self) -> Result<(), PuncError> {
        if self.hashes_per_tag == 0 || self.slot_count < self.hashes_per_tag as u32 {
            return Err(PuncError::Parameter(format!(
                "need slot count ({}) >= hashes per tag ({}) >= 1",
                self.slot_count, self.hashes_per_tag
            )));
        }
        Ok(())
    }

    /// Analytic fresh-tag decryption-failure estimate after `punctures`
    /// random-tag punctures: each slot survives one hash draw with
    /// probability `1 - 1/m`, and a fresh tag fails when all `k` of its
    /// slots are dead: `(1 - (1 - 1/m)^(k j))^k`.
    pub fn analytic_failure_rate(&self, punctures: u32) -> f64 {
        let m = self.slot_count as f64;
        let k = self.hashes_per_tag as f64;
        let survive = (1.0 - 1.0 / m).powf(k * punctures as f64);
        (1.0 - survive).powf(k)
    }
}

/// Public key: one ElGamal key per slot, regenerated wholesale at rotation.
#[derive(Debug, Clone)]
pub struct PuncturablePublicKey {
    pub params: BloomParams,
    pub slot_pks: Vec<GroupElement>,
    pub epoch_id: u64,
    /// Commitment to the whole key array, computed once at keygen.
    pub fingerprint: [u8; 32],
}

/// Secret key: nothing but the deletion-tree root key and counters. Slot
/// secrets are only ever materialized transiently by a store read.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PuncturableSecretKey {
    pub tree: TreeHandle,
    pub params: BloomParams,
    pub deleted_count: u32,
    pub epoch_id: u64,
}

pub fn keygen<S: BlockServer + ?Sized>(
    params: BloomParams,
    epoch_id: u64,
    server: &mut S,
    rng: &mut dyn RngCore,
) -> Result<(PuncturablePublicKey, PuncturableSecretKey), PuncError> {
    params.validate()?;
    let mut slot_pks = Vec::with_capacity(params.slot_count as usize);
    let mut slot_secrets = Vec::with_capacity(params.slot_count as usize);
    for _ in 0..params.slot_count {
        let kp = elgamal::keygen(rng);
        slot_pks.push(kp.public);
        slot_secrets.push(kp.secret.to_bytes().to_vec());
    }
    let tree = sdstore::setup(&slot_secrets, server, rng)?;
    let fingerprint = fingerprint_pk(epoch_id, &params, &slot_pks);
    Ok((
        PuncturablePublicKey {
            params,
            slot_pks,
            epoch_id,
            fingerprint,
        },
        PuncturableSecretKey {
            tree,
            params,
            deleted_count: 0,
            epoch_id,
        },
    ))
}

impl PuncturablePublicKey {
    /// Rebuilds a public key from its parts, recomputing the fingerprint
    /// commitment.
    pub fn from_parts(params: BloomParams, epoch_id: u64, slot_pks: Vec<GroupElement>) -> Self {
        let fingerprint = fingerprint_pk(epoch_id, &params, &slot_pks);
        PuncturablePublicKey {
            params,
            slot_pks,
            epoch_id,
            fingerprint,
        }
    }
}

fn fingerprint_pk(epoch_id: u64, params: &BloomParams, slot_pks: &[GroupElement]) -> [u8; 32] {
    let mut inputs: Vec<Vec<u8>> = Vec::with_capacity(slot_pks.len() + 2);
    inputs.push(b"punc-pk-fingerprint".to_vec());
    let mut header = epoch_id.to_be_bytes().to_vec();
    header.extend_from_slice(&params.slot_count.to_be_bytes());
    header.extend_from_slice(&params.hashes_per_tag.to_be_bytes());
    inputs.push(header);
    for pk in slot_pks {
        inputs.push(pk.to_bytes().to_vec());
    }
    hash_domain(DomainTag::Commit, &inputs)
}

/// The `k` slot indices a tag hashes to; a pure function of
/// `(tag, params, epoch)`.
pub fn slot_indices(params: &BloomParams, epoch_id: u64, tag: &[u8]) -> Vec<u32> {
    let mut stream = HashStream::new(
        DomainTag::Bloom,
        &[
            epoch_id.to_be_bytes().as_ref(),
            params.slot_count.to_be_bytes().as_ref(),
            tag,
        ],
    );
    stream
        .indices(params.hashes_per_tag as usize, params.slot_count as u64)
        .into_iter()
        .map(|i| i as u32)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PuncCiphertext {
    pub epoch_id: u64,
    pub tag: Vec<u8>,
    pub slot_cts: Vec<Vec<u8>>,
}

impl PuncCiphertext {
    /// `epochId(8B) || tag(len-prefixed) || kHashes(2B) || slotCt_1..k
    /// (each len-prefixed)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.epoch_id.to_be_bytes().to_vec();
        wire::put_field(&mut out, &self.tag);
        out.extend_from_slice(&(self.slot_cts.len() as u16).to_be_bytes());
        for ct in &self.slot_cts {
            wire::put_field(&mut out, ct);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let (epoch_id, rest) = wire::take_u64(bytes).ok()?;
        let (tag, rest) = wire::take_field(rest).ok()?;
        let (count, mut rest) = wire::take_u16(rest).ok()?;
        let mut slot_cts = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let (ct, r) = wire::take_field(rest).ok()?;
            slot_cts.push(ct.to_vec());
            rest = r;
        }
        wire::expect_end(rest).ok()?;
        Some(PuncCiphertext {
            epoch_id,
            tag: tag.to_vec(),
            slot_cts,
        })
    }
}

/// Encrypts `msg` independently to each of the tag's slot keys.
pub fn encrypt(
    pk: &PuncturablePublicKey,
    tag: &[u8],
    ad: &[u8],
    msg: &[u8],
    rng: &mut dyn RngCore,
) -> PuncCiphertext {
    assert!(!tag.is_empty(), "tag must be nonempty");
    let slots = slot_indices(&pk.params, pk.epoch_id, tag);
    let slot_cts = slots
        .iter()
        .map(|&idx| elgamal::encrypt(&pk.slot_pks[idx as usize], ad, msg, rng).to_bytes())
        .collect();
    PuncCiphertext {
        epoch_id: pk.epoch_id,
        tag: tag.to_vec(),
        slot_cts,
    }
}

/// Tries the tag's slots in index order; the first slot whose key is still
/// in the store and whose ciphertext authenticates yields the message.
/// `None` means punctured-or-invalid, indistinguishably.
pub fn decrypt<S: BlockServer + ?Sized>(
    sk: &PuncturableSecretKey,
    ct: &PuncCiphertext,
    ad: &[u8],
    server: &mut S,
) -> Option<Vec<u8>> {
    if ct.epoch_id != sk.epoch_id {
        return None;
    }
    let slots = slot_indices(&sk.params, sk.epoch_id, &ct.tag);
    if slots.len() != ct.slot_cts.len() {
        return None;
    }
    for (slot_ct, &idx) in ct.slot_cts.iter().zip(&slots) {
        let Some(secret_bytes) = sdstore::read(&sk.tree, idx, server) else {
            continue;
        };
        let Ok(secret) = Scalar::from_bytes(&secret_bytes) else {
            continue;
        };
        let Ok(parsed) = ElGamalCiphertext::from_bytes(slot_ct) else {
            continue;
        };
        if let Some(msg) = elgamal::decrypt(&secret, ad, &parsed) {
            return Some(msg);
        }
    }
    None
}

/// Securely deletes every slot the tag hashes to. Idempotent; the root key
/// rotates with each fresh deletion.
pub fn puncture<S: BlockServer + ?Sized>(
    sk: &mut PuncturableSecretKey,
    tag: &[u8],
    server: &mut S,
    rng: &mut dyn RngCore,
) -> Result<(), PuncError> {
    let mut slots = slot_indices(&sk.params, sk.epoch_id, tag);
    slots.sort_unstable();
    slots.dedup();
    for idx in slots {
        let updated = sdstore::delete(&sk.tree, idx, server, rng)?;
        if updated.root_key != sk.tree.root_key {
            sk.deleted_count += 1;
        }
        sk.tree.root_key.erase();
        sk.tree = updated;
    }
    Ok(())
}

/// Rotation trigger: half the slot keys are gone.
pub fn needs_rotation(sk: &PuncturableSecretKey) -> bool {
    2 * sk.deleted_count as u64 >= sk.params.slot_count as u64
}

/// Full rotation: fresh key material under the next epoch id in a new
/// store; the old root key is overwritten before being dropped.
pub fn rotate<S: BlockServer + ?Sized>(
    old: &mut PuncturableSecretKey,
    new_server: &mut S,
    rng: &mut dyn RngCore,
) -> Result<(PuncturablePublicKey, PuncturableSecretKey), PuncError> {
    let next = keygen(old.params, old.epoch_id + 1, new_server, rng)?;
    old.tree.root_key.erase();
    Ok(next)
}

/// Post-compromise adversary: everything the store ever held plus the
/// *current* root key. Returns the message if any slot of the ciphertext
/// is still recoverable that way.
pub fn adversary_decrypt(
    sk: &PuncturableSecretKey,
    ct: &PuncCiphertext,
    ad: &[u8],
    history: &[(u64, Vec<u8>)],
) -> Option<Vec<u8>> {
    if ct.epoch_id != sk.epoch_id {
        return None;
    }
    let recovered = sdstore::replay_recoverable(&sk.tree, history);
    let slots = slot_indices(&sk.params, sk.epoch_id, &ct.tag);
    for (slot_ct, &idx) in ct.slot_cts.iter().zip(&slots) {
        let Some(candidates) = recovered.get(&idx) else {
            continue;
        };
        let Ok(parsed) = ElGamalCiphertext::from_bytes(slot_ct) else {
            continue;
        };
        for secret_bytes in candidates {
            let Ok(secret) = Scalar::from_bytes(secret_bytes) else {
                continue;
            };
            if let Some(msg) = elgamal::decrypt(&secret, ad, &parsed) {
                return Some(msg);
            }
        }
    }
    None
}

/// [`SharePke`] adapter so location-hiding encryption can ride on the
/// puncturable scheme: the tag is fixed per backup context.
#[derive(Debug, Clone)]
pub struct PuncPke {
    pub tag: Vec<u8>,
}

impl SharePke for PuncPke {
    type PublicKey = PuncturablePublicKey;

    fn fingerprint(&self, pk: &Self::PublicKey) -> [u8; 32] {
        pk.fingerprint
    }

    fn encrypt_share(
        &self,
        pk: &Self::PublicKey,
        ad: &[u8],
        plaintext: &[u8],
        rng: &mut dyn RngCore,
    ) -> Vec<u8> {
        encrypt(pk, &self.tag, ad, plaintext, rng).to_bytes()
    }
}
