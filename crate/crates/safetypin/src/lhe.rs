//! Location-hiding encryption.
//!
//! A backup message is protected by a fresh transport key that is Shamir
//! split `t`-of-`n` and encrypted, share by share, to a cluster of `n`
//! public keys drawn from the `N`-key master list by hashing `(salt, pin)`.
//! The ciphertext carries no cluster indices: without the PIN an attacker
//! learns nothing about *which* `n` keys it would need to compromise.
//!
//! The module is generic over the share-encrypting PKE: unit tests
//! instantiate it with plain hashed ElGamal, the full system with the
//! puncturable scheme.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::crypto::ae::{self, AeCiphertext, AeKey};
use crate::crypto::elgamal::{self, ElGamalCiphertext};
use crate::crypto::field::PrimeField;
use crate::crypto::group::{GroupElement, Scalar};
use crate::crypto::hash::{hash_domain, DomainTag, HashStream};
use crate::crypto::shamir::{self, ShamirShare};
use crate::wire;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LheError {
    #[error("invalid parameters: {0}")]
    Parameter(String),
    #[error("master public key has {got} keys, parameters say {want}")]
    MpkSize { got: usize, want: usize },
    #[error("malformed ciphertext: {0}")]
    Encoding(String),
}

/// System parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LheParams {
    /// Total number of HSMs, `N`.
    pub total_hsms: u32,
    /// Cluster size, `n`.
    pub cluster_size: u32,
    /// Recovery threshold, `t` (the default profile uses `t = n/2`).
    pub threshold: u32,
    /// Cardinality of the PIN space.
    pub pin_space: u64,
    /// Fraction of HSMs whose benign failure recovery tolerates.
    pub live_failure_rate: f64,
    /// Fraction of HSMs whose compromise secrecy tolerates.
    pub secret_compromise_rate: f64,
    /// Security parameter in bits; salts are `security_bits / 8` bytes.
    pub security_bits: u32,
}

impl LheParams {
    pub fn validate(&self) -> Result<(), LheError> {
        if self.threshold == 0
            || self.threshold > self.cluster_size
            || self.cluster_size > self.total_hsms
        {
            return Err(LheError::Parameter(format!(
                "need 1 <= t ({}) <= n ({}) <= N ({})",
                self.threshold, self.cluster_size, self.total_hsms
            )));
        }
        for (name, f) in [
            ("live failure rate", self.live_failure_rate),
            ("secret compromise rate", self.secret_compromise_rate),
        ] {
            if !(0.0..1.0).contains(&f) {
                return Err(LheError::Parameter(format!("{name} {f} outside [0, 1)")));
            }
        }
        if self.security_bits % 8 != 0 || self.security_bits == 0 {
            return Err(LheError::Parameter(
                "security bits must be a positive multiple of 8".into(),
            ));
        }
        if self.pin_space == 0 {
            return Err(LheError::Parameter("empty pin space".into()));
        }
        Ok(())
    }

    pub fn salt_len(&self) -> usize {
        (self.security_bits / 8) as usize
    }

    /// Desk-scale defaults: 16 HSMs, clusters of 4, threshold n/2.
    pub fn desk() -> Self {
        LheParams {
            total_hsms: 16,
            cluster_size: 4,
            threshold: 2,
            pin_space: 1_000_000,
            live_failure_rate: 1.0 / 64.0,
            secret_compromise_rate: 1.0 / 16.0,
            security_bits: 128,
        }
    }
}

/// Samples a fresh salt of the parameterized width.
pub fn sample_salt(params: &LheParams, rng: &mut dyn RngCore) -> Vec<u8> {
    let mut salt = vec![0u8; params.salt_len()];
    rng.fill_bytes(&mut salt);
    salt
}

/// The PIN-derived cluster: `n` indices into `[0, N)`, sampled with
/// replacement from the `(salt, pin)` hash stream. Deterministic.
pub fn select(salt: &[u8], pin: &[u8], params: &LheParams) -> Vec<u32> {
    let mut stream = HashStream::new(DomainTag::Select, &[salt, pin]);
    stream
        .indices(params.cluster_size as usize, params.total_hsms as u64)
        .into_iter()
        .map(|i| i as u32)
        .collect()
}

/// Share-encrypting PKE used for the per-slot ciphertexts.
pub trait SharePke {
    type PublicKey: Clone;

    /// Stable 32-byte commitment to a public key, bound into the per-slot
    /// associated data in place of the (possibly very large) key itself.
    fn fingerprint(&self, pk: &Self::PublicKey) -> [u8; 32];

    fn encrypt_share(
        &self,
        pk: &Self::PublicKey,
        ad: &[u8],
        plaintext: &[u8],
        rng: &mut dyn RngCore,
    ) -> Vec<u8>;
}

/// Plain hashed-ElGamal instantiation.
#[derive(Debug, Clone, Copy, Default)]
pub struct ElGamalPke;

pub fn pk_fingerprint(pk_bytes: &[u8]) -> [u8; 32] {
    hash_domain(DomainTag::Commit, &[b"pk-fingerprint".as_ref(), pk_bytes])
}

impl SharePke for ElGamalPke {
    type PublicKey = GroupElement;

    fn fingerprint(&self, pk: &Self::PublicKey) -> [u8; 32] {
        pk_fingerprint(&pk.to_bytes())
    }

    fn encrypt_share(
        &self,
        pk: &Self::PublicKey,
        ad: &[u8],
        plaintext: &[u8],
        rng: &mut dyn RngCore,
    ) -> Vec<u8> {
        elgamal::encrypt(pk, ad, plaintext, rng).to_bytes()
    }
}

/// The unit a client stores at the provider. Contains no cluster indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveryCiphertext {
    pub salt: Vec<u8>,
    pub epoch: u64,
    pub payload: AeCiphertext,
    pub share_cts: Vec<Vec<u8>>,
}

impl RecoveryCiphertext {
    /// `salt || epoch(8B BE) || n(4B BE) || payload(len-prefixed) ||
    /// C_1..C_n (each len-prefixed)`. The salt is fixed-width, set by the
    /// parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.salt);
        out.extend_from_slice(&self.epoch.to_be_bytes());
        out.extend_from_slice(&(self.share_cts.len() as u32).to_be_bytes());
        wire::put_field(&mut out, &self.payload.to_bytes());
        for ct in &self.share_cts {
            wire::put_field(&mut out, ct);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], salt_len: usize) -> Result<Self, LheError> {
        let err = |m: &str| LheError::Encoding(m.to_string());
        let (salt, rest) =
            wire::take_exact(bytes, salt_len).map_err(|_| err("short salt"))?;
        let (epoch, rest) = wire::take_u64(rest).map_err(|_| err("short epoch"))?;
        let (count, rest) = wire::take_u32(rest).map_err(|_| err("short count"))?;
        let (payload_bytes, mut rest) =
            wire::take_field(rest).map_err(|_| err("short payload"))?;
        let payload =
            AeCiphertext::from_bytes(payload_bytes).ok_or_else(|| err("payload too short"))?;
        let mut share_cts = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let (ct, r) = wire::take_field(rest).map_err(|_| err("short share ct"))?;
            share_cts.push(ct.to_vec());
            rest = r;
        }
        wire::expect_end(rest).map_err(|_| err("trailing bytes"))?;
        Ok(RecoveryCiphertext {
            salt: salt.to_vec(),
            epoch,
            payload,
            share_cts,
        })
    }

    pub fn payload_key(transport: &PrimeField, k: &num_bigint::BigUint) -> AeKey {
        let mut key = [0u8; 32];
        key.copy_from_slice(&transport.to_bytes(k));
        AeKey(key)
    }
}

/// A decrypted share as released by an HSM: the username is embedded in
/// the plaintext and checked against the requesting user before release.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaintextShare {
    pub user: Vec<u8>,
    pub share: ShamirShare,
    pub payload: AeCiphertext,
}

/// Associated data for slot `j`: the user, the salt, the ordered cluster
/// key fingerprints, and the slot index, so a share ciphertext cannot be
/// replayed for another user, salt, cluster, or slot.
pub fn share_ad(user: &[u8], salt: &[u8], cluster_fps: &[[u8; 32]], slot: u32) -> Vec<u8> {
    let mut fields: Vec<Vec<u8>> = Vec::with_capacity(cluster_fps.len() + 3);
    fields.push(user.to_vec());
    fields.push(salt.to_vec());
    fields.push(slot.to_be_bytes().to_vec());
    for fp in cluster_fps {
        fields.push(fp.to_vec());
    }
    wire::encode_fields(&fields)
}

/// Share plaintext: `user || shamir index || share value`, length-prefixed.
pub fn encode_share_plaintext(user: &[u8], share: &ShamirShare, transport: &PrimeField) -> Vec<u8> {
    wire::encode_fields(&[
        user,
        share.index.to_be_bytes().as_ref(),
        &transport.to_bytes(&share.value),
    ])
}

pub fn decode_share_plaintext(
    bytes: &[u8],
    transport: &PrimeField,
) -> Option<(Vec<u8>, ShamirShare)> {
    let fields = wire::decode_fields(bytes).ok()?;
    if fields.len() != 3 || fields[1].len() != 4 {
        return None;
    }
    let index = u32::from_be_bytes(fields[1].as_slice().try_into().ok()?);
    let value = transport.from_bytes(&fields[2])?;
    Some((fields[0].clone(), ShamirShare { index, value }))
}

/// Client-side encryption: fresh transport key, `t`-of-`n` split, each
/// share encrypted to its PIN-selected slot key. No HSM interaction.
pub fn encrypt<P: SharePke>(
    mpk: &[P::PublicKey],
    pke: &P,
    salt: &[u8],
    pin: &[u8],
    user: &[u8],
    msg: &[u8],
    epoch: u64,
    params: &LheParams,
    rng: &mut dyn RngCore,
) -> Result<RecoveryCiphertext, LheError> {
    params.validate()?;
    if mpk.len() != params.total_hsms as usize {
        return Err(LheError::MpkSize {
            got: mpk.len(),
            want: params.total_hsms as usize,
        });
    }
    if salt.len() != params.salt_len() {
        return Err(LheError::Parameter("salt width mismatch".into()));
    }
    let transport = PrimeField::transport();
    let indices = select(salt, pin, params);
    let k = transport.random(rng);
    let shares = shamir::share(
        &transport,
        &k,
        params.threshold as usize,
        params.cluster_size as usize,
        rng,
    )
    .map_err(|e| LheError::Parameter(e.to_string()))?;
    let fps: Vec<[u8; 32]> = indices
        .iter()
        .map(|&i| pke.fingerprint(&mpk[i as usize]))
        .collect();
    let share_cts = indices
        .iter()
        .zip(&shares)
        .enumerate()
        .map(|(j, (&i, share))| {
            let ad = share_ad(user, salt, &fps, j as u32);
            let pt = encode_share_plaintext(user, share, &transport);
            pke.encrypt_share(&mpk[i as usize], &ad, &pt, rng)
        })
        .collect();
    let payload = ae::encrypt(&RecoveryCiphertext::payload_key(&transport, &k), msg, rng);
    Ok(RecoveryCiphertext {
        salt: salt.to_vec(),
        epoch,
        payload,
        share_cts,
    })
}

/// Fingerprints for a cluster of plain ElGamal keys.
pub fn elgamal_cluster_fps(cluster_pks: &[GroupElement]) -> Vec<[u8; 32]> {
    cluster_pks
        .iter()
        .map(|pk| ElGamalPke.fingerprint(pk))
        .collect()
}

/// One HSM's decryption of its slot under the hashed-ElGamal
/// instantiation. `None` covers every failure: wrong key, wrong slot,
/// tampering, or a username mismatch — indistinguishable by design.
pub fn decrypt_share_elgamal(
    sk: &Scalar,
    slot: u32,
    ct: &RecoveryCiphertext,
    user: &[u8],
    cluster_fps: &[[u8; 32]],
    _params: &LheParams,
) -> Option<PlaintextShare> {
    let transport = PrimeField::transport();
    let ad = share_ad(user, &ct.salt, cluster_fps, slot);
    let slot_ct = ElGamalCiphertext::from_bytes(ct.share_cts.get(slot as usize)?).ok()?;
    let plain = elgamal::decrypt(sk, &ad, &slot_ct)?;
    let (embedded_user, share) = decode_share_plaintext(&plain, &transport)?;
    if embedded_user != user {
        return None;
    }
    Some(PlaintextShare {
        user: embedded_user,
        share,
        payload: ct.payload.clone(),
    })
}

/// Recombines at least `t` shares: Shamir-reconstruct the transport key,
/// take the most common payload (ties to the lexicographically smallest
/// byte string), and decrypt it.
pub fn reconstruct(shares: &[PlaintextShare], params: &LheParams) -> Option<Vec<u8>> {
    if shares.len() < params.threshold as usize {
        return None;
    }
    let transport = PrimeField::transport();
    let inner: Vec<ShamirShare> = shares.iter().map(|s| s.share.clone()).collect();
    let k = shamir::reconstruct(&transport, &inner, params.threshold as usize).ok()?;
    let mut counts: std::collections::BTreeMap<Vec<u8>, usize> = Default::default();
    for s in shares {
        *counts.entry(s.payload.to_bytes()).or_default() += 1;
    }
    // BTreeMap iterates in ascending key order, so `>` keeps the smallest
    // byte string among ties.
    let (payload_bytes, _) = counts
        .into_iter()
        .fold((Vec::new(), 0usize), |best, (bytes, count)| {
            if count > best.1 {
                (bytes, count)
            } else {
                best
            }
        });
    let payload = AeCiphertext::from_bytes(&payload_bytes)?;
    ae::decrypt(&RecoveryCiphertext::payload_key(&transport, &k), &payload)
}

/// One full run of the correctness experiment: encrypt under a random
/// salt, fail each HSM independently with probability `f_live`, decrypt
/// the surviving cluster slots, reconstruct. Returns whether the message
/// came back intact.
fn correctness_trial(
    mpk_pub: &[GroupElement],
    mpk_sec: &[Scalar],
    params: &LheParams,
    msg: &[u8],
    rng: &mut ChaCha20Rng,
) -> bool {
    let salt = sample_salt(params, rng);
    let pin = format!("{:06}", rng.next_u64() % params.pin_space);
    let user = b"experiment-user";
    let ct = encrypt::<ElGamalPke>(
        mpk_pub,
        &ElGamalPke,
        &salt,
        pin.as_bytes(),
        user,
        msg,
        0,
        params,
        rng,
    )
    .expect("experiment parameters are valid");
    let failed: Vec<bool> = (0..params.total_hsms)
        .map(|_| rand::Rng::gen_bool(rng, params.live_failure_rate))
        .collect();
    let indices = select(&salt, pin.as_bytes(), params);
    let fps: Vec<[u8; 32]> = indices
        .iter()
        .map(|&i| ElGamalPke.fingerprint(&mpk_pub[i as usize]))
        .collect();
    let shares: Vec<PlaintextShare> = indices
        .iter()
        .enumerate()
        .filter(|&(_, &i)| !failed[i as usize])
        .filter_map(|(j, &i)| {
            decrypt_share_elgamal(&mpk_sec[i as usize], j as u32, &ct, user, &fps, params)
        })
        .collect();
    reconstruct(&shares, params).as_deref() == Some(msg)
}

/// Monte-Carlo estimate of the end-to-end decryption failure rate under
/// independent HSM failures. One key set is reused across trials: failure
/// events depend only on the salt, PIN, and failure draws, never on the
/// key values, so this is statistically identical to regenerating keys.
pub fn correctness_experiment(params: &LheParams, trials: u64, rng: &mut dyn RngCore) -> u64 {
    params.validate().expect("valid parameters");
    let mut keygen_rng = ChaCha20Rng::seed_from_u64(rng.next_u64());
    let keys: Vec<_> = (0..params.total_hsms)
        .map(|_| elgamal::keygen(&mut keygen_rng))
        .collect();
    let mpk_pub: Vec<GroupElement> = keys.iter().map(|k| k.public).collect();
    let mpk_sec: Vec<Scalar> = keys.iter().map(|k| k.secret).collect();
    let base_seed = rng.next_u64();
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut trial_rng = ChaCha20Rng::seed_from_u64(base_seed ^ (trial * 0x9e37_79b9
                + 0x7f4a_7c15));
            u64::from(!correctness_trial(
                &mpk_pub,
                &mpk_sec,
                params,
                b"correctness experiment payload",
                &mut trial_rng,
            ))
        })
        .sum()
}

/// How to search for the adversarial covering set in
/// [`cover_probability`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverSearch {
    /// Greedy max-cover heuristic (documented approximation; may
    /// underestimate).
    Greedy,
    /// Exact enumeration of all size-`alpha*N` subsets; only feasible for
    /// small `N` (say up to 12).
    Exhaustive,
}

fn covers(list: &[u32], in_set: &[bool], n: usize) -> bool {
    let hits = list.iter().filter(|&&e| in_set[e as usize]).count();
    2 * hits >= n
}

/// Monte-Carlo estimate of the probability that some size-`floor(alpha*N)`
/// subset of `[N]` covers (contains at least half the entries of) more
/// than `floor(beta*N)` of `phi` random lists drawn from `[N]^n`.
pub fn cover_probability(
    total: u32,
    list_len: u32,
    phi: u32,
    alpha: f64,
    beta: f64,
    trials: u64,
    search: CoverSearch,
    rng: &mut dyn RngCore,
) -> f64 {
    let set_size = (alpha * total as f64).floor() as usize;
    let target = (beta * total as f64).floor() as usize;
    let mut hits = 0u64;
    for _ in 0..trials {
        let lists: Vec<Vec<u32>> = (0..phi)
            .map(|_| {
                (0..list_len)
                    .map(|_| (rng.next_u64() % total as u64) as u32)
                    .collect()
            })
            .collect();
        let best = match search {
            CoverSearch::Exhaustive => best_cover_exhaustive(total, &lists, set_size),
            CoverSearch::Greedy => best_cover_greedy(total, &lists, set_size),
        };
        if best > target {
            hits += 1;
        }
    }
    hits as f64 / trials as f64
}

fn best_cover_exhaustive(total: u32, lists: &[Vec<u32>], set_size: usize) -> usize {
    let n = lists.first().map_or(0, Vec::len);
    let mut best = 0;
    let mut subset: Vec<u32> = Vec::new();
    fn rec(
        start: u32,
        total: u32,
        set_size: usize,
        subset: &mut Vec<u32>,
        lists: &[Vec<u32>],
        n: usize,
        best: &mut usize,
    ) {
        if subset.len() == set_size {
            let mut in_set = vec![false; total as usize];
            for &e in subset.iter() {
                in_set[e as usize] = true;
            }
            let covered = lists.iter().filter(|l| covers(l, &in_set, n)).count();
            *best = (*best).max(covered);
            return;
        }
        let remaining = set_size - subset.len();
        for e in start..=(total - remaining as u32) {
            subset.push(e);
            rec(e + 1, total, set_size, subset, lists, n, best);
            subset.pop();
        }
    }
    if set_size == 0 {
        let in_set = vec![false; total as usize];
        return lists.iter().filter(|l| covers(l, &in_set, n)).count();
    }
    rec(0, total, set_size, &mut subset, lists, n, &mut best);
    best
}

/// Greedy adversary: repeatedly add the element that completes the most
/// still-uncovered lists, breaking ties by total progress toward their
/// coverage thresholds.
fn best_cover_greedy(total: u32, lists: &[Vec<u32>], set_size: usize) -> usize {
    let n = lists.first().map_or(0, Vec::len);
    let need0 = n.div_ceil(2);
    let mut in_set = vec![false; total as usize];
    // per list: remaining hits needed before it counts as covered
    let mut needed: Vec<usize> = lists.iter().map(|_| need0).collect();
    for _ in 0..set_size {
        let mut best_elem = None;
        let mut best_score = (0usize, 0usize);
        for e in 0..total {
            if in_set[e as usize] {
                continue;
            }
            let mut completed = 0;
            let mut progress = 0;
            for (list, &need) in lists.iter().zip(&needed) {
                if need == 0 {
                    continue;
                }
                let occ = list.iter().filter(|&&x| x == e).count();
                if occ >= need {
                    completed += 1;
                }
                progress += occ.min(need);
            }
            let score = (completed, progress);
            if best_elem.is_none() || score > best_score {
                best_elem = Some(e);
                best_score = score;
            }
        }
        let Some(e) = best_elem else { break };
        in_set[e as usize] = true;
        for (list, need) in lists.iter().zip(needed.iter_mut()) {
            let occ = list.iter().filter(|&&x| x == e).count();
            *need = need.saturating_sub(occ);
        }
    }
    needed.iter().filter(|&&need| need == 0).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use rand::Rng;

    fn small_params() -> LheParams {
        LheParams {
            total_hsms: 10,
            cluster_size: 4,
            threshold: 2,
            pin_space: 10_000,
            live_failure_rate: 1.0 / 64.0,
            secret_compromise_rate: 1.0 / 16.0,
            security_bits: 128,
        }
    }

    fn keyring(
        n: u32,
        rng: &mut ChaCha20Rng,
    ) -> (Vec<GroupElement>, Vec<Scalar>) {
        let keys: Vec<_> = (0..n).map(|_| elgamal::keygen(rng)).collect();
        (
            keys.iter().map(|k| k.public).collect(),
            keys.iter().map(|k| k.secret).collect(),
        )
    }

    fn run_pipeline(
        mpk_pub: &[GroupElement],
        mpk_sec: &[Scalar],
        ct: &RecoveryCiphertext,
        pin: &[u8],
        user: &[u8],
        params: &LheParams,
    ) -> Option<Vec<u8>> {
        let indices = select(&ct.salt, pin, params);
        let cluster_pks: Vec<GroupElement> =
            indices.iter().map(|&i| mpk_pub[i as usize]).collect();
        let fps = elgamal_cluster_fps(&cluster_pks);
        let shares: Vec<PlaintextShare> = indices
            .iter()
            .enumerate()
            .filter_map(|(j, &i)| {
                decrypt_share_elgamal(&mpk_sec[i as usize], j as u32, ct, user, &fps, params)
            })
            .collect();
        reconstruct(&shares, params)
    }

    #[test]
    fn select_is_deterministic_and_in_range() {
        let params = small_params();
        let a = select(b"0123456789abcdef", b"1234", &params);
        let b = select(b"0123456789abcdef", b"1234", &params);
        assert_eq!(a, b);
        assert_eq!(a.len(), params.cluster_size as usize);
        assert!(a.iter().all(|&i| i < params.total_hsms));
    }

    #[test]
    fn select_single_hsm_universe_is_all_zero() {
        let params = LheParams {
            total_hsms: 1,
            cluster_size: 3,
            threshold: 1,
            ..small_params()
        };
        for pin in ["0000", "1234", "9999"] {
            assert_eq!(
                select(b"0123456789abcdef", pin.as_bytes(), &params),
                vec![0, 0, 0]
            );
        }
    }

    #[test]
    fn distinct_pins_give_distinct_clusters_1e4() {
        // N=100, n=40: record positional-collision count over 1e4 pin
        // pairs; a full positional match is astronomically unlikely.
        let params = LheParams {
            total_hsms: 100,
            cluster_size: 40,
            threshold: 20,
            pin_space: 1_000_000,
            ..small_params()
        };
        let mut rng = ChaCha20Rng::seed_from_u64(70);
        let salt = b"0123456789abcdef";
        let mut identical = 0;
        for _ in 0..10_000 {
            let a = format!("{:06}", rng.gen_range(0..1_000_000u64));
            let b = format!("{:06}", rng.gen_range(0..1_000_000u64));
            if a == b {
                continue;
            }
            if select(salt, a.as_bytes(), &params) == select(salt, b.as_bytes(), &params) {
                identical += 1;
            }
        }
        assert_eq!(identical, 0);
    }

    #[test]
    fn encrypt_then_full_recover_round_trips() {
        let mut rng = ChaCha20Rng::seed_from_u64(71);
        let params = small_params();
        let (mpk_pub, mpk_sec) = keyring(params.total_hsms, &mut rng);
        let salt = sample_salt(&params, &mut rng);
        let ct = encrypt::<ElGamalPke>(
            &mpk_pub, &ElGamalPke, &salt, b"4821", b"alice", b"disk image", 0, &params, &mut rng,
        )
        .unwrap();
        assert_eq!(
            run_pipeline(&mpk_pub, &mpk_sec, &ct, b"4821", b"alice", &params).unwrap(),
            b"disk image"
        );
    }

    #[test]
    fn paper_scale_parameters_encrypt() {
        // N=3100, n=40, t=20, |P|=10^6: encryption is client-side only and
        // must work at deployment scale.
        let mut rng = ChaCha20Rng::seed_from_u64(72);
        let params = LheParams {
            total_hsms: 3100,
            cluster_size: 40,
            threshold: 20,
            pin_space: 1_000_000,
            live_failure_rate: 1.0 / 64.0,
            secret_compromise_rate: 1.0 / 16.0,
            security_bits: 128,
        };
        let (mpk_pub, _) = keyring(params.total_hsms, &mut rng);
        let salt = sample_salt(&params, &mut rng);
        let ct = encrypt::<ElGamalPke>(
            &mpk_pub, &ElGamalPke, &salt, b"314159", b"bob", b"m", 0, &params, &mut rng,
        )
        .unwrap();
        assert_eq!(ct.share_cts.len(), 40);
    }

    #[test]
    fn fresh_randomness_yields_distinct_ciphertexts() {
        let mut rng = ChaCha20Rng::seed_from_u64(73);
        let params = small_params();
        let (mpk_pub, _) = keyring(params.total_hsms, &mut rng);
        let salt = sample_salt(&params, &mut rng);
        let enc = |rng: &mut ChaCha20Rng| {
            encrypt::<ElGamalPke>(
                &mpk_pub, &ElGamalPke, &salt, b"0000", b"u", b"m", 0, &params, rng,
            )
            .unwrap()
        };
        assert_ne!(enc(&mut rng).to_bytes(), enc(&mut rng).to_bytes());
    }

    #[test]
    fn wrong_user_or_outside_key_gets_bot() {
        let mut rng = ChaCha20Rng::seed_from_u64(74);
        let params = small_params();
        let (mpk_pub, mpk_sec) = keyring(params.total_hsms, &mut rng);
        let salt = sample_salt(&params, &mut rng);
        let ct = encrypt::<ElGamalPke>(
            &mpk_pub, &ElGamalPke, &salt, b"7777", b"carol", b"m", 0, &params, &mut rng,
        )
        .unwrap();
        let indices = select(&salt, b"7777", &params);
        let cluster_pks: Vec<GroupElement> =
            indices.iter().map(|&i| mpk_pub[i as usize]).collect();
        let fps = elgamal_cluster_fps(&cluster_pks);

        // correct key, correct slot, wrong user string
        assert!(decrypt_share_elgamal(
            &mpk_sec[indices[0] as usize],
            0,
            &ct,
            b"mallory",
            &fps,
            &params
        )
        .is_none());

        // every non-cluster key fails at every slot
        for (hsm, sk) in mpk_sec.iter().enumerate() {
            if indices.contains(&(hsm as u32)) {
                continue;
            }
            for slot in 0..params.cluster_size {
                assert!(decrypt_share_elgamal(sk, slot, &ct, b"carol", &fps, &params)
                    .is_none());
            }
        }
    }

    #[test]
    fn every_threshold_subset_reconstructs() {
        // n=6, t=3: all C(6,3) subsets of honestly decrypted shares work.
        let mut rng = ChaCha20Rng::seed_from_u64(75);
        let params = LheParams {
            total_hsms: 12,
            cluster_size: 6,
            threshold: 3,
            ..small_params()
        };
        let (mpk_pub, mpk_sec) = keyring(params.total_hsms, &mut rng);
        let salt = sample_salt(&params, &mut rng);
        let ct = encrypt::<ElGamalPke>(
            &mpk_pub, &ElGamalPke, &salt, b"31415", b"dave", b"payload", 0, &params, &mut rng,
        )
        .unwrap();
        let indices = select(&salt, b"31415", &params);
        let cluster_pks: Vec<GroupElement> =
            indices.iter().map(|&i| mpk_pub[i as usize]).collect();
        let fps = elgamal_cluster_fps(&cluster_pks);
        let shares: Vec<PlaintextShare> = indices
            .iter()
            .enumerate()
            .map(|(j, &i)| {
                decrypt_share_elgamal(&mpk_sec[i as usize], j as u32, &ct, b"dave", &fps, &params)
                    .unwrap()
            })
            .collect();
        for a in 0..6 {
            for b in a + 1..6 {
                for c in b + 1..6 {
                    let subset = vec![shares[a].clone(), shares[b].clone(), shares[c].clone()];
                    assert_eq!(reconstruct(&subset, &params).unwrap(), b"payload");
                }
            }
        }
        // t-1 shares fail
        assert!(reconstruct(&shares[..2], &params).is_none());
    }

    #[test]
    fn spliced_wrong_pin_share_breaks_reconstruction() {
        // One share sourced from a different sharing makes the transport
        // key wrong, so the payload AE check fails.
        let mut rng = ChaCha20Rng::seed_from_u64(76);
        let params = LheParams {
            total_hsms: 12,
            cluster_size: 6,
            threshold: 3,
            ..small_params()
        };
        let (mpk_pub, mpk_sec) = keyring(params.total_hsms, &mut rng);
        let salt = sample_salt(&params, &mut rng);
        let mut harvest = |pin: &[u8]| {
            let ct = encrypt::<ElGamalPke>(
                &mpk_pub, &ElGamalPke, &salt, pin, b"erin", b"secret", 0, &params, &mut rng,
            )
            .unwrap();
            let indices = select(&salt, pin, &params);
            let cluster_pks: Vec<GroupElement> =
                indices.iter().map(|&i| mpk_pub[i as usize]).collect();
            let fps = elgamal_cluster_fps(&cluster_pks);
            indices
                .iter()
                .enumerate()
                .map(|(j, &i)| {
                    decrypt_share_elgamal(
                        &mpk_sec[i as usize],
                        j as u32,
                        &ct,
                        b"erin",
                        &fps,
                        &params,
                    )
                    .unwrap()
                })
                .collect::<Vec<_>>()
        };
        let good = harvest(b"1111");
        let other = harvest(b"2222");
        let spliced = vec![good[0].clone(), good[1].clone(), other[2].clone()];
        assert!(reconstruct(&spliced, &params).is_none());
    }

    #[test]
    fn wrong_pin_pipeline_bot_1e4_fuzz() {
        // Full pipeline at N=100, n=40: decryption under a wrong PIN's
        // cluster must fail in every one of 1e4 trials. A slot decrypt
        // could only succeed if the wrong cluster matched positionally;
        // reaching t=20 such matches has probability ~ (1/N)^20.
        let params = LheParams {
            total_hsms: 100,
            cluster_size: 40,
            threshold: 20,
            pin_space: 1_000_000,
            ..small_params()
        };
        let mut seed_rng = ChaCha20Rng::seed_from_u64(77);
        let (mpk_pub, mpk_sec) = keyring(params.total_hsms, &mut seed_rng);
        let salt = sample_salt(&params, &mut seed_rng);
        let ct = encrypt::<ElGamalPke>(
            &mpk_pub,
            &ElGamalPke,
            &salt,
            b"424242",
            b"frank",
            b"top secret",
            0,
            &params,
            &mut seed_rng,
        )
        .unwrap();
        let base_seed = seed_rng.next_u64();
        let successes: u64 = (0..10_000u64)
            .into_par_iter()
            .map(|trial| {
                let mut rng = ChaCha20Rng::seed_from_u64(base_seed ^ trial);
                let wrong_pin = format!("{:06}", 424_243 + rng.gen_range(0..500_000u64));
                let got = run_pipeline(
                    &mpk_pub,
                    &mpk_sec,
                    &ct,
                    wrong_pin.as_bytes(),
                    b"frank",
                    &params,
                );
                u64::from(got.is_some())
            })
            .sum();
        assert_eq!(successes, 0);
    }

    #[test]
    fn ciphertext_shape_independent_of_cluster() {
        // Same message and rng transcript under different PINs (hence
        // different clusters): the serialized layout must be identical in
        // length and field structure, revealing nothing about the indices.
        let params = small_params();
        let mut key_rng = ChaCha20Rng::seed_from_u64(78);
        let (mpk_pub, _) = keyring(params.total_hsms, &mut key_rng);
        let salt = b"0123456789abcdef".to_vec();
        let shapes: Vec<(usize, Vec<usize>)> = (0..20)
            .map(|pin| {
                let mut rng = ChaCha20Rng::seed_from_u64(4242); // fixed transcript
                let ct = encrypt::<ElGamalPke>(
                    &mpk_pub,
                    &ElGamalPke,
                    &salt,
                    format!("{pin:04}").as_bytes(),
                    b"user",
                    b"equal-length message",
                    0,
                    &params,
                    &mut rng,
                )
                .unwrap();
                (
                    ct.to_bytes().len(),
                    ct.share_cts.iter().map(Vec::len).collect(),
                )
            })
            .collect();
        for s in &shapes[1..] {
            assert_eq!(*s, shapes[0]);
        }
    }

    #[test]
    fn ciphertext_serialization_round_trips() {
        let mut rng = ChaCha20Rng::seed_from_u64(79);
        let params = small_params();
        let (mpk_pub, _) = keyring(params.total_hsms, &mut rng);
        let salt = sample_salt(&params, &mut rng);
        let ct = encrypt::<ElGamalPke>(
            &mpk_pub, &ElGamalPke, &salt, b"9999", b"u", b"m", 7, &params, &mut rng,
        )
        .unwrap();
        let back = RecoveryCiphertext::from_bytes(&ct.to_bytes(), params.salt_len()).unwrap();
        assert_eq!(back, ct);
        assert_eq!(back.epoch, 7);
        assert!(RecoveryCiphertext::from_bytes(&ct.to_bytes()[1..], params.salt_len()).is_err());
    }

    #[test]
    fn parameter_validation() {
        let mut p = small_params();
        p.threshold = 5;
        p.cluster_size = 4;
        assert!(p.validate().is_err());
        let mut p = small_params();
        p.cluster_size = 11;
        assert!(p.validate().is_err());
        let mut p = small_params();
        p.live_failure_rate = 1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn correctness_experiment_paper_profile_1e4_zero_failures() {
        // n=40, t=20, f_live=1/64: failure probability is bounded by
        // 2^-(n/2) = 2^-20, so 1e4 trials must see none.
        let params = LheParams {
            total_hsms: 100,
            cluster_size: 40,
            threshold: 20,
            pin_space: 1_000_000,
            ..small_params()
        };
        let mut rng = ChaCha20Rng::seed_from_u64(80);
        assert_eq!(correctness_experiment(&params, 10_000, &mut rng), 0);
    }

    /// Exact failure probability of the experiment: enumerate every index
    /// tuple in `[total]^n` and every failure pattern of its distinct
    /// HSMs. Failure means fewer than `t` slots stay alive. Duplicate
    /// indices share their HSM's fate, which is why this differs from the
    /// iid binomial tail.
    fn exact_failure_rate(total: u32, n: u32, t: u32, f: f64) -> f64 {
        let mut acc = 0.0;
        let tuples = (total as u64).pow(n);
        for code in 0..tuples {
            let mut c = code;
            let mut mult = std::collections::BTreeMap::new();
            for _ in 0..n {
                *mult.entry((c % total as u64) as u32).or_insert(0u32) += 1;
                c /= total as u64;
            }
            let mults: Vec<u32> = mult.values().copied().collect();
            let d = mults.len();
            let mut p_fail_tuple = 0.0;
            for pattern in 0u32..(1 << d) {
                let mut failed_slots = 0;
                let mut p = 1.0;
                for (bit, &m) in mults.iter().enumerate() {
                    if pattern & (1 << bit) != 0 {
                        failed_slots += m;
                        p *= f;
                    } else {
                        p *= 1.0 - f;
                    }
                }
                if n - failed_slots < t {
                    p_fail_tuple += p;
                }
            }
            acc += p_fail_tuple;
        }
        acc / tuples as f64
    }

    #[test]
    fn correctness_experiment_stress_matches_exact_oracle() {
        // n=4, t=2, f_live=1/8 over 1e5 trials, against the exact
        // enumeration oracle; the 2^-(n/2) envelope must also hold.
        let params = LheParams {
            total_hsms: 16,
            cluster_size: 4,
            threshold: 2,
            pin_space: 10_000,
            live_failure_rate: 1.0 / 8.0,
            secret_compromise_rate: 1.0 / 16.0,
            security_bits: 128,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(81);
        let trials = 100_000u64;
        let failures = correctness_experiment(&params, trials, &mut rng);
        let rate = failures as f64 / trials as f64;
        assert!(rate <= 0.25, "rate {rate} exceeds 2^-(n/2)");
        let exact = exact_failure_rate(16, 4, 2, 1.0 / 8.0);
        let check = stats::within_three_sigma("stress", failures, trials, exact);
        assert!(check.pass, "rate {rate} vs exact oracle {exact}");
        // sanity on the oracle itself: it must sit above the iid tail,
        // which ignores shared fates
        assert!(exact > stats::binomial_tail_ge(4, 1.0 / 8.0, 3));
    }

    #[test]
    fn correctness_experiment_no_failures_when_flive_zero() {
        let mut params = small_params();
        params.live_failure_rate = 0.0;
        let mut rng = ChaCha20Rng::seed_from_u64(82);
        assert_eq!(correctness_experiment(&params, 200, &mut rng), 0);
    }

    #[test]
    fn cover_probability_trivial_cases() {
        let mut rng = ChaCha20Rng::seed_from_u64(83);
        // beta*N > phi: cannot cover more lists than exist
        let p = cover_probability(8, 4, 3, 0.5, 0.75, 50, CoverSearch::Greedy, &mut rng);
        assert_eq!(p, 0.0);
        // alpha = 1: the full set covers everything whenever beta*N <= phi
        let p = cover_probability(8, 4, 6, 1.0, 0.5, 50, CoverSearch::Greedy, &mut rng);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn cover_probability_greedy_close_to_exhaustive() {
        // N=12, n=4, phi=6, alpha=1/2, beta*N=2: same draws, both
        // searches, estimates within 0.02.
        let trials = 400u64;
        let seed = 84;
        let exact = cover_probability(
            12,
            4,
            6,
            0.5,
            2.0 / 12.0,
            trials,
            CoverSearch::Exhaustive,
            &mut ChaCha20Rng::seed_from_u64(seed),
        );
        let greedy = cover_probability(
            12,
            4,
            6,
            0.5,
            2.0 / 12.0,
            trials,
            CoverSearch::Greedy,
            &mut ChaCha20Rng::seed_from_u64(seed),
        );
        assert!(
            (exact - greedy).abs() <= 0.02,
            "exhaustive {exact} vs greedy {greedy}"
        );
    }
}
