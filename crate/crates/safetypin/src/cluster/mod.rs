//! The end-to-end simulator: HSM actors, the untrusted provider, and
//! clients running backup and logged recovery under injected faults and
//! adversaries.
//!
//! Every actor is a plain value; all cross-actor traffic goes through
//! `Simulation` methods as immutable message structs, and the whole run is
//! deterministic given the seed. The provider is never trusted: each of
//! its outputs is verified by HSMs or the client, and the simulation
//! records a transcript of events for harness assertions (for example
//! that a puncture always precedes the matching share release).

pub mod scenario;
pub mod sigs;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

use crate::authlog::{does_include, InclusionProof, LogEntry, LogTree};
use crate::crypto::ae::{self, AeKey};
use crate::crypto::elgamal::{self, ElGamalCiphertext};
use crate::crypto::field::PrimeField;
use crate::crypto::group::{GroupElement, Scalar};
use crate::crypto::hash::{hash_domain, DomainTag};
use crate::lhe::{self, LheParams, PlaintextShare, RecoveryCiphertext};
use crate::logsync::{self, ChunkMode, ForgeSpec, PrepareEpoch};
use crate::punc::{self, BloomParams, PuncCiphertext, PuncturablePublicKey, PuncturableSecretKey};
use crate::sdstore::MemoryBlockServer;
use crate::wire;
use sigs::{CombinedSig, Sig, SigBackend, SignerKey, VerifyKey};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("epoch failed: {0}")]
    Epoch(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub lhe: LheParams,
    /// Punctures each HSM key is sized for.
    pub punc_supported: u32,
    /// Decryption-failure exponent for the Bloom filter.
    pub punc_fail_exp: u8,
    /// Chunks each HSM audits per epoch (`C`).
    pub audit_chunks: u32,
    pub chunk_mode: ChunkMode,
    /// Recovery attempts allowed per (user, backup) — 1 is the strict
    /// one-shot profile.
    pub max_guesses: u32,
    /// Garbage collections an HSM will serve before refusing.
    pub gc_bound: u32,
    /// Consecutive epoch restarts before the epoch aborts with an alarm.
    pub restart_cap: u32,
    /// Epoch cadence for demo mode; tests drive epochs on demand.
    pub epoch_cadence_secs: u64,
    pub sig_backend: SigBackend,
}

impl SimConfig {
    pub fn desk() -> Self {
        SimConfig {
            lhe: LheParams::desk(),
            punc_supported: 64,
            punc_fail_exp: 8,
            audit_chunks: 8,
            chunk_mode: ChunkMode::Random,
            max_guesses: 1,
            gc_bound: 64,
            restart_cap: 16,
            epoch_cadence_secs: 600,
            sig_backend: SigBackend::Concat,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.lhe
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        if self.audit_chunks == 0 || self.max_guesses == 0 || self.restart_cap == 0 {
            return Err(SimError::Config(
                "audit chunks, max guesses, and restart cap must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn bloom(&self) -> BloomParams {
        BloomParams::derive(self.punc_supported, self.punc_fail_exp)
    }

    /// Minimum online-set size an HSM will accept: `(1 - f_live) * N`,
    /// rounded up.
    pub fn min_online(&self) -> usize {
        let n = self.lhe.total_hsms as f64;
        ((1.0 - self.lhe.live_failure_rate) * n).ceil() as usize
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Init { hsms: u32 },
    Backup { user: String, backup_id: String, config_epoch: u64 },
    AttemptLogged { user: String, backup_id: String, attempt: u32 },
    AttemptRefusedByLog { user: String, backup_id: String, attempt: u32 },
    EpochStart { epoch_no: u64, inserts: usize, online: usize },
    EpochRejected { epoch_no: u64, node: u32, reason: String },
    EpochRestart { epoch_no: u64, reason: String },
    EpochAborted { epoch_no: u64, reason: String },
    EpochFinalized { epoch_no: u64, digest: String },
    RecursiveAudit { node: u32, covered_for: u32, chunks: usize },
    Punctured { node: u32, tag: String },
    ShareReleased { node: u32, user: String, slot: u32 },
    ShareRefused { node: u32, user: String, slot: u32, reason: String },
    Recover { user: String, backup_id: String, ok: bool },
    InvariantViolation { what: String },
    Gc { generation: usize },
    GcRefused { node: u32 },
    HsmFailed { node: u32 },
    Compromised { nodes: Vec<u32> },
    Rotated { node: u32, punc_epoch: u64, config_epoch: u64 },
    ClientDied { user: String, backup_id: String },
}

pub struct Hsm {
    pub node_id: u32,
    pub signer: SignerKey,
    pub punc_pk: PuncturablePublicKey,
    pub punc_sk: PuncturableSecretKey,
    /// Config epoch in which the current puncturable key was published.
    pub key_since: u64,
    pub digest: [u8; 32],
    pub digest_history: Vec<[u8; 32]>,
    pub gc_count: u32,
    pub refusing: bool,
    pub failed: bool,
    /// Work-bound instrumentation for the last epoch this HSM took part in.
    pub last_epoch_chunks: u32,
    pub last_epoch_sig_verifies: u32,
}

/// Everything an adversary gets when it compromises an HSM.
pub struct HsmDump {
    pub node_id: u32,
    pub punc_sk: PuncturableSecretKey,
    pub digest: [u8; 32],
    pub key_since: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdversaryMode {
    Honest,
    /// Serve a corrupted recovery ciphertext.
    SwapCiphertext,
    /// Skip the log insert and fabricate the inclusion proof from a side
    /// log.
    ForgeInclusion,
    /// Announce different new digests to different HSMs.
    EquivocateDigest,
    /// Flip bytes in every HSM reply it relays or caches.
    TamperReply,
}

#[derive(Debug, Clone)]
pub struct StoredBackup {
    pub ct_bytes: Vec<u8>,
    pub config_epoch: u64,
    /// Key-wrapped payload for the incremental-backup variant.
    pub wrapped: Option<Vec<u8>>,
}

pub struct Provider {
    pub log: LogTree,
    pub pending: Vec<LogEntry>,
    /// Block stores, one per (HSM, puncturable-key epoch).
    pub stores: BTreeMap<(u32, u64), MemoryBlockServer>,
    pub backups: BTreeMap<(Vec<u8>, String), StoredBackup>,
    /// Cached HSM replies per recovery attempt, for failure resumption.
    pub reply_cache: BTreeMap<Vec<u8>, Vec<(u32, Vec<u8>)>>,
    pub epoch_no: u64,
    pub adversary: AdversaryMode,
    /// `(cumulative record count, digest)` after each finalized epoch of
    /// the current log generation — the auditable digest chain.
    pub digest_chain: Vec<(u64, [u8; 32])>,
    /// Pre-GC generations: their replay records and digest chains remain
    /// inspectable.
    pub old_generations: Vec<(Vec<LogEntry>, Vec<(u64, [u8; 32])>)>,
}

/// A client's request to one cluster HSM during recovery (step 6).
pub struct RecoverRequest {
    pub user: Vec<u8>,
    pub backup_id: String,
    pub attempt: u32,
    /// Commitment opening: the cluster indices, the ciphertext hash, and
    /// the commitment randomness.
    pub cluster_ids: Vec<u32>,
    pub ct_hash: [u8; 32],
    pub rho: Vec<u8>,
    pub proof: InclusionProof,
    pub slot: u32,
    pub session_pk: GroupElement,
    pub ct_bytes: Vec<u8>,
}

/// Where an injected client failure strikes during recovery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailPoint {
    None,
    /// Die after the HSMs have served (and punctured) but before the
    /// client reconstructs.
    AfterServes,
}

/// A recovery paused at the epoch barrier: the attempt is queued for the
/// next epoch, after which [`Simulation::recover_complete`] opens the
/// commitment to the cluster.
pub struct PreparedRecovery {
    pub user: Vec<u8>,
    pub backup_id: String,
    session_sk: Scalar,
    pub session_backup_id: String,
    pub attempt: u32,
    pub cluster_ids: Vec<u32>,
    pub ct_bytes: Vec<u8>,
    pub ct_hash: [u8; 32],
    pub rho: Vec<u8>,
    pub commitment: [u8; 32],
    pub log_id: Vec<u8>,
    /// Whether the attempt was queued for the next epoch.
    pub queued: bool,
    /// Early failure (missing backup, consumed attempt, malformed
    /// ciphertext): complete returns bot without contacting HSMs.
    pub aborted: bool,
}

/// What a (possibly dead) recovery run leaves behind.
pub struct RecoverOutcome {
    pub result: Option<Vec<u8>>,
    pub died: bool,
    /// Log id of the attempt; key into the provider's reply cache.
    pub attempt_key: Vec<u8>,
    pub session_backup_id: String,
    pub backup_id: String,
}

pub struct Simulation {
    pub config: SimConfig,
    pub hsms: Vec<Hsm>,
    pub verify_keys: Vec<VerifyKey>,
    pub provider: Provider,
    pub config_epoch: u64,
    /// Current full master public key (one puncturable key per HSM).
    pub mpk: Vec<PuncturablePublicKey>,
    /// Per config epoch: each HSM's key fingerprint, for serving old
    /// ciphertexts' associated data.
    pub mpk_fps: BTreeMap<u64, Vec<[u8; 32]>>,
    rng: ChaCha20Rng,
    pub transcript: Vec<Event>,
    pub invariant_violations: u32,
    /// Client-side: primary backups reuse one salt per user so a puncture
    /// revokes every earlier ciphertext too.
    user_salts: BTreeMap<Vec<u8>, Vec<u8>>,
    backup_counter: u64,
    /// Harness ledger of what was backed up, to catch silent wrong
    /// plaintext.
    pub expected: BTreeMap<(Vec<u8>, String), Vec<u8>>,
    pub latest_primary: BTreeMap<Vec<u8>, String>,
}

pub fn puncture_tag(user: &[u8], salt: &[u8]) -> Vec<u8> {
    hash_domain(DomainTag::Bloom, &[b"puncture-tag".as_ref(), user, salt]).to_vec()
}

pub fn attempt_log_id(user: &[u8], backup_id: &str, attempt: u32) -> Vec<u8> {
    wire::encode_fields(&[user, backup_id.as_bytes(), attempt.to_be_bytes().as_ref()])
}

pub fn parse_attempt_log_id(id: &[u8]) -> Option<(Vec<u8>, String, u32)> {
    let f = wire::decode_fields(id).ok()?;
    if f.len() != 3 || f[2].len() != 4 {
        return None;
    }
    Some((
        f[0].clone(),
        String::from_utf8(f[1].clone()).ok()?,
        u32::from_be_bytes(f[2].as_slice().try_into().ok()?),
    ))
}

pub fn ct_commit_hash(ct_bytes: &[u8]) -> [u8; 32] {
    hash_domain(DomainTag::Commit, &[b"ct-hash".as_ref(), ct_bytes])
}

/// Commitment to the cluster identities and ciphertext: the value logged
/// under the attempt id and opened only to the cluster HSMs.
pub fn attempt_commitment(cluster_ids: &[u32], ct_hash: &[u8; 32], rho: &[u8]) -> [u8; 32] {
    let ids: Vec<u8> = cluster_ids.iter().flat_map(|i| i.to_be_bytes()).collect();
    hash_domain(
        DomainTag::Commit,
        &[b"attempt".as_ref(), &ids, ct_hash.as_ref(), rho],
    )
}

fn reply_ad(user: &[u8], node: u32) -> Vec<u8> {
    wire::encode_fields(&[b"reply".as_ref(), user, node.to_be_bytes().as_ref()])
}

impl Simulation {
    pub fn new(config: SimConfig, seed: u64) -> Result<Self, SimError> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let bloom = config.bloom();
        let mut hsms = Vec::with_capacity(config.lhe.total_hsms as usize);
        let mut verify_keys = Vec::new();
        let mut stores = BTreeMap::new();
        for node_id in 0..config.lhe.total_hsms {
            let (signer, vk) = sigs::keygen(config.sig_backend, &mut rng);
            assert!(sigs::register(&vk), "fresh key failed registration");
            let mut store = MemoryBlockServer::new();
            let (punc_pk, punc_sk) = punc::keygen(bloom, 0, &mut store, &mut rng)
                .map_err(|e| SimError::Config(e.to_string()))?;
            stores.insert((node_id, 0), store);
            verify_keys.push(vk);
            hsms.push(Hsm {
                node_id,
                signer,
                punc_pk,
                punc_sk,
                key_since: 0,
                digest: crate::authlog::EMPTY_DIGEST,
                digest_history: vec![crate::authlog::EMPTY_DIGEST],
                gc_count: 0,
                refusing: false,
                failed: false,
                last_epoch_chunks: 0,
                last_epoch_sig_verifies: 0,
            });
        }
        let mpk: Vec<PuncturablePublicKey> = hsms.iter().map(|h| h.punc_pk.clone()).collect();
        let mut mpk_fps = BTreeMap::new();
        mpk_fps.insert(0, mpk.iter().map(|pk| pk.fingerprint).collect());
        let transcript = vec![Event::Init {
            hsms: config.lhe.total_hsms,
        }];
        Ok(Simulation {
            config,
            hsms,
            verify_keys,
            provider: Provider {
                log: LogTree::new(),
                pending: Vec::new(),
                stores,
                backups: BTreeMap::new(),
                reply_cache: BTreeMap::new(),
                epoch_no: 0,
                adversary: AdversaryMode::Honest,
                digest_chain: Vec::new(),
                old_generations: Vec::new(),
            },
            config_epoch: 0,
            mpk,
            mpk_fps,
            rng,
            transcript,
            invariant_violations: 0,
            user_salts: BTreeMap::new(),
            backup_counter: 0,
            expected: BTreeMap::new(),
            latest_primary: BTreeMap::new(),
        })
    }

    fn record(&mut self, event: Event) {
        self.transcript.push(event);
    }

    pub fn transcript_jsonl(&self) -> String {
        self.transcript
            .iter()
            .map(|e| serde_json::to_string(e).expect("events serialize"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    // -- Backup ---------------------------------------------------------------

    /// Primary backup: same salt per user (so one puncture revokes every
    /// earlier ciphertext of the user), fresh transport key, upload to the
    /// provider. Client-side only.
    pub fn client_backup(&mut self, user: &[u8], pin: &[u8], msg: &[u8]) -> String {
        let id = self.backup_inner(user, pin, msg, true, None);
        self.latest_primary.insert(user.to_vec(), id.clone());
        id
    }

    /// Incremental variant: the recovery ciphertext protects a single
    /// fresh AE key and the (possibly large) payload rides alongside,
    /// wrapped under that key.
    pub fn client_backup_incremental(&mut self, user: &[u8], pin: &[u8], msg: &[u8]) -> String {
        let wrap_key = AeKey::random(&mut self.rng);
        let wrapped = ae::encrypt(&wrap_key, msg, &mut self.rng).to_bytes();
        let id = self.backup_inner(user, pin, &wrap_key.0, true, Some(wrapped));
        self.latest_primary.insert(user.to_vec(), id.clone());
        // the ledger still records the real payload
        self.expected
            .insert((user.to_vec(), id.clone()), msg.to_vec());
        id
    }

    fn backup_inner(
        &mut self,
        user: &[u8],
        pin: &[u8],
        msg: &[u8],
        same_salt: bool,
        wrapped: Option<Vec<u8>>,
    ) -> String {
        let salt = if same_salt {
            if !self.user_salts.contains_key(user) {
                let fresh = lhe::sample_salt(&self.config.lhe, &mut self.rng);
                self.user_salts.insert(user.to_vec(), fresh);
            }
            self.user_salts[user].clone()
        } else {
            lhe::sample_salt(&self.config.lhe, &mut self.rng)
        };
        let tag = puncture_tag(user, &salt);
        let pke = punc::PuncPke { tag };
        let ct = lhe::encrypt(
            &self.mpk,
            &pke,
            &salt,
            pin,
            user,
            msg,
            self.config_epoch,
            &self.config.lhe,
            &mut self.rng,
        )
        .expect("validated parameters");
        let backup_id = format!("b{}", self.backup_counter);
        self.backup_counter += 1;
        self.provider.backups.insert(
            (user.to_vec(), backup_id.clone()),
            StoredBackup {
                ct_bytes: ct.to_bytes(),
                config_epoch: self.config_epoch,
                wrapped,
            },
        );
        self.expected
            .insert((user.to_vec(), backup_id.clone()), msg.to_vec());
        self.record(Event::Backup {
            user: String::from_utf8_lossy(user).into_owned(),
            backup_id: backup_id.clone(),
            config_epoch: self.config_epoch,
        });
        backup_id
    }

    /// Session backups (nested, per-recovery) always use a fresh salt: the
    /// main recovery punctures the user's primary tag, and the session
    /// ciphertext must survive that to be recoverable afterwards.
    fn backup_session_key(&mut self, user: &[u8], pin: &[u8], sk: &Scalar) -> String {
        self.backup_inner(user, pin, &sk.to_bytes(), false, None)
    }

    // -- Recovery -------------------------------------------------------------

    /// Recovers the user's latest primary backup.
    pub fn client_recover(&mut self, user: &[u8], pin: &[u8]) -> Option<Vec<u8>> {
        let backup_id = self.latest_primary.get(user)?.clone();
        let outcome = self.client_recover_id(user, pin, &backup_id, FailPoint::None);
        if let Some(msg) = &outcome.result {
            // incremental variant: unwrap through the recovered key
            if let Some(wrapped) = self
                .provider
                .backups
                .get(&(user.to_vec(), backup_id.clone()))
                .and_then(|b| b.wrapped.clone())
            {
                let key: [u8; 32] = msg.as_slice().try_into().ok()?;
                let body = ae::AeCiphertext::from_bytes(&wrapped)?;
                let unwrapped = ae::decrypt(&AeKey(key), &body);
                return self.check_expected(user, &backup_id, unwrapped);
            }
        }
        let r = outcome.result.clone();
        self.check_expected(user, &backup_id, r)
    }

    fn check_expected(
        &mut self,
        user: &[u8],
        backup_id: &str,
        got: Option<Vec<u8>>,
    ) -> Option<Vec<u8>> {
        if let Some(msg) = &got {
            let mismatch = self
                .expected
                .get(&(user.to_vec(), backup_id.to_string()))
                .is_some_and(|expect| expect != msg);
            if mismatch {
                self.invariant_violations += 1;
                self.record(Event::InvariantViolation {
                    what: format!("silent wrong plaintext for backup {backup_id}"),
                });
            }
        }
        got
    }

    /// Lowest unused attempt index for (user, backup), consulting the log
    /// and the pending queue.
    pub fn attempts_used(&self, user: &[u8], backup_id: &str) -> u32 {
        let mut k = 0;
        loop {
            let id = attempt_log_id(user, backup_id, k);
            let in_log = self.provider.log.value_of(&id).is_some();
            let in_pending = self.provider.pending.iter().any(|e| e.id == id);
            if !in_log && !in_pending {
                return k;
            }
            k += 1;
        }
    }

    /// The full recovery flow for one backup id. With a fail point set,
    /// the client dies at that stage and the outcome carries what a
    /// replacement device needs to resume.
    pub fn client_recover_id(
        &mut self,
        user: &[u8],
        pin: &[u8],
        backup_id: &str,
        fail: FailPoint,
    ) -> RecoverOutcome {
        let prep = self.recover_prepare(user, pin, backup_id);
        if prep.queued {
            // Await the epoch that folds the attempt into the log. The
            // provider batches whatever else is pending into it.
            let _ = self.run_epoch(&[]);
        }
        self.recover_complete(prep, fail)
    }

    /// Recovery steps up to the epoch barrier: session keypair + nested
    /// session backup, ciphertext fetch, commitment, and the log-insert
    /// request. Several prepared recoveries can share one epoch.
    pub fn recover_prepare(&mut self, user: &[u8], pin: &[u8], backup_id: &str) -> PreparedRecovery {
        let user_s = String::from_utf8_lossy(user).into_owned();

        // Fresh per-recovery keypair, backed up before any HSM contact.
        let session_sk = Scalar::random(&mut self.rng);
        let session_backup_id = self.backup_session_key(user, pin, &session_sk);

        let mut prep = PreparedRecovery {
            user: user.to_vec(),
            backup_id: backup_id.to_string(),
            session_sk,
            session_backup_id,
            attempt: 0,
            cluster_ids: Vec::new(),
            ct_bytes: Vec::new(),
            ct_hash: [0; 32],
            rho: Vec::new(),
            commitment: [0; 32],
            log_id: Vec::new(),
            queued: false,
            aborted: true,
        };

        // Fetch the recovery ciphertext.
        let Some(stored) = self
            .provider
            .backups
            .get(&(user.to_vec(), backup_id.to_string()))
            .cloned()
        else {
            return prep;
        };
        let mut ct_bytes = stored.ct_bytes.clone();
        if self.provider.adversary == AdversaryMode::SwapCiphertext {
            // serve another user's ciphertext when one exists (defeated by
            // the username binding), otherwise corrupt the salt so the
            // recovery goes to the wrong cluster
            let other = self
                .provider
                .backups
                .iter()
                .find(|(k, _)| k.0 != user)
                .map(|(_, b)| b.ct_bytes.clone());
            match other {
                Some(bytes) => ct_bytes = bytes,
                None => ct_bytes[0] ^= 0x55,
            }
        }
        let Ok(ct) = RecoveryCiphertext::from_bytes(&ct_bytes, self.config.lhe.salt_len()) else {
            return prep;
        };

        // Commit to the cluster identities and ciphertext; ask the
        // provider to log the attempt.
        let attempt = self.attempts_used(user, backup_id);
        let cluster_ids = lhe::select(&ct.salt, pin, &self.config.lhe);
        let ct_hash = ct_commit_hash(&ct_bytes);
        let mut rho = vec![0u8; 16];
        self.rng.fill_bytes(&mut rho);
        let commitment = attempt_commitment(&cluster_ids, &ct_hash, &rho);
        let log_id = attempt_log_id(user, backup_id, attempt);
        prep = PreparedRecovery {
            attempt,
            cluster_ids,
            ct_bytes,
            ct_hash,
            rho,
            commitment,
            log_id: log_id.clone(),
            aborted: false,
            ..prep
        };

        if self.provider.adversary == AdversaryMode::ForgeInclusion {
            // provider silently drops the insert
        } else if self.provider.log.value_of(&log_id).is_some() {
            self.record(Event::AttemptRefusedByLog {
                user: user_s,
                backup_id: backup_id.to_string(),
                attempt,
            });
            prep.aborted = true;
        } else {
            self.provider.pending.push(LogEntry {
                id: log_id,
                val: commitment.to_vec(),
            });
            self.record(Event::AttemptLogged {
                user: user_s,
                backup_id: backup_id.to_string(),
                attempt,
            });
            prep.queued = true;
        }
        prep
    }

    /// Recovery steps after the epoch barrier: obtain the inclusion proof,
    /// open the commitment to the cluster HSMs, collect shares, and
    /// reconstruct.
    pub fn recover_complete(&mut self, prep: PreparedRecovery, fail: FailPoint) -> RecoverOutcome {
        let user_s = String::from_utf8_lossy(&prep.user).into_owned();
        if prep.aborted {
            self.record(Event::Recover {
                user: user_s,
                backup_id: prep.backup_id.clone(),
                ok: false,
            });
            return RecoverOutcome {
                result: None,
                died: false,
                attempt_key: prep.log_id,
                session_backup_id: prep.session_backup_id,
                backup_id: prep.backup_id,
            };
        }

        // Inclusion proof, possibly forged.
        let proof = if self.provider.adversary == AdversaryMode::ForgeInclusion {
            // adversary: prove inclusion in a side log the HSMs never
            // adopted
            let mut side = LogTree::new();
            side.insert(prep.log_id.clone(), prep.commitment.to_vec())
                .unwrap();
            side.prove_includes(&prep.log_id, &prep.commitment)
        } else {
            self.provider
                .log
                .prove_includes(&prep.log_id, &prep.commitment)
        };
        let Some(proof) = proof else {
            self.record(Event::Recover {
                user: user_s,
                backup_id: prep.backup_id.clone(),
                ok: false,
            });
            return RecoverOutcome {
                result: None,
                died: false,
                attempt_key: prep.log_id,
                session_backup_id: prep.session_backup_id,
                backup_id: prep.backup_id,
            };
        };

        // Contact the cluster.
        let session_pk = GroupElement::base_mul(&prep.session_sk);
        let mut replies: Vec<(u32, Vec<u8>)> = Vec::new();
        for (slot, &node) in prep.cluster_ids.iter().enumerate() {
            let req = RecoverRequest {
                user: prep.user.clone(),
                backup_id: prep.backup_id.clone(),
                attempt: prep.attempt,
                cluster_ids: prep.cluster_ids.clone(),
                ct_hash: prep.ct_hash,
                rho: prep.rho.clone(),
                proof: proof.clone(),
                slot: slot as u32,
                session_pk,
                ct_bytes: prep.ct_bytes.clone(),
            };
            if let Some(mut reply) = self.hsm_serve_recovery(node, &req) {
                if self.provider.adversary == AdversaryMode::TamperReply {
                    let pos = reply.len() / 3;
                    reply[pos] ^= 0x0f;
                }
                self.provider
                    .reply_cache
                    .entry(prep.log_id.clone())
                    .or_default()
                    .push((node, reply.clone()));
                replies.push((node, reply));
            }
        }

        if fail == FailPoint::AfterServes {
            self.record(Event::ClientDied {
                user: user_s,
                backup_id: prep.backup_id.clone(),
            });
            return RecoverOutcome {
                result: None,
                died: true,
                attempt_key: prep.log_id,
                session_backup_id: prep.session_backup_id,
                backup_id: prep.backup_id,
            };
        }

        let ct = RecoveryCiphertext::from_bytes(&prep.ct_bytes, self.config.lhe.salt_len())
            .expect("parsed during prepare");
        let result = self.decrypt_replies(&prep.user, &prep.session_sk, &replies, &ct);
        self.record(Event::Recover {
            user: user_s,
            backup_id: prep.backup_id.clone(),
            ok: result.is_some(),
        });
        RecoverOutcome {
            result,
            died: false,
            attempt_key: prep.log_id,
            session_backup_id: prep.session_backup_id,
            backup_id: prep.backup_id,
        }
    }

    fn decrypt_replies(
        &self,
        user: &[u8],
        session_sk: &Scalar,
        replies: &[(u32, Vec<u8>)],
        ct: &RecoveryCiphertext,
    ) -> Option<Vec<u8>> {
        let transport = PrimeField::transport();
        let shares: Vec<PlaintextShare> = replies
            .iter()
            .filter_map(|(node, reply)| {
                let parsed = ElGamalCiphertext::from_bytes(reply).ok()?;
                let plain = elgamal::decrypt(session_sk, &reply_ad(user, *node), &parsed)?;
                let (share_user, share) = lhe::decode_share_plaintext(&plain, &transport)?;
                if share_user != user {
                    return None;
                }
                Some(PlaintextShare {
                    user: share_user,
                    share,
                    payload: ct.payload.clone(),
                })
            })
            .collect();
        lhe::reconstruct(&shares, &self.config.lhe)
    }

    /// Step 6/7 on one HSM: verify the logged commitment, decrypt the
    /// slot, check the embedded username, puncture, then release the
    /// share encrypted to the session key (and deposit a copy at the
    /// provider via the caller). No state changes before all checks pass;
    /// the puncture always precedes the release.
    pub fn hsm_serve_recovery(&mut self, node: u32, req: &RecoverRequest) -> Option<Vec<u8>> {
        let user_s = String::from_utf8_lossy(&req.user).into_owned();
        let refuse =
            |sim: &mut Simulation, reason: &str| {
                sim.transcript.push(Event::ShareRefused {
                    node,
                    user: user_s.clone(),
                    slot: req.slot,
                    reason: reason.to_string(),
                });
                None::<Vec<u8>>
            };

        {
            let hsm = &self.hsms[node as usize];
            if hsm.failed {
                return None; // no response at all
            }
            if hsm.refusing {
                return refuse(self, "gc bound exhausted");
            }
        }
        if req.attempt >= self.config.max_guesses {
            return refuse(self, "attempt bound");
        }
        if req.cluster_ids.get(req.slot as usize) != Some(&node) {
            return refuse(self, "slot does not name this hsm");
        }
        // Commitment and inclusion proof under the held digest.
        if ct_commit_hash(&req.ct_bytes) != req.ct_hash {
            return refuse(self, "ciphertext hash mismatch");
        }
        let commitment = attempt_commitment(&req.cluster_ids, &req.ct_hash, &req.rho);
        let log_id = attempt_log_id(&req.user, &req.backup_id, req.attempt);
        if !does_include(
            &self.hsms[node as usize].digest,
            &log_id,
            &commitment,
            &req.proof,
        ) {
            return refuse(self, "inclusion proof rejected");
        }
        let Ok(ct) = RecoveryCiphertext::from_bytes(&req.ct_bytes, self.config.lhe.salt_len())
        else {
            return refuse(self, "malformed ciphertext");
        };
        let Some(epoch_fps) = self.mpk_fps.get(&ct.epoch) else {
            return refuse(self, "unknown config epoch");
        };
        let fps: Vec<[u8; 32]> = match req
            .cluster_ids
            .iter()
            .map(|&i| epoch_fps.get(i as usize).copied())
            .collect::<Option<Vec<_>>>()
        {
            Some(fps) => fps,
            None => return refuse(self, "cluster id out of range"),
        };
        let ad = lhe::share_ad(&req.user, &ct.salt, &fps, req.slot);
        let Some(slot_ct_bytes) = ct.share_cts.get(req.slot as usize) else {
            return refuse(self, "slot out of range");
        };
        let Some(slot_ct) = PuncCiphertext::from_bytes(slot_ct_bytes) else {
            return refuse(self, "malformed slot ciphertext");
        };

        let hsm = &mut self.hsms[node as usize];
        let store = self
            .provider
            .stores
            .get_mut(&(node, hsm.punc_sk.epoch_id))
            .expect("store exists for current key epoch");
        let Some(plain) = punc::decrypt(&hsm.punc_sk, &slot_ct, &ad, store) else {
            return refuse(self, "slot decryption failed");
        };
        let transport = PrimeField::transport();
        let Some((embedded_user, _)) = lhe::decode_share_plaintext(&plain, &transport) else {
            return refuse(self, "malformed share plaintext");
        };
        if embedded_user != req.user {
            return refuse(self, "username mismatch");
        }

        // All checks passed: revoke before releasing.
        let tag = puncture_tag(&req.user, &ct.salt);
        punc::puncture(&mut hsm.punc_sk, &tag, store, &mut self.rng)
            .expect("puncture on intact store");
        self.transcript.push(Event::Punctured {
            node,
            tag: hex::encode(&tag),
        });
        let reply =
            elgamal::encrypt(&req.session_pk, &reply_ad(&req.user, node), &plain, &mut self.rng);
        self.transcript.push(Event::ShareReleased {
            node,
            user: user_s,
            slot: req.slot,
        });
        Some(reply.to_bytes())
    }

    /// Resumes a died recovery on a replacement device: recover the
    /// session key through the normal protocol, then decrypt the cached
    /// replies.
    pub fn client_resume(&mut self, user: &[u8], pin: &[u8], ticket: &RecoverOutcome) -> Option<Vec<u8>> {
        let outcome =
            self.client_recover_id(user, pin, &ticket.session_backup_id, FailPoint::None);
        let sk_bytes = outcome.result?;
        self.resume_with_session_sk(user, ticket, &sk_bytes)
    }

    /// The tail of a resume, split out so doubly-nested failures can be
    /// recomposed by hand.
    pub fn resume_with_session_sk(
        &mut self,
        user: &[u8],
        ticket: &RecoverOutcome,
        session_sk_bytes: &[u8],
    ) -> Option<Vec<u8>> {
        let session_sk = Scalar::from_bytes(session_sk_bytes).ok()?;
        let replies = self.provider.reply_cache.get(&ticket.attempt_key)?.clone();
        let stored = self
            .provider
            .backups
            .get(&(user.to_vec(), ticket.backup_id.clone()))?;
        let ct = RecoveryCiphertext::from_bytes(&stored.ct_bytes, self.config.lhe.salt_len()).ok()?;
        let got = self.decrypt_replies(user, &session_sk, &replies, &ct);
        let r = got.clone();
        self.check_expected(user, &ticket.backup_id.clone(), r)
    }

    // -- Epochs ----------------------------------------------------------------

    pub fn online_set(&self) -> Vec<u32> {
        self.hsms
            .iter()
            .filter(|h| !h.failed && !h.refusing)
            .map(|h| h.node_id)
            .collect()
    }

    /// Runs one epoch over the pending insertions. `fail_waves` is the
    /// scripted mid-epoch failure schedule: wave `k` nodes die during the
    /// `k`-th audit round. In the deterministic-chunk variant survivors
    /// recursively take over the failed nodes' chunks; in the random
    /// variant a mid-epoch failure restarts the whole epoch.
    pub fn run_epoch(&mut self, fail_waves: &[Vec<u32>]) -> Result<(), SimError> {
        self.run_epoch_inner(fail_waves, None)
    }

    /// Adversary entry point: build the epoch with a value overwrite of an
    /// existing id spliced into a uniformly chosen chunk. Returns the node
    /// ids that detected (rejected) it.
    pub fn forge_epoch(&mut self, target_id: &[u8], new_val: &[u8]) -> Vec<u32> {
        let chunk = self.rng.gen_range(0..self.config.lhe.total_hsms);
        let forge = ForgeSpec {
            target_id: target_id.to_vec(),
            new_val: new_val.to_vec(),
            chunk,
        };
        let mut detectors = Vec::new();
        let _ = self.run_epoch_inner(&[], Some((&forge, &mut detectors)));
        detectors
    }

    fn run_epoch_inner(
        &mut self,
        fail_waves: &[Vec<u32>],
        mut forge: Option<(&ForgeSpec, &mut Vec<u32>)>,
    ) -> Result<(), SimError> {
        let inserts: Vec<LogEntry> = std::mem::take(&mut self.provider.pending);
        let chunk_count = self.config.lhe.total_hsms;
        let mut waves = fail_waves.to_vec();

        for restart in 0..self.config.restart_cap {
            let online = self.online_set();
            let epoch_no = self.provider.epoch_no;
            self.record(Event::EpochStart {
                epoch_no,
                inserts: inserts.len(),
                online: online.len(),
            });

            // The provider applies the chunks to a working copy; the real
            // log only advances if the epoch finalizes.
            let mut working = self.provider.log.clone();
            let update = logsync::provider_prepare(
                &mut working,
                &inserts,
                chunk_count,
                epoch_no,
                forge.as_ref().map(|(f, _)| *f),
            )
            .map_err(|e| SimError::Epoch(e.to_string()))?;
            let header = update.header(online.clone());

            // Equivocation: odd nodes are told a different new digest.
            let equivocate = self.provider.adversary == AdversaryMode::EquivocateDigest;
            let fake_header = {
                let mut h = header.clone();
                h.new_digest = hash_domain(DomainTag::Commit, &[b"equivocation".as_ref()]);
                h
            };
            let header_for = |node: u32| -> &PrepareEpoch {
                if equivocate && node % 2 == 1 {
                    &fake_header
                } else {
                    &header
                }
            };

            // Audit rounds. Wave k of the failure schedule strikes during
            // round k: those nodes die before signing.
            let mut alive: Vec<u32> = online.clone();
            let mut signatures: BTreeMap<u32, Sig> = BTreeMap::new();
            let mut rejected = false;
            let mut mid_epoch_failure = false;
            let mut round = 0usize;
            // chunks each round's auditors must cover; round 0 is their own
            // sample, later rounds cover failed nodes' deterministic sets
            let mut extra_chunks: Vec<u32> = Vec::new();
            loop {
                let wave: BTreeSet<u32> = waves
                    .get(round)
                    .map(|w| w.iter().copied().collect())
                    .unwrap_or_default();
                let mut next_extra: Vec<u32> = Vec::new();
                let auditors: Vec<u32> = alive.clone();
                let survivors: Vec<u32> = auditors
                    .iter()
                    .copied()
                    .filter(|n| !wave.contains(n))
                    .collect();
                for (pos, &node) in auditors.iter().enumerate() {
                    if wave.contains(&node) {
                        // dies mid-epoch; its deterministic chunks must be
                        // re-audited by the survivors
                        self.hsms[node as usize].failed = true;
                        self.record(Event::HsmFailed { node });
                        mid_epoch_failure = true;
                        if self.config.chunk_mode == ChunkMode::Deterministic {
                            next_extra.extend(logsync::choose_chunks_deterministic(
                                &update.root,
                                node,
                                chunk_count,
                                self.config.audit_chunks,
                            ));
                        }
                        continue;
                    }
                    if round > 0 && extra_chunks.is_empty() {
                        continue; // nothing left to cover for this round
                    }
                    let my_chunks: Vec<u32> = if round == 0 {
                        match self.config.chunk_mode {
                            ChunkMode::Random => logsync::choose_chunks_random(
                                chunk_count,
                                self.config.audit_chunks,
                                &mut self.rng,
                            ),
                            ChunkMode::Deterministic => logsync::choose_chunks_deterministic(
                                &update.root,
                                node,
                                chunk_count,
                                self.config.audit_chunks,
                            ),
                        }
                    } else {
                        // round-robin share of the chunks orphaned by the
                        // previous wave
                        extra_chunks
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| i % survivors.len() == pos % survivors.len())
                            .map(|(_, &c)| c)
                            .collect()
                    };
                    if round > 0 && !my_chunks.is_empty() {
                        self.record(Event::RecursiveAudit {
                            node,
                            covered_for: round as u32,
                            chunks: my_chunks.len(),
                        });
                    }
                    let audits: Vec<_> = my_chunks.iter().map(|&c| update.respond(c)).collect();
                    let held = self.hsms[node as usize].digest;
                    match logsync::hsm_audit(&held, header_for(node), &audits) {
                        Ok(count) => {
                            if round == 0 {
                                self.hsms[node as usize].last_epoch_chunks = count;
                            } else {
                                self.hsms[node as usize].last_epoch_chunks += count;
                            }
                            let msg = {
                                let h = header_for(node);
                                logsync::epoch_message(
                                    &h.old_digest,
                                    &h.new_digest,
                                    &h.root,
                                    h.epoch_no,
                                )
                            };
                            signatures.insert(
                                node,
                                sigs::sign(&self.hsms[node as usize].signer, &msg),
                            );
                        }
                        Err(reason) => {
                            rejected = true;
                            self.record(Event::EpochRejected {
                                epoch_no,
                                node,
                                reason: reason.to_string(),
                            });
                            if let Some((_, detectors)) = forge.as_mut() {
                                detectors.push(node);
                            }
                        }
                    }
                }
                alive = survivors;
                extra_chunks = next_extra;
                round += 1;
                let more_failures = round < waves.len();
                if alive.is_empty() || (!more_failures && extra_chunks.is_empty()) {
                    break;
                }
            }
            waves.clear(); // the schedule only applies to the first attempt

            if rejected {
                self.record(Event::EpochAborted {
                    epoch_no,
                    reason: "audit rejection".into(),
                });
                self.provider.pending = inserts;
                return Err(SimError::Epoch("audit rejection".into()));
            }

            // Random mode: a mid-epoch failure restarts the process with
            // the failed nodes excluded. Deterministic mode already had
            // the survivors cover for them.
            if mid_epoch_failure && self.config.chunk_mode == ChunkMode::Random {
                self.record(Event::EpochRestart {
                    epoch_no,
                    reason: format!("mid-epoch failure, attempt {restart}"),
                });
                continue;
            }

            // Finalize: the provider needs a signature from every node it
            // declared online (minus deterministic-mode casualties, whose
            // chunks were covered and whose departure shrank the set).
            let final_online: Vec<u32> = if self.config.chunk_mode == ChunkMode::Deterministic {
                alive
            } else {
                online
            };
            if final_online.iter().any(|n| !signatures.contains_key(n)) {
                self.record(Event::EpochRestart {
                    epoch_no,
                    reason: "missing signatures".into(),
                });
                continue;
            }
            let ordered: Vec<Sig> = final_online
                .iter()
                .map(|n| signatures[n].clone())
                .collect();
            let Some(combined) = sigs::combine(&ordered) else {
                self.record(Event::EpochAborted {
                    epoch_no,
                    reason: "no signatures to combine".into(),
                });
                return Err(SimError::Epoch("no signatures".into()));
            };

            // Broadcast: every online HSM checks the declared set size and
            // the combined signature over ITS view of the header before
            // adopting.
            let min_online = self.config.min_online();
            let vks: Vec<VerifyKey> = final_online
                .iter()
                .map(|&n| self.verify_keys[n as usize].clone())
                .collect();
            let mut all_adopted = true;
            let mut adoptions: Vec<u32> = Vec::new();
            for &node in &final_online {
                let h = header_for(node);
                let msg =
                    logsync::epoch_message(&h.old_digest, &h.new_digest, &h.root, h.epoch_no);
                let accept =
                    final_online.len() >= min_online && verify_combined(&vks, &msg, &combined);
                if accept {
                    adoptions.push(node);
                } else {
                    all_adopted = false;
                }
            }
            if !all_adopted {
                self.record(Event::EpochAborted {
                    epoch_no,
                    reason: "combined signature rejected".into(),
                });
                self.provider.pending = inserts;
                return Err(SimError::Epoch("combined signature rejected".into()));
            }
            for &node in &adoptions {
                let hsm = &mut self.hsms[node as usize];
                hsm.digest = header.new_digest;
                hsm.digest_history.push(header.new_digest);
                hsm.last_epoch_sig_verifies = 1;
            }

            // Commit provider state.
            self.provider.log = working;
            self.provider.epoch_no += 1;
            let cumulative = self.provider.log.entries().len() as u64;
            self.provider
                .digest_chain
                .push((cumulative, header.new_digest));
            self.record(Event::EpochFinalized {
                epoch_no,
                digest: hex::encode(header.new_digest),
            });
            return Ok(());
        }
        self.record(Event::EpochAborted {
            epoch_no: self.provider.epoch_no,
            reason: "restart cap exhausted".into(),
        });
        self.provider.pending = inserts;
        Err(SimError::Epoch("restart cap exhausted".into()))
    }

    // -- Maintenance ------------------------------------------------------------

    /// Provider-initiated log reset. Each HSM honors at most `gc_bound`
    /// of these over its lifetime, then refuses further requests.
    pub fn garbage_collect(&mut self) {
        let records = std::mem::take(&mut self.provider.log);
        let chain = std::mem::take(&mut self.provider.digest_chain);
        self.provider
            .old_generations
            .push((records.entries().to_vec(), chain));
        self.provider.pending.clear();
        self.provider.reply_cache.clear();
        for hsm in &mut self.hsms {
            if hsm.failed {
                continue;
            }
            if hsm.gc_count >= self.config.gc_bound {
                hsm.refusing = true;
                self.transcript.push(Event::GcRefused { node: hsm.node_id });
                continue;
            }
            hsm.gc_count += 1;
            hsm.digest = crate::authlog::EMPTY_DIGEST;
            hsm.digest_history.push(crate::authlog::EMPTY_DIGEST);
        }
        self.record(Event::Gc {
            generation: self.provider.old_generations.len(),
        });
    }

    /// Rotates every puncturable key whose deletion count crossed the
    /// half-way trigger. A rotation batch bumps the config epoch and
    /// publishes a fresh master public key.
    pub fn rotate_due(&mut self) -> usize {
        let due: Vec<u32> = self
            .hsms
            .iter()
            .filter(|h| !h.failed && punc::needs_rotation(&h.punc_sk))
            .map(|h| h.node_id)
            .collect();
        if due.is_empty() {
            return 0;
        }
        self.config_epoch += 1;
        for &node in &due {
            let hsm = &mut self.hsms[node as usize];
            let next_epoch = hsm.punc_sk.epoch_id + 1;
            let mut store = MemoryBlockServer::new();
            let (pk, sk) = punc::rotate(&mut hsm.punc_sk, &mut store, &mut self.rng)
                .expect("rotation keygen");
            self.provider.stores.insert((node, next_epoch), store);
            hsm.punc_pk = pk.clone();
            hsm.punc_sk = sk;
            hsm.key_since = self.config_epoch;
            self.mpk[node as usize] = pk;
            self.transcript.push(Event::Rotated {
                node,
                punc_epoch: next_epoch,
                config_epoch: self.config_epoch,
            });
        }
        self.mpk_fps.insert(
            self.config_epoch,
            self.mpk.iter().map(|pk| pk.fingerprint).collect(),
        );
        due.len()
    }

    pub fn fail_hsm(&mut self, node: u32) {
        self.hsms[node as usize].failed = true;
        self.record(Event::HsmFailed { node });
    }

    /// Harness-only: dumps the chosen HSMs' complete secret state.
    pub fn adversary_compromise(&mut self, nodes: &[u32]) -> Vec<HsmDump> {
        self.record(Event::Compromised {
            nodes: nodes.to_vec(),
        });
        nodes
            .iter()
            .map(|&n| {
                let hsm = &self.hsms[n as usize];
                HsmDump {
                    node_id: n,
                    punc_sk: hsm.punc_sk.clone(),
                    digest: hsm.digest,
                    key_since: hsm.key_since,
                }
            })
            .collect()
    }

    /// Full block-write history for one HSM across every key epoch.
    pub fn full_store_history(&self, node: u32) -> Vec<(u64, Vec<u8>)> {
        self.provider
            .stores
            .range((node, 0)..=(node, u64::MAX))
            .flat_map(|(_, s)| s.history.iter().cloned())
            .collect()
    }

    /// History for the store backing one HSM's *current* key.
    pub fn current_store_history(&self, node: u32) -> Vec<(u64, Vec<u8>)> {
        let epoch = self.hsms[node as usize].punc_sk.epoch_id;
        self.provider
            .stores
            .get(&(node, epoch))
            .map(|s| s.history.clone())
            .unwrap_or_default()
    }

    pub fn rng_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

fn verify_combined(vks: &[VerifyKey], msg: &[u8], combined: &CombinedSig) -> bool {
    sigs::verify(vks, msg, combined)
}

// -- Persistence ---------------------------------------------------------------

/// Serializable snapshot of the whole simulation (the key ceremony's
/// on-disk form). Group elements and byte strings travel as hex.
#[derive(Serialize, Deserialize)]
pub struct SimSnapshot {
    pub config: SimConfig,
    pub seed_next: u64,
    pub config_epoch: u64,
    pub hsms: Vec<HsmSnapshot>,
    pub provider: ProviderSnapshot,
    pub mpk_fps: Vec<(u64, Vec<String>)>,
    pub user_salts: Vec<(String, String)>,
    pub backup_counter: u64,
    pub latest_primary: Vec<(String, String)>,
    pub expected: Vec<(String, String, String)>,
}

#[derive(Serialize, Deserialize)]
pub struct HsmSnapshot {
    pub node_id: u32,
    pub signer: sigs::PersistedSigner,
    pub punc_sk: PuncturableSecretKey,
    pub slot_pks_hex: Vec<String>,
    pub key_since: u64,
    pub digest_hex: String,
    pub digest_history_hex: Vec<String>,
    pub gc_count: u32,
    pub refusing: bool,
    pub failed: bool,
}

#[derive(Serialize, Deserialize)]
pub struct ProviderSnapshot {
    pub records: Vec<(String, String)>,
    pub pending: Vec<(String, String)>,
    pub digest_chain: Vec<(u64, String)>,
    pub old_generations: Vec<(Vec<(String, String)>, Vec<(u64, String)>)>,
    pub epoch_no: u64,
    pub backups: Vec<(String, String, String, u64, Option<String>)>,
    pub reply_cache: Vec<(String, Vec<(u32, String)>)>,
    pub stores: Vec<(u32, u64, MemoryBlockServer)>,
}

fn hex32(bytes: &[u8; 32]) -> String {
    hex::encode(bytes)
}

fn unhex32(s: &str) -> Option<[u8; 32]> {
    hex::decode(s).ok()?.as_slice().try_into().ok()
}

impl Simulation {
    /// Captures the complete simulation state. Consumes one rng draw so
    /// save/load keeps the deterministic stream moving forward.
    pub fn snapshot(&mut self) -> SimSnapshot {
        let seed_next = self.rng.next_u64();
        SimSnapshot {
            config: self.config.clone(),
            seed_next,
            config_epoch: self.config_epoch,
            hsms: self
                .hsms
                .iter()
                .map(|h| HsmSnapshot {
                    node_id: h.node_id,
                    signer: sigs::persist_signer(&h.signer, &self.verify_keys[h.node_id as usize]),
                    punc_sk: h.punc_sk.clone(),
                    slot_pks_hex: h
                        .punc_pk
                        .slot_pks
                        .iter()
                        .map(|pk| hex::encode(pk.to_bytes()))
                        .collect(),
                    key_since: h.key_since,
                    digest_hex: hex32(&h.digest),
                    digest_history_hex: h.digest_history.iter().map(hex32).collect(),
                    gc_count: h.gc_count,
                    refusing: h.refusing,
                    failed: h.failed,
                })
                .collect(),
            provider: ProviderSnapshot {
                records: self
                    .provider
                    .log
                    .entries()
                    .iter()
                    .map(|e| (hex::encode(&e.id), hex::encode(&e.val)))
                    .collect(),
                pending: self
                    .provider
                    .pending
                    .iter()
                    .map(|e| (hex::encode(&e.id), hex::encode(&e.val)))
                    .collect(),
                digest_chain: self
                    .provider
                    .digest_chain
                    .iter()
                    .map(|(n, d)| (*n, hex32(d)))
                    .collect(),
                old_generations: self
                    .provider
                    .old_generations
                    .iter()
                    .map(|(records, chain)| {
                        (
                            records
                                .iter()
                                .map(|e| (hex::encode(&e.id), hex::encode(&e.val)))
                                .collect(),
                            chain.iter().map(|(n, d)| (*n, hex32(d))).collect(),
                        )
                    })
                    .collect(),
                epoch_no: self.provider.epoch_no,
                backups: self
                    .provider
                    .backups
                    .iter()
                    .map(|((user, id), b)| {
                        (
                            hex::encode(user),
                            id.clone(),
                            hex::encode(&b.ct_bytes),
                            b.config_epoch,
                            b.wrapped.as_ref().map(hex::encode),
                        )
                    })
                    .collect(),
                reply_cache: self
                    .provider
                    .reply_cache
                    .iter()
                    .map(|(k, replies)| {
                        (
                            hex::encode(k),
                            replies.iter().map(|(n, r)| (*n, hex::encode(r))).collect(),
                        )
                    })
                    .collect(),
                stores: self
                    .provider
                    .stores
                    .iter()
                    .map(|(&(node, epoch), s)| (node, epoch, s.clone()))
                    .collect(),
            },
            mpk_fps: self
                .mpk_fps
                .iter()
                .map(|(&e, fps)| (e, fps.iter().map(hex32).collect()))
                .collect(),
            user_salts: self
                .user_salts
                .iter()
                .map(|(u, s)| (hex::encode(u), hex::encode(s)))
                .collect(),
            backup_counter: self.backup_counter,
            latest_primary: self
                .latest_primary
                .iter()
                .map(|(u, id)| (hex::encode(u), id.clone()))
                .collect(),
            expected: self
                .expected
                .iter()
                .map(|((u, id), m)| (hex::encode(u), id.clone(), hex::encode(m)))
                .collect(),
        }
    }

    pub fn restore(snap: &SimSnapshot) -> Result<Self, SimError> {
        let bad = |what: &str| SimError::Config(format!("corrupt snapshot: {what}"));
        let mut sim = Simulation::new_empty(snap.config.clone(), snap.seed_next)?;
        sim.config_epoch = snap.config_epoch;
        for h in &snap.hsms {
            let (signer, vk) =
                sigs::restore_signer(&h.signer).ok_or_else(|| bad("signer key"))?;
            let slot_pks: Vec<GroupElement> = h
                .slot_pks_hex
                .iter()
                .map(|s| {
                    hex::decode(s)
                        .ok()
                        .and_then(|b| GroupElement::from_bytes(&b).ok())
                })
                .collect::<Option<_>>()
                .ok_or_else(|| bad("slot pk"))?;
            let punc_pk = PuncturablePublicKey::from_parts(
                h.punc_sk.params,
                h.punc_sk.epoch_id,
                slot_pks,
            );
            sim.verify_keys.push(vk);
            sim.hsms.push(Hsm {
                node_id: h.node_id,
                signer,
                punc_pk,
                punc_sk: h.punc_sk.clone(),
                key_since: h.key_since,
                digest: unhex32(&h.digest_hex).ok_or_else(|| bad("digest"))?,
                digest_history: h
                    .digest_history_hex
                    .iter()
                    .map(|s| unhex32(s))
                    .collect::<Option<_>>()
                    .ok_or_else(|| bad("digest history"))?,
                gc_count: h.gc_count,
                refusing: h.refusing,
                failed: h.failed,
                last_epoch_chunks: 0,
                last_epoch_sig_verifies: 0,
            });
        }
        sim.mpk = sim.hsms.iter().map(|h| h.punc_pk.clone()).collect();
        for (epoch, fps) in &snap.mpk_fps {
            sim.mpk_fps.insert(
                *epoch,
                fps.iter()
                    .map(|s| unhex32(s))
                    .collect::<Option<_>>()
                    .ok_or_else(|| bad("mpk fingerprint"))?,
            );
        }
        let unpair = |pairs: &[(String, String)]| -> Result<Vec<LogEntry>, SimError> {
            pairs
                .iter()
                .map(|(i, v)| {
                    Ok(LogEntry {
                        id: hex::decode(i).map_err(|_| bad("record id"))?,
                        val: hex::decode(v).map_err(|_| bad("record val"))?,
                    })
                })
                .collect()
        };
        for e in unpair(&snap.provider.records)? {
            sim.provider
                .log
                .insert(e.id, e.val)
                .map_err(|_| bad("duplicate log id"))?;
        }
        sim.provider.pending = unpair(&snap.provider.pending)?;
        sim.provider.digest_chain = snap
            .provider
            .digest_chain
            .iter()
            .map(|(n, d)| unhex32(d).map(|d| (*n, d)))
            .collect::<Option<_>>()
            .ok_or_else(|| bad("digest chain"))?;
        for (records, chain) in &snap.provider.old_generations {
            sim.provider.old_generations.push((
                unpair(records)?,
                chain
                    .iter()
                    .map(|(n, d)| unhex32(d).map(|d| (*n, d)))
                    .collect::<Option<_>>()
                    .ok_or_else(|| bad("old chain"))?,
            ));
        }
        sim.provider.epoch_no = snap.provider.epoch_no;
        for (user, id, ct, epoch, wrapped) in &snap.provider.backups {
            sim.provider.backups.insert(
                (hex::decode(user).map_err(|_| bad("backup user"))?, id.clone()),
                StoredBackup {
                    ct_bytes: hex::decode(ct).map_err(|_| bad("backup ct"))?,
                    config_epoch: *epoch,
                    wrapped: wrapped
                        .as_ref()
                        .map(|w| hex::decode(w).map_err(|_| bad("wrapped")))
                        .transpose()?,
                },
            );
        }
        for (key, replies) in &snap.provider.reply_cache {
            sim.provider.reply_cache.insert(
                hex::decode(key).map_err(|_| bad("cache key"))?,
                replies
                    .iter()
                    .map(|(n, r)| hex::decode(r).map(|r| (*n, r)))
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("cached reply"))?,
            );
        }
        for (node, epoch, store) in &snap.provider.stores {
            sim.provider.stores.insert((*node, *epoch), store.clone());
        }
        for (u, s) in &snap.user_salts {
            sim.user_salts.insert(
                hex::decode(u).map_err(|_| bad("salt user"))?,
                hex::decode(s).map_err(|_| bad("salt"))?,
            );
        }
        sim.backup_counter = snap.backup_counter;
        for (u, id) in &snap.latest_primary {
            sim.latest_primary
                .insert(hex::decode(u).map_err(|_| bad("primary user"))?, id.clone());
        }
        for (u, id, m) in &snap.expected {
            sim.expected.insert(
                (hex::decode(u).map_err(|_| bad("expected user"))?, id.clone()),
                hex::decode(m).map_err(|_| bad("expected msg"))?,
            );
        }
        Ok(sim)
    }

    /// A shell with no HSMs, used by [`Simulation::restore`].
    fn new_empty(config: SimConfig, seed: u64) -> Result<Self, SimError> {
        config.validate()?;
        Ok(Simulation {
            config,
            hsms: Vec::new(),
            verify_keys: Vec::new(),
            provider: Provider {
                log: LogTree::new(),
                pending: Vec::new(),
                stores: BTreeMap::new(),
                backups: BTreeMap::new(),
                reply_cache: BTreeMap::new(),
                epoch_no: 0,
                adversary: AdversaryMode::Honest,
                digest_chain: Vec::new(),
                old_generations: Vec::new(),
            },
            config_epoch: 0,
            mpk: Vec::new(),
            mpk_fps: BTreeMap::new(),
            rng: ChaCha20Rng::seed_from_u64(seed),
            transcript: Vec::new(),
            invariant_violations: 0,
            user_salts: BTreeMap::new(),
            backup_counter: 0,
            expected: BTreeMap::new(),
            latest_primary: BTreeMap::new(),
        })
    }
}
