//! The epoch log-update protocol.
//!
//! The provider splits an epoch's insertions into `N` chunks (one per
//! HSM), applies them to its log one chunk at a time, and commits the
//! resulting digest sequence `d_0 .. d_N` — each digest paired with its
//! chunk's extension proof — into a Merkle root `R`. Each HSM samples `C`
//! chunks (with replacement), audits their extension proofs and their
//! inclusion under `R`, and signs the canonical `(d, d', R)` message on
//! success; auditors of the first and last chunks additionally pin the
//! sequence endpoints to the held digest and the announced new digest.
//!
//! Committing the digest *sequence* positionally means any two auditors
//! referencing chunk boundary `i` see the same `d_i`, so a provider cannot
//! splice an unrelated chain segment between audited chunks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::authlog::{does_extend, ExtensionProof, LogEntry, LogTree};
use crate::crypto::hash::{hash_domain, DomainTag, HashStream};
use crate::wire;
use rand::RngCore;

#[derive(Debug, Error, PartialEq, Eq, Clone, Copy)]
pub enum AuditReject {
    #[error("extension proof failed")]
    BadExtension,
    #[error("commitment root inclusion failed")]
    BadRootInclusion,
    #[error("digest-chain endpoint mismatch")]
    EndpointMismatch,
}

/// How an HSM picks which chunks to audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChunkMode {
    /// Private randomness.
    Random,
    /// A deterministic function of the Merkle root and the HSM's node id,
    /// so survivors can recompute (and re-audit) a failed HSM's chunks.
    Deterministic,
}

// -- Merkle commitment over the digest sequence ------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MerklePath {
    /// Sibling hashes from the leaf up; the flag marks a left-side sibling.
    pub siblings: Vec<([u8; 32], bool)>,
}

fn merkle_node(left: &[u8; 32], right: &[u8; 32]) -> [u8; 32] {
    hash_domain(DomainTag::LogNode, &[left.as_ref(), right.as_ref()])
}

fn merkle_root(leaves: &[[u8; 32]]) -> [u8; 32] {
    match leaves.len() {
        0 => [0u8; 32],
        1 => leaves[0],
        n => {
            let split = (n - 1).next_power_of_two() / 2.max(1);
            let split = split.max(1);
            let left = merkle_root(&leaves[..split]);
            let right = merkle_root(&leaves[split..]);
            merkle_node(&left, &right)
        }
    }
}

fn merkle_prove(leaves: &[[u8; 32]], index: usize) -> MerklePath {
    fn rec(leaves: &[[u8; 32]], index: usize, path: &mut Vec<([u8; 32], bool)>) {
        if leaves.len() <= 1 {
            return;
        }
        let split = ((leaves.len() - 1).next_power_of_two() / 2).max(1);
        if index < split {
            rec(&leaves[..split], index, path);
            path.push((merkle_root(&leaves[split..]), false));
        } else {
            rec(&leaves[split..], index - split, path);
            path.push((merkle_root(&leaves[..split]), true));
        }
    }
    let mut siblings = Vec::new();
    rec(leaves, index, &mut siblings);
    MerklePath { siblings }
}

fn merkle_verify(root: &[u8; 32], leaf: &[u8; 32], path: &MerklePath) -> bool {
    let mut h = *leaf;
    for (sibling, sibling_is_left) in &path.siblings {
        h = if *sibling_is_left {
            merkle_node(sibling, &h)
        } else {
            merkle_node(&h, sibling)
        };
    }
    h == *root
}

fn proof_hash(proof: &ExtensionProof) -> [u8; 32] {
    hash_domain(
        DomainTag::Commit,
        &[b"ext-proof".as_ref(), proof.to_bytes().as_ref()],
    )
}

/// Leaf `0` commits the starting digest; leaf `i >= 1` commits `(i, d_i,
/// H(pi_i))`.
fn sequence_leaf(index: u32, digest: &[u8; 32], proof_h: Option<&[u8; 32]>) -> [u8; 32] {
    match proof_h {
        None => hash_domain(
            DomainTag::Commit,
            &[
                b"epoch-digest".as_ref(),
                index.to_be_bytes().as_ref(),
                digest.as_ref(),
            ],
        ),
        Some(ph) => hash_domain(
            DomainTag::Commit,
            &[
                b"epoch-digest".as_ref(),
                index.to_be_bytes().as_ref(),
                digest.as_ref(),
                ph.as_ref(),
            ],
        ),
    }
}

/// Canonical signed message: `"safetypin/epoch" || d || d' || R ||
/// epochNumber(8B BE)`. The epoch number blocks cross-epoch replay of the
/// combined signature.
pub fn epoch_message(
    old_digest: &[u8; 32],
    new_digest: &[u8; 32],
    root: &[u8; 32],
    epoch_no: u64,
) -> Vec<u8> {
    let mut msg = b"safetypin/epoch".to_vec();
    msg.extend_from_slice(old_digest);
    msg.extend_from_slice(new_digest);
    msg.extend_from_slice(root);
    msg.extend_from_slice(&epoch_no.to_be_bytes());
    msg
}

// -- Provider side ------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ChunkRecord {
    pub digest: [u8; 32],
    pub proof: ExtensionProof,
}

/// Adversary hook: overwrite `target_id` with `new_val` inside the given
/// chunk while building the epoch. The resulting update is flagged forged
/// for the harness; honest HSMs auditing that chunk must reject it.
#[derive(Debug, Clone)]
pub struct ForgeSpec {
    pub target_id: Vec<u8>,
    pub new_val: Vec<u8>,
    pub chunk: u32,
}

#[derive(Debug, Clone)]
pub struct EpochUpdate {
    pub epoch_no: u64,
    pub old_digest: [u8; 32],
    pub new_digest: [u8; 32],
    pub chunk_count: u32,
    pub chunks: Vec<Vec<LogEntry>>,
    pub records: Vec<ChunkRecord>,
    pub leaves: Vec<[u8; 32]>,
    pub root: [u8; 32],
    pub forged: bool,
}

/// Splits `inserts` into `chunk_count` chunks (remainder in the final
/// chunk), applies them to `tree` one at a time, and commits the digest
/// sequence. With `forge` set, the provider additionally rewrites an
/// existing id mid-sequence — the update is still constructed, but no
/// honest audit of that chunk can pass.
pub fn provider_prepare(
    tree: &mut LogTree,
    inserts: &[LogEntry],
    chunk_count: u32,
    epoch_no: u64,
    forge: Option<&ForgeSpec>,
) -> Result<EpochUpdate, crate::authlog::LogError> {
    assert!(chunk_count >= 1);
    let old_digest = tree.digest();
    let base = inserts.len() / chunk_count as usize;
    let mut chunks: Vec<Vec<LogEntry>> = Vec::with_capacity(chunk_count as usize);
    for i in 0..chunk_count as usize {
        let lo = base * i;
        let hi = if i + 1 == chunk_count as usize {
            inserts.len()
        } else {
            base * (i + 1)
        };
        chunks.push(inserts[lo..hi].to_vec());
    }

    let mut records = Vec::with_capacity(chunk_count as usize);
    let mut forged = false;
    for (i, chunk) in chunks.iter().enumerate() {
        let proof = tree.extend_with_proof(chunk)?;
        if let Some(f) = forge {
            if f.chunk as usize == i {
                forged |= tree.overwrite_value_forged(&f.target_id, f.new_val.clone());
            }
        }
        records.push(ChunkRecord {
            digest: tree.digest(),
            proof,
        });
    }
    let new_digest = tree.digest();

    let mut leaves = Vec::with_capacity(chunk_count as usize + 1);
    leaves.push(sequence_leaf(0, &old_digest, None));
    for (i, rec) in records.iter().enumerate() {
        leaves.push(sequence_leaf(
            (i + 1) as u32,
            &rec.digest,
            Some(&proof_hash(&rec.proof)),
        ));
    }
    let root = merkle_root(&leaves);
    Ok(EpochUpdate {
        epoch_no,
        old_digest,
        new_digest,
        chunk_count,
        chunks,
        records,
        leaves,
        root,
        forged,
    })
}

impl EpochUpdate {
    pub fn header(&self, online: Vec<u32>) -> PrepareEpoch {
        PrepareEpoch {
            epoch_no: self.epoch_no,
            old_digest: self.old_digest,
            new_digest: self.new_digest,
            root: self.root,
            chunk_count: self.chunk_count,
            online,
        }
    }

    /// Builds the audit response for a requested chunk (1-based sequence
    /// index `i` in `1..=chunk_count`).
    pub fn respond(&self, chunk_index: u32) -> ChunkAudit {
        assert!(chunk_index >= 1 && chunk_index <= self.chunk_count);
        let i = chunk_index as usize;
        let (prev_digest, prev_proof_hash) = if i == 1 {
            (self.old_digest, None)
        } else {
            (
                self.records[i - 2].digest,
                Some(proof_hash(&self.records[i - 2].proof)),
            )
        };
        ChunkAudit {
            index: chunk_index,
            prev_digest,
            prev_proof_hash,
            digest: self.records[i - 1].digest,
            proof: self.records[i - 1].proof.clone(),
            prev_path: merkle_prove(&self.leaves, i - 1),
            path: merkle_prove(&self.leaves, i),
        }
    }
}

// -- HSM side -----------------------------------------------------------------

/// Chunk sample in random mode: `count` draws from `1..=n_chunks`, with
/// replacement.
pub fn choose_chunks_random(n_chunks: u32, count: u32, rng: &mut dyn RngCore) -> Vec<u32> {
    assert!(n_chunks >= 1);
    let zone = u64::MAX - (u64::MAX % n_chunks as u64);
    (0..count)
        .map(|_| loop {
            let draw = rng.next_u64();
            if draw < zone {
                break (draw % n_chunks as u64) as u32 + 1;
            }
        })
        .collect()
}

/// Deterministic variant: the sample is a function of the Merkle root and
/// the node id, expanded from the chunk-assignment hash stream.
pub fn choose_chunks_deterministic(
    root: &[u8; 32],
    node_id: u32,
    n_chunks: u32,
    count: u32,
) -> Vec<u32> {
    assert!(n_chunks >= 1);
    let mut stream = HashStream::new(
        DomainTag::ChunkAssign,
        &[root.as_ref(), node_id.to_be_bytes().as_ref()],
    );
    stream
        .indices(count as usize, n_chunks as u64)
        .into_iter()
        .map(|i| i as u32 + 1)
        .collect()
}

#[derive(Debug, Clone)]
pub struct ChunkAudit {
    pub index: u32,
    pub prev_digest: [u8; 32],
    pub prev_proof_hash: Option<[u8; 32]>,
    pub digest: [u8; 32],
    pub proof: ExtensionProof,
    pub prev_path: MerklePath,
    pub path: MerklePath,
}

/// Verifies one audited chunk against the announced header and the held
/// digest. Endpoint rules: chunk 1 pins `d_0` to the held digest, the
/// last chunk pins `d_N` to the announced new digest.
pub fn audit_chunk(
    held_digest: &[u8; 32],
    header: &PrepareEpoch,
    audit: &ChunkAudit,
) -> Result<(), AuditReject> {
    let leaf = sequence_leaf(audit.index, &audit.digest, Some(&proof_hash(&audit.proof)));
    if !merkle_verify(&header.root, &leaf, &audit.path) {
        return Err(AuditReject::BadRootInclusion);
    }
    let prev_leaf = sequence_leaf(
        audit.index - 1,
        &audit.prev_digest,
        audit.prev_proof_hash.as_ref(),
    );
    if !merkle_verify(&header.root, &prev_leaf, &audit.prev_path) {
        return Err(AuditReject::BadRootInclusion);
    }
    if audit.index == 1 && audit.prev_digest != *held_digest {
        return Err(AuditReject::EndpointMismatch);
    }
    if audit.index == header.chunk_count && audit.digest != header.new_digest {
        return Err(AuditReject::EndpointMismatch);
    }
    if !does_extend(&audit.prev_digest, &audit.digest, &audit.proof) {
        return Err(AuditReject::BadExtension);
    }
    Ok(())
}

/// Full audit pass over a response: the header must start from the held
/// digest and every audited chunk must verify. Returns the number of
/// chunks verified, for the per-epoch work-bound accounting.
pub fn hsm_audit(
    held_digest: &[u8; 32],
    header: &PrepareEpoch,
    audits: &[ChunkAudit],
) -> Result<u32, AuditReject> {
    if header.old_digest != *held_digest {
        return Err(AuditReject::EndpointMismatch);
    }
    for audit in audits {
        audit_chunk(held_digest, header, audit)?;
    }
    Ok(audits.len() as u32)
}

// -- Message schemas ----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrepareEpoch {
    pub epoch_no: u64,
    pub old_digest: [u8; 32],
    pub new_digest: [u8; 32],
    pub root: [u8; 32],
    pub chunk_count: u32,
    /// Node ids the provider declares online; every one of them must sign.
    pub online: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRequest {
    pub node_id: u32,
    pub chunks: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditResponseMsg {
    pub node_id: u32,
    pub audits: Vec<ChunkAuditMsg>,
}

/// Wire form of [`ChunkAudit`] with the extension proof as opaque bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkAuditMsg {
    pub index: u32,
    pub prev_digest: [u8; 32],
    pub prev_proof_hash: Option<[u8; 32]>,
    pub digest: [u8; 32],
    pub proof: Vec<u8>,
    pub prev_path: Vec<([u8; 32], bool)>,
    pub path: Vec<([u8; 32], bool)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureSubmit {
    pub node_id: u32,
    pub signature: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finalize {
    pub epoch_no: u64,
    pub combined: Vec<u8>,
    pub online: Vec<u32>,
}

fn encode_path(path: &[([u8; 32], bool)]) -> Vec<u8> {
    let fields: Vec<Vec<u8>> = path
        .iter()
        .map(|(h, left)| {
            let mut f = h.to_vec();
            f.push(*left as u8);
            f
        })
        .collect();
    wire::encode_fields(&fields)
}

fn decode_path(bytes: &[u8]) -> Option<Vec<([u8; 32], bool)>> {
    let fields = wire::decode_fields(bytes).ok()?;
    let mut out = Vec::with_capacity(fields.len());
    for f in fields {
        if f.len() != 33 {
            return None;
        }
        let left = match f[32] {
            0 => false,
            1 => true,
            _ => return None,
        };
        out.push((f[..32].try_into().ok()?, left));
    }
    Some(out)
}

impl PrepareEpoch {
    pub fn to_bytes(&self) -> Vec<u8> {
        let online: Vec<u8> = self.online.iter().flat_map(|n| n.to_be_bytes()).collect();
        wire::encode_fields(&[
            self.epoch_no.to_be_bytes().as_ref(),
            self.old_digest.as_ref(),
            self.new_digest.as_ref(),
            self.root.as_ref(),
            self.chunk_count.to_be_bytes().as_ref(),
            &online,
        ])
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let f = wire::decode_fields(bytes).ok()?;
        if f.len() != 6 || f[5].len() % 4 != 0 {
            return None;
        }
        Some(PrepareEpoch {
            epoch_no: u64::from_be_bytes(f[0].as_slice().try_into().ok()?),
            old_digest: f[1].as_slice().try_into().ok()?,
            new_digest: f[2].as_slice().try_into().ok()?,
            root: f[3].as_slice().try_into().ok()?,
            chunk_count: u32::from_be_bytes(f[4].as_slice().try_into().ok()?),
            online: f[5]
                .chunks(4)
                .map(|c| u32::from_be_bytes(c.try_into().unwrap()))
                .collect(),
        })
    }
}

impl AuditRequest {
    pub fn to_bytes(&self) -> Vec<u8> {
        let chunks: Vec<u8> = self.chunks.iter().flat_map(|c| c.to_be_bytes()).collect();
        wire::encode_fields(&[self.node_id.to_be_bytes().as_ref(), &chunks])
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let f = wire::decode_fields(bytes).ok()?;
        if f.len() != 2 || f[1].len() % 4 != 0 {
            return None;
        }
        Some(AuditRequest {
            node_id: u32::from_be_bytes(f[0].as_slice().try_into().ok()?),
            chunks: f[1]
                .chunks(4)
                .map(|c| u32::from_be_bytes(c.try_into().unwrap()))
                .collect(),
        })
    }
}

impl ChunkAuditMsg {
    pub fn from_audit(a: &ChunkAudit) -> Self {
        ChunkAuditMsg {
            index: a.index,
            prev_digest: a.prev_digest,
            prev_proof_hash: a.prev_proof_hash,
            digest: a.digest,
            proof: a.proof.to_bytes(),
            prev_path: a.prev_path.siblings.clone(),
            path: a.path.siblings.clone(),
        }
    }

    pub fn to_audit(&self) -> Option<ChunkAudit> {
        Some(ChunkAudit {
            index: self.index,
            prev_digest: self.prev_digest,
            prev_proof_hash: self.prev_proof_hash,
            digest: self.digest,
            proof: ExtensionProof::from_bytes(&self.proof)?,
            prev_path: MerklePath {
                siblings: self.prev_path.clone(),
            },
            path: MerklePath {
                siblings: self.path.clone(),
            },
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        wire::encode_fields(&[
            self.index.to_be_bytes().as_ref(),
            self.prev_digest.as_ref(),
            &self
                .prev_proof_hash
                .map(|h| h.to_vec())
                .unwrap_or_default(),
            self.digest.as_ref(),
            &self.proof,
            &encode_path(&self.prev_path),
            &encode_path(&self.path),
        ])
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let f = wire::decode_fields(bytes).ok()?;
        if f.len() != 7 {
            return None;
        }
        let prev_proof_hash = match f[2].len() {
            0 => None,
            32 => Some(f[2].as_slice().try_into().ok()?),
            _ => return None,
        };
        Some(ChunkAuditMsg {
            index: u32::from_be_bytes(f[0].as_slice().try_into().ok()?),
            prev_digest: f[1].as_slice().try_into().ok()?,
            prev_proof_hash,
            digest: f[3].as_slice().try_into().ok()?,
            proof: f[4].clone(),
            prev_path: decode_path(&f[5])?,
            path: decode_path(&f[6])?,
        })
    }
}

impl AuditResponseMsg {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut fields: Vec<Vec<u8>> = vec![self.node_id.to_be_bytes().to_vec()];
        fields.extend(self.audits.iter().map(|a| a.to_bytes()));
        wire::encode_fields(&fields)
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let f = wire::decode_fields(bytes).ok()?;
        if f.is_empty() {
            return None;
        }
        let mut audits = Vec::with_capacity(f.len() - 1);
        for a in &f[1..] {
            audits.push(ChunkAuditMsg::from_bytes(a)?);
        }
        Some(AuditResponseMsg {
            node_id: u32::from_be_bytes(f[0].as_slice().try_into().ok()?),
            audits,
        })
    }
}

impl SignatureSubmit {
    pub fn to_bytes(&self) -> Vec<u8> {
        wire::encode_fields(&[self.node_id.to_be_bytes().as_ref(), &self.signature])
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let f = wire::decode_fields(bytes).ok()?;
        if f.len() != 2 {
            return None;
        }
        Some(SignatureSubmit {
            node_id: u32::from_be_bytes(f[0].as_slice().try_into().ok()?),
            signature: f[1].clone(),
        })
    }
}

impl Finalize {
    pub fn to_bytes(&self) -> Vec<u8> {
        let online: Vec<u8> = self.online.iter().flat_map(|n| n.to_be_bytes()).collect();
        wire::encode_fields(&[
            self.epoch_no.to_be_bytes().as_ref(),
            &self.combined,
            &online,
        ])
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let f = wire::decode_fields(bytes).ok()?;
        if f.len() != 3 || f[2].len() % 4 != 0 {
            return None;
        }
        Some(Finalize {
            epoch_no: u64::from_be_bytes(f[0].as_slice().try_into().ok()?),
            combined: f[1].clone(),
            online: f[2]
                .chunks(4)
                .map(|c| u32::from_be_bytes(c.try_into().unwrap()))
                .collect(),
        })
    }
}
