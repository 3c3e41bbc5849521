//! Merkle authenticated dictionary over (id, val) pairs.
//!
//! The log tree is a treap ordered by id, with priorities derived by
//! hashing the id, so the tree shape — and therefore the digest — is a
//! deterministic function of the entry set. Every node carries
//! `hash(leftHash, rightHash, id, val)`; an absent child hashes as 32 zero
//! bytes and childless nodes use the leaf tag. The digest is the root hash
//! (the zero constant for an empty log).
//!
//! Inclusion proofs are ordinary Merkle paths. An extension proof for one
//! insert records the search path of the new id in the old tree; the
//! verifier rebinds that path to the old digest, checks the comparisons
//! (which forces the endpoint to be the id's true, empty slot — this is
//! the non-membership check), then replays the deterministic insert,
//! rotations included, to recompute the new digest. Batches chain one
//! insert proof per entry.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::crypto::hash::{hash_domain, DomainTag};
use crate::wire;

pub const EMPTY_DIGEST: [u8; 32] = [0u8; 32];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LogError {
    #[error("duplicate id")]
    DuplicateId,
    #[error("new log does not extend the old log")]
    NotAnExtension,
    #[error("malformed replay file: {0}")]
    Replay(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub id: Vec<u8>,
    pub val: Vec<u8>,
}

fn priority(id: &[u8]) -> [u8; 32] {
    hash_domain(DomainTag::LogNode, &[b"priority".as_ref(), id])
}

fn node_hash(left: &[u8; 32], right: &[u8; 32], id: &[u8], val: &[u8]) -> [u8; 32] {
    let tag = if *left == EMPTY_DIGEST && *right == EMPTY_DIGEST {
        DomainTag::LogLeaf
    } else {
        DomainTag::LogNode
    };
    hash_domain(tag, &[left.as_ref(), right.as_ref(), id, val])
}

#[derive(Debug, Clone)]
struct Node {
    id: Vec<u8>,
    val: Vec<u8>,
    prio: [u8; 32],
    hash: [u8; 32],
    left: Option<Box<Node>>,
    right: Option<Box<Node>>,
}

fn child_hash(child: &Option<Box<Node>>) -> [u8; 32] {
    child.as_ref().map_or(EMPTY_DIGEST, |n| n.hash)
}

impl Node {
    fn new(id: Vec<u8>, val: Vec<u8>) -> Box<Node> {
        let prio = priority(&id);
        let hash = node_hash(&EMPTY_DIGEST, &EMPTY_DIGEST, &id, &val);
        Box::new(Node {
            id,
            val,
            prio,
            hash,
            left: None,
            right: None,
        })
    }

    fn recompute_hash(&mut self) {
        self.hash = node_hash(
            &child_hash(&self.left),
            &child_hash(&self.right),
            &self.id,
            &self.val,
        );
    }
}

fn rotate_right(mut n: Box<Node>) -> Box<Node> {
    let mut l = n.left.take().expect("rotate_right needs a left child");
    n.left = l.right.take();
    n.recompute_hash();
    l.right = Some(n);
    l.recompute_hash();
    l
}

fn rotate_left(mut n: Box<Node>) -> Box<Node> {
    let mut r = n.right.take().expect("rotate_left needs a right child");
    n.right = r.left.take();
    n.recompute_hash();
    r.left = Some(n);
    r.recompute_hash();
    r
}

fn insert_node(node: Option<Box<Node>>, new: Box<Node>) -> Result<Box<Node>, LogError> {
    let Some(mut n) = node else {
        return Ok(new);
    };
    match new.id.cmp(&n.id) {
        std::cmp::Ordering::Equal => Err(LogError::DuplicateId),
        std::cmp::Ordering::Less => {
            n.left = Some(insert_node(n.left.take(), new)?);
            if n.left.as_ref().unwrap().prio > n.prio {
                Ok(rotate_right(n))
            } else {
                n.recompute_hash();
                Ok(n)
            }
        }
        std::cmp::Ordering::Greater => {
            n.right = Some(insert_node(n.right.take(), new)?);
            if n.right.as_ref().unwrap().prio > n.prio {
                Ok(rotate_left(n))
            } else {
                n.recompute_hash();
                Ok(n)
            }
        }
    }
}

/// The provider-side log: full tree plus the insertion-ordered entry list.
#[derive(Debug, Clone, Default)]
pub struct LogTree {
    root: Option<Box<Node>>,
    entries: Vec<LogEntry>,
    by_id: BTreeMap<Vec<u8>, Vec<u8>>,
}

impl LogTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn value_of(&self, id: &[u8]) -> Option<&Vec<u8>> {
        self.by_id.get(id)
    }

    pub fn digest(&self) -> [u8; 32] {
        child_hash(&self.root)
    }

    pub fn insert(&mut self, id: Vec<u8>, val: Vec<u8>) -> Result<(), LogError> {
        if self.by_id.contains_key(&id) {
            return Err(LogError::DuplicateId);
        }
        let root = self.root.take();
        self.root = Some(insert_node(root, Node::new(id.clone(), val.clone()))?);
        self.by_id.insert(id.clone(), val.clone());
        self.entries.push(LogEntry { id, val });
        Ok(())
    }

    /// Inserts a batch and returns the proof that the new digest extends
    /// the old one. Fails (log unchanged) on any duplicate id.
    pub fn extend_with_proof(
        &mut self,
        entries: &[LogEntry],
    ) -> Result<ExtensionProof, LogError> {
        let mut seen = BTreeMap::new();
        for e in entries {
            if self.by_id.contains_key(&e.id) || seen.insert(e.id.clone(), ()).is_some() {
                return Err(LogError::DuplicateId);
            }
        }
        let mut inserts = Vec::with_capacity(entries.len());
        for e in entries {
            let path = self.search_path(&e.id);
            self.insert(e.id.clone(), e.val.clone())?;
            inserts.push(InsertProof {
                id: e.id.clone(),
                val: e.val.clone(),
                path,
            });
        }
        Ok(ExtensionProof { inserts })
    }

    fn search_path(&self, id: &[u8]) -> Vec<SearchStep> {
        let mut steps = Vec::new();
        let mut cur = &self.root;
        while let Some(n) = cur {
            let went_left = id < n.id.as_slice();
            debug_assert!(id != n.id.as_slice());
            steps.push(SearchStep {
                id: n.id.clone(),
                val: n.val.clone(),
                other_hash: if went_left {
                    child_hash(&n.right)
                } else {
                    child_hash(&n.left)
                },
                went_left,
            });
            cur = if went_left { &n.left } else { &n.right };
        }
        steps
    }

    pub fn prove_includes(&self, id: &[u8], val: &[u8]) -> Option<InclusionProof> {
        if self.by_id.get(id).map(Vec::as_slice) != Some(val) {
            return None;
        }
        let mut steps = Vec::new();
        let mut cur = self.root.as_ref()?;
        loop {
            match id.cmp(cur.id.as_slice()) {
                std::cmp::Ordering::Equal => {
                    return Some(InclusionProof {
                        steps,
                        target_left: child_hash(&cur.left),
                        target_right: child_hash(&cur.right),
                    });
                }
                std::cmp::Ordering::Less => {
                    steps.push(IncStep {
                        id: cur.id.clone(),
                        val: cur.val.clone(),
                        other_hash: child_hash(&cur.right),
                        target_is_left: true,
                    });
                    cur = cur.left.as_ref()?;
                }
                std::cmp::Ordering::Greater => {
                    steps.push(IncStep {
                        id: cur.id.clone(),
                        val: cur.val.clone(),
                        other_hash: child_hash(&cur.left),
                        target_is_left: false,
                    });
                    cur = cur.right.as_ref()?;
                }
            }
        }
    }

    /// Test and adversary hook: silently overwrites the value of an
    /// existing id, recomputing hashes. Produces a tree whose digest does
    /// NOT extend any honest digest — exactly what a cheating provider
    /// would publish.
    pub fn overwrite_value_forged(&mut self, id: &[u8], val: Vec<u8>) -> bool {
        fn walk(node: &mut Option<Box<Node>>, id: &[u8], val: &[u8]) -> bool {
            let Some(n) = node else { return false };
            let hit = match id.cmp(n.id.as_slice()) {
                std::cmp::Ordering::Equal => {
                    n.val = val.to_vec();
                    true
                }
                std::cmp::Ordering::Less => walk(&mut n.left, id, val),
                std::cmp::Ordering::Greater => walk(&mut n.right, id, val),
            };
            if hit {
                n.recompute_hash();
            }
            hit
        }
        let hit = walk(&mut self.root, id, &val);
        if hit {
            self.by_id.insert(id.to_vec(), val.clone());
            if let Some(e) = self.entries.iter_mut().find(|e| e.id == id) {
                e.val = val;
            }
        }
        hit
    }
}

// -- Inclusion proofs --------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncStep {
    pub id: Vec<u8>,
    pub val: Vec<u8>,
    pub other_hash: [u8; 32],
    pub target_is_left: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InclusionProof {
    /// Ancestors from the root down to the target's parent.
    pub steps: Vec<IncStep>,
    pub target_left: [u8; 32],
    pub target_right: [u8; 32],
}

pub fn does_include(digest: &[u8; 32], id: &[u8], val: &[u8], proof: &InclusionProof) -> bool {
    let mut h = node_hash(&proof.target_left, &proof.target_right, id, val);
    for step in proof.steps.iter().rev() {
        let (l, r) = if step.target_is_left {
            (h, step.other_hash)
        } else {
            (step.other_hash, h)
        };
        h = node_hash(&l, &r, &step.id, &step.val);
    }
    h == *digest
}

// -- Extension proofs --------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchStep {
    pub id: Vec<u8>,
    pub val: Vec<u8>,
    /// Hash of the child *not* descended into (zero when absent).
    pub other_hash: [u8; 32],
    pub went_left: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InsertProof {
    pub id: Vec<u8>,
    pub val: Vec<u8>,
    /// Search path of `id` in the pre-insert tree, root first, ending at
    /// the empty slot where `id` belongs.
    pub path: Vec<SearchStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExtensionProof {
    pub inserts: Vec<InsertProof>,
}

/// Verifier-side partial view of the tree: opaque committed subtrees plus
/// the nodes on one search path.
#[derive(Debug, Clone)]
enum Skel {
    Opaque([u8; 32]),
    Node {
        id: Vec<u8>,
        val: Vec<u8>,
        prio: [u8; 32],
        left: Box<Skel>,
        right: Box<Skel>,
    },
}

impl Skel {
    fn fold_hash(&self) -> [u8; 32] {
        match self {
            Skel::Opaque(h) => *h,
            Skel::Node {
                id,
                val,
                left,
                right,
                ..
            } => node_hash(&left.fold_hash(), &right.fold_hash(), id, val),
        }
    }
}

/// Replays the deterministic insert, rotations included, on the skeleton.
/// The search path is made of real nodes only; comparisons were validated
/// before this runs.
fn skel_insert(skel: Skel, new: Box<Skel>, new_prio: &[u8; 32], new_id: &[u8]) -> Skel {
    match skel {
        Skel::Opaque(h) => {
            debug_assert_eq!(h, EMPTY_DIGEST);
            *new
        }
        Skel::Node {
            id,
            val,
            prio,
            left,
            right,
        } => {
            if new_id < id.as_slice() {
                let left = skel_insert(*left, new, new_prio, new_id);
                let child_wins = matches!(&left, Skel::Node { prio: p, .. } if p > &prio);
                if child_wins {
                    // rotate right
                    let Skel::Node {
                        id: lid,
                        val: lval,
                        prio: lprio,
                        left: ll,
                        right: lr,
                    } = left
                    else {
                        unreachable!()
                    };
                    Skel::Node {
                        id: lid,
                        val: lval,
                        prio: lprio,
                        left: ll,
                        right: Box::new(Skel::Node {
                            id,
                            val,
                            prio,
                            left: lr,
                            right,
                        }),
                    }
                } else {
                    Skel::Node {
                        id,
                        val,
                        prio,
                        left: Box::new(left),
                        right,
                    }
                }
            } else {
                let right = skel_insert(*right, new, new_prio, new_id);
                let child_wins = matches!(&right, Skel::Node { prio: p, .. } if p > &prio);
                if child_wins {
                    // rotate left
                    let Skel::Node {
                        id: rid,
                        val: rval,
                        prio: rprio,
                        left: rl,
                        right: rr,
                    } = right
                    else {
                        unreachable!()
                    };
                    Skel::Node {
                        id: rid,
                        val: rval,
                        prio: rprio,
                        left: Box::new(Skel::Node {
                            id,
                            val,
                            prio,
                            left,
                            right: rl,
                        }),
                        right: rr,
                    }
                } else {
                    Skel::Node {
                        id,
                        val,
                        prio,
                        left,
                        right: Box::new(right),
                    }
                }
            }
        }
    }
}

/// Verifies one insert against `digest` and returns the post-insert digest.
fn verify_insert(digest: &[u8; 32], proof: &InsertProof) -> Option<[u8; 32]> {
    // Comparisons: the recorded path must be the BST search path for the
    // new id, which also proves the id was absent.
    for step in &proof.path {
        match proof.id.cmp(&step.id) {
            std::cmp::Ordering::Equal => return None,
            std::cmp::Ordering::Less if !step.went_left => return None,
            std::cmp::Ordering::Greater if step.went_left => return None,
            _ => {}
        }
    }
    // Rebuild the skeleton bottom-up from the insertion point.
    let mut cursor = Skel::Opaque(EMPTY_DIGEST);
    for step in proof.path.iter().rev() {
        let (left, right) = if step.went_left {
            (Box::new(cursor), Box::new(Skel::Opaque(step.other_hash)))
        } else {
            (Box::new(Skel::Opaque(step.other_hash)), Box::new(cursor))
        };
        cursor = Skel::Node {
            id: step.id.clone(),
            val: step.val.clone(),
            prio: priority(&step.id),
            left,
            right,
        };
    }
    if cursor.fold_hash() != *digest {
        return None;
    }
    // Replay the insert with rotations and fold the new digest.
    let new_prio = priority(&proof.id);
    let new_node = Box::new(Skel::Node {
        id: proof.id.clone(),
        val: proof.val.clone(),
        prio: new_prio,
        left: Box::new(Skel::Opaque(EMPTY_DIGEST)),
        right: Box::new(Skel::Opaque(EMPTY_DIGEST)),
    });
    let updated = skel_insert(cursor, new_node, &new_prio, &proof.id);
    Some(updated.fold_hash())
}

/// True iff `proof` shows the log behind `new_digest` is exactly the log
/// behind `old_digest` plus the proved fresh-id insertions.
pub fn does_extend(old_digest: &[u8; 32], new_digest: &[u8; 32], proof: &ExtensionProof) -> bool {
    let mut cur = *old_digest;
    for ip in &proof.inserts {
        match verify_insert(&cur, ip) {
            Some(next) => cur = next,
            None => return false,
        }
    }
    cur == *new_digest
}

/// Standalone prover over two logs: `new` must equal `old` plus trailing
/// fresh entries.
pub fn prove_extends(old: &LogTree, new: &LogTree) -> Result<ExtensionProof, LogError> {
    if new.entries.len() < old.entries.len()
        || new.entries[..old.entries.len()] != old.entries[..]
    {
        return Err(LogError::NotAnExtension);
    }
    let mut clone = old.clone();
    clone.extend_with_proof(&new.entries[old.entries.len()..])
}

// -- Serialization -----------------------------------------------------------

// Booleans decode strictly so every encoding is canonical and any bit flip
// is either a semantic change or a parse failure.
fn parse_bool(b: u8) -> Option<bool> {
    match b {
        0 => Some(false),
        1 => Some(true),
        _ => None,
    }
}

impl InclusionProof {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut fields: Vec<Vec<u8>> = vec![(self.steps.len() as u32).to_be_bytes().to_vec()];
        for s in &self.steps {
            fields.push(wire::encode_fields(&[
                s.id.as_slice(),
                s.val.as_slice(),
                s.other_hash.as_ref(),
                &[s.target_is_left as u8],
            ]));
        }
        fields.push(self.target_left.to_vec());
        fields.push(self.target_right.to_vec());
        wire::encode_fields(&fields)
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let fields = wire::decode_fields(bytes).ok()?;
        if fields.len() < 3 {
            return None;
        }
        let count = u32::from_be_bytes(fields[0].as_slice().try_into().ok()?) as usize;
        if fields.len() != count + 3 {
            return None;
        }
        let mut steps = Vec::with_capacity(count);
        for f in &fields[1..=count] {
            let parts = wire::decode_fields(f).ok()?;
            if parts.len() != 4 || parts[2].len() != 32 || parts[3].len() != 1 {
                return None;
            }
            steps.push(IncStep {
                id: parts[0].clone(),
                val: parts[1].clone(),
                other_hash: parts[2].as_slice().try_into().ok()?,
                target_is_left: parse_bool(parts[3][0])?,
            });
        }
        Some(InclusionProof {
            steps,
            target_left: fields[count + 1].as_slice().try_into().ok()?,
            target_right: fields[count + 2].as_slice().try_into().ok()?,
        })
    }
}

impl ExtensionProof {
    pub fn to_bytes(&self) -> Vec<u8> {
        let fields: Vec<Vec<u8>> = self
            .inserts
            .iter()
            .map(|ip| {
                let mut f: Vec<Vec<u8>> = vec![ip.id.clone(), ip.val.clone()];
                for s in &ip.path {
                    f.push(wire::encode_fields(&[
                        s.id.as_slice(),
                        s.val.as_slice(),
                        s.other_hash.as_ref(),
                        &[s.went_left as u8],
                    ]));
                }
                wire::encode_fields(&f)
            })
            .collect();
        wire::encode_fields(&fields)
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let fields = wire::decode_fields(bytes).ok()?;
        let mut inserts = Vec::with_capacity(fields.len());
        for f in &fields {
            let parts = wire::decode_fields(f).ok()?;
            if parts.len() < 2 {
                return None;
            }
            let mut path = Vec::with_capacity(parts.len() - 2);
            for p in &parts[2..] {
                let sp = wire::decode_fields(p).ok()?;
                if sp.len() != 4 || sp[2].len() != 32 || sp[3].len() != 1 {
                    return None;
                }
                path.push(SearchStep {
                    id: sp[0].clone(),
                    val: sp[1].clone(),
                    other_hash: sp[2].as_slice().try_into().ok()?,
                    went_left: parse_bool(sp[3][0])?,
                });
            }
            inserts.push(InsertProof {
                id: parts[0].clone(),
                val: parts[1].clone(),
                path,
            });
        }
        Some(ExtensionProof { inserts })
    }
}

// -- Replay files ------------------------------------------------------------

/// On-disk replay record stream: alternating length-prefixed id and val
/// fields in insertion order.
pub fn replay_to_bytes(entries: &[LogEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    for e in entries {
        wire::put_field(&mut out, &e.id);
        wire::put_field(&mut out, &e.val);
    }
    out
}

pub fn replay_from_bytes(bytes: &[u8]) -> Result<Vec<LogEntry>, LogError> {
    let fields = wire::decode_fields(bytes).map_err(|e| LogError::Replay(e.to_string()))?;
    if fields.len() % 2 != 0 {
        return Err(LogError::Replay("odd field count".into()));
    }
    Ok(fields
        .chunks(2)
        .map(|c| LogEntry {
            id: c[0].clone(),
            val: c[1].clone(),
        })
        .collect())
}
