//! Outsourced storage with secure deletion.
//!
//! A height-`h` binary tree of AE keys lives at an untrusted block server;
//! the owner keeps only the root key. Every internal block holds its two
//! child keys encrypted under its own key, and leaf `i`'s block holds
//! `data_i` encrypted under the leaf key. Reading walks the key chain root
//! to leaf. Deleting a leaf replaces its key with the all-zero "useless"
//! key and re-keys the path bottom-up, so even an adversary that recorded
//! every block ever written and later obtains the current root key cannot
//! recover the deleted leaf.
//!
//! Addressing: with `D` leaves, `h = 1 + ceil(log2 D)` and the tree is
//! padded to `S = 2^(h-1)` leaf slots. The root block sits at address 1,
//! block `a`'s children at `2a` and `2a+1`, and leaf `i` at `S + i`, so a
//! root-to-leaf path touches exactly `h` blocks. For `D = 1` the tree is a
//! single node. Reads beyond `D` are a precondition violation.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::crypto::ae::{self, AeKey, AE_KEY_LEN};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SdError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("path unreadable")]
    Unreadable,
}

/// The untrusted block store. `get` returns the latest block written to an
/// address, or `None` if nothing was ever written there.
pub trait BlockServer {
    fn get(&mut self, addr: u64) -> Option<Vec<u8>>;
    fn put(&mut self, addr: u64, block: Vec<u8>);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockOp {
    Get,
    Put,
}

/// In-memory block server that keeps an append-only history of every write
/// and a log of every operation, for adversary replay and cost assertions.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
pub struct MemoryBlockServer {
    blocks: BTreeMap<u64, Vec<u8>>,
    pub history: Vec<(u64, Vec<u8>)>,
    pub ops: Vec<(BlockOp, u64)>,
}

impl MemoryBlockServer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tampers with the current block at `addr` by flipping one bit.
    pub fn flip_bit(&mut self, addr: u64, byte: usize, bit: u8) {
        if let Some(b) = self.blocks.get_mut(&addr) {
            if !b.is_empty() {
                let pos = byte % b.len();
                b[pos] ^= 1 << (bit % 8);
            }
        }
    }

    pub fn addresses(&self) -> Vec<u64> {
        self.blocks.keys().copied().collect()
    }

    pub fn current(&self, addr: u64) -> Option<&Vec<u8>> {
        self.blocks.get(&addr)
    }

    /// Distinct addresses touched since `mark` (an index into `ops`).
    pub fn touched_since(&self, mark: usize) -> usize {
        let mut addrs: Vec<u64> = self.ops[mark..].iter().map(|&(_, a)| a).collect();
        addrs.sort_unstable();
        addrs.dedup();
        addrs.len()
    }

    pub fn op_mark(&self) -> usize {
        self.ops.len()
    }
}

impl BlockServer for MemoryBlockServer {
    fn get(&mut self, addr: u64) -> Option<Vec<u8>> {
        self.ops.push((BlockOp::Get, addr));
        self.blocks.get(&addr).cloned()
    }

    fn put(&mut self, addr: u64, block: Vec<u8>) {
        self.ops.push((BlockOp::Put, addr));
        self.history.push((addr, block.clone()));
        self.blocks.insert(addr, block);
    }
}

/// Owner-side state: the root key plus the tree geometry. This is the only
/// secret that outlives an operation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeHandle {
    pub root_key: AeKey,
    pub height: u32,
    pub leaf_count: u32,
}

fn ceil_log2(d: u32) -> u32 {
    debug_assert!(d >= 1);
    32 - (d - 1).leading_zeros().min(32)
}

impl TreeHandle {
    pub fn height_for(leaf_count: u32) -> u32 {
        1 + ceil_log2(leaf_count)
    }

    /// Number of padded leaf slots, `2^(h-1)`.
    fn slots(&self) -> u64 {
        1u64 << (self.height - 1)
    }

    pub fn leaf_addr(&self, i: u32) -> u64 {
        self.slots() + i as u64
    }
}

fn encode_pair(left: &AeKey, right: &AeKey) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 * AE_KEY_LEN);
    out.extend_from_slice(&left.0);
    out.extend_from_slice(&right.0);
    out
}

fn decode_pair(bytes: &[u8]) -> Option<(AeKey, AeKey)> {
    if bytes.len() != 2 * AE_KEY_LEN {
        return None;
    }
    let mut l = [0u8; AE_KEY_LEN];
    let mut r = [0u8; AE_KEY_LEN];
    l.copy_from_slice(&bytes[..AE_KEY_LEN]);
    r.copy_from_slice(&bytes[AE_KEY_LEN..]);
    Some((AeKey(l), AeKey(r)))
}

/// Stores `data` at the server under a fresh key tree and returns the
/// handle. Writes exactly `2 * 2^(h-1) - 1` blocks.
pub fn setup<S: BlockServer + ?Sized>(
    data: &[Vec<u8>],
    server: &mut S,
    rng: &mut dyn RngCore,
) -> Result<TreeHandle, SdError> {
    let count = data.len();
    if count == 0 {
        return Err(SdError::Parameter("data array must be non-empty".into()));
    }
    if count > u32::MAX as usize / 4 {
        return Err(SdError::Parameter("data array too large".into()));
    }
    let height = TreeHandle::height_for(count as u32);
    let slots = 1u64 << (height - 1);

    fn build<S: BlockServer + ?Sized>(
        data: &[Vec<u8>],
        addr: u64,
        slot_lo: u64,
        slot_hi: u64,
        server: &mut S,
        rng: &mut dyn RngCore,
    ) -> AeKey {
        let key = AeKey::random(rng);
        let msg = if slot_hi - slot_lo == 1 {
            // Leaf slot: real data or zero-length padding.
            data.get(slot_lo as usize).cloned().unwrap_or_default()
        } else {
            let mid = (slot_lo + slot_hi) / 2;
            let left = build(data, 2 * addr, slot_lo, mid, server, rng);
            let right = build(data, 2 * addr + 1, mid, slot_hi, server, rng);
            encode_pair(&left, &right)
        };
        server.put(addr, ae::encrypt(&key, &msg, rng).to_bytes());
        key
    }

    let root_key = build(data, 1, 0, slots, server, rng);
    Ok(TreeHandle {
        root_key,
        height,
        leaf_count: count as u32,
    })
}

/// Reads leaf `i` by decrypting the chain root to leaf; touches exactly `h`
/// blocks. Returns `None` if any block on the path is missing, tampered,
/// or its key was deleted — the cases are indistinguishable.
pub fn read<S: BlockServer + ?Sized>(
    handle: &TreeHandle,
    i: u32,
    server: &mut S,
) -> Option<Vec<u8>> {
    assert!(i < handle.leaf_count, "read past leaf count");
    let leaf_addr = handle.leaf_addr(i);
    let mut key = handle.root_key.clone();
    for level in (0..handle.height).rev() {
        let addr = leaf_addr >> level;
        let block = server.get(addr)?;
        let plain = ae::decrypt_bytes(&key, &block)?;
        if level == 0 {
            return Some(plain);
        }
        let (left, right) = decode_pair(&plain)?;
        key = if (leaf_addr >> (level - 1)) & 1 == 0 {
            left
        } else {
            right
        };
    }
    unreachable!("height is at least 1");
}

/// Deletes leaf `i`: the leaf key becomes the all-zero useless key, every
/// key on the path is regenerated bottom-up, the leaf block is wiped, and
/// a handle with the fresh root key is returned. Touches exactly `h`
/// blocks. Deleting an already-deleted leaf over an intact path is a
/// silent no-op; an unreadable path is an error.
pub fn delete<S: BlockServer + ?Sized>(
    handle: &TreeHandle,
    i: u32,
    server: &mut S,
    rng: &mut dyn RngCore,
) -> Result<TreeHandle, SdError> {
    assert!(i < handle.leaf_count, "delete past leaf count");
    let leaf_addr = handle.leaf_addr(i);

    if handle.height == 1 {
        // Single-node tree: the root key is the leaf key.
        if handle.root_key.is_useless() {
            return Ok(handle.clone());
        }
        server.put(leaf_addr, Vec::new());
        let mut out = handle.clone();
        out.root_key = AeKey::useless();
        return Ok(out);
    }

    // Walk down the internal nodes, keeping each node's key and pair.
    let mut chain: Vec<(u64, AeKey, AeKey, AeKey)> = Vec::new(); // (addr, node key, left, right)
    let mut key = handle.root_key.clone();
    for level in (1..handle.height).rev() {
        let addr = leaf_addr >> level;
        let block = server.get(addr).ok_or(SdError::Unreadable)?;
        let plain = ae::decrypt_bytes(&key, &block).ok_or(SdError::Unreadable)?;
        let (left, right) = decode_pair(&plain).ok_or(SdError::Unreadable)?;
        let next = if (leaf_addr >> (level - 1)) & 1 == 0 {
            left.clone()
        } else {
            right.clone()
        };
        chain.push((addr, key, left, right));
        key = next;
    }

    if key.is_useless() {
        return Ok(handle.clone());
    }

    // Bottom-up re-key: the leaf's entry becomes the useless key.
    server.put(leaf_addr, Vec::new());
    let mut child_key = AeKey::useless();
    let mut level = 1;
    for (addr, mut old_key, mut left, mut right) in chain.into_iter().rev() {
        if (leaf_addr >> (level - 1)) & 1 == 0 {
            left = child_key;
        } else {
            right = child_key;
        }
        let fresh = AeKey::random(rng);
        server.put(addr, ae::encrypt(&fresh, &encode_pair(&left, &right), rng).to_bytes());
        old_key.erase();
        child_key = fresh;
        level += 1;
    }

    Ok(TreeHandle {
        root_key: child_key,
        height: handle.height,
        leaf_count: handle.leaf_count,
    })
}

/// Replay adversary: given the complete write history and the *current*
/// root key, recover every leaf value still reachable. Independent of
/// [`read`] — it walks raw history blocks, trying every discovered key
/// against every version of each address.
pub fn replay_recoverable(
    handle: &TreeHandle,
    history: &[(u64, Vec<u8>)],
) -> BTreeMap<u32, Vec<Vec<u8>>> {
    let slots = handle.slots();
    let mut versions: BTreeMap<u64, Vec<&Vec<u8>>> = BTreeMap::new();
    for (addr, block) in history {
        versions.entry(*addr).or_default().push(block);
    }
    let mut keys: BTreeMap<u64, Vec<AeKey>> = BTreeMap::new();
    keys.insert(1, vec![handle.root_key.clone()]);
    let mut recovered: BTreeMap<u32, Vec<Vec<u8>>> = BTreeMap::new();

    // Keys only flow from an address to its children, and child addresses
    // are strictly larger, so one ascending pass reaches a fixpoint.
    let addrs: Vec<u64> = versions.keys().copied().collect();
    for addr in addrs {
        let Some(cands) = keys.get(&addr).cloned() else {
            continue;
        };
        for block in &versions[&addr] {
            for key in &cands {
                if key.is_useless() {
                    continue;
                }
                let Some(plain) = ae::decrypt_bytes(key, block) else {
                    continue;
                };
                if addr >= slots {
                    let leaf = (addr - slots) as u32;
                    if leaf < handle.leaf_count {
                        recovered.entry(leaf).or_default().push(plain);
                    }
                } else if let Some((l, r)) = decode_pair(&plain) {
                    keys.entry(2 * addr).or_default().push(l);
                    keys.entry(2 * addr + 1).or_default().push(r);
                }
            }
        }
    }
    recovered
}

pub mod net {
    //! Line-delimited block-server protocol for cross-process tests:
    //! `G <addr>\n` answered by `V <hex>\n` or `X\n` (absent), and
    //! `P <addr> <hex>\n` answered by `K\n`.

    use super::{BlockServer, MemoryBlockServer};
    use std::io::{BufRead, BufReader, Write};
    use std::net::{TcpListener, TcpStream};

    /// Serves `server` over a single accepted connection until EOF.
    pub fn serve_once(listener: &TcpListener, server: &mut MemoryBlockServer) -> std::io::Result<()> {
        let (stream, _) = listener.accept()?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut out = stream;
        let mut line = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                return Ok(());
            }
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("G") => {
                    let addr: u64 = parts.next().and_then(|s| s.parse().ok()).unwrap_or(0);
                    match server.get(addr) {
                        Some(block) => writeln!(out, "V {}", hex::encode(block))?,
                        None => writeln!(out, "X")?,
                    }
                }
                Some("P") => {
                    let addr: u64 = parts.next().and_then(|s| s.parse().ok()).unwrap_or(0);
                    let block = parts
                        .next()
                        .and_then(|h| hex::decode(h).ok())
                        .unwrap_or_default();
                    server.put(addr, block);
                    writeln!(out, "K")?;
                }
                _ => writeln!(out, "X")?,
            }
        }
    }

    /// Client-side [`BlockServer`] speaking the line protocol.
    pub struct RemoteBlockServer {
        reader: BufReader<TcpStream>,
        writer: TcpStream,
    }

    impl RemoteBlockServer {
        pub fn connect(addr: &str) -> std::io::Result<Self> {
            let stream = TcpStream::connect(addr)?;
            Ok(RemoteBlockServer {
                reader: BufReader::new(stream.try_clone()?),
                writer: stream,
            })
        }

        fn round_trip(&mut self, line: String) -> String {
            self.writer.write_all(line.as_bytes()).expect("send");
            let mut reply = String::new();
            self.reader.read_line(&mut reply).expect("recv");
            reply
        }
    }

    impl BlockServer for RemoteBlockServer {
        fn get(&mut self, addr: u64) -> Option<Vec<u8>> {
            let reply = self.round_trip(format!("G {addr}\n"));
            let reply = reply.trim();
            if let Some(hexpart) = reply.strip_prefix("V ") {
                hex::decode(hexpart).ok()
            } else if reply == "V" {
                Some(Vec::new())
            } else {
                None
            }
        }

        fn put(&mut self, addr: u64, block: Vec<u8>) {
            let _ = self.round_trip(format!("P {addr} {}\n", hex::encode(block)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn blocks(n: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<u8>> {
        (0..n)
            .map(|i| {
                let mut b = vec![0u8; 16 + (i % 5)];
                rng.fill_bytes(&mut b);
                b
            })
            .collect()
    }

    /// Reference decryptor: walks the documented address map directly with
    /// iterative state, no shared code with `read`.
    fn reference_read(
        handle: &TreeHandle,
        i: u32,
        server: &MemoryBlockServer,
    ) -> Option<Vec<u8>> {
        let slots = 1u64 << (handle.height - 1);
        let mut path = Vec::new();
        let mut a = slots + i as u64;
        while a >= 1 {
            path.push(a);
            if a == 1 {
                break;
            }
            a /= 2;
        }
        path.reverse();
        let mut key = handle.root_key.clone();
        for (depth, addr) in path.iter().enumerate() {
            let block = server.current(*addr)?;
            let plain = ae::decrypt_bytes(&key, block)?;
            if depth + 1 == path.len() {
                return Some(plain);
            }
            let next_addr = path[depth + 1];
            let half = plain.len() / 2;
            let side = if next_addr % 2 == 0 {
                &plain[..half]
            } else {
                &plain[half..]
            };
            key = AeKey(side.try_into().ok()?);
        }
        None
    }

    #[test]
    fn single_leaf_degenerate_tree() {
        let mut rng = ChaCha20Rng::seed_from_u64(40);
        let mut server = MemoryBlockServer::new();
        let data = vec![b"only".to_vec()];
        let handle = setup(&data, &mut server, &mut rng).unwrap();
        assert_eq!(handle.height, 1);
        assert_eq!(server.addresses().len(), 1);
        assert_eq!(read(&handle, 0, &mut server).unwrap(), b"only");
    }

    #[test]
    fn four_leaves_three_levels_all_readable() {
        let mut rng = ChaCha20Rng::seed_from_u64(41);
        let mut server = MemoryBlockServer::new();
        let data = blocks(4, &mut rng);
        let handle = setup(&data, &mut server, &mut rng).unwrap();
        assert_eq!(handle.height, 3);
        // 2*2^(h-1) - 1 = 7 blocks for a perfect 4-leaf tree.
        assert_eq!(server.addresses().len(), 7);
        for (i, expect) in data.iter().enumerate() {
            assert_eq!(read(&handle, i as u32, &mut server).unwrap(), *expect);
            assert_eq!(
                reference_read(&handle, i as u32, &server).unwrap(),
                *expect
            );
        }
    }

    #[test]
    fn empty_data_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let mut server = MemoryBlockServer::new();
        assert!(matches!(
            setup(&[], &mut server, &mut rng),
            Err(SdError::Parameter(_))
        ));
    }

    #[test]
    fn ragged_sizes_match_reference() {
        let mut rng = ChaCha20Rng::seed_from_u64(43);
        for d in [1usize, 2, 3, 5, 6, 7, 9, 13] {
            let mut server = MemoryBlockServer::new();
            let data = blocks(d, &mut rng);
            let handle = setup(&data, &mut server, &mut rng).unwrap();
            for i in 0..d as u32 {
                assert_eq!(
                    read(&handle, i, &mut server).as_ref(),
                    Some(&data[i as usize])
                );
                assert_eq!(
                    reference_read(&handle, i, &server).as_ref(),
                    Some(&data[i as usize])
                );
            }
        }
    }

    #[test]
    fn delete_isolates_one_leaf() {
        let mut rng = ChaCha20Rng::seed_from_u64(44);
        let mut server = MemoryBlockServer::new();
        let data = blocks(2, &mut rng);
        let handle = setup(&data, &mut server, &mut rng).unwrap();
        let handle = delete(&handle, 0, &mut server, &mut rng).unwrap();
        assert!(read(&handle, 0, &mut server).is_none());
        assert_eq!(read(&handle, 1, &mut server).unwrap(), data[1]);
    }

    #[test]
    fn delete_all_leaves_every_order_d4() {
        let mut rng = ChaCha20Rng::seed_from_u64(45);
        let orders = {
            // all 24 permutations of [0,1,2,3]
            let mut out = Vec::new();
            let mut items = [0u32, 1, 2, 3];
            permute(&mut items, 0, &mut out);
            fn permute(items: &mut [u32; 4], k: usize, out: &mut Vec<[u32; 4]>) {
                if k == 4 {
                    out.push(*items);
                    return;
                }
                for i in k..4 {
                    items.swap(k, i);
                    permute(items, k + 1, out);
                    items.swap(k, i);
                }
            }
            out
        };
        for order in orders {
            let mut server = MemoryBlockServer::new();
            let data = blocks(4, &mut rng);
            let mut handle = setup(&data, &mut server, &mut rng).unwrap();
            for &i in &order {
                handle = delete(&handle, i, &mut server, &mut rng).unwrap();
            }
            for i in 0..4 {
                assert!(read(&handle, i, &mut server).is_none());
            }
        }
    }

    #[test]
    fn double_delete_is_silent_noop() {
        let mut rng = ChaCha20Rng::seed_from_u64(46);
        let mut server = MemoryBlockServer::new();
        let data = blocks(4, &mut rng);
        let handle = setup(&data, &mut server, &mut rng).unwrap();
        let h1 = delete(&handle, 2, &mut server, &mut rng).unwrap();
        let h2 = delete(&h1, 2, &mut server, &mut rng).unwrap();
        assert_eq!(h1.root_key, h2.root_key);
        assert_eq!(read(&h2, 1, &mut server).unwrap(), data[1]);

        // but a broken path is an error
        let mut server2 = MemoryBlockServer::new();
        let handle = setup(&data, &mut server2, &mut rng).unwrap();
        server2.flip_bit(1, 3, 1);
        assert!(matches!(
            delete(&handle, 2, &mut server2, &mut rng),
            Err(SdError::Unreadable)
        ));
    }

    #[test]
    fn tamper_anywhere_on_path_yields_bot() {
        let mut rng = ChaCha20Rng::seed_from_u64(47);
        for _ in 0..40 {
            let mut server = MemoryBlockServer::new();
            let data = blocks(8, &mut rng);
            let handle = setup(&data, &mut server, &mut rng).unwrap();
            let addrs = server.addresses();
            let victim = addrs[rng.gen_range(0..addrs.len())];
            server.flip_bit(victim, rng.gen_range(0..64), rng.gen_range(0..8));
            // every leaf whose path crosses the tampered block must fail
            let slots = 1u64 << (handle.height - 1);
            for i in 0..8u32 {
                let mut crosses = false;
                let mut a = slots + i as u64;
                while a >= 1 {
                    if a == victim {
                        crosses = true;
                    }
                    if a == 1 {
                        break;
                    }
                    a /= 2;
                }
                let got = read(&handle, i, &mut server);
                if crosses {
                    assert!(got.is_none(), "leaf {i} read through tampered {victim}");
                } else {
                    assert_eq!(got.unwrap(), data[i as usize]);
                }
            }
        }
    }

    #[test]
    fn read_and_delete_touch_exactly_h_blocks() {
        let mut rng = ChaCha20Rng::seed_from_u64(48);
        for d in [1usize, 2, 3, 4, 7, 8, 20, 64] {
            let mut server = MemoryBlockServer::new();
            let data = blocks(d, &mut rng);
            let mark0 = server.op_mark();
            let handle = setup(&data, &mut server, &mut rng).unwrap();
            let h = handle.height as usize;
            let slots = 1usize << (h - 1);
            assert_eq!(server.touched_since(mark0), 2 * slots - 1);

            let mark = server.op_mark();
            read(&handle, (d - 1) as u32, &mut server).unwrap();
            assert_eq!(server.touched_since(mark), h, "read cost at D={d}");

            let mark = server.op_mark();
            let _ = delete(&handle, (d - 1) as u32, &mut server, &mut rng).unwrap();
            assert_eq!(server.touched_since(mark), h, "delete cost at D={d}");
        }
    }

    #[test]
    fn replay_adversary_sees_exactly_undeleted_leaves() {
        let mut rng = ChaCha20Rng::seed_from_u64(49);
        let mut server = MemoryBlockServer::new();
        let data = blocks(8, &mut rng);
        let mut handle = setup(&data, &mut server, &mut rng).unwrap();
        for &i in &[1u32, 4, 6] {
            handle = delete(&handle, i, &mut server, &mut rng).unwrap();
        }
        let recovered = replay_recoverable(&handle, &server.history);
        for i in 0..8u32 {
            let deleted = matches!(i, 1 | 4 | 6);
            match recovered.get(&i) {
                None => assert!(deleted, "leaf {i} unexpectedly unrecoverable"),
                Some(values) => {
                    assert!(!deleted, "deleted leaf {i} recovered");
                    assert!(values.contains(&data[i as usize]));
                }
            }
        }
    }
}
