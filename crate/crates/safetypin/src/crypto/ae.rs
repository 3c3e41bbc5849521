//! Authenticated encryption: ChaCha20-Poly1305 with a random 96-bit nonce.
//!
//! Serialized form is `nonce || body || tag` (the tag is appended to the
//! body by the AEAD). Decryption with the wrong key, or after any
//! tampering, fails detectably.

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand::RngCore;
use serde::{Deserialize, Serialize};

pub const AE_KEY_LEN: usize = 32;
pub const AE_NONCE_LEN: usize = 12;
/// AEAD tag length; a ciphertext body is always at least this long.
pub const AE_TAG_LEN: usize = 16;

/// A 32-byte symmetric key. The all-zero value is reserved as the "useless"
/// key that marks deleted leaves in the secure-deletion tree and is never
/// used to encrypt.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AeKey(pub [u8; AE_KEY_LEN]);

impl std::fmt::Debug for AeKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // Keys never appear in debug output or transcripts.
        write!(f, "AeKey(..)")
    }
}

impl AeKey {
    pub fn random(rng: &mut dyn RngCore) -> Self {
        let mut k = [0u8; AE_KEY_LEN];
        rng.fill_bytes(&mut k);
        AeKey(k)
    }

    /// The all-zero useless key.
    pub fn useless() -> Self {
        AeKey([0u8; AE_KEY_LEN])
    }

    pub fn is_useless(&self) -> bool {
        self.0 == [0u8; AE_KEY_LEN]
    }

    /// Overwrites the key material in place before dropping.
    pub fn erase(&mut self) {
        self.0 = [0u8; AE_KEY_LEN];
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AeCiphertext {
    pub nonce: [u8; AE_NONCE_LEN],
    pub body: Vec<u8>,
}

impl AeCiphertext {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(AE_NONCE_LEN + self.body.len());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() < AE_NONCE_LEN + AE_TAG_LEN {
            return None;
        }
        let mut nonce = [0u8; AE_NONCE_LEN];
        nonce.copy_from_slice(&bytes[..AE_NONCE_LEN]);
        Some(AeCiphertext {
            nonce,
            body: bytes[AE_NONCE_LEN..].to_vec(),
        })
    }
}

pub fn encrypt(key: &AeKey, plaintext: &[u8], rng: &mut dyn RngCore) -> AeCiphertext {
    debug_assert!(!key.is_useless(), "refusing to encrypt under the useless key");
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&key.0));
    let mut nonce = [0u8; AE_NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let body = cipher
        .encrypt(Nonce::from_slice(&nonce), plaintext)
        .expect("chacha20poly1305 encryption is infallible for in-memory buffers");
    AeCiphertext { nonce, body }
}

pub fn decrypt(key: &AeKey, ct: &AeCiphertext) -> Option<Vec<u8>> {
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&key.0));
    cipher.decrypt(Nonce::from_slice(&ct.nonce), ct.body.as_ref()).ok()
}

/// Decrypts a serialized `nonce || body` blob.
pub fn decrypt_bytes(key: &AeKey, bytes: &[u8]) -> Option<Vec<u8>> {
    decrypt(key, &AeCiphertext::from_bytes(bytes)?)
}
