//! Primitive layer: domain-separated hashing, a prime-order group,
//! authenticated encryption, Shamir secret sharing over a prime field, and
//! aggregatable signatures.
//!
//! All operations are pure or rng-parameterized; there is no shared mutable
//! state, so everything here is safe to call concurrently.

pub mod aggsig;
pub mod ae;
pub mod elgamal;
pub mod field;
pub mod group;
pub mod hash;
pub mod shamir;

pub use ae::{AeCiphertext, AeKey};
pub use elgamal::{ElGamalCiphertext, ElGamalKeypair};
pub use field::{FieldElement, PrimeField};
pub use group::{GroupElement, Scalar};
pub use hash::{hash_domain, hash_domain_checked, DomainTag, HashStream};
pub use shamir::ShamirShare;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("unknown domain-separation tag: {0:?}")]
    UnknownTag(String),
    #[error("invalid parameters: {0}")]
    Parameter(String),
    #[error("not enough shares: have {have}, need {need}")]
    NotEnoughShares { have: usize, need: usize },
    #[error("duplicate share index {0}")]
    DuplicateShareIndex(u32),
    #[error("share index 0 is the secret itself and is never a share")]
    ZeroShareIndex,
    #[error("malformed encoding: {0}")]
    Encoding(String),
    #[error("signature set mismatch: {0}")]
    Signature(String),
}
