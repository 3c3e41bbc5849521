//! Prime fields for secret sharing.
//!
//! Transport keys live in a 255-bit field so a field element doubles as a
//! 32-byte AE key; oracle tests use a small 8-bit-scale field where
//! exhaustive and statistical checks are cheap.

use num_bigint::{BigUint, RandBigInt};
use num_traits::{One, Zero};
use rand::RngCore;
use serde::{Deserialize, Serialize};

/// A prime field `Z_p` given by its modulus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrimeField {
    modulus: BigUint,
    /// Fixed serialized width of an element, in bytes.
    byte_len: usize,
}

pub type FieldElement = BigUint;

impl PrimeField {
    pub fn new(modulus: BigUint) -> Self {
        assert!(modulus > BigUint::from(2u32), "modulus too small");
        let byte_len = (modulus.bits() as usize + 7) / 8;
        PrimeField { modulus, byte_len }
    }

    /// The transport-key field: `2^255 - 19`, so elements are 32 bytes.
    pub fn transport() -> Self {
        let p = (BigUint::one() << 255u32) - BigUint::from(19u32);
        PrimeField::new(p)
    }

    /// A small field for oracle tests.
    pub fn small_test() -> Self {
        PrimeField::new(BigUint::from(251u32))
    }

    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }

    pub fn byte_len(&self) -> usize {
        self.byte_len
    }

    pub fn random(&self, rng: &mut dyn RngCore) -> FieldElement {
        let mut adapter = RngAdapter(rng);
        adapter.gen_biguint_below(&self.modulus)
    }

    pub fn add(&self, a: &FieldElement, b: &FieldElement) -> FieldElement {
        (a + b) % &self.modulus
    }

    pub fn sub(&self, a: &FieldElement, b: &FieldElement) -> FieldElement {
        ((a + &self.modulus) - (b % &self.modulus)) % &self.modulus
    }

    pub fn mul(&self, a: &FieldElement, b: &FieldElement) -> FieldElement {
        (a * b) % &self.modulus
    }

    /// Multiplicative inverse via Fermat: `a^(p-2) mod p`.
    pub fn inv(&self, a: &FieldElement) -> FieldElement {
        assert!(!a.is_zero(), "zero has no inverse");
        let exp = &self.modulus - BigUint::from(2u32);
        a.modpow(&exp, &self.modulus)
    }

    pub fn element_from_u64(&self, v: u64) -> FieldElement {
        BigUint::from(v) % &self.modulus
    }

    /// Fixed-width big-endian encoding.
    pub fn to_bytes(&self, a: &FieldElement) -> Vec<u8> {
        let raw = a.to_bytes_be();
        let mut out = vec![0u8; self.byte_len];
        out[self.byte_len - raw.len()..].copy_from_slice(&raw);
        out
    }

    pub fn from_bytes(&self, bytes: &[u8]) -> Option<FieldElement> {
        let v = BigUint::from_bytes_be(bytes);
        if v < self.modulus {
            Some(v)
        } else {
            None
        }
    }
}

// num-bigint's RandBigInt is implemented for sized Rng; bridge the dyn
// RngCore we take everywhere else.
struct RngAdapter<'a>(&'a mut dyn RngCore);

impl RngCore for RngAdapter<'_> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}

/// Serializable element paired with fixed-width encoding, used in wire formats.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedElement(pub Vec<u8>);
