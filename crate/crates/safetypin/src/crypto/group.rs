//! Prime-order group used by the public-key pieces.
//!
//! Backed by ristretto255: prime order, canonical 32-byte encodings, and no
//! cofactor pitfalls. The simulator does not need side-channel resistance,
//! only a clean group abstraction.

use curve25519_dalek::constants::RISTRETTO_BASEPOINT_TABLE;
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar as DalekScalar;
use rand::RngCore;

use super::hash::HashStream;
use super::CryptoError;

/// An element of the prime-order group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupElement(pub(crate) RistrettoPoint);

/// A scalar in `Z_p` for the group order `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scalar(pub(crate) DalekScalar);

impl GroupElement {
    pub fn generator() -> Self {
        GroupElement(RistrettoPoint::mul_base(&DalekScalar::ONE))
    }

    pub fn identity() -> Self {
        GroupElement(RistrettoPoint::default())
    }

    /// `g^s` for the fixed generator `g`.
    pub fn base_mul(s: &Scalar) -> Self {
        GroupElement(RISTRETTO_BASEPOINT_TABLE * &s.0)
    }

    /// `self^s`.
    pub fn mul(&self, s: &Scalar) -> Self {
        GroupElement(self.0 * s.0)
    }

    pub fn add(&self, other: &GroupElement) -> Self {
        GroupElement(self.0 + other.0)
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.compress().to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| CryptoError::Encoding("group element must be 32 bytes".into()))?;
        CompressedRistretto(arr)
            .decompress()
            .map(GroupElement)
            .ok_or_else(|| CryptoError::Encoding("not a canonical group element".into()))
    }
}

impl Scalar {
    pub fn random(rng: &mut dyn RngCore) -> Self {
        let mut wide = [0u8; 64];
        rng.fill_bytes(&mut wide);
        Scalar(DalekScalar::from_bytes_mod_order_wide(&wide))
    }

    /// Derives a scalar from a hash stream by rejection sampling canonical
    /// 32-byte encodings (top bits masked to the order's width first).
    pub fn from_stream(stream: &mut HashStream) -> Self {
        loop {
            let mut buf = [0u8; 32];
            stream.fill(&mut buf);
            // The group order is just above 2^252; mask to 253 bits so the
            // acceptance rate is ~1 rather than ~2^-3.6.
            buf[31] &= 0x1f;
            if let Some(s) = DalekScalar::from_canonical_bytes(buf).into() {
                return Scalar(s);
            }
        }
    }

    pub fn add(&self, other: &Scalar) -> Scalar {
        Scalar(self.0 + other.0)
    }

    pub fn mul(&self, other: &Scalar) -> Scalar {
        Scalar(self.0 * other.0)
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| CryptoError::Encoding("scalar must be 32 bytes".into()))?;
        Option::<DalekScalar>::from(DalekScalar::from_canonical_bytes(arr))
            .map(Scalar)
            .ok_or_else(|| CryptoError::Encoding("non-canonical scalar".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn serialization_round_trips_bit_exactly() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..32 {
            let s = Scalar::random(&mut rng);
            let p = GroupElement::base_mul(&s);
            assert_eq!(GroupElement::from_bytes(&p.to_bytes()).unwrap(), p);
            assert_eq!(Scalar::from_bytes(&s.to_bytes()).unwrap(), s);
        }
    }

    #[test]
    fn identity_and_generator_distinct() {
        assert_ne!(GroupElement::identity(), GroupElement::generator());
        assert_ne!(
            GroupElement::identity().to_bytes(),
            GroupElement::generator().to_bytes()
        );
    }

    #[test]
    fn exponent_laws() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let a = Scalar::random(&mut rng);
        let b = Scalar::random(&mut rng);
        let lhs = GroupElement::base_mul(&a).mul(&b);
        let rhs = GroupElement::base_mul(&b).mul(&a);
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn bad_encoding_rejected() {
        assert!(GroupElement::from_bytes(&[0xffu8; 32]).is_err());
        assert!(GroupElement::from_bytes(&[0u8; 31]).is_err());
    }
}
