//! Length-prefixed binary framing.
//!
//! Every composite object on the wire is the concatenation of its fields,
//! each prefixed with its length as a 4-byte big-endian integer. The
//! encoding of a field *list* is injective: a byte string parses back into
//! at most one list of fields, so values with different arities or field
//! boundaries can never collide.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated input: needed {needed} more bytes")]
    Truncated { needed: usize },
    #[error("trailing {0} bytes after last field")]
    Trailing(usize),
    #[error("length prefix {0} exceeds remaining input")]
    BadLength(u32),
}

/// Appends `field` to `out` with a 4-byte big-endian length prefix.
pub fn put_field(out: &mut Vec<u8>, field: &[u8]) {
    out.extend_from_slice(&(field.len() as u32).to_be_bytes());
    out.extend_from_slice(field);
}

/// Encodes a list of fields as length-prefixed concatenation.
pub fn encode_fields<F: AsRef<[u8]>>(fields: &[F]) -> Vec<u8> {
    let mut out = Vec::new();
    for f in fields {
        put_field(&mut out, f.as_ref());
    }
    out
}

/// Splits a length-prefixed concatenation back into its fields.
pub fn decode_fields(mut input: &[u8]) -> Result<Vec<Vec<u8>>, WireError> {
    let mut fields = Vec::new();
    while !input.is_empty() {
        let (f, rest) = take_field(input)?;
        fields.push(f.to_vec());
        input = rest;
    }
    Ok(fields)
}

/// Reads one length-prefixed field, returning it and the remaining input.
pub fn take_field(input: &[u8]) -> Result<(&[u8], &[u8]), WireError> {
    if input.len() < 4 {
        return Err(WireError::Truncated {
            needed: 4 - input.len(),
        });
    }
    let len = u32::from_be_bytes([input[0], input[1], input[2], input[3]]) as usize;
    let rest = &input[4..];
    if rest.len() < len {
        return Err(WireError::BadLength(len as u32));
    }
    Ok((&rest[..len], &rest[len..]))
}

/// Reads a fixed-width (non-prefixed) run of bytes.
pub fn take_exact<'a>(input: &'a [u8], len: usize) -> Result<(&'a [u8], &'a [u8]), WireError> {
    if input.len() < len {
        return Err(WireError::Truncated {
            needed: len - input.len(),
        });
    }
    Ok((&input[..len], &input[len..]))
}

pub fn take_u32(input: &[u8]) -> Result<(u32, &[u8]), WireError> {
    let (b, rest) = take_exact(input, 4)?;
    Ok((u32::from_be_bytes(b.try_into().unwrap()), rest))
}

pub fn take_u64(input: &[u8]) -> Result<(u64, &[u8]), WireError> {
    let (b, rest) = take_exact(input, 8)?;
    Ok((u64::from_be_bytes(b.try_into().unwrap()), rest))
}

pub fn take_u16(input: &[u8]) -> Result<(u16, &[u8]), WireError> {
    let (b, rest) = take_exact(input, 2)?;
    Ok((u16::from_be_bytes(b.try_into().unwrap()), rest))
}

/// Asserts that `input` has been fully consumed.
pub fn expect_end(input: &[u8]) -> Result<(), WireError> {
    if input.is_empty() {
        Ok(())
    } else {
        Err(WireError::Trailing(input.len()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_list_is_empty_bytes() {
        assert_eq!(encode_fields::<&[u8]>(&[]), Vec::<u8>::new());
        assert_eq!(decode_fields(&[]).unwrap(), Vec::<Vec<u8>>::new());
    }

    #[test]
    fn truncated_prefix_rejected() {
        assert!(matches!(
            decode_fields(&[0, 0, 1]),
            Err(WireError::Truncated { .. })
        ));
        assert!(matches!(
            decode_fields(&[0, 0, 0, 5, 1, 2]),
            Err(WireError::BadLength(5))
        ));
    }

    proptest! {
        #[test]
        fn round_trip(fields in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..64), 0..8)) {
            let enc = encode_fields(&fields);
            let dec = decode_fields(&enc).unwrap();
            prop_assert_eq!(dec, fields);
        }
    }
}
