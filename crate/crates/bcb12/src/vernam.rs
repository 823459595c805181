//! One-time-pad primitives: a packed bit string and the XOR cipher.
//!
//! Encryption and decryption are the same map (bitwise XOR with the key),
//! so a single [`xor_cipher`] covers both directions. Keys must be at least
//! as long as the input; only the leading bits of the key are consumed.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VernamError {
    #[error("key too short: input is {input} bits but key has only {key}")]
    KeyTooShort { input: usize, key: usize },
    #[error("bit length {0} is not a multiple of 8")]
    NotByteAligned(usize),
    #[error("invalid character {0:?} in bit string (expected '0' or '1')")]
    InvalidBitChar(char),
}

/// A sequence of bits of arbitrary length, packed MSB-first.
///
/// The packed form matches the wire layout used by the frame codec, and the
/// unused low bits of the final byte are kept at zero so that equality and
/// hashing can work on the raw bytes.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct BitString {
    bytes: Vec<u8>,
    len: usize,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        BitString {
            bytes: Vec::with_capacity(bits.div_ceil(8)),
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, bit: bool) {
        let slot = self.len / 8;
        if slot == self.bytes.len() {
            self.bytes.push(0);
        }
        if bit {
            self.bytes[slot] |= 0x80 >> (self.len % 8);
        }
        self.len += 1;
    }

    pub fn get(&self, index: usize) -> Option<bool> {
        if index >= self.len {
            return None;
        }
        Some(self.bytes[index / 8] & (0x80 >> (index % 8)) != 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i).unwrap())
    }

    /// Appends one byte as 8 bits, most-significant bit first.
    pub fn push_byte(&mut self, byte: u8) {
        for shift in (0..8).rev() {
            self.push(byte & (1 << shift) != 0);
        }
    }

    /// Renders a byte sequence as bits, 8 per byte, MSB first.
    pub fn from_bytes(bytes: &[u8]) -> Self {
        let mut out = BitString {
            bytes: bytes.to_vec(),
            len: bytes.len() * 8,
        };
        out.normalize();
        out
    }

    /// Inverse of [`BitString::from_bytes`]; the length must be a multiple of 8.
    pub fn to_bytes(&self) -> Result<Vec<u8>, VernamError> {
        if !self.len.is_multiple_of(8) {
            return Err(VernamError::NotByteAligned(self.len));
        }
        Ok(self.bytes.clone())
    }

    /// Parses ASCII '0'/'1' text; whitespace (including a trailing newline)
    /// is ignored.
    pub fn from_bit_str(text: &str) -> Result<Self, VernamError> {
        let mut out = BitString::with_capacity(text.len());
        for c in text.chars() {
            match c {
                '0' => out.push(false),
                '1' => out.push(true),
                c if c.is_ascii_whitespace() => {}
                c => return Err(VernamError::InvalidBitChar(c)),
            }
        }
        Ok(out)
    }

    /// The first `bits` bits as a new string; clamps to the available length.
    pub fn prefix(&self, bits: usize) -> Self {
        let len = bits.min(self.len);
        let mut out = BitString {
            bytes: self.bytes[..len.div_ceil(8)].to_vec(),
            len,
        };
        out.normalize();
        out
    }

    /// The packed MSB-first bytes; the final byte is zero-padded.
    pub fn packed_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Rebuilds from packed MSB-first bytes and a bit count.
    /// Padding bits beyond `len` are masked off.
    pub fn from_packed(bytes: &[u8], len: usize) -> Self {
        let mut out = BitString {
            bytes: bytes[..len.div_ceil(8)].to_vec(),
            len,
        };
        out.normalize();
        out
    }

    fn normalize(&mut self) {
        self.bytes.truncate(self.len.div_ceil(8));
        if !self.len.is_multiple_of(8) {
            if let Some(last) = self.bytes.last_mut() {
                *last &= 0xffu8 << (8 - self.len % 8);
            }
        }
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for bit in self.iter() {
            f.write_str(if bit { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 64 {
            write!(f, "BitString({self})")
        } else {
            write!(f, "BitString({} bits, {}…)", self.len, self.prefix(32))
        }
    }
}

impl FromIterator<bool> for BitString {
    fn from_iter<T: IntoIterator<Item = bool>>(iter: T) -> Self {
        let mut out = BitString::new();
        for bit in iter {
            out.push(bit);
        }
        out
    }
}

/// XORs `input` against the leading bits of `key`.
///
/// The output has the length of `input`; the key must be at least as long.
/// Applying the same key twice returns the original input.
pub fn xor_cipher(input: &BitString, key: &BitString) -> Result<BitString, VernamError> {
    if key.len() < input.len() {
        return Err(VernamError::KeyTooShort {
            input: input.len(),
            key: key.len(),
        });
    }
    let mut out = BitString {
        bytes: input
            .bytes
            .iter()
            .zip(&key.bytes)
            .map(|(a, b)| a ^ b)
            .collect(),
        len: input.len(),
    };
    out.normalize();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn push_and_get() {
        let mut b = BitString::new();
        b.push(true);
        b.push(false);
        b.push(true);
        assert_eq!(b.len(), 3);
        assert_eq!(b.get(0), Some(true));
        assert_eq!(b.get(1), Some(false));
        assert_eq!(b.get(2), Some(true));
        assert_eq!(b.get(3), None);
        assert_eq!(b.to_string(), "101");
    }

    #[test]
    fn byte_round_trip_all_values() {
        let all: Vec<u8> = (0..=255).collect();
        let bits = BitString::from_bytes(&all);
        assert_eq!(bits.len(), 256 * 8);
        assert_eq!(bits.to_bytes().unwrap(), all);
    }

    #[test]
    fn empty_round_trips() {
        let bits = BitString::from_bytes(&[]);
        assert!(bits.is_empty());
        assert_eq!(bits.to_bytes().unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn to_bytes_rejects_ragged_length() {
        let mut b = BitString::new();
        for _ in 0..9 {
            b.push(true);
        }
        assert_eq!(b.to_bytes(), Err(VernamError::NotByteAligned(9)));
    }

    #[test]
    fn bit_str_parsing() {
        let b = BitString::from_bit_str("0100 1001\n").unwrap();
        assert_eq!(b.to_bytes().unwrap(), vec![0x49]);
        assert_eq!(
            BitString::from_bit_str("01x"),
            Err(VernamError::InvalidBitChar('x'))
        );
    }

    #[test]
    fn msb_first_rendering() {
        // 'I' = 0x49 = 01001001
        let b = BitString::from_bytes(b"I");
        assert_eq!(b.to_string(), "01001001");
    }

    #[test]
    fn xor_with_zero_key_is_identity() {
        let x = BitString::from_bit_str("110100111").unwrap();
        let zeros: BitString = std::iter::repeat_n(false, 16).collect();
        assert_eq!(xor_cipher(&x, &zeros).unwrap(), x);
    }

    #[test]
    fn xor_with_self_is_zero() {
        let x = BitString::from_bytes(b"umbrella");
        let out = xor_cipher(&x, &x).unwrap();
        assert!(out.iter().all(|b| !b));
    }

    #[test]
    fn short_key_rejected() {
        let x = BitString::from_bytes(b"ab");
        let k = BitString::from_bytes(b"a");
        assert_eq!(
            xor_cipher(&x, &k),
            Err(VernamError::KeyTooShort { input: 16, key: 8 })
        );
    }

    #[test]
    fn prefix_masks_padding() {
        let b = BitString::from_bytes(&[0xff, 0xff]);
        let p = b.prefix(5);
        assert_eq!(p.len(), 5);
        assert_eq!(p.packed_bytes(), &[0xf8]);
    }

    proptest! {
        #[test]
        fn involution(x in proptest::collection::vec(any::<bool>(), 0..1000),
                      extra in 0usize..64) {
            let input: BitString = x.iter().copied().collect();
            let key: BitString = (0..input.len() + extra)
                .map(|i| (i * 2654435761) % 7 < 3)
                .collect();
            let ct = xor_cipher(&input, &key).unwrap();
            prop_assert_eq!(xor_cipher(&ct, &key).unwrap(), input);
        }

        #[test]
        fn bytes_round_trip(data in proptest::collection::vec(any::<u8>(), 0..256)) {
            let bits = BitString::from_bytes(&data);
            prop_assert_eq!(bits.to_bytes().unwrap(), data);
        }

        #[test]
        fn packed_round_trip(x in proptest::collection::vec(any::<bool>(), 0..256)) {
            let bits: BitString = x.iter().copied().collect();
            let back = BitString::from_packed(bits.packed_bytes(), bits.len());
            prop_assert_eq!(back, bits);
        }
    }
}
