//! Fixed-length binary codes (binarized embeddings) with Hamming distance.
//!
//! Codes are bit vectors packed MSB-first into bytes: bit `i` lives in byte
//! `i / 8` at mask `0x80 >> (i % 8)`. Unused trailing bits of the last byte
//! are always zero, so Hamming distance is a plain XOR-popcount over bytes.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A packed bit vector of fixed length.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryCode {
    n_bits: usize,
    bytes: Vec<u8>,
}

impl BinaryCode {
    /// All-zero code of the given length.
    pub fn zeros(n_bits: usize) -> Self {
        BinaryCode {
            n_bits,
            bytes: vec![0; n_bits.div_ceil(8)],
        }
    }

    /// Build a code from per-bit booleans.
    pub fn from_bits(bits: impl IntoIterator<Item = bool>) -> Self {
        let mut bytes = Vec::new();
        let mut n_bits = 0;
        for bit in bits {
            if n_bits % 8 == 0 {
                bytes.push(0);
            }
            if bit {
                *bytes.last_mut().unwrap() |= 0x80 >> (n_bits % 8);
            }
            n_bits += 1;
        }
        BinaryCode { n_bits, bytes }
    }

    /// Parse a hex string of exactly `n_bits / 4` characters. `n_bits` must
    /// be a multiple of 4 for the hex representation to be exact.
    pub fn from_hex(hex: &str, n_bits: usize) -> Result<Self> {
        if n_bits % 4 != 0 {
            return Err(Error::InvalidConfig(format!(
                "hex codes require n_bits divisible by 4, got {n_bits}"
            )));
        }
        if hex.len() != n_bits / 4 {
            return Err(Error::InvalidConfig(format!(
                "binary code has {} hex chars, expected {}",
                hex.len(),
                n_bits / 4
            )));
        }
        let mut bytes = vec![0u8; n_bits.div_ceil(8)];
        for (i, c) in hex.chars().enumerate() {
            let nibble = c.to_digit(16).ok_or_else(|| {
                Error::InvalidConfig(format!("invalid hex character {c:?} in binary code"))
            })? as u8;
            if i % 2 == 0 {
                bytes[i / 2] |= nibble << 4;
            } else {
                bytes[i / 2] |= nibble;
            }
        }
        Ok(BinaryCode { n_bits, bytes })
    }

    /// Hex representation, `n_bits / 4` characters. Only defined for codes
    /// whose length is a multiple of 4.
    pub fn to_hex(&self) -> String {
        debug_assert_eq!(self.n_bits % 4, 0, "hex output requires nibble-aligned code");
        let mut out = String::with_capacity(self.n_bits / 4);
        for i in 0..self.n_bits / 4 {
            let byte = self.bytes[i / 2];
            let nibble = if i % 2 == 0 { byte >> 4 } else { byte & 0x0f };
            out.push(char::from_digit(nibble as u32, 16).unwrap());
        }
        out
    }

    pub fn len(&self) -> usize {
        self.n_bits
    }

    pub fn is_empty(&self) -> bool {
        self.n_bits == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.n_bits);
        self.bytes[i / 8] & (0x80 >> (i % 8)) != 0
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.n_bits);
        let mask = 0x80 >> (i % 8);
        if value {
            self.bytes[i / 8] |= mask;
        } else {
            self.bytes[i / 8] &= !mask;
        }
    }

    pub fn flip(&mut self, i: usize) {
        assert!(i < self.n_bits);
        self.bytes[i / 8] ^= 0x80 >> (i % 8);
    }

    /// Number of set bits.
    pub fn count_ones(&self) -> u32 {
        self.bytes.iter().map(|b| b.count_ones()).sum()
    }

    /// Number of differing bit positions. Errors when lengths differ.
    pub fn hamming_distance(&self, other: &BinaryCode) -> Result<u32> {
        if self.n_bits != other.n_bits {
            return Err(Error::CodeLength {
                left: self.n_bits,
                right: other.n_bits,
            });
        }
        Ok(self
            .bytes
            .iter()
            .zip(&other.bytes)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum())
    }
}
