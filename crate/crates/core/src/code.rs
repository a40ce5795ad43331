//! Packed binary hash codes.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `bits` binary digits packed little-endian into 64-bit words: bit `k`
/// lives in word `k / 64` at position `k % 64`. Bits past `bits` are zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinaryCode {
    bits: usize,
    words: Vec<u64>,
}

#[inline]
fn word_count(bits: usize) -> usize {
    bits.div_ceil(64)
}

impl BinaryCode {
    pub fn zeros(bits: usize) -> Self {
        Self {
            bits,
            words: vec![0; word_count(bits)],
        }
    }

    pub fn from_words(bits: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != word_count(bits) {
            return Err(Error::Shape(format!(
                "{} words cannot hold exactly {bits} bits",
                words.len()
            )));
        }
        let code = Self { bits, words };
        if code.tail_mask_violation() {
            return Err(Error::Format(format!("bits set beyond width {bits}")));
        }
        Ok(code)
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut code = Self::zeros(bits.len());
        for (k, &b) in bits.iter().enumerate() {
            code.set(k, b);
        }
        code
    }

    fn tail_mask_violation(&self) -> bool {
        let rem = self.bits % 64;
        rem != 0 && self.words.last().is_some_and(|w| w >> rem != 0)
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, k: usize) -> bool {
        assert!(k < self.bits, "bit {k} out of range {}", self.bits);
        (self.words[k / 64] >> (k % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, k: usize, value: bool) {
        assert!(k < self.bits, "bit {k} out of range {}", self.bits);
        let mask = 1u64 << (k % 64);
        if value {
            self.words[k / 64] |= mask;
        } else {
            self.words[k / 64] &= !mask;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.bits).map(move |k| self.get(k))
    }

    pub fn complement(&self) -> Self {
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        let rem = self.bits % 64;
        if rem != 0 {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
        Self {
            bits: self.bits,
            words,
        }
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Bits rendered as `+1` / `-1`.
    pub fn to_signs<T: Scalar>(&self) -> Vec<T> {
        self.iter()
            .map(|b| if b { T::one() } else { -T::one() })
            .collect()
    }
}

impl fmt::Display for BinaryCode {
    /// Bit 0 first.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// `bit_k = 1` iff `h_k >= 0`.
pub fn sign_quantise<T: Scalar>(h: &[T]) -> BinaryCode {
    let mut code = BinaryCode::zeros(h.len());
    for (k, &v) in h.iter().enumerate() {
        if v >= T::zero() {
            code.words[k / 64] |= 1u64 << (k % 64);
        }
    }
    code
}

/// Population count of `a XOR b`.
pub fn hamming_distance(a: &BinaryCode, b: &BinaryCode) -> Result<u32> {
    if a.bits != b.bits {
        return Err(Error::BitWidthMismatch {
            left: a.bits,
            right: b.bits,
        });
    }
    Ok(hamming_words(&a.words, &b.words))
}

#[inline]
pub(crate) fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}
