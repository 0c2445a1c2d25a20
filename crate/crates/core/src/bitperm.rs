//! Keyed permutations of the 32 bit positions of a binary32 word.
//!
//! Bit positions are numbered MSB-first: position 0 is the most significant
//! bit of the word (the IEEE 754 sign bit) and position 31 is the least
//! significant bit. A [`PermutationKey`] maps every source position to a
//! distinct destination position; applying it moves bits around without ever
//! interpreting the word as a floating-point value, so NaN payloads,
//! infinities and denormals survive bit-exactly.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Number of bit positions a key permutes.
pub const WORD_BITS: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KeyError {
    #[error("key must list exactly 32 positions, got {0}")]
    LengthInvalid(usize),
    #[error("position {0} is outside 0..=31")]
    OutOfRange(i64),
    #[error("position {0} appears more than once")]
    DuplicatePosition(u8),
    #[error("cannot parse {0:?} as a bit position")]
    ParseInvalid(String),
}

/// An opaque 32-bit pattern with no numeric interpretation attached.
///
/// Ciphertext words are only ever handled in this form; routing them through
/// floating-point registers could canonicalize NaN payloads on some hardware.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
#[repr(transparent)]
pub struct Word32(u32);

impl Word32 {
    pub const fn from_bits(bits: u32) -> Self {
        Word32(bits)
    }

    pub const fn to_bits(self) -> u32 {
        self.0
    }

    /// Reinterprets a float's bit pattern; no value conversion happens.
    pub fn from_f32(value: f32) -> Self {
        Word32(value.to_bits())
    }

    /// Reinterprets the pattern as binary32; only meaningful for plaintext.
    pub fn to_f32(self) -> f32 {
        f32::from_bits(self.0)
    }

    pub const fn popcount(self) -> u32 {
        self.0.count_ones()
    }
}

impl fmt::Debug for Word32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Word32(0x{:08X})", self.0)
    }
}

/// A bijection on the 32 bit positions: `map[i]` is the destination of
/// source bit `i`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PermutationKey {
    map: [u8; WORD_BITS],
}

impl PermutationKey {
    /// Validates a candidate position list and builds a key from it.
    ///
    /// Accepts exactly 32 entries forming a permutation of `{0,…,31}`.
    pub fn from_positions(candidate: &[u8]) -> Result<Self, KeyError> {
        if candidate.len() != WORD_BITS {
            return Err(KeyError::LengthInvalid(candidate.len()));
        }
        let mut map = [0u8; WORD_BITS];
        let mut seen = [false; WORD_BITS];
        for (i, &position) in candidate.iter().enumerate() {
            if position as usize >= WORD_BITS {
                return Err(KeyError::OutOfRange(position as i64));
            }
            if seen[position as usize] {
                return Err(KeyError::DuplicatePosition(position));
            }
            seen[position as usize] = true;
            map[i] = position;
        }
        Ok(PermutationKey { map })
    }

    /// The key that leaves every bit in place.
    pub fn identity() -> Self {
        let mut map = [0u8; WORD_BITS];
        for (i, entry) in map.iter_mut().enumerate() {
            *entry = i as u8;
        }
        PermutationKey { map }
    }

    /// The key whose encryption rotates a word left by `shift` bit positions
    /// (toward the MSB). Any integer shift is reduced modulo 32.
    pub fn rotation(shift: i64) -> Self {
        let s = shift.rem_euclid(WORD_BITS as i64) as usize;
        let mut map = [0u8; WORD_BITS];
        for (i, entry) in map.iter_mut().enumerate() {
            *entry = ((i + WORD_BITS - s) % WORD_BITS) as u8;
        }
        PermutationKey { map }
    }

    /// The inverse bijection: `invert().map[self.map[i]] == i`.
    pub fn invert(&self) -> Self {
        let mut map = [0u8; WORD_BITS];
        for (i, &dst) in self.map.iter().enumerate() {
            map[dst as usize] = i as u8;
        }
        PermutationKey { map }
    }

    /// The key equivalent to applying `self` first, then `second`.
    pub fn compose(&self, second: &PermutationKey) -> Self {
        let mut map = [0u8; WORD_BITS];
        for (i, &mid) in self.map.iter().enumerate() {
            map[i] = second.map[mid as usize];
        }
        PermutationKey { map }
    }

    pub fn map(&self) -> &[u8; WORD_BITS] {
        &self.map
    }

    /// Binary key form: byte `i` holds `map[i]`.
    pub fn to_bytes(&self) -> [u8; WORD_BITS] {
        self.map
    }

    pub fn from_bytes(bytes: &[u8; WORD_BITS]) -> Result<Self, KeyError> {
        Self::from_positions(bytes)
    }
}

impl fmt::Debug for PermutationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PermutationKey({})", self)
    }
}

/// Text key form: 32 comma-separated decimal positions in one line.
impl fmt::Display for PermutationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, position) in self.map.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", position)?;
        }
        Ok(())
    }
}

impl FromStr for PermutationKey {
    type Err = KeyError;

    fn from_str(s: &str) -> Result<Self, KeyError> {
        let mut positions = Vec::with_capacity(WORD_BITS);
        for token in s.split(',') {
            let token = token.trim();
            let value: i64 = token
                .parse()
                .map_err(|_| KeyError::ParseInvalid(token.to_string()))?;
            if !(0..WORD_BITS as i64).contains(&value) {
                return Err(KeyError::OutOfRange(value));
            }
            positions.push(value as u8);
        }
        Self::from_positions(&positions)
    }
}

fn apply(word: Word32, key: &PermutationKey) -> Word32 {
    let bits = word.to_bits();
    let mut out = 0u32;
    for (i, &dst) in key.map.iter().enumerate() {
        let bit = (bits >> (31 - i)) & 1;
        out |= bit << (31 - dst as u32);
    }
    Word32::from_bits(out)
}

/// Moves the bit at source position `i` to position `key.map[i]`.
pub fn encrypt_word(plain: Word32, key: &PermutationKey) -> Word32 {
    apply(plain, key)
}

/// Applies the decryption permutation. The caller passes the decryption key,
/// i.e. the inverse of the key used to encrypt:
/// `decrypt_word(encrypt_word(w, k), k.invert()) == w` for every word.
pub fn decrypt_word(cipher: Word32, key: &PermutationKey) -> Word32 {
    apply(cipher, key)
}
