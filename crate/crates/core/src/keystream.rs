//! Per-request and per-element permutation key derivation.
//!
//! A fresh key per request (or per element) is what turns the bit shuffle
//! into a one-time-pad-style scheme: observations made under one key say
//! nothing about the next. The derivation is pinned bit-exactly so that
//! independent implementations derive identical keys from identical inputs:
//!
//! 1. A byte keystream is produced by the ChaCha20 block function of
//!    RFC 8439, keyed by the 32-byte master secret, with the 12-byte nonce
//!    and a 32-bit block counter. Request keys start at block 0; the key for
//!    element `e` starts at block `4·e`, so each element owns a disjoint
//!    256-byte keystream region (a derivation consumes 124 bytes unless the
//!    astronomically rare rejection path triggers).
//! 2. A Fisher–Yates shuffle of `[0,…,31]` runs for `i = 31` down to `1`.
//!    Each step draws 32-bit little-endian words `w` until
//!    `w < ⌊2³²/(i+1)⌋·(i+1)` (rejection sampling, so the swap index is
//!    unbiased), then swaps positions `i` and `w mod (i+1)`.
//!
//! The shuffled array is the key's position map. Uniform inputs give a key
//! distributed uniformly over all 32! permutations.

use std::fmt;

use num_bigint::BigUint;
use rand::rngs::OsRng;
use rand::TryRngCore;
use thiserror::Error;

use crate::bitperm::{PermutationKey, WORD_BITS};

/// Keystream blocks reserved per element index, sized so consecutive element
/// derivations never overlap.
pub const ELEMENT_BLOCK_STRIDE: u64 = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KeystreamError {
    #[error("system entropy source unavailable")]
    EntropyUnavailable,
    #[error("master secret must be exactly 32 bytes, got {0}")]
    MasterLengthInvalid(usize),
    #[error("nonce must be exactly 12 bytes, got {0}")]
    NonceLengthInvalid(usize),
    #[error("element index {0} exceeds the keystream counter range")]
    ElementIndexTooLarge(u64),
}

/// 32 uniformly random bytes; the only long-lived secret in the scheme.
#[derive(Clone)]
pub struct MasterSecret([u8; 32]);

impl MasterSecret {
    pub const LEN: usize = 32;

    pub fn new(bytes: [u8; 32]) -> Self {
        MasterSecret(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, KeystreamError> {
        let bytes: [u8; 32] = bytes
            .try_into()
            .map_err(|_| KeystreamError::MasterLengthInvalid(bytes.len()))?;
        Ok(MasterSecret(bytes))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

// Redacted Debug: master secrets should not end up in logs.
impl fmt::Debug for MasterSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MasterSecret(..)")
    }
}

/// 12 bytes, unique per request. Reuse under the same master secret reuses
/// keys; freshness is the caller's responsibility.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Nonce([u8; 12]);

impl Nonce {
    pub const LEN: usize = 12;

    pub fn new(bytes: [u8; 12]) -> Self {
        Nonce(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, KeystreamError> {
        let bytes: [u8; 12] = bytes
            .try_into()
            .map_err(|_| KeystreamError::NonceLengthInvalid(bytes.len()))?;
        Ok(Nonce(bytes))
    }

    pub fn as_bytes(&self) -> &[u8; 12] {
        &self.0
    }
}

impl fmt::Display for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for byte in self.0 {
            write!(f, "{:02x}", byte)?;
        }
        Ok(())
    }
}

/// How keys are assigned to the words of a batch.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum KeyMode {
    /// One caller-supplied key for everything.
    FixedKey,
    /// One key derived per envelope from (master, nonce).
    PerRequest,
    /// A distinct key per element index; defeats bit-frequency profiling.
    PerElement,
}

impl KeyMode {
    pub fn as_byte(self) -> u8 {
        match self {
            KeyMode::FixedKey => 0,
            KeyMode::PerRequest => 1,
            KeyMode::PerElement => 2,
        }
    }

    pub fn from_byte(byte: u8) -> Option<Self> {
        match byte {
            0 => Some(KeyMode::FixedKey),
            1 => Some(KeyMode::PerRequest),
            2 => Some(KeyMode::PerElement),
            _ => None,
        }
    }
}

impl fmt::Display for KeyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            KeyMode::FixedKey => "fixed",
            KeyMode::PerRequest => "per-request",
            KeyMode::PerElement => "per-element",
        };
        f.write_str(name)
    }
}

/// ChaCha20 block function (RFC 8439): 32-byte key, 32-bit block counter,
/// 12-byte nonce, 64-byte output block.
fn chacha20_block(key: &[u8; 32], counter: u32, nonce: &[u8; 12]) -> [u8; 64] {
    const SIGMA: [u32; 4] = [0x6170_7865, 0x3320_646e, 0x7962_2d32, 0x6b20_6574];

    let mut state = [0u32; 16];
    state[..4].copy_from_slice(&SIGMA);
    for i in 0..8 {
        state[4 + i] = u32::from_le_bytes(key[4 * i..4 * i + 4].try_into().unwrap());
    }
    state[12] = counter;
    for i in 0..3 {
        state[13 + i] = u32::from_le_bytes(nonce[4 * i..4 * i + 4].try_into().unwrap());
    }

    let mut working = state;
    for _ in 0..10 {
        quarter_round(&mut working, 0, 4, 8, 12);
        quarter_round(&mut working, 1, 5, 9, 13);
        quarter_round(&mut working, 2, 6, 10, 14);
        quarter_round(&mut working, 3, 7, 11, 15);
        quarter_round(&mut working, 0, 5, 10, 15);
        quarter_round(&mut working, 1, 6, 11, 12);
        quarter_round(&mut working, 2, 7, 8, 13);
        quarter_round(&mut working, 3, 4, 9, 14);
    }

    let mut block = [0u8; 64];
    for i in 0..16 {
        let word = working[i].wrapping_add(state[i]);
        block[4 * i..4 * i + 4].copy_from_slice(&word.to_le_bytes());
    }
    block
}

fn quarter_round(s: &mut [u32; 16], a: usize, b: usize, c: usize, d: usize) {
    s[a] = s[a].wrapping_add(s[b]);
    s[d] = (s[d] ^ s[a]).rotate_left(16);
    s[c] = s[c].wrapping_add(s[d]);
    s[b] = (s[b] ^ s[c]).rotate_left(12);
    s[a] = s[a].wrapping_add(s[b]);
    s[d] = (s[d] ^ s[a]).rotate_left(8);
    s[c] = s[c].wrapping_add(s[d]);
    s[b] = (s[b] ^ s[c]).rotate_left(7);
}

/// Sequential reader over the ChaCha20 keystream for a (master, nonce) pair.
///
/// The block counter wraps modulo 2³²; positions never straddle a block
/// because all reads are 4-byte aligned within the 64-byte blocks.
pub struct Keystream {
    key: [u8; 32],
    nonce: [u8; 12],
    counter: u32,
    block: [u8; 64],
    pos: usize,
}

impl Keystream {
    pub fn new(master: &MasterSecret, nonce: &Nonce, start_block: u32) -> Self {
        Keystream {
            key: *master.as_bytes(),
            nonce: *nonce.as_bytes(),
            counter: start_block,
            block: [0u8; 64],
            pos: 64, // forces a refill on first read
        }
    }

    fn refill(&mut self) {
        self.block = chacha20_block(&self.key, self.counter, &self.nonce);
        self.counter = self.counter.wrapping_add(1);
        self.pos = 0;
    }

    pub fn next_byte(&mut self) -> u8 {
        if self.pos == 64 {
            self.refill();
        }
        let byte = self.block[self.pos];
        self.pos += 1;
        byte
    }

    /// Next 32-bit little-endian keystream word.
    pub fn next_u32(&mut self) -> u32 {
        let mut bytes = [0u8; 4];
        for b in &mut bytes {
            *b = self.next_byte();
        }
        u32::from_le_bytes(bytes)
    }

    /// XORs the keystream into `buf`; applying twice restores the input.
    pub fn xor_into(&mut self, buf: &mut [u8]) {
        for byte in buf {
            *byte ^= self.next_byte();
        }
    }
}

fn fisher_yates(mut stream: Keystream) -> PermutationKey {
    let mut positions = [0u8; WORD_BITS];
    for (i, entry) in positions.iter_mut().enumerate() {
        *entry = i as u8;
    }
    for i in (1..WORD_BITS).rev() {
        let n = (i + 1) as u64;
        let zone = ((1u64 << 32) / n) * n;
        let word = loop {
            let w = stream.next_u32() as u64;
            if w < zone {
                break w;
            }
        };
        positions.swap(i, (word % n) as usize);
    }
    PermutationKey::from_positions(&positions).expect("shuffle output is a permutation")
}

/// Draws a fresh master secret from the operating system's entropy source.
pub fn generate_master() -> Result<MasterSecret, KeystreamError> {
    let mut bytes = [0u8; 32];
    OsRng
        .try_fill_bytes(&mut bytes)
        .map_err(|_| KeystreamError::EntropyUnavailable)?;
    Ok(MasterSecret::new(bytes))
}

/// Derives the request key for (master, nonce). Deterministic; uniform over
/// the 32! permutations for uniform inputs.
pub fn derive_request_key(master: &MasterSecret, nonce: &Nonce) -> PermutationKey {
    fisher_yates(Keystream::new(master, nonce, 0))
}

/// Derives the key for one element of a request. Index 0 coincides with the
/// request key; distinct indices read disjoint keystream regions.
pub fn derive_element_key(
    master: &MasterSecret,
    nonce: &Nonce,
    index: u64,
) -> Result<PermutationKey, KeystreamError> {
    let start = index
        .checked_mul(ELEMENT_BLOCK_STRIDE)
        .filter(|&block| block <= u64::from(u32::MAX))
        .ok_or(KeystreamError::ElementIndexTooLarge(index))?;
    Ok(fisher_yates(Keystream::new(master, nonce, start as u32)))
}

/// Number of permutations of `width` bit positions, exactly.
pub fn permutation_count(width: u32) -> BigUint {
    (1..=width).map(BigUint::from).product()
}

/// Size of the key space: 32! exactly.
pub fn keyspace_size() -> BigUint {
    permutation_count(WORD_BITS as u32)
}
