//! Element-wise encryption of feature batches.
//!
//! Two execution paths produce bit-identical output: a scalar reference that
//! permutes one word at a time, and a bit-sliced path that transposes blocks
//! of 32 words into bit planes, relabels the planes, and transposes back.
//! The bit-sliced path requires one key for the whole batch; per-element
//! keying always runs the scalar path.
//!
//! Words are stored row-major (vector-major): element index
//! `vector_index * dim + component_index`. That index is also what feeds
//! per-element key derivation, so any partitioning of the range decrypts
//! consistently.

use thiserror::Error;

use crate::bitperm::{decrypt_word, encrypt_word, PermutationKey, Word32, WORD_BITS};
use crate::keystream::{
    derive_element_key, derive_request_key, KeyMode, KeystreamError, MasterSecret, Nonce,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("batch shape {count}x{dim} does not match {words} words")]
    ShapeMismatch { count: u64, dim: u32, words: usize },
    #[error("payload must be {expected} bytes for the given shape, got {actual}")]
    ByteLength { expected: usize, actual: usize },
    #[error("batch contains no words")]
    EmptyBatch,
    #[error("envelope was produced in {expected} mode but a {actual} key source was supplied")]
    ModeMismatch { expected: KeyMode, actual: KeyMode },
    #[error(transparent)]
    Keystream(#[from] KeystreamError),
}

/// A contiguous `count x dim` matrix of 32-bit words.
///
/// Key validity is enforced by [`PermutationKey`]'s constructor, so the
/// codec itself can only fail on shape or key-derivation problems.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FeatureBatch {
    words: Vec<Word32>,
    count: u64,
    dim: u32,
}

impl FeatureBatch {
    pub fn new(words: Vec<Word32>, count: u64, dim: u32) -> Result<Self, CodecError> {
        let expected = count.checked_mul(u64::from(dim));
        if expected != Some(words.len() as u64) {
            return Err(CodecError::ShapeMismatch {
                count,
                dim,
                words: words.len(),
            });
        }
        Ok(FeatureBatch { words, count, dim })
    }

    pub fn from_f32(values: &[f32], count: u64, dim: u32) -> Result<Self, CodecError> {
        Self::new(values.iter().map(|&v| Word32::from_f32(v)).collect(), count, dim)
    }

    /// Parses little-endian words; `bytes.len()` must equal `count * dim * 4`.
    pub fn from_le_bytes(bytes: &[u8], count: u64, dim: u32) -> Result<Self, CodecError> {
        let expected = count
            .checked_mul(u64::from(dim))
            .and_then(|w| w.checked_mul(4))
            .and_then(|b| usize::try_from(b).ok())
            .ok_or(CodecError::ShapeMismatch {
                count,
                dim,
                words: bytes.len() / 4,
            })?;
        if bytes.len() != expected {
            return Err(CodecError::ByteLength {
                expected,
                actual: bytes.len(),
            });
        }
        let words = bytes
            .chunks_exact(4)
            .map(|c| Word32::from_bits(u32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Self::new(words, count, dim)
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(self.words.len() * 4);
        for word in &self.words {
            bytes.extend_from_slice(&word.to_bits().to_le_bytes());
        }
        bytes
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.words.iter().map(|w| w.to_f32()).collect()
    }

    pub fn words(&self) -> &[Word32] {
        &self.words
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Key material for a batch operation; the variant fixes the [`KeyMode`].
///
/// Decryption takes the same source that encrypted the batch — inverse keys
/// are formed internally.
#[derive(Clone, Debug)]
pub enum KeySource {
    Fixed(PermutationKey),
    PerRequest { master: MasterSecret, nonce: Nonce },
    PerElement { master: MasterSecret, nonce: Nonce },
}

impl KeySource {
    pub fn mode(&self) -> KeyMode {
        match self {
            KeySource::Fixed(_) => KeyMode::FixedKey,
            KeySource::PerRequest { .. } => KeyMode::PerRequest,
            KeySource::PerElement { .. } => KeyMode::PerElement,
        }
    }
}

/// Fails with `ModeMismatch` unless `source` matches the mode an envelope
/// was produced in.
pub fn ensure_mode(source: &KeySource, expected: KeyMode) -> Result<(), CodecError> {
    if source.mode() == expected {
        Ok(())
    } else {
        Err(CodecError::ModeMismatch {
            expected,
            actual: source.mode(),
        })
    }
}

/// Scalar reference path: encrypts every word under its mode-assigned key.
/// Shape is preserved.
pub fn encrypt_batch(batch: &FeatureBatch, source: &KeySource) -> Result<FeatureBatch, CodecError> {
    let words = match source {
        KeySource::Fixed(key) => batch.words.iter().map(|&w| encrypt_word(w, key)).collect(),
        KeySource::PerRequest { master, nonce } => {
            let key = derive_request_key(master, nonce);
            batch.words.iter().map(|&w| encrypt_word(w, &key)).collect()
        }
        KeySource::PerElement { master, nonce } => {
            let mut out = Vec::with_capacity(batch.words.len());
            for (index, &word) in batch.words.iter().enumerate() {
                let key = derive_element_key(master, nonce, index as u64)?;
                out.push(encrypt_word(word, &key));
            }
            out
        }
    };
    FeatureBatch::new(words, batch.count, batch.dim)
}

/// Inverse of [`encrypt_batch`] under the same source:
/// `decrypt_batch(encrypt_batch(b, s)?, s) == b` bit-exactly.
pub fn decrypt_batch(batch: &FeatureBatch, source: &KeySource) -> Result<FeatureBatch, CodecError> {
    let words = match source {
        KeySource::Fixed(key) => {
            let inverse = key.invert();
            batch.words.iter().map(|&w| decrypt_word(w, &inverse)).collect()
        }
        KeySource::PerRequest { master, nonce } => {
            let inverse = derive_request_key(master, nonce).invert();
            batch.words.iter().map(|&w| decrypt_word(w, &inverse)).collect()
        }
        KeySource::PerElement { master, nonce } => {
            let mut out = Vec::with_capacity(batch.words.len());
            for (index, &word) in batch.words.iter().enumerate() {
                let inverse = derive_element_key(master, nonce, index as u64)?.invert();
                out.push(decrypt_word(word, &inverse));
            }
            out
        }
    };
    FeatureBatch::new(words, batch.count, batch.dim)
}

/// In-place 32x32 bit-matrix transpose (the classic swap-network form).
fn transpose_32x32(m: &mut [u32; 32]) {
    let mut j = 16usize;
    let mut mask: u32 = 0x0000_FFFF;
    while j != 0 {
        let mut k = 0usize;
        while k < 32 {
            let t = (m[k] ^ (m[k + j] >> j)) & mask;
            m[k] ^= t;
            m[k + j] ^= t << j;
            k = (k + j + 1) & !j;
        }
        j >>= 1;
        mask ^= mask << j;
    }
}

/// Bit-sliced fixed-key path, bit-identical to the scalar path.
///
/// Full blocks of 32 words become 32 transposed bit planes; the permutation
/// is then a relabeling of plane indices. The tail shorter than 32 words
/// falls back to the scalar path so no padding words are emitted.
/// Decryption is this same function under the inverse key.
pub fn encrypt_batch_bitsliced(batch: &FeatureBatch, key: &PermutationKey) -> FeatureBatch {
    let mut out = Vec::with_capacity(batch.words.len());
    let mut chunks = batch.words.chunks_exact(WORD_BITS);
    let mut planes = [0u32; WORD_BITS];
    let mut relabeled = [0u32; WORD_BITS];
    for chunk in &mut chunks {
        for (i, word) in chunk.iter().enumerate() {
            planes[i] = word.to_bits();
        }
        transpose_32x32(&mut planes);
        for (i, &dst) in key.map().iter().enumerate() {
            relabeled[dst as usize] = planes[i];
        }
        transpose_32x32(&mut relabeled);
        out.extend(relabeled.iter().map(|&bits| Word32::from_bits(bits)));
    }
    for &word in chunks.remainder() {
        out.push(encrypt_word(word, key));
    }
    FeatureBatch {
        words: out,
        count: batch.count,
        dim: batch.dim,
    }
}

/// Fraction of words with the bit at each position set, MSB-first.
pub fn bit_frequency_profile(batch: &FeatureBatch) -> Result<[f64; WORD_BITS], CodecError> {
    if batch.is_empty() {
        return Err(CodecError::EmptyBatch);
    }
    let mut counts = [0u64; WORD_BITS];
    for word in &batch.words {
        let bits = word.to_bits();
        for (p, count) in counts.iter_mut().enumerate() {
            *count += u64::from((bits >> (31 - p)) & 1);
        }
    }
    let total = batch.words.len() as f64;
    let mut profile = [0f64; WORD_BITS];
    for (p, count) in counts.iter().enumerate() {
        profile[p] = *count as f64 / total;
    }
    Ok(profile)
}
