//! The `.shfb` envelope: the on-wire form of an encrypted feature batch.
//!
//! Version 1 byte layout, frozen:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "SHFB"
//!      4     1  version (= 1)
//!      5     1  mode (0 fixed, 1 per-request, 2 per-element)
//!      6     1  dtype (0 = binary32)
//!      7     1  cascade (0 none, 1 external stage applied to payload)
//!      8    12  nonce
//!     20     8  count, unsigned little-endian (number of vectors)
//!     28     4  dim, unsigned little-endian
//!     32     4  CRC-32 of the payload, little-endian
//!     36     …  payload: count * dim little-endian 32-bit words
//! ```
//!
//! The checksum detects corruption, not wrong keys — decryption under a
//! wrong key yields silently wrong plaintext by design. Authentication
//! belongs to a cascade stage layered on the payload.

use thiserror::Error;

use crate::codec::{CodecError, FeatureBatch};
use crate::keystream::{KeyMode, Keystream, MasterSecret, Nonce};

pub const MAGIC: [u8; 4] = *b"SHFB";
pub const VERSION: u8 = 1;
pub const DTYPE_BINARY32: u8 = 0;
pub const HEADER_LEN: usize = 36;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("bad magic {0:02x?}, expected \"SHFB\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}, expected {VERSION}")]
    UnsupportedVersion(u8),
    #[error("unsupported dtype {0}, expected binary32 (0)")]
    UnsupportedDtype(u8),
    #[error("invalid mode byte {0}")]
    InvalidMode(u8),
    #[error("length mismatch: expected {expected} bytes, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("payload checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("header declares {header_count}x{header_dim} but payload holds {words} words")]
    DimensionMismatch {
        header_count: u64,
        header_dim: u32,
        words: usize,
    },
    #[error("cascade stage changed payload length from {before} to {after}")]
    LengthChanged { before: usize, after: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// The semantic header fields; checksum and length bookkeeping are handled
/// during (de)serialization.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct EnvelopeHeader {
    pub mode: KeyMode,
    pub cascade: bool,
    pub nonce: Nonce,
    pub count: u64,
    pub dim: u32,
}

const CRC_TABLE: [u32; 256] = build_crc_table();

const fn build_crc_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut n = 0;
    while n < 256 {
        let mut c = n as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            k += 1;
        }
        table[n] = c;
        n += 1;
    }
    table
}

/// CRC-32 (IEEE reflected polynomial, the zlib variant).
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut c = 0xFFFF_FFFFu32;
    for &byte in bytes {
        c = CRC_TABLE[((c ^ u32::from(byte)) & 0xFF) as usize] ^ (c >> 8);
    }
    c ^ 0xFFFF_FFFF
}

/// Serializes header and payload; the checksum is computed here.
pub fn write_envelope(header: &EnvelopeHeader, payload: &FeatureBatch) -> Result<Vec<u8>, WireError> {
    if header.count != payload.count() || header.dim != payload.dim() {
        return Err(WireError::DimensionMismatch {
            header_count: header.count,
            header_dim: header.dim,
            words: payload.len(),
        });
    }
    let payload_bytes = payload.to_le_bytes();
    let mut out = Vec::with_capacity(HEADER_LEN + payload_bytes.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(header.mode.as_byte());
    out.push(DTYPE_BINARY32);
    out.push(u8::from(header.cascade));
    out.extend_from_slice(header.nonce.as_bytes());
    out.extend_from_slice(&header.count.to_le_bytes());
    out.extend_from_slice(&header.dim.to_le_bytes());
    out.extend_from_slice(&crc32(&payload_bytes).to_le_bytes());
    out.extend_from_slice(&payload_bytes);
    Ok(out)
}

/// Parses and validates an envelope. A checksum failure signals corruption;
/// wrong keys are undetectable by design.
pub fn read_envelope(bytes: &[u8]) -> Result<(EnvelopeHeader, FeatureBatch), WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::LengthMismatch {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(WireError::UnsupportedVersion(bytes[4]));
    }
    let mode = KeyMode::from_byte(bytes[5]).ok_or(WireError::InvalidMode(bytes[5]))?;
    if bytes[6] != DTYPE_BINARY32 {
        return Err(WireError::UnsupportedDtype(bytes[6]));
    }
    let cascade = bytes[7] != 0;
    let nonce = Nonce::from_slice(&bytes[8..20]).expect("12-byte slice");
    let count = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let dim = u32::from_le_bytes(bytes[28..32].try_into().unwrap());
    let stored = u32::from_le_bytes(bytes[32..36].try_into().unwrap());

    let payload = &bytes[HEADER_LEN..];
    let expected_payload = count
        .checked_mul(u64::from(dim))
        .and_then(|w| w.checked_mul(4))
        .and_then(|b| usize::try_from(b).ok())
        .ok_or(WireError::LengthMismatch {
            expected: usize::MAX,
            actual: payload.len(),
        })?;
    if payload.len() != expected_payload {
        return Err(WireError::LengthMismatch {
            expected: HEADER_LEN + expected_payload,
            actual: bytes.len(),
        });
    }
    let computed = crc32(payload);
    if computed != stored {
        return Err(WireError::ChecksumMismatch { stored, computed });
    }
    let batch = FeatureBatch::from_le_bytes(payload, count, dim)?;
    Ok((
        EnvelopeHeader {
            mode,
            cascade,
            nonce,
            count,
            dim,
        },
        batch,
    ))
}

/// An invertible, length-preserving transform layered over the payload so a
/// second cipher can be stacked on top of the bit shuffle.
pub trait CascadeStage {
    fn transform(&self, payload: &[u8]) -> Vec<u8>;
}

/// Runs one cascade stage over payload bytes, enforcing length preservation.
pub fn apply_cascade_stage(payload: &[u8], stage: &dyn CascadeStage) -> Result<Vec<u8>, WireError> {
    let out = stage.transform(payload);
    if out.len() != payload.len() {
        return Err(WireError::LengthChanged {
            before: payload.len(),
            after: out.len(),
        });
    }
    Ok(out)
}

/// Reference stage: XOR with the ChaCha20 keystream for (master, nonce).
/// Applying it twice restores the payload. Production deployments would slot
/// a standard symmetric cipher here instead.
pub struct XorKeystreamStage {
    master: MasterSecret,
    nonce: Nonce,
}

impl XorKeystreamStage {
    pub fn new(master: MasterSecret, nonce: Nonce) -> Self {
        XorKeystreamStage { master, nonce }
    }
}

impl CascadeStage for XorKeystreamStage {
    fn transform(&self, payload: &[u8]) -> Vec<u8> {
        let mut out = payload.to_vec();
        Keystream::new(&self.master, &self.nonce, 0).xor_into(&mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitperm::Word32;
    use proptest::prelude::*;

    fn sample_nonce() -> Nonce {
        let mut bytes = [0u8; 12];
        for (i, b) in bytes.iter_mut().enumerate() {
            *b = i as u8;
        }
        Nonce::new(bytes)
    }

    fn sample_header(count: u64, dim: u32) -> EnvelopeHeader {
        EnvelopeHeader {
            mode: KeyMode::PerRequest,
            cascade: false,
            nonce: sample_nonce(),
            count,
            dim,
        }
    }

    #[test]
    fn crc32_known_answers() {
        assert_eq!(crc32(b""), 0x0000_0000);
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
        let payload = [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x80, 0x3F];
        assert_eq!(crc32(&payload), 0xE8C7_6A1F);
    }

    #[test]
    fn empty_envelope_is_header_only() {
        let batch = FeatureBatch::new(vec![], 0, 0).unwrap();
        let bytes = write_envelope(&sample_header(0, 0), &batch).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        // CRC of the empty payload is zero
        assert_eq!(&bytes[32..36], &[0, 0, 0, 0]);
    }

    #[test]
    fn payload_serialization_is_little_endian() {
        let batch = FeatureBatch::new(
            vec![Word32::from_bits(0x0000_0000), Word32::from_bits(0x3F80_0000)],
            1,
            2,
        )
        .unwrap();
        let bytes = write_envelope(&sample_header(1, 2), &batch).unwrap();
        assert_eq!(
            &bytes[HEADER_LEN..],
            &[0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x80, 0x3F]
        );
    }

    #[test]
    fn envelope_matches_golden_fixture() {
        let batch = FeatureBatch::new(
            vec![Word32::from_bits(0x0000_0000), Word32::from_bits(0x3F80_0000)],
            1,
            2,
        )
        .unwrap();
        let bytes = write_envelope(&sample_header(1, 2), &batch).unwrap();
        assert_eq!(bytes, include_bytes!("../tests/data/golden.shfb"));
    }

    #[test]
    fn dimension_mismatch_is_rejected_on_write() {
        let batch = FeatureBatch::new(vec![Word32::from_bits(1); 4], 2, 2).unwrap();
        assert!(matches!(
            write_envelope(&sample_header(4, 2), &batch),
            Err(WireError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn truncated_input_is_a_length_mismatch() {
        assert_eq!(
            read_envelope(&[0u8; 10]),
            Err(WireError::LengthMismatch {
                expected: HEADER_LEN,
                actual: 10
            })
        );
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = vec![0u8; HEADER_LEN];
        bytes[0..4].copy_from_slice(b"XXXX");
        assert_eq!(read_envelope(&bytes), Err(WireError::BadMagic(*b"XXXX")));
    }

    #[test]
    fn wrong_version_dtype_and_mode_are_rejected() {
        let batch = FeatureBatch::new(vec![Word32::from_bits(7)], 1, 1).unwrap();
        let good = write_envelope(&sample_header(1, 1), &batch).unwrap();

        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(read_envelope(&bad), Err(WireError::UnsupportedVersion(2)));

        let mut bad = good.clone();
        bad[5] = 9;
        assert_eq!(read_envelope(&bad), Err(WireError::InvalidMode(9)));

        let mut bad = good;
        bad[6] = 1;
        assert_eq!(read_envelope(&bad), Err(WireError::UnsupportedDtype(1)));
    }

    #[test]
    fn flipped_payload_byte_fails_checksum() {
        let batch = FeatureBatch::new(vec![Word32::from_bits(0xDEAD_BEEF); 8], 2, 4).unwrap();
        let mut bytes = write_envelope(&sample_header(2, 4), &batch).unwrap();
        bytes[HEADER_LEN + 5] ^= 0x01;
        assert!(matches!(
            read_envelope(&bytes),
            Err(WireError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn truncated_payload_is_a_length_mismatch() {
        let batch = FeatureBatch::new(vec![Word32::from_bits(3); 4], 1, 4).unwrap();
        let bytes = write_envelope(&sample_header(1, 4), &batch).unwrap();
        assert!(matches!(
            read_envelope(&bytes[..bytes.len() - 4]),
            Err(WireError::LengthMismatch { .. })
        ));
    }

    struct IdentityStage;
    impl CascadeStage for IdentityStage {
        fn transform(&self, payload: &[u8]) -> Vec<u8> {
            payload.to_vec()
        }
    }

    struct GrowingStage;
    impl CascadeStage for GrowingStage {
        fn transform(&self, payload: &[u8]) -> Vec<u8> {
            let mut out = payload.to_vec();
            out.push(0);
            out
        }
    }

    #[test]
    fn cascade_identity_stage_is_a_no_op() {
        let payload = vec![1u8, 2, 3, 4];
        assert_eq!(
            apply_cascade_stage(&payload, &IdentityStage).unwrap(),
            payload
        );
    }

    #[test]
    fn cascade_xor_stage_is_an_involution() {
        let payload: Vec<u8> = (0..100u8).collect();
        let stage = XorKeystreamStage::new(MasterSecret::new([9; 32]), sample_nonce());
        let once = apply_cascade_stage(&payload, &stage).unwrap();
        assert_ne!(once, payload);
        let twice = apply_cascade_stage(&once, &stage).unwrap();
        assert_eq!(twice, payload);
    }

    #[test]
    fn cascade_length_change_is_rejected() {
        assert_eq!(
            apply_cascade_stage(&[1, 2, 3], &GrowingStage),
            Err(WireError::LengthChanged {
                before: 3,
                after: 4
            })
        );
    }

    proptest! {
        #[test]
        fn envelope_roundtrip(
            words in prop::collection::vec(any::<u32>(), 0..120),
            mode in 0u8..3,
            cascade in any::<bool>(),
            nonce_bytes in any::<[u8; 12]>(),
        ) {
            let count = words.len() as u64;
            let batch = FeatureBatch::new(
                words.into_iter().map(Word32::from_bits).collect(),
                count,
                1,
            ).unwrap();
            let header = EnvelopeHeader {
                mode: KeyMode::from_byte(mode).unwrap(),
                cascade,
                nonce: Nonce::new(nonce_bytes),
                count,
                dim: 1,
            };
            let bytes = write_envelope(&header, &batch).unwrap();
            prop_assert_eq!(bytes.len(), HEADER_LEN + 4 * batch.len());
            let (parsed_header, parsed_batch) = read_envelope(&bytes).unwrap();
            prop_assert_eq!(parsed_header, header);
            prop_assert_eq!(parsed_batch, batch);
        }
    }
}
