//! ShuffleBits: a keyed permutation of the 32 bit positions inside each
//! binary32 word of a deep-feature batch.
//!
//! The crate provides the word-level cipher ([`bitperm`]), deterministic
//! per-request/per-element key derivation ([`keystream`]), batch encryption
//! with equivalent scalar and bit-sliced paths ([`codec`]), the `.shfb`
//! envelope format ([`wire`]), and an adversary harness that shows why
//! plaintext features leak and fixed keys fall to frequency analysis
//! ([`attack`]).

pub mod attack;
pub mod bitperm;
pub mod codec;
pub mod keystream;
pub mod wire;

pub use attack::{
    balanced_accuracy, class_weights, cosine_distance, predict_probe,
    recover_key_from_frequencies, run_demo, synth_dataset, train_probe, AttackError,
    HarnessConfig, HarnessReport, Probe, SyntheticDataset,
};
pub use bitperm::{decrypt_word, encrypt_word, KeyError, PermutationKey, Word32};
pub use codec::{
    bit_frequency_profile, decrypt_batch, encrypt_batch, encrypt_batch_bitsliced, CodecError,
    FeatureBatch, KeySource,
};
pub use keystream::{
    derive_element_key, derive_request_key, generate_master, keyspace_size, KeyMode,
    KeystreamError, MasterSecret, Nonce,
};
pub use wire::{
    apply_cascade_stage, read_envelope, write_envelope, CascadeStage, EnvelopeHeader, WireError,
    XorKeystreamStage,
};
