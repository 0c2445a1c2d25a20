//! Desk-scale adversary harness.
//!
//! Two demonstrations: a linear attribute probe (batch-norm-style
//! standardization plus one dense layer) that reads sensitive attributes out
//! of plaintext feature vectors but collapses to chance on per-element
//! ciphertext, and a bit-frequency analysis that recovers a fixed key
//! outright — the weakness that motivates per-element keying.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::bitperm::{PermutationKey, Word32, WORD_BITS};
use crate::codec::{bit_frequency_profile, encrypt_batch, FeatureBatch, KeySource};
use crate::keystream::{keyspace_size, MasterSecret, Nonce};

const VARIANCE_FLOOR: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttackError {
    #[error("class proportions invalid: {0}")]
    InvalidProportions(&'static str),
    #[error("class {0} has no samples")]
    MissingClass(usize),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("feature dimension {actual} does not match probe dimension {expected}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("cosine distance is undefined for a zero vector")]
    ZeroVector,
    #[error("frequency profile must have 32 entries, got {0}")]
    ProfileLengthInvalid(usize),
    #[error("dataset is empty")]
    DegenerateFeatures,
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error(transparent)]
    Codec(#[from] crate::codec::CodecError),
}

/// Labeled features planted on class-specific rows plus gaussian noise;
/// stands in for real annotated datasets at desk scale.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub features: Array2<f32>,
    pub labels: Vec<usize>,
    pub planted_matrix: Array2<f32>,
    pub noise_scale: f32,
}

/// Standardization statistics plus a linear classifier — the attacker's
/// probe: one normalization layer and one dense layer.
#[derive(Clone, Debug)]
pub struct Probe {
    pub mean: Array1<f64>,
    pub variance: Array1<f64>, // floored at 1e-5, so strictly positive
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Probe snapshot with the best training balanced accuracy seen, plus the
/// loss endpoints for descent checks.
#[derive(Clone, Debug)]
pub struct TrainedProbe {
    pub probe: Probe,
    pub train_balanced_accuracy: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
}

fn apportion(count: usize, proportions: &[f64]) -> Result<Vec<usize>, AttackError> {
    if proportions.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(AttackError::InvalidProportions(
            "entries must be finite and non-negative",
        ));
    }
    let total: f64 = proportions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(AttackError::InvalidProportions("entries must sum to 1"));
    }

    let mut counts: Vec<usize> = proportions
        .iter()
        .map(|p| (p * count as f64).floor() as usize)
        .collect();
    let assigned: usize = counts.iter().sum();

    // largest-remainder apportionment, ties toward the lower class index
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = proportions[a] * count as f64 - counts[a] as f64;
        let fb = proportions[b] * count as f64 - counts[b] as f64;
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &class in order.iter().take(count - assigned) {
        counts[class] += 1;
    }

    // every class must appear at least once (count >= classes holds here)
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let donor = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        counts[donor] -= 1;
        counts[empty] += 1;
    }
    Ok(counts)
}

/// Deterministic synthetic classification task: row `r` is
/// `planted_matrix[labels[r]] + noise_scale * N(0, I)`.
pub fn synth_dataset(
    seed: u64,
    count: usize,
    dim: usize,
    classes: usize,
    noise_scale: f32,
    class_proportions: &[f64],
) -> Result<SyntheticDataset, AttackError> {
    if classes < 2 {
        return Err(AttackError::InvalidArgument("at least 2 classes required"));
    }
    if count < classes {
        return Err(AttackError::InvalidArgument("count must be >= classes"));
    }
    if dim == 0 {
        return Err(AttackError::InvalidArgument("dim must be >= 1"));
    }
    if class_proportions.len() != classes {
        return Err(AttackError::InvalidProportions(
            "one proportion required per class",
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planted = Array2::<f32>::zeros((classes, dim));
    for value in planted.iter_mut() {
        let draw: f64 = rng.sample(StandardNormal);
        *value = draw as f32;
    }

    let counts = apportion(count, class_proportions)?;
    let mut labels = Vec::with_capacity(count);
    for (class, &n) in counts.iter().enumerate() {
        labels.extend(std::iter::repeat_n(class, n));
    }
    labels.shuffle(&mut rng);

    let mut features = Array2::<f32>::zeros((count, dim));
    for row in 0..count {
        let class = labels[row];
        for col in 0..dim {
            let noise: f64 = rng.sample(StandardNormal);
            features[[row, col]] = planted[[class, col]] + noise_scale * noise as f32;
        }
    }

    Ok(SyntheticDataset {
        features,
        labels,
        planted_matrix: planted,
        noise_scale,
    })
}

fn class_count(labels: &[usize]) -> usize {
    labels.iter().copied().max().map_or(0, |m| m + 1).max(2)
}

/// Per-class weights inversely proportional to class counts:
/// `w_c = N / (C * n_c)`, so the sample-weighted mean is exactly 1.
pub fn class_weights(labels: &[usize]) -> Result<Vec<f64>, AttackError> {
    let classes = class_count(labels);
    let mut counts = vec![0usize; classes];
    for &label in labels {
        counts[label] += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(AttackError::MissingClass(missing));
    }
    let total = labels.len() as f64;
    Ok(counts
        .iter()
        .map(|&n| total / (classes as f64 * n as f64))
        .collect())
}

fn standardize(features: &Array2<f32>) -> (Array1<f64>, Array1<f64>, Array2<f64>) {
    let x = features.mapv(f64::from);
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let mut variance = x.var_axis(Axis(0), 0.0);
    variance.mapv_inplace(|v| v.max(VARIANCE_FLOOR));
    let std = variance.mapv(f64::sqrt);
    let standardized = (&x - &mean) / &std;
    (mean, variance, standardized)
}

fn logits_of(standardized: &Array2<f64>, weights: &Array2<f64>, bias: &Array1<f64>) -> Array2<f64> {
    standardized.dot(&weights.t()) + bias
}

fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .outer_iter()
        .map(|row| {
            let mut best = 0usize;
            let mut best_value = row[0];
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > best_value {
                    best = i;
                    best_value = v;
                }
            }
            best
        })
        .collect()
}

fn weighted_loss(logits: &Array2<f64>, labels: &[usize], sample_weights: &[f64]) -> f64 {
    let n = labels.len() as f64;
    logits
        .outer_iter()
        .zip(labels)
        .zip(sample_weights)
        .map(|((row, &label), &weight)| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_sum: f64 = row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
            weight * (log_sum - row[label])
        })
        .sum::<f64>()
        / n
}

/// Fits the probe by full-batch gradient descent on class-weighted softmax
/// cross-entropy over standardized features, keeping the parameters with the
/// best training balanced accuracy across epochs.
pub fn train_probe(
    features: &Array2<f32>,
    labels: &[usize],
    epochs: usize,
    learning_rate: f64,
) -> Result<TrainedProbe, AttackError> {
    let n = features.nrows();
    if n == 0 || features.ncols() == 0 {
        return Err(AttackError::DegenerateFeatures);
    }
    if labels.len() != n {
        return Err(AttackError::LengthMismatch {
            left: n,
            right: labels.len(),
        });
    }
    if epochs == 0 {
        return Err(AttackError::InvalidArgument("epochs must be >= 1"));
    }
    if !learning_rate.is_finite() || learning_rate <= 0.0 {
        return Err(AttackError::InvalidArgument("learning rate must be > 0"));
    }

    let per_class = class_weights(labels)?;
    let classes = per_class.len();
    let sample_weights: Vec<f64> = labels.iter().map(|&y| per_class[y]).collect();

    let (mean, variance, standardized) = standardize(features);
    let dim = standardized.ncols();
    let mut weights = Array2::<f64>::zeros((classes, dim));
    let mut bias = Array1::<f64>::zeros(classes);

    let initial_loss = weighted_loss(&logits_of(&standardized, &weights, &bias), labels, &sample_weights);

    let mut best_accuracy = f64::NEG_INFINITY;
    let mut best = (weights.clone(), bias.clone());
    for _ in 0..epochs {
        let logits = logits_of(&standardized, &weights, &bias);
        // softmax rows minus one-hot targets, scaled by sample weight / n
        let mut delta = logits;
        for (mut row, (&label, &weight)) in delta
            .outer_iter_mut()
            .zip(labels.iter().zip(&sample_weights))
        {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
            row[label] -= 1.0;
            let scale = weight / n as f64;
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
        let grad_weights = delta.t().dot(&standardized);
        let grad_bias = delta.sum_axis(Axis(0));
        weights.scaled_add(-learning_rate, &grad_weights);
        bias.scaled_add(-learning_rate, &grad_bias);

        let predictions = argmax_rows(&logits_of(&standardized, &weights, &bias));
        let accuracy = balanced_accuracy(&predictions, labels)?;
        if accuracy > best_accuracy {
            best_accuracy = accuracy;
            best = (weights.clone(), bias.clone());
        }
    }
    let final_loss = weighted_loss(&logits_of(&standardized, &weights, &bias), labels, &sample_weights);

    Ok(TrainedProbe {
        probe: Probe {
            mean,
            variance,
            weights: best.0,
            bias: best.1,
        },
        train_balanced_accuracy: best_accuracy,
        initial_loss,
        final_loss,
    })
}

/// Class predictions: argmax of the softmax over standardized-then-linear
/// outputs, ties broken toward the lowest class index.
pub fn predict_probe(probe: &Probe, features: &Array2<f32>) -> Result<Vec<usize>, AttackError> {
    if features.ncols() != probe.mean.len() {
        return Err(AttackError::DimMismatch {
            expected: probe.mean.len(),
            actual: features.ncols(),
        });
    }
    let x = features.mapv(f64::from);
    let std = probe.variance.mapv(f64::sqrt);
    let standardized = (&x - &probe.mean) / &std;
    Ok(argmax_rows(&logits_of(&standardized, &probe.weights, &probe.bias)))
}

/// Mean of per-class recall.
pub fn balanced_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64, AttackError> {
    if predictions.len() != labels.len() {
        return Err(AttackError::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    let classes = class_count(labels);
    let mut totals = vec![0usize; classes];
    let mut correct = vec![0usize; classes];
    for (&prediction, &label) in predictions.iter().zip(labels) {
        totals[label] += 1;
        if prediction == label {
            correct[label] += 1;
        }
    }
    if let Some(missing) = totals.iter().position(|&c| c == 0) {
        return Err(AttackError::MissingClass(missing));
    }
    let recall_sum: f64 = correct
        .iter()
        .zip(&totals)
        .map(|(&c, &t)| c as f64 / t as f64)
        .sum();
    Ok(recall_sum / classes as f64)
}

/// `1 - cos(u, v)`, clamped to `[0, 1]`; zero exactly when the angle is zero.
pub fn cosine_distance(u: &[f32], v: &[f32]) -> Result<f64, AttackError> {
    if u.len() != v.len() {
        return Err(AttackError::LengthMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let mut dot = 0f64;
    let mut norm_u = 0f64;
    let mut norm_v = 0f64;
    for (&a, &b) in u.iter().zip(v) {
        dot += f64::from(a) * f64::from(b);
        norm_u += f64::from(a) * f64::from(a);
        norm_v += f64::from(b) * f64::from(b);
    }
    if norm_u == 0.0 || norm_v == 0.0 {
        return Err(AttackError::ZeroVector);
    }
    // sqrt(norm_u * norm_v) rather than sqrt(norm_u) * sqrt(norm_v): for
    // bitwise-identical inputs dot == norm_u == norm_v, and the correctly
    // rounded sqrt of a correctly rounded square gives back the operand, so
    // identical vectors get distance exactly 0.
    let similarity = dot / (norm_u * norm_v).sqrt();
    Ok((1.0 - similarity).clamp(0.0, 1.0))
}

/// A key candidate recovered from frequency profiles. `ambiguous` is set
/// when tied frequencies left part of the matching arbitrary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecoveredKey {
    pub key: PermutationKey,
    pub ambiguous: bool,
}

/// Matches plaintext to ciphertext bit positions by frequency rank. Exact
/// recovery is guaranteed when plaintext frequencies are pairwise separated
/// by more than twice the sampling error; ties fall back to position order.
pub fn recover_key_from_frequencies(
    plain_profile: &[f64],
    cipher_profile: &[f64],
) -> Result<RecoveredKey, AttackError> {
    if plain_profile.len() != WORD_BITS {
        return Err(AttackError::ProfileLengthInvalid(plain_profile.len()));
    }
    if cipher_profile.len() != WORD_BITS {
        return Err(AttackError::ProfileLengthInvalid(cipher_profile.len()));
    }

    let rank = |profile: &[f64]| -> Vec<usize> {
        let mut order: Vec<usize> = (0..WORD_BITS).collect();
        // stable sort: tied frequencies stay in position order
        order.sort_by(|&a, &b| profile[a].total_cmp(&profile[b]));
        order
    };
    let has_ties = |profile: &[f64], order: &[usize]| {
        order
            .windows(2)
            .any(|w| profile[w[0]] == profile[w[1]])
    };

    let plain_order = rank(plain_profile);
    let cipher_order = rank(cipher_profile);
    let ambiguous =
        has_ties(plain_profile, &plain_order) || has_ties(cipher_profile, &cipher_order);

    let mut map = [0u8; WORD_BITS];
    for (source, destination) in plain_order.iter().zip(&cipher_order) {
        map[*source] = *destination as u8;
    }
    Ok(RecoveredKey {
        key: PermutationKey::from_positions(&map).expect("rank matching is a bijection"),
        ambiguous,
    })
}

/// Reinterprets batch words as binary32 probe inputs, zeroing non-finite
/// values — the canonicalization an adversary must apply before training on
/// shuffled bit patterns.
pub fn reinterpret_features(batch: &FeatureBatch) -> Result<Array2<f32>, AttackError> {
    let count = usize::try_from(batch.count())
        .map_err(|_| AttackError::InvalidArgument("batch too large for memory"))?;
    let values: Vec<f32> = batch
        .to_f32()
        .into_iter()
        .map(|v| if v.is_finite() { v } else { 0.0 })
        .collect();
    Array2::from_shape_vec((count, batch.dim() as usize), values)
        .map_err(|_| AttackError::InvalidArgument("batch shape inconsistent"))
}

/// Outcome of the fixed-key bit-frequency attack.
#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
pub struct FrequencyAttackResult {
    pub exact_recovery: bool,
    pub ambiguous: bool,
}

/// Harness configuration; the defaults are the seeded desk-scale task.
#[derive(Clone, Debug)]
pub struct HarnessConfig {
    pub seed: u64,
    pub count: usize,
    pub dim: usize,
    pub noise_scale: f32,
    pub epochs: usize,
    pub learning_rate: f64,
    pub frequency_words: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            seed: 42,
            count: 2000,
            dim: 64,
            noise_scale: 0.1,
            epochs: 100,
            learning_rate: 0.5,
            frequency_words: 100_000,
        }
    }
}

/// Demo report: the leak/no-leak contrast plus the fixed-key recovery.
#[derive(Clone, Debug, Serialize)]
pub struct HarnessReport {
    pub seed: u64,
    pub plain_balanced_accuracy: f64,
    pub cipher_balanced_accuracy: f64,
    pub keyspace: String,
    pub frequency_attack_result: FrequencyAttackResult,
}

/// Runs the full demonstration: trains the probe on plaintext features, then
/// on per-element ciphertext reinterpreted as floats, and runs the frequency
/// attack against a fixed key. Deterministic given the seed.
pub fn run_demo(config: &HarnessConfig) -> Result<HarnessReport, AttackError> {
    let dataset = synth_dataset(
        config.seed,
        config.count,
        config.dim,
        2,
        config.noise_scale,
        &[0.5, 0.5],
    )?;

    let plain = train_probe(
        &dataset.features,
        &dataset.labels,
        config.epochs,
        config.learning_rate,
    )?;

    // Encrypt the same features under per-element keys the probe never sees.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5348_4642));
    let mut master_bytes = [0u8; 32];
    rng.fill(&mut master_bytes);
    let mut nonce_bytes = [0u8; 12];
    rng.fill(&mut nonce_bytes);
    let flat: Vec<f32> = dataset.features.iter().copied().collect();
    let batch = FeatureBatch::from_f32(&flat, config.count as u64, config.dim as u32)?;
    let source = KeySource::PerElement {
        master: MasterSecret::new(master_bytes),
        nonce: Nonce::new(nonce_bytes),
    };
    let cipher_features = reinterpret_features(&encrypt_batch(&batch, &source)?)?;
    let cipher = train_probe(
        &cipher_features,
        &dataset.labels,
        config.epochs,
        config.learning_rate,
    )?;

    // Fixed-key weakness: per-position frequencies pairwise separated by
    // ~1/34 >= 0.02 make rank matching recover the planted key exactly.
    let mut positions: Vec<u8> = (0..32).collect();
    positions.shuffle(&mut rng);
    let planted = PermutationKey::from_positions(&positions).expect("shuffle");
    let words: Vec<Word32> = (0..config.frequency_words)
        .map(|_| {
            let mut bits = 0u32;
            for p in 0..32u32 {
                if rng.random::<f64>() < (p + 1) as f64 / 34.0 {
                    bits |= 1 << (31 - p);
                }
            }
            Word32::from_bits(bits)
        })
        .collect();
    let plain_batch = FeatureBatch::new(words, config.frequency_words as u64, 1)?;
    let cipher_batch = encrypt_batch(&plain_batch, &KeySource::Fixed(planted))?;
    let recovered = recover_key_from_frequencies(
        &bit_frequency_profile(&plain_batch)?,
        &bit_frequency_profile(&cipher_batch)?,
    )?;

    Ok(HarnessReport {
        seed: config.seed,
        plain_balanced_accuracy: plain.train_balanced_accuracy,
        cipher_balanced_accuracy: cipher.train_balanced_accuracy,
        keyspace: keyspace_size().to_string(),
        frequency_attack_result: FrequencyAttackResult {
            exact_recovery: recovered.key == planted && !recovered.ambiguous,
            ambiguous: recovered.ambiguous,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn synth_dataset_is_deterministic() {
        let a = synth_dataset(7, 40, 8, 2, 0.3, &[0.5, 0.5]).unwrap();
        let b = synth_dataset(7, 40, 8, 2, 0.3, &[0.5, 0.5]).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.planted_matrix, b.planted_matrix);
    }

    #[test]
    fn zero_noise_rows_equal_planted_rows() {
        let dataset = synth_dataset(3, 20, 6, 2, 0.0, &[0.5, 0.5]).unwrap();
        for (row, &label) in dataset.features.outer_iter().zip(&dataset.labels) {
            assert_eq!(row, dataset.planted_matrix.row(label));
        }
    }

    #[test]
    fn proportions_apportion_exactly() {
        let dataset = synth_dataset(1, 100, 4, 2, 0.1, &[0.75, 0.25]).unwrap();
        let zeros = dataset.labels.iter().filter(|&&l| l == 0).count();
        assert_eq!(zeros, 75);
        assert_eq!(dataset.labels.len() - zeros, 25);
    }

    #[test]
    fn every_class_appears_even_under_tiny_proportions() {
        let dataset = synth_dataset(1, 100, 4, 2, 0.1, &[0.001, 0.999]).unwrap();
        for class in 0..2 {
            assert!(dataset.labels.contains(&class), "class {} absent", class);
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(matches!(
            synth_dataset(1, 100, 4, 2, 0.1, &[0.3, 0.3]),
            Err(AttackError::InvalidProportions(_))
        ));
        assert!(matches!(
            synth_dataset(1, 100, 4, 2, 0.1, &[0.5, -0.5]).unwrap_err(),
            AttackError::InvalidProportions(_)
        ));
        assert!(matches!(
            synth_dataset(1, 1, 4, 2, 0.1, &[0.5, 0.5]).unwrap_err(),
            AttackError::InvalidArgument(_)
        ));
        assert!(matches!(
            synth_dataset(1, 100, 0, 2, 0.1, &[0.5, 0.5]).unwrap_err(),
            AttackError::InvalidArgument(_)
        ));
    }

    #[test]
    fn class_weight_examples() {
        assert_eq!(class_weights(&[0, 0, 1, 1]).unwrap(), vec![1.0, 1.0]);

        // N=4, C=2: w = 4 / (2 * n_c)
        let weights = class_weights(&[0, 0, 0, 1]).unwrap();
        assert_relative_eq!(weights[0], 2.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(weights[1], 2.0, max_relative = 1e-15);

        // weighted mean over samples is exactly 1
        let labels = [0, 0, 0, 1];
        let mean: f64 = labels.iter().map(|&l| weights[l]).sum::<f64>() / labels.len() as f64;
        assert_relative_eq!(mean, 1.0, max_relative = 1e-15);

        assert_eq!(
            class_weights(&[0, 0, 0]).unwrap_err(),
            AttackError::MissingClass(1)
        );
    }

    #[test]
    fn separable_dataset_trains_to_perfect_balanced_accuracy() {
        let dataset = synth_dataset(11, 60, 8, 2, 0.0, &[0.5, 0.5]).unwrap();
        let trained = train_probe(&dataset.features, &dataset.labels, 200, 0.5).unwrap();
        assert_eq!(trained.train_balanced_accuracy, 1.0);
        assert!(trained.final_loss < trained.initial_loss);

        // training rows predict their own class
        let predictions = predict_probe(&trained.probe, &dataset.features).unwrap();
        assert_eq!(predictions, dataset.labels);
    }

    #[test]
    fn training_rejects_bad_arguments() {
        let dataset = synth_dataset(5, 20, 4, 2, 0.1, &[0.5, 0.5]).unwrap();
        assert!(matches!(
            train_probe(&dataset.features, &dataset.labels, 0, 0.5).unwrap_err(),
            AttackError::InvalidArgument(_)
        ));
        assert!(matches!(
            train_probe(&dataset.features, &dataset.labels, 10, 0.0).unwrap_err(),
            AttackError::InvalidArgument(_)
        ));
        let empty = Array2::<f32>::zeros((0, 4));
        assert_eq!(
            train_probe(&empty, &[], 10, 0.5).unwrap_err(),
            AttackError::DegenerateFeatures
        );
    }

    #[test]
    fn constant_feature_is_neutralized_by_flooring() {
        let mut dataset = synth_dataset(9, 30, 4, 2, 0.1, &[0.5, 0.5]).unwrap();
        dataset.features.column_mut(2).fill(3.25);
        let trained = train_probe(&dataset.features, &dataset.labels, 50, 0.5).unwrap();
        assert!(trained.probe.variance.iter().all(|&v| v >= VARIANCE_FLOOR));
    }

    #[test]
    fn zero_probe_predicts_class_zero_everywhere() {
        let probe = Probe {
            mean: Array1::zeros(3),
            variance: Array1::ones(3),
            weights: Array2::zeros((4, 3)),
            bias: Array1::zeros(4),
        };
        let features = Array2::from_shape_vec((2, 3), vec![1.0, -2.0, 3.0, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(predict_probe(&probe, &features).unwrap(), vec![0, 0]);

        let narrow = Array2::<f32>::zeros((2, 2));
        assert_eq!(
            predict_probe(&probe, &narrow).unwrap_err(),
            AttackError::DimMismatch {
                expected: 3,
                actual: 2
            }
        );
    }

    #[test]
    fn balanced_accuracy_examples() {
        assert_eq!(balanced_accuracy(&[0, 1, 0, 1], &[0, 1, 0, 1]).unwrap(), 1.0);
        // labels {A,A,B,B}, predictions {A,B,B,B}: recalls 0.5 and 1.0
        assert_eq!(balanced_accuracy(&[0, 1, 1, 1], &[0, 0, 1, 1]).unwrap(), 0.75);
        // all predicted as one class: recalls 1 and 0
        assert_eq!(balanced_accuracy(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.5);

        assert_eq!(
            balanced_accuracy(&[0, 1], &[0, 1, 1]).unwrap_err(),
            AttackError::LengthMismatch { left: 2, right: 3 }
        );
        assert_eq!(
            balanced_accuracy(&[0, 0], &[0, 0]).unwrap_err(),
            AttackError::MissingClass(1)
        );
    }

    #[test]
    fn cosine_distance_examples() {
        assert_eq!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_relative_eq!(
            cosine_distance(&[1.0, 0.0], &[1.0, 1.0]).unwrap(),
            1.0 - 1.0 / 2f64.sqrt(),
            max_relative = 1e-12
        );
        // anti-parallel vectors clamp to 1 under the [0,1] contract
        assert_eq!(cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(
            cosine_distance(&[0.0, 0.0], &[1.0, 0.0]).unwrap_err(),
            AttackError::ZeroVector
        );
        assert_eq!(
            cosine_distance(&[1.0], &[1.0, 2.0]).unwrap_err(),
            AttackError::LengthMismatch { left: 1, right: 2 }
        );
    }

    #[test]
    fn cosine_distance_is_scale_invariant() {
        let u = [0.3f32, -1.2, 4.5, 0.01];
        for alpha in [0.5f32, 1.0, 3.0, 1e3] {
            let scaled: Vec<f32> = u.iter().map(|&x| alpha * x).collect();
            assert!(cosine_distance(&u, &scaled).unwrap() < 1e-7);
        }
    }

    #[test]
    fn frequency_recovery_on_distinct_profiles() {
        // synthetic exact profiles: frequency (p+1)/33 at position p
        let plain: Vec<f64> = (0..32).map(|p| (p + 1) as f64 / 33.0).collect();
        let rot1 = PermutationKey::rotation(1);
        let mut cipher = vec![0f64; 32];
        for (p, &freq) in plain.iter().enumerate() {
            cipher[rot1.map()[p] as usize] = freq;
        }
        let recovered = recover_key_from_frequencies(&plain, &cipher).unwrap();
        assert_eq!(recovered.key, rot1);
        assert!(!recovered.ambiguous);
    }

    #[test]
    fn frequency_recovery_flags_uniform_profiles() {
        let uniform = vec![0.25f64; 32];
        let recovered = recover_key_from_frequencies(&uniform, &uniform).unwrap();
        assert!(recovered.ambiguous);
        assert_eq!(recovered.key, PermutationKey::identity());
    }

    #[test]
    fn frequency_recovery_validates_length() {
        let short = vec![0.5f64; 31];
        assert_eq!(
            recover_key_from_frequencies(&short, &short).unwrap_err(),
            AttackError::ProfileLengthInvalid(31)
        );
    }

    #[test]
    fn reinterpret_zeroes_non_finite_words() {
        let batch = FeatureBatch::new(
            vec![
                Word32::from_f32(1.5),
                Word32::from_bits(0x7FC0_0001), // NaN
                Word32::from_bits(0xFF80_0000), // -inf
                Word32::from_bits(0x0000_0001), // denormal stays
            ],
            2,
            2,
        )
        .unwrap();
        let features = reinterpret_features(&batch).unwrap();
        assert_eq!(features[[0, 0]], 1.5);
        assert_eq!(features[[0, 1]], 0.0);
        assert_eq!(features[[1, 0]], 0.0);
        assert_eq!(features[[1, 1]], f32::from_bits(1));
    }

    // independent oracle: full confusion matrix, recalls off the diagonal
    fn confusion_matrix_balanced_accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
        let classes = labels.iter().copied().max().unwrap_or(0).max(1) + 1;
        let mut matrix = vec![vec![0usize; classes]; classes];
        for (&p, &l) in predictions.iter().zip(labels) {
            if p < classes {
                matrix[l][p] += 1;
            }
        }
        let mut recall_sum = 0.0;
        for (c, row) in matrix.iter().enumerate() {
            let total: usize = row.iter().sum();
            recall_sum += matrix[c][c] as f64 / total as f64;
        }
        recall_sum / classes as f64
    }

    proptest! {
        #[test]
        fn balanced_accuracy_matches_confusion_matrix_oracle(
            pairs in prop::collection::vec((0usize..4, 0usize..4), 4..200),
        ) {
            let predictions: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let mut labels: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let classes = labels.iter().copied().max().unwrap().max(1) + 1;
            // make sure every class is present so the contract holds
            for (c, label) in labels.iter_mut().enumerate().take(classes) {
                *label = c;
            }
            let expected = confusion_matrix_balanced_accuracy(&predictions, &labels);
            let actual = balanced_accuracy(&predictions, &labels).unwrap();
            prop_assert!((actual - expected).abs() < 1e-12);
        }
    }
}
