//! Pairwise similarity primitives over embeddings and annotations.

use std::collections::BTreeMap;

use crate::bits::BinaryCode;
use crate::Result;

/// Bit i is set iff `dense[i] >= 0`.
pub fn binarize(dense: &[f64]) -> BinaryCode {
    BinaryCode::from_bits(dense.iter().map(|&v| v >= 0.0))
}

/// Keeps the k largest strictly positive values; ties go to the lower index.
pub fn sparsify(dense: &[f64], k: usize) -> BTreeMap<u32, f64> {
    let mut entries: Vec<(u32, f64)> = dense
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v > 0.0)
        .map(|(i, &v)| (i as u32, v))
        .collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    entries.truncate(k);
    entries.into_iter().collect()
}

/// `1 - hamming_distance / n_bits`, in [0,1]. Errors on length mismatch.
pub fn hamming_similarity(a: &BinaryCode, b: &BinaryCode) -> Result<f64> {
    let dist = a.hamming_distance(b)?;
    if a.len() == 0 {
        return Ok(1.0);
    }
    Ok(1.0 - dist as f64 / a.len() as f64)
}

/// Cosine similarity of sparse non-negative vectors; 0 when either norm is 0.
pub fn cosine_similarity(a: &BTreeMap<u32, f64>, b: &BTreeMap<u32, f64>) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let dot: f64 = small
        .iter()
        .filter_map(|(i, &v)| large.get(i).map(|&w| v * w))
        .sum();
    let norm_sq_a: f64 = a.values().map(|v| v * v).sum();
    let norm_sq_b: f64 = b.values().map(|v| v * v).sum();
    if norm_sq_a == 0.0 || norm_sq_b == 0.0 {
        return 0.0;
    }
    // sqrt of the product keeps self-similarity exactly 1
    dot / (norm_sq_a * norm_sq_b).sqrt()
}

/// Cosine similarity of dense vectors; 0 when lengths differ or a norm is 0.
pub fn dense_cosine(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm_sq_a: f64 = a.iter().map(|v| v * v).sum();
    let norm_sq_b: f64 = b.iter().map(|v| v * v).sum();
    if norm_sq_a == 0.0 || norm_sq_b == 0.0 {
        return 0.0;
    }
    dot / (norm_sq_a * norm_sq_b).sqrt()
}

/// Weighted Jaccard over token count maps: sum of min counts over sum of
/// max counts. 0 when both maps are empty.
pub fn annotation_similarity(a: &BTreeMap<String, u32>, b: &BTreeMap<String, u32>) -> f64 {
    let mut min_sum = 0u64;
    let mut max_sum = 0u64;
    for (token, &count_a) in a {
        let count_b = b.get(token).copied().unwrap_or(0);
        min_sum += count_a.min(count_b) as u64;
        max_sum += count_a.max(count_b) as u64;
    }
    for (token, &count_b) in b {
        if !a.contains_key(token) {
            max_sum += count_b as u64;
        }
    }
    if max_sum == 0 {
        return 0.0;
    }
    min_sum as f64 / max_sum as f64
}
