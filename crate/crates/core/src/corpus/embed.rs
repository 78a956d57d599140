use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use super::text::normalize_text;

/// Number of hash buckets in every embedding.
pub const EMBEDDING_DIMS: usize = 256;

/// Hashed character-trigram embedding. Either unit length or all zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn zero() -> Self {
        EmbeddingVector(vec![0.0; EMBEDDING_DIMS])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    /// Multiplies every component; used to check that rankings only depend on direction.
    pub fn scaled(&self, factor: f64) -> Self {
        EmbeddingVector(self.0.iter().map(|v| v * factor).collect())
    }
}

/// Bucket of a trigram: 64-bit FNV-1a over its UTF-8 bytes, modulo the dimension.
pub fn trigram_bucket(trigram: &str) -> usize {
    let mut hasher = FnvHasher::default();
    hasher.write(trigram.as_bytes());
    (hasher.finish() % EMBEDDING_DIMS as u64) as usize
}

/// Character trigrams of the normalized text, in order of occurrence.
pub fn trigrams(text: &str) -> Vec<String> {
    let chars: Vec<char> = normalize_text(text).chars().collect();
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

/// Unnormalized bucket counts. Integer arithmetic on these ranks exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrigramCounts(Vec<u32>);

impl TrigramCounts {
    pub fn of(text: &str) -> Self {
        let mut counts = vec![0u32; EMBEDDING_DIMS];
        for tri in trigrams(text) {
            counts[trigram_bucket(&tri)] += 1;
        }
        TrigramCounts(counts)
    }

    pub fn dot(&self, other: &TrigramCounts) -> u64 {
        self.0.iter().zip(&other.0).map(|(a, b)| u64::from(*a) * u64::from(*b)).sum()
    }

    pub fn norm_sq(&self) -> u64 {
        self.dot(self)
    }

    pub fn embedding(&self) -> EmbeddingVector {
        let norm = (self.norm_sq() as f64).sqrt();
        if norm == 0.0 {
            return EmbeddingVector::zero();
        }
        EmbeddingVector(self.0.iter().map(|c| f64::from(*c) / norm).collect())
    }
}

pub fn embed(text: &str) -> EmbeddingVector {
    TrigramCounts::of(text).embedding()
}

/// Cosine similarity; zero when either side is the zero vector.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}
