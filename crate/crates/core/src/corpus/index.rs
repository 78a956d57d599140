use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use super::embed::{cosine, EmbeddingVector, TrigramCounts};
use super::{CorpusError, Recipe};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub recipe_id: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone)]
struct Entry {
    recipe: Recipe,
    counts: TrigramCounts,
    vector: EmbeddingVector,
}

/// Flat exact-search index keyed by recipe id.
#[derive(Debug, Clone, Default)]
pub struct RecipeIndex {
    entries: BTreeMap<String, Entry>,
}

impl RecipeIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_recipes(recipes: impl IntoIterator<Item = Recipe>) -> Result<Self, CorpusError> {
        let mut index = Self::new();
        for r in recipes {
            index.add(r)?;
        }
        Ok(index)
    }

    pub fn add(&mut self, recipe: Recipe) -> Result<(), CorpusError> {
        let recipe = recipe.normalized()?;
        if self.entries.contains_key(&recipe.id) {
            return Err(CorpusError::DuplicateId(recipe.id));
        }
        let counts = TrigramCounts::of(&recipe.retrieval_text());
        let vector = counts.embedding();
        self.entries.insert(recipe.id.clone(), Entry { recipe, counts, vector });
        Ok(())
    }

    pub fn remove(&mut self, id: &str) -> Result<Recipe, CorpusError> {
        self.entries
            .remove(id)
            .map(|e| e.recipe)
            .ok_or_else(|| CorpusError::UnknownId(id.to_string()))
    }

    pub fn get(&self, id: &str) -> Option<&Recipe> {
        self.entries.get(id).map(|e| &e.recipe)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Recipes in ascending id order.
    pub fn recipes(&self) -> impl Iterator<Item = &Recipe> {
        self.entries.values().map(|e| &e.recipe)
    }

    /// Stored vector for `id`.
    pub fn vector(&self, id: &str) -> Option<&EmbeddingVector> {
        self.entries.get(id).map(|e| &e.vector)
    }

    /// Exact top-`k` by cosine similarity; ties go to the smaller recipe id.
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<RetrievalHit> {
        if k == 0 {
            return Vec::new();
        }
        let counts = TrigramCounts::of(query);
        let q = counts.embedding();
        let mut scored: Vec<(&str, Similarity, &Entry)> =
            self.entries.iter().map(|(id, e)| (id.as_str(), Similarity::new(&counts, &e.counts), e)).collect();
        scored.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        scored
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(i, (id, _, e))| RetrievalHit { recipe_id: id.to_string(), score: cosine(&q, &e.vector), rank: i + 1 })
            .collect()
    }
}

/// Cosine against a fixed query, ordered exactly: the query norm is common to
/// every candidate, so comparing `dot^2 / doc_norm_sq` suffices.
#[derive(Debug, Clone, Copy)]
struct Similarity {
    dot: u64,
    doc_norm_sq: u64,
}

impl Similarity {
    fn new(query: &TrigramCounts, doc: &TrigramCounts) -> Self {
        let dot = query.dot(doc);
        Similarity { dot, doc_norm_sq: if dot == 0 { 1 } else { doc.norm_sq() } }
    }
}

impl Ord for Similarity {
    fn cmp(&self, other: &Self) -> Ordering {
        let lhs = u128::from(self.dot) * u128::from(self.dot) * u128::from(other.doc_norm_sq);
        let rhs = u128::from(other.dot) * u128::from(other.dot) * u128::from(self.doc_norm_sq);
        lhs.cmp(&rhs)
    }
}

impl PartialOrd for Similarity {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Similarity {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Similarity {}

/// Index shared between request handlers. Readers never see a half-applied mutation.
#[derive(Debug, Clone, Default)]
pub struct SharedIndex(Arc<RwLock<RecipeIndex>>);

impl SharedIndex {
    pub fn new(index: RecipeIndex) -> Self {
        SharedIndex(Arc::new(RwLock::new(index)))
    }

    pub fn read<T>(&self, f: impl FnOnce(&RecipeIndex) -> T) -> T {
        f(&self.0.read().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn write<T>(&self, f: impl FnOnce(&mut RecipeIndex) -> T) -> T {
        f(&mut self.0.write().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn retrieve(&self, query: &str, k: usize) -> Vec<RetrievalHit> {
        self.read(|idx| idx.retrieve(query, k))
    }

    /// Swaps the whole corpus in one step.
    pub fn replace(&self, index: RecipeIndex) {
        self.write(|idx| *idx = index);
    }
}
