//! Recipe storage and exact nearest-neighbour retrieval.
//!
//! Recipes are embedded as hashed character trigrams of their name followed by
//! their ingredient labels. Search is an exact scan over all stored vectors.

mod embed;
mod index;
mod text;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{cosine, embed, trigram_bucket, trigrams, EmbeddingVector, TrigramCounts, EMBEDDING_DIMS};
pub use index::{RecipeIndex, RetrievalHit, SharedIndex};
pub use text::normalize_text;

pub const MIN_DENSITY: f64 = 0.1;
pub const MAX_DENSITY: f64 = 2.0;

fn default_density() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngredientReq {
    pub label: String,
    pub quantity_ml: f64,
    #[serde(default = "default_density")]
    pub density_g_per_ml: f64,
}

impl IngredientReq {
    pub fn new(label: &str, quantity_ml: f64) -> Self {
        IngredientReq { label: normalize_text(label), quantity_ml, density_g_per_ml: 1.0 }
    }

    pub fn with_density(mut self, density_g_per_ml: f64) -> Self {
        self.density_g_per_ml = density_g_per_ml;
        self
    }

    pub fn mass_g(&self) -> f64 {
        self.quantity_ml * self.density_g_per_ml
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub id: String,
    pub name: String,
    pub ingredients: Vec<IngredientReq>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

#[derive(Debug, Error, PartialEq)]
pub enum RecipeError {
    #[error("recipe id must not be empty")]
    EmptyId,
    #[error("recipe {0} has no ingredients")]
    NoIngredients(String),
    #[error("recipe {id}: duplicate ingredient label {label:?}")]
    DuplicateLabel { id: String, label: String },
    #[error("recipe {id}: ingredient {label:?} has an empty label")]
    EmptyLabel { id: String, label: String },
    #[error("recipe {id}: quantity of {label:?} must be positive, got {quantity_ml}")]
    NonPositiveQuantity { id: String, label: String, quantity_ml: f64 },
    #[error("recipe {id}: density of {label:?} must lie in [0.1, 2.0], got {density}")]
    DensityOutOfRange { id: String, label: String, density: f64 },
}

impl Recipe {
    /// Validates the recipe and rewrites ingredient labels into normalized form.
    pub fn normalized(mut self) -> Result<Self, RecipeError> {
        if self.id.trim().is_empty() {
            return Err(RecipeError::EmptyId);
        }
        if self.ingredients.is_empty() {
            return Err(RecipeError::NoIngredients(self.id));
        }
        let mut seen = BTreeSet::new();
        for ing in &mut self.ingredients {
            let raw = std::mem::take(&mut ing.label);
            ing.label = normalize_text(&raw);
            if ing.label.is_empty() {
                return Err(RecipeError::EmptyLabel { id: self.id.clone(), label: raw });
            }
            if !ing.quantity_ml.is_finite() || ing.quantity_ml <= 0.0 {
                return Err(RecipeError::NonPositiveQuantity {
                    id: self.id.clone(),
                    label: ing.label.clone(),
                    quantity_ml: ing.quantity_ml,
                });
            }
            if !(MIN_DENSITY..=MAX_DENSITY).contains(&ing.density_g_per_ml) {
                return Err(RecipeError::DensityOutOfRange {
                    id: self.id.clone(),
                    label: ing.label.clone(),
                    density: ing.density_g_per_ml,
                });
            }
            if !seen.insert(ing.label.clone()) {
                return Err(RecipeError::DuplicateLabel { id: self.id.clone(), label: ing.label.clone() });
            }
        }
        Ok(self)
    }

    /// Text that represents the recipe in the vector index.
    pub fn retrieval_text(&self) -> String {
        let mut text = self.name.clone();
        for ing in &self.ingredients {
            text.push(' ');
            text.push_str(&ing.label);
        }
        text
    }

    pub fn ingredient(&self, label: &str) -> Option<&IngredientReq> {
        self.ingredients.iter().find(|i| i.label == label)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("recipe {0:?} is already indexed")]
    DuplicateId(String),
    #[error("no recipe with id {0:?}")]
    UnknownId(String),
    #[error(transparent)]
    InvalidRecipe(#[from] RecipeError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{path}: file name does not match recipe id {id:?}")]
    FileNameMismatch { path: PathBuf, id: String },
}

pub fn parse_recipe(bytes: &[u8]) -> Result<Recipe, serde_json::Error> {
    serde_json::from_slice(bytes)
}

/// Loads every `*.json` file in `dir`, sorted by file name. Each file holds one
/// recipe whose id must equal the file stem.
pub fn load_dir(dir: &Path) -> Result<Vec<Recipe>, CorpusError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusError::Io { path, source }
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();

    let mut recipes = Vec::with_capacity(paths.len());
    for path in paths {
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let recipe = parse_recipe(&bytes).map_err(|source| CorpusError::Parse { path: path.clone(), source })?;
        if path.file_stem().and_then(|s| s.to_str()) != Some(recipe.id.as_str()) {
            return Err(CorpusError::FileNameMismatch { path, id: recipe.id });
        }
        recipes.push(recipe.normalized()?);
    }
    Ok(recipes)
}

/// Writes `recipe` as `<dir>/<id>.json`.
pub fn save_recipe(dir: &Path, recipe: &Recipe) -> Result<PathBuf, CorpusError> {
    let path = dir.join(format!("{}.json", recipe.id));
    let body = serde_json::to_vec_pretty(recipe).expect("recipe serializes");
    fs::write(&path, body).map_err(|source| CorpusError::Io { path: path.clone(), source })?;
    Ok(path)
}

const BUILTIN_RECIPES: &str = include_str!("../../data/recipes.json");

/// The bundled house corpus.
pub fn builtin_recipes() -> Vec<Recipe> {
    let raw: Vec<Recipe> = serde_json::from_str(BUILTIN_RECIPES).expect("bundled recipes parse");
    raw.into_iter().map(|r| r.normalized().expect("bundled recipes are valid")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recipe(id: &str, ingredients: Vec<IngredientReq>) -> Recipe {
        Recipe { id: id.into(), name: id.into(), ingredients, notes: None }
    }

    #[test]
    fn normalizes_labels() {
        let r = recipe("x", vec![IngredientReq { label: "  Lime JUICE!".into(), quantity_ml: 10.0, density_g_per_ml: 1.0 }])
            .normalized()
            .unwrap();
        assert_eq!(r.ingredients[0].label, "lime juice");
    }

    #[test]
    fn rejects_invariant_violations() {
        assert_eq!(recipe("x", vec![]).normalized(), Err(RecipeError::NoIngredients("x".into())));
        let dup = recipe("x", vec![IngredientReq::new("Gin", 10.0), IngredientReq::new("gin!", 5.0)]);
        assert!(matches!(dup.normalized(), Err(RecipeError::DuplicateLabel { .. })));
        let zero = recipe("x", vec![IngredientReq::new("gin", 0.0)]);
        assert!(matches!(zero.normalized(), Err(RecipeError::NonPositiveQuantity { .. })));
        let nan = recipe("x", vec![IngredientReq::new("gin", f64::NAN)]);
        assert!(matches!(nan.normalized(), Err(RecipeError::NonPositiveQuantity { .. })));
        let dense = recipe("x", vec![IngredientReq::new("gin", 10.0).with_density(2.5)]);
        assert!(matches!(dense.normalized(), Err(RecipeError::DensityOutOfRange { .. })));
        let blank = recipe("x", vec![IngredientReq { label: "?!".into(), quantity_ml: 1.0, density_g_per_ml: 1.0 }]);
        assert!(matches!(blank.normalized(), Err(RecipeError::EmptyLabel { .. })));
        assert_eq!(recipe(" ", vec![IngredientReq::new("gin", 1.0)]).normalized(), Err(RecipeError::EmptyId));
    }

    #[test]
    fn density_defaults_to_water() {
        let r: Recipe = serde_json::from_str(r#"{"id":"a","name":"A","ingredients":[{"label":"gin","quantity_ml":5}]}"#).unwrap();
        assert_eq!(r.ingredients[0].density_g_per_ml, 1.0);
        assert_eq!(r.notes, None);
    }

    #[test]
    fn builtin_corpus_is_valid_and_unique() {
        let recipes = builtin_recipes();
        assert!(recipes.len() >= 20);
        let ids: BTreeSet<_> = recipes.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids.len(), recipes.len());
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for r in builtin_recipes().iter().take(3) {
            save_recipe(dir.path(), r).unwrap();
        }
        let loaded = load_dir(dir.path()).unwrap();
        let mut expected: Vec<_> = builtin_recipes().into_iter().take(3).collect();
        expected.sort_by(|a, b| a.id.cmp(&b.id));
        assert_eq!(loaded, expected);
    }

    #[test]
    fn directory_rejects_mismatched_file_name() {
        let dir = tempfile::tempdir().unwrap();
        let r = &builtin_recipes()[0];
        fs::write(dir.path().join("other.json"), serde_json::to_vec(r).unwrap()).unwrap();
        assert!(matches!(load_dir(dir.path()), Err(CorpusError::FileNameMismatch { .. })));
    }
}
