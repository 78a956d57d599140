//! Recipe-versus-inventory reconciliation.
//!
//! [`diff`] compares each requirement of a recipe with the current snapshot and
//! reports typed anomalies. Each anomaly renders to a [`UserPrompt`]; answers
//! (or, unattended, the substitution rule table) are folded back into a working
//! copy of the recipe until nothing is outstanding.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{cosine, embed, normalize_text, IngredientReq, Recipe};
use crate::perception::{InventoryItem, InventorySnapshot};

pub const ABORT: &str = "abort";
pub const REDUCE_TO_AVAILABLE: &str = "reduce-to-available";
pub const CONFIRM: &str = "confirm";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnomalyKind {
    MissingIngredient,
    InsufficientQuantity,
    UnreadableLabel,
    AmbiguousMatch,
}

impl AnomalyKind {
    fn slug(self) -> &'static str {
        match self {
            AnomalyKind::MissingIngredient => "missing",
            AnomalyKind::InsufficientQuantity => "insufficient",
            AnomalyKind::UnreadableLabel => "unreadable",
            AnomalyKind::AmbiguousMatch => "ambiguous",
        }
    }
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    /// `<kind>:<label>`; stable across repeated diffs of the same recipe.
    pub anomaly_id: String,
    pub kind: AnomalyKind,
    pub subject_label: String,
    pub required_ml: f64,
    /// Volume of the item the requirement matched, when one matched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub available_ml: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<String>,
    pub suggestions: Vec<String>,
}

impl Anomaly {
    fn new(kind: AnomalyKind, req: &IngredientReq) -> Self {
        Anomaly {
            anomaly_id: format!("{}:{}", kind.slug(), req.label),
            kind,
            subject_label: req.label.clone(),
            required_ml: req.quantity_ml,
            available_ml: None,
            item_id: None,
            suggestions: Vec::new(),
        }
    }

    fn with_item(mut self, item: &InventoryItem) -> Self {
        self.available_ml = Some(item.available_ml);
        self.item_id = Some(item.item_id.clone());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionRule {
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Error)]
pub enum RuleTableError {
    #[error("rule {index}: from and to are both {label:?}")]
    SelfSubstitution { index: usize, label: String },
    #[error("rule {index}: empty label")]
    EmptyLabel { index: usize },
    #[error("{0}")]
    Parse(#[from] serde_json::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Ordered substitution rules; earlier rules win in unattended mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleTable(Vec<SubstitutionRule>);

impl Default for RuleTable {
    fn default() -> Self {
        RuleTable(vec![SubstitutionRule {
            from: "sugar".into(),
            to: "honey".into(),
            note: "honey sweetens at a similar ratio".into(),
        }])
    }
}

impl RuleTable {
    pub fn empty() -> Self {
        RuleTable(Vec::new())
    }

    pub fn new(rules: Vec<SubstitutionRule>) -> Result<Self, RuleTableError> {
        let mut out = Vec::with_capacity(rules.len());
        for (index, mut r) in rules.into_iter().enumerate() {
            r.from = normalize_text(&r.from);
            r.to = normalize_text(&r.to);
            if r.from.is_empty() || r.to.is_empty() {
                return Err(RuleTableError::EmptyLabel { index });
            }
            if r.from == r.to {
                return Err(RuleTableError::SelfSubstitution { index, label: r.from });
            }
            out.push(r);
        }
        Ok(RuleTable(out))
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, RuleTableError> {
        Self::new(serde_json::from_slice(bytes)?)
    }

    pub fn load(path: &Path) -> Result<Self, RuleTableError> {
        Self::from_json(&std::fs::read(path)?)
    }

    pub fn rules(&self) -> &[SubstitutionRule] {
        &self.0
    }

    /// Targets for `label`, in table order, without repeats.
    pub fn targets<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        let mut seen = BTreeSet::new();
        self.0
            .iter()
            .filter(move |r| r.from == label)
            .map(|r| r.to.as_str())
            .filter(move |t| seen.insert(*t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconcileConfig {
    /// Minimum embedding cosine for a snapshot label to be offered as a near match.
    pub suggestion_threshold: f64,
}

impl Default for ReconcileConfig {
    fn default() -> Self {
        ReconcileConfig { suggestion_threshold: 0.6 }
    }
}

/// Largest volume first, then smallest item id.
fn best_item<'a>(items: impl Iterator<Item = &'a InventoryItem>) -> Option<&'a InventoryItem> {
    items.min_by(|a, b| b.available_ml.total_cmp(&a.available_ml).then_with(|| a.item_id.cmp(&b.item_id)))
}

fn tokens(label: &str) -> BTreeSet<&str> {
    label.split(' ').filter(|t| !t.is_empty()).collect()
}

/// Anomalies of `recipe` against `snapshot`, in ingredient order.
pub fn diff(recipe: &Recipe, snapshot: &InventorySnapshot, rules: &RuleTable, config: &ReconcileConfig) -> Vec<Anomaly> {
    diff_requirements(&recipe.ingredients, snapshot, rules, config, &BTreeSet::new())
}

/// `accepted_unreadable` holds labels the user confirmed may be served from an
/// item whose label could not be read.
pub fn diff_requirements(
    requirements: &[IngredientReq],
    snapshot: &InventorySnapshot,
    rules: &RuleTable,
    config: &ReconcileConfig,
    accepted_unreadable: &BTreeSet<String>,
) -> Vec<Anomaly> {
    let recipe_labels: BTreeSet<&str> = requirements.iter().map(|r| r.label.as_str()).collect();
    let mut out = Vec::new();
    for req in requirements {
        let label = req.label.as_str();
        let readable = best_item(snapshot.items.iter().filter(|i| i.readable && i.label == label));
        let unreadable = best_item(snapshot.items.iter().filter(|i| !i.readable && i.label == label));

        let matched = match (readable, unreadable) {
            (Some(item), _) => Some(item),
            (None, Some(item)) if accepted_unreadable.contains(label) => Some(item),
            (None, Some(item)) => {
                let mut a = Anomaly::new(AnomalyKind::UnreadableLabel, req).with_item(item);
                a.suggestions = substitutes(req, snapshot, rules, config, &recipe_labels);
                out.push(a);
                continue;
            }
            (None, None) => None,
        };

        if let Some(item) = matched {
            if item.available_ml < req.quantity_ml {
                out.push(Anomaly::new(AnomalyKind::InsufficientQuantity, req).with_item(item));
            }
            continue;
        }

        let want = tokens(label);
        let partial: BTreeSet<&str> = snapshot
            .items
            .iter()
            .filter(|i| i.readable && !recipe_labels.contains(i.label.as_str()))
            .filter(|i| {
                let have = tokens(&i.label);
                !have.is_empty() && (have.is_subset(&want) || want.is_subset(&have))
            })
            .map(|i| i.label.as_str())
            .collect();
        if !partial.is_empty() {
            let mut a = Anomaly::new(AnomalyKind::AmbiguousMatch, req);
            a.suggestions = partial.into_iter().map(String::from).collect();
            out.push(a);
            continue;
        }

        let mut a = Anomaly::new(AnomalyKind::MissingIngredient, req);
        a.suggestions = substitutes(req, snapshot, rules, config, &recipe_labels);
        out.push(a);
    }
    out
}

/// Rule targets first, then snapshot labels whose embedding is close enough.
fn substitutes(
    req: &IngredientReq,
    snapshot: &InventorySnapshot,
    rules: &RuleTable,
    config: &ReconcileConfig,
    recipe_labels: &BTreeSet<&str>,
) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let allowed = |l: &str, out: &Vec<String>| !recipe_labels.contains(l) && !out.iter().any(|o| o == l);
    for target in rules.targets(&req.label) {
        if allowed(target, &out) {
            out.push(target.to_string());
        }
    }
    let query = embed(&req.label);
    let mut near: Vec<(f64, &str)> = snapshot
        .items
        .iter()
        .filter(|i| i.readable)
        .map(|i| (cosine(&query, &embed(&i.label)), i.label.as_str()))
        .filter(|(score, _)| *score >= config.suggestion_threshold)
        .collect();
    near.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    for (_, label) in near {
        if allowed(label, &out) {
            out.push(label.to_string());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserPrompt {
    pub anomaly_id: String,
    pub text: String,
    pub options: Vec<String>,
}

fn capitalized(label: &str) -> String {
    let mut chars = label.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn or_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} or {}", init.join(", "), last),
    }
}

pub fn format_ml(ml: f64) -> String {
    if (ml - ml.round()).abs() < 1e-9 {
        format!("{}", ml.round())
    } else {
        format!("{ml:.1}")
    }
}

/// Deterministic prompt text for an anomaly. The options always end with `abort`.
pub fn propose_prompt(anomaly: &Anomaly) -> UserPrompt {
    let label = &anomaly.subject_label;
    let sugg = &anomaly.suggestions;
    let (text, mut options) = match anomaly.kind {
        AnomalyKind::MissingIngredient if sugg.is_empty() => {
            (format!("{} is missing and I know no substitute.", capitalized(label)), vec![])
        }
        AnomalyKind::MissingIngredient => (
            format!("{} is missing. Would you like to use {}?", capitalized(label), or_list(sugg)),
            sugg.clone(),
        ),
        AnomalyKind::InsufficientQuantity => {
            let available = anomaly.available_ml.unwrap_or(0.0);
            let text = format!(
                "Only {} ml of {} is left but the recipe needs {} ml. Should I pour {} ml instead?",
                format_ml(available),
                label,
                format_ml(anomaly.required_ml),
                format_ml(available)
            );
            let options = if available > 0.0 { vec![REDUCE_TO_AVAILABLE.to_string()] } else { vec![] };
            (text, options)
        }
        AnomalyKind::UnreadableLabel => {
            let mut text = format!("I cannot read the label on the {label}. Should I use it anyway?");
            if !sugg.is_empty() {
                text.push_str(&format!(" I could also use {}.", or_list(sugg)));
            }
            let mut options = vec![CONFIRM.to_string()];
            options.extend(sugg.iter().cloned());
            (text, options)
        }
        AnomalyKind::AmbiguousMatch => (
            format!("I could not find {label} exactly. Did you mean {}?", or_list(sugg)),
            sugg.clone(),
        ),
    };
    options.push(ABORT.to_string());
    UserPrompt { anomaly_id: anomaly.anomaly_id.clone(), text, options }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubstitutionSource {
    User,
    Rule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedSubstitution {
    pub from: String,
    pub to: String,
    pub source: SubstitutionSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantityAdjustment {
    pub label: String,
    pub from_ml: f64,
    pub to_ml: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    /// Label as written in the recipe, before any substitution.
    pub recipe_label: String,
    pub requirement: IngredientReq,
    pub item: InventoryItem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRecipe {
    pub recipe_id: String,
    pub recipe_name: String,
    pub bindings: Vec<Binding>,
    pub applied_substitutions: Vec<AppliedSubstitution>,
    pub quantity_adjustments: Vec<QuantityAdjustment>,
}

impl ResolvedRecipe {
    /// Re-diffs the bound requirements; empty when the resolution still holds.
    pub fn verify(&self, snapshot: &InventorySnapshot, rules: &RuleTable, config: &ReconcileConfig) -> Vec<Anomaly> {
        let reqs: Vec<IngredientReq> = self.bindings.iter().map(|b| b.requirement.clone()).collect();
        let accepted = self.bindings.iter().filter(|b| !b.item.readable).map(|b| b.requirement.label.clone()).collect();
        diff_requirements(&reqs, snapshot, rules, config, &accepted)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ReconcileError {
    #[error("no outstanding anomaly {0:?}")]
    UnknownAnomalyId(String),
    #[error("{choice:?} is not an option for anomaly {anomaly_id:?}")]
    IllegalOption { anomaly_id: String, choice: String },
    #[error("anomaly {anomaly_id:?} cannot be resolved without an answer")]
    Unresolvable { anomaly_id: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Resolution {
    Resolved(ResolvedRecipe),
    Aborted,
    /// Answers were applied but new or remaining anomalies need more input.
    Pending(Vec<Anomaly>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WorkingReq {
    recipe_label: String,
    req: IngredientReq,
    /// Every label this requirement has carried, oldest first.
    visited: Vec<String>,
}

/// Working copy of a recipe while anomalies are being resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconciler {
    recipe_id: String,
    recipe_name: String,
    working: Vec<WorkingReq>,
    substitutions: Vec<AppliedSubstitution>,
    adjustments: Vec<QuantityAdjustment>,
    accepted_unreadable: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerEffect {
    Applied,
    Aborted,
}

impl Reconciler {
    pub fn new(recipe: &Recipe) -> Self {
        Reconciler {
            recipe_id: recipe.id.clone(),
            recipe_name: recipe.name.clone(),
            working: recipe
                .ingredients
                .iter()
                .map(|r| WorkingReq { recipe_label: r.label.clone(), req: r.clone(), visited: vec![r.label.clone()] })
                .collect(),
            substitutions: Vec::new(),
            adjustments: Vec::new(),
            accepted_unreadable: BTreeSet::new(),
        }
    }

    pub fn requirements(&self) -> Vec<IngredientReq> {
        self.working.iter().map(|w| w.req.clone()).collect()
    }

    pub fn substitutions(&self) -> &[AppliedSubstitution] {
        &self.substitutions
    }

    /// Current anomalies. Suggestions that would send a requirement back to a
    /// label it already carried are dropped.
    pub fn anomalies(&self, snapshot: &InventorySnapshot, rules: &RuleTable, config: &ReconcileConfig) -> Vec<Anomaly> {
        let mut anomalies = diff_requirements(&self.requirements(), snapshot, rules, config, &self.accepted_unreadable);
        for a in &mut anomalies {
            if let Some(w) = self.working.iter().find(|w| w.req.label == a.subject_label) {
                a.suggestions.retain(|s| !w.visited.contains(s));
            }
        }
        anomalies
    }

    fn slot(&mut self, label: &str) -> &mut WorkingReq {
        self.working.iter_mut().find(|w| w.req.label == label).expect("anomaly subject is a working requirement")
    }

    fn substitute(&mut self, label: &str, to: &str, source: SubstitutionSource) {
        let slot = self.slot(label);
        slot.req.label = to.to_string();
        slot.visited.push(to.to_string());
        self.substitutions.push(AppliedSubstitution { from: label.to_string(), to: to.to_string(), source });
    }

    fn reduce(&mut self, label: &str, to_ml: f64) {
        let slot = self.slot(label);
        let from_ml = slot.req.quantity_ml;
        slot.req.quantity_ml = to_ml;
        self.adjustments.push(QuantityAdjustment { label: label.to_string(), from_ml, to_ml });
    }

    /// Applies the user's choice for one of the anomalies currently outstanding.
    pub fn apply_answer(&mut self, anomaly: &Anomaly, choice: &str) -> Result<AnswerEffect, ReconcileError> {
        let prompt = propose_prompt(anomaly);
        if !prompt.options.iter().any(|o| o == choice) {
            return Err(ReconcileError::IllegalOption { anomaly_id: anomaly.anomaly_id.clone(), choice: choice.to_string() });
        }
        match choice {
            ABORT => return Ok(AnswerEffect::Aborted),
            REDUCE_TO_AVAILABLE => self.reduce(&anomaly.subject_label, anomaly.available_ml.unwrap_or(0.0)),
            CONFIRM => {
                self.accepted_unreadable.insert(anomaly.subject_label.clone());
            }
            label => self.substitute(&anomaly.subject_label, label, SubstitutionSource::User),
        }
        Ok(AnswerEffect::Applied)
    }

    /// Unattended fallback for every anomaly: the first rule whose target is on
    /// the table, or reducing to what is available.
    pub fn apply_rules(
        &mut self,
        anomalies: &[Anomaly],
        snapshot: &InventorySnapshot,
        rules: &RuleTable,
    ) -> Result<(), ReconcileError> {
        for a in anomalies {
            let unresolvable = || ReconcileError::Unresolvable { anomaly_id: a.anomaly_id.clone() };
            match a.kind {
                AnomalyKind::MissingIngredient | AnomalyKind::UnreadableLabel => {
                    let taken: BTreeSet<String> = self.working.iter().map(|w| w.req.label.clone()).collect();
                    let visited = self.working.iter().find(|w| w.req.label == a.subject_label).map(|w| w.visited.clone());
                    let visited = visited.unwrap_or_default();
                    let target = rules
                        .targets(&a.subject_label)
                        .find(|t| {
                            !visited.iter().any(|v| v == t)
                                && !taken.contains(*t)
                                && snapshot.items.iter().any(|i| i.readable && i.label == *t)
                        })
                        .map(String::from)
                        .ok_or_else(unresolvable)?;
                    self.substitute(&a.subject_label, &target, SubstitutionSource::Rule);
                }
                AnomalyKind::InsufficientQuantity => match a.available_ml {
                    Some(available) if available > 0.0 => self.reduce(&a.subject_label, available),
                    _ => return Err(unresolvable()),
                },
                AnomalyKind::AmbiguousMatch => return Err(unresolvable()),
            }
        }
        Ok(())
    }

    /// Binds every requirement to its inventory item, or returns what is still outstanding.
    pub fn finish(
        &self,
        snapshot: &InventorySnapshot,
        rules: &RuleTable,
        config: &ReconcileConfig,
    ) -> Result<ResolvedRecipe, Vec<Anomaly>> {
        let outstanding = self.anomalies(snapshot, rules, config);
        if !outstanding.is_empty() {
            return Err(outstanding);
        }
        let bindings = self
            .working
            .iter()
            .map(|w| {
                let label = w.req.label.as_str();
                let item = best_item(snapshot.items.iter().filter(|i| i.readable && i.label == label))
                    .or_else(|| best_item(snapshot.items.iter().filter(|i| !i.readable && i.label == label)))
                    .expect("requirement without anomalies has a matching item");
                Binding { recipe_label: w.recipe_label.clone(), requirement: w.req.clone(), item: item.clone() }
            })
            .collect();
        Ok(ResolvedRecipe {
            recipe_id: self.recipe_id.clone(),
            recipe_name: self.recipe_name.clone(),
            bindings,
            applied_substitutions: self.substitutions.clone(),
            quantity_adjustments: self.adjustments.clone(),
        })
    }
}

/// Applies `answers` (anomaly id to choice) and, when `unattended`, the rule
/// table, re-diffing after every pass.
pub fn resolve(
    recipe: &Recipe,
    snapshot: &InventorySnapshot,
    anomalies: &[Anomaly],
    answers: &BTreeMap<String, String>,
    unattended: bool,
    rules: &RuleTable,
    config: &ReconcileConfig,
) -> Result<Resolution, ReconcileError> {
    let mut rec = Reconciler::new(recipe);
    for (id, choice) in answers {
        let anomaly = anomalies.iter().find(|a| &a.anomaly_id == id).ok_or_else(|| ReconcileError::UnknownAnomalyId(id.clone()))?;
        if rec.apply_answer(anomaly, choice)? == AnswerEffect::Aborted {
            return Ok(Resolution::Aborted);
        }
    }
    // One pass can substitute every requirement; a second may then reduce the
    // substitutes' quantities. Chains of rules take one pass per hop.
    let max_passes = recipe.ingredients.len() + 1;
    for _ in 0..=max_passes {
        match rec.finish(snapshot, rules, config) {
            Ok(resolved) => return Ok(Resolution::Resolved(resolved)),
            Err(outstanding) if !unattended => return Ok(Resolution::Pending(outstanding)),
            Err(outstanding) => rec.apply_rules(&outstanding, snapshot, rules)?,
        }
    }
    let leftover = rec.anomalies(snapshot, rules, config);
    Err(ReconcileError::Unresolvable { anomaly_id: leftover.first().map(|a| a.anomaly_id.clone()).unwrap_or_default() })
}
