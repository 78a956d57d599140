//! Action programs over the five-call robot API and their static checks.

use std::collections::BTreeMap;
use std::fmt;
use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perception::InventorySnapshot;
use crate::reconcile::{AppliedSubstitution, ResolvedRecipe};

/// Default relative pour tolerance (±1 % of the target mass).
pub const DEFAULT_TOLERANCE: f64 = 0.01;
pub const MAX_TOLERANCE: f64 = 0.1;
const BUDGET_SLACK_G: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    TakeGlass,
    TakeBottle { label: String, item_id: String, pose: [f64; 3] },
    LeftBottle { label: String },
    PourLiquid { target_mass_g: f64, tolerance: f64 },
    GiveUser,
}

impl Action {
    pub fn op_name(&self) -> &'static str {
        match self {
            Action::TakeGlass => "take_glass",
            Action::TakeBottle { .. } => "take_bottle",
            Action::LeftBottle { .. } => "left_bottle",
            Action::PourLiquid { .. } => "pour_liquid",
            Action::GiveUser => "give_user",
        }
    }
}

/// What the compiler knew about a bottle when it emitted the program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleBudget {
    pub label: String,
    pub available_ml: f64,
    pub density_g_per_ml: f64,
}

impl BottleBudget {
    pub fn available_mass_g(&self) -> f64 {
        self.available_ml * self.density_g_per_ml
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionProgram {
    pub program_id: String,
    pub recipe_id: String,
    pub actions: Vec<Action>,
    #[serde(default)]
    pub provenance: Vec<AppliedSubstitution>,
    /// Keyed by item id.
    #[serde(default)]
    pub bottles: BTreeMap<String, BottleBudget>,
}

impl ActionProgram {
    pub fn pour_targets(&self) -> impl Iterator<Item = f64> + '_ {
        self.actions.iter().filter_map(|a| match a {
            Action::PourLiquid { target_mass_g, .. } => Some(*target_mass_g),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    /// First action is `take_glass`, and there is exactly one.
    V1,
    /// Last action is `give_user`, and there is exactly one.
    V2,
    /// `take_bottle` only with an empty bottle hand.
    V3,
    /// `left_bottle` names the bottle currently held.
    V4,
    /// `pour_liquid` only while a bottle is held.
    V5,
    /// Nothing in the bottle hand at `give_user`.
    V6,
    /// Poured mass per bottle stays within what it holds.
    V7,
    /// Every `take_bottle` is put back.
    V8,
    /// Action arguments out of range.
    Params,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    /// Offending action, when the violation is tied to one.
    pub index: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{} at action {}: {}", self.rule, i, self.message),
            None => write!(f, "{}: {}", self.rule, self.message),
        }
    }
}

/// Runs every check and returns the violations ordered by rule, then position.
pub fn validate(program: &ActionProgram) -> Result<(), Vec<Violation>> {
    let actions = &program.actions;
    let mut out = Vec::new();
    let mut flag = |rule, index, message: String| out.push(Violation { rule, index, message });

    if !matches!(actions.first(), Some(Action::TakeGlass)) {
        flag(Rule::V1, actions.first().map(|_| 0), "program must start with take_glass".into());
    }
    if !matches!(actions.last(), Some(Action::GiveUser)) {
        flag(Rule::V2, actions.len().checked_sub(1), "program must end with give_user".into());
    }
    for (i, a) in actions.iter().enumerate() {
        match a {
            Action::TakeGlass if i != 0 => flag(Rule::V1, Some(i), "extra take_glass".into()),
            Action::GiveUser if i + 1 != actions.len() => flag(Rule::V2, Some(i), "extra give_user".into()),
            _ => {}
        }
    }

    let mut held: Option<(&str, &str)> = None;
    let mut poured: BTreeMap<&str, f64> = BTreeMap::new();
    for (i, a) in actions.iter().enumerate() {
        match a {
            Action::TakeBottle { label, item_id, .. } => {
                if let Some((held_label, _)) = held {
                    flag(Rule::V3, Some(i), format!("take_bottle({label}) while holding {held_label}"));
                }
                held = Some((label, item_id));
            }
            Action::LeftBottle { label } => {
                match held {
                    None => flag(Rule::V4, Some(i), format!("left_bottle({label}) with no bottle held")),
                    Some((held_label, _)) if held_label != label => {
                        flag(Rule::V4, Some(i), format!("left_bottle({label}) while holding {held_label}"))
                    }
                    _ => {}
                }
                held = None;
            }
            Action::PourLiquid { target_mass_g, tolerance } => {
                if !(target_mass_g.is_finite() && *target_mass_g > 0.0) {
                    flag(Rule::Params, Some(i), format!("pour target {target_mass_g} g must be positive"));
                }
                if !(*tolerance > 0.0 && *tolerance <= MAX_TOLERANCE) {
                    flag(Rule::Params, Some(i), format!("pour tolerance {tolerance} outside (0, {MAX_TOLERANCE}]"));
                }
                match held {
                    None => flag(Rule::V5, Some(i), "pour_liquid with no bottle held".into()),
                    Some((label, item_id)) => {
                        let total = poured.entry(item_id).or_insert(0.0);
                        *total += target_mass_g.max(0.0);
                        let budget = program.bottles.get(item_id).map(BottleBudget::available_mass_g);
                        match budget {
                            None => flag(Rule::V7, Some(i), format!("no volume known for {label} ({item_id})")),
                            Some(b) if *total > b + BUDGET_SLACK_G => flag(
                                Rule::V7,
                                Some(i),
                                format!("{total:.3} g poured from {label} exceeds its {b:.3} g"),
                            ),
                            _ => {}
                        }
                    }
                }
            }
            Action::GiveUser => {
                if let Some((label, _)) = held {
                    flag(Rule::V6, Some(i), format!("give_user while holding {label}"));
                }
            }
            Action::TakeGlass => {}
        }
    }

    for (i, a) in actions.iter().enumerate() {
        let Action::TakeBottle { label, .. } = a else { continue };
        let next = actions[i + 1..].iter().find(|n| matches!(n, Action::TakeBottle { .. } | Action::LeftBottle { .. }));
        let returned = matches!(next, Some(Action::LeftBottle { label: l }) if l == label);
        if !returned {
            flag(Rule::V8, Some(i), format!("take_bottle({label}) is never put back"));
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        out.sort_by_key(|v| (v.rule, v.index));
        Err(out)
    }
}

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("recipe is not resolved: {0}")]
    UnresolvedRecipe(String),
    #[error("compiled program failed validation: {0:?}")]
    Invalid(Vec<Violation>),
}

/// Take the glass, then for each ingredient in recipe order take its bottle,
/// pour its mass and put it back, then hand the glass over.
pub fn compile(resolved: &ResolvedRecipe, snapshot: &InventorySnapshot) -> Result<ActionProgram, CompileError> {
    compile_with_tolerance(resolved, snapshot, DEFAULT_TOLERANCE)
}

pub fn compile_with_tolerance(
    resolved: &ResolvedRecipe,
    snapshot: &InventorySnapshot,
    tolerance: f64,
) -> Result<ActionProgram, CompileError> {
    if resolved.bindings.is_empty() {
        return Err(CompileError::UnresolvedRecipe("no ingredient bindings".into()));
    }
    let mut actions = Vec::with_capacity(3 * resolved.bindings.len() + 2);
    let mut bottles = BTreeMap::new();
    actions.push(Action::TakeGlass);
    for b in &resolved.bindings {
        let req = &b.requirement;
        let item = snapshot
            .item(&b.item.item_id)
            .filter(|i| i.label == req.label)
            .ok_or_else(|| CompileError::UnresolvedRecipe(format!("{} is not bound to an item on the table", req.label)))?;
        if item.available_ml < req.quantity_ml {
            return Err(CompileError::UnresolvedRecipe(format!(
                "{} needs {} ml but {} holds {} ml",
                req.label, req.quantity_ml, item.item_id, item.available_ml
            )));
        }
        bottles.insert(
            item.item_id.clone(),
            BottleBudget { label: item.label.clone(), available_ml: item.available_ml, density_g_per_ml: req.density_g_per_ml },
        );
        actions.push(Action::TakeBottle { label: item.label.clone(), item_id: item.item_id.clone(), pose: item.pose_world });
        actions.push(Action::PourLiquid { target_mass_g: req.mass_g(), tolerance });
        actions.push(Action::LeftBottle { label: item.label.clone() });
    }
    actions.push(Action::GiveUser);

    let mut program = ActionProgram {
        program_id: String::new(),
        recipe_id: resolved.recipe_id.clone(),
        actions,
        provenance: resolved.applied_substitutions.clone(),
        bottles,
    };
    program.program_id = content_id(&program);
    validate(&program).map_err(CompileError::Invalid)?;
    Ok(program)
}

fn content_id(program: &ActionProgram) -> String {
    let mut h = FnvHasher::default();
    h.write(program.recipe_id.as_bytes());
    h.write(&serde_json::to_vec(&program.actions).expect("actions serialize"));
    h.write(&serde_json::to_vec(&program.bottles).expect("bottles serialize"));
    format!("prog-{}-{:016x}", program.recipe_id, h.finish())
}

#[derive(Debug, Error)]
pub enum ProgramDocError {
    #[error("malformed program document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("program failed validation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

pub fn serialize(program: &ActionProgram) -> Vec<u8> {
    serde_json::to_vec_pretty(program).expect("program serializes")
}

/// Parses a program document and re-runs [`validate`] on it.
pub fn deserialize(bytes: &[u8]) -> Result<ActionProgram, ProgramDocError> {
    let program: ActionProgram = serde_json::from_slice(bytes)?;
    validate(&program).map_err(ProgramDocError::Invalid)?;
    Ok(program)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::IngredientReq;
    use crate::perception::InventoryItem;
    use crate::reconcile::Binding;

    fn setup(reqs: &[(&str, f64, f64)]) -> (ResolvedRecipe, InventorySnapshot) {
        let items: Vec<InventoryItem> = reqs
            .iter()
            .enumerate()
            .map(|(i, (l, _, _))| InventoryItem {
                item_id: format!("item-{i:03}"),
                label: l.to_string(),
                pose_world: [i as f64 * 0.1, 0.2, 0.0],
                available_ml: 700.0,
                readable: true,
            })
            .collect();
        let bindings = reqs
            .iter()
            .zip(&items)
            .map(|((l, q, d), item)| Binding {
                recipe_label: l.to_string(),
                requirement: IngredientReq::new(l, *q).with_density(*d),
                item: item.clone(),
            })
            .collect();
        let resolved = ResolvedRecipe {
            recipe_id: "r".into(),
            recipe_name: "R".into(),
            bindings,
            applied_substitutions: vec![],
            quantity_adjustments: vec![],
        };
        (resolved, InventorySnapshot { timestamp: "t".into(), items })
    }

    fn rules(program: &ActionProgram) -> Vec<Rule> {
        validate(program).err().unwrap_or_default().iter().map(|v| v.rule).collect()
    }

    #[test]
    fn two_ingredients_give_eight_actions() {
        let (resolved, snap) = setup(&[("gin", 50.0, 1.0), ("tonic water", 100.0, 1.0)]);
        let p = compile(&resolved, &snap).unwrap();
        let ops: Vec<_> = p.actions.iter().map(Action::op_name).collect();
        assert_eq!(
            ops,
            ["take_glass", "take_bottle", "pour_liquid", "left_bottle", "take_bottle", "pour_liquid", "left_bottle", "give_user"]
        );
        assert!(validate(&p).is_ok());
    }

    #[test]
    fn one_ingredient_five_actions_and_mass() {
        let (resolved, snap) = setup(&[("gin", 50.0, 1.0)]);
        let p = compile(&resolved, &snap).unwrap();
        assert_eq!(p.actions.len(), 5);
        assert_eq!(p.actions[2], Action::PourLiquid { target_mass_g: 50.0, tolerance: 0.01 });
        let (resolved, snap) = setup(&[("grenadine", 15.0, 1.3)]);
        let p = compile(&resolved, &snap).unwrap();
        assert_eq!(p.actions[2], Action::PourLiquid { target_mass_g: 15.0 * 1.3, tolerance: 0.01 });
    }

    #[test]
    fn pour_before_take_is_v5() {
        let (resolved, snap) = setup(&[("gin", 50.0, 1.0)]);
        let mut p = compile(&resolved, &snap).unwrap();
        p.actions.swap(1, 2);
        let r = rules(&p);
        assert!(r.contains(&Rule::V5), "{r:?}");
    }

    #[test]
    fn missing_left_bottle() {
        let (resolved, snap) = setup(&[("gin", 50.0, 1.0), ("tonic water", 100.0, 1.0)]);
        let mut p = compile(&resolved, &snap).unwrap();
        p.actions.remove(3);
        assert_eq!(rules(&p), vec![Rule::V3, Rule::V8]);
        let mut p = compile(&resolved, &snap).unwrap();
        p.actions.remove(6);
        assert_eq!(rules(&p), vec![Rule::V6, Rule::V8]);
    }

    #[test]
    fn wrong_bottle_put_back() {
        let (resolved, snap) = setup(&[("gin", 50.0, 1.0)]);
        let mut p = compile(&resolved, &snap).unwrap();
        p.actions[3] = Action::LeftBottle { label: "vodka".into() };
        assert_eq!(rules(&p), vec![Rule::V4, Rule::V8]);
    }

    #[test]
    fn empty_program() {
        let p = ActionProgram { program_id: "p".into(), recipe_id: "r".into(), actions: vec![], provenance: vec![], bottles: BTreeMap::new() };
        assert_eq!(rules(&p), vec![Rule::V1, Rule::V2]);
    }

    #[test]
    fn over_budget_pour_is_v7() {
        let (resolved, snap) = setup(&[("gin", 50.0, 1.0)]);
        let mut p = compile(&resolved, &snap).unwrap();
        p.bottles.get_mut("item-000").unwrap().available_ml = 30.0;
        assert_eq!(rules(&p), vec![Rule::V7]);
        p.bottles.clear();
        assert_eq!(rules(&p), vec![Rule::V7]);
    }

    #[test]
    fn bad_parameters() {
        let (resolved, snap) = setup(&[("gin", 50.0, 1.0)]);
        let mut p = compile(&resolved, &snap).unwrap();
        p.actions[2] = Action::PourLiquid { target_mass_g: 10.0, tolerance: 0.5 };
        assert_eq!(rules(&p), vec![Rule::Params]);
        p.actions[2] = Action::PourLiquid { target_mass_g: -1.0, tolerance: 0.01 };
        assert_eq!(rules(&p), vec![Rule::Params]);
    }

    #[test]
    fn compile_rejects_unbound_items() {
        let (resolved, mut snap) = setup(&[("gin", 50.0, 1.0)]);
        snap.items[0].available_ml = 10.0;
        assert!(matches!(compile(&resolved, &snap), Err(CompileError::UnresolvedRecipe(_))));
        snap.items.clear();
        assert!(matches!(compile(&resolved, &snap), Err(CompileError::UnresolvedRecipe(_))));
    }

    #[test]
    fn document_format() {
        let (resolved, snap) = setup(&[("gin", 50.0, 1.0)]);
        let p = compile(&resolved, &snap).unwrap();
        let doc: serde_json::Value = serde_json::from_slice(&serialize(&p)).unwrap();
        assert_eq!(doc["actions"][0], serde_json::json!({"op": "take_glass"}));
        assert_eq!(
            doc["actions"][1],
            serde_json::json!({"op": "take_bottle", "label": "gin", "item_id": "item-000", "pose": [0.0, 0.2, 0.0]})
        );
        assert_eq!(doc["actions"][2], serde_json::json!({"op": "pour_liquid", "target_mass_g": 50.0, "tolerance": 0.01}));
        assert_eq!(doc["actions"][3], serde_json::json!({"op": "left_bottle", "label": "gin"}));
        assert_eq!(doc["actions"][4], serde_json::json!({"op": "give_user"}));
        assert_eq!(deserialize(&serialize(&p)).unwrap(), p);
    }

    #[test]
    fn deserialize_errors() {
        let (resolved, snap) = setup(&[("gin", 50.0, 1.0)]);
        let p = compile(&resolved, &snap).unwrap();
        let mut doc: serde_json::Value = serde_json::from_slice(&serialize(&p)).unwrap();
        doc["actions"].as_array_mut().unwrap().remove(0);
        let err = deserialize(doc.to_string().as_bytes()).unwrap_err();
        assert!(matches!(err, ProgramDocError::Invalid(ref v) if v[0].rule == Rule::V1));

        let mut doc: serde_json::Value = serde_json::from_slice(&serialize(&p)).unwrap();
        doc["actions"][4] = serde_json::json!({"op": "shake"});
        assert!(matches!(deserialize(doc.to_string().as_bytes()), Err(ProgramDocError::Malformed(_))));
        assert!(matches!(deserialize(b"[]"), Err(ProgramDocError::Malformed(_))));
    }

    #[test]
    fn program_id_is_content_derived() {
        let (resolved, snap) = setup(&[("gin", 50.0, 1.0)]);
        let a = compile(&resolved, &snap).unwrap();
        let b = compile(&resolved, &snap).unwrap();
        assert_eq!(a.program_id, b.program_id);
        let (resolved, snap) = setup(&[("gin", 40.0, 1.0)]);
        assert_ne!(compile(&resolved, &snap).unwrap().program_id, a.program_id);
    }
}
