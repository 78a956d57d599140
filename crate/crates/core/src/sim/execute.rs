use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{pour_closed_loop, BottleState, CellState, PourError, PourTrace, SimConfig};
use crate::perception::InventorySnapshot;
use crate::plan::{validate, Action, ActionProgram, Violation};

/// Fixed simulated durations of the arm motions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionDurations {
    pub take_glass_s: f64,
    pub take_bottle_s: f64,
    pub left_bottle_s: f64,
    pub give_user_s: f64,
}

impl Default for ActionDurations {
    fn default() -> Self {
        ActionDurations { take_glass_s: 2.0, take_bottle_s: 2.0, left_bottle_s: 2.0, give_user_s: 2.0 }
    }
}

/// One executed (or failed) action on the simulated clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionEvent {
    pub index: usize,
    pub op: String,
    pub detail: String,
    pub start_s: f64,
    pub end_s: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionFailure {
    pub action_index: usize,
    pub kind: PourError,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassBalance {
    pub bottle_loss_g: f64,
    pub glass_gain_g: f64,
}

impl MassBalance {
    pub fn drift_g(&self) -> f64 {
        (self.bottle_loss_g - self.glass_gain_g).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub program_id: String,
    pub recipe_id: String,
    pub seed: u64,
    pub events: Vec<ActionEvent>,
    pub traces: Vec<PourTrace>,
    pub final_state: CellState,
    pub mass_balance: MassBalance,
    pub failure: Option<ExecutionFailure>,
}

impl ExecutionReport {
    /// Ran to the end and every pour landed in its band.
    pub fn succeeded(&self) -> bool {
        self.failure.is_none() && self.traces.iter().all(|t| t.outcome.within_tolerance)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("program is not valid: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidProgram(Vec<Violation>),
    #[error("program references {item_id:?} which is not in the inventory as {label:?}")]
    BindingMismatch { item_id: String, label: String },
}

/// Interprets a validated program against a fresh cell seeded from `snapshot`.
/// A failing pour stops execution; the report then carries the partial run.
pub fn execute<R: Rng + ?Sized>(
    program: &ActionProgram,
    snapshot: &InventorySnapshot,
    config: &SimConfig,
    seed: u64,
    rng: &mut R,
) -> Result<ExecutionReport, ExecError> {
    validate(program).map_err(ExecError::InvalidProgram)?;

    let mut bottles = BTreeMap::new();
    for (item_id, budget) in &program.bottles {
        let item = snapshot
            .item(item_id)
            .filter(|i| i.label == budget.label)
            .ok_or_else(|| ExecError::BindingMismatch { item_id: item_id.clone(), label: budget.label.clone() })?;
        bottles.insert(
            item_id.clone(),
            BottleState {
                label: item.label.clone(),
                initial_ml: item.available_ml,
                remaining_ml: item.available_ml,
                density_g_per_ml: budget.density_g_per_ml,
            },
        );
    }
    for action in &program.actions {
        if let Action::TakeBottle { item_id, label, .. } = action {
            if !bottles.contains_key(item_id) {
                return Err(ExecError::BindingMismatch { item_id: item_id.clone(), label: label.clone() });
            }
        }
    }

    let mut state = CellState::new(bottles);
    let mut events = Vec::with_capacity(program.actions.len());
    let mut traces = Vec::new();
    let mut failure = None;
    let d = &config.durations;

    for (index, action) in program.actions.iter().enumerate() {
        let start_s = state.clock_s;
        let mut ok = true;
        let detail = match action {
            Action::TakeGlass => {
                state.glass_arm.holding_glass = true;
                state.clock_s += d.take_glass_s;
                String::new()
            }
            Action::TakeBottle { label, item_id, .. } => {
                state.bottle_arm.held = Some(item_id.clone());
                state.clock_s += d.take_bottle_s;
                label.clone()
            }
            Action::LeftBottle { label } => {
                state.set_tilt(0.0);
                state.bottle_arm.held = None;
                state.clock_s += d.left_bottle_s;
                label.clone()
            }
            Action::PourLiquid { target_mass_g, tolerance } => {
                let result = pour_closed_loop(
                    *target_mass_g,
                    *tolerance,
                    &mut state,
                    &config.sensor,
                    &config.flow,
                    &config.controller,
                    rng,
                );
                match result {
                    Ok(trace) => {
                        state.clock_s = start_s + trace.outcome.duration_s;
                        traces.push(trace);
                    }
                    Err(f) => {
                        ok = false;
                        if let Some(trace) = f.trace {
                            state.clock_s = start_s + trace.outcome.duration_s;
                            traces.push(trace);
                        }
                        failure = Some(ExecutionFailure { action_index: index, kind: f.kind, message: f.kind.to_string() });
                    }
                }
                format!("{target_mass_g:.2} g")
            }
            Action::GiveUser => {
                state.glass_arm.holding_glass = false;
                state.clock_s += d.give_user_s;
                String::new()
            }
        };
        events.push(ActionEvent { index, op: action.op_name().to_string(), detail, start_s, end_s: state.clock_s, ok });
        if failure.is_some() {
            break;
        }
    }

    let mass_balance = MassBalance {
        bottle_loss_g: state.bottles.values().map(BottleState::mass_lost_g).sum(),
        glass_gain_g: state.glass_arm.glass_mass_g,
    };
    Ok(ExecutionReport {
        program_id: program.program_id.clone(),
        recipe_id: program.recipe_id.clone(),
        seed,
        events,
        traces,
        final_state: state,
        mass_balance,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::IngredientReq;
    use crate::perception::InventoryItem;
    use crate::plan::compile;
    use crate::reconcile::{Binding, ResolvedRecipe};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture(reqs: &[(&str, f64, f64)], available_ml: f64) -> (ActionProgram, InventorySnapshot) {
        let items: Vec<InventoryItem> = reqs
            .iter()
            .enumerate()
            .map(|(i, (l, _, _))| InventoryItem {
                item_id: format!("item-{i:03}"),
                label: l.to_string(),
                pose_world: [0.1 * i as f64, 0.0, 0.0],
                available_ml,
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
        let snapshot = InventorySnapshot { timestamp: "t".into(), items };
        (compile(&resolved, &snapshot).unwrap(), snapshot)
    }

    fn run(program: &ActionProgram, snapshot: &InventorySnapshot, seed: u64) -> Result<ExecutionReport, ExecError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        execute(program, snapshot, &SimConfig::default(), seed, &mut rng)
    }

    #[test]
    fn two_ingredient_program() {
        let (program, snapshot) = fixture(&[("gin", 50.0, 1.0), ("tonic water", 100.0, 1.0)], 700.0);
        let report = run(&program, &snapshot, 11).unwrap();
        assert_eq!(report.events.len(), 8);
        assert_eq!(report.traces.len(), 2);
        assert!(report.succeeded());
        // Sum of targets within the summed per-pour bands.
        let target: f64 = program.pour_targets().sum();
        let band: f64 = program.pour_targets().map(|t| 0.01 * t).sum();
        assert!((report.final_state.glass_arm.glass_mass_g - target).abs() <= band);
        let pour_sum: f64 = report.traces.iter().map(|t| t.outcome.final_mass_g).sum();
        assert!((report.final_state.glass_arm.glass_mass_g - pour_sum).abs() < 1e-9);
        assert!(report.mass_balance.drift_g() < 1e-9);
        assert!(!report.final_state.glass_arm.holding_glass);
        assert_eq!(report.final_state.bottle_arm.held, None);
        for w in report.events.windows(2) {
            assert_eq!(w[0].end_s, w[1].start_s);
        }
    }

    #[test]
    fn unknown_item_is_binding_mismatch() {
        let (program, mut snapshot) = fixture(&[("gin", 50.0, 1.0)], 700.0);
        snapshot.items[0].item_id = "item-999".into();
        assert!(matches!(run(&program, &snapshot, 0), Err(ExecError::BindingMismatch { .. })));
    }

    #[test]
    fn invalid_program_rejected() {
        let (mut program, snapshot) = fixture(&[("gin", 50.0, 1.0)], 700.0);
        program.actions.clear();
        assert!(matches!(run(&program, &snapshot, 0), Err(ExecError::InvalidProgram(_))));
    }

    #[test]
    fn exhausted_bottle_leaves_partial_report() {
        let (program, mut snapshot) = fixture(&[("gin", 50.0, 1.0), ("tonic water", 100.0, 1.0)], 700.0);
        // Inventory shrank after compilation.
        snapshot.items[1].available_ml = 30.0;
        let report = run(&program, &snapshot, 0).unwrap();
        let failure = report.failure.as_ref().unwrap();
        assert_eq!(failure.kind, PourError::BottleExhausted);
        assert_eq!(failure.action_index, 5);
        assert_eq!(report.events.len(), 6);
        assert!(!report.events[5].ok);
        assert!(!report.succeeded());
        assert!(report.mass_balance.drift_g() < 1e-9);
    }

    #[test]
    fn replay_is_bit_identical() {
        let (program, snapshot) = fixture(&[("gin", 50.0, 1.0), ("grenadine", 15.0, 1.3)], 700.0);
        let a = run(&program, &snapshot, 77).unwrap().to_json();
        let b = run(&program, &snapshot, 77).unwrap().to_json();
        assert_eq!(a, b);
    }
}
