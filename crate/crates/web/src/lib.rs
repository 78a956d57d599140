//! Browser bindings: recipe search, a single simulated pour, and a full order
//! against the demo table. Everything crosses the boundary as JSON strings.

use std::collections::BTreeMap;
use std::sync::Arc;

use barbot_core::config::Config;
use barbot_core::corpus::{builtin_recipes, RecipeIndex, SharedIndex};
use barbot_core::orchestrator::{Engine, OrderOptions, Session, SessionState, Stimulus, StepClock, TextLoopback};
use barbot_core::perception::{snapshot_from_document, SnapshotCell};
use barbot_core::reconcile::RuleTable;
use barbot_core::scene;
use barbot_core::sim::{pour_closed_loop, BottleState, CellState, FtSensorModel, PourTrace, SimConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn corpus() -> RecipeIndex {
    RecipeIndex::from_recipes(builtin_recipes()).expect("bundled corpus indexes")
}

/// Top `k` recipes for `query` as a JSON array.
#[wasm_bindgen]
pub fn retrieve(query: &str, k: usize) -> String {
    let index = corpus();
    let hits: Vec<Value> = index
        .retrieve(query, k)
        .into_iter()
        .map(|h| json!({ "rank": h.rank, "recipe_id": h.recipe_id, "name": index.get(&h.recipe_id).map(|r| r.name.as_str()), "score": h.score }))
        .collect();
    Value::from(hits).to_string()
}

fn trace_json(trace: &PourTrace) -> Value {
    json!({
        "target_mass_g": trace.target_mass_g,
        "tolerance": trace.tolerance,
        "final_mass_g": trace.outcome.final_mass_g,
        "within_tolerance": trace.outcome.within_tolerance,
        "duration_s": trace.outcome.duration_s,
        "t": trace.samples.iter().map(|s| s.t_s).collect::<Vec<_>>(),
        "true_g": trace.samples.iter().map(|s| s.true_mass_g).collect::<Vec<_>>(),
        "measured_g": trace.samples.iter().map(|s| s.measured_g).collect::<Vec<_>>(),
        "filtered_g": trace.samples.iter().map(|s| s.filtered_g).collect::<Vec<_>>(),
    })
}

/// One closed-loop pour of water from a full bottle.
#[wasm_bindgen]
pub fn simulate_pour(target_mass_g: f64, noise_sigma_g: f64, latency_samples: usize, seed: u64) -> Result<String, String> {
    let config = SimConfig::default();
    let sensor = FtSensorModel { noise_sigma_g: noise_sigma_g.max(0.0), latency_samples, ..FtSensorModel::default() };
    let mut bottles = BTreeMap::new();
    bottles.insert("b".to_string(), BottleState { label: "water".into(), initial_ml: 700.0, remaining_ml: 700.0, density_g_per_ml: 1.0 });
    let mut cell = CellState::new(bottles);
    cell.bottle_arm.held = Some("b".into());
    cell.glass_arm.holding_glass = true;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match pour_closed_loop(target_mass_g, 0.01, &mut cell, &sensor, &config.flow, &config.controller, &mut rng) {
        Ok(trace) => Ok(trace_json(&trace).to_string()),
        Err(f) => Err(f.kind.to_string()),
    }
}

/// The demo table with its bottles, serving one order at a time.
#[wasm_bindgen]
pub struct Bar {
    engine: Engine,
    session: Option<Session>,
    orders: u64,
}

#[wasm_bindgen]
impl Bar {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Bar {
        let snapshot = snapshot_from_document(&scene::demo_detections(), &scene::demo_perception_config()).expect("demo table is valid");
        let engine = Engine::new(SharedIndex::new(corpus()), SnapshotCell::new(snapshot), RuleTable::default(), &Config::default())
            .with_clock(Arc::new(StepClock::default()))
            .with_speech(Arc::new(TextLoopback::default()));
        Bar { engine, session: None, orders: 0 }
    }

    /// Starts an order and runs it until it is served, fails, or needs an answer.
    pub fn order(&mut self, text: &str, seed: u64) -> String {
        self.orders += 1;
        let mut s = self.engine.open(format!("web-{}", self.orders), text, OrderOptions { seed, unattended: false });
        self.engine.drive(&mut s);
        let out = self.render(&s, 0);
        self.session = Some(s);
        out
    }

    /// Answers the current prompt and continues.
    pub fn answer(&mut self, anomaly_id: &str, choice: &str) -> Result<String, String> {
        let s = self.session.as_mut().ok_or("no order in progress")?;
        let seen = s.events().len();
        let stimulus = Stimulus::Answer { anomaly_id: anomaly_id.into(), choice: choice.into() };
        self.engine.advance(s, &stimulus).map_err(|e| e.to_string())?;
        if s.state() != SessionState::Aborted {
            self.engine.drive(s);
        }
        let s = self.session.as_ref().expect("session is set");
        Ok(self.render(s, seen))
    }

    /// Current inventory as JSON.
    pub fn inventory(&self) -> String {
        serde_json::to_string(self.engine.inventory().load().as_ref()).expect("snapshot serializes")
    }

    fn render(&self, s: &Session, since: usize) -> String {
        json!({ "session": s.view(), "events": &s.events()[since..] }).to_string()
    }
}

impl Default for Bar {
    fn default() -> Self {
        Self::new()
    }
}
