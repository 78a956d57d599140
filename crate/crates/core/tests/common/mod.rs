//! Independent oracles and the measurable checks built on them. Shared by the
//! core integration tests and the acceptance runner.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use barbot_core::corpus::{builtin_recipes, normalize_text, IngredientReq, Recipe, RecipeIndex};
use barbot_core::perception::{backproject, CameraModel, InventoryItem, InventorySnapshot};
use barbot_core::plan::{compile, validate, Action, ActionProgram};
use barbot_core::reconcile::{diff, AnomalyKind, Binding, ReconcileConfig, ResolvedRecipe, RuleTable};
use barbot_core::sim::{
    execute, pour_closed_loop, BottleState, CellState, FlowModel, FtSensorModel, PourControllerConfig, PourError,
    SimConfig,
};
use nalgebra::{Rotation3, Vector3};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Result of one measurable check.
#[derive(Debug)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (ok, mut detail) = f();
    let elapsed = start.elapsed();
    let mut pass = ok;
    if let Some(limit) = limit {
        if elapsed > limit {
            pass = false;
            detail.push_str(&format!("; over the {:.0} s budget", limit.as_secs_f64()));
        }
    }
    Outcome { pass, detail, elapsed }
}

// ---------------------------------------------------------------- retrieval

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Trigram bucket counts, written without the library's embedding code.
pub fn oracle_counts(text: &str) -> [u64; 256] {
    let mut v = [0u64; 256];
    let chars: Vec<char> = normalize_text(text).chars().collect();
    for w in chars.windows(3) {
        let s: String = w.iter().collect();
        v[(fnv1a(s.as_bytes()) % 256) as usize] += 1;
    }
    v
}

fn dot(a: &[u64; 256], b: &[u64; 256]) -> u64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn oracle_cosine(a: &[u64; 256], b: &[u64; 256]) -> f64 {
    let (na, nb) = (dot(a, a), dot(b, b));
    if na == 0 || nb == 0 {
        0.0
    } else {
        dot(a, b) as f64 / ((na as f64).sqrt() * (nb as f64).sqrt())
    }
}

/// Full scan over `recipes`, ordered by exact rational comparison of cos^2;
/// ties by ascending id.
pub fn oracle_retrieve(recipes: &[Recipe], query: &str, k: usize) -> Vec<(String, f64)> {
    let q = oracle_counts(query);
    let mut all: Vec<(String, u64, u64, f64)> = recipes
        .iter()
        .map(|r| {
            let d = oracle_counts(&r.retrieval_text());
            let nd = dot(&d, &d).max(1);
            (r.id.clone(), dot(&q, &d), nd, oracle_cosine(&q, &d))
        })
        .collect();
    all.sort_by(|a, b| {
        let lhs = u128::from(b.1) * u128::from(b.1) * u128::from(a.2);
        let rhs = u128::from(a.1) * u128::from(a.1) * u128::from(b.2);
        lhs.cmp(&rhs).then_with(|| a.0.cmp(&b.0))
    });
    all.truncate(k);
    all.into_iter().map(|(id, _, _, score)| (id, score)).collect()
}

const QUERY_WORDS: &[&str] = &[
    "mojito", "rum", "lime", "gin", "tonic", "sour", "vodka", "orange", "mule", "ginger", "spritz", "sunrise", "cola",
    "honey", "lemon", "whiskey", "sweet", "negroni", "colada", "breeze", "blue", "lagoon", "x", "zz",
];

pub fn random_query(rng: &mut impl Rng) -> String {
    let n = rng.random_range(1..=3);
    (0..n).map(|_| *QUERY_WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn retrieval_exactness(seed: u64, queries: usize) -> Outcome {
    timed(Some(Duration::from_secs(5)), || {
        let recipes = builtin_recipes();
        let index = RecipeIndex::from_recipes(recipes.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mismatches = 0;
        for _ in 0..queries {
            let q = random_query(&mut rng);
            let k = rng.random_range(1..=recipes.len() + 2);
            let got: Vec<(String, f64)> = index.retrieve(&q, k).into_iter().map(|h| (h.recipe_id, h.score)).collect();
            let want = oracle_retrieve(&recipes, &q, k);
            let same = got.len() == want.len()
                && got.iter().zip(&want).all(|(g, w)| g.0 == w.0 && (g.1 - w.1).abs() < 1e-12);
            if !same {
                mismatches += 1;
            }
        }
        let mut name_misses = Vec::new();
        for r in &recipes {
            let top = index.retrieve(&r.name, 1);
            if top.first().map(|h| h.recipe_id.as_str()) != Some(r.id.as_str()) {
                name_misses.push(r.id.clone());
            }
        }
        (
            mismatches == 0 && name_misses.is_empty() && recipes.len() >= 20,
            format!(
                "{} recipes; {}/{} queries match the full scan; {}/{} names at rank 1{}",
                recipes.len(),
                queries - mismatches,
                queries,
                recipes.len() - name_misses.len(),
                recipes.len(),
                if name_misses.is_empty() { String::new() } else { format!(" (missed {name_misses:?})") }
            ),
        )
    })
}

// ---------------------------------------------------------------- reconcile

const LABELS: &[&str] = &[
    "white rum", "dark rum", "rum", "lime juice", "lime", "lemon juice", "sugar", "honey", "gin", "tonic water",
    "soda water", "vodka", "orange juice", "triple sec", "mint",
];

pub fn random_recipe(rng: &mut impl Rng) -> Recipe {
    let n = rng.random_range(1..=5);
    let mut labels = LABELS.to_vec();
    labels.shuffle(rng);
    Recipe {
        id: "r".into(),
        name: "R".into(),
        ingredients: labels[..n]
            .iter()
            .map(|l| IngredientReq::new(l, f64::from(rng.random_range(1..=12u32)) * 5.0))
            .collect(),
        notes: None,
    }
}

pub fn random_snapshot(rng: &mut impl Rng) -> InventorySnapshot {
    let n = rng.random_range(0..=9);
    let items = (0..n)
        .map(|i| {
            let readable = rng.random_bool(0.8);
            let label = if !readable && rng.random_bool(0.5) { "bottle" } else { LABELS.choose(rng).unwrap() };
            InventoryItem {
                item_id: format!("item-{i:03}"),
                label: label.to_string(),
                pose_world: [0.0; 3],
                available_ml: f64::from(rng.random_range(0..=20u32)) * 5.0,
                readable,
            }
        })
        .collect();
    InventorySnapshot { timestamp: "2026-01-01T00:00:00Z".into(), items }
}

pub type AnomalyKey = (AnomalyKind, String, f64, Option<f64>, Option<String>);

fn richest<'a>(items: &[&'a InventoryItem]) -> Option<&'a InventoryItem> {
    let mut best: Option<&InventoryItem> = None;
    for it in items {
        best = match best {
            None => Some(it),
            Some(b) if it.available_ml > b.available_ml => Some(it),
            Some(b) if it.available_ml == b.available_ml && it.item_id < b.item_id => Some(it),
            keep => keep,
        };
    }
    best
}

/// Set difference plus quantity comparison, per requirement in recipe order.
pub fn oracle_diff(recipe: &Recipe, snapshot: &InventorySnapshot) -> Vec<AnomalyKey> {
    let recipe_labels: Vec<&str> = recipe.ingredients.iter().map(|r| r.label.as_str()).collect();
    let mut out = Vec::new();
    for req in &recipe.ingredients {
        let readable: Vec<&InventoryItem> =
            snapshot.items.iter().filter(|i| i.readable && i.label == req.label).collect();
        let unreadable: Vec<&InventoryItem> =
            snapshot.items.iter().filter(|i| !i.readable && i.label == req.label).collect();
        if let Some(item) = richest(&readable) {
            if item.available_ml < req.quantity_ml {
                out.push((
                    AnomalyKind::InsufficientQuantity,
                    req.label.clone(),
                    req.quantity_ml,
                    Some(item.available_ml),
                    Some(item.item_id.clone()),
                ));
            }
            continue;
        }
        if let Some(item) = richest(&unreadable) {
            out.push((
                AnomalyKind::UnreadableLabel,
                req.label.clone(),
                req.quantity_ml,
                Some(item.available_ml),
                Some(item.item_id.clone()),
            ));
            continue;
        }
        let want: BTreeSet<&str> = req.label.split_whitespace().collect();
        let partial = snapshot.items.iter().any(|i| {
            let have: BTreeSet<&str> = i.label.split_whitespace().collect();
            i.readable
                && !recipe_labels.contains(&i.label.as_str())
                && !have.is_empty()
                && (have.is_subset(&want) || want.is_subset(&have))
        });
        let kind = if partial { AnomalyKind::AmbiguousMatch } else { AnomalyKind::MissingIngredient };
        out.push((kind, req.label.clone(), req.quantity_ml, None, None));
    }
    out
}

pub fn anomaly_fidelity(seed: u64, pairs: usize) -> Outcome {
    timed(Some(Duration::from_secs(5)), || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rules, config) = (RuleTable::default(), ReconcileConfig::default());
        let mut agree = 0;
        let mut kinds: BTreeMap<AnomalyKind, usize> = BTreeMap::new();
        let mut first_miss = None;
        for i in 0..pairs {
            let recipe = random_recipe(&mut rng);
            let snapshot = random_snapshot(&mut rng);
            let got: Vec<AnomalyKey> = diff(&recipe, &snapshot, &rules, &config)
                .into_iter()
                .map(|a| (a.kind, a.subject_label, a.required_ml, a.available_ml, a.item_id))
                .collect();
            let want = oracle_diff(&recipe, &snapshot);
            for k in &want {
                *kinds.entry(k.0).or_default() += 1;
            }
            if got == want {
                agree += 1;
            } else if first_miss.is_none() {
                first_miss = Some(i);
            }
        }
        (
            agree == pairs,
            format!("{agree}/{pairs} pairs identical to the oracle; anomaly mix {kinds:?}{}", match first_miss {
                Some(i) => format!("; first disagreement at pair {i}"),
                None => String::new(),
            }),
        )
    })
}

// ---------------------------------------------------------------- plan

/// Resolved recipe with `n` distinct bottles that all hold enough.
pub fn random_resolved(rng: &mut impl Rng, n: usize) -> (ResolvedRecipe, InventorySnapshot) {
    let mut items = Vec::new();
    let mut bindings = Vec::new();
    for i in 0..n {
        let label = format!("liquid {i}");
        let quantity = rng.random_range(1.0..120.0);
        let density = rng.random_range(0.7..1.5);
        let item = InventoryItem {
            item_id: format!("item-{i:03}"),
            label: label.clone(),
            pose_world: [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.0],
            available_ml: quantity + rng.random_range(0.0..600.0),
            readable: true,
        };
        bindings.push(Binding {
            recipe_label: label.clone(),
            requirement: IngredientReq::new(&label, quantity).with_density(density),
            item: item.clone(),
        });
        items.push(item);
    }
    items.shuffle(rng);
    let resolved = ResolvedRecipe {
        recipe_id: "random".into(),
        recipe_name: "Random".into(),
        bindings,
        applied_substitutions: vec![],
        quantity_adjustments: vec![],
    };
    (resolved, InventorySnapshot { timestamp: "2026-01-01T00:00:00Z".into(), items })
}

/// Naive interpreter of glass and bottle hand occupancy.
pub fn hold_state_ok(actions: &[Action]) -> bool {
    let mut glass = false;
    let mut served = false;
    let mut bottle: Option<&str> = None;
    for a in actions {
        if served {
            return false;
        }
        match a {
            Action::TakeGlass => {
                if glass {
                    return false;
                }
                glass = true;
            }
            Action::TakeBottle { label, .. } => {
                if !glass || bottle.is_some() {
                    return false;
                }
                bottle = Some(label);
            }
            Action::PourLiquid { .. } => {
                if !glass || bottle.is_none() {
                    return false;
                }
            }
            Action::LeftBottle { label } => {
                if bottle != Some(label.as_str()) {
                    return false;
                }
                bottle = None;
            }
            Action::GiveUser => {
                if !glass || bottle.is_some() {
                    return false;
                }
                served = true;
            }
        }
    }
    served
}

pub fn mutants(program: &ActionProgram) -> Vec<(String, ActionProgram)> {
    let n = program.actions.len();
    let mut out = Vec::new();
    let with = |actions: Vec<Action>| ActionProgram { actions, ..program.clone() };
    for i in 0..n {
        let mut a = program.actions.clone();
        a.remove(i);
        out.push((format!("delete {i}"), with(a)));
        let mut a = program.actions.clone();
        a.insert(i, program.actions[i].clone());
        out.push((format!("duplicate {i}"), with(a)));
        if i + 1 < n {
            let mut a = program.actions.clone();
            a.swap(i, i + 1);
            out.push((format!("swap {i},{}", i + 1), with(a)));
        }
    }
    out
}

pub fn plan_validity(seed: u64, recipes: usize) -> Outcome {
    timed(None, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sound = 0;
        let mut law = 0;
        for _ in 0..recipes {
            let n = rng.random_range(1..=10);
            let (resolved, snapshot) = random_resolved(&mut rng, n);
            if let Ok(program) = compile(&resolved, &snapshot) {
                if validate(&program).is_ok() {
                    sound += 1;
                }
                if program.actions.len() == 3 * n + 2 {
                    law += 1;
                }
            }
        }
        let (resolved, snapshot) = random_resolved(&mut rng, 3);
        let program = compile(&resolved, &snapshot).unwrap();
        let all = mutants(&program);
        let breaking: Vec<&(String, ActionProgram)> = all.iter().filter(|(_, m)| !hold_state_ok(&m.actions)).collect();
        let escaped: Vec<&str> =
            breaking.iter().filter(|(_, m)| validate(m).is_ok()).map(|(name, _)| name.as_str()).collect();
        (
            sound == recipes && law == recipes && escaped.is_empty() && !breaking.is_empty(),
            format!(
                "{sound}/{recipes} compile to valid programs, {law}/{recipes} obey 3n+2; {}/{} sequencing-breaking mutants rejected ({} mutants total){}",
                breaking.len() - escaped.len(),
                breaking.len(),
                all.len(),
                if escaped.is_empty() { String::new() } else { format!(", escaped {escaped:?}") }
            ),
        )
    })
}

// ---------------------------------------------------------------- sim

pub fn pour_cell(remaining_ml: f64, density: f64) -> CellState {
    let mut bottles = BTreeMap::new();
    bottles.insert(
        "b".to_string(),
        BottleState { label: "gin".into(), initial_ml: remaining_ml, remaining_ml, density_g_per_ml: density },
    );
    let mut s = CellState::new(bottles);
    s.bottle_arm.held = Some("b".into());
    s.glass_arm.holding_glass = true;
    s
}

pub struct PourTally {
    pub within: usize,
    pub total: usize,
    pub silent_overshoots: usize,
    pub failures: Vec<PourError>,
    pub worst_rel_error: f64,
}

pub fn pour_batch(seed: u64, count: usize, sensor: &FtSensorModel) -> PourTally {
    let mut targets_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = PourTally { within: 0, total: count, silent_overshoots: 0, failures: vec![], worst_rel_error: 0.0 };
    for i in 0..count {
        let target = targets_rng.random_range(20.0..=200.0);
        let mut state = pour_cell(700.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(i as u64));
        let result = pour_closed_loop(
            target,
            0.01,
            &mut state,
            sensor,
            &FlowModel::default(),
            &PourControllerConfig::default(),
            &mut rng,
        );
        match result {
            Ok(trace) => {
                let rel = (trace.outcome.final_mass_g - target) / target;
                tally.worst_rel_error = tally.worst_rel_error.max(rel.abs());
                if trace.outcome.within_tolerance {
                    tally.within += 1;
                } else if rel > 0.02 {
                    tally.silent_overshoots += 1;
                }
            }
            Err(f) => tally.failures.push(f.kind),
        }
    }
    tally
}

pub fn pour_tolerance(seed: u64) -> Outcome {
    timed(Some(Duration::from_secs(30)), || {
        let noisy = pour_batch(seed, 100, &FtSensorModel::default());
        let clean = pour_batch(seed, 100, &FtSensorModel::noiseless());
        let failures_ok = noisy
            .failures
            .iter()
            .chain(&clean.failures)
            .all(|k| matches!(k, PourError::BottleExhausted | PourError::Timeout));
        (
            noisy.within >= 99 && clean.within == 100 && noisy.silent_overshoots == 0 && failures_ok,
            format!(
                "noisy {}/100 within ±1% (worst {:.3}%), noiseless {}/100 (worst {:.4}%), silent overshoots {}",
                noisy.within,
                100.0 * noisy.worst_rel_error,
                clean.within,
                100.0 * clean.worst_rel_error,
                noisy.silent_overshoots + clean.silent_overshoots
            ),
        )
    })
}

/// Random programs, including ones whose bottles run dry mid-pour.
pub fn mass_conservation(seed: u64, programs: usize) -> Outcome {
    timed(None, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        let mut failed_runs = 0;
        for p in 0..programs {
            let n = rng.random_range(1..=6);
            let (resolved, snapshot) = random_resolved(&mut rng, n);
            let program = compile(&resolved, &snapshot).unwrap();
            let mut run_snapshot = snapshot.clone();
            if p % 4 == 3 {
                let victim = rng.random_range(0..run_snapshot.items.len());
                run_snapshot.items[victim].available_ml *= 0.3;
            }
            let config = if p % 2 == 0 { SimConfig::default() } else { SimConfig::noiseless() };
            let mut sim_rng = ChaCha8Rng::seed_from_u64(p as u64);
            let report = execute(&program, &run_snapshot, &config, p as u64, &mut sim_rng).unwrap();
            if report.failure.is_some() {
                failed_runs += 1;
            }
            worst = worst.max(report.mass_balance.drift_g());
            let glass: f64 = report.traces.iter().map(|t| t.outcome.final_mass_g).sum();
            worst = worst.max((glass - report.final_state.glass_arm.glass_mass_g).abs());
        }
        (
            worst < 1e-9,
            format!("{programs} programs ({failed_runs} ran a bottle dry), worst drift {worst:.3e} g"),
        )
    })
}

// ---------------------------------------------------------------- perception

pub fn random_camera(rng: &mut impl Rng) -> CameraModel {
    let f = rng.random_range(300.0..1500.0);
    let down = Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)));
    let tilt = Rotation3::from_euler_angles(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), 0.0);
    let yaw = Rotation3::from_axis_angle(&Vector3::z_axis(), rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
    CameraModel {
        fx: f,
        fy: f * rng.random_range(0.9..1.1),
        cx: rng.random_range(200.0..800.0),
        cy: rng.random_range(150.0..600.0),
        rotation: (yaw * tilt * down).into_inner(),
        translation: Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.3..2.5)),
    }
}

/// Table point under the camera's view: a pixel near the center cast down.
pub fn visible_point(cam: &CameraModel, rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let u = cam.cx + rng.random_range(-300.0..300.0);
        let v = cam.cy + rng.random_range(-200.0..200.0);
        if let Ok(p) = backproject(u, v, cam) {
            if (p - cam.translation).norm() < 20.0 {
                return p;
            }
        }
    }
}

pub fn backprojection_round_trip(seed: u64, pairs: usize) -> Outcome {
    timed(None, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        let mut failures = 0;
        for _ in 0..pairs {
            let cam = random_camera(&mut rng);
            assert!(cam.validate().is_ok());
            let p = visible_point(&cam, &mut rng);
            let p = Vector3::new(p.x + rng.random_range(-0.01..0.01), p.y + rng.random_range(-0.01..0.01), 0.0);
            match cam.project(&p).map(|(u, v)| backproject(u, v, &cam)) {
                Some(Ok(q)) => worst = worst.max((q - p).norm()),
                _ => failures += 1,
            }
        }
        (worst < 1e-6 && failures == 0, format!("{pairs} pairs, worst error {worst:.3e} m, {failures} unprojectable"))
    })
}
