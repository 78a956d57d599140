use std::collections::BTreeMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use barbot_core::corpus::SharedIndex;
use barbot_core::orchestrator::{Engine, OrderOptions, Session, SessionState, Stimulus, StepClock, TextLoopback};
use barbot_core::perception::SnapshotCell;
use barbot_core::plan::{self, compile};
use barbot_core::reconcile::{diff, propose_prompt, resolve, Resolution};
use barbot_core::scene::DEMO_SCRIPT;
use barbot_core::sim::execute;
use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::context::{read_input, write_output, Context};
use crate::error::CliError;

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Parser)]
#[command(name = "barbot", version, about = "Bartending cell: recipes, inventory, plans and pour simulation")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Recipe directory; overrides the config file and the bundled corpus.
    #[arg(long, global = true)]
    pub recipes: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate and index a directory of recipe files.
    Ingest { recipes_dir: PathBuf },
    /// Rank recipes against a free-text query.
    Retrieve {
        query: String,
        #[arg(short, default_value_t = 5)]
        k: usize,
    },
    /// Turn a detection document into an inventory snapshot.
    Inventory { detections: PathBuf },
    /// Diff a recipe against the table and resolve what can be resolved.
    Reconcile {
        recipe_id: String,
        detections: PathBuf,
        /// Resolve anomalies from the substitution rules instead of asking.
        #[arg(long)]
        unattended: bool,
        /// Answer a prompt, as ANOMALY_ID=CHOICE. Repeatable.
        #[arg(long = "answer", value_parser = parse_answer)]
        answers: Vec<(String, String)>,
    },
    /// Compile a resolved recipe into an action program.
    Compile {
        recipe_id: String,
        detections: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        unattended: bool,
        #[arg(long = "answer", value_parser = parse_answer)]
        answers: Vec<(String, String)>,
    },
    /// Run an action program in the simulated cell.
    Simulate {
        /// Program file, or `-` for stdin.
        program: PathBuf,
        detections: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "BARBOT_BIND", default_value = DEFAULT_BIND)]
        bind: SocketAddr,
        /// Initial table; the bundled demo table when omitted.
        #[arg(long)]
        detections: Option<PathBuf>,
    },
    /// Run the scripted orders against the demo table.
    Demo {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write each session's event log here as `<session>.ndjson`.
        #[arg(long)]
        events_dir: Option<PathBuf>,
    },
}

fn parse_answer(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(id, choice)| (id.trim().to_string(), choice.trim().to_string()))
        .filter(|(id, choice)| !id.is_empty() && !choice.is_empty())
        .ok_or_else(|| format!("expected ANOMALY_ID=CHOICE, got {s:?}"))
}

fn pretty(value: &impl Serialize) -> Vec<u8> {
    serde_json::to_vec_pretty(value).expect("output serializes")
}

/// Runs every subcommand except `serve`, writing results to `stdout`.
pub fn run(ctx: &Context, command: Command, stdout: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Ingest { recipes_dir } => {
            let ctx = Context { config: barbot_core::config::Config { recipes_dir: Some(recipes_dir), ..ctx.config.clone() } };
            let index = ctx.corpus()?;
            let recipes: Vec<Value> = index
                .recipes()
                .map(|r| json!({ "id": r.id, "name": r.name, "ingredients": r.ingredients.len() }))
                .collect();
            write_output(None, &pretty(&json!({ "indexed": recipes.len(), "recipes": recipes })), stdout)
        }
        Command::Retrieve { query, k } => {
            let index = ctx.corpus()?;
            let hits: Vec<Value> = index
                .retrieve(&query, k)
                .into_iter()
                .map(|h| {
                    let name = index.get(&h.recipe_id).map(|r| r.name.clone()).unwrap_or_default();
                    json!({ "rank": h.rank, "recipe_id": h.recipe_id, "name": name, "score": h.score })
                })
                .collect();
            write_output(None, &pretty(&hits), stdout)
        }
        Command::Inventory { detections } => write_output(None, &pretty(&ctx.snapshot(&detections)?), stdout),
        Command::Reconcile { recipe_id, detections, unattended, answers } => {
            let out = reconcile(ctx, &recipe_id, &detections, unattended, answers)?;
            write_output(None, &pretty(&out), stdout)
        }
        Command::Compile { recipe_id, detections, output, unattended, answers } => {
            let out = reconcile(ctx, &recipe_id, &detections, unattended, answers)?;
            let resolved = match out.resolution {
                Resolution::Resolved(r) => r,
                Resolution::Aborted => return Err(CliError::new("aborted", "an answer aborted the order")),
                Resolution::Pending(outstanding) => {
                    let prompts: Vec<_> = outstanding.iter().map(propose_prompt).collect();
                    return Err(CliError::new("unresolved", format!("{} anomalies need an answer", prompts.len()))
                        .with_details(json!({ "prompts": prompts })));
                }
            };
            let program = compile(&resolved, &ctx.snapshot(&detections)?)?;
            write_output(output.as_deref(), &plan::serialize(&program), stdout)
        }
        Command::Simulate { program, detections, seed, output } => {
            let program = plan::deserialize(&read_input(&program)?)?;
            let snapshot = ctx.snapshot(&detections)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let report = execute(&program, &snapshot, &ctx.config.sim, seed, &mut rng)?;
            write_output(output.as_deref(), &pretty(&report), stdout)?;
            match &report.failure {
                Some(f) => Err(CliError::new("execution_failed", f.message.clone())
                    .with_details(json!({ "action_index": f.action_index, "kind": f.kind }))),
                None if !report.succeeded() => Err(CliError::new("execution_failed", "a pour missed its tolerance band")),
                None => Ok(()),
            }
        }
        Command::Demo { seed, events_dir } => {
            let results = run_demo(ctx, seed, events_dir.as_deref())?;
            for r in &results {
                write_output(None, &serde_json::to_vec(r).expect("result serializes"), stdout)?;
            }
            let served = results.iter().filter(|r| r.state == SessionState::Served).count();
            write_output(None, json!({ "served": served, "total": results.len() }).to_string().as_bytes(), stdout)?;
            if served < results.len() {
                return Err(CliError::new("demo_failed", format!("{} of {} sessions were not served", results.len() - served, results.len())));
            }
            Ok(())
        }
        Command::Serve { .. } => unreachable!("serve runs on the async runtime"),
    }
}

#[derive(Debug, Serialize)]
struct ReconcileOutput {
    recipe_id: String,
    anomalies: Vec<barbot_core::reconcile::Anomaly>,
    status: &'static str,
    resolved: Option<barbot_core::reconcile::ResolvedRecipe>,
    prompts: Vec<barbot_core::reconcile::UserPrompt>,
    #[serde(skip)]
    resolution: Resolution,
}

fn reconcile(
    ctx: &Context,
    recipe_id: &str,
    detections: &Path,
    unattended: bool,
    answers: Vec<(String, String)>,
) -> Result<ReconcileOutput, CliError> {
    let index = ctx.corpus()?;
    let recipe = index
        .get(recipe_id)
        .ok_or_else(|| CliError::new("unknown_recipe", format!("no recipe with id {recipe_id:?}")))?;
    let snapshot = ctx.snapshot(detections)?;
    let rules = ctx.rules()?;
    let anomalies = diff(recipe, &snapshot, &rules, &ctx.config.reconcile);
    let answers: BTreeMap<String, String> = answers.into_iter().collect();
    let unattended = unattended || ctx.config.orchestrator.unattended;
    let resolution = resolve(recipe, &snapshot, &anomalies, &answers, unattended, &rules, &ctx.config.reconcile)?;
    let (status, resolved, prompts) = match &resolution {
        Resolution::Resolved(r) => ("resolved", Some(r.clone()), Vec::new()),
        Resolution::Aborted => ("aborted", None, Vec::new()),
        Resolution::Pending(outstanding) => ("pending", None, outstanding.iter().map(propose_prompt).collect()),
    };
    Ok(ReconcileOutput { recipe_id: recipe.id.clone(), anomalies, status, resolved, prompts, resolution })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoPour {
    pub item_id: String,
    pub target_mass_g: f64,
    pub final_mass_g: f64,
    pub within_tolerance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoResult {
    pub session_id: String,
    pub order: String,
    pub seed: u64,
    pub state: SessionState,
    pub recipe_id: Option<String>,
    pub answers: Vec<String>,
    pub pours: Vec<DemoPour>,
    pub failure: Option<String>,
}

fn demo_clock() -> StepClock {
    let start: DateTime<Utc> = "2026-10-18T18:30:00Z".parse().expect("valid instant");
    StepClock::starting_at(start)
}

/// Plays every scripted order in turn against one shared table. Session `i`
/// runs with seed `seed + i`.
pub fn run_demo(ctx: &Context, seed: u64, events_dir: Option<&Path>) -> Result<Vec<DemoResult>, CliError> {
    let engine = Engine::new(
        SharedIndex::new(ctx.corpus()?),
        SnapshotCell::new(ctx.demo_snapshot()),
        ctx.rules()?,
        &ctx.config,
    )
    .with_clock(Arc::new(demo_clock()))
    .with_speech(Arc::new(TextLoopback::default()));
    if let Some(dir) = events_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }

    let mut results = Vec::with_capacity(DEMO_SCRIPT.len());
    for (i, order) in DEMO_SCRIPT.iter().enumerate() {
        let options = OrderOptions { seed: seed.wrapping_add(i as u64), ..engine.default_options() };
        let mut s = engine.open(format!("demo-{:02}", i + 1), order.text, options);
        let mut script = order.answers.iter();
        let mut given = Vec::new();
        while engine.drive(&mut s) == SessionState::AwaitingUser {
            let prompt = s.prompts().next().expect("awaiting sessions have a prompt");
            let choice = script.next().map(|c| c.to_string()).unwrap_or_else(|| prompt.options[0].clone());
            let stimulus = Stimulus::Answer { anomaly_id: prompt.anomaly_id.clone(), choice: choice.clone() };
            given.push(choice);
            if engine.advance(&mut s, &stimulus).is_err() {
                engine.advance(&mut s, &Stimulus::Abort).expect("abort is always accepted before a terminal state");
            }
        }
        if let Some(dir) = events_dir {
            write_events(dir, &s)?;
        }
        results.push(summarize(&s, order.text, given));
    }
    Ok(results)
}

fn write_events(dir: &Path, s: &Session) -> Result<(), CliError> {
    let path = dir.join(format!("{}.ndjson", s.session_id()));
    let mut body = Vec::new();
    for ev in s.events() {
        serde_json::to_writer(&mut body, ev).expect("event serializes");
        body.push(b'\n');
    }
    std::fs::write(&path, body).map_err(|e| CliError::io(&path, e))
}

fn summarize(s: &Session, order: &str, answers: Vec<String>) -> DemoResult {
    let pours = s
        .report()
        .map(|r| {
            r.traces
                .iter()
                .map(|t| DemoPour {
                    item_id: t.item_id.clone(),
                    target_mass_g: t.target_mass_g,
                    final_mass_g: t.outcome.final_mass_g,
                    within_tolerance: t.outcome.within_tolerance,
                })
                .collect()
        })
        .unwrap_or_default();
    DemoResult {
        session_id: s.session_id().to_string(),
        order: order.to_string(),
        seed: s.seed(),
        state: s.state(),
        recipe_id: s.recipe().map(|r| r.id.clone()),
        answers,
        pours,
        failure: s.failure().map(String::from),
    }
}
