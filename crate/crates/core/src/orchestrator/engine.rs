use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::session::{EventPayload, PourTelemetry, Session, SessionEvent, SessionState, Stimulus};
use super::{is_declared, parse_order, Clock, OrchestratorConfig, OrchestratorError, SpeechOutput, SystemClock, TextLoopback};
use crate::config::Config;
use crate::corpus::SharedIndex;
use crate::perception::SnapshotCell;
use crate::plan::compile;
use crate::reconcile::{propose_prompt, ReconcileConfig, Reconciler, ResolvedRecipe, RuleTable, SubstitutionSource, ABORT};
use crate::sim::{execute, ExecutionReport, PourTrace, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrderOptions {
    pub seed: u64,
    pub unattended: bool,
}

/// Shared services every session runs against.
pub struct Engine {
    corpus: SharedIndex,
    inventory: SnapshotCell,
    rules: RuleTable,
    reconcile: ReconcileConfig,
    sim: SimConfig,
    config: OrchestratorConfig,
    speech: Arc<dyn SpeechOutput>,
    clock: Arc<dyn Clock>,
}

use SessionState::*;

impl Engine {
    pub fn new(corpus: SharedIndex, inventory: SnapshotCell, rules: RuleTable, config: &Config) -> Self {
        Engine {
            corpus,
            inventory,
            rules,
            reconcile: config.reconcile.clone(),
            sim: config.sim.clone(),
            config: config.orchestrator.clone(),
            speech: Arc::new(TextLoopback::default()),
            clock: Arc::new(SystemClock),
        }
    }

    pub fn with_speech(mut self, speech: Arc<dyn SpeechOutput>) -> Self {
        self.speech = speech;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn corpus(&self) -> &SharedIndex {
        &self.corpus
    }

    pub fn inventory(&self) -> &SnapshotCell {
        &self.inventory
    }

    pub fn rules(&self) -> &RuleTable {
        &self.rules
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn default_options(&self) -> OrderOptions {
        OrderOptions { seed: self.config.default_seed, unattended: self.config.unattended }
    }

    pub fn open(&self, session_id: impl Into<String>, text: &str, options: OrderOptions) -> Session {
        let intent = parse_order(text);
        let mut s = Session {
            session_id: session_id.into(),
            order_text: text.to_string(),
            intent: intent.clone(),
            seed: options.seed,
            unattended: options.unattended,
            state: Ordered,
            recipe: None,
            snapshot: None,
            reconciler: None,
            outstanding: Vec::new(),
            resolved: None,
            program: None,
            report: None,
            exec_error: None,
            failure: None,
            events: Vec::new(),
        };
        self.emit(&mut s, EventPayload::OrderReceived { text: text.to_string(), intent });
        s
    }

    /// Proceeds until the session ends or waits for an answer.
    pub fn drive(&self, s: &mut Session) -> SessionState {
        while !s.state.is_terminal() && s.state != AwaitingUser {
            self.advance(s, &Stimulus::Proceed).expect("proceed is legal outside awaiting_user");
        }
        s.state
    }

    /// Applies one stimulus. On error the session is unchanged.
    pub fn advance(&self, s: &mut Session, stimulus: &Stimulus) -> Result<SessionState, OrchestratorError> {
        let illegal = |s: &Session| OrchestratorError::IllegalStimulus {
            state: s.state,
            stimulus: match stimulus {
                Stimulus::Proceed => "proceed",
                Stimulus::Answer { .. } => "answer",
                Stimulus::Abort => "abort",
            }
            .to_string(),
        };
        match stimulus {
            Stimulus::Abort => {
                if s.state.is_terminal() {
                    return Err(illegal(s));
                }
                s.outstanding.clear();
                self.say(s, "Order cancelled.");
                self.goto(s, Aborted);
            }
            Stimulus::Answer { anomaly_id, choice } => {
                if s.state != AwaitingUser {
                    return Err(illegal(s));
                }
                let Some((anomaly, prompt)) = s.outstanding.iter().find(|(a, _)| &a.anomaly_id == anomaly_id) else {
                    return Err(OrchestratorError::UnknownAnomalyId(anomaly_id.clone()));
                };
                if !prompt.options.contains(choice) {
                    return Err(OrchestratorError::IllegalOption { anomaly_id: anomaly_id.clone(), choice: choice.clone() });
                }
                let anomaly = anomaly.clone();
                self.emit(s, EventPayload::AnswerReceived { anomaly_id: anomaly_id.clone(), choice: choice.clone() });
                s.outstanding.clear();
                if choice == ABORT {
                    self.say(s, "Order cancelled.");
                    self.goto(s, Aborted);
                } else {
                    let rec = s.reconciler.as_mut().expect("awaiting_user has a reconciler");
                    rec.apply_answer(&anomaly, choice).expect("choice was checked against the prompt");
                    self.goto(s, Reconciling);
                }
            }
            Stimulus::Proceed => match s.state {
                Ordered => self.retrieve(s),
                Retrieved => {
                    let recipe = s.recipe.as_ref().expect("retrieved has a recipe");
                    s.reconciler = Some(Reconciler::new(recipe));
                    s.snapshot = Some(self.inventory.load());
                    self.goto(s, Reconciling);
                }
                Reconciling => self.reconcile(s),
                Resolved => self.compile(s),
                Compiled => self.execute(s),
                Executing => self.conclude(s),
                AwaitingUser | Served | Failed | Aborted => return Err(illegal(s)),
            },
        }
        Ok(s.state)
    }

    fn emit(&self, s: &mut Session, payload: EventPayload) {
        let seq = s.events.len() as u64 + 1;
        s.events.push(SessionEvent { seq, timestamp: self.clock.now(), payload });
    }

    fn say(&self, s: &mut Session, text: &str) {
        self.speech.speak(text);
        self.emit(s, EventPayload::SpeechOut { text: text.to_string() });
    }

    fn goto(&self, s: &mut Session, to: SessionState) {
        assert!(is_declared(s.state, to), "undeclared transition {} -> {}", s.state, to);
        let from = s.state;
        s.state = to;
        self.emit(s, EventPayload::StateChanged { from, to });
    }

    fn fail(&self, s: &mut Session, reason: String) {
        self.emit(s, EventPayload::Failed { reason: reason.clone() });
        self.say(s, &format!("Sorry, {reason}."));
        s.failure = Some(reason);
        self.goto(s, Failed);
    }

    fn retrieve(&self, s: &mut Session) {
        let Some(query) = s.intent.query().map(str::to_string) else {
            return self.fail(s, "that order does not name a drink".into());
        };
        let Some(hit) = self.corpus.retrieve(&query, 1).into_iter().next() else {
            return self.fail(s, "no recipes are loaded".into());
        };
        if hit.score < self.config.min_retrieval_score {
            return self.fail(s, format!("no matching recipe for {query:?}"));
        }
        let Some(recipe) = self.corpus.read(|idx| idx.get(&hit.recipe_id).cloned()) else {
            return self.fail(s, format!("recipe {:?} was removed", hit.recipe_id));
        };
        self.emit(
            s,
            EventPayload::RecipeRetrieved { recipe_id: recipe.id.clone(), recipe_name: recipe.name.clone(), score: hit.score },
        );
        self.say(s, &format!("One {} coming up.", recipe.name));
        s.recipe = Some(recipe);
        self.goto(s, Retrieved);
    }

    fn reconcile(&self, s: &mut Session) {
        let snapshot = s.snapshot.clone().expect("reconciling has a snapshot");
        let mut rec = s.reconciler.take().expect("reconciling has a reconciler");
        let anomalies = rec.anomalies(&snapshot, &self.rules, &self.reconcile);
        let result = if anomalies.is_empty() {
            rec.finish(&snapshot, &self.rules, &self.reconcile).map_err(|_| "anomalies appeared while binding".to_string())
        } else {
            self.emit(s, EventPayload::AnomaliesDetected { anomalies: anomalies.clone() });
            if !s.unattended {
                for anomaly in anomalies {
                    let prompt = propose_prompt(&anomaly);
                    self.emit(s, EventPayload::Prompt { prompt: prompt.clone() });
                    self.say(s, &prompt.text);
                    s.outstanding.push((anomaly, prompt));
                }
                s.reconciler = Some(rec);
                return self.goto(s, AwaitingUser);
            }
            unattended(&mut rec, &snapshot, &self.rules, &self.reconcile)
        };
        s.reconciler = Some(rec);
        match result {
            Ok(resolved) => {
                for sub in resolved.applied_substitutions.iter().filter(|a| a.source == SubstitutionSource::Rule) {
                    let line = format!("Using {} instead of {}.", sub.to, sub.from);
                    self.say(s, &line);
                }
                self.emit(s, EventPayload::RecipeResolved { resolved: resolved.clone() });
                s.resolved = Some(resolved);
                self.goto(s, Resolved);
            }
            Err(reason) => self.fail(s, reason),
        }
    }

    fn compile(&self, s: &mut Session) {
        let resolved = s.resolved.as_ref().expect("resolved has a resolution");
        let snapshot = s.snapshot.clone().expect("resolved has a snapshot");
        match compile(resolved, &snapshot) {
            Ok(program) => {
                self.emit(
                    s,
                    EventPayload::ProgramCompiled { program_id: program.program_id.clone(), action_count: program.actions.len() },
                );
                s.program = Some(program);
                self.goto(s, Compiled);
            }
            Err(e) => self.fail(s, format!("the recipe could not be planned: {e}")),
        }
    }

    fn execute(&self, s: &mut Session) {
        let program = s.program.clone().expect("compiled has a program");
        let snapshot = s.snapshot.clone().expect("compiled has a snapshot");
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        self.goto(s, Executing);
        match execute(&program, &snapshot, &self.sim, s.seed, &mut rng) {
            Ok(report) => {
                for action in &report.events {
                    self.emit(s, EventPayload::ActionExecuted { action: action.clone() });
                }
                for trace in &report.traces {
                    self.emit(s, EventPayload::PourTelemetry { telemetry: self.telemetry(trace) });
                }
                self.deplete(&report);
                s.report = Some(report);
            }
            Err(e) => s.exec_error = Some(e.to_string()),
        }
    }

    fn conclude(&self, s: &mut Session) {
        if let Some(e) = s.exec_error.clone() {
            return self.fail(s, format!("the program could not run: {e}"));
        }
        let report = s.report.as_ref().expect("executing has a report");
        if report.succeeded() {
            let name = s.recipe.as_ref().map(|r| r.name.clone()).unwrap_or_default();
            self.say(s, &format!("Your {name} is ready."));
            return self.goto(s, Served);
        }
        let reason = match &report.failure {
            Some(f) => format!("action {} failed: {}", f.action_index, f.message),
            None => "a pour missed its tolerance band".to_string(),
        };
        self.fail(s, reason);
    }

    fn telemetry(&self, trace: &PourTrace) -> PourTelemetry {
        let stride = self.config.telemetry_stride.max(1);
        let mut samples: Vec<[f64; 2]> = trace.samples.iter().step_by(stride).map(|p| [p.t_s, p.filtered_g]).collect();
        if let Some(last) = trace.samples.last() {
            if !(trace.samples.len() - 1).is_multiple_of(stride) {
                samples.push([last.t_s, last.filtered_g]);
            }
        }
        PourTelemetry {
            item_id: trace.item_id.clone(),
            target_mass_g: trace.target_mass_g,
            tolerance: trace.tolerance,
            final_mass_g: trace.outcome.final_mass_g,
            within_tolerance: trace.outcome.within_tolerance,
            samples,
        }
    }

    /// What was poured is no longer on the table.
    fn deplete(&self, report: &ExecutionReport) {
        self.inventory.update(|snap| {
            for (item_id, bottle) in &report.final_state.bottles {
                let used = bottle.initial_ml - bottle.remaining_ml;
                if let Some(item) = snap.items.iter_mut().find(|i| &i.item_id == item_id && i.label == bottle.label) {
                    item.available_ml = (item.available_ml - used).max(0.0);
                }
            }
        });
    }
}

fn unattended(
    rec: &mut Reconciler,
    snapshot: &crate::perception::InventorySnapshot,
    rules: &RuleTable,
    config: &ReconcileConfig,
) -> Result<ResolvedRecipe, String> {
    // Chains of rules take one pass per hop; a final pass may reduce quantities.
    let passes = rec.requirements().len() + 2;
    for _ in 0..passes {
        match rec.finish(snapshot, rules, config) {
            Ok(resolved) => return Ok(resolved),
            Err(outstanding) => rec.apply_rules(&outstanding, snapshot, rules).map_err(|e| e.to_string())?,
        }
    }
    Err("the substitution rules did not converge".into())
}
