use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Intent;
use crate::corpus::Recipe;
use crate::perception::InventorySnapshot;
use crate::plan::ActionProgram;
use crate::reconcile::{Anomaly, Reconciler, ResolvedRecipe, UserPrompt};
use crate::sim::{ActionEvent, ExecutionReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Ordered,
    Retrieved,
    Reconciling,
    AwaitingUser,
    Resolved,
    Compiled,
    Executing,
    Served,
    Failed,
    Aborted,
}

impl SessionState {
    pub const ALL: [SessionState; 10] = [
        SessionState::Ordered,
        SessionState::Retrieved,
        SessionState::Reconciling,
        SessionState::AwaitingUser,
        SessionState::Resolved,
        SessionState::Compiled,
        SessionState::Executing,
        SessionState::Served,
        SessionState::Failed,
        SessionState::Aborted,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, SessionState::Served | SessionState::Failed | SessionState::Aborted)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SessionState::Ordered => "ordered",
            SessionState::Retrieved => "retrieved",
            SessionState::Reconciling => "reconciling",
            SessionState::AwaitingUser => "awaiting_user",
            SessionState::Resolved => "resolved",
            SessionState::Compiled => "compiled",
            SessionState::Executing => "executing",
            SessionState::Served => "served",
            SessionState::Failed => "failed",
            SessionState::Aborted => "aborted",
        }
    }
}

impl std::fmt::Display for SessionState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

use SessionState::*;

/// Every permitted edge. Aborting is allowed from any non-terminal state.
pub const TRANSITIONS: &[(SessionState, SessionState)] = &[
    (Ordered, Retrieved),
    (Ordered, Failed),
    (Retrieved, Reconciling),
    (Reconciling, AwaitingUser),
    (Reconciling, Resolved),
    (Reconciling, Failed),
    (AwaitingUser, Reconciling),
    (Resolved, Compiled),
    (Resolved, Failed),
    (Compiled, Executing),
    (Executing, Served),
    (Executing, Failed),
    (Ordered, Aborted),
    (Retrieved, Aborted),
    (Reconciling, Aborted),
    (AwaitingUser, Aborted),
    (Resolved, Aborted),
    (Compiled, Aborted),
    (Executing, Aborted),
];

pub fn is_declared(from: SessionState, to: SessionState) -> bool {
    TRANSITIONS.contains(&(from, to))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Stimulus {
    /// Run the next automatic step.
    Proceed,
    Answer { anomaly_id: String, choice: String },
    Abort,
}

/// Reduced pour trace for live display: `[t_s, filtered_g]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PourTelemetry {
    pub item_id: String,
    pub target_mass_g: f64,
    pub tolerance: f64,
    pub final_mass_g: f64,
    pub within_tolerance: bool,
    pub samples: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventPayload {
    OrderReceived { text: String, intent: Intent },
    StateChanged { from: SessionState, to: SessionState },
    RecipeRetrieved { recipe_id: String, recipe_name: String, score: f64 },
    AnomaliesDetected { anomalies: Vec<Anomaly> },
    Prompt { prompt: UserPrompt },
    SpeechOut { text: String },
    AnswerReceived { anomaly_id: String, choice: String },
    RecipeResolved { resolved: ResolvedRecipe },
    ProgramCompiled { program_id: String, action_count: usize },
    ActionExecuted { action: ActionEvent },
    PourTelemetry { telemetry: PourTelemetry },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    /// Starts at 1 and has no gaps.
    pub seq: u64,
    pub timestamp: String,
    #[serde(flatten)]
    pub payload: EventPayload,
}

/// Terminal (or current) state implied by an event log, or `None` when the log
/// is not a gap-free chain of declared transitions starting at `ordered`.
pub fn replay_state(events: &[SessionEvent]) -> Option<SessionState> {
    let mut state = Ordered;
    for (i, e) in events.iter().enumerate() {
        if e.seq != i as u64 + 1 {
            return None;
        }
        if let EventPayload::StateChanged { from, to } = e.payload {
            if from != state || !is_declared(from, to) {
                return None;
            }
            state = to;
        }
    }
    Some(state)
}

/// One order's progress. Mutated only through the engine.
#[derive(Debug, Clone)]
pub struct Session {
    pub(crate) session_id: String,
    pub(crate) order_text: String,
    pub(crate) intent: Intent,
    pub(crate) seed: u64,
    pub(crate) unattended: bool,
    pub(crate) state: SessionState,
    pub(crate) recipe: Option<Recipe>,
    pub(crate) snapshot: Option<Arc<InventorySnapshot>>,
    pub(crate) reconciler: Option<Reconciler>,
    pub(crate) outstanding: Vec<(Anomaly, UserPrompt)>,
    pub(crate) resolved: Option<ResolvedRecipe>,
    pub(crate) program: Option<ActionProgram>,
    pub(crate) report: Option<ExecutionReport>,
    pub(crate) exec_error: Option<String>,
    pub(crate) failure: Option<String>,
    pub(crate) events: Vec<SessionEvent>,
}

impl Session {
    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn intent(&self) -> &Intent {
        &self.intent
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn recipe(&self) -> Option<&Recipe> {
        self.recipe.as_ref()
    }

    pub fn prompts(&self) -> impl Iterator<Item = &UserPrompt> {
        self.outstanding.iter().map(|(_, p)| p)
    }

    pub fn resolved(&self) -> Option<&ResolvedRecipe> {
        self.resolved.as_ref()
    }

    pub fn program(&self) -> Option<&ActionProgram> {
        self.program.as_ref()
    }

    pub fn report(&self) -> Option<&ExecutionReport> {
        self.report.as_ref()
    }

    pub fn failure(&self) -> Option<&str> {
        self.failure.as_deref()
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn events_since(&self, since: u64) -> &[SessionEvent] {
        let start = (since as usize).min(self.events.len());
        &self.events[start..]
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            session_id: self.session_id.clone(),
            state: self.state,
            order_text: self.order_text.clone(),
            intent: self.intent.clone(),
            seed: self.seed,
            recipe_id: self.recipe.as_ref().map(|r| r.id.clone()),
            recipe_name: self.recipe.as_ref().map(|r| r.name.clone()),
            prompts: self.prompts().cloned().collect(),
            resolved: self.resolved.clone(),
            program_id: self.program.as_ref().map(|p| p.program_id.clone()),
            served_mass_g: self.report.as_ref().map(|r| r.final_state.glass_arm.glass_mass_g),
            failure: self.failure.clone(),
            event_count: self.events.len() as u64,
        }
    }
}

/// Serializable summary of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub state: SessionState,
    pub order_text: String,
    pub intent: Intent,
    pub seed: u64,
    pub recipe_id: Option<String>,
    pub recipe_name: Option<String>,
    pub prompts: Vec<UserPrompt>,
    pub resolved: Option<ResolvedRecipe>,
    pub program_id: Option<String>,
    pub served_mass_g: Option<f64>,
    pub failure: Option<String>,
    pub event_count: u64,
}
