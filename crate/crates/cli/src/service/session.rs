//! One live dialogue between the engine and a human.
//!
//! Everything here is synchronous; the HTTP layer serializes mutations per
//! session and runs them off the async executor.

use std::sync::Arc;

use persona_discovery::planner::select_response;
use persona_discovery::rng::derive_seed;
use persona_discovery::{
    single_turn_weights, BeliefState, DialogueHistory, FreeTextScorer, PlannerParams,
    ResponseModel, Utterance,
};
use serde::{Deserialize, Serialize};

use super::error::ApiError;
use crate::config::World;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Replies are picked from the responder's closed reply set, so
    /// likelihoods are exact.
    #[default]
    Structured,
    /// Replies are typed; likelihoods come from a word-overlap heuristic.
    Freetext,
}

/// Knobs shared by every session of a service.
#[derive(Debug, Clone)]
pub struct SessionSettings {
    pub planner: PlannerParams,
    pub top_m: usize,
    pub scorer: FreeTextScorer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetProbability {
    pub subset: Vec<usize>,
    pub probability: f64,
}

/// What a client sees of the belief after some number of exchanges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefSnapshot {
    pub exchange: usize,
    pub marginals: Vec<f64>,
    pub entropy: f64,
    pub discovery_score: f64,
    pub top_subsets: Vec<SubsetProbability>,
}

impl BeliefSnapshot {
    pub fn of(belief: &BeliefState, top_m: usize) -> persona_discovery::Result<Self> {
        Ok(Self {
            exchange: belief.exchange_count(),
            marginals: belief.fact_marginals()?,
            entropy: belief.posterior_entropy()?,
            discovery_score: belief.discovery_score()?.nats(),
            top_subsets: belief
                .subset_posterior()?
                .top(top_m)
                .into_iter()
                .map(|(subset, probability)| SubsetProbability { subset, probability })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplyOption {
    pub id: usize,
    pub text: String,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplyRequest {
    pub choice_id: Option<usize>,
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ending {
    pub ended_at: String,
    pub final_score: f64,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub world_id: String,
    pub mode: Mode,
    pub k: usize,
    pub seed: u64,
    pub belief: BeliefState,
    /// Completed exchanges only; the pending question is kept apart.
    pub history: DialogueHistory,
    pub pending: String,
    pub options: Option<Vec<String>>,
    /// Snapshot after `j` exchanges at index `j`.
    pub snapshots: Vec<BeliefSnapshot>,
    pub created_at: String,
    pub updated_at: String,
    pub ended: Option<Ending>,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn next_question(
    world: &World,
    belief: &BeliefState,
    mode: Mode,
    seed: u64,
    settings: &SessionSettings,
) -> Result<(String, Option<Vec<String>>), ApiError> {
    let params = PlannerParams {
        seed: derive_seed(seed, &[belief.exchange_count() as u64]),
        ..settings.planner.clone()
    };
    let selection = select_response(belief, world.model.as_ref(), &world.pool, &params)?;
    let options = match mode {
        Mode::Structured => Some(
            world
                .model
                .response_support(&selection.chosen)
                .ok_or_else(|| {
                    ApiError::unprocessable(
                        "no_reply_options",
                        format!("the responder has no closed reply set for {:?}", selection.chosen),
                    )
                })?
                .to_vec(),
        ),
        Mode::Freetext => None,
    };
    Ok((selection.chosen, options))
}

impl Session {
    pub fn create(
        id: String,
        world_id: &str,
        world: &World,
        k: usize,
        mode: Mode,
        seed: u64,
        settings: &SessionSettings,
    ) -> Result<Self, ApiError> {
        let n = world.universe.len();
        if k == 0 {
            return Err(ApiError::bad_request("invalid_k", "k must be at least 1"));
        }
        if k >= n {
            return Err(ApiError::bad_request("invalid_k", "k must be < universe size")
                .with_detail(serde_json::json!({ "k": k, "universe_size": n })));
        }
        let belief = BeliefState::new(Arc::clone(&world.universe), k)?;
        let (pending, options) = next_question(world, &belief, mode, seed, settings)?;
        let snapshot = BeliefSnapshot::of(&belief, settings.top_m)?;
        let t = now();
        Ok(Self {
            id,
            world_id: world_id.to_string(),
            mode,
            k,
            seed,
            belief,
            history: DialogueHistory::new(),
            pending,
            options,
            snapshots: vec![snapshot],
            created_at: t.clone(),
            updated_at: t,
            ended: None,
        })
    }

    pub fn reply_options(&self) -> Option<Vec<ReplyOption>> {
        self.options.as_ref().map(|opts| {
            opts.iter()
                .enumerate()
                .map(|(id, text)| ReplyOption { id, text: text.clone() })
                .collect()
        })
    }

    /// The reply text and its per-fact likelihoods.
    fn interpret(&self, world: &World, reply: &ReplyRequest, scorer: &FreeTextScorer) -> Result<(String, Vec<f64>), ApiError> {
        match (self.mode, reply.choice_id, &reply.text) {
            (Mode::Structured, Some(id), None) => {
                let options = self.options.as_deref().unwrap_or_default();
                let text = options.get(id).ok_or_else(|| {
                    ApiError::bad_request(
                        "invalid_choice",
                        format!("choice_id {id} is out of range (0..{})", options.len()),
                    )
                })?;
                Ok((text.clone(), world.model.likelihood_vector(&self.pending, text)))
            }
            (Mode::Freetext, None, Some(text)) => {
                let text = text.trim();
                if text.is_empty() {
                    return Err(ApiError::bad_request("empty_reply", "reply text must be non-empty"));
                }
                let model: &dyn ResponseModel = world.model.as_ref();
                let l = scorer.likelihood_vector(Some(model), &world.universe, &self.pending, text);
                Ok((text.to_string(), l))
            }
            (Mode::Structured, _, _) => Err(ApiError::bad_request(
                "wrong_reply_kind",
                "structured sessions take exactly one field: choice_id",
            )),
            (Mode::Freetext, _, _) => Err(ApiError::bad_request(
                "wrong_reply_kind",
                "freetext sessions take exactly one field: text",
            )),
        }
    }

    /// Applies one human reply and plans the next question, returning the
    /// new state; `self` is left untouched so a failure changes nothing.
    pub fn reply(&self, world: &World, reply: &ReplyRequest, settings: &SessionSettings) -> Result<Self, ApiError> {
        if self.ended.is_some() {
            return Err(ApiError::conflict("session_ended", "the session has ended"));
        }
        let (text, likelihoods) = self.interpret(world, reply, &settings.scorer)?;
        let mut next = self.clone();
        next.belief = self.belief.update(single_turn_weights(&likelihoods, None)?)?;
        next.history.push(Utterance::bot(self.pending.clone())?)?;
        next.history.push(Utterance::human(text)?)?;
        let (pending, options) = next_question(world, &next.belief, self.mode, self.seed, settings)?;
        next.pending = pending;
        next.options = options;
        next.snapshots.push(BeliefSnapshot::of(&next.belief, settings.top_m)?);
        next.updated_at = now();
        Ok(next)
    }

    pub fn snapshot(&self) -> &BeliefSnapshot {
        self.snapshots.last().expect("a session always has its initial snapshot")
    }
}

/// Rebuilds a session's belief from its transcript, as logged.
pub fn replay_transcript(
    world: &World,
    mode: Mode,
    k: usize,
    history: &DialogueHistory,
    scorer: &FreeTextScorer,
) -> persona_discovery::Result<BeliefState> {
    let model: &dyn ResponseModel = world.model.as_ref();
    history
        .exchanges()
        .into_iter()
        .try_fold(BeliefState::new(Arc::clone(&world.universe), k)?, |b, (s, t)| {
            let l = match mode {
                Mode::Structured => model.likelihood_vector(s, t),
                Mode::Freetext => scorer.likelihood_vector(Some(model), &world.universe, s, t),
            };
            b.update(single_turn_weights(&l, None)?)
        })
}

/// One line of the transcript log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub session_id: String,
    pub world: String,
    pub mode: Mode,
    pub k: usize,
    pub seed: u64,
    pub created_at: String,
    pub ended_at: String,
    pub transcript: Vec<Utterance>,
    /// Score after each exchange; index 0 is the empty dialogue.
    pub scores: Vec<f64>,
    pub final_score: f64,
}

impl TranscriptRecord {
    pub fn of(session: &Session, ending: &Ending) -> Self {
        Self {
            session_id: session.id.clone(),
            world: session.world_id.clone(),
            mode: session.mode,
            k: session.k,
            seed: session.seed,
            created_at: session.created_at.clone(),
            ended_at: ending.ended_at.clone(),
            transcript: session.history.turns().to_vec(),
            scores: session.snapshots.iter().map(|s| s.discovery_score).collect(),
            final_score: ending.final_score,
        }
    }

    pub fn history(&self) -> persona_discovery::Result<DialogueHistory> {
        DialogueHistory::from_turns(self.transcript.clone())
    }
}
