//! Discovery-oriented dialogue engine.
//!
//! The engine tracks a posterior over which `k`-subset of a known fact
//! universe describes its interlocutor, and picks each utterance to maximize
//! the expected mutual information between the dialogue and that hidden
//! persona (the *DiscoveryScore*).
//!
//! - [`belief`]: facts, personas, per-turn weights and the subset posterior.
//! - [`responder`]: simulated interlocutors (tabular and grounded) plus the
//!   bot's candidate pool.
//! - [`planner`]: expected-score valuation of candidates and argmax selection.
//! - [`simulation`]: full dialogues, the probe experiment, policy comparison
//!   and report export.

pub mod belief;
pub mod error;
pub mod par;
pub mod planner;
pub mod responder;
pub mod rng;
pub mod simulation;

pub use belief::{
    entropy, prior_entropy, single_turn_weights, BeliefState, DialogueHistory,
    DiscoveryScoreValue, Fact, FactUniverse, Persona, Speaker, SubsetPosterior, TurnWeights,
    Utterance,
};
pub use error::{Error, Result};
pub use par::Execution;
pub use planner::{CandidateValue, PlannerMode, PlannerParams, Selection};
pub use responder::{
    CandidatePool, FreeTextScorer, GroundedResponder, ResponseModel, TabularWorld,
};
