//! Bot-vs-simulated-human experiments.
//!
//! - [`run_dialogue`]: one full dialogue under a bot policy, recording the
//!   DiscoveryScore after every exchange.
//! - [`probe_experiment`]: one probe, one reply, then a persona guess; the
//!   accuracy per probe pool shows how much each kind of utterance reveals.
//! - [`policy_comparison`]: matched dialogue sets per policy, aggregated into
//!   score, detection and utterance-style columns.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{single_turn_weights, BeliefState, DialogueHistory, FactUniverse, Persona, Speaker, Utterance};
use crate::error::{Error, Result};
use crate::par::{try_map_indexed, Execution};
use crate::planner::{select_response, PlannerParams};
use crate::responder::{CandidatePool, ResponseModel, UtteranceTag};
use crate::rng::{self, label};

pub mod report;

pub use report::{export_report, ExportFormat, Fixed, ProbeReport, Report, SimulationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Re-rank the pool by expected DiscoveryScore.
    Discovery,
    /// Uniform draw from the pool each turn.
    Random,
    /// Walk the pool in order, wrapping around.
    #[serde(alias = "fixed-order")]
    FixedOrder,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Discovery => "discovery",
            Policy::Random => "random",
            Policy::FixedOrder => "fixed_order",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discovery" => Ok(Policy::Discovery),
            "random" => Ok(Policy::Random),
            "fixed_order" | "fixed-order" => Ok(Policy::FixedOrder),
            other => Err(Error::config(format!("unknown policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DialogueConfig {
    pub n_exchanges: usize,
    pub planner: PlannerParams,
    /// Who speaks first. A human opener sends `greeting`, which carries no
    /// persona information and is not scored.
    pub opening: Speaker,
    pub greeting: String,
    /// How many top subsets to keep in the result.
    pub top_m: usize,
}

impl Default for DialogueConfig {
    fn default() -> Self {
        Self {
            n_exchanges: 6,
            planner: PlannerParams::default(),
            opening: Speaker::Bot,
            greeting: "hi there".to_string(),
            top_m: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeRecord {
    pub exchange: usize,
    pub bot: String,
    pub human: String,
    /// DiscoveryScore after this exchange.
    pub score: f64,
    /// Planner's value estimate for the chosen utterance (discovery policy).
    pub planned_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueResult {
    pub policy: Policy,
    pub seed: u64,
    pub persona: Vec<usize>,
    pub transcript: DialogueHistory,
    pub exchanges: Vec<ExchangeRecord>,
    /// Score after `j` exchanges at index `j`; index 0 is the empty dialogue.
    pub score_trajectory: Vec<f64>,
    pub final_score: f64,
    pub final_posterior_top: Vec<(Vec<usize>, f64)>,
    /// The posterior has a unique most probable subset and it is the persona.
    pub detected: bool,
}

/// Plays one dialogue between `policy` and a simulated human with persona
/// `persona`. Deterministic in `seed`; the human's random stream depends
/// only on `seed`, never on the policy.
pub fn run_dialogue(
    policy: Policy,
    model: &dyn ResponseModel,
    pool: &CandidatePool,
    universe: &Arc<FactUniverse>,
    persona: &Persona,
    config: &DialogueConfig,
    seed: u64,
) -> Result<DialogueResult> {
    if config.n_exchanges == 0 {
        return Err(Error::config("n_exchanges must be at least 1"));
    }
    if pool.is_empty() {
        return Err(Error::invalid("candidate pool is empty"));
    }
    if model.n_facts() != universe.len() {
        return Err(Error::config(format!(
            "model covers {} facts but the universe has {}",
            model.n_facts(),
            universe.len()
        )));
    }
    model.check_persona(persona)?;
    let mut belief = BeliefState::new(Arc::clone(universe), persona.k())?;
    let mut human_rng = rng::stream(seed, &[label::HUMAN]);
    let mut policy_rng = rng::stream(seed, &[label::POLICY]);

    let mut transcript = DialogueHistory::new();
    if config.opening == Speaker::Human {
        transcript.push(Utterance::human(config.greeting.clone())?)?;
    }
    let mut trajectory = vec![belief.discovery_score()?.nats()];
    let mut exchanges = Vec::with_capacity(config.n_exchanges);
    for j in 0..config.n_exchanges {
        let (bot, planned_value) = match policy {
            Policy::Discovery => {
                let params = PlannerParams {
                    seed: rng::derive_seed(seed, &[label::PLANNER, j as u64]),
                    ..config.planner.clone()
                };
                let sel = select_response(&belief, model, pool, &params)?;
                let v = sel.values[0].mean;
                (sel.chosen, Some(v))
            }
            Policy::Random => (pool.utterances()[policy_rng.gen_range(0..pool.len())].clone(), None),
            Policy::FixedOrder => (pool.utterances()[j % pool.len()].clone(), None),
        };
        let human = model.respond(&bot, persona, &mut human_rng)?;
        belief = belief.update(single_turn_weights(&model.likelihood_vector(&bot, &human), None)?)?;
        let score = belief.discovery_score()?.nats();
        trajectory.push(score);
        transcript.push(Utterance::bot(bot.clone())?)?;
        transcript.push(Utterance::human(human.clone())?)?;
        exchanges.push(ExchangeRecord {
            exchange: j + 1,
            bot,
            human,
            score,
            planned_value,
        });
    }
    let posterior = belief.subset_posterior()?;
    let detected = posterior.unique_argmax().as_deref() == Some(persona.fact_ids());
    Ok(DialogueResult {
        policy,
        seed,
        persona: persona.fact_ids().to_vec(),
        transcript,
        exchanges,
        final_score: *trajectory.last().expect("trajectory starts non-empty"),
        score_trajectory: trajectory,
        final_posterior_top: posterior.top(config.top_m),
        detected,
    })
}

/// Rebuilds the belief implied by a transcript under `model`.
pub fn replay_belief(
    model: &dyn ResponseModel,
    universe: &Arc<FactUniverse>,
    k: usize,
    transcript: &DialogueHistory,
) -> Result<BeliefState> {
    transcript
        .exchanges()
        .into_iter()
        .try_fold(BeliefState::new(Arc::clone(universe), k)?, |b, (s, t)| {
            b.update(single_turn_weights(&model.likelihood_vector(s, t), None)?)
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub pool_name: String,
    pub accuracy: f64,
    pub n_probes: usize,
    pub n_facts: usize,
    pub n_correct: usize,
}

/// For every pool, every probe in it and every sampled true fact: give the
/// simulated human that fact (plus `k - 1` random others), send the probe,
/// update a fresh belief with the reply and check whether the unique most
/// probable persona is the true one.
pub fn probe_experiment(
    pools: &[(String, Vec<String>)],
    model: &dyn ResponseModel,
    universe: &Arc<FactUniverse>,
    n_facts: usize,
    k: usize,
    seed: u64,
    execution: Execution,
) -> Result<Vec<ProbeResult>> {
    let n = universe.len();
    if model.n_facts() != n {
        return Err(Error::config(format!(
            "model covers {} facts but the universe has {n}",
            model.n_facts()
        )));
    }
    if n_facts == 0 || n_facts > n {
        return Err(Error::invalid(format!(
            "n_facts must be in 1..={n}, got {n_facts}"
        )));
    }
    let facts: Vec<usize> = if n_facts == n {
        (0..n).collect()
    } else {
        let mut r = rng::stream(seed, &[label::PROBE]);
        let mut picked = rand::seq::index::sample(&mut r, n, n_facts).into_vec();
        picked.sort_unstable();
        picked
    };
    let empty = BeliefState::new(Arc::clone(universe), k)?;
    let mut results = Vec::with_capacity(pools.len());
    for (pi, (name, probes)) in pools.iter().enumerate() {
        if probes.is_empty() {
            return Err(Error::invalid(format!("probe pool {name:?} is empty")));
        }
        let per_probe = try_map_indexed(execution, probes.len(), |qi| {
            let probe = &probes[qi];
            let mut correct = 0usize;
            for &f in &facts {
                let mut r = rng::stream(seed, &[label::PROBE, pi as u64, qi as u64, f as u64]);
                let persona = persona_with(f, n, k, &mut r)?;
                let reply = model.respond(probe, &persona, &mut r)?;
                let belief = empty.update(single_turn_weights(&model.likelihood_vector(probe, &reply), None)?)?;
                if belief.subset_posterior()?.unique_argmax().as_deref() == Some(persona.fact_ids()) {
                    correct += 1;
                }
            }
            Ok::<_, Error>(correct)
        })?;
        let n_correct: usize = per_probe.iter().sum();
        results.push(ProbeResult {
            pool_name: name.clone(),
            accuracy: n_correct as f64 / (probes.len() * facts.len()) as f64,
            n_probes: probes.len(),
            n_facts: facts.len(),
            n_correct,
        });
    }
    Ok(results)
}

fn persona_with<R: Rng>(f: usize, n: usize, k: usize, rng: &mut R) -> Result<Persona> {
    let mut ids = vec![f];
    if k > 1 {
        let others: Vec<usize> = (0..n).filter(|&g| g != f).collect();
        ids.extend(
            rand::seq::index::sample(rng, others.len(), k - 1)
                .into_iter()
                .map(|i| others[i]),
        );
    }
    Persona::new(ids, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub policy: Policy,
    pub mean_score: f64,
    pub detection_rate: f64,
    /// Percentage of bot utterances that are questions.
    pub pct_questions: f64,
    /// Mean bot utterance length in whitespace tokens.
    pub mean_len: f64,
    pub n: usize,
}

/// Per-dialogue difference between the first policy and another one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    pub baseline: Policy,
    pub other: Policy,
    /// Mean of `score(baseline) - score(other)` over matched dialogues.
    pub mean_diff: f64,
    pub std_error: f64,
    pub detection_diff: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueSummary {
    pub index: usize,
    pub policy: Policy,
    pub persona: Vec<usize>,
    pub final_score: f64,
    pub detected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<PolicyRow>,
    pub paired: Vec<PairedDifference>,
    pub dialogues: Vec<DialogueSummary>,
}

impl ComparisonReport {
    pub fn row(&self, policy: Policy) -> Option<&PolicyRow> {
        self.rows.iter().find(|r| r.policy == policy)
    }

    pub fn paired(&self, other: Policy) -> Option<&PairedDifference> {
        self.paired.iter().find(|p| p.other == other)
    }
}

/// Personas and seeds shared by every policy in a comparison.
pub fn matched_dialogues(n: usize, k: usize, n_dialogues: usize, seed: u64) -> Result<Vec<(Persona, u64)>> {
    (0..n_dialogues)
        .map(|i| {
            let mut r = rng::stream(seed, &[label::PERSONA, i as u64]);
            Ok((Persona::random(n, k, &mut r)?, rng::derive_seed(seed, &[i as u64])))
        })
        .collect()
}

/// Runs `n_dialogues` matched dialogues for every policy. Dialogue `i`
/// has the same persona and the same human random stream under each policy.
#[allow(clippy::too_many_arguments)]
pub fn policy_comparison(
    policies: &[Policy],
    model: &dyn ResponseModel,
    pool: &CandidatePool,
    universe: &Arc<FactUniverse>,
    k: usize,
    n_dialogues: usize,
    config: &DialogueConfig,
    seed: u64,
) -> Result<ComparisonReport> {
    if n_dialogues == 0 {
        return Err(Error::invalid("n_dialogues must be at least 1"));
    }
    if policies.is_empty() {
        return Err(Error::invalid("at least one policy is required"));
    }
    let matched = matched_dialogues(universe.len(), k, n_dialogues, seed)?;
    let mut rows = Vec::new();
    let mut per_policy = Vec::new();
    let mut dialogues = Vec::new();
    for &policy in policies {
        let results = try_map_indexed(config.planner.execution, n_dialogues, |i| {
            let (persona, dseed) = &matched[i];
            run_dialogue(policy, model, pool, universe, persona, config, *dseed)
        })?;
        rows.push(summarize_policy(policy, &results));
        for (i, r) in results.iter().enumerate() {
            dialogues.push(DialogueSummary {
                index: i,
                policy,
                persona: r.persona.clone(),
                final_score: r.final_score,
                detected: r.detected,
            });
        }
        per_policy.push(results);
    }
    let baseline = &per_policy[0];
    let paired = policies
        .iter()
        .zip(&per_policy)
        .skip(1)
        .map(|(&other, results)| paired_difference(policies[0], baseline, other, results))
        .collect();
    Ok(ComparisonReport {
        rows,
        paired,
        dialogues,
    })
}

fn summarize_policy(policy: Policy, results: &[DialogueResult]) -> PolicyRow {
    let n = results.len();
    let bot_turns: Vec<&str> = results
        .iter()
        .flat_map(|r| r.exchanges.iter().map(|e| e.bot.as_str()))
        .collect();
    let questions = bot_turns
        .iter()
        .filter(|u| UtteranceTag::of(u) == UtteranceTag::Question)
        .count();
    let tokens: usize = bot_turns.iter().map(|u| u.split_whitespace().count()).sum();
    let turns = bot_turns.len().max(1) as f64;
    PolicyRow {
        policy,
        mean_score: results.iter().map(|r| r.final_score).sum::<f64>() / n as f64,
        detection_rate: results.iter().filter(|r| r.detected).count() as f64 / n as f64,
        pct_questions: 100.0 * questions as f64 / turns,
        mean_len: tokens as f64 / turns,
        n,
    }
}

fn paired_difference(
    baseline: Policy,
    base: &[DialogueResult],
    other: Policy,
    results: &[DialogueResult],
) -> PairedDifference {
    let diffs: Vec<f64> = base
        .iter()
        .zip(results)
        .map(|(a, b)| a.final_score - b.final_score)
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let std_error = if diffs.len() > 1 {
        (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    let detected = |rs: &[DialogueResult]| rs.iter().filter(|r| r.detected).count() as f64 / n;
    PairedDifference {
        baseline,
        other,
        mean_diff: mean,
        std_error,
        detection_diff: detected(base) - detected(results),
        n: diffs.len(),
    }
}
