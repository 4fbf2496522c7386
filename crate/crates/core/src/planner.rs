//! Discovery-oriented response selection.
//!
//! The value of a candidate bot utterance `s` is the expected DiscoveryScore
//! once `s` and the simulated reply `t` are appended to the dialogue:
//!
//! ```text
//! V(s) = E_{F ~ P(·|h)} E_{t ~ P(·|s,F)} I(F; [h, s, t])
//! ```
//!
//! The inner score is computed from the updated belief, not from the sampled
//! `F`; sampling `F` only serves to draw `t` from the posterior predictive.
//! [`value_of_candidate_exact`] therefore sums over the predictive directly
//! whenever the model has a finite reply set. The chosen utterance is the
//! argmax of `V`, ties going to the lowest pool index.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::belief::{prior_entropy, single_turn_weights, BeliefState, Persona};
use crate::error::{Error, Result};
use crate::par::{try_map_indexed, Execution};
use crate::responder::{CandidatePool, ResponseModel};
use crate::rng::{self, label};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerMode {
    MonteCarlo,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    pub n_candidates: usize,
    pub n_rollouts: usize,
    pub lookahead_depth: usize,
    pub mode: PlannerMode,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            n_candidates: 100,
            n_rollouts: 10,
            lookahead_depth: 1,
            mode: PlannerMode::MonteCarlo,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_rollouts == 0 {
            return Err(Error::config("n_rollouts must be at least 1"));
        }
        if self.n_candidates == 0 {
            return Err(Error::config("n_candidates must be at least 1"));
        }
        if self.lookahead_depth == 0 {
            return Err(Error::config("lookahead_depth must be at least 1"));
        }
        if self.mode == PlannerMode::Exact && self.lookahead_depth > 1 {
            return Err(Error::Unsupported(
                "exact mode only supports one-exchange lookahead".into(),
            ));
        }
        Ok(())
    }
}

/// Estimated value of one candidate, in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateValue {
    pub candidate: String,
    pub pool_index: usize,
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub chosen: String,
    pub chosen_index: usize,
    /// Every evaluated candidate, best first.
    pub values: Vec<CandidateValue>,
}

fn score_after_reply(belief: &BeliefState, model: &dyn ResponseModel, s: &str, t: &str) -> Result<f64> {
    let w = single_turn_weights(&model.likelihood_vector(s, t), None)?;
    Ok(belief.score_after(&w)?.nats())
}

fn bounded(belief: &BeliefState, v: f64) -> Result<f64> {
    Ok(v.clamp(0.0, prior_entropy(belief.n(), belief.k())?))
}

/// Monte-Carlo estimate of `V(s)` from `n_rollouts` draws of `(F, t)`.
pub fn value_of_candidate_mc(
    belief: &BeliefState,
    model: &dyn ResponseModel,
    s: &str,
    n_rollouts: usize,
    rng: &mut dyn RngCore,
) -> Result<CandidateValue> {
    if n_rollouts == 0 {
        return Err(Error::invalid("n_rollouts must be at least 1"));
    }
    let current = belief.discovery_score()?.nats();
    let mut gains = Vec::with_capacity(n_rollouts);
    for _ in 0..n_rollouts {
        let persona = belief.sample_subset(rng)?;
        let t = model.respond(s, &persona, rng)?;
        gains.push(score_after_reply(belief, model, s, &t)? - current);
    }
    summarize(belief, s, current, &gains)
}

fn summarize(belief: &BeliefState, s: &str, current: f64, gains: &[f64]) -> Result<CandidateValue> {
    let n = gains.len() as f64;
    let mean_gain = gains.iter().sum::<f64>() / n;
    let std_error = if gains.len() > 1 {
        let var = gains.iter().map(|g| (g - mean_gain).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(CandidateValue {
        candidate: s.to_string(),
        pool_index: 0,
        mean: bounded(belief, current + mean_gain)?,
        std_error,
        n_samples: gains.len(),
    })
}

/// `P(t | s, belief) = Σ_F P(F | h) P(t | s, F)` over the model's reply set.
pub fn posterior_predictive(belief: &BeliefState, model: &dyn ResponseModel, s: &str) -> Result<Vec<f64>> {
    let support = model
        .response_support(s)
        .ok_or_else(|| Error::Unsupported(format!("model has no finite reply set for {s:?}")))?;
    let (subsets, post) = belief.posterior_parts()?;
    let mut predictive = vec![0.0; support.len()];
    for (subset, &p) in subsets.iter().zip(post) {
        if p == 0.0 {
            continue;
        }
        let persona = Persona::new(subset.iter().map(|&f| f as usize).collect(), belief.n())?;
        let dist = model
            .response_distribution(s, &persona)
            .ok_or_else(|| Error::Unsupported(format!("model has no reply distribution for {s:?}")))?;
        for (acc, q) in predictive.iter_mut().zip(dist) {
            *acc += p * q;
        }
    }
    Ok(predictive)
}

/// `V(s)` in closed form by enumerating the model's finite reply set.
pub fn value_of_candidate_exact(
    belief: &BeliefState,
    model: &dyn ResponseModel,
    s: &str,
) -> Result<CandidateValue> {
    let predictive = posterior_predictive(belief, model, s)?;
    let support = model.response_support(s).expect("checked by posterior_predictive");
    let current = belief.discovery_score()?.nats();
    let total: f64 = predictive.iter().sum();
    let mut gain = 0.0;
    for (t, &p) in support.iter().zip(&predictive) {
        if p > 0.0 {
            gain += p * (score_after_reply(belief, model, s, t)? - current);
        }
    }
    Ok(CandidateValue {
        candidate: s.to_string(),
        pool_index: 0,
        mean: bounded(belief, current + gain / total)?,
        std_error: 0.0,
        n_samples: support.len(),
    })
}

/// Monte-Carlo value over `depth` exchanges: after the first reply, the bot
/// keeps choosing greedily (one-step values) among `candidates` while the
/// sampled persona answers.
pub fn value_of_candidate_lookahead(
    belief: &BeliefState,
    model: &dyn ResponseModel,
    s: &str,
    candidates: &[&str],
    depth: usize,
    n_rollouts: usize,
    rng: &mut dyn RngCore,
) -> Result<CandidateValue> {
    if depth <= 1 {
        return value_of_candidate_mc(belief, model, s, n_rollouts, rng);
    }
    if n_rollouts == 0 {
        return Err(Error::invalid("n_rollouts must be at least 1"));
    }
    let current = belief.discovery_score()?.nats();
    let mut gains = Vec::with_capacity(n_rollouts);
    for _ in 0..n_rollouts {
        let persona = belief.sample_subset(rng)?;
        let mut b = belief.clone();
        let mut utterance = s.to_string();
        for step in 0..depth {
            if step > 0 {
                utterance = greedy_next(&b, model, candidates, n_rollouts, rng)?;
            }
            let t = model.respond(&utterance, &persona, rng)?;
            b = b.update(single_turn_weights(&model.likelihood_vector(&utterance, &t), None)?)?;
        }
        gains.push(b.discovery_score()?.nats() - current);
    }
    summarize(belief, s, current, &gains)
}

fn greedy_next(
    belief: &BeliefState,
    model: &dyn ResponseModel,
    candidates: &[&str],
    n_rollouts: usize,
    rng: &mut dyn RngCore,
) -> Result<String> {
    let mut best: Option<(f64, &str)> = None;
    for &c in candidates {
        let v = if model.response_support(c).is_some() {
            value_of_candidate_exact(belief, model, c)?.mean
        } else {
            value_of_candidate_mc(belief, model, c, n_rollouts, rng)?.mean
        };
        if best.is_none_or(|(bv, _)| v > bv) {
            best = Some((v, c));
        }
    }
    Ok(best.expect("candidate list is non-empty").1.to_string())
}

/// Pool indices to evaluate: all of them, or a seeded uniform sample of
/// `n_candidates` without replacement, in ascending order.
pub fn candidate_indices(pool_len: usize, n_candidates: usize, seed: u64) -> Vec<usize> {
    if pool_len <= n_candidates {
        return (0..pool_len).collect();
    }
    let mut rng = rng::stream(seed, &[label::SUBSAMPLE]);
    let mut picked = rand::seq::index::sample(&mut rng, pool_len, n_candidates).into_vec();
    picked.sort_unstable();
    picked
}

/// Values every (sub-sampled) candidate and returns the argmax.
pub fn select_response(
    belief: &BeliefState,
    model: &dyn ResponseModel,
    pool: &CandidatePool,
    params: &PlannerParams,
) -> Result<Selection> {
    params.validate()?;
    if pool.is_empty() {
        return Err(Error::invalid("candidate pool is empty"));
    }
    let indices = candidate_indices(pool.len(), params.n_candidates, params.seed);
    let texts: Vec<&str> = indices.iter().map(|&i| pool.utterances()[i].as_str()).collect();
    let mut values = try_map_indexed(params.execution, indices.len(), |j| {
        let i = indices[j];
        let s = texts[j];
        let mut rng = rng::stream(params.seed, &[label::PLANNER, i as u64]);
        let mut value = match (params.mode, params.lookahead_depth) {
            (PlannerMode::Exact, _) => value_of_candidate_exact(belief, model, s),
            (PlannerMode::MonteCarlo, 1) => {
                value_of_candidate_mc(belief, model, s, params.n_rollouts, &mut rng)
            }
            (PlannerMode::MonteCarlo, depth) => value_of_candidate_lookahead(
                belief,
                model,
                s,
                &texts,
                depth,
                params.n_rollouts,
                &mut rng,
            ),
        }?;
        value.pool_index = i;
        Ok::<_, Error>(value)
    })?;
    values.sort_by(|a, b| b.mean.total_cmp(&a.mean).then(a.pool_index.cmp(&b.pool_index)));
    let best = &values[0];
    Ok(Selection {
        chosen: best.candidate.clone(),
        chosen_index: best.pool_index,
        values,
    })
}
