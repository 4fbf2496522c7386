//! Belief tracking over `k`-subsets of a fact universe.
//!
//! Each completed exchange `(s, t)` contributes a normalized weight vector
//! `w(f) = P(t | s, z = f) / Σ_f' P(t | s, z = f')` over the universe. The
//! unnormalized score of a candidate persona `F` after `N` exchanges is
//!
//! ```text
//! score(F) = Π_n Σ_{f ∈ F} w_n(f)
//! ```
//!
//! and the posterior over personas of the known size `k` is that score
//! normalized across all `C(n, k)` subsets. Scores are accumulated as logs so
//! long dialogues do not underflow.

use std::fs;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Likelihoods are clamped to at least this value before normalization.
pub const LIKELIHOOD_FLOOR: f64 = 1e-12;

/// Largest number of subsets the posterior will enumerate.
pub const ENUMERATION_CAP: u64 = 1_000_000;

/// Tolerance used when checking that a distribution is normalized.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub id: usize,
    pub text: String,
}

/// The set of candidate facts a persona is drawn from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactUniverse {
    facts: Vec<Fact>,
}

#[derive(Deserialize)]
struct UniverseFile {
    facts: Vec<Fact>,
}

impl FactUniverse {
    pub fn new(facts: Vec<Fact>) -> Result<Self> {
        if facts.len() < 2 {
            return Err(Error::config(format!(
                "a fact universe needs at least 2 facts, got {}",
                facts.len()
            )));
        }
        for (i, fact) in facts.iter().enumerate() {
            if fact.id != i {
                return Err(Error::config(format!(
                    "fact ids must be dense from 0: position {i} has id {}",
                    fact.id
                )));
            }
            if fact.text.trim().is_empty() {
                return Err(Error::config(format!("fact {i} has empty text")));
            }
        }
        Ok(Self { facts })
    }

    pub fn from_texts<I, S>(texts: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(
            texts
                .into_iter()
                .enumerate()
                .map(|(id, text)| Fact {
                    id,
                    text: text.into(),
                })
                .collect(),
        )
    }

    pub fn from_json_str(json: &str, origin: &Path) -> Result<Self> {
        let file: UniverseFile = serde_json::from_str(json).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::new(file.facts)
    }

    /// Loads `{"facts": [{"id": 0, "text": "..."}, ...]}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&json, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "facts": self.facts }).to_string()
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn fact(&self, id: usize) -> Option<&Fact> {
        self.facts.get(id)
    }
}

/// A hidden persona: a sorted set of fact ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Persona {
    fact_ids: Vec<usize>,
}

impl Persona {
    /// Builds a persona over a universe of `n` facts. Ids are sorted; the
    /// persona must be a proper non-empty subset.
    pub fn new(mut fact_ids: Vec<usize>, n: usize) -> Result<Self> {
        fact_ids.sort_unstable();
        if fact_ids.is_empty() {
            return Err(Error::invalid("persona must contain at least one fact"));
        }
        if fact_ids.len() >= n {
            return Err(Error::invalid(format!(
                "persona size {} must be smaller than the universe size {n}",
                fact_ids.len()
            )));
        }
        if fact_ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("persona contains duplicate fact ids"));
        }
        if let Some(&bad) = fact_ids.iter().find(|&&id| id >= n) {
            return Err(Error::DanglingFact { id: bad, n });
        }
        Ok(Self { fact_ids })
    }

    pub fn fact_ids(&self) -> &[usize] {
        &self.fact_ids
    }

    pub fn k(&self) -> usize {
        self.fact_ids.len()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.fact_ids.binary_search(&id).is_ok()
    }

    /// Draws a uniformly random `k`-subset of `0..n`.
    pub fn random<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Self> {
        if k == 0 || k >= n {
            return Err(Error::invalid(format!("persona size k must be in 1..{n}, got {k}")));
        }
        let ids = rand::seq::index::sample(rng, n, k).into_vec();
        Self::new(ids, n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Bot,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
}

impl Utterance {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(Error::invalid("utterance text must be non-empty"));
        }
        Ok(Self { speaker, text })
    }

    pub fn bot(text: impl Into<String>) -> Result<Self> {
        Self::new(Speaker::Bot, text)
    }

    pub fn human(text: impl Into<String>) -> Result<Self> {
        Self::new(Speaker::Human, text)
    }
}

/// A transcript with strictly alternating speakers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueHistory {
    turns: Vec<Utterance>,
}

impl DialogueHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_turns(turns: Vec<Utterance>) -> Result<Self> {
        let mut history = Self::new();
        for turn in turns {
            history.push(turn)?;
        }
        Ok(history)
    }

    pub fn push(&mut self, utterance: Utterance) -> Result<()> {
        if let Some(last) = self.turns.last() {
            if last.speaker == utterance.speaker {
                return Err(Error::invalid(format!(
                    "speakers must alternate: two consecutive {:?} turns",
                    utterance.speaker
                )));
            }
        }
        self.turns.push(utterance);
        Ok(())
    }

    pub fn turns(&self) -> &[Utterance] {
        &self.turns
    }

    pub fn last(&self) -> Option<&Utterance> {
        self.turns.last()
    }

    /// Number of exchanges, `⌊turns / 2⌋`.
    pub fn exchange_count(&self) -> usize {
        self.turns.len() / 2
    }

    /// Completed (bot, human) pairs in order. A human opening line that has
    /// no preceding bot utterance is skipped.
    pub fn exchanges(&self) -> Vec<(&str, &str)> {
        self.turns
            .windows(2)
            .filter(|w| w[0].speaker == Speaker::Bot && w[1].speaker == Speaker::Human)
            .map(|w| (w[0].text.as_str(), w[1].text.as_str()))
            .collect()
    }
}

/// Normalized single-exchange weights over the universe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnWeights {
    w: Vec<f64>,
}

impl TurnWeights {
    pub fn uniform(n: usize) -> Self {
        Self {
            w: vec![1.0 / n as f64; n],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// True when every entry is identical, i.e. the exchange carries no
    /// information about the persona.
    pub fn is_uniform(&self) -> bool {
        self.w.windows(2).all(|p| p[0] == p[1])
    }
}

/// Turns raw likelihoods `P(t | s, z = f)` into normalized weights, optionally
/// weighted by a prior `P(z = f | s)` (uniform when absent).
pub fn single_turn_weights(likelihoods: &[f64], prior: Option<&[f64]>) -> Result<TurnWeights> {
    let n = likelihoods.len();
    if n == 0 {
        return Err(Error::invalid("likelihood vector is empty"));
    }
    if let Some(bad) = likelihoods.iter().find(|l| !l.is_finite() || **l < 0.0) {
        return Err(Error::invalid(format!(
            "likelihoods must be finite and nonnegative, got {bad}"
        )));
    }
    let mut w: Vec<f64> = likelihoods.iter().map(|&l| l.max(LIKELIHOOD_FLOOR)).collect();
    if let Some(prior) = prior {
        if prior.len() != n {
            return Err(Error::invalid(format!(
                "prior has length {}, likelihoods have length {n}",
                prior.len()
            )));
        }
        if prior.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("prior must be finite and nonnegative"));
        }
        if prior.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("prior has no mass"));
        }
        for (wi, &p) in w.iter_mut().zip(prior) {
            *wi = (*wi * p).max(LIKELIHOOD_FLOOR);
        }
    }
    let total: f64 = w.iter().sum();
    for wi in &mut w {
        *wi /= total;
    }
    Ok(TurnWeights { w })
}

/// `C(n, k)` in exact integer arithmetic.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// All `k`-subsets of `0..n` in lexicographic order, stored flat.
#[derive(Debug)]
pub struct SubsetIndex {
    n: usize,
    k: usize,
    members: Vec<u32>,
}

impl SubsetIndex {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        let count = binomial(n, k);
        if count > ENUMERATION_CAP as u128 {
            return Err(Error::Capacity {
                count,
                cap: ENUMERATION_CAP,
            });
        }
        let mut members = Vec::with_capacity(count as usize * k);
        let mut current: Vec<u32> = (0..k as u32).collect();
        loop {
            members.extend_from_slice(&current);
            // advance to the next combination
            let mut i = k;
            loop {
                if i == 0 {
                    return Ok(Self { n, k, members });
                }
                i -= 1;
                if (current[i] as usize) < n - k + i {
                    break;
                }
            }
            current[i] += 1;
            for j in i + 1..k {
                current[j] = current[j - 1] + 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.members.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn subset(&self, i: usize) -> &[u32] {
        &self.members[i * self.k..(i + 1) * self.k]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[u32]> + '_ {
        self.members.chunks_exact(self.k)
    }

    /// Position of a sorted subset in lexicographic order.
    pub fn position(&self, ids: &[usize]) -> Option<usize> {
        if ids.len() != self.k {
            return None;
        }
        let mut rank = 0u128;
        let mut prev = 0usize;
        for (j, &id) in ids.iter().enumerate() {
            if id >= self.n || (j > 0 && id <= ids[j - 1]) {
                return None;
            }
            let start = if j == 0 { 0 } else { prev + 1 };
            for skipped in start..id {
                rank += binomial(self.n - skipped - 1, self.k - j - 1);
            }
            prev = id;
        }
        Some(rank as usize)
    }

    /// Σ_{f ∈ F} w(f) for subset `i`.
    #[inline]
    pub fn weight_sum(&self, i: usize, w: &[f64]) -> f64 {
        self.subset(i).iter().map(|&f| w[f as usize]).sum()
    }
}

#[derive(Debug)]
struct PosteriorCache {
    subsets: Arc<SubsetIndex>,
    log_scores: Vec<f64>,
    log_post: Vec<f64>,
    post: Vec<f64>,
    entropy: f64,
    cdf: OnceLock<Vec<f64>>,
}

impl PosteriorCache {
    fn from_log_scores(subsets: Arc<SubsetIndex>, log_scores: Vec<f64>) -> Self {
        let max = log_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + log_scores.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
        let log_post: Vec<f64> = log_scores.iter().map(|&l| l - lse).collect();
        let post: Vec<f64> = log_post.iter().map(|&l| l.exp()).collect();
        let entropy = -post
            .iter()
            .zip(&log_post)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, lp)| p * lp)
            .sum::<f64>();
        Self {
            subsets,
            log_scores,
            log_post,
            post,
            entropy: entropy.max(0.0),
            cdf: OnceLock::new(),
        }
    }

    fn cdf(&self) -> &[f64] {
        self.cdf.get_or_init(|| {
            let mut acc = 0.0;
            self.post
                .iter()
                .map(|p| {
                    acc += p;
                    acc
                })
                .collect()
        })
    }
}

/// Mutual information between the dialogue so far and the persona, in nats.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct DiscoveryScoreValue(f64);

impl DiscoveryScoreValue {
    pub fn nats(self) -> f64 {
        self.0
    }
}

/// The engine's belief about the persona, built from a stack of turn weights.
///
/// Values are immutable: [`BeliefState::update`] returns a new belief that
/// shares the subset enumeration with its parent.
#[derive(Debug, Clone)]
pub struct BeliefState {
    universe: Arc<FactUniverse>,
    k: usize,
    turns: Vec<Arc<TurnWeights>>,
    cache: std::result::Result<Arc<PosteriorCache>, u128>,
}

impl BeliefState {
    /// A belief with no exchanges: uniform over all `k`-subsets.
    pub fn new(universe: Arc<FactUniverse>, k: usize) -> Result<Self> {
        let n = universe.len();
        if k == 0 || k >= n {
            return Err(Error::invalid(format!(
                "k must satisfy 1 <= k < universe size ({n}), got {k}"
            )));
        }
        let cache = match SubsetIndex::new(n, k) {
            Ok(subsets) => {
                let count = subsets.len();
                Ok(Arc::new(PosteriorCache::from_log_scores(
                    Arc::new(subsets),
                    vec![0.0; count],
                )))
            }
            Err(Error::Capacity { count, .. }) => Err(count),
            Err(e) => return Err(e),
        };
        Ok(Self {
            universe,
            k,
            turns: Vec::new(),
            cache,
        })
    }

    /// Rebuilds a belief from a full list of turn weights.
    pub fn from_turns(universe: Arc<FactUniverse>, k: usize, turns: Vec<TurnWeights>) -> Result<Self> {
        turns
            .into_iter()
            .try_fold(Self::new(universe, k)?, |belief, w| belief.update(w))
    }

    /// Appends one exchange's weights.
    pub fn update(&self, weights: TurnWeights) -> Result<Self> {
        self.check_weights(&weights)?;
        let cache = match &self.cache {
            Ok(cache) => {
                let w = weights.as_slice();
                let subsets = &cache.subsets;
                let log_scores = cache
                    .log_scores
                    .iter()
                    .enumerate()
                    .map(|(i, &ls)| ls + subsets.weight_sum(i, w).ln())
                    .collect();
                Ok(Arc::new(PosteriorCache::from_log_scores(
                    Arc::clone(subsets),
                    log_scores,
                )))
            }
            Err(count) => Err(*count),
        };
        let mut turns = self.turns.clone();
        turns.push(Arc::new(weights));
        Ok(Self {
            universe: Arc::clone(&self.universe),
            k: self.k,
            turns,
            cache,
        })
    }

    fn check_weights(&self, weights: &TurnWeights) -> Result<()> {
        if weights.len() != self.universe.len() {
            return Err(Error::invalid(format!(
                "turn weights have length {}, universe has {} facts",
                weights.len(),
                self.universe.len()
            )));
        }
        Ok(())
    }

    fn cache(&self) -> Result<&PosteriorCache> {
        match &self.cache {
            Ok(cache) => Ok(cache),
            Err(count) => Err(Error::Capacity {
                count: *count,
                cap: ENUMERATION_CAP,
            }),
        }
    }

    pub fn universe(&self) -> &Arc<FactUniverse> {
        &self.universe
    }

    pub fn n(&self) -> usize {
        self.universe.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn turns(&self) -> impl ExactSizeIterator<Item = &TurnWeights> {
        self.turns.iter().map(|t| t.as_ref())
    }

    pub fn exchange_count(&self) -> usize {
        self.turns.len()
    }

    /// The subset enumeration and normalized posterior, in lexicographic order.
    pub fn posterior_parts(&self) -> Result<(&SubsetIndex, &[f64])> {
        let cache = self.cache()?;
        Ok((&cache.subsets, &cache.post))
    }

    /// Unnormalized subset scores `ln Π_n Σ_{f∈F} w_n(f)`.
    pub fn log_scores(&self) -> Result<&[f64]> {
        Ok(&self.cache()?.log_scores)
    }

    pub fn subset_posterior(&self) -> Result<SubsetPosterior> {
        let cache = self.cache()?;
        Ok(SubsetPosterior {
            subsets: Arc::clone(&cache.subsets),
            probs: cache.post.clone(),
        })
    }

    /// `m(f) = Σ_{F ∋ f} P(F | h)`.
    pub fn fact_marginals(&self) -> Result<Vec<f64>> {
        let cache = self.cache()?;
        let mut m = vec![0.0; self.n()];
        for (subset, &p) in cache.subsets.iter().zip(&cache.post) {
            for &f in subset {
                m[f as usize] += p;
            }
        }
        Ok(m)
    }

    pub fn posterior_entropy(&self) -> Result<f64> {
        Ok(self.cache()?.entropy)
    }

    pub fn discovery_score(&self) -> Result<DiscoveryScoreValue> {
        let h = self.posterior_entropy()?;
        Ok(clamp_score(prior_entropy(self.n(), self.k)? - h, self.n(), self.k))
    }

    /// DiscoveryScore of the belief that would result from appending
    /// `weights`, computed without materializing the updated belief.
    pub fn score_after(&self, weights: &TurnWeights) -> Result<DiscoveryScoreValue> {
        self.check_weights(weights)?;
        if weights.is_uniform() {
            return self.discovery_score();
        }
        let cache = self.cache()?;
        let w = weights.as_slice();
        let mut z = 0.0;
        let mut a = 0.0;
        for (i, (&p, &lp)) in cache.post.iter().zip(&cache.log_post).enumerate() {
            if p > 0.0 {
                let s = cache.subsets.weight_sum(i, w);
                let ps = p * s;
                z += ps;
                a += ps * (lp + s.ln());
            }
        }
        let h = (z.ln() - a / z).max(0.0);
        Ok(clamp_score(prior_entropy(self.n(), self.k)? - h, self.n(), self.k))
    }

    /// Draws a persona from the current subset posterior.
    pub fn sample_subset<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Persona> {
        let cache = self.cache()?;
        let cdf = cache.cdf();
        let total = *cdf.last().expect("posterior is non-empty");
        let u = rng.gen::<f64>() * total;
        let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        let ids = cache.subsets.subset(idx).iter().map(|&f| f as usize).collect();
        Persona::new(ids, self.n())
    }
}

fn clamp_score(raw: f64, n: usize, k: usize) -> DiscoveryScoreValue {
    let max = binomial(n, k) as f64;
    DiscoveryScoreValue(raw.clamp(0.0, max.ln()))
}

/// A normalized distribution over `k`-subsets in lexicographic order.
#[derive(Debug, Clone)]
pub struct SubsetPosterior {
    subsets: Arc<SubsetIndex>,
    probs: Vec<f64>,
}

impl SubsetPosterior {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn subsets(&self) -> &SubsetIndex {
        &self.subsets
    }

    pub fn iter(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        self.subsets
            .iter()
            .zip(&self.probs)
            .map(|(s, &p)| (s.iter().map(|&f| f as usize).collect(), p))
    }

    pub fn probability_of(&self, ids: &[usize]) -> Option<f64> {
        self.subsets.position(ids).map(|i| self.probs[i])
    }

    /// The `m` most probable subsets, descending; equal probabilities keep
    /// lexicographic order.
    pub fn top(&self, m: usize) -> Vec<(Vec<usize>, f64)> {
        let mut order: Vec<usize> = (0..self.probs.len()).collect();
        order.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        order
            .into_iter()
            .take(m)
            .map(|i| {
                (
                    self.subsets.subset(i).iter().map(|&f| f as usize).collect(),
                    self.probs[i],
                )
            })
            .collect()
    }

    /// The most probable subset if it beats the runner-up by more than a
    /// relative 1e-9; ties yield `None`.
    pub fn unique_argmax(&self) -> Option<Vec<usize>> {
        let top = self.top(2);
        match top.as_slice() {
            [(best, _)] => Some(best.clone()),
            [(best, p1), (_, p2)] if *p2 < p1 * (1.0 - 1e-9) => Some(best.clone()),
            _ => None,
        }
    }
}

/// Shannon entropy in nats, `0 · ln 0 = 0`.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    if dist.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::invalid("distribution has negative or non-finite entries"));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::invalid(format!(
            "distribution is not normalized: sums to {total}"
        )));
    }
    let h = -dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>();
    Ok(h.max(0.0))
}

/// Entropy of the uniform prior over `k`-subsets, `ln C(n, k)`.
pub fn prior_entropy(n: usize, k: usize) -> Result<f64> {
    if k == 0 || k >= n {
        return Err(Error::invalid(format!(
            "prior entropy needs 1 <= k < n, got n = {n}, k = {k}"
        )));
    }
    Ok(ln_binomial(n, k))
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    let c = binomial(n, k);
    if c < (1u128 << 53) {
        (c as f64).ln()
    } else {
        let k = k.min(n - k);
        (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
    }
}
