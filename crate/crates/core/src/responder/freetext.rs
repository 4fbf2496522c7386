//! Heuristic pseudo-likelihoods for free-form human replies.
//!
//! Live humans do not answer from a closed reply set, so exact likelihoods
//! are unavailable. This scorer uses token overlap between the reply and
//! each fact's text as a stand-in. It is a heuristic, not a probability model.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::belief::{Fact, FactUniverse, LIKELIHOOD_FLOOR};
use crate::responder::ResponseModel;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "do", "for", "i", "i'm", "im", "in",
    "is", "it", "me", "my", "of", "on", "or", "so", "the", "to", "was", "with", "you", "your",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeTextScorer {
    /// Drop common function words before comparing.
    pub drop_stopwords: bool,
    /// How strongly low relevance of the bot's utterance damps partial
    /// matches. Zero disables damping.
    pub relevance_damping: f64,
    pub floor: f64,
}

impl Default for FreeTextScorer {
    fn default() -> Self {
        Self {
            drop_stopwords: true,
            relevance_damping: 1.0,
            floor: LIKELIHOOD_FLOOR,
        }
    }
}

impl FreeTextScorer {
    pub fn tokens(&self, text: &str) -> HashSet<String> {
        text.to_lowercase()
            .split(|c: char| !(c.is_alphanumeric() || c == '\''))
            .filter(|w| !w.is_empty())
            .filter(|w| !self.drop_stopwords || !STOPWORDS.contains(w))
            .map(str::to_owned)
            .collect()
    }

    /// Fraction of the fact's tokens that appear in the reply, in `[0, 1]`.
    pub fn overlap(&self, reply: &str, fact_text: &str) -> f64 {
        let fact = self.tokens(fact_text);
        if fact.is_empty() {
            return 0.0;
        }
        let reply = self.tokens(reply);
        fact.intersection(&reply).count() as f64 / fact.len() as f64
    }

    /// `overlap^(1 + damping · (1 − relevance))`, floored. Full overlap
    /// always scores 1; zero overlap scores the floor.
    pub fn score(&self, relevance: f64, reply: &str, fact: &Fact) -> f64 {
        let overlap = self.overlap(reply, &fact.text);
        let exponent = 1.0 + self.relevance_damping * (1.0 - relevance.clamp(0.0, 1.0));
        overlap.powf(exponent).clamp(self.floor, 1.0)
    }

    /// Pseudo-likelihoods of reply `t` to bot utterance `s` under every fact.
    /// Relevance comes from `model` when it knows `s`, otherwise 1.
    pub fn likelihood_vector(
        &self,
        model: Option<&dyn ResponseModel>,
        universe: &FactUniverse,
        s: &str,
        t: &str,
    ) -> Vec<f64> {
        universe
            .facts()
            .iter()
            .map(|fact| {
                let relevance = model.and_then(|m| m.relevance(s, fact.id)).unwrap_or(1.0);
                self.score(relevance, t, fact)
            })
            .collect()
    }
}
