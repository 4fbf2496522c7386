//! A templated responder with a default "nothing to say" branch.
//!
//! Given a bot utterance `s`, the responder picks which fact to talk about
//! among its persona facts plus a default option, with weights
//! `exp(R[s][f] / τ)` for facts and `exp(r0 / τ)` for the default. A chosen
//! fact is voiced through its template; the default branch emits one of the
//! default replies ("i do not know", ...). With probability `η` the reply is
//! instead drawn uniformly from every possible reply.
//!
//! Irrelevant probes (all relevances near zero) therefore mostly produce
//! default replies, which every fact explains about equally well, so the
//! responder reveals little about itself unless asked something relevant.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{sample_index, ResponseModel};
use crate::belief::Persona;
use crate::error::{Error, Result};

fn default_r0() -> Option<f64> {
    Some(0.5)
}

fn default_tau() -> f64 {
    0.1
}

fn default_eta() -> f64 {
    0.02
}

/// Serialized form of a [`GroundedResponder`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedConfig {
    /// Bot utterances with known relevance.
    pub probes: Vec<String>,
    /// `relevance[probe][fact]` in `[0, 1]`.
    pub relevance: Vec<Vec<f64>>,
    /// One reply string per fact.
    pub templates: Vec<String>,
    #[serde(default)]
    pub default_responses: Vec<String>,
    /// Relevance of the default option; `null` disables it.
    #[serde(default = "default_r0")]
    pub r0: Option<f64>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ReplyKind {
    Template(usize),
    Default,
}

/// Distribution over which persona fact (or the default) a reply will use.
#[derive(Debug, Clone, PartialEq)]
pub struct FactChoice {
    pub facts: Vec<(usize, f64)>,
    pub default: f64,
}

#[derive(Debug, Clone)]
pub struct GroundedResponder {
    config: GroundedConfig,
    probe_index: HashMap<String, usize>,
    replies: Vec<String>,
    reply_index: HashMap<String, ReplyKind>,
}

impl GroundedResponder {
    pub fn new(config: GroundedConfig) -> Result<Self> {
        let n = config.templates.len();
        if n < 2 {
            return Err(Error::config("grounded responder needs at least 2 fact templates"));
        }
        if !(config.tau.is_finite() && config.tau > 0.0) {
            return Err(Error::config(format!("temperature must be > 0, got {}", config.tau)));
        }
        if !(0.0..1.0).contains(&config.eta) {
            return Err(Error::config(format!("emission noise must be in [0, 1), got {}", config.eta)));
        }
        if let Some(r0) = config.r0 {
            if !r0.is_finite() {
                return Err(Error::config("default relevance must be finite"));
            }
            if config.default_responses.is_empty() {
                return Err(Error::config(
                    "default responses are required when the default option is enabled",
                ));
            }
        }
        if config.relevance.len() != config.probes.len() {
            return Err(Error::config(format!(
                "relevance has {} rows, expected one per probe ({})",
                config.relevance.len(),
                config.probes.len()
            )));
        }
        for (s, row) in config.relevance.iter().enumerate() {
            if row.len() != n {
                return Err(Error::config(format!(
                    "relevance row {s} has {} entries, expected {n}",
                    row.len()
                )));
            }
            if row.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(Error::config(format!("relevance row {s} has values outside [0, 1]")));
            }
        }
        let mut probe_index = HashMap::new();
        for (i, p) in config.probes.iter().enumerate() {
            if probe_index.insert(p.clone(), i).is_some() {
                return Err(Error::config(format!("duplicate probe {p:?}")));
            }
        }
        let mut reply_index = HashMap::new();
        let mut replies = Vec::with_capacity(n + config.default_responses.len());
        let kinds = config
            .templates
            .iter()
            .enumerate()
            .map(|(f, t)| (t, ReplyKind::Template(f)))
            .chain(config.default_responses.iter().map(|t| (t, ReplyKind::Default)));
        for (text, kind) in kinds {
            if text.is_empty() {
                return Err(Error::config("reply strings must be non-empty"));
            }
            if reply_index.insert(text.clone(), kind).is_some() {
                return Err(Error::config(format!("reply {text:?} appears more than once")));
            }
            replies.push(text.clone());
        }
        Ok(Self {
            config,
            probe_index,
            replies,
            reply_index,
        })
    }

    pub fn from_json_str(json: &str, origin: &Path) -> Result<Self> {
        let config: GroundedConfig = serde_json::from_str(json).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::new(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&json, path)
    }

    pub fn config(&self) -> &GroundedConfig {
        &self.config
    }

    pub fn template(&self, f: usize) -> &str {
        &self.config.templates[f]
    }

    pub fn default_responses(&self) -> &[String] {
        &self.config.default_responses
    }

    /// Every reply the responder can emit: templates then default replies.
    pub fn replies(&self) -> &[String] {
        &self.replies
    }

    pub fn is_default_reply(&self, t: &str) -> bool {
        self.reply_index.get(t) == Some(&ReplyKind::Default)
    }

    fn relevance_row(&self, s: &str) -> Option<&[f64]> {
        self.probe_index.get(s).map(|&i| self.config.relevance[i].as_slice())
    }

    fn relevance_of(&self, s: &str, f: usize) -> f64 {
        self.relevance_row(s).map_or(0.0, |row| row[f])
    }

    /// Which persona fact (or the default) a reply to `s` will draw on.
    /// Unknown utterances have zero relevance to every fact.
    pub fn fact_choice_distribution(&self, s: &str, persona: &Persona) -> Result<FactChoice> {
        self.check_persona(persona)?;
        let tau = self.config.tau;
        let logits: Vec<f64> = persona
            .fact_ids()
            .iter()
            .map(|&f| self.relevance_of(s, f) / tau)
            .collect();
        let default_logit = self.config.r0.map(|r0| r0 / tau);
        let max = logits
            .iter()
            .copied()
            .chain(default_logit)
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let default_weight = default_logit.map_or(0.0, |l| (l - max).exp());
        let total: f64 = weights.iter().sum::<f64>() + default_weight;
        Ok(FactChoice {
            facts: persona
                .fact_ids()
                .iter()
                .zip(weights)
                .map(|(&f, w)| (f, w / total))
                .collect(),
            default: default_weight / total,
        })
    }

    fn noise_mass(&self) -> f64 {
        self.config.eta / self.replies.len() as f64
    }

    fn default_share(&self) -> f64 {
        let d = self.config.default_responses.len();
        if d == 0 {
            0.0
        } else {
            1.0 / d as f64
        }
    }

    /// `P(choose f)` and `P(choose default)` for the single-fact persona `{f}`.
    fn singleton_choice(&self, s: &str, f: usize) -> (f64, f64) {
        match self.config.r0 {
            None => (1.0, 0.0),
            Some(r0) => {
                let tau = self.config.tau;
                let a = self.relevance_of(s, f) / tau;
                let b = r0 / tau;
                let m = a.max(b);
                let (ea, eb) = ((a - m).exp(), (b - m).exp());
                (ea / (ea + eb), eb / (ea + eb))
            }
        }
    }
}

impl ResponseModel for GroundedResponder {
    fn n_facts(&self) -> usize {
        self.config.templates.len()
    }

    fn likelihood_vector(&self, s: &str, t: &str) -> Vec<f64> {
        let keep = 1.0 - self.config.eta;
        let noise = self.noise_mass();
        let kind = self.reply_index.get(t).copied();
        (0..self.n_facts())
            .map(|f| {
                let (pick_fact, pick_default) = self.singleton_choice(s, f);
                let signal = match kind {
                    Some(ReplyKind::Template(g)) if g == f => pick_fact,
                    Some(ReplyKind::Default) => pick_default * self.default_share(),
                    _ => 0.0,
                };
                if kind.is_some() {
                    keep * signal + noise
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn respond(&self, s: &str, persona: &Persona, rng: &mut dyn RngCore) -> Result<String> {
        let choice = self.fact_choice_distribution(s, persona)?;
        if rng.gen::<f64>() < self.config.eta {
            let i = rng.gen_range(0..self.replies.len());
            return Ok(self.replies[i].clone());
        }
        let weights: Vec<f64> = choice
            .facts
            .iter()
            .map(|&(_, p)| p)
            .chain(std::iter::once(choice.default))
            .collect();
        let pick = sample_index(&weights, rng);
        if pick < choice.facts.len() {
            Ok(self.config.templates[choice.facts[pick].0].clone())
        } else {
            let defaults = &self.config.default_responses;
            Ok(defaults[rng.gen_range(0..defaults.len())].clone())
        }
    }

    fn response_support(&self, _s: &str) -> Option<&[String]> {
        Some(&self.replies)
    }

    fn response_distribution(&self, s: &str, persona: &Persona) -> Option<Vec<f64>> {
        let choice = self.fact_choice_distribution(s, persona).ok()?;
        let keep = 1.0 - self.config.eta;
        let mut dist = vec![self.noise_mass(); self.replies.len()];
        for &(f, p) in &choice.facts {
            dist[f] += keep * p;
        }
        let n = self.n_facts();
        let per_default = keep * choice.default * self.default_share();
        for d in &mut dist[n..] {
            *d += per_default;
        }
        Some(dist)
    }

    fn relevance(&self, s: &str, f: usize) -> Option<f64> {
        Some(self.relevance_of(s, f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn responder(r0: Option<f64>, eta: f64) -> GroundedResponder {
        GroundedResponder::new(GroundedConfig {
            probes: vec!["relevant?".into(), "irrelevant.".into()],
            relevance: vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0; 4]],
            templates: (0..4).map(|f| format!("template {f}")).collect(),
            default_responses: vec!["i do not know".into(), "no idea".into()],
            r0,
            tau: 0.1,
            eta,
        })
        .unwrap()
    }

    #[test]
    fn choice_single_option_without_default() {
        let r = responder(None, 0.0);
        let c = r
            .fact_choice_distribution("relevant?", &Persona::new(vec![0], 4).unwrap())
            .unwrap();
        assert_eq!(c.facts, vec![(0, 1.0)]);
        assert_eq!(c.default, 0.0);
    }

    #[test]
    fn choice_softmax_examples() {
        let r = responder(Some(0.5), 0.0);
        let persona = Persona::new(vec![0, 1], 4).unwrap();
        let c = r.fact_choice_distribution("relevant?", &persona).unwrap();
        let z = 10f64.exp() + 1.0 + 5f64.exp();
        assert_abs_diff_eq!(c.facts[0].1, 10f64.exp() / z, epsilon = 1e-12);
        assert_abs_diff_eq!(c.facts[0].1, 0.9933, epsilon = 1e-4);
        assert_abs_diff_eq!(c.default, 0.0067, epsilon = 1e-4);
        assert_abs_diff_eq!(c.facts[1].1, 4.5e-5, epsilon = 1e-6);

        let c = r.fact_choice_distribution("irrelevant.", &persona).unwrap();
        assert_abs_diff_eq!(c.default, 5f64.exp() / (5f64.exp() + 2.0), epsilon = 1e-12);
        assert_abs_diff_eq!(c.default, 0.9867, epsilon = 1e-4);
        // unknown utterances behave like irrelevant ones
        let u = r.fact_choice_distribution("what?", &persona).unwrap();
        assert_eq!(u, c);
    }

    #[test]
    fn rejects_bad_temperature() {
        let mut cfg = responder(Some(0.5), 0.0).config().clone();
        cfg.tau = 0.0;
        assert!(matches!(GroundedResponder::new(cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn template_reply_is_most_likely_under_its_fact() {
        let r = responder(Some(0.5), 0.02);
        let l = r.likelihood_vector("relevant?", "template 0");
        let argmax = (0..4).max_by(|&a, &b| l[a].total_cmp(&l[b])).unwrap();
        assert_eq!(argmax, 0);
        // a template is most likely under its own fact even when the probe is unrelated
        let l = r.likelihood_vector("irrelevant.", "template 3");
        assert!(l[3] > l[0] && l[3] > l[1] && l[3] > l[2]);
    }

    #[test]
    fn default_reply_to_irrelevant_probe_is_near_uniform() {
        let r = responder(Some(0.5), 0.02);
        let l = r.likelihood_vector("irrelevant.", "i do not know");
        let max = l.iter().copied().fold(0.0, f64::max);
        let min = l.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(max <= 2.0 * min);
    }

    #[test]
    fn distribution_is_normalized_and_matches_likelihood_for_singletons() {
        let r = responder(Some(0.5), 0.02);
        for s in ["relevant?", "irrelevant.", "unknown"] {
            for f in 0..4 {
                let persona = Persona::new(vec![f], 4).unwrap();
                let d = r.response_distribution(s, &persona).unwrap();
                assert_abs_diff_eq!(d.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                for (t, reply) in r.replies().iter().enumerate() {
                    assert_abs_diff_eq!(d[t], r.likelihood_vector(s, reply)[f], epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_reply() {
        let r = responder(Some(0.5), 0.02);
        let persona = Persona::new(vec![0, 2], 4).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| r.respond("relevant?", &persona, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
    }

    #[test]
    fn config_json_defaults() {
        let r = GroundedResponder::from_json_str(
            r#"{"probes":[],"relevance":[],"templates":["a","b"],"default_responses":["?"]}"#,
            Path::new("inline"),
        )
        .unwrap();
        assert_eq!(r.config().r0, Some(0.5));
        assert_eq!(r.config().tau, 0.1);
        assert_eq!(r.config().eta, 0.02);
        let disabled = GroundedResponder::from_json_str(
            r#"{"probes":[],"relevance":[],"templates":["a","b"],"r0":null}"#,
            Path::new("inline"),
        )
        .unwrap();
        assert_eq!(disabled.config().r0, None);
    }
}
