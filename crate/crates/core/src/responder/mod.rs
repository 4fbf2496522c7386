//! Models of the human interlocutor and the bot's utterance pool.
//!
//! A [`ResponseModel`] supplies two things: the per-fact likelihood
//! `P(t | s, z = f)` consumed by belief updates, and the generative draw
//! `t ~ P(· | s, F)` used by rollouts and simulated humans, where
//!
//! ```text
//! P(t | s, F) = Σ_z P(t | s, z) P(z | s, F)
//! ```

use rand::RngCore;

use crate::belief::Persona;
use crate::error::{Error, Result};

mod freetext;
mod grounded;
mod pool;
pub mod synthetic;
mod tabular;

pub use freetext::FreeTextScorer;
pub use grounded::{FactChoice, GroundedConfig, GroundedResponder};
pub use pool::{CandidatePool, UtteranceTag};
pub use tabular::{TabularWorld, TabularWorldFile, TABLE_TOLERANCE};

/// Behavioral contract for a simulated human.
pub trait ResponseModel: Send + Sync {
    /// Size of the fact universe the model is defined over.
    fn n_facts(&self) -> usize;

    /// `P(t | s, z = f)` for every fact `f`. Unknown `(s, t)` pairs yield a
    /// constant vector.
    fn likelihood_vector(&self, s: &str, t: &str) -> Vec<f64>;

    /// Draws a reply to `s` from a human whose persona is `persona`.
    fn respond(&self, s: &str, persona: &Persona, rng: &mut dyn RngCore) -> Result<String>;

    /// The finite set of replies the model can emit for `s`, when it has one.
    fn response_support(&self, _s: &str) -> Option<&[String]> {
        None
    }

    /// `P(t | s, F)` over [`ResponseModel::response_support`], in the same order.
    fn response_distribution(&self, _s: &str, _persona: &Persona) -> Option<Vec<f64>> {
        None
    }

    /// How relevant `s` is to fact `f`, in `[0, 1]`, when the model knows.
    fn relevance(&self, _s: &str, _f: usize) -> Option<f64> {
        None
    }

    fn check_persona(&self, persona: &Persona) -> Result<()> {
        let n = self.n_facts();
        if let Some(&bad) = persona.fact_ids().iter().find(|&&id| id >= n) {
            return Err(Error::DanglingFact { id: bad, n });
        }
        Ok(())
    }
}

impl<M: ResponseModel + ?Sized> ResponseModel for std::sync::Arc<M> {
    fn n_facts(&self) -> usize {
        (**self).n_facts()
    }
    fn likelihood_vector(&self, s: &str, t: &str) -> Vec<f64> {
        (**self).likelihood_vector(s, t)
    }
    fn respond(&self, s: &str, persona: &Persona, rng: &mut dyn RngCore) -> Result<String> {
        (**self).respond(s, persona, rng)
    }
    fn response_support(&self, s: &str) -> Option<&[String]> {
        (**self).response_support(s)
    }
    fn response_distribution(&self, s: &str, persona: &Persona) -> Option<Vec<f64>> {
        (**self).response_distribution(s, persona)
    }
    fn relevance(&self, s: &str, f: usize) -> Option<f64> {
        (**self).relevance(s, f)
    }
}

/// Samples an index from nonnegative weights that sum to `total`.
pub(crate) fn sample_index(weights: &[f64], rng: &mut dyn RngCore) -> usize {
    use rand::Rng;
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    // rounding can leave u marginally above the last bucket
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}
