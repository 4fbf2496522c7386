use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{sample_index, ResponseModel};
use crate::belief::Persona;
use crate::error::{Error, Result};

/// Rows must sum to one within this tolerance at load time.
pub const TABLE_TOLERANCE: f64 = 1e-6;

/// On-disk layout: `table[probe][response][fact]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularWorldFile {
    pub probes: Vec<String>,
    pub responses: Vec<String>,
    pub table: Vec<Vec<Vec<f64>>>,
}

/// A world with an explicit conditional table `P(t | s, f)`.
///
/// The fact used in a reply is drawn uniformly from the persona, so
/// `P(t | s, F)` is the mean of the persona's columns.
#[derive(Debug, Clone)]
pub struct TabularWorld {
    probes: Vec<String>,
    responses: Vec<String>,
    n_facts: usize,
    // [probe][fact][response], rows contiguous for sampling
    rows: Vec<Vec<Vec<f64>>>,
    probe_index: HashMap<String, usize>,
    response_index: HashMap<String, usize>,
}

impl TabularWorld {
    /// Builds a world from `table[probe][response][fact]`, checking shape and
    /// that every `(probe, fact)` row is a distribution over responses.
    pub fn new(probes: Vec<String>, responses: Vec<String>, table: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if probes.is_empty() || responses.is_empty() {
            return Err(Error::config("tabular world needs at least one probe and one response"));
        }
        if table.len() != probes.len() {
            return Err(Error::config(format!(
                "table has {} probe slices, expected {}",
                table.len(),
                probes.len()
            )));
        }
        let n_facts = table[0].first().map_or(0, Vec::len);
        if n_facts < 2 {
            return Err(Error::config("tabular world needs at least 2 facts"));
        }
        for (s, slice) in table.iter().enumerate() {
            if slice.len() != responses.len() {
                return Err(Error::config(format!(
                    "probe {s} has {} response rows, expected {}",
                    slice.len(),
                    responses.len()
                )));
            }
            for (t, col) in slice.iter().enumerate() {
                if col.len() != n_facts {
                    return Err(Error::config(format!(
                        "entry [{s}][{t}] has {} facts, expected {n_facts}",
                        col.len()
                    )));
                }
                if col.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(Error::config(format!(
                        "entry [{s}][{t}] has a negative or non-finite probability"
                    )));
                }
            }
        }
        let rows: Vec<Vec<Vec<f64>>> = table
            .iter()
            .map(|slice| {
                (0..n_facts)
                    .map(|f| slice.iter().map(|col| col[f]).collect())
                    .collect()
            })
            .collect();
        for (s, by_fact) in rows.iter().enumerate() {
            for (f, row) in by_fact.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > TABLE_TOLERANCE {
                    return Err(Error::Normalization { probe: s, fact: f, sum });
                }
            }
        }
        let probe_index = index_of(&probes, "probe")?;
        let response_index = index_of(&responses, "response")?;
        Ok(Self {
            probes,
            responses,
            n_facts,
            rows,
            probe_index,
            response_index,
        })
    }

    /// A world whose `(probe, fact)` rows are independent flat-Dirichlet
    /// draws. Probes are named `probe-i?`, responses `response-j`.
    pub fn random<R: Rng + ?Sized>(n_facts: usize, n_probes: usize, n_responses: usize, rng: &mut R) -> Result<Self> {
        let probes = (0..n_probes).map(|i| format!("probe-{i}?")).collect();
        let responses = (0..n_responses).map(|j| format!("response-{j}")).collect();
        let table = (0..n_probes)
            .map(|_| {
                // draw rows per fact, then transpose to [response][fact]
                let rows: Vec<Vec<f64>> = (0..n_facts)
                    .map(|_| {
                        let g: Vec<f64> = (0..n_responses).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
                        let total: f64 = g.iter().sum();
                        g.into_iter().map(|x| x / total).collect()
                    })
                    .collect();
                (0..n_responses)
                    .map(|t| rows.iter().map(|row| row[t]).collect())
                    .collect()
            })
            .collect();
        Self::new(probes, responses, table)
    }

    pub fn from_file(file: TabularWorldFile) -> Result<Self> {
        Self::new(file.probes, file.responses, file.table)
    }

    pub fn from_json_str(json: &str, origin: &Path) -> Result<Self> {
        let file: TabularWorldFile = serde_json::from_str(json).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_file(file)
    }

    /// Loads `{"probes": [...], "responses": [...], "table": [[[p, ...], ...], ...]}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&json, path)
    }

    pub fn to_file(&self) -> TabularWorldFile {
        let table = self
            .rows
            .iter()
            .map(|by_fact| {
                (0..self.responses.len())
                    .map(|t| by_fact.iter().map(|row| row[t]).collect())
                    .collect()
            })
            .collect();
        TabularWorldFile {
            probes: self.probes.clone(),
            responses: self.responses.clone(),
            table,
        }
    }

    pub fn probes(&self) -> &[String] {
        &self.probes
    }

    pub fn responses(&self) -> &[String] {
        &self.responses
    }

    /// `P(t | s, f)` by index.
    pub fn probability(&self, s: usize, t: usize, f: usize) -> f64 {
        self.rows[s][f][t]
    }

    /// Largest deviation of any `(probe, fact)` row sum from one.
    pub fn max_row_deviation(&self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn index_of(items: &[String], what: &str) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        if index.insert(item.clone(), i).is_some() {
            return Err(Error::config(format!("duplicate {what} string {item:?}")));
        }
    }
    Ok(index)
}

impl ResponseModel for TabularWorld {
    fn n_facts(&self) -> usize {
        self.n_facts
    }

    fn likelihood_vector(&self, s: &str, t: &str) -> Vec<f64> {
        match (self.probe_index.get(s), self.response_index.get(t)) {
            (Some(&s), Some(&t)) => self.rows[s].iter().map(|row| row[t]).collect(),
            _ => vec![1.0; self.n_facts],
        }
    }

    fn respond(&self, s: &str, persona: &Persona, rng: &mut dyn RngCore) -> Result<String> {
        self.check_persona(persona)?;
        let &s = self
            .probe_index
            .get(s)
            .ok_or_else(|| Error::invalid(format!("probe {s:?} is not in the tabular world")))?;
        let ids = persona.fact_ids();
        let z = ids[rng.gen_range(0..ids.len())];
        let t = sample_index(&self.rows[s][z], rng);
        Ok(self.responses[t].clone())
    }

    fn response_support(&self, s: &str) -> Option<&[String]> {
        self.probe_index.contains_key(s).then_some(self.responses.as_slice())
    }

    fn response_distribution(&self, s: &str, persona: &Persona) -> Option<Vec<f64>> {
        let &s = self.probe_index.get(s)?;
        let k = persona.k() as f64;
        let mut dist = vec![0.0; self.responses.len()];
        for &f in persona.fact_ids() {
            for (d, p) in dist.iter_mut().zip(&self.rows[s][f]) {
                *d += p / k;
            }
        }
        Some(dist)
    }
}
