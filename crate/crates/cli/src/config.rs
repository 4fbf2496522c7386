//! Experiment and world configuration files.
//!
//! Every file-valued field accepts either a path (relative to the config
//! file's directory) or the content inline.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use persona_discovery::belief::Fact;
use persona_discovery::responder::synthetic::{SyntheticSpec, SyntheticWorld};
use persona_discovery::responder::{GroundedConfig, TabularWorldFile};
use persona_discovery::simulation::{DialogueConfig, Policy};
use persona_discovery::{
    CandidatePool, FactUniverse, GroundedResponder, PlannerParams, ResponseModel, Speaker,
    TabularWorld,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// A fact universe given as a file, a list of texts, or `{"facts": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UniverseSource {
    Path(PathBuf),
    Texts(Vec<String>),
    Facts { facts: Vec<Fact> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Path(PathBuf),
    Inline(T),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorldConfig {
    /// The built-in topic world; no files needed.
    Synthetic(SyntheticSpec),
    Grounded {
        universe: UniverseSource,
        responder: Source<GroundedConfig>,
    },
    Tabular {
        universe: UniverseSource,
        table: Source<TabularWorldFile>,
    },
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig::Synthetic(SyntheticSpec::default())
    }
}

/// A named list of utterances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPool {
    pub name: String,
    pub utterances: Source<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSettings {
    /// Persona size while probing.
    pub k: usize,
    /// How many true facts to test per probe; all of them when unset.
    pub n_facts: Option<usize>,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self { k: 1, n_facts: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    /// Bot utterance pool; the world's own pool when unset.
    pub pool: Option<Source<Vec<String>>>,
    /// Probe pools; the world's own when unset.
    pub probe_pools: Option<Vec<NamedPool>>,
    pub policies: Vec<Policy>,
    pub n_dialogues: usize,
    pub n_exchanges: usize,
    pub k: usize,
    pub opening: Speaker,
    pub planner: PlannerParams,
    pub probe: ProbeSettings,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            pool: None,
            probe_pools: None,
            policies: vec![Policy::Discovery, Policy::Random],
            n_dialogues: 20,
            n_exchanges: 6,
            k: 3,
            opening: Speaker::Bot,
            planner: PlannerParams::default(),
            probe: ProbeSettings::default(),
            seed: 0,
            output: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file; relative paths inside it resolve against its
    /// directory.
    pub fn load(path: &Path) -> CliResult<(Self, PathBuf)> {
        let text = read(path)?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("failed to parse {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((config, base))
    }

    pub fn dialogue_config(&self) -> DialogueConfig {
        DialogueConfig {
            n_exchanges: self.n_exchanges,
            planner: self.planner.clone(),
            opening: self.opening,
            ..DialogueConfig::default()
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.n_dialogues == 0 {
            return bad("n_dialogues must be at least 1");
        }
        if self.n_exchanges == 0 {
            return bad("n_exchanges must be at least 1");
        }
        if self.policies.is_empty() {
            return bad("policies must not be empty");
        }
        self.planner.validate()?;
        Ok(())
    }
}

/// A loaded world, ready for experiments or sessions.
#[derive(Clone)]
pub struct World {
    pub universe: Arc<FactUniverse>,
    pub model: Arc<dyn ResponseModel>,
    pub pool: CandidatePool,
    pub probe_pools: Vec<(String, Vec<String>)>,
}

impl std::fmt::Debug for World {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("World")
            .field("n_facts", &self.universe.len())
            .field("pool", &self.pool.len())
            .field("probe_pools", &self.probe_pools.len())
            .finish()
    }
}

pub(crate) fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn parse_file<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read(path)?)
        .map_err(|e| CliError::Config(format!("failed to parse {}: {e}", path.display())))
}

fn load_source<T: serde::de::DeserializeOwned + Clone>(src: &Source<T>, base: &Path) -> CliResult<T> {
    match src {
        Source::Path(p) => parse_file(&resolve(base, p)),
        Source::Inline(v) => Ok(v.clone()),
    }
}

fn load_universe(src: &UniverseSource, base: &Path) -> CliResult<FactUniverse> {
    Ok(match src {
        UniverseSource::Path(p) => FactUniverse::load(resolve(base, p))?,
        UniverseSource::Texts(texts) => FactUniverse::from_texts(texts.iter().cloned())?,
        UniverseSource::Facts { facts } => FactUniverse::new(facts.clone())?,
    })
}

fn load_pool(src: &Source<Vec<String>>, base: &Path) -> CliResult<CandidatePool> {
    let (pool, dupes) = match src {
        Source::Path(p) => CandidatePool::load(resolve(base, p))?,
        Source::Inline(items) => CandidatePool::with_duplicate_count(items.iter().cloned())?,
    };
    if dupes > 0 {
        log::warn!("dropped {dupes} duplicate utterances from the pool");
    }
    Ok(pool)
}

impl WorldConfig {
    pub fn build(&self, base: &Path) -> CliResult<World> {
        match self {
            WorldConfig::Synthetic(spec) => {
                let w = SyntheticWorld::build(spec)?;
                Ok(World {
                    universe: w.universe,
                    model: Arc::new(w.responder),
                    pool: w.pool,
                    probe_pools: w.probe_pools,
                })
            }
            WorldConfig::Grounded { universe, responder } => {
                let universe = load_universe(universe, base)?;
                let responder = GroundedResponder::new(load_source(responder, base)?)?;
                check_size(&universe, responder.config().templates.len())?;
                let probes = responder.config().probes.clone();
                Ok(World {
                    universe: Arc::new(universe),
                    pool: CandidatePool::new(probes.clone())?,
                    probe_pools: vec![("probes".to_string(), probes)],
                    model: Arc::new(responder),
                })
            }
            WorldConfig::Tabular { universe, table } => {
                let universe = load_universe(universe, base)?;
                let table = TabularWorld::from_file(load_source(table, base)?)?;
                check_size(&universe, table.n_facts())?;
                let probes = table.probes().to_vec();
                Ok(World {
                    universe: Arc::new(universe),
                    pool: CandidatePool::new(probes.clone())?,
                    probe_pools: vec![("probes".to_string(), probes)],
                    model: Arc::new(table),
                })
            }
        }
    }
}

fn check_size(universe: &FactUniverse, model_facts: usize) -> CliResult<()> {
    if universe.len() != model_facts {
        return Err(CliError::Config(format!(
            "universe has {} facts but the responder covers {model_facts}",
            universe.len()
        )));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Loads the world and applies the pool overrides.
    pub fn build_world(&self, base: &Path) -> CliResult<World> {
        let mut world = self.world.build(base)?;
        if let Some(pool) = &self.pool {
            world.pool = load_pool(pool, base)?;
        }
        if let Some(pools) = &self.probe_pools {
            world.probe_pools = pools
                .iter()
                .map(|p| Ok((p.name.clone(), load_pool(&p.utterances, base)?.utterances().to_vec())))
                .collect::<CliResult<_>>()?;
        }
        Ok(world)
    }
}
