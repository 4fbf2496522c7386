use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use persona_discovery::par::try_map_indexed;
use persona_discovery::responder::TabularWorldFile;
use persona_discovery::responder::GroundedConfig;
use persona_discovery::simulation::{
    export_report, matched_dialogues, policy_comparison, probe_experiment, run_dialogue,
    ExportFormat, Policy, ProbeReport, Report, SimulationReport,
};
use persona_discovery::{CandidatePool, FactUniverse, GroundedResponder, TabularWorld};
use serde::Serialize;

use crate::config::{read, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::service;

#[derive(Debug, Parser)]
#[command(name = "discover", version, about = "Persona discovery experiments and live sessions")]
pub struct Cli {
    /// Master seed; overrides the config file's.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Experiment (or service) config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file; the extension picks the format (.json, .csv, .jsonl).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Play dialogues and write their transcripts.
    Simulate(SimulateArgs),
    /// Measure how often a single probe reveals the persona.
    Probe,
    /// Compare policies on matched dialogues.
    Compare(CompareArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
    /// Check world, pool, universe and responder files.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Policy to run; every configured policy when unset.
    #[arg(long)]
    pub policy: Option<Policy>,
    #[arg(long)]
    pub n_dialogues: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub n_dialogues: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Address to listen on.
    #[arg(long, env = "DISCOVERY_BIND", default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Append-only JSONL log of ended sessions.
    #[arg(long, env = "DISCOVERY_LOG", default_value = "transcripts.jsonl")]
    pub log: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Tabular world file (`table[probe][response][fact]`).
    #[arg(long)]
    pub world: Option<PathBuf>,
    /// Candidate pool (JSON array or one utterance per line).
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long)]
    pub universe: Option<PathBuf>,
    /// Grounded responder config.
    #[arg(long)]
    pub responder: Option<PathBuf>,
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn experiment(cli: &Cli) -> CliResult<(ExperimentConfig, PathBuf)> {
    let (mut config, base) = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => (ExperimentConfig::default(), PathBuf::new()),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output = Some(out.clone());
    } else if let Some(out) = config.output.take() {
        // outputs named in a config file live next to it
        config.output = Some(if out.is_absolute() { out } else { base.join(out) });
    }
    config.validate()?;
    Ok((config, base))
}

fn emit(report: &dyn Report, output: Option<&Path>) -> CliResult<()> {
    let runtime = |e: persona_discovery::Error| CliError::Runtime(e.to_string());
    match output {
        Some(path) => {
            export_report(report, path, ExportFormat::from_path(path)).map_err(runtime)?;
            log::info!("wrote {}", path.display());
        }
        None => {
            let bytes = report.render(ExportFormat::Json).map_err(runtime)?;
            std::io::stdout()
                .write_all(&bytes)
                .map_err(|e| CliError::Runtime(format!("cannot write to stdout: {e}")))?;
        }
    }
    Ok(())
}

fn execute(cli: Cli) -> CliResult<i32> {
    match &cli.command {
        Command::Simulate(args) => {
            let (mut config, base) = experiment(&cli)?;
            if let Some(n) = args.n_dialogues {
                config.n_dialogues = n;
            }
            let policies = match args.policy {
                Some(p) => vec![p],
                None => config.policies.clone(),
            };
            config.validate()?;
            let world = config.build_world(&base)?;
            let dialogue = config.dialogue_config();
            let matched = matched_dialogues(world.universe.len(), config.k, config.n_dialogues, config.seed)?;
            let mut dialogues = Vec::new();
            for policy in policies {
                dialogues.extend(try_map_indexed(config.planner.execution, matched.len(), |i| {
                    let (persona, seed) = &matched[i];
                    run_dialogue(policy, world.model.as_ref(), &world.pool, &world.universe, persona, &dialogue, *seed)
                })?);
            }
            emit(&SimulationReport { dialogues }, config.output.as_deref())?;
            Ok(0)
        }
        Command::Probe => {
            let (config, base) = experiment(&cli)?;
            let world = config.build_world(&base)?;
            let n_facts = config.probe.n_facts.unwrap_or(world.universe.len());
            let results = probe_experiment(
                &world.probe_pools,
                world.model.as_ref(),
                &world.universe,
                n_facts,
                config.probe.k,
                config.seed,
                config.planner.execution,
            )?;
            emit(&ProbeReport { results }, config.output.as_deref())?;
            Ok(0)
        }
        Command::Compare(args) => {
            let (mut config, base) = experiment(&cli)?;
            if let Some(n) = args.n_dialogues {
                config.n_dialogues = n;
            }
            config.validate()?;
            let world = config.build_world(&base)?;
            let report = policy_comparison(
                &config.policies,
                world.model.as_ref(),
                &world.pool,
                &world.universe,
                config.k,
                config.n_dialogues,
                &config.dialogue_config(),
                config.seed,
            )?;
            emit(&report, config.output.as_deref())?;
            Ok(0)
        }
        Command::Serve(args) => {
            let config = match &cli.config {
                Some(path) => service::ServiceConfig::load(path)?,
                None => (service::ServiceConfig::default(), PathBuf::new()),
            };
            service::serve(config, &args.bind, args.log.clone())?;
            Ok(0)
        }
        Command::Validate(args) => validate(args, cli.out.as_deref()),
    }
}

#[derive(Debug, Serialize)]
struct FileCheck {
    path: PathBuf,
    kind: &'static str,
    valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_row_deviation: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    problems: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<String>,
}

fn check(path: &Path, kind: &'static str) -> FileCheck {
    FileCheck {
        path: path.to_path_buf(),
        kind,
        valid: true,
        max_row_deviation: None,
        problems: Vec::new(),
        summary: None,
    }
}

impl FileCheck {
    fn fail(&mut self, problem: impl Into<String>) {
        self.valid = false;
        self.problems.push(problem.into());
    }
}

fn check_world(path: &Path) -> CliResult<FileCheck> {
    let mut c = check(path, "world");
    let file: TabularWorldFile = match serde_json::from_str(&read(path)?) {
        Ok(f) => f,
        Err(e) => {
            c.fail(format!("parse error: {e}"));
            return Ok(c);
        }
    };
    // report every bad row, not just the first
    let mut worst: f64 = 0.0;
    for (s, per_response) in file.table.iter().enumerate() {
        let n_facts = per_response.first().map_or(0, Vec::len);
        for f in 0..n_facts {
            let sum: f64 = per_response.iter().filter_map(|row| row.get(f)).sum();
            worst = worst.max((sum - 1.0).abs());
            if (sum - 1.0).abs() > persona_discovery::responder::TABLE_TOLERANCE {
                c.fail(format!("probe {s}, fact {f}: row sums to {sum}"));
            }
        }
    }
    c.max_row_deviation = Some(worst);
    match TabularWorld::from_file(file) {
        Ok(w) => {
            c.summary = Some(format!(
                "{} probes, {} responses, {} facts",
                w.probes().len(),
                w.responses().len(),
                persona_discovery::ResponseModel::n_facts(&w)
            ))
        }
        Err(e) if c.valid => c.fail(e.to_string()),
        Err(_) => {}
    }
    Ok(c)
}

fn validate(args: &ValidateArgs, out: Option<&Path>) -> CliResult<i32> {
    let mut checks = Vec::new();
    if let Some(path) = &args.world {
        checks.push(check_world(path)?);
    }
    if let Some(path) = &args.pool {
        let mut c = check(path, "pool");
        match CandidatePool::parse(&read(path)?, path) {
            Ok((pool, dupes)) => {
                c.summary = Some(format!("{} utterances", pool.len()));
                if dupes > 0 {
                    c.problems.push(format!("{dupes} duplicate utterances would be dropped"));
                }
            }
            Err(e) => c.fail(e.to_string()),
        }
        checks.push(c);
    }
    if let Some(path) = &args.universe {
        let mut c = check(path, "universe");
        match FactUniverse::from_json_str(&read(path)?, path) {
            Ok(u) => c.summary = Some(format!("{} facts", u.len())),
            Err(e) => c.fail(e.to_string()),
        }
        checks.push(c);
    }
    if let Some(path) = &args.responder {
        let mut c = check(path, "responder");
        let parsed = serde_json::from_str::<GroundedConfig>(&read(path)?)
            .map_err(|e| e.to_string())
            .and_then(|cfg| GroundedResponder::new(cfg).map_err(|e| e.to_string()));
        match parsed {
            Ok(r) => {
                c.summary = Some(format!(
                    "{} probes, {} facts, {} default replies",
                    r.config().probes.len(),
                    r.config().templates.len(),
                    r.default_responses().len()
                ))
            }
            Err(e) => c.fail(e),
        }
        checks.push(c);
    }
    if checks.is_empty() {
        return Err(CliError::Config(
            "validate needs at least one of --world, --pool, --universe, --responder".into(),
        ));
    }
    let mut bytes = serde_json::to_vec_pretty(&checks).map_err(|e| CliError::Runtime(e.to_string()))?;
    bytes.push(b'\n');
    match out {
        Some(path) => std::fs::write(path, &bytes)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?,
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| CliError::Runtime(e.to_string()))?,
    }
    Ok(if checks.iter().all(|c| c.valid) { 0 } else { 2 })
}
