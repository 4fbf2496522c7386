//! Bit-stable report files.
//!
//! Every real number is written with exactly six decimals and fields always
//! appear in the same order, so identical inputs give identical bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::ser::Error as _;
use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

use super::{ComparisonReport, DialogueResult, ProbeResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Json,
    Csv,
    Jsonl,
}

impl ExportFormat {
    /// Picks the format from a file extension, defaulting to JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => ExportFormat::Csv,
            Some("jsonl") => ExportFormat::Jsonl,
            _ => ExportFormat::Json,
        }
    }
}

/// A real number written with six decimals.
#[derive(Debug, Clone, Copy)]
pub struct Fixed(pub f64);

impl Fixed {
    pub fn text(self) -> String {
        let s = format!("{:.6}", self.0);
        if s == "-0.000000" {
            "0.000000".to_string()
        } else {
            s
        }
    }
}

impl Serialize for Fixed {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(S::Error::custom(format!("cannot export non-finite value {}", self.0)));
        }
        RawValue::from_string(self.text())
            .map_err(S::Error::custom)?
            .serialize(serializer)
    }
}

fn fixed_vec(xs: &[f64]) -> Vec<Fixed> {
    xs.iter().copied().map(Fixed).collect()
}

fn json_err(e: serde_json::Error) -> Error {
    Error::invalid(format!("report serialization failed: {e}"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv serialization failed: {e}"))
}

/// Something that can be written as a report file.
pub trait Report {
    fn to_json(&self) -> Result<Vec<u8>>;
    fn to_csv(&self) -> Result<Vec<u8>>;
    fn to_jsonl(&self) -> Result<Vec<u8>>;

    fn render(&self, format: ExportFormat) -> Result<Vec<u8>> {
        match format {
            ExportFormat::Json => self.to_json(),
            ExportFormat::Csv => self.to_csv(),
            ExportFormat::Jsonl => self.to_jsonl(),
        }
    }
}

/// Writes `report` to `path` in `format`.
pub fn export_report(report: &dyn Report, path: impl AsRef<Path>, format: ExportFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = report.render(format)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

fn json_document<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value).map_err(json_err)?;
    out.push(b'\n');
    Ok(out)
}

fn json_lines<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item).map_err(json_err)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::invalid(format!("csv flush failed: {e}")))
}

#[derive(Serialize)]
struct RowOut<'a> {
    policy: &'a str,
    mean_score: Fixed,
    detection_rate: Fixed,
    pct_questions: Fixed,
    mean_len: Fixed,
    n: usize,
}

#[derive(Serialize)]
struct PairedOut<'a> {
    baseline: &'a str,
    other: &'a str,
    mean_diff: Fixed,
    std_error: Fixed,
    detection_diff: Fixed,
    n: usize,
}

#[derive(Serialize)]
struct DialogueOut<'a> {
    index: usize,
    policy: &'a str,
    persona: &'a [usize],
    final_score: Fixed,
    detected: bool,
}

#[derive(Serialize)]
struct ComparisonOut<'a> {
    rows: Vec<RowOut<'a>>,
    paired: Vec<PairedOut<'a>>,
    dialogues: Vec<DialogueOut<'a>>,
}

impl ComparisonReport {
    fn rows_out(&self) -> Vec<RowOut<'_>> {
        self.rows
            .iter()
            .map(|r| RowOut {
                policy: r.policy.name(),
                mean_score: Fixed(r.mean_score),
                detection_rate: Fixed(r.detection_rate),
                pct_questions: Fixed(r.pct_questions),
                mean_len: Fixed(r.mean_len),
                n: r.n,
            })
            .collect()
    }
}

impl Report for ComparisonReport {
    fn to_json(&self) -> Result<Vec<u8>> {
        json_document(&ComparisonOut {
            rows: self.rows_out(),
            paired: self
                .paired
                .iter()
                .map(|p| PairedOut {
                    baseline: p.baseline.name(),
                    other: p.other.name(),
                    mean_diff: Fixed(p.mean_diff),
                    std_error: Fixed(p.std_error),
                    detection_diff: Fixed(p.detection_diff),
                    n: p.n,
                })
                .collect(),
            dialogues: self
                .dialogues
                .iter()
                .map(|d| DialogueOut {
                    index: d.index,
                    policy: d.policy.name(),
                    persona: &d.persona,
                    final_score: Fixed(d.final_score),
                    detected: d.detected,
                })
                .collect(),
        })
    }

    fn to_csv(&self) -> Result<Vec<u8>> {
        csv_table(
            &["policy", "mean_score", "detection_rate", "pct_questions", "mean_len", "n"],
            self.rows.iter().map(|r| {
                vec![
                    r.policy.name().to_string(),
                    Fixed(r.mean_score).text(),
                    Fixed(r.detection_rate).text(),
                    Fixed(r.pct_questions).text(),
                    Fixed(r.mean_len).text(),
                    r.n.to_string(),
                ]
            }),
        )
    }

    fn to_jsonl(&self) -> Result<Vec<u8>> {
        json_lines(self.rows_out())
    }
}

#[derive(Serialize)]
struct ExchangeOut<'a> {
    exchange: usize,
    bot: &'a str,
    human: &'a str,
    score: Fixed,
    #[serde(skip_serializing_if = "Option::is_none")]
    planned_value: Option<Fixed>,
}

#[derive(Serialize)]
struct TopOut<'a> {
    subset: &'a [usize],
    probability: Fixed,
}

#[derive(Serialize)]
struct DialogueResultOut<'a> {
    policy: &'a str,
    seed: u64,
    persona: &'a [usize],
    exchanges: Vec<ExchangeOut<'a>>,
    score_trajectory: Vec<Fixed>,
    final_score: Fixed,
    final_posterior_top: Vec<TopOut<'a>>,
    detected: bool,
}

impl DialogueResult {
    fn exchanges_out(&self) -> Vec<ExchangeOut<'_>> {
        self.exchanges
            .iter()
            .map(|e| ExchangeOut {
                exchange: e.exchange,
                bot: &e.bot,
                human: &e.human,
                score: Fixed(e.score),
                planned_value: e.planned_value.map(Fixed),
            })
            .collect()
    }
}

impl DialogueResult {
    fn out(&self) -> DialogueResultOut<'_> {
        DialogueResultOut {
            policy: self.policy.name(),
            seed: self.seed,
            persona: &self.persona,
            exchanges: self.exchanges_out(),
            score_trajectory: fixed_vec(&self.score_trajectory),
            final_score: Fixed(self.final_score),
            final_posterior_top: self
                .final_posterior_top
                .iter()
                .map(|(s, p)| TopOut {
                    subset: s,
                    probability: Fixed(*p),
                })
                .collect(),
            detected: self.detected,
        }
    }
}

impl Report for DialogueResult {
    fn to_json(&self) -> Result<Vec<u8>> {
        json_document(&self.out())
    }

    fn to_csv(&self) -> Result<Vec<u8>> {
        csv_table(
            &["exchange", "bot", "human", "score"],
            self.exchanges.iter().map(|e| {
                vec![
                    e.exchange.to_string(),
                    e.bot.clone(),
                    e.human.clone(),
                    Fixed(e.score).text(),
                ]
            }),
        )
    }

    /// One exchange per line.
    fn to_jsonl(&self) -> Result<Vec<u8>> {
        json_lines(self.exchanges_out())
    }
}

/// A batch of simulated dialogues, in dialogue order.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct SimulationReport {
    pub dialogues: Vec<DialogueResult>,
}

impl Report for SimulationReport {
    fn to_json(&self) -> Result<Vec<u8>> {
        json_document(&self.dialogues.iter().map(DialogueResult::out).collect::<Vec<_>>())
    }

    /// One row per exchange, tagged with its dialogue index.
    fn to_csv(&self) -> Result<Vec<u8>> {
        csv_table(
            &["dialogue", "policy", "seed", "exchange", "bot", "human", "score"],
            self.dialogues.iter().enumerate().flat_map(|(i, d)| {
                d.exchanges.iter().map(move |e| {
                    vec![
                        i.to_string(),
                        d.policy.name().to_string(),
                        d.seed.to_string(),
                        e.exchange.to_string(),
                        e.bot.clone(),
                        e.human.clone(),
                        Fixed(e.score).text(),
                    ]
                })
            }),
        )
    }

    /// One dialogue per line.
    fn to_jsonl(&self) -> Result<Vec<u8>> {
        json_lines(self.dialogues.iter().map(DialogueResult::out))
    }
}

/// Results of one probe experiment, one entry per pool.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ProbeReport {
    pub results: Vec<ProbeResult>,
}

#[derive(Serialize)]
struct ProbeOut<'a> {
    pool: &'a str,
    accuracy: Fixed,
    n_probes: usize,
    n_facts: usize,
    n_correct: usize,
}

impl ProbeReport {
    fn out(&self) -> Vec<ProbeOut<'_>> {
        self.results
            .iter()
            .map(|r| ProbeOut {
                pool: &r.pool_name,
                accuracy: Fixed(r.accuracy),
                n_probes: r.n_probes,
                n_facts: r.n_facts,
                n_correct: r.n_correct,
            })
            .collect()
    }
}

impl Report for ProbeReport {
    fn to_json(&self) -> Result<Vec<u8>> {
        json_document(&serde_json::json!({ "results": self.out() }))
    }

    fn to_csv(&self) -> Result<Vec<u8>> {
        csv_table(
            &["pool", "accuracy", "n_probes", "n_facts", "n_correct"],
            self.results.iter().map(|r| {
                vec![
                    r.pool_name.clone(),
                    Fixed(r.accuracy).text(),
                    r.n_probes.to_string(),
                    r.n_facts.to_string(),
                    r.n_correct.to_string(),
                ]
            }),
        )
    }

    fn to_jsonl(&self) -> Result<Vec<u8>> {
        json_lines(self.out())
    }
}
