//! Dataset evaluation: run the pipeline over records, compare its output to
//! the original passages, and summarize with a Wilson interval.

pub mod ragtruth;
mod wilson;

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::collision::CollisionDetector;
use crate::faithfulness::{check_response, Verdict};
use crate::llm::LlmClient;
use crate::pipeline::{Pipeline, PipelineConfig, PipelineTrace};

pub use wilson::{format_bound, format_interval, wilson_interval};

pub const DEFAULT_Z: f64 = 1.96;

/// Model name used in records that do not say which model answered.
pub const UNSPECIFIED_MODEL: &str = "unspecified";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dataset {
    Gpt35Subtle,
    Gpt35Evident,
    Gpt4Subtle,
    Gpt4Evident,
    Other,
}

impl Dataset {
    pub fn as_str(self) -> &'static str {
        match self {
            Dataset::Gpt35Subtle => "gpt35-subtle",
            Dataset::Gpt35Evident => "gpt35-evident",
            Dataset::Gpt4Subtle => "gpt4-subtle",
            Dataset::Gpt4Evident => "gpt4-evident",
            Dataset::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub response_id: String,
    pub query: String,
    pub passages: Vec<String>,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_response: Option<String>,
    pub dataset: Dataset,
    /// Generation temperature from the source dataset, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

impl LineError {
    pub fn new(line: usize, message: String) -> Self {
        Self { line, message }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Io(String),
    #[error("no valid records ({} malformed lines)", errors.len())]
    NoRecords { errors: Vec<LineError> },
    #[error("invalid counts: {successes} successes out of {n}")]
    InvalidCounts { successes: u64, n: u64 },
    #[error("z must be positive and finite, got {0}")]
    InvalidZ(f64),
    #[error("failed to build worker pool: {0}")]
    Pool(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetLoad {
    pub records: Vec<EvalRecord>,
    pub errors: Vec<LineError>,
}

fn check_record(r: &EvalRecord) -> Result<(), String> {
    if r.response_id.trim().is_empty() {
        return Err("empty response_id".into());
    }
    if r.query.trim().is_empty() {
        return Err("empty query".into());
    }
    if r.passages.is_empty() || r.passages.iter().all(|p| p.trim().is_empty()) {
        return Err("no passages".into());
    }
    Ok(())
}

/// Parses JSONL records in file order. Bad lines are reported, not dropped
/// silently; only a file with no usable record is an error.
pub fn parse_dataset(text: &str) -> Result<DatasetLoad, HarnessError> {
    let mut records: Vec<EvalRecord> = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str::<EvalRecord>(line)
            .map_err(|e| e.to_string())
            .and_then(|r| check_record(&r).map(|_| r));
        match record {
            Ok(r) if !seen.insert((r.dataset, r.response_id.clone())) => {
                errors.push(LineError::new(i + 1, format!("duplicate response_id {} in {}", r.response_id, r.dataset.as_str())));
            }
            Ok(r) => records.push(r),
            Err(e) => errors.push(LineError::new(i + 1, e)),
        }
    }
    if records.is_empty() {
        return Err(HarnessError::NoRecords { errors });
    }
    Ok(DatasetLoad { records, errors })
}

pub fn load_dataset(path: &Path) -> Result<DatasetLoad, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    parse_dataset(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordVerdict {
    Faithful,
    Hallucination,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub response_id: String,
    pub dataset: Dataset,
    pub model: String,
    pub verdict: RecordVerdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unsupported: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Set when the record carried no temperature and 0 was used.
    #[serde(default)]
    pub temperature_defaulted: bool,
    #[serde(skip)]
    pub trace: Option<PipelineTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n: u64,
    pub successes: u64,
    pub accuracy: f64,
    pub z: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    /// The interval at two decimals, e.g. "[0.91, 1]".
    pub interval: String,
    pub records: Vec<RecordOutcome>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl EvalSummary {
    pub fn all_faithful(&self) -> bool {
        self.successes == self.n
    }

    fn from_outcomes(records: Vec<RecordOutcome>, z: f64) -> Result<Self, HarnessError> {
        let n = records.len() as u64;
        let successes = records.iter().filter(|r| r.verdict == RecordVerdict::Faithful).count() as u64;
        let (wilson_low, wilson_high) = wilson_interval(successes, n, z)?;
        let defaulted: Vec<&str> = records.iter().filter(|r| r.temperature_defaulted).map(|r| r.response_id.as_str()).collect();
        let flags = if defaulted.is_empty() {
            Vec::new()
        } else {
            vec![format!("temperature defaulted to 0 for {}", defaulted.join(", "))]
        };
        Ok(Self {
            n,
            successes,
            accuracy: successes as f64 / n as f64,
            z,
            wilson_low,
            wilson_high,
            interval: format_interval(wilson_low, wilson_high),
            records,
            flags,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub workers: usize,
    pub z: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { workers: 4, z: DEFAULT_Z }
    }
}

fn evaluate_one(record: &EvalRecord, config: &PipelineConfig, llm: &Arc<dyn LlmClient>, detector: &CollisionDetector) -> RecordOutcome {
    let mut config = config.clone();
    if !record.model.is_empty() && record.model != UNSPECIFIED_MODEL {
        config.llm.model = record.model.clone();
    }
    config.llm.temperature = record.temperature.unwrap_or(0.0);
    let mut outcome = RecordOutcome {
        response_id: record.response_id.clone(),
        dataset: record.dataset,
        model: config.llm.model.clone(),
        verdict: RecordVerdict::Error,
        response: None,
        unsupported: Vec::new(),
        reason: None,
        temperature_defaulted: record.temperature.is_none(),
        trace: None,
    };
    let run = Pipeline::new(config, llm.clone(), detector.clone()).and_then(|p| p.run(&record.query, &record.passages));
    match run {
        Ok(out) => {
            let report = check_response(&out.response, &record.passages);
            outcome.verdict = match report.verdict {
                Verdict::Faithful => RecordVerdict::Faithful,
                Verdict::Hallucination => RecordVerdict::Hallucination,
            };
            outcome.unsupported = report.unsupported().map(|r| r.response_statement.clone()).collect();
            outcome.response = Some(out.response);
            outcome.trace = Some(out.trace);
        }
        Err(e) => {
            warn!(record = %record.response_id, "pipeline failed: {e}");
            outcome.reason = Some(e.to_string());
            if let crate::pipeline::PipelineError::Llm { partial, .. } = e {
                outcome.trace = Some(*partial);
            }
        }
    }
    outcome
}

/// Runs every record through the pipeline and scores the output against
/// the record's original passages. Pipeline failures count as failures.
pub fn evaluate(
    records: &[EvalRecord],
    config: &PipelineConfig,
    llm: Arc<dyn LlmClient>,
    detector: CollisionDetector,
    options: &EvalOptions,
) -> Result<EvalSummary, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::NoRecords { errors: Vec::new() });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let outcomes: Vec<RecordOutcome> =
        pool.install(|| records.par_iter().map(|r| evaluate_one(r, config, &llm, &detector)).collect());
    EvalSummary::from_outcomes(outcomes, options.z)
}

/// Per-record verdicts as CSV.
pub fn write_csv<W: Write>(summary: &EvalSummary, out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["response_id", "dataset", "model", "verdict", "unsupported", "reason"])?;
    for r in &summary.records {
        let verdict = match r.verdict {
            RecordVerdict::Faithful => "faithful",
            RecordVerdict::Hallucination => "hallucination",
            RecordVerdict::Error => "error",
        };
        w.write_record([
            r.response_id.as_str(),
            r.dataset.as_str(),
            r.model.as_str(),
            verdict,
            &r.unsupported.join(" | "),
            r.reason.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{LlmError, ScriptedClient};

    fn record(id: &str) -> EvalRecord {
        EvalRecord {
            response_id: id.into(),
            query: "What is the melting point of calcium and magnesium?".into(),
            passages: vec!["Calcium melts at 842°C.".into(), "Magnesium melts at 650°C.".into()],
            model: UNSPECIFIED_MODEL.into(),
            original_response: None,
            dataset: Dataset::Other,
            temperature: None,
        }
    }

    fn echo() -> Arc<dyn LlmClient> {
        Arc::new(ScriptedClient::new("stub", |r| {
            if r.messages[0].content.starts_with("Rewrite") {
                return Ok(String::new());
            }
            let user = &r.messages[1].content;
            let (_, facts) = user.split_once("\n\n").unwrap();
            Ok(facts.lines().filter(|l| !l.starts_with("Section ")).collect::<Vec<_>>().join(" "))
        }))
    }

    fn detector() -> CollisionDetector {
        PipelineConfig::default().detector().unwrap()
    }

    #[test]
    fn parse_reports_bad_lines() {
        let good = serde_json::to_string(&record("1")).unwrap();
        let missing = r#"{"response_id":"2","query":"q","model":"m","dataset":"other"}"#;
        let text = format!("{good}\n{missing}\n\n{good}\nnot json\n");
        let load = parse_dataset(&text).unwrap();
        assert_eq!(load.records.len(), 1);
        let lines: Vec<usize> = load.errors.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![2, 4, 5]);
        assert!(load.errors[1].message.contains("duplicate"));
        assert!(matches!(parse_dataset(""), Err(HarnessError::NoRecords { .. })));
    }

    #[test]
    fn bundled_records_load() {
        let load = load_dataset(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/records.jsonl")).unwrap();
        let ids: Vec<&str> = load.records.iter().map(|r| r.response_id.as_str()).collect();
        assert_eq!(ids, vec!["7969", "8285", "9824", "9692"]);
        assert!(load.errors.is_empty());
    }

    #[test]
    fn evaluate_scores_and_flags() {
        let mut records = vec![record("a"), record("b")];
        records[1].temperature = Some(0.0);
        let s = evaluate(&records, &PipelineConfig::default(), echo(), detector(), &EvalOptions::default()).unwrap();
        assert_eq!((s.n, s.successes), (2, 2));
        assert_eq!(s.accuracy, 1.0);
        assert!(s.all_faithful());
        assert_eq!(s.flags, vec!["temperature defaulted to 0 for a".to_string()]);
        let mut csv = Vec::new();
        write_csv(&s, &mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("a,other,gpt-4-0613,faithful"));
    }

    #[test]
    fn pipeline_errors_count_as_failures() {
        let failing: Arc<dyn LlmClient> = Arc::new(ScriptedClient::new("stub", |r| {
            if r.messages[0].content.starts_with("Rewrite") {
                Ok(String::new())
            } else {
                Err(LlmError::Timeout)
            }
        }));
        let s = evaluate(&[record("a")], &PipelineConfig::default(), failing, detector(), &EvalOptions::default()).unwrap();
        assert_eq!(s.successes, 0);
        assert_eq!(s.records[0].verdict, RecordVerdict::Error);
        assert!(s.records[0].reason.as_deref().unwrap().contains("timed out"));
        assert!(!s.all_faithful());
        assert!(evaluate(&[], &PipelineConfig::default(), echo(), detector(), &EvalOptions::default()).is_err());
    }
}
