//! Converts a RAGTruth checkout (`source_info.jsonl` + `response.jsonl`)
//! into evaluation records.

use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;

use super::{Dataset, EvalRecord, HarnessError, LineError};

#[derive(Deserialize)]
struct SourceLine {
    source_id: serde_json::Value,
    #[serde(default)]
    task_type: String,
    source_info: serde_json::Value,
}

#[derive(Deserialize)]
struct Label {
    #[serde(default)]
    label_type: String,
}

#[derive(Deserialize)]
struct ResponseLine {
    id: serde_json::Value,
    source_id: serde_json::Value,
    model: String,
    #[serde(default)]
    temperature: Option<f64>,
    #[serde(default)]
    labels: Vec<Label>,
    response: String,
}

fn id_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// "passage 1: ... passage 2: ..." into its passages.
pub fn split_passages(text: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?im)^\s*passage\s*\d+\s*:\s*").expect("valid regex"));
    let parts: Vec<String> = re.split(text).map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect();
    if parts.is_empty() && !text.trim().is_empty() {
        vec![text.trim().to_string()]
    } else {
        parts
    }
}

/// The conflict datasets a response belongs to; `Other` when none.
pub fn datasets_for(model: &str, label_types: &[&str]) -> Vec<Dataset> {
    let m = model.to_ascii_lowercase();
    let family = if m.starts_with("gpt-4") {
        Some((Dataset::Gpt4Subtle, Dataset::Gpt4Evident))
    } else if m.starts_with("gpt-3.5") {
        Some((Dataset::Gpt35Subtle, Dataset::Gpt35Evident))
    } else {
        None
    };
    let mut out = Vec::new();
    if let Some((subtle, evident)) = family {
        if label_types.iter().any(|l| l.eq_ignore_ascii_case("Subtle Conflict")) {
            out.push(subtle);
        }
        if label_types.iter().any(|l| l.eq_ignore_ascii_case("Evident Conflict")) {
            out.push(evident);
        }
    }
    if out.is_empty() {
        out.push(Dataset::Other);
    }
    out
}

/// QA responses joined with their sources. A response labelled with both
/// conflict kinds is emitted once per dataset.
pub fn convert(source_info: &Path, responses: &Path) -> Result<(Vec<EvalRecord>, Vec<LineError>), HarnessError> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| HarnessError::Io(format!("{}: {e}", p.display())));
    let mut errors = Vec::new();
    let mut sources: HashMap<String, (String, Vec<String>)> = HashMap::new();
    for (i, line) in read(source_info)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s: SourceLine = match serde_json::from_str(line) {
            Ok(s) => s,
            Err(e) => {
                errors.push(LineError::new(i + 1, format!("source_info: {e}")));
                continue;
            }
        };
        if !s.task_type.is_empty() && s.task_type != "QA" {
            continue;
        }
        let question = s.source_info.get("question").and_then(|q| q.as_str());
        let passages = s.source_info.get("passages").and_then(|q| q.as_str());
        match (question, passages) {
            (Some(q), Some(p)) => {
                sources.insert(id_string(&s.source_id), (q.to_string(), split_passages(p)));
            }
            _ => errors.push(LineError::new(i + 1, "source_info: missing question or passages".into())),
        }
    }
    let mut records = Vec::new();
    for (i, line) in read(responses)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: ResponseLine = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                errors.push(LineError::new(i + 1, format!("response: {e}")));
                continue;
            }
        };
        let Some((query, passages)) = sources.get(&id_string(&r.source_id)) else {
            continue;
        };
        let labels: Vec<&str> = r.labels.iter().map(|l| l.label_type.as_str()).collect();
        for dataset in datasets_for(&r.model, &labels) {
            records.push(EvalRecord {
                response_id: id_string(&r.id),
                query: query.clone(),
                passages: passages.clone(),
                model: r.model.clone(),
                original_response: Some(r.response.clone()),
                dataset,
                temperature: r.temperature,
            });
        }
    }
    Ok((records, errors))
}
