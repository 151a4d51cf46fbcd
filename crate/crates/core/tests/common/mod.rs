#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use acurai_core::harness::{load_dataset, Dataset, EvalRecord};
use acurai_core::llm::{LlmClient, ReplayClient};
use serde_json::Value;

pub const CALCIUM_ID: &str = "calcium-magnesium";

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn json(name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(fixture(name)).unwrap()).unwrap()
}

pub fn strings(v: &Value) -> Vec<String> {
    v.as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect()
}

pub fn calcium_record() -> EvalRecord {
    let d = json("calcium_magnesium.json");
    EvalRecord {
        response_id: CALCIUM_ID.into(),
        query: d["query"].as_str().unwrap().into(),
        passages: strings(&d["passages"]),
        model: "unspecified".into(),
        original_response: None,
        dataset: Dataset::Other,
        temperature: None,
    }
}

/// Every paper-quoted record with passages: the four RAGTruth records and
/// the calcium/magnesium example.
pub fn corpus() -> Vec<EvalRecord> {
    let mut records = load_dataset(&fixture("records.jsonl")).unwrap().records;
    records.push(calcium_record());
    records
}

pub fn replay(name: &str) -> Arc<dyn LlmClient> {
    Arc::new(ReplayClient::from_path(&fixture(&format!("cassettes/{name}"))).unwrap())
}
