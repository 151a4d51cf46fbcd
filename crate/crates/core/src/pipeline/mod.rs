//! One query end to end: placeholders, collision split, fact sets,
//! verified synthesis, composition, remapping and the output gate.

mod compose;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::collision::{
    CollisionConfig, CollisionDetector, CollisionError, CollisionPair, HttpEmbeddingConfig, HttpEmbeddingProvider,
    OfflineNgramProvider,
};
use crate::faithfulness::{check_response, check_response_with, FaithfulnessConfig, FaithfulnessReport, SourceIndex, NO_FACTS_NOTICE};
use crate::fff::{FactExtractor, FffConfig, QueryPacket};
use crate::llm::{record_replay_key, ChatRequest, LlmClient, LlmError, Message};
use crate::nlp::{expand_coordination, extract_noun_phrases, NounPhrase};
use crate::placeholder::{apply_placeholders, detect_protected_spans_in, remap, PlaceholderError, PlaceholderTable, RemapReport, DEFAULT_PREFIX};
use crate::query_split::{split_query_capped, AtomicQuery, QuerySplit, MAX_ATOMIC_QUERIES};

pub use compose::{compose_response, title_line, ComposeOptions};

const SYNTHESIS_SYSTEM: &str = include_str!("../../resources/prompts/synthesis_system.txt");
const RETRY_TEMPLATE: &str = include_str!("../../resources/prompts/synthesis_retry.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSettings {
    pub model: String,
    pub temperature: f64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            model: "gpt-4-0613".into(),
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSettings {
    /// `offline-ngram-v1`, or `http` with `http` settings.
    pub provider: String,
    pub threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub http: Option<HttpEmbeddingConfig>,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        Self {
            provider: OfflineNgramProvider::ID.into(),
            threshold: CollisionConfig::default().threshold,
            http: None,
        }
    }
}

impl PartialEq for EmbeddingSettings {
    fn eq(&self, other: &Self) -> bool {
        self.provider == other.provider && self.threshold == other.threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub llm: LlmSettings,
    pub embedding: EmbeddingSettings,
    pub split_cap: usize,
    /// Re-asks after a failed check before falling back to the facts.
    pub retry_budget: usize,
    pub compose: ComposeOptions,
    pub placeholder_prefix: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            llm: LlmSettings::default(),
            embedding: EmbeddingSettings::default(),
            split_cap: MAX_ATOMIC_QUERIES,
            retry_budget: 2,
            compose: ComposeOptions::default(),
            placeholder_prefix: DEFAULT_PREFIX.into(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let t = self.embedding.threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(PipelineError::InvalidConfig(format!("threshold {t} is outside (0, 1]")));
        }
        if self.split_cap == 0 {
            return Err(PipelineError::InvalidConfig("split_cap must be at least 1".into()));
        }
        if !(self.llm.temperature >= 0.0) {
            return Err(PipelineError::InvalidConfig("temperature must be >= 0".into()));
        }
        if self.placeholder_prefix.is_empty() || !self.placeholder_prefix.chars().all(|c| c.is_ascii_uppercase()) {
            return Err(PipelineError::InvalidConfig("placeholder_prefix must be upper-case letters".into()));
        }
        Ok(())
    }

    /// The collision detector these settings describe.
    pub fn detector(&self) -> Result<CollisionDetector, PipelineError> {
        let config = CollisionConfig {
            threshold: self.embedding.threshold,
            ..CollisionConfig::default()
        };
        match self.embedding.provider.as_str() {
            OfflineNgramProvider::ID => Ok(CollisionDetector::new(Arc::new(OfflineNgramProvider::default()), config)),
            "http" => {
                let http = self
                    .embedding
                    .http
                    .clone()
                    .ok_or_else(|| PipelineError::InvalidConfig("embedding.http is required for the http provider".into()))?;
                Ok(CollisionDetector::new(Arc::new(HttpEmbeddingProvider::new(http)?), config))
            }
            other => Err(PipelineError::InvalidConfig(format!("unknown embedding provider {other:?}"))),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Collision(#[from] CollisionError),
    #[error(transparent)]
    Placeholder(#[from] PlaceholderError),
    #[error("llm unavailable: {source}")]
    Llm {
        source: LlmError,
        partial: Box<PipelineTrace>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunVerdict {
    Faithful,
    FaithfulVacuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerSource {
    Llm,
    /// Bullet list of the fact-set statements.
    FactFallback,
    /// Bullet list of the source sentences behind the statements.
    SourceFallback,
    NoFacts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request_key: String,
    pub request: ChatRequest,
    pub response: String,
    /// Check of the response against the fact set.
    pub report: FaithfulnessReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTrace {
    pub atomic_query: String,
    pub exchanges: Vec<Exchange>,
    pub retries_used: usize,
    pub source: AnswerSource,
    /// The chosen answer, placeholders still in place.
    pub answer: String,
    /// Check of the remapped answer against the original passages.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub passage_report: Option<FaithfulnessReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub query: String,
    pub passages: Vec<String>,
    pub config: PipelineConfig,
    pub embedding_provider: String,
    pub placeholder_table: PlaceholderTable,
    pub rewritten_query: String,
    pub rewritten_passages: Vec<String>,
    pub collision_pairs: Vec<CollisionPair>,
    pub split: Option<QuerySplit>,
    pub packets: Vec<QueryPacket>,
    pub queries: Vec<QueryTrace>,
    pub remap: RemapReport,
    pub final_report: Option<FaithfulnessReport>,
    pub verdict: Option<RunVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub response: String,
    pub trace: PipelineTrace,
    /// Milliseconds per stage; kept out of the trace so traces replay
    /// byte-identically.
    pub timings: BTreeMap<String, u64>,
}

/// A configured pipeline; cheap to share across threads.
#[derive(Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    llm: Arc<dyn LlmClient>,
    detector: CollisionDetector,
}

fn bullets<'a>(lines: impl IntoIterator<Item = &'a str>) -> String {
    let mut seen = Vec::new();
    for l in lines {
        let l = l.trim();
        if !l.is_empty() && !seen.contains(&l) {
            seen.push(l);
        }
    }
    seen.iter().map(|l| format!("- {l}")).collect::<Vec<_>>().join("\n")
}

fn ms(since: Instant) -> u64 {
    since.elapsed().as_millis() as u64
}

impl Pipeline {
    pub fn new(config: PipelineConfig, llm: Arc<dyn LlmClient>, detector: CollisionDetector) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self { config, llm, detector })
    }

    /// Builds the detector from `config.embedding`.
    pub fn from_config(config: PipelineConfig, llm: Arc<dyn LlmClient>) -> Result<Self, PipelineError> {
        config.validate()?;
        let detector = config.detector()?;
        Self::new(config, llm, detector)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn synthesize(&self, packet: &QueryPacket) -> Result<QueryTrace, LlmError> {
        let query = &packet.atomic_query.text;
        let fact_set = &packet.fact_set;
        let mut trace = QueryTrace {
            atomic_query: query.clone(),
            exchanges: Vec::new(),
            retries_used: 0,
            source: AnswerSource::NoFacts,
            answer: NO_FACTS_NOTICE.into(),
            passage_report: None,
        };
        if fact_set.is_empty() {
            return Ok(trace);
        }
        let sources: Vec<String> = fact_set
            .sections
            .iter()
            .map(|s| s.statements.iter().map(|st| st.text.as_str()).collect::<Vec<_>>().join("\n"))
            .collect();
        let index = SourceIndex::new(&sources, FaithfulnessConfig::default());
        let mut messages = vec![
            Message::system(SYNTHESIS_SYSTEM.trim_end()),
            Message::user(format!("{query}\n\n{}", fact_set.render())),
        ];
        for attempt in 0..=self.config.retry_budget {
            let request = ChatRequest::new(self.config.llm.model.clone(), self.config.llm.temperature, messages.clone());
            let response = self.llm.chat(&request)?;
            let report = check_response_with(&response.content, &index);
            let accepted = report.is_faithful() && !report.statement_results.is_empty();
            let violations: Vec<String> = report.unsupported().map(|r| format!("- {}", r.response_statement)).collect();
            trace.exchanges.push(Exchange {
                request_key: record_replay_key(&request),
                request,
                response: response.content.clone(),
                report,
            });
            trace.retries_used = attempt;
            if accepted {
                trace.source = AnswerSource::Llm;
                trace.answer = response.content.trim().to_string();
                return Ok(trace);
            }
            let violations = if violations.is_empty() { "- (empty answer)".to_string() } else { violations.join("\n") };
            messages.push(Message::assistant(response.content));
            messages.push(Message::user(RETRY_TEMPLATE.trim_end().replace("{violations}", &violations)));
        }
        warn!(query = %query, "answer failed verification after retries; using the facts verbatim");
        trace.source = AnswerSource::FactFallback;
        trace.answer = bullets(fact_set.statements().map(|s| s.text.as_str()));
        Ok(trace)
    }

    /// Re-checks a query's answer against the original passages and steps
    /// down to the verbatim source sentences when it does not hold.
    fn gate(&self, trace: &mut QueryTrace, packet: &QueryPacket, table: &PlaceholderTable, passages: &[String]) {
        if trace.source == AnswerSource::NoFacts {
            return;
        }
        let index = SourceIndex::new(passages, FaithfulnessConfig::default());
        let passes = |answer: &str| {
            let (text, report) = remap(answer, table);
            let check = check_response_with(&text, &index);
            (!report.degraded && check.is_faithful(), check)
        };
        let (ok, report) = passes(&trace.answer);
        trace.passage_report = Some(report);
        if ok {
            return;
        }
        if trace.source == AnswerSource::Llm {
            let facts = bullets(packet.fact_set.statements().map(|s| s.text.as_str()));
            let (ok, report) = passes(&facts);
            if ok {
                trace.source = AnswerSource::FactFallback;
                trace.answer = facts;
                trace.passage_report = Some(report);
                return;
            }
        }
        let sources = bullets(packet.fact_set.statements().map(|s| s.source_text.as_str()));
        let (_, report) = passes(&sources);
        trace.source = AnswerSource::SourceFallback;
        trace.answer = sources;
        trace.passage_report = Some(report);
    }

    pub fn run(&self, query: &str, passages: &[String]) -> Result<RunOutput, PipelineError> {
        let started = Instant::now();
        let mut timings = BTreeMap::new();
        if query.trim().is_empty() {
            return Err(PipelineError::InvalidInput("query is empty".into()));
        }
        if passages.is_empty() || passages.iter().all(|p| p.trim().is_empty()) {
            return Err(PipelineError::InvalidInput("at least one passage is required".into()));
        }
        let mut trace = PipelineTrace {
            query: query.to_string(),
            passages: passages.to_vec(),
            config: self.config.clone(),
            embedding_provider: self.detector.provider_id().to_string(),
            ..PipelineTrace::default()
        };

        let t = Instant::now();
        let mut table = PlaceholderTable::with_prefix(&self.config.placeholder_prefix);
        let corpus: Vec<&str> = std::iter::once(query).chain(passages.iter().map(String::as_str)).collect();
        table.reserve_from(corpus.iter().copied());
        let mut rewritten = Vec::with_capacity(corpus.len());
        for text in &corpus {
            let spans = detect_protected_spans_in(text, &corpus);
            rewritten.push(apply_placeholders(text, &spans, &mut table)?);
        }
        let rewritten_query = rewritten.remove(0);
        let rewritten_passages = rewritten;
        trace.placeholder_table = table.clone();
        trace.rewritten_query = rewritten_query.clone();
        trace.rewritten_passages = rewritten_passages.clone();
        timings.insert("placeholders".into(), ms(t));

        let t = Instant::now();
        let nps: Vec<NounPhrase> = extract_noun_phrases(&rewritten_query).iter().flat_map(expand_coordination).collect();
        let pairs = self.detector.detect(&nps)?;
        trace.collision_pairs = pairs.clone();
        timings.insert("collisions".into(), ms(t));

        let t = Instant::now();
        let split = split_query_capped(&rewritten_query, &pairs, self.config.split_cap);
        trace.split = Some(split.clone());
        timings.insert("split".into(), ms(t));

        let t = Instant::now();
        let extractor = FactExtractor::new(
            self.detector.clone(),
            Some(self.llm.clone()),
            FffConfig {
                model: self.config.llm.model.clone(),
                temperature: 0.0,
                use_llm: true,
            },
        );
        let packets = extractor.build_fact_sets(&rewritten_passages, &split.queries, &table.id)?;
        trace.packets = packets.clone();
        timings.insert("facts".into(), ms(t));

        let t = Instant::now();
        let results: Vec<Result<QueryTrace, LlmError>> = packets.par_iter().map(|p| self.synthesize(p)).collect();
        let mut queries = Vec::with_capacity(results.len());
        for r in results {
            match r {
                Ok(q) => queries.push(q),
                Err(source) => {
                    trace.queries = queries;
                    return Err(PipelineError::Llm {
                        source,
                        partial: Box::new(trace),
                    });
                }
            }
        }
        timings.insert("synthesis".into(), ms(t));

        let t = Instant::now();
        for (q, p) in queries.iter_mut().zip(&packets) {
            self.gate(q, p, &table, passages);
        }
        let answers: Vec<(AtomicQuery, String)> = packets
            .iter()
            .zip(&queries)
            .map(|(p, q)| {
                let mut aq = p.atomic_query.clone();
                aq.parent_query = query.to_string();
                (aq, q.answer.clone())
            })
            .collect();
        let mut details: Vec<Vec<String>> = Vec::new();
        for p in &packets {
            for s in &p.fact_set.sections {
                let mut group: Vec<String> = Vec::new();
                for st in &s.statements {
                    if !group.contains(&st.source_text) {
                        group.push(st.source_text.clone());
                    }
                }
                if !details.contains(&group) {
                    details.push(group);
                }
            }
        }
        let composed = compose_response(&answers, &details, self.config.compose);
        let (mut response, remap_report) = remap(&composed, &table);
        trace.remap = remap_report;
        timings.insert("compose".into(), ms(t));

        let t = Instant::now();
        let mut report = check_response(&response, passages);
        if !report.is_faithful() || trace.remap.degraded {
            warn!("composed response failed the output gate; answering from source sentences");
            for (q, p) in queries.iter_mut().zip(&packets) {
                if q.source != AnswerSource::NoFacts {
                    q.source = AnswerSource::SourceFallback;
                    q.answer = bullets(p.fact_set.statements().map(|s| s.source_text.as_str()));
                }
            }
            let answers: Vec<(AtomicQuery, String)> =
                answers.into_iter().zip(&queries).map(|((aq, _), q)| (aq, q.answer.clone())).collect();
            let composed = compose_response(&answers, &details, self.config.compose);
            let (text, remap_report) = remap(&composed, &table);
            response = text;
            trace.remap = remap_report;
            report = check_response(&response, passages);
        }
        timings.insert("verify".into(), ms(t));

        let vacuous = packets.iter().all(|p| p.fact_set.is_empty());
        trace.verdict = Some(if vacuous { RunVerdict::FaithfulVacuous } else { RunVerdict::Faithful });
        trace.queries = queries;
        trace.final_report = Some(report);
        timings.insert("total".into(), ms(started));
        info!(queries = trace.queries.len(), "pipeline run complete");
        Ok(RunOutput { response, trace, timings })
    }
}

/// Runs one query through a pipeline built from `config`.
pub fn run(
    query: &str,
    passages: &[String],
    config: &PipelineConfig,
    llm: Arc<dyn LlmClient>,
    detector: CollisionDetector,
) -> Result<RunOutput, PipelineError> {
    Pipeline::new(config.clone(), llm, detector)?.run(query, passages)
}
