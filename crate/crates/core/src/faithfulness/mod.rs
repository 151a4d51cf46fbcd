//! Statement-level support checking of a response against its sources.

mod normalize;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::nlp::{extract_noun_phrases, split_sentences, Lexicon, NpKind};

pub use normalize::{normalize, normalize_tokens, unescape, Class, NormText, NormToken};

/// Shown instead of an answer when a query has no supporting facts; never
/// checked as a claim.
pub const NO_FACTS_NOTICE: &str = "No supporting facts found.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaithfulnessConfig {
    /// Minimum share of the statement's content words one source window
    /// must contain.
    pub coverage: f64,
    /// Consecutive source sentences that may jointly support a statement.
    pub window: usize,
}

impl Default for FaithfulnessConfig {
    fn default() -> Self {
        Self {
            coverage: 0.8,
            window: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Faithful,
    Hallucination,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Supported,
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatementResult {
    pub response_statement: String,
    pub status: Status,
    pub best_match: Option<String>,
    pub score: f64,
    /// Why the statement failed, empty when supported.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub verdict: Verdict,
    pub statement_results: Vec<StatementResult>,
    pub normalizations_applied: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl FaithfulnessReport {
    pub fn unsupported(&self) -> impl Iterator<Item = &StatementResult> {
        self.statement_results.iter().filter(|r| r.status == Status::Unsupported)
    }

    pub fn is_faithful(&self) -> bool {
        self.verdict == Verdict::Faithful
    }
}

fn strip_markdown(line: &str) -> &str {
    let mut l = line.trim();
    for bullet in ["- ", "* ", "• ", "+ "] {
        if let Some(rest) = l.strip_prefix(bullet) {
            l = rest.trim_start();
        }
    }
    let digits = l.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 && l[digits..].starts_with(". ") {
        l = l[digits + 2..].trim_start();
    }
    l
}

pub fn is_heading(line: &str) -> bool {
    let l = line.trim();
    if l.is_empty() {
        return false;
    }
    if l.starts_with('#') || (l.starts_with("**") && l.ends_with("**") && l.len() > 4) {
        return true;
    }
    let bare = l.trim_matches('*').trim().trim_end_matches(':').trim();
    if bare.eq_ignore_ascii_case("specifics") {
        return true;
    }
    if let Some(n) = bare.strip_prefix("Detail ") {
        return !n.is_empty() && n.chars().all(|c| c.is_ascii_digit());
    }
    false
}

/// Declarative statements of `response`, without headings, bullets or the
/// no-facts notice.
pub fn segment_response(response: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in response.lines() {
        if is_heading(line) {
            continue;
        }
        let line = strip_markdown(line);
        if line.is_empty() || line == NO_FACTS_NOTICE {
            continue;
        }
        for s in split_sentences(line) {
            if s.text.chars().any(char::is_alphanumeric) && s.text != NO_FACTS_NOTICE {
                out.push(s.text);
            }
        }
    }
    out
}

/// A source sentence with its normalized form.
#[derive(Debug, Clone)]
struct SourceSentence {
    text: String,
    norm: NormText,
}

/// Pre-normalized sources, reusable across many statements.
#[derive(Debug, Clone)]
pub struct SourceIndex {
    /// Sentences grouped by source.
    groups: Vec<Vec<SourceSentence>>,
    /// Content keys of each source's leading "Topic:" header, if any.
    topics: Vec<BTreeSet<String>>,
    config: FaithfulnessConfig,
}

struct Window<'a> {
    sentences: &'a [SourceSentence],
    topic: &'a BTreeSet<String>,
}

/// Keys of a short "Calcium: Physical Properties." style header. Later
/// sentences of the same source may leave that subject implicit.
fn header_topic(first: Option<&SourceSentence>) -> BTreeSet<String> {
    let Some(first) = first else { return BTreeSet::new() };
    let Some((head, _)) = first.text.split_once(':') else { return BTreeSet::new() };
    if head.split_whitespace().count() > 4 {
        return BTreeSet::new();
    }
    normalize_tokens(head)
        .tokens
        .iter()
        .filter(|t| t.class != Class::Function)
        .map(|t| t.key.clone())
        .collect()
}

impl Window<'_> {
    fn text(&self) -> String {
        self.sentences.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ")
    }

    fn keys(&self) -> BTreeSet<&str> {
        self.sentences
            .iter()
            .flat_map(|s| s.norm.tokens.iter().filter(|t| t.class != Class::Function).map(|t| t.key.as_str()))
            .collect()
    }

    fn attachments(&self) -> Vec<(String, String)> {
        self.sentences.iter().flat_map(|s| s.norm.attachments()).collect()
    }

    fn has_negator(&self) -> bool {
        self.sentences.iter().any(|s| s.norm.tokens.iter().any(|t| t.negator))
    }
}

#[derive(Debug, Clone)]
struct Evaluation {
    supported: bool,
    score: f64,
    reasons: Vec<String>,
}

fn subject_head(statement: &str) -> Option<String> {
    let lex = Lexicon::bundled();
    extract_noun_phrases(statement)
        .into_iter()
        .find(|n| n.kind == NpKind::Base)
        .map(|n| {
            let h = n.head_surface().to_lowercase();
            let lemma = lex.lemma(&h);
            if lemma.is_empty() {
                h
            } else {
                lemma
            }
        })
}

impl SourceIndex {
    pub fn new<S: AsRef<str>>(sources: &[S], config: FaithfulnessConfig) -> Self {
        let groups = sources
            .iter()
            .map(|src| {
                segment_response(src.as_ref())
                    .into_iter()
                    .map(|text| SourceSentence {
                        norm: normalize_tokens(&text),
                        text,
                    })
                    .collect()
            })
            .collect::<Vec<Vec<SourceSentence>>>();
        let topics = groups.iter().map(|g| header_topic(g.first())).collect();
        Self { groups, topics, config }
    }

    pub fn is_empty(&self) -> bool {
        self.groups.iter().all(Vec::is_empty)
    }

    fn windows(&self) -> impl Iterator<Item = Window<'_>> {
        let w = self.config.window.max(1);
        self.groups.iter().zip(&self.topics).flat_map(move |(g, topic)| {
            (0..g.len()).flat_map(move |start| {
                (1..=w)
                    .filter(move |len| start + len <= g.len())
                    .map(move |len| Window {
                        sentences: &g[start..start + len],
                        topic,
                    })
            })
        })
    }

    fn evaluate(&self, stmt: &NormText, subject: Option<&str>, window: &Window) -> Evaluation {
        let mut keys = window.keys();
        if let Some(s) = subject.filter(|s| window.topic.contains(*s)) {
            keys.insert(s);
        }
        let needed: BTreeSet<&str> = stmt
            .tokens
            .iter()
            .filter(|t| t.class != Class::Function)
            .map(|t| t.key.as_str())
            .collect();
        let mut reasons = Vec::new();
        let covered = needed.iter().filter(|k| keys.contains(*k)).count();
        let score = if needed.is_empty() {
            1.0
        } else {
            covered as f64 / needed.len() as f64
        };
        if score < self.config.coverage {
            let missing: Vec<&str> = needed.iter().filter(|k| !keys.contains(*k)).copied().collect();
            reasons.push(format!("uncovered: {}", missing.join(", ")));
        }
        for t in stmt.tokens.iter().filter(|t| t.class == Class::Strict) {
            if !keys.contains(t.key.as_str()) {
                reasons.push(format!("missing exact term: {}", t.key));
            }
        }
        if let Some(subject) = subject {
            let in_stmt = needed.contains(subject);
            if in_stmt && !keys.contains(subject) {
                reasons.push(format!("subject not in source: {subject}"));
            }
        }
        let source_pairs = window.attachments();
        for (a, b) in stmt.attachments() {
            let same = source_pairs.iter().any(|(x, y)| *x == a && *y == b);
            let rival = source_pairs.iter().find(|(x, y)| *x == a && *y != b);
            if let (false, Some((_, c))) = (same, rival) {
                reasons.push(format!("attachment conflict: {a} of {b} (source: {a} of {c})"));
            }
        }
        if !window.has_negator() {
            let toks = &stmt.tokens;
            for (i, t) in toks.iter().enumerate().filter(|(_, t)| t.negator) {
                let target = toks[i + 1..]
                    .iter()
                    .take(3)
                    .find(|n| n.class != Class::Function);
                if let Some(n) = target {
                    if keys.contains(n.key.as_str()) {
                        reasons.push(format!("negation not in source: {} {}", t.key, n.key));
                    }
                }
            }
        }
        Evaluation {
            supported: reasons.is_empty(),
            score,
            reasons,
        }
    }

    /// Best source window for `statement`, and whether it supports it.
    pub fn check(&self, statement: &str) -> (bool, Option<String>, f64, Vec<String>, BTreeSet<&'static str>) {
        let stmt = normalize_tokens(statement);
        let subject = subject_head(&unescape(statement).0);
        let mut best: Option<(Evaluation, String)> = None;
        for w in self.windows() {
            let e = self.evaluate(&stmt, subject.as_deref(), &w);
            let better = match &best {
                None => true,
                Some((b, _)) => (e.supported, e.score) > (b.supported, b.score),
            };
            if better {
                let done = e.supported && e.score >= 1.0;
                best = Some((e, w.text()));
                if done {
                    break;
                }
            }
        }
        let mut applied = stmt.applied.clone();
        match best {
            Some((e, text)) => {
                for g in &self.groups {
                    for s in g {
                        if text.contains(&s.text) {
                            applied.extend(s.norm.applied.iter());
                        }
                    }
                }
                (e.supported, Some(text), e.score, e.reasons, applied)
            }
            None => (false, None, 0.0, vec!["no sources".into()], applied),
        }
    }
}

/// `(supported, best_match, score)` for one statement against `sources`.
pub fn is_supported<S: AsRef<str>>(statement: &str, sources: &[S]) -> (bool, Option<String>, f64) {
    let index = SourceIndex::new(sources, FaithfulnessConfig::default());
    let (ok, best, score, _, _) = index.check(statement);
    (ok, best, score)
}

pub fn check_response<S: AsRef<str>>(response: &str, sources: &[S]) -> FaithfulnessReport {
    check_response_with(response, &SourceIndex::new(sources, FaithfulnessConfig::default()))
}

pub fn check_response_with(response: &str, index: &SourceIndex) -> FaithfulnessReport {
    let statements = segment_response(response);
    let mut applied = BTreeSet::new();
    let mut results = Vec::with_capacity(statements.len());
    for s in statements {
        let (ok, best_match, score, reasons, rules) = index.check(&s);
        applied.extend(rules);
        results.push(StatementResult {
            response_statement: s,
            status: if ok { Status::Supported } else { Status::Unsupported },
            best_match,
            score,
            reasons,
        });
    }
    let verdict = if results.iter().all(|r| r.status == Status::Supported) {
        Verdict::Faithful
    } else {
        Verdict::Hallucination
    };
    let mut flags = Vec::new();
    if results.is_empty() {
        flags.push("empty-response".to_string());
    }
    FaithfulnessReport {
        verdict,
        statement_results: results,
        normalizations_applied: applied.into_iter().map(str::to_string).collect(),
        flags,
    }
}
