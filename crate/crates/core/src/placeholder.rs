//! Reversible substitution of collision-prone spans (IDs, citations,
//! references, colliding entity names) with opaque placeholder tokens.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::collision::entity_common_noun_overlap;
use crate::nlp::{extract_noun_phrases, NounPhrase, NpKind, Span};

pub const DEFAULT_PREFIX: &str = "QQ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlaceholderKind {
    EntityRename,
    Reference,
    Id,
    Citation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectedSpan {
    pub span: Span,
    pub kind: PlaceholderKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaceholderEntry {
    pub ph: String,
    pub orig: String,
    pub kind: PlaceholderKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaceholderTable {
    pub id: String,
    pub entries: Vec<PlaceholderEntry>,
    #[serde(skip, default = "default_prefix")]
    prefix: String,
    /// Placeholder-like runs already present in the texts this table will
    /// touch; candidates contained in any of them are skipped.
    #[serde(skip)]
    reserved: Vec<String>,
}

fn default_prefix() -> String {
    DEFAULT_PREFIX.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlaceholderError {
    #[error("span {start}..{end} is out of bounds or not on a character boundary")]
    OutOfBounds { start: usize, end: usize },
    #[error("spans {0:?} and {1:?} overlap")]
    Overlap(Span, Span),
    #[error("table is not a bijection: {0}")]
    NotBijective(String),
    #[error("placeholder {0:?} does not match the table format")]
    BadFormat(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemapReport {
    /// Substitution count per placeholder, in table order.
    pub substitutions: Vec<(String, usize)>,
    /// Placeholder-shaped tokens that the table does not know.
    pub unknown: Vec<String>,
    pub degraded: bool,
}

impl RemapReport {
    pub fn total(&self) -> usize {
        self.substitutions.iter().map(|(_, n)| n).sum()
    }
}

/// Bijective base-26 (A=1 .. Z=26, AA=27 ..).
fn letters(mut n: usize) -> String {
    let mut out = Vec::new();
    while n > 0 {
        n -= 1;
        out.push(b'A' + (n % 26) as u8);
        n /= 26;
    }
    out.reverse();
    String::from_utf8(out).unwrap_or_default()
}

impl Default for PlaceholderTable {
    fn default() -> Self {
        Self::new()
    }
}

impl PlaceholderTable {
    pub fn new() -> Self {
        Self::with_prefix(DEFAULT_PREFIX)
    }

    pub fn with_prefix(prefix: &str) -> Self {
        let mut t = Self {
            id: String::new(),
            entries: Vec::new(),
            prefix: prefix.to_string(),
            reserved: Vec::new(),
        };
        t.refresh_id();
        t
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn run_regex(&self) -> Regex {
        Regex::new(&format!("{}[A-Z]+", regex::escape(&self.prefix))).expect("valid placeholder regex")
    }

    /// Marks placeholder-like runs already present in `texts` as unavailable.
    pub fn reserve_from<'a>(&mut self, texts: impl IntoIterator<Item = &'a str>) {
        let re = self.run_regex();
        for t in texts {
            for m in re.find_iter(t) {
                if !self.reserved.iter().any(|r| r == m.as_str()) {
                    self.reserved.push(m.as_str().to_string());
                }
            }
        }
    }

    fn refresh_id(&mut self) {
        let mut h = Sha256::new();
        h.update(self.prefix.as_bytes());
        for e in &self.entries {
            h.update([0]);
            h.update(e.ph.as_bytes());
            h.update([0]);
            h.update(e.orig.as_bytes());
        }
        self.id = format!("pt-{}", &hex::encode(h.finalize())[..16]);
    }

    pub fn lookup_original(&self, original: &str) -> Option<&PlaceholderEntry> {
        self.entries.iter().find(|e| e.orig == original)
    }

    pub fn lookup_placeholder(&self, ph: &str) -> Option<&PlaceholderEntry> {
        self.entries.iter().find(|e| e.ph == ph)
    }

    fn next_placeholder(&self, text: &str) -> String {
        let mut n = 2;
        loop {
            let candidate = format!("{}{}", self.prefix, letters(n));
            let taken = self.lookup_placeholder(&candidate).is_some()
                || text.contains(&candidate)
                || self.reserved.iter().any(|r| r.contains(&candidate));
            if !taken {
                return candidate;
            }
            n += 1;
        }
    }

    /// Checks uniqueness of both columns and the placeholder format.
    pub fn validate(&self) -> Result<(), PlaceholderError> {
        let re = Regex::new(&format!("^{}[A-Z]+$", regex::escape(&self.prefix))).expect("valid regex");
        for (i, e) in self.entries.iter().enumerate() {
            if !re.is_match(&e.ph) {
                return Err(PlaceholderError::BadFormat(e.ph.clone()));
            }
            for other in &self.entries[i + 1..] {
                if other.ph == e.ph {
                    return Err(PlaceholderError::NotBijective(format!("placeholder {} repeated", e.ph)));
                }
                if other.orig == e.orig {
                    return Err(PlaceholderError::NotBijective(format!("original {:?} repeated", e.orig)));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }
}

fn battery() -> &'static [(Regex, PlaceholderKind, usize)] {
    static B: OnceLock<Vec<(Regex, PlaceholderKind, usize)>> = OnceLock::new();
    B.get_or_init(|| {
        let re = |s: &str| Regex::new(s).expect("valid regex");
        vec![
            (re(r"\[\d+(?:\s*[,\u{2013}-]\s*\d+)*\]"), PlaceholderKind::Citation, 0),
            (re(r"(?i)\b(?:PMID|PubMed(?:\s+ID)?)\s*[:#]?\s*(\d{7,8})\b"), PlaceholderKind::Id, 1),
            (re(r#"\b10\.\d{4,9}/[^\s"<>]*[^\s"<>.,;:)\]]"#), PlaceholderKind::Reference, 0),
            (re(r"\b[A-Za-z0-9]+(?:-[A-Za-z0-9]+)+\b"), PlaceholderKind::Id, 0),
        ]
    })
}

fn is_part_number(s: &str) -> bool {
    let digits = s.chars().filter(char::is_ascii_digit).count();
    let alpha = s.chars().filter(char::is_ascii_alphabetic).count();
    digits >= 2 && alpha >= 1
}

/// Proper-name phrases in `text` that share a word with a common noun
/// phrase anywhere in `corpus` ("Cruise LLC" next to "cruise control").
fn entity_renames(text: &str, corpus: &[&str]) -> Vec<Span> {
    let own: Vec<NounPhrase> = extract_noun_phrases(text)
        .into_iter()
        .filter(|n| n.kind == NpKind::Base && n.is_proper())
        .collect();
    if own.is_empty() {
        return Vec::new();
    }
    let commons: Vec<NounPhrase> = corpus
        .iter()
        .flat_map(|c| extract_noun_phrases(c))
        .filter(|n| n.kind == NpKind::Base && !n.is_proper())
        .collect();
    own.iter()
        .filter(|p| commons.iter().any(|c| entity_common_noun_overlap(p, c)))
        .map(|p| p.core_span)
        .collect()
}

fn select_leftmost_longest(mut found: Vec<ProtectedSpan>) -> Vec<ProtectedSpan> {
    found.sort_by(|a, b| a.span.start.cmp(&b.span.start).then(b.span.len().cmp(&a.span.len())));
    let mut out: Vec<ProtectedSpan> = Vec::new();
    for f in found {
        if out.last().is_none_or(|l| l.span.end <= f.span.start) {
            out.push(f);
        }
    }
    out
}

/// Protected spans in `text`, considering entity/common-noun overlaps
/// against `corpus` (typically the query plus all passages).
pub fn detect_protected_spans_in(text: &str, corpus: &[&str]) -> Vec<ProtectedSpan> {
    let mut found = Vec::new();
    for (re, kind, group) in battery() {
        for caps in re.captures_iter(text) {
            let Some(m) = caps.get(*group) else { continue };
            if *kind == PlaceholderKind::Id && *group == 0 && !is_part_number(m.as_str()) {
                continue;
            }
            found.push(ProtectedSpan {
                span: Span::new(m.start(), m.end()),
                kind: *kind,
            });
        }
    }
    for span in entity_renames(text, corpus) {
        found.push(ProtectedSpan {
            span,
            kind: PlaceholderKind::EntityRename,
        });
    }
    select_leftmost_longest(found)
}

pub fn detect_protected_spans(text: &str) -> Vec<ProtectedSpan> {
    detect_protected_spans_in(text, &[text])
}

/// Replaces `spans` right to left, appending new entries to `table` and
/// reusing the placeholder of an original seen before.
pub fn apply_placeholders(text: &str, spans: &[ProtectedSpan], table: &mut PlaceholderTable) -> Result<String, PlaceholderError> {
    let mut sorted: Vec<ProtectedSpan> = spans.to_vec();
    sorted.sort_by_key(|s| (s.span.start, s.span.end));
    for s in &sorted {
        let Span { start, end } = s.span;
        if start > end || end > text.len() || !text.is_char_boundary(start) || !text.is_char_boundary(end) {
            return Err(PlaceholderError::OutOfBounds { start, end });
        }
    }
    for w in sorted.windows(2) {
        if w[0].span.end > w[1].span.start {
            return Err(PlaceholderError::Overlap(w[0].span, w[1].span));
        }
    }
    // assign in reading order so numbering is stable, substitute in reverse
    let mut assigned = Vec::with_capacity(sorted.len());
    for s in &sorted {
        let orig = &text[s.span.start..s.span.end];
        let ph = match table.lookup_original(orig) {
            Some(e) => e.ph.clone(),
            None => {
                let ph = table.next_placeholder(text);
                table.entries.push(PlaceholderEntry {
                    ph: ph.clone(),
                    orig: orig.to_string(),
                    kind: s.kind,
                });
                ph
            }
        };
        assigned.push((s.span, ph));
    }
    if !sorted.is_empty() {
        table.refresh_id();
    }
    let mut out = text.to_string();
    for (span, ph) in assigned.iter().rev() {
        out.replace_range(span.start..span.end, ph);
    }
    Ok(out)
}

/// Restores originals. Placeholder runs are decomposed greedily by the
/// longest table entry at each position; runs the table cannot explain are
/// reported and mark the result degraded. Runs reserved from the input text
/// are left as they are.
pub fn remap(response: &str, table: &PlaceholderTable) -> (String, RemapReport) {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut by_len: Vec<&PlaceholderEntry> = table.entries.iter().collect();
    by_len.sort_by(|a, b| b.ph.len().cmp(&a.ph.len()).then(a.ph.cmp(&b.ph)));
    let run_re = table.run_regex();
    let is_reserved = |run: &str| table.reserved.iter().any(|r| r == run);

    let mut out = String::with_capacity(response.len());
    let mut i = 0;
    'scan: while i < response.len() {
        if response[i..].starts_with(table.prefix.as_str()) {
            if let Some(m) = run_re.find(&response[i..]).filter(|m| m.start() == 0 && is_reserved(m.as_str())) {
                out.push_str(m.as_str());
                i += m.end();
                continue 'scan;
            }
            for e in &by_len {
                if response[i..].starts_with(e.ph.as_str()) {
                    out.push_str(&e.orig);
                    *counts.entry(e.ph.as_str()).or_default() += 1;
                    i += e.ph.len();
                    continue 'scan;
                }
            }
        }
        let c = response[i..].chars().next().unwrap_or(' ');
        out.push(c);
        i += c.len_utf8();
    }

    let mut unknown = Vec::new();
    for m in run_re.find_iter(response).filter(|m| !is_reserved(m.as_str())) {
        let mut rest = m.as_str();
        'decompose: while !rest.is_empty() {
            for e in &by_len {
                if let Some(r) = rest.strip_prefix(e.ph.as_str()) {
                    rest = r;
                    continue 'decompose;
                }
            }
            // capitals glued to a placeholder are ordinary text
            let consumed = rest.len() < m.as_str().len();
            if rest == table.prefix || is_reserved(rest) || (consumed && !rest.starts_with(table.prefix.as_str())) {
                rest = "";
            }
            break;
        }
        if !rest.is_empty() && !unknown.iter().any(|u| u == m.as_str()) {
            unknown.push(m.as_str().to_string());
        }
    }
    let substitutions = table
        .entries
        .iter()
        .map(|e| (e.ph.clone(), counts.get(e.ph.as_str()).copied().unwrap_or(0)))
        .collect();
    let degraded = !unknown.is_empty();
    (
        out,
        RemapReport {
            substitutions,
            unknown,
            degraded,
        },
    )
}
