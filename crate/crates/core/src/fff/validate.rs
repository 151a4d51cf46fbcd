use serde::{Deserialize, Serialize};

use crate::collision::{CollisionDetector, CollisionError};
use crate::nlp::{expand_coordination, extract_noun_phrases, pos_tag, tokenize, NounPhrase, NpKind, Pos, TaggedToken};

pub const MAX_STATEMENT_TOKENS: usize = 40;

const PRONOUNS: &[&str] = &[
    "i", "me", "my", "mine", "we", "us", "our", "ours", "you", "your", "yours", "he", "him", "his", "she", "her",
    "hers", "it", "its", "they", "them", "their", "theirs", "this", "these", "those", "which", "who", "whom",
    "whose", "itself", "themselves",
];
const AUX: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "being", "am", "has", "have", "had", "do", "does", "did", "can",
    "could", "may", "might", "must", "shall", "should", "will", "would",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum Violation {
    /// (a)
    Pronoun { token: String },
    /// (b)
    MissingSubject,
    /// (b)
    SubjectNotEntity { subject: String },
    /// (c)
    ClauseCount { finite_verb_groups: usize },
    /// (d)
    TooLong { tokens: usize },
    /// (e)
    Collision { left: String, right: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationResult {
    pub violations: Vec<Violation>,
}

impl ValidationResult {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn is_pronoun(word: &str) -> bool {
    PRONOUNS.contains(&word.to_lowercase().as_str())
}

fn is_aux(t: &TaggedToken) -> bool {
    AUX.contains(&t.token.lower().as_str())
}

fn is_participle(word: &str) -> bool {
    let w = word.to_lowercase();
    w.ends_with("ed") || w.ends_with("en") || w.ends_with("wn") || w.ends_with("ing")
}

/// Start indices of the top-level finite verb groups. A group is a run of
/// auxiliaries and verbs, adverbs and negators allowed in between.
/// Infinitives, bare participles and verbs used as prenominal modifiers do
/// not open a group.
pub fn finite_verb_groups(tokens: &[TaggedToken]) -> Vec<usize> {
    let mut groups = Vec::new();
    let mut in_group = false;
    for (i, t) in tokens.iter().enumerate() {
        let lower = t.token.lower();
        let verbal = t.pos == Pos::Verb || is_aux(t);
        if !verbal {
            let skippable = lower == "not" || lower == "n't" || (lower.ends_with("ly") && t.pos == Pos::Other) || lower == "also";
            if !skippable {
                in_group = false;
            }
            continue;
        }
        if in_group {
            continue;
        }
        let prev = tokens[..i]
            .iter()
            .rev()
            .find(|p| !(p.token.lower().ends_with("ly") && p.pos == Pos::Other) && p.token.lower() != "also");
        let after_to = prev.is_some_and(|p| p.token.lower() == "to");
        let modifier = prev.is_some_and(|p| matches!(p.pos, Pos::Determiner | Pos::Adjective) || p.token.lower() == "'s")
            && tokens.get(i + 1).is_some_and(TaggedToken::is_nominal);
        let non_finite = !is_aux(t) && is_participle(t.text()) && (!groups.is_empty() || i == 0 || prev.is_some_and(|p| p.text() == ","));
        if after_to || modifier || non_finite {
            continue;
        }
        groups.push(i);
        in_group = true;
    }
    groups
}

/// Noun phrases of `text`, with coordinated modifiers distributed.
pub fn statement_nps(text: &str) -> Vec<NounPhrase> {
    extract_noun_phrases(text).iter().flat_map(expand_coordination).collect()
}

/// Whether `np` names `entity`: coreferent, or a composite (`X of E`,
/// `E's X`) with the entity inside.
pub fn mentions_entity(np: &NounPhrase, entity: &NounPhrase, detector: &CollisionDetector) -> bool {
    detector.coreferent(np, entity)
}

/// Checks (a) pronouns, (b) entity subject, (c) one finite clause,
/// (d) length and (e) collisions, reporting every violation found.
/// Without an entity only (d) and (e) apply: source sentences are passed
/// through as they are.
pub fn validate_statement(
    s: &str,
    entity: Option<&NounPhrase>,
    detector: &CollisionDetector,
) -> Result<ValidationResult, CollisionError> {
    let tokens = pos_tag(&tokenize(s));
    let mut violations = Vec::new();

    if entity.is_some() {
        for t in tokens.iter().filter(|t| t.token.is_word() && is_pronoun(t.text())) {
            violations.push(Violation::Pronoun { token: t.text().to_string() });
        }
    }

    let groups = finite_verb_groups(&tokens);
    if let Some(entity) = entity {
        match groups.first() {
            Some(&g) if g > 0 => {
                let end = tokens[g - 1].token.span.end;
                let subject_text = &s[..end];
                let nps = statement_nps(subject_text);
                let ok = nps
                    .iter()
                    .filter(|n| n.kind == NpKind::Base)
                    .any(|n| mentions_entity(n, entity, detector));
                if !ok {
                    violations.push(Violation::SubjectNotEntity {
                        subject: subject_text.trim().to_string(),
                    });
                }
            }
            _ => violations.push(Violation::MissingSubject),
        }
    }

    if entity.is_some() && groups.len() != 1 {
        violations.push(Violation::ClauseCount {
            finite_verb_groups: groups.len(),
        });
    }

    let words = tokens.iter().filter(|t| t.token.is_word()).count();
    if words > MAX_STATEMENT_TOKENS {
        violations.push(Violation::TooLong { tokens: words });
    }

    let nps: Vec<NounPhrase> = statement_nps(s);
    for p in detector.detect(&nps)? {
        violations.push(Violation::Collision {
            left: p.left.text,
            right: p.right.text,
        });
    }
    Ok(ValidationResult { violations })
}

/// The subject phrase's entity-bearing noun phrase, or the first one.
pub fn subject_np(s: &str, entity: Option<&NounPhrase>, detector: &CollisionDetector) -> Option<NounPhrase> {
    let tokens = pos_tag(&tokenize(s));
    let end = finite_verb_groups(&tokens)
        .first()
        .filter(|g| **g > 0)
        .map(|g| tokens[g - 1].token.span.end)
        .unwrap_or(s.len());
    let nps: Vec<NounPhrase> = statement_nps(&s[..end]).into_iter().filter(|n| n.kind == NpKind::Base).collect();
    if let Some(e) = entity {
        if let Some(n) = nps.iter().find(|n| mentions_entity(n, e, detector)) {
            return Some(n.clone());
        }
    }
    nps.into_iter().next()
}
