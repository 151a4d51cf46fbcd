use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::validate::{finite_verb_groups, statement_nps, subject_np, validate_statement};
use crate::collision::{CollisionDetector, CollisionError};
use crate::faithfulness::{normalize_tokens, unescape, Class};
use crate::llm::{ChatRequest, LlmClient, Message};
use crate::nlp::{pos_tag, split_sentences, tokenize, Lexicon, NounPhrase, NpKind, Pos, Span, TaggedToken};

const SYSTEM_PROMPT: &str = include_str!("../../resources/prompts/fff_system.txt");
const SYSTEM_PROMPT_OPEN: &str = include_str!("../../resources/prompts/fff_system_open.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Deterministic,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statement {
    pub text: String,
    pub subject_np: NounPhrase,
    pub source_passage_index: usize,
    /// Byte range in the unescaped passage.
    pub source_span: Span,
    /// The source sentence the statement came from, unescaped.
    pub source_text: String,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discarded {
    pub source_passage_index: usize,
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub statements: Vec<Statement>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub discarded: Vec<Discarded>,
    /// Set when the LLM pass failed and only deterministic statements remain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degraded: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FffConfig {
    pub model: String,
    pub temperature: f64,
    pub use_llm: bool,
}

impl Default for FffConfig {
    fn default() -> Self {
        Self {
            model: "gpt-4-0613".into(),
            temperature: 0.0,
            use_llm: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Topic {
    Unknown,
    Entity,
    Other,
}

#[derive(Debug, Clone)]
struct Unit {
    text: String,
    span: Span,
    order: usize,
    /// What fragments in this unit are about, from earlier headers and subjects.
    topic: Topic,
}

struct Candidate {
    text: String,
    unit: usize,
}

fn finalize(s: &str) -> String {
    let t = s.trim().trim_end_matches([' ', '.', ',', ';', ':']);
    let mut chars = t.chars();
    let mut out: String = match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => return String::new(),
    };
    out.push('.');
    out
}

fn lower_first(s: &str) -> String {
    let first = s.split_whitespace().next().unwrap_or("");
    let acronym = first.chars().filter(|c| c.is_alphabetic()).count() >= 2 && first.chars().all(|c| !c.is_lowercase());
    if acronym {
        return s.to_string();
    }
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn capitalized(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn words_lower(text: &str) -> Vec<String> {
    tokenize(text).iter().filter(|t| t.is_word()).map(|t| t.lower()).collect()
}

fn contains_words(text: &str, needle: &[String]) -> bool {
    if needle.is_empty() {
        return false;
    }
    words_lower(text).windows(needle.len()).any(|w| w == needle)
}

fn is_title(tokens: &[TaggedToken]) -> bool {
    let lex = Lexicon::bundled();
    let words: Vec<&TaggedToken> = tokens.iter().filter(|t| t.token.is_word()).collect();
    words.len() >= 2
        && finite_verb_groups(tokens).is_empty()
        && words.iter().all(|t| {
            let l = t.token.lower();
            t.token.starts_uppercase() || lex.has(&l, Pos::Preposition) || lex.has(&l, Pos::Conjunction) || lex.has(&l, Pos::Determiner)
        })
}

fn strict_keys(text: &str) -> BTreeSet<String> {
    normalize_tokens(text)
        .tokens
        .into_iter()
        .filter(|t| t.class == Class::Strict)
        .map(|t| t.key)
        .collect()
}

fn content_keys(text: &str) -> BTreeSet<String> {
    normalize_tokens(text)
        .tokens
        .into_iter()
        .filter(|t| t.class != Class::Function)
        .map(|t| t.key)
        .collect()
}

/// Splits "A, and B" when both sides carry their own finite verb.
fn split_clauses(unit: &Unit) -> Vec<Unit> {
    let toks = pos_tag(&tokenize(&unit.text));
    for i in 0..toks.len().saturating_sub(1) {
        let conj = toks[i + 1].token.lower();
        if toks[i].text() != "," || !(conj == "and" || conj == "but") {
            continue;
        }
        let left = &unit.text[..toks[i].token.span.start];
        let right_start = toks[i + 1].token.span.end;
        let right = &unit.text[right_start..];
        let has_verb = |s: &str| !finite_verb_groups(&pos_tag(&tokenize(s))).is_empty();
        if has_verb(left) && has_verb(right) {
            let lead = right.len() - right.trim_start().len();
            let l = Unit {
                text: left.trim_end().to_string(),
                span: Span::new(unit.span.start, unit.span.start + left.trim_end().len()),
                order: unit.order,
                topic: unit.topic,
            };
            let r = Unit {
                text: right.trim().to_string(),
                span: Span::new(unit.span.start + right_start + lead, unit.span.end),
                order: unit.order,
                topic: unit.topic,
            };
            let mut out = vec![l];
            out.extend(split_clauses(&r));
            return out;
        }
    }
    vec![unit.clone()]
}

/// "... with oxygen, or air" becomes two statements, one per object.
fn split_trailing_coordination(s: &str) -> Vec<String> {
    let body = s.trim().trim_end_matches('.');
    let toks = pos_tag(&tokenize(body));
    let Some(ci) = toks.iter().rposition(|t| matches!(t.token.lower().as_str(), "and" | "or")) else {
        return vec![s.to_string()];
    };
    let tail = &toks[ci + 1..];
    if tail.is_empty() || tail.len() > 2 || !tail.iter().all(|t| t.is_nominal()) {
        return vec![s.to_string()];
    }
    let mut j = ci;
    if j > 0 && toks[j - 1].text() == "," {
        j -= 1;
    }
    let obj_end = j;
    let mut k = obj_end;
    while k > 0 && toks[k - 1].is_nominal() && obj_end - k < 2 {
        k -= 1;
    }
    if k == obj_end || k == 0 || toks[k - 1].pos != Pos::Preposition {
        return vec![s.to_string()];
    }
    let prefix = &body[..toks[k].token.span.start];
    let first = &body[toks[k].token.span.start..toks[obj_end - 1].token.span.end];
    let second = &body[tail[0].token.span.start..];
    vec![format!("{prefix}{first}."), format!("{prefix}{second}.")]
}

fn is_third_person_verb(t: &TaggedToken) -> bool {
    let l = t.token.lower();
    l.ends_with('s') && Lexicon::bundled().has(&l, Pos::Verb)
}

pub(crate) struct Extractor<'a> {
    pub entity: Option<&'a NounPhrase>,
    pub detector: &'a CollisionDetector,
    pub config: &'a FffConfig,
}

impl Extractor<'_> {
    fn surface(&self) -> String {
        self.entity.map(|e| capitalized(e.core_text())).unwrap_or_default()
    }

    /// `(mentions the entity, mentions a rival of it)`.
    fn mentions(&self, text: &str) -> Result<(bool, bool), CollisionError> {
        let Some(entity) = self.entity else {
            return Ok((false, false));
        };
        let key = entity.normalized();
        let entity_words = words_lower(&key);
        let nps: Vec<NounPhrase> = statement_nps(text).into_iter().filter(|n| n.kind == NpKind::Base).collect();
        let hit = contains_words(text, &entity_words) || nps.iter().any(|n| self.detector.coreferent(n, entity));
        let mut rival = false;
        for n in &nps {
            if self.detector.coreferent(n, entity) {
                continue;
            }
            let nw: BTreeSet<String> = words_lower(&n.normalized()).into_iter().collect();
            let ew: BTreeSet<String> = entity_words.iter().cloned().collect();
            if nw.is_subset(&ew) || ew.is_subset(&nw) {
                continue;
            }
            if self.detector.similarity(&n.normalized(), &key)? >= self.detector.config().threshold {
                rival = true;
                break;
            }
        }
        Ok((hit, rival))
    }

    fn update_topic(&self, topic: &mut Topic, text: &str) -> Result<(), CollisionError> {
        match self.mentions(text)? {
            (_, true) => *topic = Topic::Other,
            (true, false) => *topic = Topic::Entity,
            _ => {}
        }
        Ok(())
    }

    /// Sentences, with "Header --body" headers and "A, and B" clauses
    /// separated out.
    fn units(&self, clean: &str) -> Result<Vec<Unit>, CollisionError> {
        let mut out = Vec::new();
        let mut topic = Topic::Unknown;
        let mut order = 0;
        for s in split_sentences(clean) {
            let (mut text, mut span) = (s.text.clone(), s.span);
            if self.entity.is_some() {
                if let Some(pos) = text.find("--") {
                    self.update_topic(&mut topic, &text[..pos])?;
                    let rest = &text[pos + 2..];
                    let lead = rest.len() - rest.trim_start().len();
                    span = Span::new(span.start + pos + 2 + lead, span.end);
                    text = rest.trim().to_string();
                } else if is_title(&pos_tag(&tokenize(&text))) {
                    self.update_topic(&mut topic, &text)?;
                    continue;
                }
            }
            if !text.chars().any(char::is_alphanumeric) {
                continue;
            }
            let unit = Unit {
                text,
                span,
                order,
                topic,
            };
            order += 1;
            let parts = if self.entity.is_some() { split_clauses(&unit) } else { vec![unit] };
            for mut u in parts {
                u.order = order;
                order += 1;
                if self.entity.is_some() {
                    u.topic = self.advance_topic(&mut topic, &u.text)?;
                }
                out.push(u);
            }
        }
        Ok(out)
    }

    /// Returns the topic `text` inherits and moves `topic` past its subject.
    fn advance_topic(&self, topic: &mut Topic, text: &str) -> Result<Topic, CollisionError> {
        let inherited = *topic;
        let toks = pos_tag(&tokenize(text));
        let groups = finite_verb_groups(&toks);
        if let Some(&g) = groups.first() {
            if g > 0 {
                let subject_end = toks[g - 1].token.span.end;
                let subject = &text[..subject_end];
                let first = toks[0].token.lower();
                if first != "it" && first != "they" {
                    self.update_topic(topic, subject)?;
                }
            }
        }
        Ok(inherited)
    }

    fn fragment_candidates(&self, text: &str) -> (Vec<String>, bool) {
        let lex = Lexicon::bundled();
        let surface = self.surface();
        let toks = pos_tag(&tokenize(text));
        let words: Vec<&TaggedToken> = toks.iter().filter(|t| t.token.is_word()).collect();
        let Some(w0) = words.first() else {
            return (Vec::new(), false);
        };
        let lower0 = w0.token.lower();
        let groups = finite_verb_groups(&toks);
        let verb_first = groups.first() == Some(&0)
            || (lex.has(&lower0, Pos::Verb) && !lex.has(&lower0, Pos::Noun) && !lex.has(&lower0, Pos::Adjective));

        if (lower0 == "it" || lower0 == "they") && !groups.is_empty() {
            let rest = &text[w0.token.span.end..];
            return (vec![format!("{surface}{rest}")], false);
        }
        if verb_first {
            let mut pieces = Vec::new();
            let mut start = 0;
            let mut deferred = false;
            let mut cut = text.len();
            for i in 0..toks.len().saturating_sub(1) {
                if toks[i].text() != "," {
                    continue;
                }
                let next = &toks[i + 1];
                if is_third_person_verb(next) {
                    pieces.push(&text[start..toks[i].token.span.start]);
                    start = next.token.span.start;
                } else if next.token.lower().ends_with("ing") {
                    cut = toks[i].token.span.start;
                    deferred = true;
                    break;
                }
            }
            pieces.push(&text[start..cut]);
            let out = pieces.iter().map(|p| format!("{surface} {}", lower_first(p.trim()))).collect();
            return (out, deferred);
        }
        if groups.is_empty() {
            let risky = text.contains('…') || words.iter().any(|w| w.token.lower() == "but" || super::validate::is_pronoun(w.text()));
            if words.len() == 1 && (w0.pos == Pos::Adjective || lex.has(&lower0, Pos::Adjective)) {
                return (vec![format!("{surface} is {lower0}")], false);
            }
            let second_is_number = toks.get(1).is_some_and(|t| t.text().starts_with(|c: char| c.is_ascii_digit()));
            if words.len() >= 2 && w0.is_nominal() && second_is_number && !risky {
                let rest = &text[toks[1].token.span.start..];
                return (vec![format!("{surface}'s {lower0} is {rest}")], false);
            }
            let predicative = w0.pos == Pos::Adjective
                && words.get(1).is_none_or(|w| w.pos == Pos::Preposition);
            if !risky && predicative {
                return (vec![format!("{surface} is {}", lower_first(text))], false);
            }
            if !risky && matches!(w0.pos, Pos::Adjective | Pos::Noun) {
                let article = if lower0.starts_with(['a', 'e', 'i', 'o', 'u']) { "an" } else { "a" };
                return (vec![format!("{surface} is {article} {}", lower_first(text))], false);
            }
            return (Vec::new(), true);
        }
        (Vec::new(), true)
    }

    fn llm_pass(
        &self,
        llm: &dyn LlmClient,
        clean: &str,
        deferred: &[&Unit],
    ) -> Result<Vec<(String, usize)>, crate::llm::LlmError> {
        let system = match self.entity {
            Some(e) => SYSTEM_PROMPT.replace("{entity}", &e.normalized()),
            None => SYSTEM_PROMPT_OPEN.to_string(),
        };
        let mut user = String::new();
        if let Some(e) = self.entity {
            user.push_str(&format!("Entity: {}\n\n", e.normalized()));
        }
        user.push_str(&format!("Passage:\n{clean}\n\nSentences:\n"));
        for (i, u) in deferred.iter().enumerate() {
            user.push_str(&format!("{}. {}\n", i + 1, u.text));
        }
        let request = ChatRequest::new(
            self.config.model.clone(),
            self.config.temperature,
            vec![Message::system(system.trim_end()), Message::user(user.trim_end())],
        );
        let response = llm.chat(&request)?;
        let unit_keys: Vec<BTreeSet<String>> = deferred.iter().map(|u| content_keys(&u.text)).collect();
        let mut out = Vec::new();
        for line in response.content.lines() {
            let line = line
                .trim()
                .trim_start_matches(['-', '*', '•'])
                .trim_start_matches(|c: char| c.is_ascii_digit())
                .trim_start_matches(['.', ')'])
                .trim();
            if line.is_empty() {
                continue;
            }
            let keys = content_keys(line);
            let best = unit_keys
                .iter()
                .enumerate()
                .max_by_key(|(i, k)| (k.intersection(&keys).count(), std::cmp::Reverse(*i)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            out.push((line.to_string(), best));
        }
        Ok(out)
    }

    pub fn run(&self, passage: &str, passage_index: usize, llm: Option<&dyn LlmClient>) -> Result<Extraction, CollisionError> {
        let (clean, _) = unescape(passage);
        let units = self.units(&clean)?;
        let passage_strict = strict_keys(&clean);
        let mut result = Extraction::default();
        let mut candidates: Vec<Candidate> = Vec::new();
        let mut deferred: Vec<usize> = Vec::new();

        for (ui, u) in units.iter().enumerate() {
            if self.entity.is_none() {
                let mut text = u.text.trim().to_string();
                if !text.trim_end_matches([')', '"', '\'']).ends_with(['.', '!', '?']) {
                    text.push('.');
                }
                candidates.push(Candidate { text, unit: ui });
                continue;
            }
            let (hit, rival) = self.mentions(&u.text)?;
            if rival {
                debug!(unit = %u.text, "dropped: mentions a rival entity");
                continue;
            }
            let toks = pos_tag(&tokenize(&u.text));
            let groups = finite_verb_groups(&toks);
            let first = toks.iter().find(|t| t.token.is_word()).map(|t| t.token.lower()).unwrap_or_default();
            let pronoun_led = first == "it" || first == "they";
            let lowercase_start = u.text.starts_with(|c: char| c.is_lowercase())
                && toks.first().is_some_and(|t| t.pos != Pos::Determiner);
            let fragment = groups.first().is_none_or(|g| *g == 0) || lowercase_start;
            let in_topic = u.topic == Topic::Entity;
            if !hit && !in_topic {
                continue;
            }
            if in_topic && (fragment || pronoun_led) {
                let (texts, defer) = self.fragment_candidates(&u.text);
                for t in texts {
                    candidates.push(Candidate { text: t, unit: ui });
                }
                if defer {
                    deferred.push(ui);
                }
            } else if hit {
                candidates.push(Candidate { text: u.text.clone(), unit: ui });
            } else {
                // a sentence under the entity's heading whose subject leaves it implicit
                deferred.push(ui);
            }
        }

        let mut accepted: Vec<(usize, u8, Statement)> = Vec::new();
        let mut failed_units: BTreeSet<usize> = deferred.into_iter().collect();
        for c in candidates {
            let texts = if self.entity.is_some() { split_trailing_coordination(&c.text) } else { vec![c.text.clone()] };
            for t in texts {
                let t = if self.entity.is_some() { finalize(&t) } else { t };
                let v = validate_statement(&t, self.entity, self.detector)?;
                if v.is_valid() {
                    accepted.push((units[c.unit].order, 0, self.statement(t, &units[c.unit], passage_index, Origin::Deterministic)));
                } else {
                    debug!(statement = %t, violations = ?v.violations, "deterministic candidate rejected");
                    failed_units.insert(c.unit);
                }
            }
        }

        let failed: Vec<&Unit> = failed_units.iter().map(|i| &units[*i]).collect();
        if !failed.is_empty() {
            match llm.filter(|_| self.config.use_llm) {
                None => {
                    for u in &failed {
                        result.discarded.push(Discarded {
                            source_passage_index: passage_index,
                            text: u.text.clone(),
                            reason: "no valid rewrite".into(),
                        });
                    }
                }
                Some(llm) => match self.llm_pass(llm, &clean, &failed) {
                    Err(e) => {
                        warn!(error = %e, passage_index, "fact rewrite failed; keeping deterministic statements");
                        result.degraded = Some(e.to_string());
                        for u in &failed {
                            result.discarded.push(Discarded {
                                source_passage_index: passage_index,
                                text: u.text.clone(),
                                reason: format!("llm unavailable: {e}"),
                            });
                        }
                    }
                    Ok(lines) => {
                        for (line, ui) in lines {
                            let t = finalize(&line);
                            let unit = failed[ui];
                            let reason = if self.mentions(&t)?.1 {
                                Some("mentions a rival entity".to_string())
                            } else if !strict_keys(&t).is_subset(&passage_strict) {
                                Some("number or unit not in passage".to_string())
                            } else {
                                let v = validate_statement(&t, self.entity, self.detector)?;
                                (!v.is_valid()).then(|| format!("{:?}", v.violations))
                            };
                            match reason {
                                None => accepted.push((unit.order, 1, self.statement(t, unit, passage_index, Origin::Llm))),
                                Some(reason) => {
                                    warn!(statement = %t, %reason, "rewritten statement discarded");
                                    result.discarded.push(Discarded {
                                        source_passage_index: passage_index,
                                        text: t,
                                        reason,
                                    });
                                }
                            }
                        }
                    }
                },
            }
        }

        accepted.sort_by_key(|(order, pass, _)| (*order, *pass));
        let mut seen = HashSet::new();
        for (_, _, s) in accepted {
            if seen.insert(s.text.to_lowercase()) {
                result.statements.push(s);
            }
        }
        Ok(result)
    }

    fn statement(&self, text: String, unit: &Unit, passage_index: usize, origin: crate::fff::Origin) -> Statement {
        let subject = subject_np(&text, self.entity, self.detector)
            .or_else(|| self.entity.cloned())
            .unwrap_or_else(|| NounPhrase::synthetic(text.split_whitespace().next().unwrap_or("")));
        Statement {
            subject_np: subject,
            source_passage_index: passage_index,
            source_span: unit.span,
            source_text: unit.text.clone(),
            text,
            origin,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finalize_capitalizes_and_terminates() {
        assert_eq!(finalize("calcium melts at 840°C, "), "Calcium melts at 840°C.");
        assert_eq!(finalize(""), "");
    }

    #[test]
    fn trailing_objects_split() {
        assert_eq!(
            split_trailing_coordination("Calcium is flammable at high temperatures with oxygen, or air."),
            vec![
                "Calcium is flammable at high temperatures with oxygen.".to_string(),
                "Calcium is flammable at high temperatures with air.".to_string()
            ]
        );
        let s = "Calcium reacts steadily with water.";
        assert_eq!(split_trailing_coordination(s), vec![s.to_string()]);
    }

    #[test]
    fn clause_split() {
        let text = "Nearly all compounds are in oxidation state +2, and the water chemistry of calcium is dominated by the hydrated Ca(2+) ion";
        let u = Unit {
            text: text.into(),
            span: Span::new(10, 10 + text.len()),
            order: 0,
            topic: Topic::Unknown,
        };
        let parts = split_clauses(&u);
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].text, "Nearly all compounds are in oxidation state +2");
        assert!(parts[1].text.starts_with("the water chemistry"));
        assert_eq!(&u.text[parts[1].span.start - 10..parts[1].span.end - 10], parts[1].text);
    }
}
