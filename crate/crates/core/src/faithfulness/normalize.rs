use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;

use crate::nlp::{pos_tag, tokenize, Lexicon, Pos, TaggedToken, TokenKind};

pub const RULE_UNICODE: &str = "unicode-escapes";
pub const RULE_CENTURY: &str = "century-decade";
pub const RULE_POSSESSIVE: &str = "possessive-of";
pub const RULE_NUMBER_WORDS: &str = "number-words";
pub const RULE_INDEFINITE_UNIT: &str = "indefinite-time-unit";
pub const RULE_ACRONYM: &str = "acronym-expansion";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    /// Lemmatized content word; counted towards coverage.
    Content,
    /// Numbers, canonical centuries and unit symbols; must match exactly.
    Strict,
    Function,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormToken {
    pub key: String,
    pub class: Class,
    pub nominal: bool,
    pub proper: bool,
    pub negator: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NormText {
    pub tokens: Vec<NormToken>,
    pub applied: BTreeSet<&'static str>,
}

const AUXILIARIES: &[&str] = &[
    "be", "is", "are", "was", "were", "been", "being", "am", "have", "has", "had", "having", "do", "does", "did",
    "can", "could", "may", "might", "must", "shall", "should", "will", "would",
];
/// Verbs that carry no checkable content of their own.
const LIGHT_VERBS: &[&str] = &["let", "help", "seem", "tend", "manage", "try"];
const NEGATORS: &[&str] = &["not", "n't", "never", "no"];
const TIME_UNITS: &[&str] = &[
    "second", "minute", "hour", "day", "night", "week", "month", "year", "decade", "century",
];
const NUMBER_WORDS: &[&str] = &[
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
];
const ORDINAL_WORDS: &[&str] = &[
    "zeroth", "first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth",
    "eleventh", "twelfth", "thirteenth", "fourteenth", "fifteenth", "sixteenth", "seventeenth", "eighteenth",
    "nineteenth", "twentieth", "twenty-first",
];

fn escape_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\\u([0-9a-fA-F]{4})").expect("valid regex"))
}

/// Decodes literal `\uXXXX` escapes and `\^`, and folds look-alike
/// characters (º, curly quotes, dashes) to one form.
pub fn unescape(text: &str) -> (String, bool) {
    let decoded = escape_regex().replace_all(text, |c: &regex::Captures| {
        u32::from_str_radix(&c[1], 16)
            .ok()
            .and_then(char::from_u32)
            .map(String::from)
            .unwrap_or_else(|| c[0].to_string())
    });
    let out: String = decoded
        .replace("\\^", "^")
        .chars()
        .map(|c| match c {
            'º' => '°',
            '’' | '‘' => '\'',
            '“' | '”' => '"',
            '–' | '—' => '-',
            c => c,
        })
        .collect();
    let changed = out != text;
    (out, changed)
}

fn ordinal_value(lower: &str) -> Option<u32> {
    if let Some(i) = ORDINAL_WORDS.iter().position(|w| *w == lower) {
        return Some(if i == 21 { 21 } else { i as u32 });
    }
    let digits: String = lower.chars().take_while(char::is_ascii_digit).collect();
    let suffix = &lower[digits.len()..];
    if digits.is_empty() || !matches!(suffix, "st" | "nd" | "rd" | "th") {
        return None;
    }
    digits.parse().ok()
}

/// "1700s" → 18; only whole-century decades qualify.
fn century_of_decade(lower: &str) -> Option<u32> {
    let digits = lower.strip_suffix('s')?;
    if digits.len() != 4 || !digits.ends_with("00") || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    digits[..2].parse::<u32>().ok().map(|h| h + 1)
}

fn is_century_word(lower: &str) -> bool {
    matches!(lower, "century" | "centuries")
}

fn strict_number(text: &str) -> String {
    text.replace(',', "")
}

/// Content key: lexicon lemma, with -ly adverbs folded onto their
/// adjective where the lexicon knows it.
fn content_key(lex: &Lexicon, lower: &str) -> String {
    let lemma = lex.lemma(lower);
    if lemma == lower && lower.len() > 4 && lower.ends_with("ly") {
        let stem = &lower[..lower.len() - 2];
        if let Some(s) = lower.strip_suffix("ily") {
            let y = format!("{s}y");
            if lex.contains(&y) {
                return y;
            }
        }
        if lex.contains(stem) {
            return stem.to_string();
        }
        let le = format!("{stem}le");
        if lex.contains(&le) {
            return le;
        }
    }
    lemma
}

fn classify_word(lex: &Lexicon, t: &TaggedToken) -> Class {
    let lower = t.token.lower();
    if AUXILIARIES.contains(&lower.as_str()) || LIGHT_VERBS.contains(&lex.lemma(&lower).as_str()) {
        return Class::Function;
    }
    if lower.contains('\'') {
        // contractions such as it's / don't
        return Class::Function;
    }
    if matches!(t.pos, Pos::Determiner | Pos::Pronoun | Pos::Preposition | Pos::Conjunction) {
        return Class::Function;
    }
    let tags = lex.tags(&lower);
    let contentful = tags.is_empty()
        || tags
            .iter()
            .any(|p| matches!(p, Pos::Noun | Pos::ProperNoun | Pos::Verb | Pos::Adjective));
    if contentful {
        Class::Content
    } else {
        Class::Function
    }
}

/// Indices of words spelled out before a parenthesised acronym:
/// "Pre-menstrual Syndrome (PMS)" drops "Pre-menstrual Syndrome".
fn acronym_expansions(tokens: &[TaggedToken]) -> BTreeSet<usize> {
    let mut drop = BTreeSet::new();
    for i in 0..tokens.len() {
        let is_acronym = tokens[i].token.text.len() >= 2 && tokens[i].token.text.chars().all(|c| c.is_ascii_uppercase());
        if !is_acronym || i < 2 || tokens[i - 1].text() != "(" || tokens.get(i + 1).is_none_or(|t| t.text() != ")") {
            continue;
        }
        let letters: Vec<char> = tokens[i].token.text.to_lowercase().chars().collect();
        let mut initials: Vec<char> = Vec::new();
        let mut j = i - 1;
        let mut words = Vec::new();
        while j > 0 && initials.len() < letters.len() {
            j -= 1;
            let t = &tokens[j];
            if !t.token.is_word() {
                break;
            }
            let parts: Vec<char> = t
                .token
                .lower()
                .split('-')
                .filter_map(|p| p.chars().next())
                .collect();
            let mut merged = parts.clone();
            merged.extend(initials.iter());
            initials = merged;
            words.push(j);
        }
        if initials == letters {
            drop.extend(words);
        }
    }
    drop
}

pub fn normalize_tokens(text: &str) -> NormText {
    let lex = Lexicon::bundled();
    let (clean, unescaped) = unescape(text);
    let mut applied = BTreeSet::new();
    if unescaped {
        applied.insert(RULE_UNICODE);
    }
    let tagged = pos_tag(&tokenize(&clean));
    let dropped = acronym_expansions(&tagged);
    if !dropped.is_empty() {
        applied.insert(RULE_ACRONYM);
    }

    // ordinals governed by a later "century": "late 18th and early 20th century"
    let mut century_ordinals = BTreeSet::new();
    let mut century_words = BTreeSet::new();
    for (i, t) in tagged.iter().enumerate() {
        if !is_century_word(&t.token.lower()) {
            continue;
        }
        let mut j = i;
        while j > 0 {
            j -= 1;
            let lower = tagged[j].token.lower();
            if ordinal_value(&lower).is_some() {
                century_ordinals.insert(j);
                century_words.insert(i);
            } else if !(matches!(lower.as_str(), "and" | "or" | "to" | "-" | "," | "the")
                || matches!(tagged[j].pos, Pos::Adjective)
                || matches!(lower.as_str(), "late" | "early" | "mid"))
            {
                break;
            }
        }
    }

    let mut out = Vec::with_capacity(tagged.len());
    for (i, t) in tagged.iter().enumerate() {
        if dropped.contains(&i) || century_words.contains(&i) {
            continue;
        }
        let lower = t.token.lower();
        let next_lower = tagged.get(i + 1).map(|n| n.token.lower());
        let push = |out: &mut Vec<NormToken>, key: String, class: Class| {
            out.push(NormToken {
                key,
                class,
                nominal: t.is_nominal() || t.token.kind == TokenKind::Compound,
                proper: t.pos == Pos::ProperNoun,
                negator: false,
            });
        };
        if century_ordinals.contains(&i) {
            if let Some(n) = ordinal_value(&lower) {
                applied.insert(RULE_CENTURY);
                push(&mut out, format!("c{n}"), Class::Strict);
                continue;
            }
        }
        match t.token.kind {
            TokenKind::Punctuation => continue,
            TokenKind::Symbol => {
                if lower.starts_with('°') || matches!(lower.as_str(), "%" | "$" | "€" | "£") {
                    push(&mut out, lower, Class::Strict);
                }
            }
            TokenKind::Number => {
                if let Some(c) = century_of_decade(&lower) {
                    applied.insert(RULE_CENTURY);
                    push(&mut out, format!("c{c}"), Class::Strict);
                } else {
                    push(&mut out, strict_number(&lower), Class::Strict);
                }
            }
            TokenKind::Word | TokenKind::Compound => {
                if lower == "'s" {
                    if out.last().is_some_and(|p: &NormToken| p.nominal) {
                        applied.insert(RULE_POSSESSIVE);
                    }
                    push(&mut out, lower, Class::Function);
                    continue;
                }
                if let Some(n) = NUMBER_WORDS.iter().position(|w| *w == lower) {
                    applied.insert(RULE_NUMBER_WORDS);
                    push(&mut out, n.to_string(), Class::Strict);
                    continue;
                }
                let next_is_unit = next_lower
                    .as_deref()
                    .is_some_and(|n| TIME_UNITS.contains(&lex.lemma(n).as_str()));
                if matches!(lower.as_str(), "a" | "an") && next_is_unit {
                    applied.insert(RULE_INDEFINITE_UNIT);
                    push(&mut out, "1".into(), Class::Strict);
                    continue;
                }
                let negator = NEGATORS.contains(&lower.as_str()) || lower.ends_with("n't");
                let class = if t.pos == Pos::ProperNoun && !lex.contains(&lower) {
                    Class::Strict
                } else if t.pos == Pos::ProperNoun {
                    Class::Content
                } else {
                    classify_word(lex, t)
                };
                let key = match class {
                    Class::Content => content_key(lex, &lower),
                    _ => lower,
                };
                push(&mut out, key, class);
                if negator {
                    if let Some(last) = out.last_mut() {
                        last.negator = true;
                        last.class = Class::Function;
                    }
                }
            }
        }
    }
    NormText { tokens: out, applied }
}

impl NormText {
    /// `(container, complement)` head pairs from "X of Y" and "Y's X".
    pub fn attachments(&self) -> Vec<(String, String)> {
        let toks = &self.tokens;
        let mut pairs = Vec::new();
        for i in 0..toks.len() {
            if toks[i].key == "of" && i > 0 && toks[i - 1].nominal {
                let mut j = i + 1;
                while j < toks.len() && !toks[j].nominal && matches!(toks[j].class, Class::Function | Class::Strict) && toks[j].key != "of" && !toks[j].negator {
                    j += 1;
                }
                if j < toks.len() && toks[j].nominal {
                    let mut k = j;
                    while k + 1 < toks.len() && toks[k + 1].nominal {
                        k += 1;
                    }
                    pairs.push((toks[i - 1].key.clone(), toks[k].key.clone()));
                }
            }
            if toks[i].key == "'s" && i > 0 && toks[i - 1].nominal {
                let mut k = i + 1;
                while k < toks.len() && !toks[k].nominal && toks[k].class == Class::Content {
                    k += 1;
                }
                while k + 1 < toks.len() && toks[k].nominal && toks[k + 1].nominal {
                    k += 1;
                }
                if k < toks.len() && toks[k].nominal {
                    pairs.push((toks[k].key.clone(), toks[i - 1].key.clone()));
                }
            }
        }
        pairs
    }

    pub fn keys(&self, class: Class) -> BTreeSet<&str> {
        self.tokens
            .iter()
            .filter(|t| t.class == class)
            .map(|t| t.key.as_str())
            .collect()
    }

    /// Canonical string form: possessives are rewritten to the "of" order.
    pub fn render(&self) -> String {
        let toks = &self.tokens;
        let mut words: Vec<String> = Vec::new();
        let mut i = 0;
        while i < toks.len() {
            if i + 2 < toks.len() + 1 && toks.get(i + 1).is_some_and(|t| t.key == "'s") && toks[i].nominal {
                // X 's (mods) Y → (mods) Y of X
                let mut k = i + 2;
                let mut tail = Vec::new();
                while k < toks.len() && (toks[k].class == Class::Content) {
                    tail.push(toks[k].key.clone());
                    let stop = toks[k].nominal && toks.get(k + 1).is_none_or(|n| !n.nominal);
                    k += 1;
                    if stop {
                        break;
                    }
                }
                if !tail.is_empty() {
                    words.extend(tail);
                    words.push("of".into());
                    words.push(toks[i].key.clone());
                    i = k;
                    continue;
                }
            }
            words.push(toks[i].key.clone());
            i += 1;
        }
        words.join(" ")
    }
}

/// Lower-cased, lemmatized canonical form of `text`.
pub fn normalize(text: &str) -> String {
    normalize_tokens(text).render()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn century_forms_meet() {
        assert_eq!(normalize("late 18th century"), normalize("late 1700s"));
        assert_eq!(normalize("late 18th century"), "late c18");
        let a = normalize_tokens("occurred between the late 18th and early 20th century");
        assert!(a.keys(Class::Strict).contains("c18"));
        assert!(a.keys(Class::Strict).contains("c20"));
        assert!(a.applied.contains(RULE_CENTURY));
    }

    #[test]
    fn escapes_and_units() {
        assert_eq!(normalize("840\\u00b0C"), normalize("840°C"));
        assert_eq!(normalize("1540 kg/m\\^3"), normalize("1540 kg/m^3"));
        assert_eq!(normalize("x"), "x");
    }

    #[test]
    fn possessive_symmetry() {
        assert_eq!(normalize("calcium's density"), normalize("density of calcium"));
        assert_eq!(normalize_tokens("Calcium's density").attachments(), [("density".to_string(), "calcium".to_string())]);
    }

    #[test]
    fn number_words_and_indefinite_units() {
        let a = normalize_tokens("for a period of one month");
        let b = normalize_tokens("consistent use for a month");
        assert!(a.keys(Class::Strict).contains("1"));
        assert!(b.keys(Class::Strict).contains("1"));
    }

    #[test]
    fn acronym_expansion_is_dropped() {
        let t = normalize_tokens("thyroid issues and Pre-menstrual Syndrome (PMS).");
        assert!(t.applied.contains(RULE_ACRONYM));
        assert!(!t.keys(Class::Content).contains("syndrome"));
        assert!(t.keys(Class::Strict).contains("pms") || t.keys(Class::Content).contains("pms"));
    }

    #[test]
    fn attachment_pairs() {
        assert_eq!(
            normalize_tokens("the base of your skull on your neck").attachments(),
            [("base".to_string(), "skull".to_string())]
        );
        assert_eq!(
            normalize_tokens("Applying ice to the base of the neck").attachments(),
            [("base".to_string(), "neck".to_string())]
        );
    }

    #[test]
    fn adverbs_fold_onto_adjectives() {
        let lex = Lexicon::bundled();
        assert_eq!(content_key(lex, "potentially"), "potential");
        assert_eq!(content_key(lex, "steadily"), "steady");
    }
}
