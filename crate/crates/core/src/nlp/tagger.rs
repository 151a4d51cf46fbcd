use serde::{Deserialize, Serialize};

use super::lexicon::Lexicon;
use super::token::{Token, TokenKind};
use super::Pos;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedToken {
    pub token: Token,
    pub pos: Pos,
}

impl TaggedToken {
    pub fn text(&self) -> &str {
        &self.token.text
    }

    pub fn is(&self, pos: Pos) -> bool {
        self.pos == pos
    }

    pub fn is_nominal(&self) -> bool {
        matches!(self.pos, Pos::Noun | Pos::ProperNoun)
    }
}

const SUBJECT_PRONOUNS: &[&str] = &["i", "you", "we", "they", "he", "she", "it"];
const MODALS_AND_DO: &[&str] = &[
    "can", "could", "may", "might", "must", "shall", "should", "will", "would", "do", "does", "did",
    "to", "n't", "not",
];
const BE_HAVE: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "being", "am", "has", "have", "had", "'s", "'re",
];
const IRREGULAR_PARTICIPLES: &[&str] = &[
    "known", "given", "taken", "broken", "frozen", "hidden", "shown", "grown", "written", "done",
    "made", "found", "built", "held", "left", "lost", "paid", "said", "sold", "told",
];

fn is_sentence_start(tokens: &[Token], i: usize) -> bool {
    if i == 0 {
        return true;
    }
    let prev = &tokens[i - 1];
    prev.kind == TokenKind::Punctuation
        && matches!(prev.text.as_str(), "." | "!" | "?" | "…" | ":" | "--" | "\"" | "“")
}

fn unknown_word_pos(tok: &Token, sentence_start: bool, next: Option<&Token>) -> Pos {
    let text = tok.text.as_str();
    let letters: Vec<char> = text.chars().filter(|c| c.is_alphabetic()).collect();
    let all_caps = letters.len() >= 2 && letters.iter().all(|c| c.is_uppercase());
    if all_caps {
        return Pos::ProperNoun;
    }
    if tok.starts_uppercase() {
        let next_capitalized = next.is_some_and(|n| n.is_word() && n.starts_uppercase());
        if !sentence_start || next_capitalized {
            return Pos::ProperNoun;
        }
    }
    let lower = text.to_lowercase();
    if lower.ends_with("ly") && lower.len() > 4 {
        return Pos::Other;
    }
    const ADJ_SUFFIXES: &[&str] = &[
        "ous", "ful", "ive", "able", "ible", "ical", "ic", "less", "ish", "ary", "al",
    ];
    if ADJ_SUFFIXES.iter().any(|s| lower.ends_with(s)) && lower.len() > 4 {
        return Pos::Adjective;
    }
    if (lower.ends_with("ing") || lower.ends_with("ed")) && lower.len() > 4 {
        return Pos::Verb;
    }
    Pos::Noun
}

/// Assigns one tag to every token. Closed classes come from the lexicon,
/// unknown words fall back to suffix heuristics, and remaining ties prefer
/// nouns.
pub fn pos_tag(tokens: &[Token]) -> Vec<TaggedToken> {
    let lex = Lexicon::bundled();
    let mut tags: Vec<Pos> = Vec::with_capacity(tokens.len());

    for (i, tok) in tokens.iter().enumerate() {
        let pos = match tok.kind {
            TokenKind::Number | TokenKind::Punctuation | TokenKind::Symbol => Pos::Other,
            TokenKind::Compound => Pos::Noun,
            TokenKind::Word => {
                let lower = tok.lower();
                let next = tokens.get(i + 1);
                let start = is_sentence_start(tokens, i);
                if lower == "'s" {
                    Pos::Other
                } else if lower.contains('\'') || lower.contains('’') {
                    let host = lower.split(['\'', '’']).next().unwrap_or("");
                    if lex.has(host, Pos::Pronoun) {
                        Pos::Pronoun
                    } else if lex.has(host, Pos::Verb) {
                        Pos::Verb
                    } else {
                        Pos::Other
                    }
                } else {
                    let options = lex.tags(&lower);
                    let acronym = tok.text.chars().count() >= 2
                        && tok.text.chars().all(|c| c.is_ascii_uppercase());
                    if acronym && options.iter().all(|p| *p == Pos::Noun) {
                        Pos::ProperNoun
                    } else if options.is_empty() {
                        unknown_word_pos(tok, start, next)
                    } else {
                        resolve(options, tokens, &tags, i, start)
                    }
                }
            }
        };
        tags.push(pos);
    }

    // capitalised nouns glued to a following proper noun form one name: "Cruise LLC"
    for i in (0..tokens.len().saturating_sub(1)).rev() {
        if tags[i] == Pos::Noun
            && tokens[i].starts_uppercase()
            && tags[i + 1] == Pos::ProperNoun
            && tokens[i].span.end < tokens[i + 1].span.start
        {
            tags[i] = Pos::ProperNoun;
        }
    }

    // participles used attributively: "the hydrated ion", "improved digestion"
    for i in 0..tokens.len() {
        if tags[i] != Pos::Verb {
            continue;
        }
        let lower = tokens[i].lower();
        let participle = lower.ends_with("ed") || lower.ends_with("en") || IRREGULAR_PARTICIPLES.contains(&lower.as_str());
        let next_nominal = tokens.get(i + 1).is_some_and(|n| {
            n.is_word() && matches!(tags.get(i + 1), Some(Pos::Noun) | Some(Pos::ProperNoun))
        });
        let prev_ok = i == 0
            || matches!(tags[i - 1], Pos::Determiner | Pos::Adjective | Pos::Conjunction | Pos::Preposition | Pos::Verb | Pos::Other)
                && !BE_HAVE.contains(&tokens[i - 1].lower().as_str());
        if participle && next_nominal && prev_ok && i > 0 {
            tags[i] = Pos::Adjective;
        }
    }

    tokens
        .iter()
        .cloned()
        .zip(tags)
        .map(|(token, pos)| TaggedToken { token, pos })
        .collect()
}

fn resolve(options: &[Pos], tokens: &[Token], prior: &[Pos], i: usize, start: bool) -> Pos {
    if options.len() == 1 {
        return options[0];
    }
    let lex = Lexicon::bundled();
    let lower = tokens[i].lower();
    let next = tokens.get(i + 1).filter(|n| n.is_word() || n.kind == TokenKind::Number);
    let next_tags = next.map(|n| lex.tags(&n.text)).unwrap_or(&[]);
    let next_unknown_word = next.is_some_and(|n| n.is_word() && !lex.contains(&n.text));
    let next_is_nominal = next.is_some_and(|n| n.kind == TokenKind::Number || n.kind == TokenKind::Compound)
        || next_unknown_word
        || next_tags.iter().any(|t| matches!(t, Pos::Noun | Pos::Adjective));
    let prev_lower = if i > 0 { tokens[i - 1].lower() } else { String::new() };
    let prev_tag = if i > 0 { prior.get(i - 1).copied() } else { None };
    let has = |p: Pos| options.contains(&p);

    if lower == "that" {
        if next_tags.contains(&Pos::Verb) && !next_is_nominal {
            return Pos::Pronoun;
        }
        if next_is_nominal && !next_tags.iter().any(|t| matches!(t, Pos::Determiner | Pos::Pronoun)) {
            return Pos::Determiner;
        }
        return Pos::Conjunction;
    }
    if has(Pos::Determiner) && has(Pos::Pronoun) {
        let followed_by_det = next_tags.contains(&Pos::Determiner);
        return if next_is_nominal && !followed_by_det {
            Pos::Determiner
        } else {
            Pos::Pronoun
        };
    }
    if has(Pos::Verb) {
        let verb_context = MODALS_AND_DO.contains(&prev_lower.as_str())
            || SUBJECT_PRONOUNS.contains(&prev_lower.as_str())
            || (start
                && next_tags
                    .iter()
                    .any(|t| matches!(t, Pos::Determiner | Pos::Pronoun | Pos::Preposition | Pos::Other)));
        let nominal_context = matches!(prev_tag, Some(Pos::Determiner) | Some(Pos::Adjective));
        if verb_context && !nominal_context {
            return Pos::Verb;
        }
    }
    if has(Pos::Adjective) && (has(Pos::Noun) || has(Pos::Verb)) {
        let coordinated_adjective = next.is_some_and(|n| matches!(n.lower().as_str(), "and" | "or"))
            && tokens.get(i + 2).is_some_and(|n| lex.has(&n.text, Pos::Adjective));
        if coordinated_adjective {
            return Pos::Adjective;
        }
        if next_is_nominal && next.is_some_and(|n| !lex.has(&n.text, Pos::Preposition)) {
            return Pos::Adjective;
        }
        if BE_HAVE.contains(&prev_lower.as_str()) || prev_lower == "very" {
            return Pos::Adjective;
        }
    }
    if has(Pos::Noun) {
        return Pos::Noun;
    }
    if has(Pos::Preposition) && has(Pos::Conjunction) {
        let next_is_np_start = next_is_nominal || next_tags.contains(&Pos::Determiner);
        return if next_is_np_start {
            Pos::Preposition
        } else {
            Pos::Conjunction
        };
    }
    options[0]
}
