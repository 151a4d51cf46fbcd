use serde::{Deserialize, Serialize};

use super::lexicon::Lexicon;
use super::tagger::{pos_tag, TaggedToken};
use super::token::{tokenize, Span, TokenKind};
use super::Pos;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NpKind {
    /// determiner + modifiers + head noun
    Base,
    /// `X's Y`
    Possessive,
    /// `X of Y`
    Container,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NounPhrase {
    pub text: String,
    /// Lemma of the head noun, lower-cased.
    pub head: String,
    pub span: Span,
    /// The span without leading determiners.
    pub core_span: Span,
    pub modifiers: Vec<String>,
    pub kind: NpKind,
}

const COORDINATORS: &[&str] = &["and", "or", ","];

impl NounPhrase {
    /// Builds a phrase that is not tied to a source text (spans are empty).
    pub fn synthetic(text: &str) -> NounPhrase {
        let mut nps = extract_noun_phrases(text);
        nps.retain(|np| np.kind == NpKind::Base);
        match nps.into_iter().max_by_key(|np| np.span.len()) {
            Some(mut np) if np.span.len() == text.trim().len() => {
                np.span = Span::new(0, 0);
                np.core_span = Span::new(0, 0);
                np
            }
            _ => NounPhrase {
                text: text.trim().to_string(),
                head: Lexicon::bundled().lemma(text.split_whitespace().last().unwrap_or("")),
                span: Span::new(0, 0),
                core_span: Span::new(0, 0),
                modifiers: text
                    .split_whitespace()
                    .rev()
                    .skip(1)
                    .collect::<Vec<_>>()
                    .into_iter()
                    .rev()
                    .map(str::to_string)
                    .collect(),
                kind: NpKind::Base,
            },
        }
    }

    /// Text without leading determiners.
    pub fn core_text(&self) -> &str {
        if self.span.is_empty() && self.core_span.is_empty() {
            return strip_leading_determiners(&self.text);
        }
        let offset = self.core_span.start.saturating_sub(self.span.start);
        self.text.get(offset..).unwrap_or(&self.text)
    }

    /// Lower-cased core text with collapsed whitespace; the comparison key
    /// for coreference and caching.
    pub fn normalized(&self) -> String {
        normalize_np_text(self.core_text())
    }

    pub fn head_surface(&self) -> &str {
        self.text.split_whitespace().last().unwrap_or("")
    }

    pub fn is_proper(&self) -> bool {
        let toks = pos_tag(&tokenize(self.core_text()));
        toks.iter().any(|t| t.pos == Pos::ProperNoun)
    }

    pub fn has_coordination(&self) -> bool {
        self.modifiers.iter().any(|m| m == "and" || m == "or")
    }
}

fn strip_leading_determiners(text: &str) -> &str {
    let lex = Lexicon::bundled();
    let mut rest = text.trim_start();
    while let Some((first, tail)) = rest.split_once(char::is_whitespace) {
        if lex.has(first, Pos::Determiner) && !lex.has(first, Pos::Noun) {
            rest = tail.trim_start();
        } else {
            break;
        }
    }
    rest
}

pub fn normalize_np_text(text: &str) -> String {
    strip_leading_determiners(text)
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

struct Chunk {
    start: usize,
    core_start: usize,
    head: usize,
}

fn chunk_at(toks: &[TaggedToken], i: usize) -> Option<Chunk> {
    let mut j = i;
    while j < toks.len() && toks[j].pos == Pos::Determiner && j - i < 2 {
        j += 1;
    }
    let core_start = j;
    let mut head = None;
    let mut k = j;
    while k < toks.len() {
        let t = &toks[k];
        let accept = if COORDINATORS.contains(&t.token.lower().as_str()) {
            head.is_none()
                && k > core_start
                && toks[k - 1].pos == Pos::Adjective
                && toks.get(k + 1).is_some_and(|n| n.pos == Pos::Adjective)
        } else {
            match t.pos {
                Pos::Noun | Pos::ProperNoun | Pos::Adjective => true,
                Pos::Other => t.token.kind == TokenKind::Number,
                _ => false,
            }
        };
        if !accept {
            break;
        }
        if t.is_nominal() {
            head = Some(k);
        }
        k += 1;
    }
    head.map(|head| Chunk { start: i, core_start, head })
}

fn make_np(src: &str, toks: &[TaggedToken], start: usize, core_start: usize, head: usize, kind: NpKind) -> NounPhrase {
    let span = Span::new(toks[start].token.span.start, toks[head].token.span.end);
    let core_span = Span::new(toks[core_start].token.span.start, span.end);
    NounPhrase {
        text: src[span.start..span.end].to_string(),
        head: Lexicon::bundled().lemma(&toks[head].token.text),
        span,
        core_span,
        modifiers: toks[core_start..head].iter().map(|t| t.token.text.clone()).collect(),
        kind,
    }
}

/// Base noun-phrase chunks plus possessive (`X's Y`) and prepositional
/// (`X of Y`) composites, ordered by span.
pub fn extract_noun_phrases(text: &str) -> Vec<NounPhrase> {
    let toks = pos_tag(&tokenize(text));
    let mut chunks = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        match chunk_at(&toks, i) {
            Some(c) => {
                i = c.head + 1;
                chunks.push(c);
            }
            None => i += 1,
        }
    }

    let mut out: Vec<NounPhrase> = chunks
        .iter()
        .map(|c| make_np(text, &toks, c.start, c.core_start, c.head, NpKind::Base))
        .collect();

    for pair in chunks.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if b.start != a.head + 2 {
            continue;
        }
        let link = toks[a.head + 1].token.lower();
        if link == "'s" && b.core_start == b.start {
            out.push(make_np(text, &toks, a.start, a.core_start, b.head, NpKind::Possessive));
            let last = out.len() - 1;
            out[last].head = Lexicon::bundled().lemma(&toks[b.head].token.text);
        } else if link == "of" {
            let mut np = make_np(text, &toks, a.start, a.core_start, b.head, NpKind::Container);
            np.head = Lexicon::bundled().lemma(&toks[a.head].token.text);
            np.modifiers = toks[a.core_start..a.head].iter().map(|t| t.token.text.clone()).collect();
            out.push(np);
        }
    }

    out.sort_by(|x, y| x.span.start.cmp(&y.span.start).then(x.span.end.cmp(&y.span.end)));
    out
}

/// Distributes coordinated modifiers over the head noun:
/// "the chemical and physical properties" becomes "chemical properties" and
/// "physical properties". Phrases without coordination come back unchanged.
pub fn expand_coordination(np: &NounPhrase) -> Vec<NounPhrase> {
    if np.kind != NpKind::Base || !np.has_coordination() {
        return vec![np.clone()];
    }
    let mods = &np.modifiers;
    let coord: Vec<usize> = mods
        .iter()
        .enumerate()
        .filter(|(_, m)| COORDINATORS.contains(&m.to_lowercase().as_str()))
        .map(|(i, _)| i)
        .collect();
    let first = coord[0].saturating_sub(1);
    let last = (coord[coord.len() - 1] + 1).min(mods.len() - 1);
    let prefix = &mods[..first];
    let suffix = &mods[last + 1..];
    let conjuncts = mods[first..=last]
        .iter()
        .filter(|m| !COORDINATORS.contains(&m.to_lowercase().as_str()));

    conjuncts
        .map(|c| {
            let modifiers: Vec<String> = prefix
                .iter()
                .chain(std::iter::once(c))
                .chain(suffix.iter())
                .cloned()
                .collect();
            let mut words = modifiers.clone();
            words.push(np.head_surface().to_string());
            NounPhrase {
                text: words.join(" "),
                head: np.head.clone(),
                span: np.core_span,
                core_span: np.core_span,
                modifiers,
                kind: NpKind::Base,
            }
        })
        .collect()
}
