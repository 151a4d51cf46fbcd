//! Deterministic text segmentation: tokens, sentences, part-of-speech tags
//! and noun-phrase chunks. Everything here is a pure function of its input.

mod chunk;
mod lexicon;
mod sentence;
mod tagger;
mod token;

use serde::{Deserialize, Serialize};

pub use chunk::{expand_coordination, extract_noun_phrases, normalize_np_text, NounPhrase, NpKind};
pub use lexicon::Lexicon;
pub use sentence::{split_sentences, Sentence};
pub use tagger::{pos_tag, TaggedToken};
pub use token::{tokenize, Span, Token, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pos {
    Noun,
    ProperNoun,
    Adjective,
    Determiner,
    Verb,
    Pronoun,
    Preposition,
    Conjunction,
    Other,
}

impl Pos {
    pub fn from_lexicon_tag(tag: &str) -> Option<Pos> {
        Some(match tag {
            "noun" => Pos::Noun,
            "proper-noun" => Pos::ProperNoun,
            "adjective" => Pos::Adjective,
            "determiner" => Pos::Determiner,
            "verb" => Pos::Verb,
            "pronoun" => Pos::Pronoun,
            "preposition" => Pos::Preposition,
            "conjunction" => Pos::Conjunction,
            "other" => Pos::Other,
            _ => return None,
        })
    }
}

/// Lemma of a single word using the bundled lexicon.
pub fn lemma(word: &str) -> String {
    Lexicon::bundled().lemma(word)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn tokens_reconstruct_source(src in "\\PC{0,80}") {
            let toks = tokenize(&src);
            let mut rebuilt = String::new();
            let mut pos = 0;
            for t in &toks {
                prop_assert!(t.span.start >= pos);
                let gap = &src[pos..t.span.start];
                prop_assert!(gap.chars().all(char::is_whitespace));
                rebuilt.push_str(gap);
                prop_assert_eq!(&src[t.span.start..t.span.end], t.text.as_str());
                prop_assert!(!t.text.is_empty());
                rebuilt.push_str(&t.text);
                pos = t.span.end;
            }
            rebuilt.push_str(&src[pos..]);
            prop_assert_eq!(rebuilt, src);
        }

        #[test]
        fn chunking_is_deterministic(src in "[a-zA-Z ,.']{0,60}") {
            prop_assert_eq!(extract_noun_phrases(&src), extract_noun_phrases(&src));
        }

        #[test]
        fn sentence_spans_are_ordered(src in "[a-zA-Z .!?\n]{0,60}") {
            let s = split_sentences(&src);
            for w in s.windows(2) {
                prop_assert!(w[0].span.end <= w[1].span.start);
            }
        }
    }
}
