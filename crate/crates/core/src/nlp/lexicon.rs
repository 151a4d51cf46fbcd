//! Bundled word lists: part-of-speech lexicon and lemma links.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::Pos;

const LEXICON_TSV: &str = include_str!("../../resources/lexicon.tsv");
const LEMMAS_TSV: &str = include_str!("../../resources/lemmas.tsv");

#[derive(Debug, Default)]
pub struct Lexicon {
    tags: HashMap<String, Vec<Pos>>,
    lemmas: HashMap<String, String>,
}

impl Lexicon {
    /// Parses `word<TAB>pos` lines and `form<TAB>lemma` lines. `#` starts a comment.
    pub fn parse(lexicon: &str, lemmas: &str) -> Self {
        let mut tags: HashMap<String, Vec<Pos>> = HashMap::new();
        for (word, pos) in tsv_pairs(lexicon) {
            if let Some(pos) = Pos::from_lexicon_tag(pos) {
                let entry = tags.entry(word.to_lowercase()).or_default();
                if !entry.contains(&pos) {
                    entry.push(pos);
                }
            }
        }
        let lemmas = tsv_pairs(lemmas)
            .map(|(f, l)| (f.to_lowercase(), l.to_lowercase()))
            .collect();
        Self { tags, lemmas }
    }

    pub fn bundled() -> &'static Lexicon {
        static LEX: OnceLock<Lexicon> = OnceLock::new();
        LEX.get_or_init(|| Lexicon::parse(LEXICON_TSV, LEMMAS_TSV))
    }

    pub fn tags(&self, word: &str) -> &[Pos] {
        self.tags
            .get(&word.to_lowercase())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn contains(&self, word: &str) -> bool {
        self.tags.contains_key(&word.to_lowercase())
    }

    pub fn has(&self, word: &str, pos: Pos) -> bool {
        self.tags(word).contains(&pos)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Dictionary lemma, falling back to suffix stripping for unknown forms.
    pub fn lemma(&self, word: &str) -> String {
        let w = word.to_lowercase();
        if let Some(l) = self.lemmas.get(&w) {
            return l.clone();
        }
        if self.tags.contains_key(&w) || w.chars().count() <= 3 || !w.chars().all(char::is_alphabetic) {
            return w;
        }
        let known = |s: &str| self.tags.contains_key(s);
        if let Some(stem) = w.strip_suffix("ies") {
            return format!("{stem}y");
        }
        for suffix in ["sses", "ches", "shes", "xes"] {
            if w.ends_with(suffix) {
                return w[..w.len() - 2].to_string();
            }
        }
        for suffix in ["ing", "ed"] {
            if let Some(stem) = w.strip_suffix(suffix) {
                if stem.len() < 3 {
                    break;
                }
                let with_e = format!("{stem}e");
                if known(&with_e) {
                    return with_e;
                }
                if known(stem) {
                    return stem.to_string();
                }
                let b = stem.as_bytes();
                if b.len() >= 2 && b[b.len() - 1] == b[b.len() - 2] {
                    return stem[..stem.len() - 1].to_string();
                }
                return stem.to_string();
            }
        }
        if w.ends_with('s') && !w.ends_with("ss") && !w.ends_with("us") && !w.ends_with("is") {
            return w[..w.len() - 1].to_string();
        }
        w
    }
}

fn tsv_pairs(src: &str) -> impl Iterator<Item = (&str, &str)> {
    src.lines()
        .map(str::trim_end)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('\t'))
        .map(|(a, b)| (a.trim(), b.trim()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_lexicon_is_substantial() {
        let lex = Lexicon::bundled();
        assert!(lex.len() > 4000, "lexicon has {} words", lex.len());
        assert!(lex.has("the", Pos::Determiner));
        assert!(lex.has("calcium", Pos::Noun));
        assert!(lex.has("melts", Pos::Verb));
    }

    #[test]
    fn lemmas() {
        let lex = Lexicon::bundled();
        assert_eq!(lex.lemma("melts"), "melt");
        assert_eq!(lex.lemma("Placing"), "place");
        assert_eq!(lex.lemma("giving"), "give");
        assert_eq!(lex.lemma("properties"), "property");
        assert_eq!(lex.lemma("reduction"), "reduce");
        assert_eq!(lex.lemma("headaches"), "headache");
        assert_eq!(lex.lemma("found"), "find");
        assert_eq!(lex.lemma("calcium"), "calcium");
        assert_eq!(lex.lemma("glorbing"), "glorb");
    }

    #[test]
    fn parse_ignores_comments_and_unknown_tags() {
        let lex = Lexicon::parse("# c\nfoo\tnoun\nfoo\tverb\nbar\tbogus\n", "");
        assert_eq!(lex.tags("FOO"), [Pos::Noun, Pos::Verb]);
        assert!(!lex.contains("bar"));
    }
}
