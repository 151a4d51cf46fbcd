use serde::{Deserialize, Serialize};

use super::token::{tokenize, Span, Token, TokenKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub span: Span,
}

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "st", "vs", "fig", "approx", "inc", "ltd", "jr", "sr", "no",
    "vol", "pp", "cf", "al",
];

const DOMAIN_SUFFIXES: &[&str] = &["com", "org", "net", "edu", "gov", "io"];

const CLOSERS: &[&str] = &[")", "]", "\"", "”", "’", "'"];

fn gap_has(text: &str, a: &Token, b: &Token, pred: impl Fn(char) -> bool) -> bool {
    text[a.span.end..b.span.start].chars().any(pred)
}

fn is_terminal(tok: &Token) -> bool {
    tok.kind == TokenKind::Punctuation && matches!(tok.text.as_str(), "." | "!" | "?" | "..." | "…")
}

/// Splits text into sentences. Tolerates a missing space after a period
/// (`calcium.These`), keeps decimals and unit symbols intact, and treats line
/// breaks as hard boundaries.
pub fn split_sentences(text: &str) -> Vec<Sentence> {
    let tokens = tokenize(text);
    let mut out = Vec::new();
    let mut first = 0usize;
    let mut i = 0usize;

    let push = |from: usize, to: usize, out: &mut Vec<Sentence>| {
        let span = Span::new(tokens[from].span.start, tokens[to].span.end);
        out.push(Sentence {
            text: text[span.start..span.end].to_string(),
            span,
        });
    };

    while i < tokens.len() {
        let tok = &tokens[i];
        let next = tokens.get(i + 1);
        let mut boundary_at = None;

        if let Some(n) = next {
            if gap_has(text, tok, n, |c| c == '\n') {
                boundary_at = Some(i);
            }
        }

        if boundary_at.is_none() && is_terminal(tok) {
            // absorb closing quotes and brackets glued to the terminal mark
            let mut end = i;
            while let Some(n) = tokens.get(end + 1) {
                if CLOSERS.contains(&n.text.as_str()) && n.span.start == tokens[end].span.end {
                    end += 1;
                } else {
                    break;
                }
            }
            let prev_word = if i > first { Some(&tokens[i - 1]) } else { None };
            let abbreviation = tok.text == "."
                && prev_word.is_some_and(|p| {
                    p.span.end == tok.span.start && ABBREVIATIONS.contains(&p.lower().as_str())
                });
            let split = match tokens.get(end + 1) {
                None => true,
                Some(n) => {
                    let spaced = n.span.start > tokens[end].span.end;
                    let ellipsis = matches!(tok.text.as_str(), "…" | "...");
                    if abbreviation {
                        false
                    } else if ellipsis {
                        spaced && n.starts_uppercase()
                    } else if spaced {
                        true
                    } else if n.kind == TokenKind::Number {
                        false
                    } else if n.is_word() {
                        n.starts_uppercase()
                            || !(tok.text == "." && DOMAIN_SUFFIXES.contains(&n.lower().as_str()))
                    } else {
                        false
                    }
                }
            };
            if split {
                boundary_at = Some(end);
            }
        }

        match boundary_at {
            Some(end) => {
                push(first, end, &mut out);
                first = end + 1;
                i = end + 1;
            }
            None => i += 1,
        }
    }
    if first < tokens.len() {
        push(first, tokens.len() - 1, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(s: &str) -> Vec<String> {
        split_sentences(s).into_iter().map(|s| s.text).collect()
    }

    #[test]
    fn simple_pairs() {
        assert_eq!(texts("A. B."), ["A.", "B."]);
        assert!(texts("").is_empty());
    }

    #[test]
    fn missing_space_after_period() {
        let s = texts("not all of them are true for calcium.These are the two that I know.");
        assert_eq!(s, ["not all of them are true for calcium.", "These are the two that I know."]);
        assert_eq!(texts("coating.Reacts steadily").len(), 2);
        assert_eq!(texts("with oxygen, or air.an also burn").len(), 2);
    }

    #[test]
    fn degrees_and_decimals_do_not_split() {
        assert_eq!(texts("Calcium melts at 840°C."), ["Calcium melts at 840°C."]);
        assert_eq!(texts("Pay $7.25 per hour. Then stop."), ["Pay $7.25 per hour.", "Then stop."]);
        assert_eq!(texts("Visit example.com today."), ["Visit example.com today."]);
    }

    #[test]
    fn ellipsis_inside_word_is_kept() {
        let s = texts("a poor one com …pared to most other metals.Diamagnetic.");
        assert_eq!(s, ["a poor one com …pared to most other metals.", "Diamagnetic."]);
    }

    #[test]
    fn lowercase_after_space_still_splits() {
        assert_eq!(texts("silver-grey metal. melts at 840°C").len(), 2);
    }

    #[test]
    fn lines_are_boundaries() {
        assert_eq!(texts("Specifics\nDetail 1:\nAll good."), ["Specifics", "Detail 1:", "All good."]);
    }

    #[test]
    fn spans_cover_all_content() {
        let src = "One two. Three (four). Five";
        let sents = split_sentences(src);
        let covered: String = sents.iter().map(|s| &src[s.span.start..s.span.end]).collect();
        let non_ws: String = src.chars().filter(|c| !c.is_whitespace()).collect();
        let cov_non_ws: String = covered.chars().filter(|c| !c.is_whitespace()).collect();
        assert_eq!(non_ws, cov_non_ws);
    }
}
