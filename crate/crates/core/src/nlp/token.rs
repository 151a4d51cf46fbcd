use serde::{Deserialize, Serialize};

/// Half-open byte range into a source string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenKind {
    Word,
    Number,
    Punctuation,
    Symbol,
    /// Units and glued forms such as `kg/m^3`, `solution/slurry` or `Ca(2+)`.
    Compound,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub span: Span,
    pub kind: TokenKind,
}

impl Token {
    pub fn is_word(&self) -> bool {
        matches!(self.kind, TokenKind::Word | TokenKind::Compound)
    }

    pub fn lower(&self) -> String {
        self.text.to_lowercase()
    }

    pub fn starts_uppercase(&self) -> bool {
        self.text.chars().next().is_some_and(char::is_uppercase)
    }
}

const CONTRACTION_HOSTS: &[&str] = &[
    "it", "that", "he", "she", "what", "there", "let", "here", "who", "where", "how",
];

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '…' | '—' | '–' | '“' | '”' | '‘' | '’' | '«' | '»' | '¿' | '¡' | '•' | '·'
        )
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '’'
}

/// Splits `text` into tokens. Gaps between tokens are whitespace only, so the
/// source is reconstructible from the tokens and their spans.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let byte_at = |i: usize| chars.get(i).map_or(text.len(), |&(b, _)| b);
    let ch = |i: usize| chars.get(i).map(|&(_, c)| c);
    let mut tokens = Vec::new();
    let mut i = 0;

    while i < chars.len() {
        let c = chars[i].1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let prev = if i == 0 { None } else { ch(i - 1) };
        let signed_number = (c == '+' || c == '-')
            && ch(i + 1).is_some_and(|n| n.is_ascii_digit())
            && prev.is_none_or(|p| p.is_whitespace() || p == '(');

        let kind;
        if c.is_ascii_digit() || signed_number {
            i += 1;
            while ch(i).is_some_and(|n| n.is_ascii_digit()) {
                i += 1;
            }
            // internal separators: 7.25, 1,540
            while matches!(ch(i), Some('.') | Some(','))
                && ch(i + 1).is_some_and(|n| n.is_ascii_digit())
            {
                i += 2;
                while ch(i).is_some_and(|n| n.is_ascii_digit()) {
                    i += 1;
                }
            }
            // ordinals (18th) and decades (1700s)
            let rest: String = chars[i..chars.len().min(i + 3)]
                .iter()
                .map(|&(_, c)| c.to_ascii_lowercase())
                .collect();
            let ends_word = |k: usize| ch(k).is_none_or(|n| !n.is_alphanumeric());
            if ["st", "nd", "rd", "th"].iter().any(|s| rest.starts_with(s)) && ends_word(i + 2) {
                i += 2;
            } else if rest.starts_with('s') && ends_word(i + 1) {
                i += 1;
            } else if matches!(ch(i), Some('+') | Some('-')) && ch(i + 1) == Some(')') {
                // ionic charge inside parentheses: (2+)
                i += 1;
            }
            kind = TokenKind::Number;
        } else if c == '°' || c == 'º' {
            i += 1;
            if ch(i).is_some_and(|n| n.is_alphabetic()) && ch(i + 1).is_none_or(|n| !n.is_alphabetic()) {
                i += 1;
            }
            kind = TokenKind::Symbol;
        } else if c.is_alphanumeric() {
            let mut compound = false;
            i += 1;
            loop {
                match ch(i) {
                    Some(n) if n.is_alphanumeric() => i += 1,
                    Some('-') if ch(i + 1).is_some_and(char::is_alphanumeric) => i += 1,
                    Some('/') if ch(i + 1).is_some_and(char::is_alphanumeric) => {
                        compound = true;
                        i += 1;
                    }
                    Some('^') if ch(i + 1).is_some_and(|n| n.is_ascii_digit()) => {
                        compound = true;
                        i += 1;
                    }
                    // acronyms such as e.g. or U.S.
                    Some('.')
                        if ch(i + 1).is_some_and(char::is_alphabetic)
                            && ch(i + 2) == Some('.')
                            && i - start == 1 =>
                    {
                        i += 3;
                        while ch(i).is_some_and(char::is_alphabetic) && ch(i + 1) == Some('.') {
                            i += 2;
                        }
                        break;
                    }
                    Some(a) if is_apostrophe(a) && ch(i + 1).is_some_and(char::is_alphabetic) => {
                        let word: String = chars[start..i].iter().map(|&(_, c)| c).collect();
                        let is_possessive_s = matches!(ch(i + 1), Some('s') | Some('S'))
                            && ch(i + 2).is_none_or(|n| !n.is_alphabetic());
                        if is_possessive_s && !CONTRACTION_HOSTS.contains(&word.to_lowercase().as_str()) {
                            break;
                        }
                        i += 1;
                    }
                    // ionic notation glued to an element symbol: Ca(2+)
                    Some('(')
                        if ch(i + 1).is_some_and(|n| n.is_ascii_digit())
                            && matches!(ch(i + 2), Some('+') | Some('-'))
                            && ch(i + 3) == Some(')') =>
                    {
                        compound = true;
                        i += 4;
                    }
                    _ => break,
                }
            }
            kind = if compound {
                TokenKind::Compound
            } else {
                TokenKind::Word
            };
        } else if is_apostrophe(c)
            && matches!(ch(i + 1), Some('s') | Some('S'))
            && ch(i + 2).is_none_or(|n| !n.is_alphabetic())
            && prev.is_some_and(char::is_alphanumeric)
        {
            i += 2;
            kind = TokenKind::Word;
        } else if is_punct(c) {
            i += 1;
            // runs of the same mark: "--", "..."
            if c == '-' || c == '.' {
                while ch(i) == Some(c) {
                    i += 1;
                }
            }
            kind = TokenKind::Punctuation;
        } else {
            i += 1;
            kind = TokenKind::Symbol;
        }

        let span = Span::new(byte_at(start), byte_at(i));
        tokens.push(Token {
            text: text[span.start..span.end].to_string(),
            span,
            kind,
        });
    }
    tokens
}
