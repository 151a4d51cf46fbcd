use serde::{Deserialize, Serialize};

use crate::faithfulness::NO_FACTS_NOTICE;
use crate::query_split::AtomicQuery;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComposeOptions {
    pub include_specifics: bool,
}

impl Default for ComposeOptions {
    fn default() -> Self {
        Self { include_specifics: true }
    }
}

/// `**Query text**` with the first letter raised, as in "**Benefits of ice
/// for neck**".
pub fn title_line(query: &str) -> String {
    let q = query.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut chars = q.chars();
    let title: String = match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    };
    format!("**{title}**")
}

fn paragraph(sentences: &[String]) -> String {
    sentences
        .iter()
        .map(|s| {
            let s = s.trim();
            if s.trim_end_matches([')', '"', '\'']).ends_with(['.', '!', '?']) {
                s.to_string()
            } else {
                format!("{s}.")
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Title, the answers in split order, then a "Specifics" section with one
/// "Detail N:" block per group of source sentences.
pub fn compose_response(answers: &[(AtomicQuery, String)], details: &[Vec<String>], options: ComposeOptions) -> String {
    let Some((first, _)) = answers.first() else {
        return String::new();
    };
    let mut blocks = vec![title_line(&first.parent_query)];
    let mut notice = false;
    for (_, a) in answers {
        let a = a.trim();
        if a == NO_FACTS_NOTICE {
            if notice {
                continue;
            }
            notice = true;
        }
        if !a.is_empty() {
            blocks.push(a.to_string());
        }
    }
    let details: Vec<&Vec<String>> = details.iter().filter(|d| !d.is_empty()).collect();
    if options.include_specifics && !details.is_empty() {
        blocks.push("**Specifics**".into());
        for (i, d) in details.iter().enumerate() {
            blocks.push(format!("**Detail {}:**", i + 1));
            blocks.push(paragraph(d));
        }
    }
    let mut out = blocks.join("\n\n");
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faithfulness::{is_heading, segment_response};

    fn q(text: &str, parent: &str, index: usize) -> AtomicQuery {
        AtomicQuery {
            text: text.into(),
            focal_nps: Vec::new(),
            parent_query: parent.into(),
            index,
        }
    }

    #[test]
    fn appendix_layout() {
        let answers = vec![(q("benefits of ice for neck", "benefits of ice for neck", 0), "Ice helps.".to_string())];
        let details = vec![vec!["Place an ice cube at the base of your skull on your neck.".to_string(), "Do this in the morning".to_string()]];
        let out = compose_response(&answers, &details, ComposeOptions::default());
        assert_eq!(
            out,
            "**Benefits of ice for neck**\n\nIce helps.\n\n**Specifics**\n\n**Detail 1:**\n\nPlace an ice cube at the base of your skull on your neck. Do this in the morning.\n"
        );
        assert!(out.lines().filter(|l| !l.is_empty()).take(1).all(is_heading));
        assert_eq!(segment_response(&out).len(), 3);
    }

    #[test]
    fn specifics_off() {
        let answers = vec![(q("a", "what is ice", 0), "Ice is cold.".to_string())];
        let out = compose_response(&answers, &[vec!["Ice is cold.".into()]], ComposeOptions { include_specifics: false });
        assert_eq!(out, "**What is ice**\n\nIce is cold.\n");
    }

    #[test]
    fn answers_in_split_order() {
        let parent = "What are the chemical and physical properties of calcium and magnesium?";
        let answers: Vec<(AtomicQuery, String)> = (0..4).map(|i| (q(&format!("q{i}"), parent, i), format!("Answer {i}."))).collect();
        let out = compose_response(&answers, &[], ComposeOptions::default());
        let blocks: Vec<&str> = out.trim_end().split("\n\n").collect();
        let mut expected = vec![format!("**{parent}**")];
        expected.extend((0..4).map(|i| format!("Answer {i}.")));
        assert_eq!(blocks, expected);
    }

    #[test]
    fn notice_appears_once() {
        let answers = vec![(q("a", "p", 0), NO_FACTS_NOTICE.to_string()), (q("b", "p", 1), NO_FACTS_NOTICE.to_string())];
        let out = compose_response(&answers, &[], ComposeOptions::default());
        assert_eq!(out.matches(NO_FACTS_NOTICE).count(), 1);
        assert!(compose_response(&[], &[], ComposeOptions::default()).is_empty());
    }
}
