//! Splits a query along its collision pairs into collision-free atomic
//! queries by rewriting the coordinated spans.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision::CollisionPair;
use crate::nlp::{normalize_np_text, tokenize, NounPhrase, Span};

pub const MAX_ATOMIC_QUERIES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicQuery {
    pub text: String,
    pub focal_nps: Vec<NounPhrase>,
    pub parent_query: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SplitFlag {
    TemplateFallback,
    Capped { total: usize, kept: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySplit {
    pub queries: Vec<AtomicQuery>,
    pub flags: Vec<SplitFlag>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SplitError {
    #[error("no coordinated slot for {0:?} in the query")]
    SlotNotFound(String),
    #[error("{0:?} is not a member of the pair")]
    NotAMember(String),
}

/// Members of one coordination, in text order, with the best similarity
/// each member has within the group.
#[derive(Debug, Clone)]
struct Group {
    members: Vec<NounPhrase>,
    scores: Vec<f64>,
}

fn same_np(a: &NounPhrase, b: &NounPhrase) -> bool {
    a.normalized() == b.normalized()
}

fn group_pairs(pairs: &[CollisionPair]) -> Vec<Group> {
    let mut groups: Vec<Group> = Vec::new();
    for p in pairs {
        let li = groups.iter().position(|g| g.members.iter().any(|m| same_np(m, &p.left)));
        let ri = groups.iter().position(|g| g.members.iter().any(|m| same_np(m, &p.right)));
        let gi = match (li, ri) {
            (Some(a), Some(b)) if a != b => {
                let (lo, hi) = (a.min(b), a.max(b));
                let moved = groups.remove(hi);
                groups[lo].members.extend(moved.members);
                groups[lo].scores.extend(moved.scores);
                lo
            }
            (Some(a), _) | (_, Some(a)) => a,
            (None, None) => {
                groups.push(Group {
                    members: Vec::new(),
                    scores: Vec::new(),
                });
                groups.len() - 1
            }
        };
        for np in [&p.left, &p.right] {
            let g = &mut groups[gi];
            match g.members.iter().position(|m| same_np(m, np)) {
                Some(k) => g.scores[k] = g.scores[k].max(p.similarity),
                None => {
                    g.members.push(np.clone());
                    g.scores.push(p.similarity);
                }
            }
        }
    }
    for g in &mut groups {
        let mut idx: Vec<usize> = (0..g.members.len()).collect();
        idx.sort_by(|&a, &b| {
            g.members[a]
                .span
                .cmp(&g.members[b].span)
                .then_with(|| g.members[a].text.cmp(&g.members[b].text))
        });
        g.members = idx.iter().map(|&i| g.members[i].clone()).collect();
        g.scores = idx.iter().map(|&i| g.scores[i]).collect();
    }
    groups
}

fn find_word_bounded(haystack: &str, needle: &str) -> Option<Span> {
    if needle.is_empty() {
        return None;
    }
    let hay = haystack.to_lowercase();
    let nee = needle.to_lowercase();
    if hay.len() != haystack.len() {
        return None;
    }
    let mut from = 0;
    while let Some(off) = hay[from..].find(&nee) {
        let start = from + off;
        let end = start + nee.len();
        let before_ok = hay[..start].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after_ok = hay[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return Some(Span::new(start, end));
        }
        from = start + 1;
    }
    None
}

/// Where `np` sits in `query`: its recorded span when that still points at
/// the phrase (or the coordination it was expanded from), else the first
/// word-bounded occurrence of its text.
fn locate(query: &str, np: &NounPhrase) -> Option<Span> {
    if !np.span.is_empty() {
        if let Some(slice) = query.get(np.span.start..np.span.end) {
            let norm = normalize_np_text(slice);
            let head = np.head_surface().to_lowercase();
            if norm == np.normalized() || (!head.is_empty() && norm.ends_with(&head)) {
                return Some(np.span);
            }
        }
    }
    find_word_bounded(query, np.core_text())
}

fn only_coordination(between: &str) -> bool {
    tokenize(between)
        .iter()
        .all(|t| matches!(t.lower().as_str(), "and" | "or" | "," | "&" | "as" | "well" | "both" | "either"))
}

/// Byte region covering the coordination plus the replacement text for
/// each member.
fn slot(query: &str, members: &[NounPhrase]) -> Result<(Span, Vec<String>), SplitError> {
    let mut spans = Vec::with_capacity(members.len());
    for m in members {
        spans.push(locate(query, m).ok_or_else(|| SplitError::SlotNotFound(m.text.clone()))?);
    }
    let start = spans.iter().map(|s| s.start).min().unwrap_or(0);
    let end = spans.iter().map(|s| s.end).max().unwrap_or(0);
    let mut distinct: Vec<Span> = spans.clone();
    distinct.sort();
    distinct.dedup();
    for w in distinct.windows(2) {
        if w[0].end > w[1].start {
            if w[0].contains(&w[1]) || w[1].contains(&w[0]) {
                continue;
            }
            return Err(SplitError::SlotNotFound(query[w[1].start..w[1].end].to_string()));
        }
        if !only_coordination(&query[w[0].end..w[1].start]) {
            return Err(SplitError::SlotNotFound(query[w[0].start..w[1].end].to_string()));
        }
    }
    let replacements = members
        .iter()
        .zip(&spans)
        .map(|(m, s)| {
            let surface = &query[s.start..s.end];
            if normalize_np_text(surface) == m.normalized() {
                surface.to_string()
            } else {
                m.text.clone()
            }
        })
        .collect();
    Ok((Span::new(start, end), replacements))
}

fn tidy(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut out = String::with_capacity(collapsed.len());
    for (i, c) in collapsed.char_indices() {
        if c == ' ' && collapsed[i + 1..].starts_with(['?', '.', ',', '!', ';', ':']) {
            continue;
        }
        out.push(c);
    }
    out
}

/// Rewrites `query` so the coordination holding `pair` keeps only `member`.
pub fn rewrite_with_member(query: &str, pair: &CollisionPair, member: &NounPhrase) -> Result<String, SplitError> {
    if !same_np(member, &pair.left) && !same_np(member, &pair.right) {
        return Err(SplitError::NotAMember(member.text.clone()));
    }
    let mut members = vec![pair.left.clone(), pair.right.clone()];
    members.sort_by(|a, b| a.span.cmp(&b.span));
    let (region, replacements) = slot(query, &members)?;
    let k = members.iter().position(|m| same_np(m, member)).unwrap_or(0);
    Ok(tidy(&format!(
        "{}{}{}",
        &query[..region.start],
        replacements[k],
        &query[region.end..]
    )))
}

fn template(members: &[&NounPhrase]) -> String {
    let names: Vec<&str> = members.iter().map(|m| m.core_text()).collect();
    format!("Tell me about {}?", names.join(" and "))
}

/// One atomic query per combination of group members (cartesian product,
/// first group varying slowest). More than [`MAX_ATOMIC_QUERIES`]
/// combinations are cut to the best-scoring ones.
pub fn split_query(query: &str, pairs: &[CollisionPair]) -> QuerySplit {
    split_query_capped(query, pairs, MAX_ATOMIC_QUERIES)
}

/// [`split_query`] with a caller-chosen cap (at least 1).
pub fn split_query_capped(query: &str, pairs: &[CollisionPair], cap: usize) -> QuerySplit {
    let cap = cap.max(1);
    if pairs.is_empty() {
        return QuerySplit {
            queries: vec![AtomicQuery {
                text: query.to_string(),
                focal_nps: Vec::new(),
                parent_query: query.to_string(),
                index: 0,
            }],
            flags: Vec::new(),
        };
    }
    let groups = group_pairs(pairs);
    let mut flags = Vec::new();

    let slots: Result<Vec<(Span, Vec<String>)>, SplitError> = groups.iter().map(|g| slot(query, &g.members)).collect();
    let slots = slots.ok().filter(|s| {
        let mut regions: Vec<Span> = s.iter().map(|(r, _)| *r).collect();
        regions.sort();
        regions.windows(2).all(|w| w[0].end <= w[1].start)
    });
    if slots.is_none() {
        flags.push(SplitFlag::TemplateFallback);
    }

    let mut combos: Vec<Vec<usize>> = vec![Vec::new()];
    for g in &groups {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                (0..g.members.len()).map(move |k| {
                    let mut c = c.clone();
                    c.push(k);
                    c
                })
            })
            .collect();
    }
    let total = combos.len();
    if total > cap {
        let score = |c: &Vec<usize>| -> f64 { c.iter().enumerate().map(|(gi, &k)| groups[gi].scores[k]).sum() };
        combos.sort_by(|a, b| score(b).total_cmp(&score(a)));
        combos.truncate(cap);
        flags.push(SplitFlag::Capped { total, kept: cap });
    }

    let queries = combos
        .iter()
        .enumerate()
        .map(|(index, combo)| {
            let chosen: Vec<&NounPhrase> = combo.iter().enumerate().map(|(gi, &k)| &groups[gi].members[k]).collect();
            let text = match &slots {
                Some(slots) => {
                    let mut edits: Vec<(Span, &str)> = combo
                        .iter()
                        .enumerate()
                        .map(|(gi, &k)| (slots[gi].0, slots[gi].1[k].as_str()))
                        .collect();
                    edits.sort_by(|a, b| b.0.start.cmp(&a.0.start));
                    let mut text = query.to_string();
                    for (span, rep) in edits {
                        text.replace_range(span.start..span.end, rep);
                    }
                    tidy(&text)
                }
                None => template(&chosen),
            };
            AtomicQuery {
                text,
                focal_nps: chosen.into_iter().cloned().collect(),
                parent_query: query.to_string(),
                index,
            }
        })
        .collect();
    QuerySplit { queries, flags }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::{CollisionDetector, CollisionReason};
    use crate::nlp::{expand_coordination, extract_noun_phrases};
    use proptest::prelude::*;

    const PAPER_QUERY: &str = "What are the chemical and physical properties of calcium and magnesium?";

    fn analyze(q: &str) -> Vec<CollisionPair> {
        let nps: Vec<NounPhrase> = extract_noun_phrases(q).iter().flat_map(expand_coordination).collect();
        CollisionDetector::offline().detect(&nps).unwrap()
    }

    #[test]
    fn paper_query_gives_four() {
        let split = split_query(PAPER_QUERY, &analyze(PAPER_QUERY));
        let mut got: Vec<String> = split.queries.iter().map(|q| q.text.clone()).collect();
        got.sort();
        let mut want = vec![
            "What are the chemical properties of magnesium?",
            "What are the physical properties of magnesium?",
            "What are the chemical properties of calcium?",
            "What are the physical properties of calcium?",
        ];
        want.sort();
        assert_eq!(got, want);
        assert!(split.flags.is_empty());
        for q in &split.queries {
            assert_eq!(q.focal_nps.len(), 2);
            assert!(analyze(&q.text).is_empty(), "{} still collides", q.text);
        }
    }

    #[test]
    fn no_pairs_is_identity() {
        let s = split_query("How do I reheat chicken?", &[]);
        assert_eq!(s.queries.len(), 1);
        assert_eq!(s.queries[0].text, "How do I reheat chicken?");
    }

    fn pair(q: &str, a: &str, b: &str) -> CollisionPair {
        let nps = extract_noun_phrases(q);
        let find = |t: &str| nps.iter().find(|n| n.text == t).unwrap().clone();
        CollisionPair {
            left: find(a),
            right: find(b),
            similarity: 0.8,
            reason: CollisionReason::EmbeddingSimilarity,
        }
    }

    #[test]
    fn rewrite_single_member() {
        let p = pair(PAPER_QUERY, "calcium", "magnesium");
        let out = rewrite_with_member(PAPER_QUERY, &p, &p.left).unwrap();
        assert!(out.ends_with("properties of calcium?"), "{out}");

        let coord = &extract_noun_phrases(PAPER_QUERY)[0];
        let parts = expand_coordination(coord);
        let p = CollisionPair {
            left: parts[0].clone(),
            right: parts[1].clone(),
            similarity: 0.9,
            reason: CollisionReason::EmbeddingSimilarity,
        };
        let out = rewrite_with_member(PAPER_QUERY, &p, &parts[1]).unwrap();
        assert!(out.contains("physical properties"), "{out}");
        assert!(!out.contains("chemical"), "{out}");
    }

    #[test]
    fn missing_slot_errors_and_falls_back() {
        let p = pair(PAPER_QUERY, "calcium", "magnesium");
        let err = rewrite_with_member("How do I reheat chicken?", &p, &p.left).unwrap_err();
        assert!(matches!(err, SplitError::SlotNotFound(_)));

        let s = split_query("How do I reheat chicken?", &[p]);
        assert_eq!(s.flags, [SplitFlag::TemplateFallback]);
        assert_eq!(s.queries.len(), 2);
        assert_eq!(s.queries[0].text, "Tell me about calcium?");
    }

    #[test]
    fn separated_members_are_not_a_slot() {
        let q = "Does calcium taste better than magnesium?";
        let p = pair(q, "calcium", "magnesium");
        assert!(rewrite_with_member(q, &p, &p.left).is_err());
    }

    /// Builds a query with `n` binary coordinations and the matching pairs.
    fn synthetic(n: usize) -> (String, Vec<CollisionPair>) {
        let names = [("calcium", "magnesium"), ("sodium", "potassium"), ("iron", "copper"), ("zinc", "nickel"), ("tin", "lead")];
        let mut q = String::from("Compare");
        for (a, b) in names.iter().take(n) {
            q.push_str(&format!(" {a} and {b} with"));
        }
        q.push_str(" water?");
        let pairs = names
            .iter()
            .take(n)
            .map(|(a, b)| pair(&q, a, b))
            .collect();
        (q, pairs)
    }

    #[test]
    fn three_pairs_make_eight() {
        let (q, pairs) = synthetic(3);
        let split = split_query(&q, &pairs);
        assert_eq!(split.queries.len(), 8);
    }

    #[test]
    fn product_is_capped() {
        let names: Vec<String> = (0..5).map(|i| format!("alpha{i} and beta{i}")).collect();
        let q = format!("Compare {} now.", names.join(" with "));
        let nps = extract_noun_phrases(&q);
        let pairs: Vec<CollisionPair> = (0..5)
            .map(|i| CollisionPair {
                left: nps.iter().find(|n| n.text == format!("alpha{i}")).unwrap().clone(),
                right: nps.iter().find(|n| n.text == format!("beta{i}")).unwrap().clone(),
                similarity: 0.8 + i as f64 / 100.0,
                reason: CollisionReason::EmbeddingSimilarity,
            })
            .collect();
        let split = split_query(&q, &pairs);
        assert_eq!(split.queries.len(), 16);
        assert_eq!(split.flags, [SplitFlag::Capped { total: 32, kept: 16 }]);
    }

    proptest! {
        #[test]
        fn count_and_membership(n in 0usize..=4) {
            let (q, pairs) = synthetic(n);
            let split = split_query(&q, &pairs);
            prop_assert_eq!(split.queries.len(), 1usize << n);

            // brute-force enumeration of the expected member choices
            let mut expected: Vec<Vec<bool>> = (0..1usize << n)
                .map(|mask| (0..n).map(|i| mask >> (n - 1 - i) & 1 == 1).collect())
                .collect();
            let mut got: Vec<Vec<bool>> = Vec::new();
            for aq in &split.queries {
                let words: Vec<String> = tokenize(&aq.text).iter().map(|t| t.lower()).collect();
                let mut choice = Vec::new();
                for p in &pairs {
                    let has_l = words.contains(&p.left.text);
                    let has_r = words.contains(&p.right.text);
                    prop_assert!(has_l != has_r, "{} must hold exactly one of {}/{}", aq.text, p.left.text, p.right.text);
                    choice.push(has_r);
                }
                got.push(choice);
            }
            expected.sort();
            got.sort();
            prop_assert_eq!(got, expected);
        }
    }
}
