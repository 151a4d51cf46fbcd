use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use crate::nlp::{normalize_np_text, Lexicon, NounPhrase};

const DEFAULT_ALIASES: &str = include_str!("../../resources/aliases.tsv");

/// Synonyms and abbreviations, closed under symmetry and transitivity.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasTable {
    groups: BTreeMap<String, usize>,
}

impl AliasTable {
    pub fn parse(src: &str) -> Self {
        let mut table = Self::default();
        for line in src.lines() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((a, b)) = line.split_once('\t') {
                table.insert(a, b);
            }
        }
        table
    }

    pub fn bundled() -> &'static AliasTable {
        static T: OnceLock<AliasTable> = OnceLock::new();
        T.get_or_init(|| AliasTable::parse(DEFAULT_ALIASES))
    }

    pub fn insert(&mut self, a: &str, b: &str) {
        let (a, b) = (normalize_np_text(a), normalize_np_text(b));
        match (self.groups.get(&a).copied(), self.groups.get(&b).copied()) {
            (Some(x), Some(y)) if x != y => {
                for g in self.groups.values_mut() {
                    if *g == y {
                        *g = x;
                    }
                }
            }
            (Some(x), None) => {
                self.groups.insert(b, x);
            }
            (None, Some(y)) => {
                self.groups.insert(a, y);
            }
            (None, None) => {
                let id = self.groups.values().max().map_or(0, |m| m + 1);
                self.groups.insert(a, id);
                self.groups.insert(b, id);
            }
            _ => {}
        }
    }

    pub fn are_aliases(&self, a: &str, b: &str) -> bool {
        let (a, b) = (normalize_np_text(a), normalize_np_text(b));
        match (self.groups.get(&a), self.groups.get(&b)) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

fn modifier_lemmas(np: &NounPhrase) -> BTreeSet<String> {
    let lex = Lexicon::bundled();
    np.modifiers
        .iter()
        .filter(|m| !matches!(m.to_lowercase().as_str(), "and" | "or" | ","))
        .map(|m| lex.lemma(m))
        .collect()
}

/// True when both phrases can denote the same referent: equal after
/// normalization, listed as aliases, or sharing a head lemma where one
/// phrase's modifiers are a subset of the other's.
pub fn are_coreferent(a: &NounPhrase, b: &NounPhrase, aliases: &AliasTable) -> bool {
    let (na, nb) = (a.normalized(), b.normalized());
    if na == nb || aliases.are_aliases(&na, &nb) {
        return true;
    }
    if a.head.is_empty() || a.head != b.head {
        return false;
    }
    let (ma, mb) = (modifier_lemmas(a), modifier_lemmas(b));
    ma.is_subset(&mb) || mb.is_subset(&ma)
}
