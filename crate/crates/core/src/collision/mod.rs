//! Noun-phrase collisions: pairs of phrases that embed close together but
//! name different things.

mod coref;
mod embed;

use std::sync::{Arc, OnceLock};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nlp::{NounPhrase, NpKind};

pub use coref::{are_coreferent, AliasTable};
pub use embed::{
    cosine_similarity, embed_batch, EmbeddingCache, EmbeddingProvider, EmbeddingVector, HttpEmbeddingConfig,
    HttpEmbeddingProvider, OfflineNgramProvider, EMBED_API_KEY_ENV,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CollisionError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("embedding provider {provider_id} failed: {message}")]
    Provider {
        provider_id: String,
        message: String,
        batch: Vec<String>,
        retryable: bool,
        retry_after: Option<Duration>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollisionReason {
    EmbeddingSimilarity,
    IdLikeSpan,
    EntityCommonNounOverlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionPair {
    pub left: NounPhrase,
    pub right: NounPhrase,
    pub similarity: f64,
    pub reason: CollisionReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollisionConfig {
    pub threshold: f64,
    pub id_like_spans: bool,
    pub entity_common_noun_overlap: bool,
}

impl Default for CollisionConfig {
    fn default() -> Self {
        Self {
            threshold: 0.75,
            id_like_spans: true,
            entity_common_noun_overlap: true,
        }
    }
}

fn id_like_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(?:\[\d+\]|\d{5,}|[A-Za-z]+\d+(?:-[A-Za-z0-9]+)+|[A-Za-z0-9]+-\d+[A-Za-z0-9-]*|10\.\d{4,9}/\S+)$")
            .expect("valid regex")
    })
}

pub fn is_id_like(text: &str) -> bool {
    let t = text.trim();
    id_like_regex().is_match(t) || t.split_whitespace().any(|w| id_like_regex().is_match(w) && w.chars().any(|c| c.is_ascii_digit()))
}

fn content_words(np: &NounPhrase) -> Vec<String> {
    np.normalized()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.len() >= 3)
        .map(str::to_string)
        .collect()
}

/// One phrase is a proper name, the other a common noun phrase, and they
/// share a word: "Cruise LLC" / "cruise control".
pub fn entity_common_noun_overlap(a: &NounPhrase, b: &NounPhrase) -> bool {
    a.is_proper() != b.is_proper() && content_words(a).iter().any(|w| content_words(b).contains(w))
}

fn nested(a: &NounPhrase, b: &NounPhrase) -> bool {
    let (wa, wb) = (content_words(a), content_words(b));
    if wa.is_empty() || wb.is_empty() {
        return false;
    }
    wa.iter().all(|w| wb.contains(w)) || wb.iter().all(|w| wa.contains(w))
}

fn np_order(a: &NounPhrase, b: &NounPhrase) -> std::cmp::Ordering {
    a.span
        .cmp(&b.span)
        .then_with(|| a.normalized().cmp(&b.normalized()))
        .then_with(|| a.text.cmp(&b.text))
}

/// Collision pairs among `nps`. Phrases are deduplicated by normalized text
/// (the earliest occurrence is kept), composite possessive/prepositional
/// phrases are ignored, and nested phrases ("calcium" / "calcium
/// hydroxide") never pair. Output is ordered by descending similarity, then
/// by the spans of the two members.
pub fn detect_collisions(
    nps: &[NounPhrase],
    provider: &dyn EmbeddingProvider,
    cache: &EmbeddingCache,
    aliases: &AliasTable,
    config: &CollisionConfig,
) -> Result<Vec<CollisionPair>, CollisionError> {
    let mut uniq: Vec<&NounPhrase> = nps.iter().filter(|n| n.kind == NpKind::Base).collect();
    uniq.sort_by(|a, b| np_order(a, b));
    let mut seen = std::collections::BTreeSet::new();
    uniq.retain(|n| seen.insert(n.normalized()));
    if uniq.len() < 2 {
        return Ok(Vec::new());
    }

    let keys: Vec<String> = uniq.iter().map(|n| n.normalized()).collect();
    let vectors = embed_batch(provider, cache, &keys)?;

    let mut out = Vec::new();
    for i in 0..uniq.len() {
        for j in i + 1..uniq.len() {
            let (a, b) = (uniq[i], uniq[j]);
            if are_coreferent(a, b, aliases) || nested(a, b) {
                continue;
            }
            let similarity = cosine_similarity(&vectors[i], &vectors[j])?;
            let reason = if similarity >= config.threshold {
                Some(CollisionReason::EmbeddingSimilarity)
            } else if config.id_like_spans && is_id_like(&a.text) && is_id_like(&b.text) {
                Some(CollisionReason::IdLikeSpan)
            } else if config.entity_common_noun_overlap && entity_common_noun_overlap(a, b) {
                Some(CollisionReason::EntityCommonNounOverlap)
            } else {
                None
            };
            if let Some(reason) = reason {
                out.push(CollisionPair {
                    left: a.clone(),
                    right: b.clone(),
                    similarity,
                    reason,
                });
            }
        }
    }
    out.sort_by(|x, y| {
        y.similarity
            .total_cmp(&x.similarity)
            .then_with(|| np_order(&x.left, &y.left))
            .then_with(|| np_order(&x.right, &y.right))
    });
    Ok(out)
}

/// Provider, cache, alias table and thresholds bundled for reuse across a
/// pipeline run.
#[derive(Clone)]
pub struct CollisionDetector {
    provider: Arc<dyn EmbeddingProvider>,
    cache: Arc<EmbeddingCache>,
    aliases: AliasTable,
    config: CollisionConfig,
}

impl std::fmt::Debug for CollisionDetector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CollisionDetector")
            .field("provider", &self.provider.id())
            .field("config", &self.config)
            .finish()
    }
}

impl CollisionDetector {
    pub fn new(provider: Arc<dyn EmbeddingProvider>, config: CollisionConfig) -> Self {
        Self {
            provider,
            cache: Arc::new(EmbeddingCache::new()),
            aliases: AliasTable::bundled().clone(),
            config,
        }
    }

    pub fn offline() -> Self {
        Self::new(Arc::new(OfflineNgramProvider::default()), CollisionConfig::default())
    }

    pub fn with_aliases(mut self, aliases: AliasTable) -> Self {
        self.aliases = aliases;
        self
    }

    pub fn aliases(&self) -> &AliasTable {
        &self.aliases
    }

    pub fn config(&self) -> &CollisionConfig {
        &self.config
    }

    pub fn provider_id(&self) -> &str {
        self.provider.id()
    }

    pub fn detect(&self, nps: &[NounPhrase]) -> Result<Vec<CollisionPair>, CollisionError> {
        detect_collisions(nps, self.provider.as_ref(), &self.cache, &self.aliases, &self.config)
    }

    pub fn coreferent(&self, a: &NounPhrase, b: &NounPhrase) -> bool {
        are_coreferent(a, b, &self.aliases)
    }

    pub fn similarity(&self, a: &str, b: &str) -> Result<f64, CollisionError> {
        let v = embed_batch(self.provider.as_ref(), &self.cache, &[a.to_string(), b.to_string()])?;
        cosine_similarity(&v[0], &v[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::{expand_coordination, extract_noun_phrases};
    use proptest::prelude::*;

    fn nps(words: &[&str]) -> Vec<NounPhrase> {
        words.iter().map(|w| NounPhrase::synthetic(w)).collect()
    }

    fn pair_texts(pairs: &[CollisionPair]) -> Vec<(String, String)> {
        pairs
            .iter()
            .map(|p| (p.left.text.clone(), p.right.text.clone()))
            .collect()
    }

    #[test]
    fn paper_pairs() {
        let d = CollisionDetector::offline();
        let pairs = d
            .detect(&nps(&["chemical properties", "physical properties", "calcium", "magnesium"]))
            .unwrap();
        let mut got = pair_texts(&pairs);
        got.sort();
        assert_eq!(
            got,
            [
                ("calcium".to_string(), "magnesium".to_string()),
                ("chemical properties".to_string(), "physical properties".to_string())
            ]
        );
        assert!(pairs.iter().all(|p| p.reason == CollisionReason::EmbeddingSimilarity));
        assert!(pairs[0].similarity >= pairs[1].similarity);
    }

    #[test]
    fn singleton_and_coreferent_inputs() {
        let d = CollisionDetector::offline();
        assert!(d.detect(&nps(&["calcium"])).unwrap().is_empty());
        assert!(d.detect(&nps(&["car", "automobile"])).unwrap().is_empty());
    }

    #[test]
    fn query_pairs_come_from_expanded_phrases() {
        let q = "What are the chemical and physical properties of calcium and magnesium?";
        let expanded: Vec<NounPhrase> = extract_noun_phrases(q).iter().flat_map(expand_coordination).collect();
        let pairs = CollisionDetector::offline().detect(&expanded).unwrap();
        assert_eq!(pairs.len(), 2, "{:?}", pair_texts(&pairs));
    }

    #[test]
    fn unrelated_phrases_stay_below_threshold() {
        let d = CollisionDetector::offline();
        for (a, b) in [
            ("calcium", "water"),
            ("calcium", "oxygen"),
            ("calcium", "nitrogen"),
            ("ice", "neck"),
            ("calcium", "metal"),
            ("density", "calcium"),
            ("minimum wage", "hour"),
        ] {
            let s = d.similarity(a, b).unwrap();
            assert!(s < 0.75, "{a}/{b} = {s}");
        }
    }

    #[test]
    fn entity_and_common_noun_overlap() {
        let src = "Cruise LLC announced cruise control improvements";
        let pairs = CollisionDetector::offline().detect(&extract_noun_phrases(src)).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].reason, CollisionReason::EntityCommonNounOverlap);
        assert_eq!(pairs[0].left.text, "Cruise LLC");
    }

    #[test]
    fn id_like_spans_pair_by_pattern() {
        assert!(is_id_like("28123456"));
        assert!(is_id_like("AB12-7734"));
        assert!(is_id_like("[12]"));
        assert!(!is_id_like("calcium"));
        let pairs = CollisionDetector::offline().detect(&nps(&["28123456", "28123457"])).unwrap();
        assert_eq!(pairs.len(), 1);
    }

    #[test]
    fn nested_phrases_do_not_pair() {
        let d = CollisionDetector::offline();
        assert!(d.detect(&nps(&["calcium", "calcium hydroxide"])).unwrap().is_empty());
    }

    const WORDS: &[&str] = &[
        "calcium", "magnesium", "chemical properties", "physical properties", "car", "automobile", "water",
        "oxygen", "ice", "the neck", "sodium", "potassium", "metal", "the skull",
    ];

    proptest! {
        #[test]
        fn never_emits_coreferent_pairs(idx in proptest::collection::vec(0..WORDS.len(), 0..8)) {
            let d = CollisionDetector::offline();
            let list: Vec<&str> = idx.iter().map(|i| WORDS[*i]).collect();
            for p in d.detect(&nps(&list)).unwrap() {
                prop_assert!(!d.coreferent(&p.left, &p.right));
                prop_assert_ne!(p.left.normalized(), p.right.normalized());
                if p.reason == CollisionReason::EmbeddingSimilarity {
                    prop_assert!(p.similarity >= 0.75);
                }
            }
        }

        #[test]
        fn permutation_invariant(idx in proptest::collection::vec(0..WORDS.len(), 0..8), seed in any::<u64>()) {
            let d = CollisionDetector::offline();
            let list = nps(&idx.iter().map(|i| WORDS[*i]).collect::<Vec<_>>());
            let mut shuffled = list.clone();
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(d.detect(&list).unwrap(), d.detect(&shuffled).unwrap());
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 4),
            b in proptest::collection::vec(-10.0f64..10.0, 4),
            k in 0.01f64..100.0,
        ) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
            let va = EmbeddingVector::new("p", a.clone()).unwrap();
            let vb = EmbeddingVector::new("p", b).unwrap();
            let ka = EmbeddingVector::new("p", a.iter().map(|x| x * k).collect()).unwrap();
            let s = cosine_similarity(&va, &vb).unwrap();
            prop_assert!((s - cosine_similarity(&vb, &va).unwrap()).abs() < 1e-12);
            prop_assert!((s - cosine_similarity(&ka, &vb).unwrap()).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&s));
        }
    }
}
