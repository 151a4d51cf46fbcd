//! Fully-Formatted Facts: passages rewritten into simple, pronoun-free
//! statements about one entity, grouped by source passage and paired with
//! the atomic queries that ask about that entity.

mod extract;
mod validate;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::collision::{CollisionDetector, CollisionError};
use crate::llm::LlmClient;
use crate::nlp::{Lexicon, NounPhrase};
use crate::query_split::AtomicQuery;

pub use extract::{Discarded, Extraction, FffConfig, Origin, Statement};
pub use validate::{
    finite_verb_groups, is_pronoun, statement_nps, subject_np, validate_statement, ValidationResult, Violation,
    MAX_STATEMENT_TOKENS,
};

/// Head nouns that name an aspect of an entity rather than the entity.
const ASPECT_NOUNS: &[&str] = &[
    "property", "characteristic", "feature", "attribute", "benefit", "effect", "side effect", "use", "type", "kind",
    "advantage", "disadvantage", "symptom", "cause", "history", "fact", "detail", "aspect",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    /// 1-based, in passage order.
    pub index: usize,
    pub statements: Vec<Statement>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FactSetFlag {
    Empty,
    Degraded { passage_index: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactSet {
    /// `None` in open mode, when the query names no colliding entity.
    pub entity: Option<NounPhrase>,
    pub sections: Vec<Section>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<FactSetFlag>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub discarded: Vec<Discarded>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionDocument {
    pub index: usize,
    pub statements: Vec<String>,
}

/// Storage format: `{"entity": str, "sections": [{"index", "statements"}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactSetDocument {
    pub entity: String,
    pub sections: Vec<SectionDocument>,
}

impl FactSet {
    pub fn is_empty(&self) -> bool {
        self.sections.iter().all(|s| s.statements.is_empty())
    }

    pub fn statements(&self) -> impl Iterator<Item = &Statement> {
        self.sections.iter().flat_map(|s| s.statements.iter())
    }

    pub fn to_document(&self) -> FactSetDocument {
        FactSetDocument {
            entity: self.entity.as_ref().map(|e| e.core_text().to_string()).unwrap_or_default(),
            sections: self
                .sections
                .iter()
                .map(|s| SectionDocument {
                    index: s.index,
                    statements: s.statements.iter().map(|st| st.text.clone()).collect(),
                })
                .collect(),
        }
    }

    /// The numbered listing sent to the LLM.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            out.push_str(&format!("Section {}:\n", s.index));
            for st in &s.statements {
                out.push_str(&format!("{}\n", st.text));
            }
        }
        out.trim_end().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPacket {
    pub atomic_query: AtomicQuery,
    pub fact_set: FactSet,
    pub placeholder_table_ref: String,
}

/// The focal noun phrase that names a thing rather than an aspect of one:
/// "calcium" rather than "chemical properties".
pub fn focal_entity(query: &AtomicQuery) -> Option<NounPhrase> {
    let lex = Lexicon::bundled();
    query
        .focal_nps
        .iter()
        .find(|np| {
            let head = lex.lemma(&np.head);
            !ASPECT_NOUNS.contains(&head.as_str()) && !ASPECT_NOUNS.contains(&np.normalized().as_str())
        })
        .cloned()
}

fn passage_hash(passage: &str) -> String {
    hex::encode(&Sha256::digest(passage.as_bytes())[..8])
}

/// One extraction pass over one passage; see [`FactExtractor`] for the
/// cached, multi-query form.
pub fn passage_to_statements(
    passage: &str,
    passage_index: usize,
    entity: Option<&NounPhrase>,
    llm: Option<&dyn LlmClient>,
    detector: &CollisionDetector,
    config: &FffConfig,
) -> Result<Extraction, CollisionError> {
    extract::Extractor { entity, detector, config }.run(passage, passage_index, llm)
}

type CacheKey = (String, String);

/// Builds fact sets, sharing extraction across queries with the same
/// entity. The cache is keyed by (entity, passage hash).
pub struct FactExtractor {
    detector: CollisionDetector,
    llm: Option<Arc<dyn LlmClient>>,
    config: FffConfig,
    cache: Mutex<HashMap<CacheKey, Arc<Extraction>>>,
}

impl FactExtractor {
    pub fn new(detector: CollisionDetector, llm: Option<Arc<dyn LlmClient>>, config: FffConfig) -> Self {
        Self {
            detector,
            llm,
            config,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    fn key(entity: Option<&NounPhrase>, passage: &str) -> CacheKey {
        (entity.map(NounPhrase::normalized).unwrap_or_default(), passage_hash(passage))
    }

    pub fn extract(&self, passage: &str, passage_index: usize, entity: Option<&NounPhrase>) -> Result<Arc<Extraction>, CollisionError> {
        let key = Self::key(entity, passage);
        if let Some(hit) = self.cache.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Ok(hit.clone());
        }
        let e = Arc::new(passage_to_statements(
            passage,
            passage_index,
            entity,
            self.llm.as_deref(),
            &self.detector,
            &self.config,
        )?);
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        Ok(cache.entry(key).or_insert(e).clone())
    }

    /// One packet per atomic query, in query order.
    pub fn build_fact_sets(
        &self,
        passages: &[String],
        queries: &[AtomicQuery],
        placeholder_table_ref: &str,
    ) -> Result<Vec<QueryPacket>, CollisionError> {
        let entities: Vec<Option<NounPhrase>> = queries.iter().map(focal_entity).collect();
        let mut jobs: Vec<(Option<NounPhrase>, usize)> = Vec::new();
        for e in &entities {
            for i in 0..passages.len() {
                let key = Self::key(e.as_ref(), &passages[i]);
                if !jobs.iter().any(|(je, ji)| Self::key(je.as_ref(), &passages[*ji]) == key) {
                    jobs.push((e.clone(), i));
                }
            }
        }
        jobs.par_iter()
            .map(|(e, i)| self.extract(&passages[*i], *i, e.as_ref()).map(|_| ()))
            .collect::<Result<Vec<()>, _>>()?;

        let mut packets = Vec::with_capacity(queries.len());
        for (q, entity) in queries.iter().zip(entities) {
            let mut sections = Vec::new();
            let mut flags = Vec::new();
            let mut discarded = Vec::new();
            for (i, p) in passages.iter().enumerate() {
                let ex = self.extract(p, i, entity.as_ref())?;
                if let Some(message) = &ex.degraded {
                    flags.push(FactSetFlag::Degraded {
                        passage_index: i,
                        message: message.clone(),
                    });
                }
                discarded.extend(ex.discarded.iter().cloned());
                if !ex.statements.is_empty() {
                    let statements = ex
                        .statements
                        .iter()
                        .cloned()
                        .map(|mut s| {
                            s.source_passage_index = i;
                            s
                        })
                        .collect();
                    sections.push(Section {
                        index: sections.len() + 1,
                        statements,
                    });
                }
            }
            if sections.is_empty() {
                flags.push(FactSetFlag::Empty);
            }
            packets.push(QueryPacket {
                atomic_query: q.clone(),
                fact_set: FactSet {
                    entity,
                    sections,
                    flags,
                    discarded,
                },
                placeholder_table_ref: placeholder_table_ref.to_string(),
            });
        }
        Ok(packets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faithfulness::{normalize_tokens, unescape, Class};
    use crate::llm::{LlmError, ScriptedClient};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    const CALCIUM: &str = "Calcium: Physical Properties --silver-grey metal. melts at 840\\u00b0C, boils at 1484\\u00b0C to produce monatomic gas. density 1540 kg/m\\^3. conductor of electricity but a poor one com \\u2026pared to most other metals.Diamagnetic. Chemical properties --tarnishes rapidly in air to produce a powdery, flaky oxide coating.Reacts steadily with water, giving off bubbles of hydrogen and a solution/slurry or alkaline, sparingly soluble calcium hydroxide. Flammable at high temperatures with oxygen, or air.an also burn in nitrogen to form calcium nitride or carbon dioxide to form calcium carbonate. Nearly all compounds are in oxidation state +2, and the water chemistry of calcium is dominated by the hydrated Ca(2+) ion";
    const MAGNESIUM: &str = "Chemical and Physical Properties of Magnesium. Magnesium is one of the most important elements that is present in many compounds as well as alloys. It is widely used as a chemical reagent, desulfurization agent, and vital ingredient in fireworks.";

    fn texts(ex: &Extraction) -> Vec<String> {
        ex.statements.iter().map(|s| s.text.clone()).collect()
    }

    fn offline(passage: &str, entity: &str) -> Extraction {
        let d = CollisionDetector::offline();
        passage_to_statements(passage, 0, Some(&NounPhrase::synthetic(entity)), None, &d, &FffConfig::default()).unwrap()
    }

    fn strict(text: &str) -> BTreeSet<String> {
        normalize_tokens(text).tokens.into_iter().filter(|t| t.class == Class::Strict).map(|t| t.key).collect()
    }

    #[test]
    fn pronoun_resolution_golden() {
        let g: serde_json::Value = serde_json::from_str(include_str!("../../fixtures/golden/pronoun_resolution.json")).unwrap();
        let ex = offline(g["passage"].as_str().unwrap(), g["entity"].as_str().unwrap());
        let want: Vec<String> = serde_json::from_value(g["statements"].clone()).unwrap();
        assert_eq!(texts(&ex), want);
    }

    #[test]
    fn deterministic_pass_on_calcium_passage() {
        let got = texts(&offline(CALCIUM, "calcium"));
        for s in [
            "Calcium is a silver-grey metal.",
            "Calcium melts at 840°C.",
            "Calcium boils at 1484°C to produce monatomic gas.",
            "Calcium's density is 1540 kg/m^3.",
            "Calcium is diamagnetic.",
            "Calcium reacts steadily with water.",
            "Calcium is flammable at high temperatures with oxygen.",
            "Calcium is flammable at high temperatures with air.",
            "The water chemistry of calcium is dominated by the hydrated Ca(2+) ion.",
        ] {
            assert!(got.contains(&s.to_string()), "missing {s}: {got:#?}");
        }
    }

    #[test]
    fn rival_entity_passages_yield_nothing() {
        assert!(offline(CALCIUM, "magnesium").statements.is_empty());
        assert!(offline(MAGNESIUM, "calcium").statements.is_empty());
        assert!(offline("The weather was mild all week.", "calcium").statements.is_empty());
    }

    #[test]
    fn pronoun_subject_under_entity_topic() {
        let got = texts(&offline(MAGNESIUM, "magnesium"));
        assert_eq!(
            got,
            vec!["Magnesium is widely used as a chemical reagent, desulfurization agent, and vital ingredient in fireworks."]
        );
    }

    #[test]
    fn llm_lines_are_gated() {
        let d = CollisionDetector::offline();
        let llm = ScriptedClient::new("m", |req| {
            assert!(req.messages[0].content.contains("about calcium"));
            Ok([
                "- Calcium is a conductor of electricity.",
                "Calcium melts at 900°C.",
                "It gives off bubbles of hydrogen.",
                "Magnesium reacts with water.",
                "2. Calcium gives off bubbles of hydrogen.",
            ]
            .join("\n"))
        });
        let ex = passage_to_statements(CALCIUM, 2, Some(&NounPhrase::synthetic("calcium")), Some(&llm), &d, &FffConfig::default()).unwrap();
        let got = texts(&ex);
        assert!(got.contains(&"Calcium is a conductor of electricity.".to_string()));
        assert!(got.contains(&"Calcium gives off bubbles of hydrogen.".to_string()));
        assert!(!got.iter().any(|s| s.contains("900") || s.starts_with("It ") || s.contains("Magnesium")));
        let reasons: Vec<&str> = ex.discarded.iter().filter(|d| d.source_passage_index == 2).map(|d| d.reason.as_str()).collect();
        assert!(reasons.contains(&"number or unit not in passage"));
        assert!(reasons.contains(&"mentions a rival entity"));
        assert!(ex.statements.iter().all(|s| s.source_passage_index == 2));
        let llm_made: Vec<&Statement> = ex.statements.iter().filter(|s| s.origin == Origin::Llm).collect();
        assert_eq!(llm_made.len(), 2);
        assert!(llm_made[0].source_text.starts_with("conductor of electricity"));
    }

    #[test]
    fn llm_failure_degrades() {
        let d = CollisionDetector::offline();
        let llm = ScriptedClient::new("m", |_| Err(LlmError::Timeout));
        let ex = passage_to_statements(CALCIUM, 0, Some(&NounPhrase::synthetic("calcium")), Some(&llm), &d, &FffConfig::default()).unwrap();
        assert!(ex.degraded.is_some());
        assert!(texts(&ex).contains(&"Calcium melts at 840°C.".to_string()));
    }

    fn query(text: &str, focal: &[&str]) -> AtomicQuery {
        AtomicQuery {
            text: text.into(),
            focal_nps: focal.iter().map(|f| NounPhrase::synthetic(f)).collect(),
            parent_query: text.into(),
            index: 0,
        }
    }

    #[test]
    fn focal_entity_skips_aspect_nouns() {
        let q = query("What are the chemical properties of calcium?", &["chemical properties", "calcium"]);
        assert_eq!(focal_entity(&q).unwrap().normalized(), "calcium");
        assert!(focal_entity(&query("benefits of ice for neck", &[])).is_none());
    }

    #[test]
    fn fact_sets_pair_by_entity_and_share_extraction() {
        let x = FactExtractor::new(CollisionDetector::offline(), None, FffConfig::default());
        let passages = vec![MAGNESIUM.to_string(), CALCIUM.to_string()];
        let queries = vec![
            query("What are the chemical properties of calcium?", &["chemical properties", "calcium"]),
            query("What are the physical properties of calcium?", &["physical properties", "calcium"]),
            query("What are the chemical properties of magnesium?", &["chemical properties", "magnesium"]),
            query("What are the properties of sodium?", &["sodium"]),
        ];
        let packets = x.build_fact_sets(&passages, &queries, "pt-0").unwrap();
        assert_eq!(x.cached(), 3 * 2);
        assert_eq!(packets.len(), 4);
        assert_eq!(packets[0].fact_set, packets[1].fact_set);
        let cal = &packets[0].fact_set;
        assert_eq!(cal.sections.len(), 1);
        assert_eq!(cal.sections[0].index, 1);
        assert!(cal.statements().all(|s| s.source_passage_index == 1));
        assert!(cal.statements().all(|s| !s.text.to_lowercase().contains("magnesium")));
        let mg = &packets[2].fact_set;
        assert!(mg.statements().all(|s| !s.text.to_lowercase().contains("calcium")));
        assert!(mg.statements().all(|s| s.source_passage_index == 0));
        assert_eq!(packets[3].fact_set.flags, vec![FactSetFlag::Empty]);
        assert!(packets[3].fact_set.is_empty());
        assert_eq!(packets[0].placeholder_table_ref, "pt-0");
    }

    #[test]
    fn document_shape() {
        let x = FactExtractor::new(CollisionDetector::offline(), None, FffConfig::default());
        let q = query("What are the physical properties of calcium?", &["physical properties", "calcium"]);
        let p = x.build_fact_sets(&[CALCIUM.to_string()], &[q], "pt").unwrap();
        let doc = serde_json::to_value(p[0].fact_set.to_document()).unwrap();
        assert_eq!(doc["entity"], "calcium");
        assert_eq!(doc["sections"][0]["index"], 1);
        assert_eq!(doc["sections"][0]["statements"][0], "Calcium is a silver-grey metal.");
        assert!(p[0].fact_set.render().starts_with("Section 1:\nCalcium is a silver-grey metal.\n"));
    }

    fn sentences() -> Vec<String> {
        let (clean, _) = unescape(CALCIUM);
        crate::nlp::split_sentences(&clean).into_iter().map(|s| s.text).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn emitted_statements_revalidate(picks in proptest::sample::subsequence(sentences(), 1..8)) {
            let passage = picks.join(" ");
            let d = CollisionDetector::offline();
            let entity = NounPhrase::synthetic("calcium");
            let ex = passage_to_statements(&passage, 0, Some(&entity), None, &d, &FffConfig::default()).unwrap();
            let source = strict(&unescape(&passage).0);
            for s in &ex.statements {
                prop_assert!(validate_statement(&s.text, Some(&entity), &d).unwrap().is_valid(), "{}", s.text);
                prop_assert!(strict(&s.text).is_subset(&source), "{}", s.text);
            }
            let again = passage_to_statements(&passage, 0, Some(&entity), None, &d, &FffConfig::default()).unwrap();
            prop_assert_eq!(ex, again);
        }
    }
}
