//! Authoring and coverage checks for the replay cassettes under
//! fixtures/cassettes. Re-author with
//! `cargo test -p acurai-core --test cassettes -- --ignored`.

mod common;

use std::collections::HashMap;
use std::sync::Arc;

use acurai_core::harness::{evaluate, EvalOptions};
use acurai_core::llm::{Cassette, ChatRequest, LlmClient, RecordingClient, ScriptedClient};
use acurai_core::pipeline::{AnswerSource, PipelineConfig};

use common::{corpus, fixture, replay};

/// Rewrites for sentences the deterministic pass defers, keyed by entity
/// ("" in open mode) and sentence.
fn rewrites() -> HashMap<(&'static str, &'static str), &'static str> {
    HashMap::from([
        (
            ("calcium", "The chemical properties of calcium are reacts with oxygen and reacts with water."),
            "The chemical properties of calcium react with oxygen.\nThe chemical properties of calcium react with water.",
        ),
        (
            ("calcium", "he chemical properties of calcium are reacts with oxygen and reacts with water."),
            "The chemical properties of calcium react with oxygen.\nThe chemical properties of calcium react with water.",
        ),
        (("calcium", "conductor of electricity but a poor one com …pared to most other metals."), "Calcium is a conductor of electricity."),
        (
            (
                "calcium",
                "Reacts steadily with water, giving off bubbles of hydrogen and a solution/slurry or alkaline, sparingly soluble calcium hydroxide.",
            ),
            "Calcium gives off bubbles of hydrogen.\nCalcium produces a solution/slurry of alkaline, sparingly soluble calcium hydroxide.",
        ),
        (
            ("calcium", "an also burn in nitrogen to form calcium nitride or carbon dioxide to form calcium carbonate."),
            "Calcium can also burn in nitrogen to form calcium nitride.\nCalcium can also burn in carbon dioxide to form calcium carbonate.",
        ),
        (("calcium", "Nearly all compounds are in oxidation state +2"), "Nearly all Calcium's compounds are in oxidation state +2."),
        (
            ("magnesium", "Magnesium is one of the most important elements that is present in many compounds as well as alloys."),
            "Magnesium is one of the most important elements.\nMagnesium is present in many compounds.\nMagnesium is present in many alloys.",
        ),
        (
            ("magnesium", "It finds multiple applications due to its unique chemical and physical properties."),
            "Magnesium finds multiple applications.",
        ),
        (
            (
                "magnesium",
                "s mentioned in the chemical properties, magnesium is also present in many other compounds like dolomite, magnesium carbonate (that is also known as magnesite)",
            ),
            "Magnesium is also present in dolomite.\nMagnesium is also present in magnesium carbonate.",
        ),
        (("magnesium", "magnesium sulfate (which is also known by the name epsomite)."), "Magnesium is also present in magnesium sulfate."),
        (
            (
                "",
                "After consistent use for a month potential health benefits include improved digestion and sleep, reduced thyroid issues and PMS symptoms, cure common colds, alleviate headaches or toothaches, and reduce overall risks associated with lung and cardiovascular diseases.",
            ),
            "After consistent use for a month potential health benefits include improved digestion and sleep.\n\
             After consistent use for a month potential health benefits include reduced thyroid issues and PMS symptoms.\n\
             After consistent use for a month potential health benefits include curing common colds.\n\
             After consistent use for a month potential health benefits include alleviating headaches.\n\
             After consistent use for a month potential health benefits include alleviating toothaches.\n\
             After consistent use for a month potential health benefits include reduced risks associated with lung and cardiovascular diseases.",
        ),
        (
            (
                "",
                "For the hardcore: Ice bath Grab three bags of ice from a convenience store and fill your bath tub halfway full with cold water.",
            ),
            "For the hardcore, grab three bags of ice from a convenience store.\nFill your tub halfway full with cold water.",
        ),
        (
            ("", "Employers generally must pay workers the highest minimum wage prescribed by federal, state, or summer local law."),
            "Employers generally must pay the highest minimum wage prescribed by federal, state, or local law.",
        ),
    ])
}

fn fff_answer(request: &ChatRequest) -> String {
    let table = rewrites();
    let user = &request.messages[1].content;
    let entity = user.strip_prefix("Entity: ").and_then(|r| r.lines().next()).unwrap_or("");
    let sentences = user.split_once("\nSentences:\n").map(|(_, s)| s).unwrap_or("");
    let mut out = Vec::new();
    for line in sentences.lines() {
        let Some((_, sentence)) = line.split_once(". ") else { continue };
        if let Some(r) = table.get(&(entity, sentence)) {
            out.push(*r);
        }
    }
    out.join("\n")
}

fn offered_statements(request: &ChatRequest) -> (String, Vec<String>) {
    let user = &request.messages[1].content;
    let (query, facts) = user.split_once("\n\n").unwrap();
    let facts = facts.lines().filter(|l| !l.starts_with("Section ") && !l.trim().is_empty()).map(String::from).collect();
    (query.to_string(), facts)
}

fn synthesis_answer(request: &ChatRequest) -> String {
    let (query, facts) = offered_statements(request);
    match query.as_str() {
        "what did the industrial revolution do for society" => "It occurred between the late 18th and early 20th century.".into(),
        _ => facts.join(" "),
    }
}

/// Shifts every digit and appends an unsupported claim.
fn corrupt(answer: &str) -> String {
    let shifted: String = answer
        .chars()
        .map(|c| c.to_digit(10).map_or(c, |d| char::from_digit((d + 3) % 10, 10).unwrap()))
        .collect();
    format!("{shifted} It is also proven to cure cancer.")
}

fn script(corrupted: bool) -> ScriptedClient {
    ScriptedClient::new("gpt-4-0613", move |r| {
        if r.messages[0].content.starts_with("Rewrite") {
            Ok(fff_answer(r))
        } else if corrupted {
            Ok(corrupt(&synthesis_answer(r)))
        } else {
            Ok(synthesis_answer(r))
        }
    })
}

fn record(corrupted: bool) -> (Cassette, acurai_core::harness::EvalSummary) {
    let client = Arc::new(RecordingClient::new(script(corrupted), Cassette::default(), false));
    let config = PipelineConfig::default();
    let llm: Arc<dyn LlmClient> = client.clone();
    let options = EvalOptions { workers: 1, ..EvalOptions::default() };
    let summary = evaluate(&corpus(), &config, llm, config.detector().unwrap(), &options).unwrap();
    (client.cassette(), summary)
}

#[test]
#[ignore = "rewrites fixtures/cassettes"]
fn author_cassettes() {
    for (name, corrupted) in [("replay.json", false), ("corrupted.json", true)] {
        let (cassette, summary) = record(corrupted);
        for r in &summary.records {
            let trace = r.trace.as_ref().unwrap();
            for q in &trace.queries {
                eprintln!("{name} {} {:?} {:?} retries={}", r.response_id, q.atomic_query, q.source, q.retries_used);
                if std::env::var("CASSETTE_VERBOSE").is_ok() {
                    for e in &q.exchanges {
                        for u in e.report.unsupported() {
                            eprintln!("   FS-UNSUP {} {:?}", u.response_statement, u.reasons);
                        }
                    }
                    if let Some(p) = &q.passage_report {
                        for u in p.unsupported() {
                            eprintln!("   PASS-UNSUP {} {:?} best={:?}", u.response_statement, u.reasons, u.best_match);
                        }
                    }
                }
            }
        }
        assert!(summary.all_faithful(), "{name}: {:?}", summary.records);
        cassette.save(&fixture(&format!("cassettes/{name}"))).unwrap();
    }
}

#[test]
fn cassettes_cover_the_corpus() {
    let config = PipelineConfig::default();
    for name in ["replay.json", "corrupted.json"] {
        let summary = evaluate(&corpus(), &config, replay(name), config.detector().unwrap(), &EvalOptions::default()).unwrap();
        assert!(summary.records.iter().all(|r| r.reason.is_none()), "{name}: {:?}", summary.records);
        assert!(summary.all_faithful());
    }
}

#[test]
fn replay_answers_come_from_the_model() {
    let config = PipelineConfig::default();
    let summary = evaluate(&corpus(), &config, replay("replay.json"), config.detector().unwrap(), &EvalOptions::default()).unwrap();
    for r in &summary.records {
        for q in &r.trace.as_ref().unwrap().queries {
            assert!(matches!(q.source, AnswerSource::Llm | AnswerSource::NoFacts), "{} {:?}", q.atomic_query, q.source);
        }
    }
}

#[test]
fn corrupted_answers_fall_back() {
    let config = PipelineConfig::default();
    let summary = evaluate(&corpus(), &config, replay("corrupted.json"), config.detector().unwrap(), &EvalOptions::default()).unwrap();
    for r in &summary.records {
        for q in &r.trace.as_ref().unwrap().queries {
            assert_ne!(q.source, AnswerSource::Llm, "{}", q.atomic_query);
            if q.source != AnswerSource::NoFacts {
                assert_eq!(q.exchanges.len(), config.retry_budget + 1);
            }
        }
    }
}
