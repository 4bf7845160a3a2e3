//! Regenerates the committed fixtures under `fixtures/`.
//!
//! The corpus transcripts come from the planted-tree generator, so the true
//! sketch steps and thought functions of every thought are known. A scripted
//! annotator answers the three prompts from that plan, and the responses are
//! recorded into the response cache exactly as a live annotator's would be.
//! Replaying the cache then needs no network.
//!
//! Usage: cargo run -p cotree-cli --example gen_fixtures

use std::path::{Path, PathBuf};

use cotree::annotator::{
    AnnotatedChain, AnnotatedThought, Annotator, AnnotatorConfig, CacheMode, CachingClient, LlmClient, LlmRequest,
    LlmResponse, ReasoningSketch, ResponseCache, SketchStep, ThoughtFunction,
};
use cotree::dataset::{write_json, write_jsonl, AnnotatedDocument, DatasetRecord, RecordMetadata};
use cotree::explain::{generate_planted_dataset, generate_planted_tree, ErrorPattern, PatternMix};
use cotree::gnn::{train, ClassifierConfig};
use cotree::segmenter::{word_count, Segmenter};
use cotree::{Result, SeparatorProfile};
use rand::SeedableRng;

const CORPUS_PER_CLASS: usize = 12;
const CORPUS_SEED: u64 = 2024;
const MODEL_SEED: u64 = 17;

struct PlanOracle {
    chains: Vec<AnnotatedChain>,
}

fn json_escape(s: &str) -> String {
    let quoted = serde_json::to_string(s).unwrap();
    quoted[1..quoted.len() - 1].to_string()
}

fn category(f: ThoughtFunction) -> &'static str {
    match f {
        ThoughtFunction::Continuation => "Continuous Logic",
        ThoughtFunction::Exploration => "Exploration",
        ThoughtFunction::Backtracking => "Backtracking",
        ThoughtFunction::Verification => "Validation",
    }
}

impl LlmClient for PlanOracle {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse> {
        let p = &request.prompt;
        let raw_text = if p.contains("<reasoning_process>") && !p.contains("List A") {
            let chain = self
                .chains
                .iter()
                .find(|c| p.contains(&c.thoughts.iter().map(|t| t.text.as_str()).collect::<String>()))
                .expect("sketch prompt for a known transcript");
            let lines: Vec<String> = chain.sketch.steps.iter().map(|s| format!("Step {}. {}", s.step, s.text)).collect();
            format!("<reasoning_process>\n{}\n</reasoning_process>", lines.join("\n"))
        } else if p.contains("List A") {
            let mut entries = Vec::new();
            for chain in &self.chains {
                for t in &chain.thoughts {
                    if p.contains(&format!("B{}. {}", t.index, t.text.trim())) {
                        let steps: Vec<String> = t.steps.iter().map(|s| format!("\"A{s}\"")).collect();
                        entries.push(format!("\"B{}\": [{}]", t.index, steps.join(", ")));
                    }
                }
            }
            format!("```json\n{{{}}}\n```", entries.join(", "))
        } else {
            let t = self
                .chains
                .iter()
                .flat_map(|c| &c.thoughts)
                .find(|t| p.contains(&format!("\"Text2\": \"{}\"", json_escape(t.text.trim()))))
                .expect("function prompt for a known thought");
            format!("```json{{\"Category\": \"{}\"}}```", category(t.function.unwrap()))
        };
        Ok(LlmResponse { raw_text })
    }
}

fn thought(index: usize, text: &str, steps: &[usize], function: Option<ThoughtFunction>) -> AnnotatedThought {
    let words = word_count(text);
    AnnotatedThought {
        index,
        text: text.to_string(),
        word_count: words,
        token_count: words,
        steps: steps.to_vec(),
        function,
    }
}

/// The worked example: nine thoughts over a three-step sketch, ending in a
/// thought that restarts from step 1 and covers steps 1 to 3.
fn worked_example_chain() -> AnnotatedChain {
    use ThoughtFunction::*;
    let sketch = ReasoningSketch {
        steps: ["Set up the equation from the given ratio.", "Solve the equation for x.", "Substitute x back and compute the answer."]
            .iter()
            .enumerate()
            .map(|(i, t)| SketchStep { step: i + 1, text: t.to_string() })
            .collect(),
    };
    let thoughts = vec![
        thought(0, "Okay, let me read the problem carefully. ", &[], None),
        thought(1, "Hmm, the ratio gives 3x = 2(x + 5). ", &[1], Some(Continuation)),
        thought(2, "Hmm, expanding gives 3x = 2x + 10, so x = 10. ", &[2], Some(Continuation)),
        thought(3, "Alternatively, I could cross multiply differently and get x = 10 as well. ", &[2], Some(Exploration)),
        thought(4, "Hmm, then the total is 10 + 15 = 25. ", &[3], Some(Continuation)),
        thought(5, "Let me verify, 25 split as 10 and 15 keeps the ratio 2:3. ", &[3], Some(Verification)),
        thought(6, "Wait, the ratio was 3:2, so the equation should be 2x = 3(x - 5), giving x = 15. ", &[2], Some(Backtracking)),
        thought(7, "Hmm, so the total is 15 + 10 = 25. ", &[3], Some(Continuation)),
        thought(
            8,
            "Alternatively, set the parts to 3k and 2k, so k = 5 and the total is 5k = 25. ",
            &[1, 2, 3],
            Some(Exploration),
        ),
    ];
    AnnotatedChain { sketch, thoughts, warnings: Vec::new() }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn main() -> Result<()> {
    let root = root();
    write_json(
        &root.join("worked-example/annotated/worked-example.json"),
        &AnnotatedDocument {
            sample_id: "worked-example".into(),
            label: None,
            chain: worked_example_chain(),
        },
    )?;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(CORPUS_SEED);
    let mut planned = Vec::new();
    for i in 0..2 * CORPUS_PER_CLASS {
        let pattern = if i % 2 == 0 { None } else { Some(ErrorPattern::ALL[(i / 2) % 4]) };
        planned.push(generate_planted_tree(&mut rng, pattern, &format!("fx-{i:02}"))?);
    }
    let records: Vec<DatasetRecord> = planned
        .iter()
        .map(|t| DatasetRecord {
            sample_id: t.sample_id.clone(),
            transcript: t.transcript(),
            label: Some(if t.label == 1 { "positive" } else { "negative" }.into()),
            metadata: RecordMetadata {
                source_model: Some("synthetic".into()),
                benchmark: Some("planted".into()),
                token_length: Some(t.thought_tokens().iter().sum()),
                extracted_answer: None,
            },
        })
        .collect();
    let corpus = root.join("corpus");
    write_jsonl(&corpus.join("records.jsonl"), &records)?;

    let cache_dir = corpus.join("cache");
    if cache_dir.exists() {
        std::fs::remove_dir_all(&cache_dir)?;
    }
    let oracle = PlanOracle {
        chains: planned.iter().map(|t| t.chain.clone()).collect(),
    };
    let client = CachingClient::new(Some(ResponseCache::open(&cache_dir)?), CacheMode::Record, Some(Box::new(oracle)))?;
    let annotator = Annotator::new(client, AnnotatorConfig::default())?;
    let segmenter = Segmenter::new(SeparatorProfile::deepseek_family());
    for (r, t) in records.iter().zip(&planned) {
        let chain = annotator.annotate(&r.transcript, &segmenter)?;
        let steps: Vec<_> = chain.thoughts.iter().map(|t| (&t.steps, t.function)).collect();
        let expected: Vec<_> = t.chain.thoughts.iter().map(|t| (&t.steps, t.function)).collect();
        assert_eq!(steps, expected, "{}: recorded annotation differs from the plan", r.sample_id);
    }
    eprintln!("recorded {} annotator responses", annotator.client().forwarded_calls());

    let data = generate_planted_dataset(300, &PatternMix::default(), MODEL_SEED)?;
    let samples: Vec<_> = data.into_iter().map(|t| t.sample).collect();
    let cfg = ClassifierConfig {
        hidden_size: 16,
        max_epochs: 40,
        learning_rate: 3e-3,
        seed: MODEL_SEED,
        ..Default::default()
    };
    let (model, log) = train(&samples, &cfg)?;
    eprintln!("fixture model: best epoch {}, val accuracy {:.3}", log.best_epoch, model.summary.as_ref().unwrap().best_val_accuracy);
    model.save(&corpus.join("model.json"))?;
    Ok(())
}
