use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cotree::annotator::{Annotator, CacheMode, CachingClient, HttpChatClient, LlmClient, ResponseCache};
use cotree::dataset::{
    document_file_name, ensure_unique_ids, list_documents, parse_jsonl, read_json, read_jsonl, stratified_split,
    write_json, write_jsonl, AnnotatedDocument, DatasetRecord, SegmentedRecord, SplitRatio, TreeDocument,
};
use cotree::explain::{generate_planted_dataset, Detection, EdgeImportance, PatternMix};
use cotree::features::{featurize, GraphSample, TOKEN_COLUMN};
use cotree::gnn::{accuracy, baseline_score, classify_score, train, train_length_baseline};
use cotree::segmenter::Segmenter;
use cotree::selector::{group_by_question, select, selection_accuracy, Candidate, Strategy};
use cotree::{tree, viz, Error, ErrorPattern, PipelineConfig, ReasoningTree, Result, SeparatorProfile, TreeClassifier};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::{Cli, Command};

pub fn run(cli: Cli) -> Result<()> {
    let config = PipelineConfig::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::Segment { profile, input, out } => segment(&config, profile, &input, &out),
        Command::Annotate {
            cache,
            mode,
            input,
            out,
            profile,
        } => annotate(&config, cache, mode, &input, &out, profile),
        Command::BuildTree { input, out } => build_trees(&input, &out),
        Command::Featurize { trees, out } => featurize_dir(&config, &trees, &out),
        Command::Train {
            graphs,
            split,
            seed,
            out,
            runs,
            epochs,
        } => train_cmd(&config, &graphs, &split, seed, &out, runs, epochs),
        Command::Eval { graphs, model } => eval(&graphs, &model),
        Command::Predict { model, tree } => predict(&config, &model, &tree),
        Command::Explain {
            model,
            tree,
            out,
            target,
        } => explain(&config, &model, &tree, &out, target),
        Command::DetectPatterns { trees, report } => detect(&config, &trees, &report),
        Command::Bestofn {
            strategy,
            model,
            candidates,
            score_key,
        } => bestofn(&config, strategy, model.as_deref(), &candidates, score_key.as_deref()),
        Command::Viz { tree, out } => viz_cmd(&tree, &out),
        Command::GeneratePlanted { n_per_class, seed, out } => generate(&config, n_per_class, seed, &out),
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json values serialize"));
}

fn segment(config: &PipelineConfig, profile: Option<String>, input: &Path, out: &Path) -> Result<()> {
    let profile = SeparatorProfile::resolve(profile.as_deref().unwrap_or(&config.profile))?;
    let records: Vec<DatasetRecord> = read_jsonl(input)?;
    ensure_unique_ids(records.iter().map(|r| r.sample_id.as_str()))?;
    let segmenter = Segmenter::new(profile);
    let segmented: Vec<SegmentedRecord> = records
        .par_iter()
        .map(|r| {
            Ok(SegmentedRecord {
                sample_id: r.sample_id.clone(),
                label: r.label.clone(),
                thoughts: segmenter.split(&r.transcript).map_err(|e| e.context(r.sample_id.clone()))?,
            })
        })
        .collect::<Result<_>>()?;
    write_jsonl(out, &segmented)?;
    print_json(&json!({
        "records": segmented.len(),
        "thoughts": segmented.iter().map(|s| s.thoughts.len()).sum::<usize>(),
    }));
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnnotateInput {
    Segmented(SegmentedRecord),
    Raw(DatasetRecord),
}

fn annotate(
    config: &PipelineConfig,
    cache: Option<PathBuf>,
    mode: CacheMode,
    input: &Path,
    out: &Path,
    profile: Option<String>,
) -> Result<()> {
    let file = std::fs::File::open(input).map_err(|e| Error::from(e).context(input.display().to_string()))?;
    let inputs: Vec<AnnotateInput> = parse_jsonl(std::io::BufReader::new(file))?;
    let cache = cache.map(ResponseCache::open).transpose()?;
    let inner: Option<Box<dyn LlmClient>> = match mode {
        CacheMode::Replay => None,
        _ => Some(Box::new(HttpChatClient::from_env()?)),
    };
    let client = CachingClient::new(cache, mode, inner)?;
    let annotator = Annotator::new(client, config.annotator.clone())?;
    let segmenter = Segmenter::new(SeparatorProfile::resolve(profile.as_deref().unwrap_or(&config.profile))?);

    let mut ids = Vec::with_capacity(inputs.len());
    let mut warnings = 0;
    for item in inputs {
        let (sample_id, label, chain) = match item {
            AnnotateInput::Segmented(r) => {
                let chain = annotator.annotate_thoughts(&r.thoughts);
                (r.sample_id, r.label, chain)
            }
            AnnotateInput::Raw(r) => {
                let chain = annotator.annotate(&r.transcript, &segmenter);
                (r.sample_id, r.label, chain)
            }
        };
        let chain = chain.map_err(|e| e.context(sample_id.clone()))?;
        if ids.contains(&sample_id) {
            return Err(Error::Integrity(format!("duplicate sample_id {sample_id:?}")));
        }
        warnings += chain.warnings.len();
        let doc = AnnotatedDocument {
            sample_id: sample_id.clone(),
            label,
            chain,
        };
        write_json(&out.join(document_file_name(&sample_id)), &doc)?;
        ids.push(sample_id);
    }
    print_json(&json!({
        "documents": ids.len(),
        "warnings": warnings,
        "forwarded_calls": annotator.client().forwarded_calls(),
    }));
    Ok(())
}

fn build_trees(input: &Path, out: &Path) -> Result<()> {
    let paths = list_documents(input)?;
    let nodes: Vec<usize> = paths
        .par_iter()
        .map(|p| {
            let doc: AnnotatedDocument = read_json(p)?;
            let tree_doc = TreeDocument::from_chain(&doc.sample_id, doc.label, &doc.chain)
                .map_err(|e| e.context(doc.sample_id.clone()))?;
            write_json(&out.join(document_file_name(&doc.sample_id)), &tree_doc)?;
            Ok(tree_doc.tree.len())
        })
        .collect::<Result<_>>()?;
    print_json(&json!({ "trees": nodes.len(), "nodes": nodes.iter().sum::<usize>() }));
    Ok(())
}

fn load_trees(dir: &Path) -> Result<Vec<TreeDocument>> {
    let docs: Vec<TreeDocument> = list_documents(dir)?.par_iter().map(|p| read_json(p)).collect::<Result<_>>()?;
    ensure_unique_ids(docs.iter().map(|d| d.sample_id.as_str()))?;
    Ok(docs)
}

fn doc_sample(config: &PipelineConfig, doc: &TreeDocument) -> Result<GraphSample> {
    let label = config.labels.encode(doc.label.as_deref())?;
    featurize(&doc.tree, &doc.thought_tokens, doc.sample_id.clone(), label).map_err(|e| e.context(doc.sample_id.clone()))
}

fn featurize_dir(config: &PipelineConfig, trees: &Path, out: &Path) -> Result<()> {
    let docs = load_trees(trees)?;
    let samples: Vec<GraphSample> = docs.par_iter().map(|d| doc_sample(config, d)).collect::<Result<_>>()?;
    write_jsonl(out, &samples)?;
    print_json(&json!({ "graphs": samples.len() }));
    Ok(())
}

fn response_length(s: &GraphSample) -> f64 {
    s.node_features.iter().map(|r| r[TOKEN_COLUMN]).fold(0.0, f64::max)
}

fn labeled_graphs(path: &Path) -> Result<(Vec<GraphSample>, Vec<u8>)> {
    let graphs: Vec<GraphSample> = read_jsonl(path)?;
    ensure_unique_ids(graphs.iter().map(|g| g.sample_id.as_str()))?;
    let labels = graphs
        .iter()
        .map(|g| g.label.ok_or_else(|| Error::Integrity(format!("graph {} has no label", g.sample_id))))
        .collect::<Result<Vec<u8>>>()?;
    Ok((graphs, labels))
}

fn train_cmd(
    config: &PipelineConfig,
    graphs: &Path,
    split: &str,
    seed: u64,
    out: &Path,
    runs: usize,
    epochs: Option<usize>,
) -> Result<()> {
    if runs == 0 {
        return Err(Error::Config("--runs must be at least 1".into()));
    }
    let ratio: SplitRatio = split.parse()?;
    let (graphs, labels) = labeled_graphs(graphs)?;
    let split = stratified_split(&labels, ratio, seed)?;
    let train_set: Vec<GraphSample> = split.train.iter().map(|&i| graphs[i].clone()).collect();
    let test_set: Vec<GraphSample> = split.test.iter().map(|&i| graphs[i].clone()).collect();

    let pairs: Vec<(f64, u8)> = train_set.iter().map(|s| (response_length(s), s.label.unwrap())).collect();
    let baseline = train_length_baseline(&pairs, &config.baseline)?;
    let baseline_accuracy = if test_set.is_empty() {
        None
    } else {
        let hits = test_set
            .iter()
            .filter(|s| classify_score(baseline_score(&baseline, response_length(s)), 0.5) == (s.label == Some(1)))
            .count();
        Some(hits as f64 / test_set.len() as f64)
    };

    let mut reports = Vec::with_capacity(runs);
    let mut test_scores = Vec::with_capacity(runs);
    for run in 0..runs {
        let mut cfg = config.classifier.clone();
        cfg.seed = seed + run as u64;
        if let Some(e) = epochs {
            cfg.max_epochs = e;
        }
        let (mut model, log) = train(&train_set, &cfg)?;
        let test_accuracy = if test_set.is_empty() { None } else { Some(accuracy(&model, &test_set)?) };
        if let (Some(summary), Some(acc)) = (model.summary.as_mut(), test_accuracy) {
            summary.test_accuracy = Some(acc);
        }
        let summary = model.summary.clone().expect("trained models carry a summary");
        reports.push(json!({
            "seed": cfg.seed,
            "best_epoch": log.best_epoch,
            "val_accuracy": summary.best_val_accuracy,
            "test_accuracy": test_accuracy,
        }));
        test_scores.extend(test_accuracy);
        if run == 0 {
            model.save(out)?;
        }
    }
    let n = test_scores.len().max(1) as f64;
    let mean = test_scores.iter().sum::<f64>() / n;
    let std = (test_scores.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    print_json(&json!({
        "split": ratio.to_string(),
        "train_size": split.train.len(),
        "test_size": split.test.len(),
        "runs": reports,
        "mean_test_accuracy": mean,
        "std_test_accuracy": std,
        "length_baseline_test_accuracy": baseline_accuracy,
        "checkpoint": out.display().to_string(),
    }));
    Ok(())
}

fn eval(graphs: &Path, model: &Path) -> Result<()> {
    let model = TreeClassifier::load(model)?;
    let (graphs, _) = labeled_graphs(graphs)?;
    let scores: Vec<f64> = graphs.par_iter().map(|g| model.predict_score(g)).collect::<Result<_>>()?;
    let mut confusion = BTreeMap::from([("tp", 0usize), ("tn", 0), ("fp", 0), ("fn", 0)]);
    for (g, &s) in graphs.iter().zip(&scores) {
        let key = match (classify_score(s, 0.5), g.label == Some(1)) {
            (true, true) => "tp",
            (false, false) => "tn",
            (true, false) => "fp",
            (false, true) => "fn",
        };
        *confusion.get_mut(key).unwrap() += 1;
    }
    let correct = confusion["tp"] + confusion["tn"];
    print_json(&json!({
        "samples": graphs.len(),
        "accuracy": if graphs.is_empty() { 0.0 } else { correct as f64 / graphs.len() as f64 },
        "confusion": confusion,
    }));
    Ok(())
}

#[derive(Serialize)]
struct Prediction {
    sample_id: String,
    score: f64,
    predicted: u8,
}

fn predict(config: &PipelineConfig, model: &Path, tree: &Path) -> Result<()> {
    let model = TreeClassifier::load(model)?;
    let docs = if tree.is_dir() { load_trees(tree)? } else { vec![read_json(tree)?] };
    let preds: Vec<Prediction> = docs
        .par_iter()
        .map(|d| {
            let score = model.predict_score(&doc_sample(config, d)?)?;
            Ok(Prediction {
                sample_id: d.sample_id.clone(),
                score,
                predicted: classify_score(score, 0.5) as u8,
            })
        })
        .collect::<Result<_>>()?;
    for p in preds {
        println!("{}", serde_json::to_string(&p)?);
    }
    Ok(())
}

fn explain(config: &PipelineConfig, model: &Path, tree: &Path, out: &Path, target: Option<u8>) -> Result<()> {
    let model = TreeClassifier::load(model)?;
    let mut doc: TreeDocument = read_json(tree)?;
    let sample = doc_sample(config, &doc)?;
    let score = model.predict_score(&sample)?;
    let target = target.unwrap_or(classify_score(score, 0.5) as u8);
    let importance: EdgeImportance = cotree::explain(&model, &sample, target, &config.explainer)?;
    importance.annotate(&mut doc.tree)?;
    write_json(out, &doc)?;
    let top: Vec<_> = importance
        .top_fraction(0.2)
        .into_iter()
        .map(|k| json!({ "parent": doc.tree.edges[k].parent, "child": doc.tree.edges[k].child, "importance": importance.weights[k] }))
        .collect();
    print_json(&json!({
        "sample_id": doc.sample_id,
        "score": score,
        "target": target,
        "top_edges": top,
    }));
    Ok(())
}

#[derive(Serialize)]
struct TreeDetections {
    sample_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    detections: Vec<Detection>,
}

fn frequency_table<'a>(items: impl Iterator<Item = &'a TreeDetections>) -> serde_json::Value {
    let mut trees = 0usize;
    let mut counts: BTreeMap<&str, usize> = ErrorPattern::ALL.iter().map(|p| (p.as_str(), 0)).collect();
    for t in items {
        trees += 1;
        for p in ErrorPattern::ALL {
            if t.detections.iter().any(|d| d.pattern == p) {
                *counts.get_mut(p.as_str()).unwrap() += 1;
            }
        }
    }
    let fractions: BTreeMap<&str, f64> = counts
        .iter()
        .map(|(k, &c)| (*k, if trees == 0 { 0.0 } else { c as f64 / trees as f64 }))
        .collect();
    json!({ "trees": trees, "counts": counts, "fractions": fractions })
}

fn detect(config: &PipelineConfig, trees: &Path, report: &Path) -> Result<()> {
    let docs = load_trees(trees)?;
    let per_tree: Vec<TreeDetections> = docs
        .par_iter()
        .map(|d| TreeDetections {
            sample_id: d.sample_id.clone(),
            label: d.label.clone(),
            detections: cotree::detect_patterns(&d.tree, &config.thresholds),
        })
        .collect();
    let mut by_label = BTreeMap::new();
    for tag in [&config.labels.positive, &config.labels.negative] {
        if per_tree.iter().any(|t| t.label.as_ref() == Some(tag)) {
            by_label.insert(tag.clone(), frequency_table(per_tree.iter().filter(|t| t.label.as_ref() == Some(tag))));
        }
    }
    let overall = frequency_table(per_tree.iter());
    write_json(
        report,
        &json!({
            "thresholds": config.thresholds,
            "overall": overall,
            "by_label": by_label,
            "trees": per_tree,
        }),
    )?;
    print_json(&overall);
    Ok(())
}

fn bestofn(
    config: &PipelineConfig,
    strategy: Strategy,
    model: Option<&Path>,
    candidates: &Path,
    score_key: Option<&str>,
) -> Result<()> {
    let all: Vec<Candidate> = read_jsonl(candidates)?;
    let base = candidates.parent().unwrap_or(Path::new("."));
    let model = model.map(TreeClassifier::load).transpose()?;
    let groups = group_by_question(all);

    let selections = groups
        .par_iter()
        .map(|cands| {
            let scores: Option<Vec<f64>> = match (strategy.needs_scores(), score_key, &model) {
                (false, _, _) => None,
                (true, Some(key), _) => Some(
                    cands
                        .iter()
                        .map(|c| {
                            c.external_scores.get(key).copied().ok_or_else(|| {
                                Error::Integrity(format!("candidate {}/{} has no score {key:?}", c.question_id, c.candidate_id))
                            })
                        })
                        .collect::<Result<_>>()?,
                ),
                (true, None, Some(m)) => Some(
                    cands
                        .iter()
                        .map(|c| {
                            let doc: TreeDocument = read_json(&base.join(&c.transcript_ref))?;
                            m.predict_score(&doc_sample(config, &doc)?)
                        })
                        .collect::<Result<_>>()?,
                ),
                (true, None, None) => {
                    return Err(Error::Config(format!("strategy {} needs --model or --score-key", strategy.as_str())))
                }
            };
            select(strategy, cands, scores.as_deref())
        })
        .collect::<Result<Vec<_>>>()?;
    let questions_with_correct = groups.iter().filter(|g| g.iter().any(|c| c.is_correct() == Some(true))).count();
    print_json(&json!({
        "strategy": strategy.as_str(),
        "questions": selections.len(),
        "questions_with_a_correct_candidate": questions_with_correct,
        "accuracy": selection_accuracy(&selections),
        "selections": selections,
    }));
    Ok(())
}

fn load_any_tree(path: &Path) -> Result<(String, ReasoningTree)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    if let Ok(doc) = serde_json::from_str::<TreeDocument>(&text) {
        return Ok((doc.sample_id, doc.tree));
    }
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok((stem, tree::from_json(&text).map_err(|e| e.context(path.display().to_string()))?))
}

fn viz_cmd(tree: &Path, out: &Path) -> Result<()> {
    let (title, tree) = load_any_tree(tree)?;
    let text = match out.extension().and_then(|e| e.to_str()) {
        Some("dot" | "gv") => viz::export_dot(&tree),
        Some("html" | "htm") => viz::export_html(&tree, &title),
        _ => return Err(Error::Config(format!("{}: output must end in .dot or .html", out.display()))),
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, text)?;
    print_json(&json!({ "nodes": tree.len(), "edges": tree.edges.len(), "out": out.display().to_string() }));
    Ok(())
}

fn generate(config: &PipelineConfig, n_per_class: usize, seed: u64, out: &Path) -> Result<()> {
    let data = generate_planted_dataset(n_per_class, &PatternMix::default(), seed)?;
    for t in &data {
        let tag = if t.label == 1 { &config.labels.positive } else { &config.labels.negative };
        let doc = TreeDocument {
            sample_id: t.sample_id.clone(),
            label: Some(tag.clone()),
            thought_tokens: t.thought_tokens(),
            sketch: t.chain.sketch.clone(),
            tree: t.tree.clone(),
        };
        write_json(&out.join(document_file_name(&t.sample_id)), &doc)?;
    }
    print_json(&json!({ "trees": data.len() }));
    Ok(())
}
