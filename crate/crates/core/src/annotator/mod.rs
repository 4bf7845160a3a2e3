//! LLM-backed annotation of a segmented transcript.
//!
//! Three kinds of calls are issued per transcript: one to condense the
//! transcript into a numbered reasoning sketch, one per word-budgeted batch
//! of thoughts to map thoughts onto sketch steps, and one per adjacent
//! thought pair to classify how the later thought relates to the earlier.

mod client;

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use client::{
    CacheMode, CachingClient, HttpChatClient, LlmClient, LlmRequest, LlmResponse, ResponseCache,
    ENV_API_KEY, ENV_ENDPOINT,
};

use crate::error::{Error, Result};
use crate::segmenter::{Segmenter, Thought};

const SKETCH_TEMPLATE: &str = include_str!("../../assets/prompts/extract_sketch.txt");
const ASSIGN_TEMPLATE: &str = include_str!("../../assets/prompts/assign_steps.txt");
const FUNCTION_TEMPLATE: &str = include_str!("../../assets/prompts/identify_function.txt");

pub const DEFAULT_WORD_BUDGET: usize = 600;
pub const DEFAULT_MODEL: &str = "deepseek-chat";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchStep {
    pub step: usize,
    pub text: String,
}

/// Ordered key reasoning steps, numbered 1..=K.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningSketch {
    pub steps: Vec<SketchStep>,
}

impl ReasoningSketch {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn parse(raw: &str) -> Result<Self> {
        parse_sketch(raw)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepAssignment {
    pub thought_index: usize,
    pub steps: Vec<usize>,
}

/// Relation of a thought to the thought before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThoughtFunction {
    Continuation,
    Exploration,
    Backtracking,
    Verification,
}

impl ThoughtFunction {
    pub const ALL: [ThoughtFunction; 4] = [
        ThoughtFunction::Continuation,
        ThoughtFunction::Exploration,
        ThoughtFunction::Backtracking,
        ThoughtFunction::Verification,
    ];

    /// Edge code: 1 continuation, 2 exploration, 3 backtracking, 4 verification.
    pub fn code(self) -> i8 {
        match self {
            ThoughtFunction::Continuation => 1,
            ThoughtFunction::Exploration => 2,
            ThoughtFunction::Backtracking => 3,
            ThoughtFunction::Verification => 4,
        }
    }

    pub fn from_code(code: i8) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.code() == code)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ThoughtFunction::Continuation => "continuation",
            ThoughtFunction::Exploration => "exploration",
            ThoughtFunction::Backtracking => "backtracking",
            ThoughtFunction::Verification => "verification",
        }
    }

    /// Maps an annotator category label. "Validation" and "Verification" are the same class.
    pub fn from_category(label: &str) -> Option<Self> {
        match label.trim().to_ascii_lowercase().as_str() {
            "continuous logic" => Some(ThoughtFunction::Continuation),
            "exploration" => Some(ThoughtFunction::Exploration),
            "backtracking" => Some(ThoughtFunction::Backtracking),
            "validation" | "verification" => Some(ThoughtFunction::Verification),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedThought {
    pub index: usize,
    pub text: String,
    pub word_count: usize,
    pub token_count: usize,
    pub steps: Vec<usize>,
    /// `None` for thought 0, which has no predecessor.
    pub function: Option<ThoughtFunction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedChain {
    pub sketch: ReasoningSketch,
    pub thoughts: Vec<AnnotatedThought>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotatorConfig {
    pub model_name: String,
    pub temperature: f64,
    pub word_budget: usize,
    pub max_in_flight: usize,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        Self {
            model_name: DEFAULT_MODEL.to_string(),
            temperature: 0.0,
            word_budget: DEFAULT_WORD_BUDGET,
            max_in_flight: 4,
        }
    }
}

/// Greedy left-to-right packing of consecutive thoughts into batches whose
/// combined word count stays within `limit`. An oversized thought is a batch
/// of its own.
pub fn batch_thoughts(thoughts: &[Thought], limit: usize) -> Vec<Range<usize>> {
    batch_by_words(thoughts.iter().map(|t| t.word_count), limit)
}

fn batch_by_words(words: impl IntoIterator<Item = usize>, limit: usize) -> Vec<Range<usize>> {
    let mut batches = Vec::new();
    let mut start = 0;
    let mut total = 0;
    let mut len = 0;
    for (i, w) in words.into_iter().enumerate() {
        if i > start && total + w > limit {
            batches.push(start..i);
            start = i;
            total = 0;
        }
        total += w;
        len = i + 1;
    }
    if len > start {
        batches.push(start..len);
    }
    batches
}

pub fn render_sketch_prompt(transcript: &str) -> String {
    SKETCH_TEMPLATE.replace("{{text}}", transcript)
}

pub fn render_assign_prompt(sketch: &ReasoningSketch, batch: &[Thought]) -> String {
    let list_a = sketch
        .steps
        .iter()
        .map(|s| format!("A{}. {}", s.step, s.text))
        .collect::<Vec<_>>()
        .join("\n");
    let list_b = batch
        .iter()
        .map(|t| format!("B{}. {}", t.index, t.text.trim()))
        .collect::<Vec<_>>()
        .join("\n");
    ASSIGN_TEMPLATE
        .replace("{{reasoning_step}}", &list_a)
        .replace("{{thoughts}}", &list_b)
}

pub fn render_function_prompt(prev: &str, curr: &str) -> String {
    FUNCTION_TEMPLATE
        .replace("{TEXT1}", &json_escape(prev.trim()))
        .replace("{TEXT2}", &json_escape(curr.trim()))
}

fn json_escape(s: &str) -> String {
    let quoted = serde_json::to_string(s).expect("strings serialize");
    quoted[1..quoted.len() - 1].to_string()
}

fn parse_sketch(raw: &str) -> Result<ReasoningSketch> {
    const OPEN: &str = "<reasoning_process>";
    const CLOSE: &str = "</reasoning_process>";
    let start = raw
        .find(OPEN)
        .ok_or_else(|| Error::parse("missing <reasoning_process> block", raw))?
        + OPEN.len();
    let body = &raw[start..];
    let body = &body[..body.find(CLOSE).unwrap_or(body.len())];

    let mut steps: Vec<SketchStep> = Vec::new();
    for line in body.lines().map(str::trim).filter(|l| !l.is_empty()) {
        match parse_step_line(line) {
            Some((n, text)) => {
                let expected = steps.len() + 1;
                if n != expected {
                    return Err(Error::parse(
                        format!("step numbering is not consecutive: expected Step {expected}, found Step {n}"),
                        raw,
                    ));
                }
                steps.push(SketchStep {
                    step: n,
                    text: text.to_string(),
                });
            }
            // Wrapped continuation of the previous step.
            None => match steps.last_mut() {
                Some(last) => {
                    if !last.text.is_empty() {
                        last.text.push(' ');
                    }
                    last.text.push_str(line);
                }
                None => return Err(Error::parse(format!("unexpected line before Step 1: {line:?}"), raw)),
            },
        }
    }
    if steps.is_empty() {
        return Err(Error::parse("sketch has no steps", raw));
    }
    if let Some(s) = steps.iter().find(|s| s.text.is_empty()) {
        return Err(Error::parse(format!("Step {} has no text", s.step), raw));
    }
    Ok(ReasoningSketch { steps })
}

fn parse_step_line(line: &str) -> Option<(usize, &str)> {
    let rest = line.strip_prefix("Step")?.trim_start();
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let n = rest[..digits].parse().ok()?;
    let rest = rest[digits..].strip_prefix('.').or_else(|| rest[digits..].strip_prefix(':'))?;
    Some((n, rest.trim()))
}

/// Slice from the first `{` to the last `}`, which drops code fences and chatter.
fn json_object_slice(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    (end > start).then(|| &raw[start..=end])
}

fn parse_labelled_index(s: &str, prefix: char) -> Option<usize> {
    let s = s.trim();
    let s = s.strip_prefix(prefix).unwrap_or(s);
    s.parse().ok()
}

/// Parses a `{"B<i>": ["A<k>", ...]}` mapping for the thoughts of one batch.
///
/// Returns one normalized assignment per batch thought plus warnings about
/// dropped or missing entries.
pub fn parse_assignments(
    raw: &str,
    sketch_len: usize,
    batch: &[Thought],
) -> Result<(Vec<StepAssignment>, Vec<String>)> {
    let slice = json_object_slice(raw).ok_or_else(|| Error::parse("no JSON object in response", raw))?;
    let value: serde_json::Value =
        serde_json::from_str(slice).map_err(|e| Error::parse(format!("malformed JSON: {e}"), raw))?;
    let map = value
        .as_object()
        .ok_or_else(|| Error::parse("response is not a JSON object", raw))?;

    let mut warnings = Vec::new();
    let mut parsed: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (key, val) in map {
        let thought = parse_labelled_index(key, 'B')
            .ok_or_else(|| Error::parse(format!("bad thought key {key:?}"), raw))?;
        let items = val
            .as_array()
            .ok_or_else(|| Error::parse(format!("value for {key} is not an array"), raw))?;
        let mut steps = Vec::with_capacity(items.len());
        for item in items {
            let step = match item {
                serde_json::Value::String(s) => parse_labelled_index(s, 'A'),
                serde_json::Value::Number(n) => n.as_u64().map(|n| n as usize),
                _ => None,
            }
            .ok_or_else(|| Error::parse(format!("bad step reference {item} for {key}"), raw))?;
            if (1..=sketch_len).contains(&step) {
                steps.push(step);
            } else {
                warnings.push(format!("B{thought}: dropped out-of-range step A{step} (sketch has {sketch_len} steps)"));
            }
        }
        parsed.entry(thought).or_default().extend(steps);
    }

    let in_batch: Vec<usize> = batch.iter().map(|t| t.index).collect();
    for extra in parsed.keys().filter(|k| !in_batch.contains(k)) {
        warnings.push(format!("B{extra}: not part of this batch, ignored"));
    }
    let assignments = in_batch
        .iter()
        .map(|&i| {
            let mut steps = parsed.get(&i).cloned().unwrap_or_default();
            steps.sort_unstable();
            steps.dedup();
            if steps.is_empty() && i > 0 {
                warnings.push(format!("B{i}: no step assigned"));
            }
            StepAssignment { thought_index: i, steps }
        })
        .collect();
    Ok((assignments, warnings))
}

pub fn parse_function(raw: &str) -> Result<ThoughtFunction> {
    let slice = json_object_slice(raw).ok_or_else(|| Error::parse("no JSON object in response", raw))?;
    let value: serde_json::Value =
        serde_json::from_str(slice).map_err(|e| Error::parse(format!("malformed JSON: {e}"), raw))?;
    let label = value
        .as_object()
        .and_then(|m| m.iter().find(|(k, _)| k.eq_ignore_ascii_case("category")))
        .and_then(|(_, v)| v.as_str())
        .ok_or_else(|| Error::parse("missing \"Category\" field", raw))?;
    ThoughtFunction::from_category(label)
        .ok_or_else(|| Error::parse(format!("unknown category {label:?}"), raw))
}

/// Drives the annotation calls against an [`LlmClient`].
pub struct Annotator<C> {
    client: C,
    config: AnnotatorConfig,
    pool: Arc<rayon::ThreadPool>,
}

impl<C: LlmClient> Annotator<C> {
    pub fn new(client: C, config: AnnotatorConfig) -> Result<Self> {
        if config.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be positive".into()));
        }
        if config.word_budget == 0 {
            return Err(Error::Config("word_budget must be positive".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.max_in_flight)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            client,
            config,
            pool: Arc::new(pool),
        })
    }

    pub fn client(&self) -> &C {
        &self.client
    }

    pub fn config(&self) -> &AnnotatorConfig {
        &self.config
    }

    fn request(&self, prompt: String) -> LlmRequest {
        LlmRequest {
            prompt,
            model_name: self.config.model_name.clone(),
            temperature: self.config.temperature,
        }
    }

    /// Sends `prompt`; on a parse failure retries once with the error appended.
    fn call_parsed<T>(&self, prompt: String, parse: impl Fn(&str) -> Result<T>) -> Result<T> {
        let first = self.client.complete(&self.request(prompt.clone()))?;
        match parse(&first.raw_text) {
            Err(Error::AnnotationParse { message, .. }) => {
                log::warn!("annotator response rejected ({message}), retrying once");
                let retry = format!(
                    "{prompt}\n\nYour previous answer could not be parsed: {message}\nAnswer again, following the output format exactly."
                );
                let second = self.client.complete(&self.request(retry))?;
                parse(&second.raw_text)
            }
            other => other,
        }
    }

    pub fn extract_sketch(&self, transcript: &str) -> Result<ReasoningSketch> {
        if transcript.is_empty() {
            return Err(Error::EmptyInput("transcript"));
        }
        self.call_parsed(render_sketch_prompt(transcript), parse_sketch)
    }

    pub fn assign_steps(
        &self,
        sketch: &ReasoningSketch,
        batch: &[Thought],
    ) -> Result<(Vec<StepAssignment>, Vec<String>)> {
        if sketch.is_empty() {
            return Err(Error::EmptyInput("sketch"));
        }
        if batch.is_empty() {
            return Err(Error::EmptyInput("thought batch"));
        }
        self.call_parsed(render_assign_prompt(sketch, batch), |raw| {
            parse_assignments(raw, sketch.len(), batch)
        })
    }

    pub fn identify_function(&self, prev: &Thought, curr: &Thought) -> Result<ThoughtFunction> {
        if prev.text.trim().is_empty() || curr.text.trim().is_empty() {
            return Err(Error::EmptyInput("thought text"));
        }
        self.call_parsed(render_function_prompt(&prev.text, &curr.text), parse_function)
    }

    /// Segments `transcript` and annotates the resulting thoughts.
    pub fn annotate(&self, transcript: &str, segmenter: &Segmenter) -> Result<AnnotatedChain> {
        let thoughts = segmenter.split(transcript)?;
        self.annotate_thoughts(&thoughts)
    }

    /// Annotates an already segmented transcript. Results are assembled in
    /// thought order regardless of how calls interleave.
    pub fn annotate_thoughts(&self, thoughts: &[Thought]) -> Result<AnnotatedChain> {
        if thoughts.is_empty() {
            return Err(Error::EmptyInput("thoughts"));
        }
        let transcript: String = thoughts.iter().map(|t| t.text.as_str()).collect();
        let sketch = self.extract_sketch(&transcript).map_err(|e| e.context("sketch extraction"))?;

        let batches = batch_thoughts(thoughts, self.config.word_budget);
        let (batch_results, function_results) = self.pool.install(|| {
            let b: Vec<Result<(Vec<StepAssignment>, Vec<String>)>> = batches
                .par_iter()
                .map(|r| {
                    self.assign_steps(&sketch, &thoughts[r.clone()]).map_err(|e| {
                        e.context(format!("step assignment for thoughts {}..{}", r.start, r.end))
                    })
                })
                .collect();
            let f: Vec<Result<ThoughtFunction>> = thoughts
                .par_windows(2)
                .map(|pair| {
                    self.identify_function(&pair[0], &pair[1])
                        .map_err(|e| e.context(format!("function of thought {}", pair[1].index)))
                })
                .collect();
            (b, f)
        });

        let mut warnings = Vec::new();
        let mut steps_by_thought = vec![Vec::new(); thoughts.len()];
        for result in batch_results {
            let (assignments, w) = result?;
            warnings.extend(w);
            for a in assignments {
                steps_by_thought[a.thought_index] = a.steps;
            }
        }
        let mut functions = vec![None];
        for result in function_results {
            functions.push(Some(result?));
        }

        let annotated = thoughts
            .iter()
            .zip(steps_by_thought)
            .zip(functions)
            .map(|((t, steps), function)| AnnotatedThought {
                index: t.index,
                text: t.text.clone(),
                word_count: t.word_count,
                token_count: t.token_count,
                steps,
                function,
            })
            .collect();
        Ok(AnnotatedChain {
            sketch,
            thoughts: annotated,
            warnings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::{split_thoughts, SeparatorProfile};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    fn thought(index: usize, words: usize) -> Thought {
        let text = vec!["w"; words].join(" ");
        Thought {
            index,
            text,
            word_count: words,
            token_count: words,
        }
    }

    #[test]
    fn batching_examples() {
        let t: Vec<_> = [400, 300, 200].iter().enumerate().map(|(i, &w)| thought(i, w)).collect();
        assert_eq!(batch_thoughts(&t, 600), vec![0..1, 1..3]);
        assert_eq!(batch_thoughts(&[thought(0, 700)], 600), vec![0..1]);
        let t: Vec<_> = (0..3).map(|i| thought(i, 100)).collect();
        assert_eq!(batch_thoughts(&t, 600), vec![0..3]);
        let t: Vec<_> = [100, 700, 100].iter().enumerate().map(|(i, &w)| thought(i, w)).collect();
        assert_eq!(batch_thoughts(&t, 600), vec![0..1, 1..2, 2..3]);
    }

    #[test]
    fn sketch_parsing() {
        let raw = "<reasoning_process>\nStep 1. Set up equation: x+1=2\nStep 2. Solve: x=1\n</reasoning_process>";
        let s = parse_sketch(raw).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.steps[0].text, "Set up equation: x+1=2");
        assert_eq!(s.steps[1].step, 2);

        let bad = "<reasoning_process>\nStep 1. a\nStep 3. b\n</reasoning_process>";
        match parse_sketch(bad) {
            Err(Error::AnnotationParse { raw, .. }) => assert_eq!(raw, bad),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(parse_sketch("Step 1. no tags").is_err());
        assert!(parse_sketch("<reasoning_process></reasoning_process>").is_err());
        assert!(parse_sketch("<reasoning_process>\nStep 1.\n</reasoning_process>").is_err());

        let wrapped = "noise <reasoning_process>\nStep 1. first\n  continued here\nStep 2. second";
        let s = parse_sketch(wrapped).unwrap();
        assert_eq!(s.steps[0].text, "first continued here");
    }

    #[test]
    fn assignment_parsing() {
        let batch: Vec<_> = (0..3).map(|i| thought(i, 5)).collect();
        let (a, w) = parse_assignments(r#"{"B0": ["A1"], "B2": ["A1", "A4"]}"#, 4, &batch).unwrap();
        assert_eq!(a[0].steps, [1]);
        assert_eq!(a[1].steps, Vec::<usize>::new());
        assert_eq!(a[2].steps, [1, 4]);
        assert_eq!(w.len(), 1, "{w:?}");

        let (a, w) = parse_assignments(r#"{"B1": ["A9"]}"#, 3, &batch[1..2]).unwrap();
        assert_eq!(a, [StepAssignment { thought_index: 1, steps: vec![] }]);
        assert!(w.iter().any(|w| w.contains("A9")));

        let (a, _) = parse_assignments(r#"```json{"B0": ["A2","A2","A1"]}```"#, 3, &batch[..1]).unwrap();
        assert_eq!(a[0].steps, [1, 2]);

        assert!(parse_assignments("{\"B0\": [\"A1\"", 3, &batch).is_err());
        assert!(parse_assignments(r#"{"X0": ["A1"]}"#, 3, &batch).is_err());
        assert!(parse_assignments(r#"{"B0": "A1"}"#, 3, &batch).is_err());
    }

    #[test]
    fn function_parsing() {
        assert_eq!(parse_function(r#"{"Category": "Exploration"}"#).unwrap(), ThoughtFunction::Exploration);
        assert_eq!(parse_function(r#"{"Category": "validation"}"#).unwrap(), ThoughtFunction::Verification);
        assert_eq!(
            parse_function("```json{\"Category\": \"Continuous Logic\"}```").unwrap(),
            ThoughtFunction::Continuation
        );
        assert!(matches!(
            parse_function(r#"{"Category": "Guessing"}"#),
            Err(Error::AnnotationParse { .. })
        ));
        assert!(parse_function("no json").is_err());
    }

    #[test]
    fn function_codes() {
        for f in ThoughtFunction::ALL {
            assert_eq!(ThoughtFunction::from_code(f.code()), Some(f));
        }
        assert_eq!(ThoughtFunction::Verification.code(), 4);
        assert_eq!(ThoughtFunction::from_code(0), None);
    }

    #[test]
    fn prompts_are_filled() {
        let p = render_sketch_prompt("THE TEXT");
        assert!(p.contains("<reasoning_text>\nTHE TEXT\n</reasoning_text>"));
        let sketch = parse_sketch("<reasoning_process>\nStep 1. a\nStep 2. b\n</reasoning_process>").unwrap();
        let p = render_assign_prompt(&sketch, &[thought(3, 2)]);
        assert!(p.contains("A1. a\nA2. b"));
        assert!(p.contains("B3. w w"));
        let p = render_function_prompt("say \"hi\"", "next");
        assert!(p.contains(r#""Text1": "say \"hi\"""#));
        assert!(p.contains(r#""Text2": "next""#));
    }

    /// Scripted client keyed on prompt type; counts calls per kind.
    struct Scripted {
        sketch: String,
        assign: String,
        function: String,
        calls: Mutex<Vec<&'static str>>,
        bad_first: AtomicUsize,
    }

    impl Scripted {
        fn new(assign: &str) -> Self {
            Self {
                sketch: "<reasoning_process>\nStep 1. a\nStep 2. b\nStep 3. c\n</reasoning_process>".into(),
                assign: assign.into(),
                function: r#"{"Category": "Exploration"}"#.into(),
                calls: Mutex::new(Vec::new()),
                bad_first: AtomicUsize::new(0),
            }
        }

        fn count(&self, kind: &str) -> usize {
            self.calls.lock().unwrap().iter().filter(|k| **k == kind).count()
        }
    }

    impl LlmClient for Scripted {
        fn complete(&self, request: &LlmRequest) -> Result<LlmResponse> {
            let kind = if request.prompt.starts_with("Analyze") {
                "sketch"
            } else if request.prompt.starts_with("Your task is to match") {
                "assign"
            } else {
                "function"
            };
            self.calls.lock().unwrap().push(kind);
            if kind == "function"
                && self
                    .bad_first
                    .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |v| v.checked_sub(1))
                    .is_ok()
            {
                return Ok(LlmResponse { raw_text: "garbage".into() });
            }
            let raw_text = match kind {
                "sketch" => self.sketch.clone(),
                "assign" => self.assign.clone(),
                _ => self.function.clone(),
            };
            Ok(LlmResponse { raw_text })
        }
    }

    #[test]
    fn annotate_call_count_law() {
        let client = Scripted::new(r#"{"B0": [], "B1": ["A1"], "B2": ["A2"], "B3": ["A3"]}"#);
        let ann = Annotator::new(&client, AnnotatorConfig { word_budget: 4, ..Default::default() }).unwrap();
        let seg = Segmenter::new(SeparatorProfile::deepseek_family());
        let transcript = "Start here. Wait, one two. Hmm three four. Alternatively five.";
        let thoughts = seg.split(transcript).unwrap();
        assert_eq!(thoughts.len(), 4);
        let chain = ann.annotate(transcript, &seg).unwrap();
        let n_batches = batch_thoughts(&thoughts, 4).len();
        assert_eq!(client.count("sketch"), 1);
        assert_eq!(client.count("assign"), n_batches);
        assert_eq!(client.count("function"), 3);
        assert_eq!(chain.thoughts[0].function, None);
        assert!(chain.thoughts[1..].iter().all(|t| t.function == Some(ThoughtFunction::Exploration)));
        assert_eq!(chain.thoughts[3].steps, [3]);
        assert_eq!(chain.thoughts.iter().map(|t| t.text.as_str()).collect::<String>(), transcript);
    }

    #[test]
    fn single_thought_makes_no_function_calls() {
        let client = Scripted::new(r#"{"B0": ["A1"]}"#);
        let ann = Annotator::new(&client, AnnotatorConfig::default()).unwrap();
        let thoughts = split_thoughts("Just one thought.", &SeparatorProfile::deepseek_family()).unwrap();
        let chain = ann.annotate_thoughts(&thoughts).unwrap();
        assert_eq!(chain.thoughts.len(), 1);
        assert_eq!(client.count("function"), 0);
        assert_eq!(client.count("assign"), 1);
    }

    #[test]
    fn parse_failure_retries_once() {
        let client = Scripted::new(r#"{"B0": ["A1"], "B1": ["A2"]}"#);
        client.bad_first.store(1, Ordering::SeqCst);
        let ann = Annotator::new(&client, AnnotatorConfig { max_in_flight: 1, ..Default::default() }).unwrap();
        let thoughts = split_thoughts("a Wait b", &SeparatorProfile::deepseek_family()).unwrap();
        let chain = ann.annotate_thoughts(&thoughts).unwrap();
        assert_eq!(chain.thoughts[1].function, Some(ThoughtFunction::Exploration));
        assert_eq!(client.count("function"), 2);

        client.bad_first.store(2, Ordering::SeqCst);
        let err = ann.annotate_thoughts(&thoughts).unwrap_err();
        assert_eq!(err.kind(), "AnnotationParseError");
        assert!(err.to_string().contains("function of thought 1"));
    }

    #[test]
    fn replay_cache_serves_second_call() {
        let dir = tempfile::tempdir().unwrap();
        let rec = CachingClient::new(
            Some(ResponseCache::open(dir.path()).unwrap()),
            CacheMode::Record,
            Some(Box::new(Scripted::new(r#"{"B0": ["A1"]}"#))),
        )
        .unwrap();
        let ann = Annotator::new(&rec, AnnotatorConfig::default()).unwrap();
        let s1 = ann.extract_sketch("some text").unwrap();
        let s2 = ann.extract_sketch("some text").unwrap();
        assert_eq!(s1, s2);
        assert_eq!(rec.forwarded_calls(), 1);

        let offline = CachingClient::replay(ResponseCache::open(dir.path()).unwrap());
        let ann = Annotator::new(&offline, AnnotatorConfig::default()).unwrap();
        assert_eq!(ann.extract_sketch("some text").unwrap(), s1);
        let err = ann.extract_sketch("other text").unwrap_err();
        assert_eq!(err.kind(), "CacheMiss");
    }
}
