//! The composition operator and its depth-K recursion.
//!
//! Composing two prompts takes three steps: name the first prompt's answer as a
//! fresh variable, replace a numeric literal in the second prompt with another
//! fresh variable, and state the exact difference between the two as a sentence.
//! The composed prompt inherits the second prompt's ground truth. Depth-K
//! composition folds the operator from the right, so the final text reads as a
//! chain of problems each feeding a value into the next.

pub mod backend;
pub mod llm;
pub mod template;

pub use backend::{BackendError, ComposeBackend, Extraction, Replacement, ScriptedBackend, VerifyBackend};
pub use llm::LlmBackend;
pub use template::TemplateBackend;

use crate::answer::{equivalent, parse_answer, subtract, AnswerValue, EquivalencePolicy};
use crate::corpus::{composed_id, ComposedPrompt, CompositionStep, Prompt, Status};
use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Decoding settings for the LLM backend plus the template backend's seed.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub model: String,
    pub temperature: f64,
    pub nucleus: f64,
    pub max_output_tokens: u32,
    /// Seed for the template problem family, when generating synthetic corpora.
    pub template_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Llm,
    Template,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Template,
            model: String::new(),
            temperature: 0.1,
            nucleus: 0.7,
            max_output_tokens: 4096,
            template_seed: 0,
        }
    }
}

impl BackendConfig {
    /// The decoding profile the LLM backend should speak with.
    pub fn decoding_profile(&self) -> crate::gateway::DecodingProfile {
        crate::gateway::DecodingProfile {
            name: "composer".into(),
            temperature: self.temperature,
            top_p: self.nucleus,
            top_k: -1,
            max_tokens: self.max_output_tokens,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ComposeError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// A step of the operator failed after retries; the stage tag is 1, 2, or 3.
    #[error("composition rejected at stage {stage}: {reason}")]
    Rejected { stage: u8, reason: String },
    /// The backend ran out of budget or connectivity. This is not an item
    /// defect; a dataset build should checkpoint and stop.
    #[error("backend exhausted at stage {stage}: {reason}")]
    BackendExhausted { stage: u8, reason: String },
}

impl ComposeError {
    pub fn stage(&self) -> Option<u8> {
        match self {
            ComposeError::Rejected { stage, .. }
            | ComposeError::BackendExhausted { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

fn is_exhaustion(err: &BackendError) -> bool {
    matches!(
        err,
        BackendError::Gateway(
            crate::gateway::GatewayError::BudgetExhausted
                | crate::gateway::GatewayError::RetriesExhausted { .. }
        )
    )
}

/// Hands out composition variable names (X, Y, Z, W, X1, X2, ...) that do not
/// collide with tokens of the seed texts or with each other.
#[derive(Debug)]
pub struct VariableAllocator {
    taken: HashSet<String>,
    next_index: usize,
}

impl VariableAllocator {
    pub fn new<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut taken = HashSet::new();
        for text in texts {
            for token in tokens_of(text) {
                taken.insert(token);
            }
        }
        VariableAllocator {
            taken,
            next_index: 0,
        }
    }

    /// Marks extra names (e.g. variables of an existing composition) as used.
    pub fn reserve_existing<'a>(&mut self, names: impl IntoIterator<Item = &'a str>) {
        for name in names {
            self.taken.insert(name.to_string());
        }
    }

    pub fn next_name(&mut self) -> String {
        loop {
            let candidate = pool_name(self.next_index);
            self.next_index += 1;
            if self.taken.insert(candidate.clone()) {
                return candidate;
            }
        }
    }
}

fn pool_name(index: usize) -> String {
    const HEAD: [&str; 4] = ["X", "Y", "Z", "W"];
    if index < HEAD.len() {
        HEAD[index].to_string()
    } else {
        format!("X{}", index - HEAD.len() + 1)
    }
}

/// Maximal alphanumeric runs of a text; used for variable-collision checks.
fn tokens_of(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            current.push(c);
        } else if !current.is_empty() {
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// True if `name` occurs as a standalone token in `text`.
pub fn token_occurs(text: &str, name: &str) -> bool {
    tokens_of(text).iter().any(|t| t == name)
}

/// Joins two sentences with a single space, inserting a period when the first
/// piece does not already end a sentence.
pub fn join_sentences(a: &str, b: &str) -> String {
    let trimmed = a.trim_end();
    if trimmed.is_empty() {
        return b.to_string();
    }
    if trimmed.ends_with(['.', '!', '?']) {
        format!("{trimmed} {b}")
    } else {
        format!("{trimmed}. {b}")
    }
}

/// Renders the relation sentence for an exact delta `v1 - v2`.
///
/// Positive delta reads "Y is d less than X", negative "Y is d greater than X",
/// zero "Y is equal to X".
pub fn render_relation(delta: &AnswerValue, var_x: &str, var_y: &str) -> String {
    match delta.sign().unwrap_or(0) {
        0 => format!("{var_y} is equal to {var_x}."),
        1 => format!("{var_y} is {} less than {var_x}.", delta.render()),
        _ => {
            let magnitude = delta.negated().expect("scalar delta");
            format!("{var_y} is {} greater than {var_x}.", magnitude.render())
        }
    }
}

/// Either side that a prompt can be composed onto: a seed or a previous
/// composition.
#[derive(Debug, Clone, Copy)]
pub enum ComposeTarget<'a> {
    Seed(&'a Prompt),
    Composed(&'a ComposedPrompt),
}

impl<'a> ComposeTarget<'a> {
    pub fn text(&self) -> &str {
        match self {
            ComposeTarget::Seed(p) => &p.text,
            ComposeTarget::Composed(c) => &c.text,
        }
    }

    pub fn ground_truth(&self) -> &str {
        match self {
            ComposeTarget::Seed(p) => &p.ground_truth,
            ComposeTarget::Composed(c) => &c.ground_truth,
        }
    }

    pub fn seed_ids(&self) -> Vec<String> {
        match self {
            ComposeTarget::Seed(p) => vec![p.id.clone()],
            ComposeTarget::Composed(c) => c.seed_ids.clone(),
        }
    }

    pub fn steps(&self) -> Vec<CompositionStep> {
        match self {
            ComposeTarget::Seed(_) => Vec::new(),
            ComposeTarget::Composed(c) => c.steps.clone(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            ComposeTarget::Seed(_) => 1,
            ComposeTarget::Composed(c) => c.depth,
        }
    }

    fn variable_names(&self) -> Vec<String> {
        match self {
            ComposeTarget::Seed(_) => Vec::new(),
            ComposeTarget::Composed(c) => c
                .steps
                .iter()
                .flat_map(|s| [s.variable_x.clone(), s.variable_y.clone()])
                .collect(),
        }
    }
}

/// Result of composition step one, including the extended upstream text.
#[derive(Debug, Clone)]
pub struct ModifiedQ1 {
    pub value: AnswerValue,
    pub definition: String,
    pub q1_bar: String,
}

/// Drives the composition operator over a backend, with per-step retries and a
/// per-(prompt, variable) extraction cache.
pub struct Composer<'a, B: ComposeBackend> {
    backend: &'a B,
    retries: usize,
    extraction_cache: Mutex<std::collections::HashMap<(String, String), Extraction>>,
    cache_hits: AtomicUsize,
}

impl<'a, B: ComposeBackend> Composer<'a, B> {
    pub fn new(backend: &'a B) -> Self {
        Composer {
            backend,
            retries: 3,
            extraction_cache: Mutex::new(std::collections::HashMap::new()),
            cache_hits: AtomicUsize::new(0),
        }
    }

    pub fn with_retries(mut self, retries: usize) -> Self {
        self.retries = retries.max(1);
        self
    }

    /// Extraction cache hits so far; recorded in dataset manifests.
    pub fn cache_hits(&self) -> usize {
        self.cache_hits.load(Ordering::Relaxed)
    }

    fn attempt<T>(
        &self,
        stage: u8,
        mut call: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, ComposeError> {
        let mut last: Option<BackendError> = None;
        for _ in 0..self.retries {
            match call() {
                Ok(v) => return Ok(v),
                Err(err) => {
                    let fatal = is_exhaustion(&err);
                    last = Some(err);
                    if fatal {
                        break;
                    }
                }
            }
        }
        let err = last.expect("at least one attempt ran");
        let reason = err.to_string();
        if is_exhaustion(&err) {
            Err(ComposeError::BackendExhausted { stage, reason })
        } else {
            Err(ComposeError::Rejected { stage, reason })
        }
    }

    /// Step one: extract a value from `q1`'s ground truth, name it `var_x`, and
    /// append the naming sentence to the question.
    pub fn modify_q1(&self, q1: &Prompt, var_x: &str) -> Result<ModifiedQ1, ComposeError> {
        let key = (q1.id.clone(), var_x.to_string());
        if let Some(hit) = self.extraction_cache.lock().unwrap().get(&key).cloned() {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            let q1_bar = join_sentences(&q1.text, &hit.definition);
            return Ok(ModifiedQ1 {
                value: hit.value,
                definition: hit.definition,
                q1_bar,
            });
        }
        let extraction = self.attempt(1, || {
            let ext = self.backend.extract_value(q1, var_x)?;
            if !ext.value.is_scalar() {
                return Err(BackendError::Extraction(format!(
                    "extracted value is not scalar: {:?}",
                    ext.value
                )));
            }
            if !ext.definition.contains(var_x) {
                return Err(BackendError::Extraction(
                    "definition does not mention the variable".into(),
                ));
            }
            Ok(ext)
        })?;
        self.extraction_cache
            .lock()
            .unwrap()
            .insert(key, extraction.clone());
        let q1_bar = join_sentences(&q1.text, &extraction.definition);
        Ok(ModifiedQ1 {
            value: extraction.value,
            definition: extraction.definition,
            q1_bar,
        })
    }

    /// Step two: replace one numeric literal of the downstream text with
    /// `var_y`. The replacement is validated structurally: the span must hold a
    /// literal equal to the claimed value and the modified text must be exactly
    /// the original with that span swapped for the variable.
    pub fn modify_q2(&self, q2_text: &str, var_y: &str) -> Result<Replacement, ComposeError> {
        self.attempt(2, || {
            let rep = self.backend.replace_literal(q2_text, var_y)?;
            let literal = rep
                .locus
                .slice_of(q2_text)
                .ok_or_else(|| BackendError::MalformedReply("locus out of range".into()))?;
            let parsed = parse_answer(&literal)
                .map_err(|e| BackendError::MalformedReply(e.to_string()))?;
            if !equivalent(&parsed, &rep.value, EquivalencePolicy::Exact) {
                return Err(BackendError::MalformedReply(format!(
                    "span {literal:?} does not match claimed value {}",
                    rep.value.render()
                )));
            }
            let expected = rep
                .locus
                .replace_in(q2_text, var_y)
                .ok_or_else(|| BackendError::MalformedReply("locus out of range".into()))?;
            if expected != rep.modified {
                return Err(BackendError::MalformedReply(
                    "modified text is not the original with the span replaced".into(),
                ));
            }
            Ok(rep)
        })
    }

    /// Step three: compute the exact delta and phrase the connecting sentence,
    /// then assemble the composed text.
    pub fn connect(
        &self,
        v1: &AnswerValue,
        q1_bar: &str,
        v2: &AnswerValue,
        var_x: &str,
        var_y: &str,
        q2_bar: &str,
    ) -> Result<(AnswerValue, String, String), ComposeError> {
        let delta = subtract(v1, v2).map_err(|e| ComposeError::Rejected {
            stage: 3,
            reason: e.to_string(),
        })?;
        let relation = render_relation(&delta, var_x, var_y);
        let composed = join_sentences(&join_sentences(q1_bar, &relation), q2_bar);
        Ok((delta, relation, composed))
    }

    /// Composes `q1` onto `rhs`, allocating fresh variable names.
    pub fn compose2(&self, q1: &Prompt, rhs: ComposeTarget<'_>) -> Result<ComposedPrompt, ComposeError> {
        let mut allocator = VariableAllocator::new([q1.text.as_str(), rhs.text()]);
        allocator.reserve_existing(rhs.variable_names().iter().map(String::as_str));
        let var_x = allocator.next_name();
        let var_y = allocator.next_name();
        self.compose2_named(q1, rhs, &var_x, &var_y)
    }

    fn compose2_named(
        &self,
        q1: &Prompt,
        rhs: ComposeTarget<'_>,
        var_x: &str,
        var_y: &str,
    ) -> Result<ComposedPrompt, ComposeError> {
        let rhs_ids = rhs.seed_ids();
        if rhs_ids.contains(&q1.id) {
            return Err(ComposeError::Precondition(format!(
                "seed {} already occurs downstream",
                q1.id
            )));
        }
        let modified_q1 = self.modify_q1(q1, var_x)?;
        let replacement = self.modify_q2(rhs.text(), var_y)?;
        let (delta, relation, text) = self.connect(
            &modified_q1.value,
            &modified_q1.q1_bar,
            &replacement.value,
            var_x,
            var_y,
            &replacement.modified,
        )?;

        let step = CompositionStep {
            v1: modified_q1.value,
            definition_d1: modified_q1.definition,
            variable_x: var_x.to_string(),
            v2: replacement.value,
            v2_locus: replacement.locus,
            variable_y: var_y.to_string(),
            delta,
            relation_text: relation,
        };
        let mut seed_ids = vec![q1.id.clone()];
        seed_ids.extend(rhs_ids);
        let mut steps = vec![step];
        steps.extend(rhs.steps());
        let id = composed_id(&seed_ids, &text);
        Ok(ComposedPrompt {
            id,
            text,
            ground_truth: rhs.ground_truth().to_string(),
            depth: rhs.depth() + 1,
            seed_ids,
            steps,
            status: Status::Unverified,
        })
    }

    /// Depth-K composition: right fold of [`Self::compose2`] over the seeds.
    /// Variable names are assigned in reading order, so the first step always
    /// uses the first free pool names.
    pub fn spc(&self, seeds: &[Prompt]) -> Result<ComposedPrompt, ComposeError> {
        if seeds.len() < 2 {
            return Err(ComposeError::Precondition(format!(
                "need at least 2 seeds, got {}",
                seeds.len()
            )));
        }
        let distinct: HashSet<&String> = seeds.iter().map(|p| &p.id).collect();
        if distinct.len() != seeds.len() {
            return Err(ComposeError::Precondition(
                "seed ids must be pairwise distinct".into(),
            ));
        }
        let mut allocator = VariableAllocator::new(seeds.iter().map(|p| p.text.as_str()));
        let pairs: Vec<(String, String)> = (0..seeds.len() - 1)
            .map(|_| (allocator.next_name(), allocator.next_name()))
            .collect();

        let last = seeds.len() - 1;
        let mut acc: Option<ComposedPrompt> = None;
        for k in (0..last).rev() {
            let target = match &acc {
                None => ComposeTarget::Seed(&seeds[last]),
                Some(c) => ComposeTarget::Composed(c),
            };
            let (var_x, var_y) = &pairs[k];
            let next = self
                .compose2_named(&seeds[k], target, var_x, var_y)
                .map_err(|e| match e {
                    ComposeError::Rejected { stage, reason } => ComposeError::Rejected {
                        stage,
                        reason: format!(
                            "{reason} (while composing {} onto {})",
                            seeds[k].id,
                            seeds[k + 1].id
                        ),
                    },
                    other => other,
                })?;
            acc = Some(next);
        }
        Ok(acc.expect("at least one composition step"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Span;

    fn prompt(id: &str, text: &str, gt: &str) -> Prompt {
        Prompt {
            id: id.to_string(),
            text: text.to_string(),
            ground_truth: gt.to_string(),
            domain: "math".to_string(),
            source: "test".to_string(),
        }
    }

    fn template_pair() -> (Prompt, Prompt) {
        (
            prompt("a", "Solve for n: 2n + 3 = 9.", "3"),
            prompt("b", "Solve for p: 5p - 4 = 6.", "2"),
        )
    }

    #[test]
    fn allocator_skips_names_used_in_texts() {
        let mut alloc = VariableAllocator::new(["X marks the spot", "none"]);
        assert_eq!(alloc.next_name(), "Y");
        assert_eq!(alloc.next_name(), "Z");
    }

    #[test]
    fn allocator_extends_past_the_head_pool() {
        let mut alloc = VariableAllocator::new([]);
        let names: Vec<String> = (0..6).map(|_| alloc.next_name()).collect();
        assert_eq!(names, vec!["X", "Y", "Z", "W", "X1", "X2"]);
    }

    #[test]
    fn relation_templates_cover_all_signs() {
        assert_eq!(
            render_relation(&AnswerValue::int(6), "X", "Y"),
            "Y is 6 less than X."
        );
        assert_eq!(
            render_relation(&AnswerValue::int(-3), "X", "Y"),
            "Y is 3 greater than X."
        );
        assert_eq!(
            render_relation(&AnswerValue::int(0), "X", "Y"),
            "Y is equal to X."
        );
    }

    #[test]
    fn compose2_on_template_pair_is_solvable() {
        let (q1, q2) = template_pair();
        let backend = TemplateBackend::new();
        let composer = Composer::new(&backend);
        let composed = composer.compose2(&q1, ComposeTarget::Seed(&q2)).unwrap();

        assert_eq!(composed.depth, 2);
        assert_eq!(composed.ground_truth, "2");
        assert_eq!(composed.seed_ids, vec!["a".to_string(), "b".to_string()]);
        assert_eq!(composed.steps.len(), 1);
        let step = &composed.steps[0];
        assert_eq!(step.v1, AnswerValue::int(3));
        assert_eq!(step.v2, AnswerValue::int(6));
        assert_eq!(step.delta, AnswerValue::int(-3));
        assert_eq!(step.relation_text, "Y is 3 greater than X.");

        let answer = template::solve_composed_text(&composed.text).unwrap();
        assert_eq!(answer.render(), composed.ground_truth);
    }

    #[test]
    fn compose2_rejects_same_prompt_twice() {
        let (q1, _) = template_pair();
        let backend = TemplateBackend::new();
        let composer = Composer::new(&backend);
        assert!(matches!(
            composer.compose2(&q1, ComposeTarget::Seed(&q1)),
            Err(ComposeError::Precondition(_))
        ));
    }

    #[test]
    fn spc_depth_two_matches_compose2() {
        let (q1, q2) = template_pair();
        let backend = TemplateBackend::new();
        let composer = Composer::new(&backend);
        let a = composer.compose2(&q1, ComposeTarget::Seed(&q2)).unwrap();
        let b = composer.spc(&[q1, q2]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spc_depth_one_is_a_precondition_error() {
        let (q1, _) = template_pair();
        let backend = TemplateBackend::new();
        let composer = Composer::new(&backend);
        assert!(matches!(
            composer.spc(&[q1]),
            Err(ComposeError::Precondition(_))
        ));
    }

    #[test]
    fn spc_depth_three_inherits_last_ground_truth() {
        let (q1, q2) = template_pair();
        let q3 = prompt("c", "Solve for t: 3t + 1 = 13.", "4");
        let backend = TemplateBackend::new();
        let composer = Composer::new(&backend);
        let composed = composer.spc(&[q1, q2, q3.clone()]).unwrap();
        assert_eq!(composed.depth, 3);
        assert_eq!(composed.ground_truth, q3.ground_truth);
        assert_eq!(composed.steps.len(), 2);
        // Reading order naming: first step gets X/Y, second gets Z/W.
        assert_eq!(composed.steps[0].variable_x, "X");
        assert_eq!(composed.steps[0].variable_y, "Y");
        assert_eq!(composed.steps[1].variable_x, "Z");
        assert_eq!(composed.steps[1].variable_y, "W");

        let answer = template::solve_composed_text(&composed.text).unwrap();
        assert_eq!(answer.render(), composed.ground_truth);
    }

    #[test]
    fn retries_consume_transient_backend_failures() {
        let (q1, q2) = template_pair();
        let scripted = ScriptedBackend::new();
        scripted
            .push_extraction_failure("transient")
            .push_extraction_failure("transient")
            .push_extraction(AnswerValue::int(3), "Let X be the value of n satisfying this equation.");
        let q2_span = Span::new(22, 23);
        scripted.push_replacement(
            AnswerValue::int(6),
            q2_span,
            &q2_span.replace_in(&q2.text, "Y").unwrap(),
        );
        let composer = Composer::new(&scripted);
        let composed = composer.compose2(&q1, ComposeTarget::Seed(&q2)).unwrap();
        assert_eq!(composed.steps[0].v1, AnswerValue::int(3));
    }

    #[test]
    fn exhausted_retries_reject_with_stage_tag() {
        let (q1, q2) = template_pair();
        let scripted = ScriptedBackend::new();
        for _ in 0..3 {
            scripted.push_extraction_failure("backend down");
        }
        let composer = Composer::new(&scripted);
        match composer.compose2(&q1, ComposeTarget::Seed(&q2)) {
            Err(ComposeError::Rejected { stage: 1, .. }) => {}
            other => panic!("expected stage-1 rejection, got {other:?}"),
        }
    }

    #[test]
    fn compositions_run_in_parallel_across_threads() {
        let corpus = template::generate_corpus(64, 17);
        let backend = TemplateBackend::new();
        let composer = Composer::new(&backend);
        let sequential: Vec<_> = corpus
            .chunks(2)
            .map(|pair| {
                composer
                    .compose2(&pair[0], ComposeTarget::Seed(&pair[1]))
                    .unwrap()
            })
            .collect();
        let parallel = crate::gateway::bounded_parallel(
            &corpus.chunks(2).collect::<Vec<_>>(),
            8,
            |pair| {
                composer
                    .compose2(&pair[0], ComposeTarget::Seed(&pair[1]))
                    .unwrap()
            },
        );
        assert_eq!(parallel, sequential);
    }

    #[test]
    fn llm_backend_config_defaults_match_the_cited_settings() {
        let cfg = BackendConfig::default();
        assert_eq!(cfg.temperature, 0.1);
        assert_eq!(cfg.nucleus, 0.7);
        assert_eq!(cfg.max_output_tokens, 4096);
        let profile = cfg.decoding_profile();
        assert_eq!(profile.temperature, 0.1);
        assert_eq!(profile.top_p, 0.7);
        assert_eq!(profile.max_tokens, 4096);
    }

    #[test]
    fn variable_hygiene_holds_on_template_chains() {
        let corpus = template::generate_corpus(4, 11);
        let backend = TemplateBackend::new();
        let composer = Composer::new(&backend);
        let composed = composer.spc(&corpus).unwrap();
        for step in &composed.steps {
            for seed in &corpus {
                assert!(!token_occurs(&seed.text, &step.variable_x));
                assert!(!token_occurs(&seed.text, &step.variable_y));
            }
        }
        let mut names: Vec<&String> = composed
            .steps
            .iter()
            .flat_map(|s| [&s.variable_x, &s.variable_y])
            .collect();
        let total = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), total);
    }
}
