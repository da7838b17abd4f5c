//! Backend abstraction for the composition and verification steps.
//!
//! Three implementations exist: [`super::template::TemplateBackend`]
//! (deterministic, offline), the LLM-driven backend in [`super::llm`], and
//! [`ScriptedBackend`], which replays canned step results for tests and for
//! reproducing a recorded composition run.

use crate::answer::AnswerValue;
use crate::corpus::{Prompt, Span};
use std::collections::VecDeque;
use std::sync::Mutex;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("value extraction failed: {0}")]
    Extraction(String),
    #[error("no eligible literal to replace")]
    NoEligibleLiteral,
    #[error("prompt outside the supported answer taxonomy: {0}")]
    Unsupported(String),
    #[error("backend reply malformed: {0}")]
    MalformedReply(String),
    #[error("gateway: {0}")]
    Gateway(#[from] crate::gateway::GatewayError),
    #[error("scripted backend has no reply queued for {0}")]
    Exhausted(&'static str),
}

/// Result of composition step one: a value extracted from the upstream
/// ground truth and a sentence that names it without stating it.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub value: AnswerValue,
    pub definition: String,
}

/// Result of composition step two: the literal chosen in the downstream text,
/// its span, and the text with that span replaced by the new variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Replacement {
    pub value: AnswerValue,
    pub locus: Span,
    pub modified: String,
}

/// The two generative steps of the composition operator.
pub trait ComposeBackend {
    /// Step one: extract a numeric value from `q1`'s ground truth and produce a
    /// definition naming it as `var_x`.
    fn extract_value(&self, q1: &Prompt, var_x: &str) -> Result<Extraction, BackendError>;

    /// Step two: pick a numeric literal in `text` and replace it with `var_y`.
    fn replace_literal(&self, text: &str, var_y: &str) -> Result<Replacement, BackendError>;
}

impl<B: ComposeBackend + ?Sized> ComposeBackend for &B {
    fn extract_value(&self, q1: &Prompt, var_x: &str) -> Result<Extraction, BackendError> {
        (**self).extract_value(q1, var_x)
    }

    fn replace_literal(&self, text: &str, var_y: &str) -> Result<Replacement, BackendError> {
        (**self).replace_literal(text, var_y)
    }
}

/// The judgment calls of the verification chain.
pub trait VerifyBackend {
    /// Recompute the step-one value from `(q1, gt1, d1)`, independently of the
    /// claimed value.
    fn recompute_value(&self, q1: &Prompt, d1: &str, var_x: &str)
        -> Result<AnswerValue, BackendError>;

    /// Does replacing the literal with `var_y` preserve the question's meaning?
    fn substitution_consistent(
        &self,
        original: &str,
        modified: &str,
        var_y: &str,
        v2: &AnswerValue,
    ) -> Result<bool, BackendError>;

    /// Whole-composition consistency judgment.
    fn composition_consistent(&self, composed_text: &str) -> Result<bool, BackendError>;

    /// Submit a filled recovery-judge prompt; returns the raw reply text
    /// (expected to be the judge's JSON).
    fn judge_recovery(&self, filled_prompt: &str) -> Result<String, BackendError>;
}

impl<B: VerifyBackend + ?Sized> VerifyBackend for &B {
    fn recompute_value(
        &self,
        q1: &Prompt,
        d1: &str,
        var_x: &str,
    ) -> Result<AnswerValue, BackendError> {
        (**self).recompute_value(q1, d1, var_x)
    }

    fn substitution_consistent(
        &self,
        original: &str,
        modified: &str,
        var_y: &str,
        v2: &AnswerValue,
    ) -> Result<bool, BackendError> {
        (**self).substitution_consistent(original, modified, var_y, v2)
    }

    fn composition_consistent(&self, composed_text: &str) -> Result<bool, BackendError> {
        (**self).composition_consistent(composed_text)
    }

    fn judge_recovery(&self, filled_prompt: &str) -> Result<String, BackendError> {
        (**self).judge_recovery(filled_prompt)
    }
}

type Queue<T> = Mutex<VecDeque<Result<T, String>>>;

/// Replays queued step results in order. An `Err(reason)` entry simulates a
/// transient backend failure, which the composer's retry loop consumes.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    extractions: Queue<Extraction>,
    replacements: Queue<Replacement>,
    recomputed: Queue<AnswerValue>,
    substitution_verdicts: Queue<bool>,
    consistency_verdicts: Queue<bool>,
    judge_replies: Queue<String>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_extraction(&self, value: AnswerValue, definition: &str) -> &Self {
        self.extractions.lock().unwrap().push_back(Ok(Extraction {
            value,
            definition: definition.to_string(),
        }));
        self
    }

    pub fn push_extraction_failure(&self, reason: &str) -> &Self {
        self.extractions
            .lock()
            .unwrap()
            .push_back(Err(reason.to_string()));
        self
    }

    pub fn push_replacement(&self, value: AnswerValue, locus: Span, modified: &str) -> &Self {
        self.replacements.lock().unwrap().push_back(Ok(Replacement {
            value,
            locus,
            modified: modified.to_string(),
        }));
        self
    }

    pub fn push_replacement_failure(&self, reason: &str) -> &Self {
        self.replacements
            .lock()
            .unwrap()
            .push_back(Err(reason.to_string()));
        self
    }

    pub fn push_recomputed(&self, value: AnswerValue) -> &Self {
        self.recomputed.lock().unwrap().push_back(Ok(value));
        self
    }

    pub fn push_substitution_verdict(&self, ok: bool) -> &Self {
        self.substitution_verdicts.lock().unwrap().push_back(Ok(ok));
        self
    }

    pub fn push_consistency_verdict(&self, ok: bool) -> &Self {
        self.consistency_verdicts.lock().unwrap().push_back(Ok(ok));
        self
    }

    pub fn push_judge_reply(&self, reply: &str) -> &Self {
        self.judge_replies
            .lock()
            .unwrap()
            .push_back(Ok(reply.to_string()));
        self
    }

    fn pop<T>(queue: &Queue<T>, what: &'static str) -> Result<T, BackendError> {
        match queue.lock().unwrap().pop_front() {
            Some(Ok(v)) => Ok(v),
            Some(Err(reason)) => Err(BackendError::Extraction(reason)),
            None => Err(BackendError::Exhausted(what)),
        }
    }
}

impl ComposeBackend for ScriptedBackend {
    fn extract_value(&self, _q1: &Prompt, _var_x: &str) -> Result<Extraction, BackendError> {
        Self::pop(&self.extractions, "extract_value")
    }

    fn replace_literal(&self, _text: &str, _var_y: &str) -> Result<Replacement, BackendError> {
        Self::pop(&self.replacements, "replace_literal")
    }
}

impl VerifyBackend for ScriptedBackend {
    fn recompute_value(
        &self,
        _q1: &Prompt,
        _d1: &str,
        _var_x: &str,
    ) -> Result<AnswerValue, BackendError> {
        Self::pop(&self.recomputed, "recompute_value")
    }

    fn substitution_consistent(
        &self,
        _original: &str,
        _modified: &str,
        _var_y: &str,
        _v2: &AnswerValue,
    ) -> Result<bool, BackendError> {
        Self::pop(&self.substitution_verdicts, "substitution_consistent")
    }

    fn composition_consistent(&self, _composed_text: &str) -> Result<bool, BackendError> {
        Self::pop(&self.consistency_verdicts, "composition_consistent")
    }

    fn judge_recovery(&self, _filled_prompt: &str) -> Result<String, BackendError> {
        Self::pop(&self.judge_replies, "judge_recovery")
    }
}
