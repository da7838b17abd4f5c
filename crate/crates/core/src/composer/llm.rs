//! LLM-driven composition and verification backend.
//!
//! Each step speaks through the gateway with the composer decoding profile and
//! a versioned prompt template (see `templates/`). Step-two replies return the
//! modified question rather than character offsets; the span is recovered by
//! diffing the original against the modified text, which is robust to models
//! that cannot count characters.

use super::backend::{BackendError, ComposeBackend, Extraction, Replacement, VerifyBackend};
use crate::answer::{parse_answer, AnswerValue};
use crate::corpus::{Prompt, Span};
use crate::gateway::{extract_final_answer, DecodingProfile, Gateway, Message};
use crate::verify::strip_code_fences;

const MODIFY_Q1_TEMPLATE: &str = include_str!("../../templates/modify_q1.txt");
const MODIFY_Q2_TEMPLATE: &str = include_str!("../../templates/modify_q2.txt");
const VERIFY_STEP1_TEMPLATE: &str = include_str!("../../templates/verify_step1.txt");
const VERIFY_STEP2_TEMPLATE: &str = include_str!("../../templates/verify_step2.txt");
const VERIFY_STEP3_TEMPLATE: &str = include_str!("../../templates/verify_step3.txt");

/// Compose/verify backend that delegates every judgment call to an LLM.
pub struct LlmBackend<'a> {
    gateway: &'a Gateway,
    profile: DecodingProfile,
}

impl<'a> LlmBackend<'a> {
    pub fn new(gateway: &'a Gateway) -> Self {
        LlmBackend {
            gateway,
            profile: DecodingProfile::composer(),
        }
    }

    /// Backend with decoding settings taken from a composer backend config.
    pub fn from_config(gateway: &'a Gateway, config: &super::BackendConfig) -> Self {
        LlmBackend {
            gateway,
            profile: config.decoding_profile(),
        }
    }

    pub fn with_profile(mut self, profile: DecodingProfile) -> Self {
        self.profile = profile;
        self
    }

    fn ask(&self, prompt: String) -> Result<String, BackendError> {
        Ok(self.gateway.chat(&[Message::user(prompt)], &self.profile)?)
    }

    fn yes_no(&self, prompt: String) -> Result<bool, BackendError> {
        let reply = self.ask(prompt)?;
        let word = reply
            .split_whitespace()
            .next_back()
            .unwrap_or("")
            .trim_matches(|c: char| !c.is_ascii_alphabetic())
            .to_ascii_uppercase();
        match word.as_str() {
            "YES" => Ok(true),
            "NO" => Ok(false),
            _ => Err(BackendError::MalformedReply(format!(
                "expected YES/NO, got {reply:?}"
            ))),
        }
    }
}

#[derive(serde::Deserialize)]
struct ExtractionWire {
    value: String,
    definition: String,
}

#[derive(serde::Deserialize)]
struct ReplacementWire {
    value: String,
    modified_question: String,
}

impl ComposeBackend for LlmBackend<'_> {
    fn extract_value(&self, q1: &Prompt, var_x: &str) -> Result<Extraction, BackendError> {
        let prompt = MODIFY_Q1_TEMPLATE
            .replace("{variable}", var_x)
            .replace("{question}", &q1.text)
            .replace("{final_answer}", &q1.ground_truth);
        let reply = self.ask(prompt)?;
        let wire: ExtractionWire = serde_json::from_str(strip_code_fences(&reply))
            .map_err(|e| BackendError::MalformedReply(format!("step-1 reply: {e}")))?;
        let value = parse_answer(&wire.value)
            .map_err(|e| BackendError::Extraction(format!("value {:?}: {e}", wire.value)))?;
        Ok(Extraction {
            value,
            definition: wire.definition.trim().to_string(),
        })
    }

    fn replace_literal(&self, text: &str, var_y: &str) -> Result<Replacement, BackendError> {
        let prompt = MODIFY_Q2_TEMPLATE
            .replace("{variable}", var_y)
            .replace("{question}", text);
        let reply = self.ask(prompt)?;
        let wire: ReplacementWire = serde_json::from_str(strip_code_fences(&reply))
            .map_err(|e| BackendError::MalformedReply(format!("step-2 reply: {e}")))?;
        let locus = diff_span(text, &wire.modified_question, var_y).ok_or_else(|| {
            BackendError::MalformedReply(
                "modified question is not the original with one literal replaced".into(),
            )
        })?;
        let literal = locus.slice_of(text).expect("span from diff is valid");
        let value = parse_answer(&literal)
            .map_err(|e| BackendError::MalformedReply(format!("literal {literal:?}: {e}")))?;
        let claimed = parse_answer(&wire.value).ok();
        if let Some(claimed) = claimed {
            if !crate::answer::equivalent(&claimed, &value, crate::answer::EquivalencePolicy::Exact)
            {
                return Err(BackendError::MalformedReply(format!(
                    "claimed value {} does not match replaced literal {literal:?}",
                    wire.value
                )));
            }
        }
        Ok(Replacement {
            value,
            locus,
            modified: wire.modified_question,
        })
    }
}

impl VerifyBackend for LlmBackend<'_> {
    fn recompute_value(
        &self,
        q1: &Prompt,
        d1: &str,
        var_x: &str,
    ) -> Result<AnswerValue, BackendError> {
        let prompt = VERIFY_STEP1_TEMPLATE
            .replace("{variable}", var_x)
            .replace("{question}", &q1.text)
            .replace("{final_answer}", &q1.ground_truth)
            .replace("{definition}", d1);
        let reply = self.ask(prompt)?;
        let answer = extract_final_answer(&reply)
            .ok_or_else(|| BackendError::MalformedReply("no boxed value in reply".into()))?;
        parse_answer(&answer)
            .map_err(|e| BackendError::MalformedReply(format!("recomputed {answer:?}: {e}")))
    }

    fn substitution_consistent(
        &self,
        original: &str,
        modified: &str,
        var_y: &str,
        v2: &AnswerValue,
    ) -> Result<bool, BackendError> {
        let prompt = VERIFY_STEP2_TEMPLATE
            .replace("{original}", original)
            .replace("{modified}", modified)
            .replace("{variable}", var_y)
            .replace("{value}", &v2.render());
        self.yes_no(prompt)
    }

    fn composition_consistent(&self, composed_text: &str) -> Result<bool, BackendError> {
        let prompt = VERIFY_STEP3_TEMPLATE.replace("{question}", composed_text);
        self.yes_no(prompt)
    }

    fn judge_recovery(&self, filled_prompt: &str) -> Result<String, BackendError> {
        self.ask(filled_prompt.to_string())
    }
}

/// Finds the one span replaced by `var` by comparing the original and modified
/// texts. Returns the char span in the original, or None when the modified
/// text is not the original with exactly one contiguous substitution.
pub fn diff_span(original: &str, modified: &str, var: &str) -> Option<Span> {
    let orig: Vec<char> = original.chars().collect();
    let modi: Vec<char> = modified.chars().collect();
    let var_chars: Vec<char> = var.chars().collect();

    let mut prefix = 0;
    while prefix < orig.len() && prefix < modi.len() && orig[prefix] == modi[prefix] {
        prefix += 1;
    }
    let mut suffix = 0;
    while suffix < orig.len() - prefix
        && suffix < modi.len() - prefix
        && orig[orig.len() - 1 - suffix] == modi[modi.len() - 1 - suffix]
    {
        suffix += 1;
    }
    let replaced_mid: &[char] = &modi[prefix..modi.len() - suffix];
    // The middle of the modified text may under-cover the variable when the
    // literal and variable share edge characters; extend to match exactly.
    if replaced_mid != var_chars.as_slice() {
        // Try to re-anchor: locate the variable across the changed region.
        let lo = prefix.min(modi.len());
        let window_start = lo.saturating_sub(var_chars.len());
        let window_end = (modi.len() - suffix + var_chars.len()).min(modi.len());
        let window: String = modi[window_start..window_end].iter().collect();
        let var_str: String = var_chars.iter().collect();
        let at = window.find(&var_str)?;
        let var_start = window_start + window[..at].chars().count();
        let var_end = var_start + var_chars.len();
        // Same prefix/suffix re-derived from the anchored variable position.
        let start = var_start;
        let end = orig.len() - (modi.len() - var_end);
        if start > end || end > orig.len() {
            return None;
        }
        let candidate = Span::new(start, end);
        let rebuilt = candidate.replace_in(original, &var_str)?;
        if rebuilt == modified {
            return Some(candidate);
        }
        return None;
    }
    let start = prefix;
    let end = orig.len() - suffix;
    if start > end {
        return None;
    }
    let candidate = Span::new(start, end);
    let rebuilt = candidate.replace_in(original, var)?;
    if rebuilt == modified {
        Some(candidate)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diff_recovers_simple_replacement() {
        let original = "Simplify 2((5p+1)-2p*4)+(4-1/3)(6p-9).";
        let modified = "Simplify 2((5p+Y)-2p*4)+(4-1/3)(6p-9).";
        let span = diff_span(original, modified, "Y").unwrap();
        assert_eq!(span.slice_of(original).unwrap(), "1");
    }

    #[test]
    fn diff_handles_multichar_literal_and_variable() {
        let original = "Take 12 apples from 30.";
        let modified = "Take X1 apples from 30.";
        let span = diff_span(original, modified, "X1").unwrap();
        assert_eq!(span.slice_of(original).unwrap(), "12");
    }

    #[test]
    fn diff_rejects_multiple_edits() {
        let original = "a 1 b 2 c";
        let modified = "a Y b Y c";
        assert!(diff_span(original, modified, "Y").is_none());
    }

    #[test]
    fn diff_handles_shared_edge_digits() {
        // Replacing "1" inside "11" shares a digit with the remaining text.
        let original = "value 11 end";
        let modified = "value Y1 end";
        let span = diff_span(original, modified, "Y").unwrap();
        let rebuilt = span.replace_in(original, "Y").unwrap();
        assert_eq!(rebuilt, modified);
    }
}
