//! Deterministic template backend over a family of linear-equation problems.
//!
//! The family exists so the whole pipeline can run offline with exact,
//! independently checkable answers: every problem is `a·u + b = c` with an
//! integer solution, the backend's step rules are fixed, and
//! [`solve_composed_text`] is a standalone solver that reads a composed prompt
//! text and derives its answer with no access to the composer's records.

use super::backend::{BackendError, ComposeBackend, Extraction, Replacement, VerifyBackend};
use crate::answer::{parse_answer, AnswerValue, EquivalencePolicy};
use crate::corpus::{prompt_id, Prompt, Span};
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::sync::OnceLock;

const UNKNOWN_POOL: [&str; 10] = ["n", "p", "s", "t", "u", "m", "k", "h", "g", "j"];

/// One synthetic problem `a·u + b = c` with integer solution `(c - b) / a`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearProblem {
    pub unknown: String,
    pub a: i64,
    pub b: i64,
    pub c: i64,
}

impl LinearProblem {
    pub fn text(&self) -> String {
        let (op, mag) = if self.b < 0 { ('-', -self.b) } else { ('+', self.b) };
        format!(
            "Solve for {u}: {a}{u} {op} {mag} = {c}.",
            u = self.unknown,
            a = self.a,
            c = self.c
        )
    }

    pub fn solution(&self) -> BigRational {
        BigRational::new(BigInt::from(self.c - self.b), BigInt::from(self.a))
    }

    pub fn to_prompt(&self, source: &str) -> Prompt {
        let text = self.text();
        let gt = AnswerValue::from_terms(
            [(crate::answer::ConstKind::Unit, self.solution())]
                .into_iter()
                .collect(),
        )
        .render();
        Prompt {
            id: prompt_id(source, &text),
            text,
            ground_truth: gt,
            domain: "math".to_string(),
            source: source.to_string(),
        }
    }
}

/// Generates `n` distinct template problems, deterministically from the seed.
pub fn generate_corpus(n: usize, seed: u64) -> Vec<Prompt> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prompts = Vec::with_capacity(n);
    let mut seen = std::collections::HashSet::new();
    while prompts.len() < n {
        let unknown = UNKNOWN_POOL[rng.gen_range(0..UNKNOWN_POOL.len())].to_string();
        let a = rng.gen_range(2..=9);
        let sol = rng.gen_range(-9..=9);
        let b = rng.gen_range(-20..=20);
        let c = a * sol + b;
        if c < 1 {
            continue;
        }
        let problem = LinearProblem { unknown, a, b, c };
        let text = problem.text();
        if seen.insert(text) {
            prompts.push(problem.to_prompt("template"));
        }
    }
    prompts
}

fn equation_regex() -> &'static regex::Regex {
    static RE: OnceLock<regex::Regex> = OnceLock::new();
    RE.get_or_init(|| {
        regex::Regex::new(
            r"Solve for ([a-z][a-z0-9]*): ([0-9]+)([a-z][a-z0-9]*) ([+-]) ([0-9]+) = (-?[0-9]+|[A-Z][A-Z0-9]*)\.",
        )
        .unwrap()
    })
}

fn definition_regex() -> &'static regex::Regex {
    static RE: OnceLock<regex::Regex> = OnceLock::new();
    RE.get_or_init(|| {
        regex::Regex::new(
            r"Let ([A-Z][A-Z0-9]*) be the value of ([a-z][a-z0-9]*) satisfying this equation\.",
        )
        .unwrap()
    })
}

fn relation_regex() -> &'static regex::Regex {
    static RE: OnceLock<regex::Regex> = OnceLock::new();
    // The delta charset is exactly what value rendering can emit (it never
    // contains a period), so a match cannot leak across sentence boundaries.
    RE.get_or_init(|| {
        regex::Regex::new(
            r"([A-Z][A-Z0-9]*) is (?:equal to|([0-9a-z+\-*/() ]+?) (less|greater) than) ([A-Z][A-Z0-9]*)\.",
        )
        .unwrap()
    })
}

/// Parses a problem text of the template family, if it is one.
pub fn parse_problem(text: &str) -> Option<LinearProblem> {
    let caps = equation_regex().captures(text)?;
    if caps.get(0)?.as_str() != text.trim() {
        return None;
    }
    let unknown_coeff = caps.get(3)?.as_str();
    let unknown = caps.get(1)?.as_str();
    if unknown != unknown_coeff {
        return None;
    }
    let a: i64 = caps[2].parse().ok()?;
    let mag: i64 = caps[5].parse().ok()?;
    let b = if &caps[4] == "-" { -mag } else { mag };
    let c: i64 = caps[6].parse().ok()?;
    Some(LinearProblem {
        unknown: unknown.to_string(),
        a,
        b,
        c,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("no equation found in composed text")]
    NoEquation,
    #[error("unresolved variable {0}")]
    Unresolved(String),
    #[error("definition for {0} does not match equation unknown {1}")]
    DefinitionMismatch(String, String),
    #[error("relation delta is not rational: {0}")]
    IrrationalDelta(String),
    #[error("division by zero coefficient")]
    ZeroCoefficient,
}

enum Statement {
    Equation {
        unknown: String,
        a: i64,
        b: i64,
        rhs: Rhs,
    },
    Definition {
        var: String,
        unknown: String,
    },
    Relation {
        lhs: String,
        delta: Option<BigRational>,
        greater: bool,
        rhs: String,
    },
}

enum Rhs {
    Literal(i64),
    Var(String),
}

/// Independent solver for composed prompts built from template problems.
///
/// Works purely on the text: equations, definitions, and relations are read in
/// order; each definition binds to the nearest preceding equation; the answer
/// is the solution of the last equation.
pub fn solve_composed_text(text: &str) -> Result<AnswerValue, OracleError> {
    let mut statements: Vec<(usize, Statement)> = Vec::new();
    for caps in equation_regex().captures_iter(text) {
        let pos = caps.get(0).unwrap().start();
        let a: i64 = caps[2].parse().unwrap();
        let mag: i64 = caps[5].parse().unwrap();
        let b = if &caps[4] == "-" { -mag } else { mag };
        let rhs_str = &caps[6];
        let rhs = match rhs_str.parse::<i64>() {
            Ok(v) => Rhs::Literal(v),
            Err(_) => Rhs::Var(rhs_str.to_string()),
        };
        statements.push((
            pos,
            Statement::Equation {
                unknown: caps[1].to_string(),
                a,
                b,
                rhs,
            },
        ));
    }
    for caps in definition_regex().captures_iter(text) {
        statements.push((
            caps.get(0).unwrap().start(),
            Statement::Definition {
                var: caps[1].to_string(),
                unknown: caps[2].to_string(),
            },
        ));
    }
    for caps in relation_regex().captures_iter(text) {
        let delta = match caps.get(2) {
            Some(d) => {
                let parsed = parse_answer(d.as_str())
                    .map_err(|_| OracleError::IrrationalDelta(d.as_str().to_string()))?;
                let value = parsed
                    .eval_precise()
                    .ok_or_else(|| OracleError::IrrationalDelta(d.as_str().to_string()))?;
                if parsed.contains_irrational() {
                    return Err(OracleError::IrrationalDelta(d.as_str().to_string()));
                }
                Some(value)
            }
            None => None,
        };
        statements.push((
            caps.get(0).unwrap().start(),
            Statement::Relation {
                lhs: caps[1].to_string(),
                delta,
                greater: caps.get(3).map(|m| m.as_str()) == Some("greater"),
                rhs: caps[4].to_string(),
            },
        ));
    }
    statements.sort_by_key(|(pos, _)| *pos);

    let mut env: HashMap<String, BigRational> = HashMap::new();
    let mut last_solution: Option<(String, BigRational)> = None;
    let mut answer: Option<BigRational> = None;
    for (_, stmt) in statements {
        match stmt {
            Statement::Equation { unknown, a, b, rhs } => {
                if a == 0 {
                    return Err(OracleError::ZeroCoefficient);
                }
                let rhs_value = match rhs {
                    Rhs::Literal(v) => BigRational::from(BigInt::from(v)),
                    Rhs::Var(name) => env
                        .get(&name)
                        .cloned()
                        .ok_or(OracleError::Unresolved(name))?,
                };
                let sol = (rhs_value - BigRational::from(BigInt::from(b)))
                    / BigRational::from(BigInt::from(a));
                last_solution = Some((unknown, sol.clone()));
                answer = Some(sol);
            }
            Statement::Definition { var, unknown } => {
                let (eq_unknown, sol) = last_solution
                    .clone()
                    .ok_or(OracleError::NoEquation)?;
                if eq_unknown != unknown {
                    return Err(OracleError::DefinitionMismatch(var, eq_unknown));
                }
                env.insert(var, sol);
            }
            Statement::Relation {
                lhs,
                delta,
                greater,
                rhs,
            } => {
                let base = env
                    .get(&rhs)
                    .cloned()
                    .ok_or(OracleError::Unresolved(rhs))?;
                let value = match delta {
                    None => base,
                    Some(d) if greater => base + d,
                    Some(d) => base - d,
                };
                env.insert(lhs, value);
            }
        }
    }
    let answer = answer.ok_or(OracleError::NoEquation)?;
    Ok(AnswerValue::from_terms(
        [(crate::answer::ConstKind::Unit, answer)]
            .into_iter()
            .collect(),
    ))
}

fn byte_to_char(text: &str, byte: usize) -> usize {
    text[..byte].chars().count()
}

/// Spans of standalone integer literals: maximal digit runs not glued to
/// letters, other digits, a decimal point, or a subscript/exponent marker.
pub fn eligible_literal_spans(text: &str) -> Vec<Span> {
    let chars: Vec<char> = text.chars().collect();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && chars[i].is_ascii_digit() {
            i += 1;
        }
        let end = i;
        let prev = start.checked_sub(1).map(|j| chars[j]);
        let next = chars.get(end).copied();
        let mut ok = true;
        if let Some(p) = prev {
            if p.is_alphanumeric() || p == '_' || p == '^' {
                ok = false;
            }
            if p == '.' && start >= 2 && chars[start - 2].is_ascii_digit() {
                ok = false;
            }
            if p == '{' && start >= 2 && (chars[start - 2] == '_' || chars[start - 2] == '^') {
                ok = false;
            }
        }
        if let Some(n) = next {
            if n.is_alphanumeric() {
                ok = false;
            }
            if n == '.' && chars.get(end + 1).is_some_and(|c| c.is_ascii_digit()) {
                ok = false;
            }
        }
        if ok {
            spans.push(Span::new(start, end));
        }
    }
    spans
}

/// Deterministic offline backend: template problems get their fixed step
/// rules, anything else falls back to taxonomy-based reduction of the ground
/// truth and first-eligible-literal replacement.
#[derive(Debug, Default, Clone)]
pub struct TemplateBackend;

impl TemplateBackend {
    pub fn new() -> Self {
        TemplateBackend
    }

    fn reduce_ground_truth(
        q1: &Prompt,
        var_x: &str,
    ) -> Result<(AnswerValue, String), BackendError> {
        if let Some(problem) = parse_problem(&q1.text) {
            let value = AnswerValue::from_terms(
                [(crate::answer::ConstKind::Unit, problem.solution())]
                    .into_iter()
                    .collect(),
            );
            let definition = format!(
                "Let {var_x} be the value of {} satisfying this equation.",
                problem.unknown
            );
            return Ok((value, definition));
        }
        match parse_answer(&q1.ground_truth) {
            Ok(v @ AnswerValue::Angle { .. }) => Ok((
                v.radian_image().expect("angle has a radian image"),
                format!("Let {var_x} be the radian value of the answer to the preceding problem."),
            )),
            Ok(v) if v.is_scalar() => Ok((
                v,
                format!("Let {var_x} denote the final answer to the preceding problem."),
            )),
            Ok(AnswerValue::Interval { lo, hi }) => {
                if let Some(value) = lo.value {
                    Ok((
                        (*value).clone(),
                        format!(
                            "Let {var_x} be the lower bound of the answer to the preceding problem."
                        ),
                    ))
                } else if let Some(value) = hi.value {
                    Ok((
                        (*value).clone(),
                        format!(
                            "Let {var_x} be the upper bound of the answer to the preceding problem."
                        ),
                    ))
                } else {
                    Err(BackendError::Unsupported(
                        "interval with no finite bound".into(),
                    ))
                }
            }
            Ok(AnswerValue::RatioParts(parts)) => Ok((
                AnswerValue::Integer(parts[0].clone()),
                format!(
                    "Let {var_x} be the first part of the simplified ratio that answers the preceding problem."
                ),
            )),
            Ok(AnswerValue::BaseN { digits, base }) => Ok((
                AnswerValue::int(digits.len() as i64),
                format!(
                    "Let {var_x} be the number of digits in the base {base} representation of the answer to the preceding problem."
                ),
            )),
            Ok(other) => Err(BackendError::Unsupported(format!(
                "no scalar reduction for {other:?}"
            ))),
            Err(_) => Self::reduce_multi_value(&q1.ground_truth, var_x),
        }
    }

    /// Multi-value answers ("3, 5" or "2 or 7") reduce to the smallest value.
    fn reduce_multi_value(gt: &str, var_x: &str) -> Result<(AnswerValue, String), BackendError> {
        let parts: Vec<&str> = if gt.contains(',') {
            gt.split(',').collect()
        } else if gt.contains(" or ") {
            gt.split(" or ").collect()
        } else {
            return Err(BackendError::Unsupported(format!(
                "ground truth not parseable: {gt:?}"
            )));
        };
        if parts.len() < 2 {
            return Err(BackendError::Unsupported(format!(
                "ground truth not parseable: {gt:?}"
            )));
        }
        let mut values = Vec::new();
        for part in parts {
            match parse_answer(part.trim()) {
                Ok(v) if v.is_scalar() => values.push(v),
                _ => {
                    return Err(BackendError::Unsupported(format!(
                        "multi-value part not scalar: {part:?}"
                    )))
                }
            }
        }
        let mut smallest = values[0].clone();
        for v in &values[1..] {
            if v.cmp_numeric(&smallest) == Some(std::cmp::Ordering::Less) {
                smallest = v.clone();
            }
        }
        Ok((
            smallest,
            format!("Let {var_x} be the smallest of the values in the answer to the preceding problem."),
        ))
    }
}

impl ComposeBackend for TemplateBackend {
    fn extract_value(&self, q1: &Prompt, var_x: &str) -> Result<Extraction, BackendError> {
        let (value, definition) = Self::reduce_ground_truth(q1, var_x)?;
        Ok(Extraction { value, definition })
    }

    fn replace_literal(&self, text: &str, var_y: &str) -> Result<Replacement, BackendError> {
        // Template chains: replace the right-hand side of the first equation.
        if let Some(caps) = equation_regex().captures(text) {
            let rhs = caps.get(6).unwrap();
            if let Ok(value) = rhs.as_str().parse::<i64>() {
                let locus = Span::new(
                    byte_to_char(text, rhs.start()),
                    byte_to_char(text, rhs.end()),
                );
                let modified = locus
                    .replace_in(text, var_y)
                    .ok_or_else(|| BackendError::MalformedReply("bad span".into()))?;
                return Ok(Replacement {
                    value: AnswerValue::int(value),
                    locus,
                    modified,
                });
            }
        }
        let spans = eligible_literal_spans(text);
        let locus = *spans.first().ok_or(BackendError::NoEligibleLiteral)?;
        let literal = locus.slice_of(text).unwrap();
        let value = parse_answer(&literal)
            .map_err(|e| BackendError::MalformedReply(format!("literal {literal:?}: {e}")))?;
        let modified = locus
            .replace_in(text, var_y)
            .ok_or_else(|| BackendError::MalformedReply("bad span".into()))?;
        Ok(Replacement {
            value,
            locus,
            modified,
        })
    }
}

impl VerifyBackend for TemplateBackend {
    fn recompute_value(
        &self,
        q1: &Prompt,
        _d1: &str,
        var_x: &str,
    ) -> Result<AnswerValue, BackendError> {
        Self::reduce_ground_truth(q1, var_x).map(|(v, _)| v)
    }

    fn substitution_consistent(
        &self,
        _original: &str,
        _modified: &str,
        _var_y: &str,
        _v2: &AnswerValue,
    ) -> Result<bool, BackendError> {
        // Byte-level restoration is already checked structurally upstream.
        Ok(true)
    }

    fn composition_consistent(&self, composed_text: &str) -> Result<bool, BackendError> {
        // For template chains the oracle must be able to solve the text.
        if equation_regex().is_match(composed_text) {
            Ok(solve_composed_text(composed_text).is_ok())
        } else {
            Ok(true)
        }
    }

    fn judge_recovery(&self, filled_prompt: &str) -> Result<String, BackendError> {
        let symbol = section(filled_prompt, "**Target Variable:** $", "$")
            .ok_or_else(|| BackendError::MalformedReply("no target variable".into()))?;
        let correct = section(filled_prompt, "**Correct Answer for $", "\n")
            .and_then(|s| s.split_once(":** ").map(|(_, v)| v.trim().to_string()))
            .ok_or_else(|| BackendError::MalformedReply("no correct answer".into()))?;
        let response = filled_prompt
            .split("**Model's Response:**")
            .nth(1)
            .map(|rest| rest.split("\n---").next().unwrap_or(rest))
            .ok_or_else(|| BackendError::MalformedReply("no response section".into()))?;

        let pattern =
            regex::Regex::new(&format!(r"{}\s*(?:=|is)\s*([^\s,.;]+)", regex::escape(&symbol)))
                .unwrap();
        let extracted = pattern
            .captures_iter(response)
            .last()
            .map(|c| c[1].to_string());
        let (extracted_value, is_equivalent) = match extracted {
            Some(text) => {
                let equiv = match (parse_answer(&text), parse_answer(&correct)) {
                    (Ok(a), Ok(b)) => {
                        crate::answer::equivalent(&a, &b, EquivalencePolicy::TwoDecimal)
                    }
                    _ => text.trim() == correct.trim(),
                };
                (text, equiv)
            }
            None => ("NOT_FOUND".to_string(), false),
        };
        let verdict = if is_equivalent && extracted_value != "NOT_FOUND" {
            "CORRECT"
        } else {
            "INCORRECT"
        };
        Ok(serde_json::json!({
            "extracted_value": extracted_value,
            "is_equivalent": is_equivalent,
            "reasoning": "pattern scan over the response",
            "verdict": verdict,
        })
        .to_string())
    }
}

fn section(text: &str, start: &str, end: &str) -> Option<String> {
    let rest = text.split(start).nth(1)?;
    Some(rest.split(end).next()?.trim().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_problems_have_integer_solutions() {
        let corpus = generate_corpus(50, 7);
        assert_eq!(corpus.len(), 50);
        for p in &corpus {
            let problem = parse_problem(&p.text).expect("round trip");
            assert!(problem.solution().is_integer());
            assert_eq!(problem.to_prompt("template").ground_truth, p.ground_truth);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate_corpus(20, 3), generate_corpus(20, 3));
        assert_ne!(generate_corpus(20, 3), generate_corpus(20, 4));
    }

    #[test]
    fn oracle_solves_a_single_problem() {
        let p = LinearProblem {
            unknown: "n".into(),
            a: 2,
            b: 3,
            c: 9,
        };
        assert_eq!(p.text(), "Solve for n: 2n + 3 = 9.");
        let answer = solve_composed_text(&p.text()).unwrap();
        assert_eq!(answer, AnswerValue::int(3));
    }

    #[test]
    fn oracle_follows_relations() {
        // X = 3; Y = X - (-3) = 6; then 5p - 4 = 6 gives p = 2.
        let text = "Solve for n: 2n + 3 = 9. Let X be the value of n satisfying this equation. \
                    Y is 3 greater than X. Solve for p: 5p - 4 = Y.";
        let answer = solve_composed_text(text).unwrap();
        assert_eq!(answer, AnswerValue::int(2));
    }

    #[test]
    fn eligible_literals_skip_glued_digits() {
        let spans = eligible_literal_spans("Simplify 2((5p+1)-2p*4)+(4-1/3)(6p-9) now");
        let text = "Simplify 2((5p+1)-2p*4)+(4-1/3)(6p-9) now";
        let literals: Vec<String> = spans.iter().map(|s| s.slice_of(text).unwrap()).collect();
        // 5, 2, 6 are coefficients glued to letters; 1/3 is a fraction whose
        // parts still count as standalone integers.
        assert_eq!(literals, vec!["2", "1", "4", "4", "1", "3", "9"]);
    }

    #[test]
    fn replaces_rhs_of_first_equation() {
        let backend = TemplateBackend::new();
        let text = "Solve for p: 5p - 4 = 6.";
        let rep = backend.replace_literal(text, "Y").unwrap();
        assert_eq!(rep.value, AnswerValue::int(6));
        assert_eq!(rep.modified, "Solve for p: 5p - 4 = Y.");
        assert_eq!(rep.locus.slice_of(text).unwrap(), "6");
    }

    #[test]
    fn no_digit_text_has_no_literal() {
        let backend = TemplateBackend::new();
        assert!(matches!(
            backend.replace_literal("no digits here", "Y"),
            Err(BackendError::NoEligibleLiteral)
        ));
    }

    #[test]
    fn interval_ground_truth_reduces_to_lower_bound() {
        let q = Prompt {
            id: "q".into(),
            text: "For which x does f(x) stay bounded?".into(),
            ground_truth: "[2, inf)".into(),
            domain: "math".into(),
            source: "t".into(),
        };
        let backend = TemplateBackend::new();
        let ext = backend.extract_value(&q, "X").unwrap();
        assert_eq!(ext.value, AnswerValue::int(2));
        assert!(ext.definition.contains("lower bound"));
    }

    #[test]
    fn multi_value_ground_truth_takes_smallest() {
        let q = Prompt {
            id: "q".into(),
            text: "Find all roots.".into(),
            ground_truth: "5, -2".into(),
            domain: "math".into(),
            source: "t".into(),
        };
        let ext = TemplateBackend::new().extract_value(&q, "X").unwrap();
        assert_eq!(ext.value, AnswerValue::int(-2));
        assert!(ext.definition.contains("smallest"));
    }
}
