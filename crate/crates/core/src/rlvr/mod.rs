//! Pure RL kernels: binary rewards, group-relative advantages, the
//! token-normalized clipped objective, its analytic gradient on the toy
//! policy, dynamic batch filtering, and solve-rate metrics.
//!
//! Everything here is reentrant and generic over the float type via
//! [`crate::scalar::Scalar`]; the crate root exports f64 aliases.

mod policy;
pub mod self_check;

pub use policy::ToyPolicy;
pub use self_check::{run_self_check, CheckResult};

use crate::answer::{equivalent, parse_answer, EquivalencePolicy};
use crate::corpus::{normalize_text, ComposedPrompt, Prompt};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum RlvrError {
    #[error("group needs at least 2 responses, got {0}")]
    GroupTooSmall(usize),
    #[error("mismatched group shapes: {0}")]
    Mismatch(String),
    #[error("reward matrix rows have unequal lengths")]
    Ragged,
}

/// Anything with an id, a question text, and a ground truth to grade against.
pub trait Gradeable {
    fn id(&self) -> &str;
    fn text(&self) -> &str;
    fn ground_truth(&self) -> &str;
}

impl Gradeable for Prompt {
    fn id(&self) -> &str {
        &self.id
    }
    fn text(&self) -> &str {
        &self.text
    }
    fn ground_truth(&self) -> &str {
        &self.ground_truth
    }
}

impl Gradeable for ComposedPrompt {
    fn id(&self) -> &str {
        &self.id
    }
    fn text(&self) -> &str {
        &self.text
    }
    fn ground_truth(&self) -> &str {
        &self.ground_truth
    }
}

/// Binary verifier: 1 iff the final answer is equivalent to the ground truth.
///
/// Both sides go through the answer algebra (exact comparison, two-decimal when
/// an irrational is involved); strings outside the taxonomy fall back to
/// normalized text equality.
pub fn grade_answer(ground_truth: &str, final_answer: &str) -> u8 {
    match (parse_answer(ground_truth), parse_answer(final_answer)) {
        (Ok(a), Ok(b)) => u8::from(equivalent(&a, &b, EquivalencePolicy::TwoDecimal)),
        _ => u8::from(normalize_text(ground_truth) == normalize_text(final_answer)),
    }
}

/// Reward of one response against its prompt.
pub fn reward<T: Gradeable>(prompt: &T, response_final_answer: &str) -> u8 {
    grade_answer(prompt.ground_truth(), response_final_answer)
}

/// G sampled responses to one prompt, with rewards and the sampling policy's
/// per-token log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "F: Serialize",
    deserialize = "F: serde::de::DeserializeOwned"
))]
pub struct RolloutGroup<F> {
    pub prompt_id: String,
    pub responses: Vec<Vec<u32>>,
    pub rewards: Vec<F>,
    pub old_logprobs: Vec<Vec<F>>,
}

impl<F: Scalar> RolloutGroup<F> {
    pub fn group_size(&self) -> usize {
        self.rewards.len()
    }

    pub fn mean_reward(&self) -> F {
        if self.rewards.is_empty() {
            return F::zero();
        }
        let sum: F = self.rewards.iter().cloned().sum();
        sum / F::from_f64c(self.rewards.len() as f64)
    }

    pub fn validate(&self) -> Result<(), RlvrError> {
        if self.rewards.len() < 2 {
            return Err(RlvrError::GroupTooSmall(self.rewards.len()));
        }
        if self.responses.len() != self.rewards.len()
            || self.old_logprobs.len() != self.responses.len()
        {
            return Err(RlvrError::Mismatch(
                "responses, rewards, old_logprobs must have equal length".into(),
            ));
        }
        for (r, lp) in self.responses.iter().zip(&self.old_logprobs) {
            if r.len() != lp.len() {
                return Err(RlvrError::Mismatch(
                    "old_logprobs must be per token".into(),
                ));
            }
        }
        for r in &self.rewards {
            if !(*r == F::zero() || *r == F::one()) {
                return Err(RlvrError::Mismatch("rewards must be 0 or 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrpoConfig<F> {
    /// Importance-ratio clip range ε; must satisfy 0 < ε < 1.
    pub clip_epsilon: F,
    /// Below this reward standard deviation a group counts as zero-variance.
    pub std_floor: F,
    pub group_size: usize,
    /// Sample (Bessel-corrected) instead of population standard deviation.
    pub bessel_correction: bool,
}

impl<F: Scalar> Default for GrpoConfig<F> {
    fn default() -> Self {
        GrpoConfig {
            clip_epsilon: F::from_f64c(0.2),
            std_floor: F::from_f64c(1e-8),
            group_size: 8,
            bessel_correction: false,
        }
    }
}

/// Group-relative advantages plus the zero-variance flag.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAdvantages<F> {
    pub values: Vec<F>,
    /// All rewards equal; advantages were set to zero.
    pub zero_variance: bool,
}

/// Normalizes each reward by its group's mean and standard deviation
/// (population by default). Constant-reward groups get all-zero advantages.
pub fn group_advantage<F: Scalar>(
    rewards: &[F],
    cfg: &GrpoConfig<F>,
) -> Result<GroupAdvantages<F>, RlvrError> {
    let g = rewards.len();
    if g < 2 {
        return Err(RlvrError::GroupTooSmall(g));
    }
    let count = F::from_f64c(g as f64);
    let mean = rewards.iter().cloned().sum::<F>() / count;
    let denom = if cfg.bessel_correction {
        F::from_f64c((g - 1) as f64)
    } else {
        count
    };
    let variance = rewards
        .iter()
        .map(|&r| (r - mean) * (r - mean))
        .sum::<F>()
        / denom;
    let std = variance.sqrt();
    if std < cfg.std_floor {
        return Ok(GroupAdvantages {
            values: vec![F::zero(); g],
            zero_variance: true,
        });
    }
    Ok(GroupAdvantages {
        values: rewards.iter().map(|&r| (r - mean) / std).collect(),
        zero_variance: false,
    })
}

/// Token-level importance ratios `exp(log π_θ − log π_old)` per response.
pub fn importance_ratios<F: Scalar>(
    group: &RolloutGroup<F>,
    policy: &ToyPolicy<F>,
) -> Result<Vec<Vec<F>>, RlvrError> {
    group.validate()?;
    let mut out = Vec::with_capacity(group.responses.len());
    for (tokens, old) in group.responses.iter().zip(&group.old_logprobs) {
        let new = policy.response_log_probs(tokens);
        out.push(
            new.iter()
                .zip(old)
                .map(|(&n, &o)| (n - o).exp())
                .collect(),
        );
    }
    Ok(out)
}

/// The token-normalized clipped surrogate objective for one group:
/// `(1/Σ|r_i|) Σ_i Σ_t min(s·Â_i, clip(s, 1−ε, 1+ε)·Â_i)`.
pub fn grpo_objective<F: Scalar>(
    group: &RolloutGroup<F>,
    policy: &ToyPolicy<F>,
    cfg: &GrpoConfig<F>,
) -> Result<F, RlvrError> {
    let advantages = group_advantage(&group.rewards, cfg)?;
    if advantages.zero_variance {
        return Ok(F::zero());
    }
    let ratios = importance_ratios(group, policy)?;
    let total_tokens: usize = group.responses.iter().map(Vec::len).sum();
    if total_tokens == 0 {
        return Ok(F::zero());
    }
    let lo = F::one() - cfg.clip_epsilon;
    let hi = F::one() + cfg.clip_epsilon;
    let mut acc = F::zero();
    for (i, per_token) in ratios.iter().enumerate() {
        let a = advantages.values[i];
        for &s in per_token {
            let clipped = if s < lo {
                lo
            } else if s > hi {
                hi
            } else {
                s
            };
            let lhs = s * a;
            let rhs = clipped * a;
            acc += if lhs < rhs { lhs } else { rhs };
        }
    }
    Ok(acc / F::from_f64c(total_tokens as f64))
}

/// Which surrogate the gradient differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    /// The clipped, token-normalized objective ([`grpo_objective`]).
    Clipped,
    /// The plain estimator `A(q,r)·∇ log π(r|q)` with the group-mean baseline,
    /// averaged over the group.
    Unclipped,
}

/// Analytic gradient of the chosen surrogate with respect to the policy
/// parameters. Zero-variance groups yield an all-zero gradient.
pub fn policy_gradient<F: Scalar>(
    group: &RolloutGroup<F>,
    policy: &ToyPolicy<F>,
    cfg: &GrpoConfig<F>,
    mode: GradientMode,
) -> Result<Vec<F>, RlvrError> {
    match mode {
        GradientMode::Clipped => clipped_gradient(group, policy, cfg),
        GradientMode::Unclipped => {
            group.validate()?;
            let mean = group.mean_reward();
            let advantages: Vec<F> = group.rewards.iter().map(|&r| r - mean).collect();
            eq1_gradient_with_advantages(group, policy, &advantages)
        }
    }
}

fn clipped_gradient<F: Scalar>(
    group: &RolloutGroup<F>,
    policy: &ToyPolicy<F>,
    cfg: &GrpoConfig<F>,
) -> Result<Vec<F>, RlvrError> {
    let advantages = group_advantage(&group.rewards, cfg)?;
    let mut grad = vec![F::zero(); policy.num_params()];
    if advantages.zero_variance {
        return Ok(grad);
    }
    let ratios = importance_ratios(group, policy)?;
    let total_tokens: usize = group.responses.iter().map(Vec::len).sum();
    if total_tokens == 0 {
        return Ok(grad);
    }
    let norm = F::from_f64c(total_tokens as f64);
    let lo = F::one() - cfg.clip_epsilon;
    let hi = F::one() + cfg.clip_epsilon;
    for (i, tokens) in group.responses.iter().enumerate() {
        let a = advantages.values[i];
        if a == F::zero() {
            continue;
        }
        for (t, &token) in tokens.iter().enumerate() {
            let s = ratios[i][t];
            // min(s·a, clip(s)·a) is flat exactly where the clipped branch is
            // selected: above 1+ε for positive advantage, below 1−ε for negative.
            let active = if a > F::zero() { s < hi } else { s > lo };
            if !active {
                continue;
            }
            let coeff = a * s / norm;
            accumulate_log_prob_grad(policy, tokens, t, token, coeff, &mut grad);
        }
    }
    Ok(grad)
}

/// Gradient of `(1/G) Σ_i A_i Σ_t log π(r_{i,t} | ...)` for caller-supplied
/// advantages; the building block behind [`GradientMode::Unclipped`].
pub fn eq1_gradient_with_advantages<F: Scalar>(
    group: &RolloutGroup<F>,
    policy: &ToyPolicy<F>,
    advantages: &[F],
) -> Result<Vec<F>, RlvrError> {
    if advantages.len() != group.responses.len() {
        return Err(RlvrError::Mismatch("one advantage per response".into()));
    }
    let mut grad = vec![F::zero(); policy.num_params()];
    let norm = F::from_f64c(group.responses.len() as f64);
    for (i, tokens) in group.responses.iter().enumerate() {
        let a = advantages[i];
        if a == F::zero() {
            continue;
        }
        let coeff = a / norm;
        for (t, &token) in tokens.iter().enumerate() {
            accumulate_log_prob_grad(policy, tokens, t, token, coeff, &mut grad);
        }
    }
    Ok(grad)
}

/// The matching scalar surrogate for [`GradientMode::Unclipped`], used by the
/// finite-difference checks.
pub fn eq1_objective<F: Scalar>(
    group: &RolloutGroup<F>,
    policy: &ToyPolicy<F>,
    advantages: &[F],
) -> F {
    let norm = F::from_f64c(group.responses.len() as f64);
    let mut acc = F::zero();
    for (i, tokens) in group.responses.iter().enumerate() {
        let lp: F = policy.response_log_probs(tokens).into_iter().sum();
        acc += advantages[i] * lp;
    }
    acc / norm
}

/// Adds `coeff · ∂ log π(token | ctx) / ∂θ` into `grad`.
fn accumulate_log_prob_grad<F: Scalar>(
    policy: &ToyPolicy<F>,
    tokens: &[u32],
    t: usize,
    token: u32,
    coeff: F,
    grad: &mut [F],
) {
    let ctx = policy.context_at(tokens, t);
    let probs = policy.distribution(&ctx);
    let token = token as usize;
    grad[policy.bias_index(token)] += coeff;
    for (v, &p) in probs.iter().enumerate() {
        grad[policy.bias_index(v)] -= coeff * p;
    }
    for (slot, &c) in ctx.iter().enumerate() {
        let c = c as usize;
        grad[policy.weight_index(slot, c, token)] += coeff;
        for (v, &p) in probs.iter().enumerate() {
            grad[policy.weight_index(slot, c, v)] -= coeff * p;
        }
    }
}

/// Aggregate bookkeeping of a dynamic-sampling pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub oversampled: usize,
    pub kept: usize,
    pub solve_all: usize,
    pub solve_none: usize,
    /// Fraction of solve_all prompts among all over-sampled prompts.
    pub solve_all_ratio: f64,
    /// Histogram of exact pass rates, keyed "passes/samples".
    pub pass_rate_histogram: BTreeMap<String, usize>,
}

impl BatchReport {
    pub fn from_pass_counts(counts: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut report = BatchReport {
            oversampled: 0,
            kept: 0,
            solve_all: 0,
            solve_none: 0,
            solve_all_ratio: 0.0,
            pass_rate_histogram: BTreeMap::new(),
        };
        for (passes, samples) in counts {
            report.oversampled += 1;
            *report
                .pass_rate_histogram
                .entry(format!("{passes}/{samples}"))
                .or_insert(0) += 1;
            if samples > 0 && passes == samples {
                report.solve_all += 1;
            } else if passes == 0 {
                report.solve_none += 1;
            } else {
                report.kept += 1;
            }
        }
        report.recompute_ratio();
        report
    }

    fn recompute_ratio(&mut self) {
        self.solve_all_ratio = if self.oversampled > 0 {
            self.solve_all as f64 / self.oversampled as f64
        } else {
            0.0
        };
    }

    /// Associative, order-independent combination of two reports.
    pub fn merge(mut self, other: &BatchReport) -> BatchReport {
        self.oversampled += other.oversampled;
        self.kept += other.kept;
        self.solve_all += other.solve_all;
        self.solve_none += other.solve_none;
        for (key, count) in &other.pass_rate_histogram {
            *self.pass_rate_histogram.entry(key.clone()).or_insert(0) += count;
        }
        self.recompute_ratio();
        self
    }

    /// `kept + solve_all + solve_none` must tile the oversampled batch.
    pub fn telescopes(&self) -> bool {
        self.kept + self.solve_all + self.solve_none == self.oversampled
    }
}

/// Keeps exactly the groups with pass rate strictly between 0 and 1.
pub fn dynamic_sample<F: Scalar>(
    groups: Vec<RolloutGroup<F>>,
) -> (Vec<RolloutGroup<F>>, BatchReport) {
    let report = BatchReport::from_pass_counts(groups.iter().map(|g| {
        let passes = g.rewards.iter().filter(|&&r| r == F::one()).count();
        (passes, g.rewards.len())
    }));
    let kept = groups
        .into_iter()
        .filter(|g| {
            let mean = g.mean_reward();
            mean > F::zero() && mean < F::one()
        })
        .collect();
    (kept, report)
}

/// Loads rollout records from JSONL, one group per line.
pub fn load_rollout_groups<F: Scalar + serde::de::DeserializeOwned>(
    path: &std::path::Path,
) -> std::io::Result<Vec<RolloutGroup<F>>> {
    use std::io::BufRead;
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut groups = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let group: RolloutGroup<F> = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("line {}: {e}", idx + 1),
            )
        })?;
        groups.push(group);
    }
    Ok(groups)
}

/// Writes rollout records as JSONL with a stable field order.
pub fn save_rollout_groups<F: Scalar + Serialize>(
    path: &std::path::Path,
    groups: &[RolloutGroup<F>],
) -> std::io::Result<()> {
    use std::io::Write;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for group in groups {
        let line = serde_json::to_string(group).expect("rollout group serializes");
        writeln!(file, "{line}")?;
    }
    Ok(())
}

/// Mean over all prompts and samples of a rectangular reward matrix.
pub fn avg_at_k<F: Scalar>(reward_matrix: &[Vec<F>]) -> Result<F, RlvrError> {
    if reward_matrix.is_empty() {
        return Ok(F::zero());
    }
    let k = reward_matrix[0].len();
    if reward_matrix.iter().any(|row| row.len() != k) {
        return Err(RlvrError::Ragged);
    }
    if k == 0 {
        return Ok(F::zero());
    }
    let total: F = reward_matrix.iter().flatten().cloned().sum();
    Ok(total / F::from_f64c((reward_matrix.len() * k) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> GrpoConfig<f64> {
        GrpoConfig::default()
    }

    fn group_with(
        policy: &ToyPolicy<f64>,
        responses: Vec<Vec<u32>>,
        rewards: Vec<f64>,
    ) -> RolloutGroup<f64> {
        let old_logprobs = responses
            .iter()
            .map(|r| policy.response_log_probs(r))
            .collect();
        RolloutGroup {
            prompt_id: "p".into(),
            responses,
            rewards,
            old_logprobs,
        }
    }

    #[test]
    fn advantages_for_one_in_four() {
        let out = group_advantage(&[1.0, 0.0, 0.0, 0.0], &cfg()).unwrap();
        assert!(!out.zero_variance);
        let expected = [1.7321, -0.5774, -0.5774, -0.5774];
        for (got, want) in out.values.iter().zip(expected) {
            assert!((got - want).abs() < 1e-4, "{got} vs {want}");
        }
    }

    #[test]
    fn advantages_for_half_and_half() {
        let out = group_advantage(&[1.0, 1.0, 0.0, 0.0], &cfg()).unwrap();
        assert_eq!(out.values, vec![1.0, 1.0, -1.0, -1.0]);
    }

    #[test]
    fn constant_rewards_are_zero_variance() {
        let out = group_advantage(&[1.0, 1.0, 1.0, 1.0], &cfg()).unwrap();
        assert!(out.zero_variance);
        assert!(out.values.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn single_response_group_is_an_error() {
        assert!(matches!(
            group_advantage(&[1.0], &cfg()),
            Err(RlvrError::GroupTooSmall(1))
        ));
    }

    #[test]
    fn centering_and_unit_std() {
        let out = group_advantage(&[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0], &cfg()).unwrap();
        let mean: f64 = out.values.iter().sum::<f64>() / out.values.len() as f64;
        assert!(mean.abs() < 1e-10);
        let var: f64 =
            out.values.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / out.values.len() as f64;
        assert!((var - 1.0).abs() < 1e-10);
    }

    #[test]
    fn identical_policies_have_unit_ratios() {
        let policy = ToyPolicy::<f64>::random(4, 2, 1, 1.0);
        let group = group_with(&policy, vec![vec![0, 1, 2], vec![3, 2, 1]], vec![1.0, 0.0]);
        let ratios = importance_ratios(&group, &policy).unwrap();
        for row in ratios {
            for r in row {
                assert!((r - 1.0).abs() < 1e-12);
                assert!(r > 0.0);
            }
        }
    }

    #[test]
    fn weight_perturbation_only_moves_conditioned_positions() {
        let policy = ToyPolicy::<f64>::random(4, 2, 2, 0.5);
        let mut moved = policy.clone();
        // Perturb the weight for context token 1 in the last slot.
        let idx = moved.weight_index(1, 1, 2);
        moved.params_mut()[idx] += 0.3;
        let tokens = vec![1u32, 3, 1, 0];
        let group = group_with(&policy, vec![tokens.clone(), vec![0, 0, 0, 0]], vec![1.0, 0.0]);
        let ratios = importance_ratios(&group, &moved).unwrap();
        // Positions t where context slot 1 (previous token) is 1: t=1 and t=3.
        for (t, r) in ratios[0].iter().enumerate() {
            let prev_is_one = t >= 1 && tokens[t - 1] == 1;
            if prev_is_one {
                assert!((r - 1.0).abs() > 1e-6, "t={t} should move");
            } else {
                assert!((r - 1.0).abs() < 1e-12, "t={t} should not move");
            }
        }
        assert!(ratios[1].iter().all(|r| (r - 1.0).abs() < 1e-12));
    }

    #[test]
    fn unit_ratio_objective_is_token_weighted_advantage() {
        let policy = ToyPolicy::<f64>::random(4, 2, 3, 1.0);
        let group = group_with(
            &policy,
            vec![vec![0, 1], vec![2, 3, 1], vec![1], vec![2, 2]],
            vec![1.0, 0.0, 0.0, 1.0],
        );
        let adv = group_advantage(&group.rewards, &cfg()).unwrap().values;
        let lens = [2.0, 3.0, 1.0, 2.0];
        let expected: f64 =
            adv.iter().zip(lens).map(|(a, l)| a * l).sum::<f64>() / lens.iter().sum::<f64>();
        let got = grpo_objective(&group, &policy, &cfg()).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_group_zero_objective_and_gradient() {
        let policy = ToyPolicy::<f64>::random(4, 2, 4, 1.0);
        let group = group_with(&policy, vec![vec![0, 1], vec![2, 3]], vec![1.0, 1.0]);
        assert_eq!(grpo_objective(&group, &policy, &cfg()).unwrap(), 0.0);
        let grad = policy_gradient(&group, &policy, &cfg(), GradientMode::Clipped).unwrap();
        assert!(grad.iter().all(|g| *g == 0.0));
        let grad = policy_gradient(&group, &policy, &cfg(), GradientMode::Unclipped).unwrap();
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn unclipped_gradient_is_linear_in_advantages() {
        let policy = ToyPolicy::<f64>::random(4, 2, 5, 1.0);
        let group = group_with(&policy, vec![vec![0, 1, 2], vec![3, 1, 0]], vec![1.0, 0.0]);
        let adv = vec![0.7, -0.4];
        let scaled: Vec<f64> = adv.iter().map(|a| a * 3.5).collect();
        let g1 = eq1_gradient_with_advantages(&group, &policy, &adv).unwrap();
        let g2 = eq1_gradient_with_advantages(&group, &policy, &scaled).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a * 3.5 - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dynamic_sampling_keeps_only_mixed_groups() {
        let policy = ToyPolicy::<f64>::zeros(4, 1);
        let make = |rewards: Vec<f64>| {
            let responses = vec![vec![0u32]; rewards.len()];
            group_with(&policy, responses, rewards)
        };
        let groups = vec![
            make(vec![0.0; 8]),
            make(vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]),
            make(vec![1.0; 8]),
        ];
        let (kept, report) = dynamic_sample(groups);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].rewards.iter().filter(|&&r| r == 1.0).count(), 4);
        assert_eq!(report.solve_all, 1);
        assert_eq!(report.solve_none, 1);
        assert!(report.telescopes());
    }

    #[test]
    fn dynamic_sampling_is_idempotent() {
        let policy = ToyPolicy::<f64>::zeros(4, 1);
        let make = |rewards: Vec<f64>| {
            let responses = vec![vec![0u32]; rewards.len()];
            group_with(&policy, responses, rewards)
        };
        let groups = vec![make(vec![1.0, 0.0]), make(vec![0.0, 0.0])];
        let (kept, _) = dynamic_sample(groups);
        let kept_again = dynamic_sample(kept.clone());
        assert_eq!(kept_again.0, kept);
    }

    #[test]
    fn avg_at_k_examples() {
        let six_of_eight = vec![vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]];
        assert_eq!(avg_at_k::<f64>(&six_of_eight).unwrap(), 0.75);
        let zeros = vec![vec![0.0; 4]; 3];
        assert_eq!(avg_at_k::<f64>(&zeros).unwrap(), 0.0);
        let ragged = vec![vec![1.0], vec![1.0, 0.0]];
        assert!(avg_at_k::<f64>(&ragged).is_err());
    }

    #[test]
    fn reward_matches_a_numeric_oracle_on_randomized_pairs() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(321);
        for _ in 0..1000 {
            let num: i64 = rng.gen_range(-500..500);
            let den: i64 = rng.gen_range(1..40);
            let gt = format!("{num}/{den}");
            let perturb: bool = rng.gen_bool(0.5);
            let answer = if perturb {
                // Off by a small nonzero rational.
                format!("{}/{den}", num + rng.gen_range(1..5))
            } else {
                // An equivalent unreduced form.
                let k: i64 = rng.gen_range(2..9);
                format!("{}/{}", num * k, den * k)
            };
            let graded = grade_answer(&gt, &answer);
            let oracle_equal = {
                let a = parse_answer(&gt).unwrap().eval_f64().unwrap();
                let b = parse_answer(&answer).unwrap().eval_f64().unwrap();
                (a - b).abs() < 1e-12
            };
            assert_eq!(graded == 1, oracle_equal, "gt {gt} vs {answer}");
        }
    }

    #[test]
    fn rollout_records_round_trip_as_jsonl() {
        let policy = ToyPolicy::<f64>::random(4, 2, 8, 1.0);
        let groups: Vec<RolloutGroup<f64>> = (0..3)
            .map(|i| {
                group_with(
                    &policy,
                    vec![vec![0, 1, 2], vec![3, 1]],
                    vec![f64::from(i % 2), 1.0],
                )
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rollouts.jsonl");
        save_rollout_groups(&path, &groups).unwrap();
        let loaded: Vec<RolloutGroup<f64>> = load_rollout_groups(&path).unwrap();
        assert_eq!(loaded, groups);
        let first_line = std::fs::read_to_string(&path)
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string();
        for key in ["prompt_id", "responses", "rewards", "old_logprobs"] {
            assert!(first_line.contains(key), "missing {key}");
        }
    }

    #[test]
    fn grading_uses_answer_equivalence() {
        assert_eq!(grade_answer("3/4", "6/8"), 1);
        assert_eq!(grade_answer("7", "8"), 0);
        assert_eq!(grade_answer("7", "7.0"), 1);
        assert_eq!(grade_answer("7", "seven"), 1);
        // Unparseable ground truth falls back to normalized text equality.
        assert_eq!(grade_answer("16p-31", "16p-31"), 1);
        assert_eq!(grade_answer("16p-31", "16p-30"), 0);
    }
}
