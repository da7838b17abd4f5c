//! Runtime invariant suite for the RL kernels, driving the `grpo-check`
//! command. Each check builds randomized instances from a seed and reports
//! pass/fail with a short detail line.

use super::*;
use crate::scalar::Scalar;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, serde::Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn random_group<F: Scalar>(
    policy: &ToyPolicy<F>,
    rng: &mut ChaCha8Rng,
    g: usize,
    constant_rewards: Option<f64>,
) -> RolloutGroup<F> {
    let vocab = policy.vocab() as u32;
    let mut responses = Vec::with_capacity(g);
    let mut rewards = Vec::with_capacity(g);
    for i in 0..g {
        let len = rng.gen_range(1..=5);
        responses.push((0..len).map(|_| rng.gen_range(0..vocab)).collect::<Vec<_>>());
        let r = match constant_rewards {
            Some(v) => v,
            // Force a mixed group: first two responses disagree.
            None if i == 0 => 1.0,
            None if i == 1 => 0.0,
            None => f64::from(rng.gen_bool(0.5)),
        };
        rewards.push(F::from_f64c(r));
    }
    // The sampling policy is a jittered copy, so ratios differ from 1 while
    // staying strictly inside the clip range (no kinks near the ratios, which
    // would break finite-difference comparisons).
    let mut old_policy = policy.clone();
    for p in old_policy.params_mut() {
        *p += F::from_f64c(rng.gen_range(-0.02..0.02));
    }
    let old_logprobs = responses
        .iter()
        .map(|r| old_policy.response_log_probs(r))
        .collect();
    RolloutGroup {
        prompt_id: "check".into(),
        responses,
        rewards,
        old_logprobs,
    }
}

/// Runs the whole suite; deterministic for a given seed.
pub fn run_self_check(seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let cfg = GrpoConfig::<f64>::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Advantage centering and unit variance on mixed groups.
    {
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let g = rng.gen_range(2..=12);
            let rewards: Vec<f64> = {
                let mut r: Vec<f64> = (0..g).map(|_| f64::from(rng.gen_bool(0.5))).collect();
                r[0] = 1.0;
                if g > 1 {
                    r[1] = 0.0;
                }
                r
            };
            let adv = group_advantage(&rewards, &cfg).unwrap();
            let mean: f64 = adv.values.iter().sum::<f64>() / g as f64;
            let var: f64 = adv.values.iter().map(|a| a * a).sum::<f64>() / g as f64;
            worst = worst.max(mean.abs()).max((var - 1.0).abs());
        }
        out.push(CheckResult {
            name: "advantage-centering".into(),
            pass: worst < 1e-10,
            detail: format!("max |mean| / |var-1| deviation {worst:.2e}"),
        });
    }

    // Zero-variance groups: zero advantages, zero objective, zero gradient.
    {
        let policy = ToyPolicy::<f64>::random(6, 2, seed ^ 1, 0.8);
        let group = random_group(&policy, &mut rng, 6, Some(1.0));
        let adv = group_advantage(&group.rewards, &cfg).unwrap();
        let obj = grpo_objective(&group, &policy, &cfg).unwrap();
        let grad = policy_gradient(&group, &policy, &cfg, GradientMode::Clipped).unwrap();
        let pass = adv.zero_variance
            && adv.values.iter().all(|a| *a == 0.0)
            && obj == 0.0
            && grad.iter().all(|g| *g == 0.0);
        out.push(CheckResult {
            name: "zero-variance-zeroes".into(),
            pass,
            detail: "all-correct group yields zero advantage, objective, gradient".into(),
        });
    }

    // Clip bound: every per-token term is bounded by (1+eps)|A|.
    {
        let policy = ToyPolicy::<f64>::random(6, 2, seed ^ 2, 1.0);
        let mut pass = true;
        for _ in 0..20 {
            let group = random_group(&policy, &mut rng, 5, None);
            let adv = group_advantage(&group.rewards, &cfg).unwrap();
            let ratios = importance_ratios(&group, &policy).unwrap();
            for (i, per_token) in ratios.iter().enumerate() {
                let a = adv.values[i];
                for &s in per_token {
                    let clipped = s.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
                    let term = (s * a).min(clipped * a);
                    if term.abs() > (1.0 + cfg.clip_epsilon) * a.abs() + 1e-12 {
                        pass = false;
                    }
                }
            }
        }
        out.push(CheckResult {
            name: "clip-bound".into(),
            pass,
            detail: "per-token terms bounded by (1+eps)|A|".into(),
        });
    }

    // Objective equals an explicit straight-loop recomputation.
    {
        let policy = ToyPolicy::<f64>::random(5, 2, seed ^ 3, 1.0);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let group = random_group(&policy, &mut rng, 4, None);
            let fast = grpo_objective(&group, &policy, &cfg).unwrap();
            let adv = group_advantage(&group.rewards, &cfg).unwrap().values;
            let mut total_tokens = 0usize;
            let mut acc = 0.0;
            for (i, tokens) in group.responses.iter().enumerate() {
                total_tokens += tokens.len();
                let new_lp = policy.response_log_probs(tokens);
                for (t, _) in tokens.iter().enumerate() {
                    let s = (new_lp[t] - group.old_logprobs[i][t]).exp();
                    let clipped = s.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
                    acc += (s * adv[i]).min(clipped * adv[i]);
                }
            }
            let slow = acc / total_tokens as f64;
            worst = worst.max((fast - slow).abs());
        }
        out.push(CheckResult {
            name: "objective-loop-agreement".into(),
            pass: worst < 1e-10,
            detail: format!("max |fast - loop| = {worst:.2e}"),
        });
    }

    // Objective invariance to response order.
    {
        let policy = ToyPolicy::<f64>::random(5, 2, seed ^ 4, 1.0);
        let group = random_group(&policy, &mut rng, 6, None);
        let base = grpo_objective(&group, &policy, &cfg).unwrap();
        let mut permuted = group.clone();
        permuted.responses.rotate_left(2);
        permuted.rewards.rotate_left(2);
        permuted.old_logprobs.rotate_left(2);
        let rotated = grpo_objective(&permuted, &policy, &cfg).unwrap();
        out.push(CheckResult {
            name: "objective-order-invariance".into(),
            pass: (base - rotated).abs() < 1e-12,
            detail: format!("|base - rotated| = {:.2e}", (base - rotated).abs()),
        });
    }

    // Analytic gradient vs central finite differences.
    {
        let mut worst: f64 = 0.0;
        for trial in 0..5 {
            let policy = ToyPolicy::<f64>::random(4, 2, seed ^ (10 + trial), 0.7);
            let group = random_group(&policy, &mut rng, 4, None);
            let grad = policy_gradient(&group, &policy, &cfg, GradientMode::Clipped).unwrap();
            let h = 1e-6;
            #[allow(clippy::needless_range_loop)]
            for coord in 0..policy.num_params() {
                let mut plus = policy.clone();
                plus.params_mut()[coord] += h;
                let mut minus = policy.clone();
                minus.params_mut()[coord] -= h;
                let fd = (grpo_objective(&group, &plus, &cfg).unwrap()
                    - grpo_objective(&group, &minus, &cfg).unwrap())
                    / (2.0 * h);
                let denom = fd.abs().max(1.0);
                worst = worst.max((grad[coord] - fd).abs() / denom);
            }
        }
        out.push(CheckResult {
            name: "gradient-finite-difference".into(),
            pass: worst < 1e-5,
            detail: format!("max relative deviation {worst:.2e}"),
        });
    }

    // Dynamic sampling keeps exactly the mixed groups, and is idempotent.
    {
        let policy = ToyPolicy::<f64>::zeros(4, 1);
        let mut groups = Vec::new();
        for _ in 0..30 {
            let kind = rng.gen_range(0..3);
            let constant = match kind {
                0 => Some(0.0),
                1 => Some(1.0),
                _ => None,
            };
            groups.push(random_group(&policy, &mut rng, 4, constant));
        }
        let expected: Vec<bool> = groups
            .iter()
            .map(|g| {
                let mean = g.mean_reward();
                mean > 0.0 && mean < 1.0
            })
            .collect();
        let (kept, report) = dynamic_sample(groups.clone());
        let pass = kept.len() == expected.iter().filter(|e| **e).count()
            && report.telescopes()
            && dynamic_sample(kept.clone()).0 == kept;
        out.push(CheckResult {
            name: "dynamic-sampling-filter".into(),
            pass,
            detail: format!(
                "kept {} of {}, telescopes: {}",
                report.kept, report.oversampled, report.telescopes()
            ),
        });
    }

    // Reward is a pure function: repeated calls agree.
    {
        let cases = [("3/4", "6/8"), ("7", "seven"), ("2+sqrt(2)", "3.41"), ("x+y", "x+y")];
        let pass = cases.iter().all(|(gt, ans)| {
            let first = grade_answer(gt, ans);
            (0..5).all(|_| grade_answer(gt, ans) == first)
        });
        out.push(CheckResult {
            name: "reward-determinism".into(),
            pass,
            detail: "repeated grading agrees".into(),
        });
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn the_whole_suite_passes() {
        let results = run_self_check(2024);
        for result in &results {
            assert!(result.pass, "{}: {}", result.name, result.detail);
        }
        assert!(results.len() >= 8);
    }
}
