//! A log-linear toy policy, small enough for exact finite-difference checks.
//!
//! Next-token logits are a bias per token plus one weight per (context slot,
//! context token, output token) triple, over a vocabulary of at most 32 tokens.
//! Token 0 doubles as the padding token for positions before the response
//! starts. The parameter layout is fixed: biases first, then weights in
//! slot-major order.

use crate::scalar::Scalar;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub const MAX_VOCAB: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy<F> {
    vocab: usize,
    context: usize,
    params: Vec<F>,
}

impl<F: Scalar> ToyPolicy<F> {
    pub fn zeros(vocab: usize, context: usize) -> Self {
        assert!((2..=MAX_VOCAB).contains(&vocab), "vocab must be in 2..=32");
        assert!(context >= 1, "context window must be at least 1");
        let count = vocab + context * vocab * vocab;
        ToyPolicy {
            vocab,
            context,
            params: vec![F::zero(); count],
        }
    }

    /// Parameters drawn uniformly from [-scale, scale], deterministically.
    pub fn random(vocab: usize, context: usize, seed: u64, scale: f64) -> Self {
        let mut policy = Self::zeros(vocab, context);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut policy.params {
            *p = F::from_f64c(rng.gen_range(-scale..scale));
        }
        policy
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn context(&self) -> usize {
        self.context
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn bias_index(&self, token: usize) -> usize {
        token
    }

    pub fn weight_index(&self, slot: usize, ctx_token: usize, out_token: usize) -> usize {
        self.vocab + ((slot * self.vocab) + ctx_token) * self.vocab + out_token
    }

    /// Context window for position `t` of a response: the last `context` tokens
    /// of the prefix, left-padded with token 0.
    pub fn context_at(&self, tokens: &[u32], t: usize) -> Vec<u32> {
        let mut ctx = vec![0u32; self.context];
        for (slot, offset) in (0..self.context).rev().zip(1..) {
            if t >= offset {
                ctx[slot] = tokens[t - offset];
            } else {
                break;
            }
        }
        ctx
    }

    pub fn logits(&self, ctx: &[u32]) -> Vec<F> {
        debug_assert_eq!(ctx.len(), self.context);
        let mut out: Vec<F> = (0..self.vocab)
            .map(|v| self.params[self.bias_index(v)])
            .collect();
        for (slot, &c) in ctx.iter().enumerate() {
            let c = c as usize;
            for (v, logit) in out.iter_mut().enumerate() {
                *logit += self.params[self.weight_index(slot, c, v)];
            }
        }
        out
    }

    /// Softmax distribution over the next token.
    pub fn distribution(&self, ctx: &[u32]) -> Vec<F> {
        let logits = self.logits(ctx);
        let max = logits
            .iter()
            .cloned()
            .fold(F::neg_infinity(), |a, b| if b > a { b } else { a });
        let exps: Vec<F> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: F = exps.iter().cloned().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    /// Log-probability of each response token given its prefix.
    pub fn response_log_probs(&self, tokens: &[u32]) -> Vec<F> {
        let mut out = Vec::with_capacity(tokens.len());
        for (t, &token) in tokens.iter().enumerate() {
            let ctx = self.context_at(tokens, t);
            let logits = self.logits(&ctx);
            let max = logits
                .iter()
                .cloned()
                .fold(F::neg_infinity(), |a, b| if b > a { b } else { a });
            let log_norm = logits
                .iter()
                .map(|&l| (l - max).exp())
                .sum::<F>()
                .ln()
                + max;
            out.push(logits[token as usize] - log_norm);
        }
        out
    }

    /// Samples a response of the given length from the policy.
    pub fn sample_response(&self, len: usize, rng: &mut impl Rng) -> Vec<u32> {
        let mut tokens: Vec<u32> = Vec::with_capacity(len);
        for t in 0..len {
            let ctx = self.context_at(&tokens, t);
            let dist = self.distribution(&ctx);
            let roll = F::from_f64c(rng.gen_range(0.0..1.0));
            let mut acc = F::zero();
            let mut chosen = self.vocab - 1;
            for (v, &p) in dist.iter().enumerate() {
                acc += p;
                if roll < acc {
                    chosen = v;
                    break;
                }
            }
            tokens.push(chosen as u32);
        }
        tokens
    }
}
