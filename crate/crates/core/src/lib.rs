//! Tooling for turning a corpus of verifiable (question, answer) prompts into
//! multi-step compositional prompts, filtering them through a staged
//! self-verification chain, and auditing the RL side of the pipeline (group
//! advantages, clipped objectives, dynamic sampling, difficulty probes, and a
//! depth curriculum).
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`corpus`]: data model and JSONL persistence for prompts and datasets.
//! - [`answer`]: exact answer values, arithmetic, and equivalence checking.
//! - [`composer`]: the three-step composition operator and its depth-K recursion,
//!   with an LLM backend and a deterministic template backend.
//! - [`verify`]: the staged verification filter chain and the recovery judge.
//! - [`dataset`]: candidate-set construction, pair enumeration, dataset builds,
//!   and the depth curriculum.
//! - [`rlvr`]: reward, advantage, objective, gradient, and sampling kernels,
//!   generic over the float type.
//! - [`gateway`]: the single egress point to LLM inference endpoints.

pub mod answer;
pub mod composer;
pub mod corpus;
pub mod dataset;
pub mod gateway;
pub mod rlvr;
pub mod scalar;
pub mod verify;

pub use scalar::Scalar;

/// Concrete f64 instantiations of the generic RL kernels.
pub type ToyPolicy64 = rlvr::ToyPolicy<f64>;
pub type RolloutGroup64 = rlvr::RolloutGroup<f64>;
pub type GrpoConfig64 = rlvr::GrpoConfig<f64>;
