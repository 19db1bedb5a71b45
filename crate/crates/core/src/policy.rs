//! ε-greedy softmax policy over global directions.

use std::collections::BTreeMap;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::GlobalId;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("no candidate global directions")]
    NoCandidates,
    #[error("score for `{0}` is not finite")]
    NonFiniteScore(GlobalId),
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub epsilon: f64,
    pub tau: f64,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            epsilon: 0.1,
            tau: 1.0,
            seed: 42,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(PolicyError::InvalidConfig(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(PolicyError::InvalidConfig(format!("tau {} must be positive", self.tau)));
        }
        Ok(())
    }
}

/// Selection probabilities, iterated in id order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalDistribution {
    pub probs: BTreeMap<GlobalId, f64>,
}

impl GlobalDistribution {
    pub fn prob(&self, id: &GlobalId) -> f64 {
        self.probs.get(id).copied().unwrap_or(0.0)
    }

    pub fn most_probable(&self) -> Option<&GlobalId> {
        self.probs
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(id, _)| id)
    }
}

/// `p(g) = ε/|G| + (1−ε)·softmax(score/τ)(g)`, stabilized by subtracting the
/// maximum score.
pub fn global_distribution(
    scores: &BTreeMap<GlobalId, f64>,
    config: &PolicyConfig,
) -> Result<GlobalDistribution, PolicyError> {
    config.validate()?;
    if scores.is_empty() {
        return Err(PolicyError::NoCandidates);
    }
    if let Some((id, _)) = scores.iter().find(|(_, s)| !s.is_finite()) {
        return Err(PolicyError::NonFiniteScore(id.clone()));
    }
    let max = scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.values().map(|s| ((s - max) / config.tau).exp()).collect();
    let z: f64 = exps.iter().sum();
    let uniform = 1.0 / scores.len() as f64;
    let probs = scores
        .keys()
        .zip(exps)
        .map(|(id, e)| (id.clone(), config.epsilon * uniform + (1.0 - config.epsilon) * e / z))
        .collect();
    Ok(GlobalDistribution { probs })
}

/// Seeded random stream for one task run.
#[derive(Clone, Debug)]
pub struct PolicyRng(ChaCha8Rng);

impl PolicyRng {
    pub fn new(seed: u64) -> Self {
        PolicyRng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Inverse-CDF sampling over the id-ordered candidates.
pub fn sample_global(dist: &GlobalDistribution, rng: &mut PolicyRng) -> GlobalId {
    let u = rng.next_unit();
    let mut cum = 0.0;
    let mut last_positive = None;
    for (id, p) in &dist.probs {
        if *p > 0.0 {
            last_positive = Some(id);
        }
        cum += p;
        if u < cum && *p > 0.0 {
            return id.clone();
        }
    }
    // Rounding can leave the total a hair below one.
    last_positive
        .or_else(|| dist.probs.keys().next_back())
        .expect("distribution is non-empty")
        .clone()
}
