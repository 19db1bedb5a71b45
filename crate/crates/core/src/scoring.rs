//! Transition utility `φ = wᵀz` and prefix-aggregated global scores.
//!
//! Feature order (also the order of the configured weight vector):
//!
//! | idx | feature      | idx | feature      |
//! |-----|--------------|-----|--------------|
//! | 0   | r_imm (mean) | 6   | p_safe       |
//! | 1   | r_fut (mean) | 7   | h_ctx        |
//! | 2   | p_pos        | 8   | −p_cfail     |
//! | 3   | p_succ       | 9   | −p_corfail   |
//! | 4   | p_comp       | 10  | −p_neg       |
//! | 5   | p_corr       | 11  | −ρ_risk      |

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::memory::{laplace, BucketKey, GlobalId, MemoryBank, MemoryError, NodeStats, TransitionEdge, TransitionStats};
use crate::state::DecisionState;

pub const FEATURE_COUNT: usize = 12;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "r_imm", "r_fut", "p_pos", "p_succ", "p_comp", "p_corr", "p_safe", "h_ctx", "neg_p_cfail",
    "neg_p_corfail", "neg_p_neg", "neg_rho_risk",
];

/// Improvement, reliability and risk features of one transition. Rates are
/// stored un-negated; [`TransitionFeatures::vector`] applies the signs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionFeatures {
    pub r_imm: f64,
    pub r_fut: f64,
    pub p_pos: f64,
    pub p_succ: f64,
    pub p_comp: f64,
    pub p_corr: f64,
    pub p_safe: f64,
    pub h_ctx: f64,
    pub p_cfail: f64,
    pub p_corfail: f64,
    pub p_neg: f64,
    pub rho_risk: f64,
}

impl TransitionFeatures {
    pub fn from_stats(stats: &TransitionStats, bucketed: bool) -> Self {
        let n = stats.n;
        TransitionFeatures {
            r_imm: stats.mean_imm_gain(),
            r_fut: stats.mean_fut_gain(),
            p_pos: laplace(stats.pos, n),
            p_succ: laplace(stats.succ, n),
            p_comp: laplace(stats.comp, n),
            p_corr: laplace(stats.corr, n),
            p_safe: laplace(stats.safe, n),
            h_ctx: if bucketed { 1.0 } else { 0.0 },
            p_cfail: laplace(stats.cfail, n),
            p_corfail: laplace(stats.corfail, n),
            p_neg: laplace(stats.neg, n),
            rho_risk: stats.risk(),
        }
    }

    /// Node-level template: no future gain, no bucket context. Nodes keep no
    /// regression counter, so "executable but not faster" stands in for the
    /// negative and risk rates.
    pub fn from_node(stats: &NodeStats) -> Self {
        let n = stats.attempts;
        let r_imm = if n == 0 { 0.0 } else { stats.gain_log_sum / n as f64 };
        let not_faster = stats.correct_passes - stats.successes.min(stats.correct_passes);
        TransitionFeatures {
            r_imm,
            r_fut: 0.0,
            p_pos: laplace(stats.successes, n),
            p_succ: laplace(stats.successes, n),
            p_comp: laplace(stats.compile_passes, n),
            p_corr: laplace(stats.correct_passes, n),
            p_safe: laplace(stats.successes, n),
            h_ctx: 0.0,
            p_cfail: laplace(n - stats.compile_passes, n),
            p_corfail: laplace(stats.compile_passes - stats.correct_passes, n),
            p_neg: laplace(not_faster, n),
            rho_risk: laplace(not_faster, stats.correct_passes),
        }
    }

    /// The feature vector `z` in the documented order.
    pub fn vector(&self) -> [f64; FEATURE_COUNT] {
        [
            self.r_imm,
            self.r_fut,
            self.p_pos,
            self.p_succ,
            self.p_comp,
            self.p_corr,
            self.p_safe,
            self.h_ctx,
            -self.p_cfail,
            -self.p_corfail,
            -self.p_neg,
            -self.rho_risk,
        ]
    }
}

/// Features of `edge` under `state`: the state's bucket when it has at least
/// `n_min` observations, the aggregate otherwise.
pub fn extract_features(edge: &TransitionEdge, state: &DecisionState, n_min: u64) -> TransitionFeatures {
    features_for_bucket(edge, &BucketKey::from_state(state), n_min)
}

pub fn features_for_bucket(edge: &TransitionEdge, key: &BucketKey, n_min: u64) -> TransitionFeatures {
    match edge.buckets.get(key) {
        Some(b) if b.n >= n_min => TransitionFeatures::from_stats(b, true),
        _ => TransitionFeatures::from_stats(&edge.aggregate, false),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScoringWeights(pub [f64; FEATURE_COUNT]);

impl Default for ScoringWeights {
    fn default() -> Self {
        ScoringWeights([1.0; FEATURE_COUNT])
    }
}

impl ScoringWeights {
    pub fn zeros() -> Self {
        ScoringWeights([0.0; FEATURE_COUNT])
    }

    pub fn unit(index: usize) -> Self {
        let mut w = [0.0; FEATURE_COUNT];
        w[index] = 1.0;
        ScoringWeights(w)
    }

    pub fn dot(&self, f: &TransitionFeatures) -> f64 {
        self.0.iter().zip(f.vector()).map(|(w, z)| w * z).sum()
    }
}

impl TryFrom<Vec<f64>> for ScoringWeights {
    type Error = String;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        let arr: [f64; FEATURE_COUNT] = v
            .try_into()
            .map_err(|v: Vec<f64>| format!("expected {FEATURE_COUNT} weights, got {}", v.len()))?;
        if arr.iter().any(|w| !w.is_finite()) {
            return Err("weights must be finite".into());
        }
        Ok(ScoringWeights(arr))
    }
}

impl From<ScoringWeights> for Vec<f64> {
    fn from(w: ScoringWeights) -> Self {
        w.0.to_vec()
    }
}

/// `α_i = exp(−λ(len − i))` for `i = 1..=len`, computed as `βᵏ` with
/// `β = e^{−λ}` so that `λ = ln 2` yields exact powers of two.
pub fn alpha_weights(prefix_len: usize, lambda: f64) -> Vec<f64> {
    let beta = (-lambda).exp();
    (1..=prefix_len)
        .map(|i| beta.powi((prefix_len - i) as i32))
        .collect()
}

/// Read-only scorer over a bank snapshot.
#[derive(Clone, Copy, Debug)]
pub struct Scorer<'a> {
    pub bank: &'a MemoryBank,
    pub weights: &'a ScoringWeights,
    pub n_min: u64,
}

impl<'a> Scorer<'a> {
    pub fn new(bank: &'a MemoryBank, weights: &'a ScoringWeights, n_min: u64) -> Self {
        Scorer { bank, weights, n_min }
    }

    /// `φ(from, to | s)`.
    pub fn phi(&self, from: &GlobalId, to: &GlobalId, state: &DecisionState) -> Result<f64, MemoryError> {
        let edge = self.bank.edge(from, to)?;
        Ok(self.weights.dot(&extract_features(edge, state, self.n_min)))
    }

    /// `Σ_i α_i φ(prefix_i, candidate | s)`.
    pub fn score_global(
        &self,
        candidate: &GlobalId,
        prefix: &[GlobalId],
        state: &DecisionState,
        lambda: f64,
    ) -> Result<f64, MemoryError> {
        let alphas = alpha_weights(prefix.len(), lambda);
        let mut total = 0.0;
        for (g, a) in prefix.iter().zip(alphas) {
            total += a * self.phi(g, candidate, state)?;
        }
        Ok(total)
    }

    /// Scores for the first step, from node-level statistics only.
    pub fn first_step_scores(&self) -> BTreeMap<GlobalId, f64> {
        self.bank
            .globals
            .iter()
            .map(|g| (g.id.clone(), self.weights.dot(&TransitionFeatures::from_node(&g.runtime))))
            .collect()
    }

    /// Scores for every global: node-level with an empty prefix, prefix
    /// aggregated otherwise.
    pub fn all_scores(
        &self,
        prefix: &[GlobalId],
        state: &DecisionState,
        lambda: f64,
    ) -> Result<BTreeMap<GlobalId, f64>, MemoryError> {
        if prefix.is_empty() {
            return Ok(self.first_step_scores());
        }
        self.bank
            .global_ids()
            .map(|g| Ok((g.clone(), self.score_global(g, prefix, state, lambda)?)))
            .collect()
    }
}
