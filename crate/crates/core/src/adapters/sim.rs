//! Desk-scale stand-in for compiling and timing kernels.
//!
//! A latent runtime is multiplied by per-strategy factors. Factors have a
//! diminishing-returns cap and may require other strategies to have been
//! applied first; failure rules turn certain orderings into compile or
//! correctness failures.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EvalRequest, Evaluator, EvaluatorError};
use crate::local::Action;
use crate::memory::{GlobalId, LocalId};
use crate::state::EvaluationFeedback;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub global: GlobalId,
    pub local: LocalId,
    /// Runtime multiplier, > 0. Below 1 speeds the kernel up.
    pub factor: f64,
    /// Applications beyond this count have `saturated_factor`.
    pub cap: u32,
    /// Multiplier once `cap` is used up; above 1 models over-application
    /// (register pressure, redundant passes).
    #[serde(default = "one")]
    pub saturated_factor: f64,
    /// Strategies that must already be applied for the factor to apply.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub requires: Vec<LocalId>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Compile,
    Correctness,
}

/// Applying `local` after every strategy in `after` fails with `kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRule {
    pub local: LocalId,
    #[serde(default)]
    pub after: Vec<LocalId>,
    pub kind: FailureKind,
}

/// How well a direction follows the directions applied before it. The
/// affinity of a step is the mean of pairwise affinities from every earlier
/// direction, the `k`-th most recent weighted `decay^(k-1)`. Higher affinity
/// means fewer failures and larger gains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    /// `(from, to, affinity)` in `[-1, 1]`; unlisted pairs are 0.
    pub affinity: Vec<(GlobalId, GlobalId, f64)>,
    pub decay: f64,
    /// Failure chance at zero affinity (and on the first step).
    pub base_failure: f64,
    /// Drop in failure chance per unit of affinity.
    pub failure_slope: f64,
    /// A speed-up factor `f` becomes `f^(1 + gain_slope * affinity)`.
    pub gain_slope: f64,
    /// Salt for the per-candidate failure draw.
    #[serde(default)]
    pub seed: u64,
}

impl TransitionModel {
    fn pair(&self, from: &GlobalId, to: &GlobalId) -> f64 {
        self.affinity
            .iter()
            .find(|(f, t, _)| f == from && t == to)
            .map_or(0.0, |(_, _, a)| *a)
    }

    /// Recency-weighted affinity of `to` after `history` (oldest first).
    pub fn affinity_after(&self, history: &[GlobalId], to: &GlobalId) -> f64 {
        let (mut num, mut den, mut w) = (0.0, 0.0, 1.0);
        for from in history.iter().rev() {
            num += w * self.pair(from, to);
            den += w;
            w *= self.decay;
        }
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    pub fn failure_chance(&self, affinity: f64) -> f64 {
        (self.base_failure - self.failure_slope * affinity).clamp(0.0, 0.95)
    }

    fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.decay) {
            return Err(format!("transition decay must be in [0, 1], got {}", self.decay));
        }
        if self.affinity.iter().any(|(_, _, a)| !(-1.0..=1.0).contains(a)) {
            return Err("transition affinities must be in [-1, 1]".into());
        }
        if ![self.base_failure, self.failure_slope, self.gain_slope].iter().all(|x| x.is_finite()) {
            return Err("transition parameters must be finite".into());
        }
        Ok(())
    }
}

/// Uniform draw in `[0, 1)` fixed by the salt, the task, the applied history
/// and the attempted action, so retrying the same edit on the same code
/// repeats the outcome.
fn attempt_draw(salt: u64, task: &str, applied: &[LocalId], action: &Action) -> f64 {
    let mut h = Sha256::new();
    h.update(salt.to_le_bytes());
    h.update(task.as_bytes());
    h.update([0]);
    for l in applied {
        h.update(l.as_str().as_bytes());
        h.update([0]);
    }
    h.update(action.global.as_str().as_bytes());
    h.update([1]);
    h.update(action.local.as_str().as_bytes());
    let d = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    (u64::from_le_bytes(b) >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedEnvironment {
    pub base_runtime_ms: f64,
    pub effects: Vec<Effect>,
    #[serde(default)]
    pub failures: Vec<FailureRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transitions: Option<TransitionModel>,
    #[serde(skip)]
    runtime_ms: Option<f64>,
    #[serde(skip)]
    applied: BTreeMap<LocalId, u32>,
    /// Successfully applied actions, oldest first.
    #[serde(skip)]
    history: Vec<(GlobalId, LocalId)>,
    /// Task being replayed; varies the transition draws between tasks.
    #[serde(skip)]
    task: String,
}

impl SimulatedEnvironment {
    pub fn new(base_runtime_ms: f64, effects: Vec<Effect>, failures: Vec<FailureRule>) -> Result<Self, String> {
        let env = SimulatedEnvironment {
            base_runtime_ms,
            effects,
            failures,
            runtime_ms: None,
            transitions: None,
            applied: BTreeMap::new(),
            history: Vec::new(),
            task: String::new(),
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.base_runtime_ms.is_finite() && self.base_runtime_ms > 0.0) {
            return Err(format!("base runtime must be positive, got {}", self.base_runtime_ms));
        }
        for e in &self.effects {
            if !(e.factor.is_finite() && e.factor > 0.0 && e.saturated_factor.is_finite() && e.saturated_factor > 0.0) {
                return Err(format!("effect factor for `{}` must be positive", e.local));
            }
        }
        if let Some(t) = &self.transitions {
            t.validate()?;
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.effects {
            if !seen.insert(&e.local) {
                return Err(format!("duplicate effect for `{}`", e.local));
            }
        }
        Ok(())
    }

    /// The shipped environment: one kernel at 10 ms and five directions
    /// with three effective strategies each. Strategies slow the kernel
    /// down when re-applied past their cap. On top of that a transition
    /// model makes each attempt's failure chance and gain depend on the
    /// directions applied before it, recent ones counting most: vectorized
    /// access sets up boundary and mapping work, fusion sets up throughput
    /// work, and unrolled or remapped code resists later tiling.
    pub fn default_env() -> Self {
        const MEM: &str = "g_memory_access_optimization";
        const BOUND: &str = "g_boundary_simplification";
        const THRU: &str = "g_throughput_optimization";
        const REUSE: &str = "g_data_reuse_locality";
        const PAR: &str = "g_parallel_mapping";
        let e = |g: &str, l: &str, factor: f64, cap: u32, requires: &[&str]| Effect {
            global: GlobalId::from(g),
            local: LocalId::from(l),
            factor,
            cap,
            saturated_factor: 1.05,
            requires: requires.iter().map(|r| LocalId::from(*r)).collect(),
        };
        let effects = vec![
            e(MEM, "l_g_mem_aligned_vec4_main_tail", 0.85, 1, &[]),
            e(MEM, "l_g_mem_ldg_readonly_texture_path", 0.93, 1, &[]),
            e(MEM, "l_g_mem_register_micro_tiling", 0.95, 1, &["l_g_mem_aligned_vec4_main_tail"]),
            e(BOUND, "l_g_bound_fast_path_predicate", 0.97, 1, &[]),
            e(BOUND, "l_g_bound_shape_dispatch", 0.96, 1, &["l_g_mem_aligned_vec4_main_tail"]),
            e(BOUND, "l_g_bound_tail_isolation", 0.90, 1, &["l_g_mem_aligned_vec4_main_tail"]),
            e(THRU, "l_g_thru_invariant_hoisting", 0.95, 1, &[]),
            e(THRU, "l_g_thru_register_accumulation", 0.92, 1, &["l_g_reuse_shared_memory_tiling"]),
            e(THRU, "l_g_thru_small_factor_unroll", 0.93, 2, &[]),
            e(REUSE, "l_g_reuse_light_epilogue_fusion", 0.80, 1, &[]),
            e(REUSE, "l_g_reuse_shared_memory_tiling", 1.04, 1, &[]),
            e(REUSE, "l_g_reuse_staged_reuse", 0.90, 1, &["l_g_reuse_shared_memory_tiling"]),
            e(PAR, "l_g_par_output_aligned_blocks", 0.96, 1, &[]),
            e(PAR, "l_g_par_thread_coarsening", 0.90, 1, &["l_g_mem_aligned_vec4_main_tail"]),
            e(PAR, "l_g_par_warp_lane_remap", 1.08, 1, &[]),
        ];
        let rule = |l: &str, after: &str, kind| FailureRule {
            local: LocalId::from(l),
            after: vec![LocalId::from(after)],
            kind,
        };
        let failures = vec![
            rule("l_g_thru_small_factor_unroll", "l_g_mem_register_micro_tiling", FailureKind::Compile),
            rule("l_g_par_warp_lane_remap", "l_g_reuse_shared_memory_tiling", FailureKind::Correctness),
        ];
        // Rows are the earlier direction, columns the attempted one.
        let order = [MEM, BOUND, THRU, REUSE, PAR];
        let table: [[f64; 5]; 5] = [
            [0.6, 1.0, -0.6, -0.6, 1.0],
            [0.6, -0.6, -0.6, -0.9, -1.0],
            [0.3, 0.6, -0.6, -1.0, -0.6],
            [1.0, 0.3, 1.0, 0.3, 0.6],
            [0.3, -1.0, 0.9, -1.0, -0.6],
        ];
        let mut affinity = Vec::new();
        for (i, from) in order.iter().enumerate() {
            for (j, to) in order.iter().enumerate() {
                affinity.push((GlobalId::from(*from), GlobalId::from(*to), table[i][j]));
            }
        }
        let mut env = SimulatedEnvironment::new(10.0, effects, failures).expect("default environment is valid");
        env.transitions = Some(TransitionModel {
            affinity,
            decay: 0.35,
            base_failure: 0.4,
            failure_slope: 1.2,
            gain_slope: 1.0,
            seed: 0,
        });
        env
    }

    /// Current latent runtime.
    pub fn runtime_ms(&self) -> f64 {
        self.runtime_ms.unwrap_or(self.base_runtime_ms)
    }

    pub fn applied_count(&self, local: &LocalId) -> u32 {
        self.applied.get(local).copied().unwrap_or(0)
    }

    /// Back to the base runtime with nothing applied.
    pub fn reset(&mut self) {
        self.runtime_ms = None;
        self.applied.clear();
        self.history.clear();
    }

    pub fn effect(&self, local: &LocalId) -> Option<&Effect> {
        self.effects.iter().find(|e| &e.local == local)
    }

    /// Applies one action. Failures leave the latent state unchanged.
    pub fn simulated_step(&mut self, action: &Action) -> EvaluationFeedback {
        let failing = self.failures.iter().find(|r| {
            r.local == action.local
                && r.after.iter().all(|a| self.applied_count(a) > 0)
        });
        if let Some(rule) = failing {
            return match rule.kind {
                FailureKind::Compile => EvaluationFeedback::compile_failure(format!(
                    "simulated build error applying {}",
                    action.local
                )),
                FailureKind::Correctness => EvaluationFeedback::incorrect(format!(
                    "simulated output mismatch applying {}",
                    action.local
                )),
            };
        }
        let count = self.applied_count(&action.local);
        let mut factor = match self.effect(&action.local) {
            Some(e) if count >= e.cap => e.saturated_factor,
            Some(e) if e.requires.iter().all(|r| self.applied_count(r) > 0) => e.factor,
            _ => 1.0,
        };
        if let Some(t) = &self.transitions {
            let globals: Vec<GlobalId> = self.history.iter().map(|(g, _)| g.clone()).collect();
            let affinity = t.affinity_after(&globals, &action.global);
            let locals: Vec<LocalId> = self.history.iter().map(|(_, l)| l.clone()).collect();
            let u = attempt_draw(t.seed, &self.task, &locals, action);
            let p = t.failure_chance(affinity);
            if u < p {
                return if u < p / 2.0 {
                    EvaluationFeedback::compile_failure(format!("simulated build error applying {}", action.local))
                } else {
                    EvaluationFeedback::incorrect(format!("simulated output mismatch applying {}", action.local))
                };
            }
            if factor < 1.0 {
                factor = factor.powf((1.0 + t.gain_slope * affinity).max(0.0));
            }
        }
        let runtime = self.runtime_ms() * factor;
        self.runtime_ms = Some(runtime);
        *self.applied.entry(action.local.clone()).or_insert(0) += 1;
        self.history.push((action.global.clone(), action.local.clone()));
        EvaluationFeedback::passed(runtime)
    }
}

const MARKER: &str = "// sim-apply: ";

/// The line the annotating backend appends for an action.
pub fn sim_apply_line(global: &GlobalId, local: &LocalId) -> String {
    format!("{MARKER}{global}/{local}")
}

/// Actions recorded in a source text, in order.
pub fn parse_sim_applies(source: &str) -> Vec<Action> {
    source
        .lines()
        .filter_map(|line| line.trim().strip_prefix(MARKER))
        .filter_map(|rest| rest.trim().split_once('/'))
        .map(|(g, l)| Action {
            global: GlobalId::from(g),
            local: LocalId::from(l),
            edit_plan: String::new(),
        })
        .collect()
}

/// Evaluates a candidate by replaying its `sim-apply` markers on a fresh
/// copy of the environment, so feedback is a pure function of the text.
#[derive(Clone, Debug)]
pub struct SimulatedEvaluator {
    env: SimulatedEnvironment,
}

impl SimulatedEvaluator {
    pub fn new(mut env: SimulatedEnvironment) -> Self {
        env.reset();
        SimulatedEvaluator { env }
    }

    pub fn replay(&self, source: &str) -> EvaluationFeedback {
        self.replay_for("", source)
    }

    /// Replays `source` as a candidate for `task_id`.
    pub fn replay_for(&self, task_id: &str, source: &str) -> EvaluationFeedback {
        let mut env = self.env.clone();
        env.task = task_id.to_string();
        let mut last = EvaluationFeedback::passed(env.runtime_ms());
        for action in parse_sim_applies(source) {
            last = env.simulated_step(&action);
            if !last.correct {
                break;
            }
        }
        last
    }
}

impl Evaluator for SimulatedEvaluator {
    fn evaluate(&mut self, req: &EvalRequest<'_>) -> Result<EvaluationFeedback, EvaluatorError> {
        Ok(self.replay_for(req.task_id, &req.candidate.source))
    }

    fn reference_runtime_ms(
        &mut self,
        _task_id: &str,
        _initial: &crate::state::CandidateImplementation,
        _timeout_ms: u64,
    ) -> Result<f64, EvaluatorError> {
        Ok(self.env.base_runtime_ms)
    }
}
