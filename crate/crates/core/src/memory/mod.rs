//! Hierarchical transition graph (HTG) memory.
//!
//! A bank holds global direction nodes, local strategy nodes parented by a
//! global, and one transition edge for every ordered pair of globals
//! (self-loops included). Priors are static text; runtime statistics and
//! evidence are written back after every evaluated step.

mod defaults;
mod merge;
mod persist;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::state::{DecisionState, EvaluationFeedback, Symptom};

pub use defaults::{default_bank, init_default_bank};
pub use merge::{merge_banks, MergeError};
pub use persist::{load_bank, save_bank, PersistError, SCHEMA_VERSION};

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("unknown global node `{0}`")]
    UnknownGlobal(GlobalId),
    #[error("unknown local node `{0}`")]
    UnknownLocal(LocalId),
    #[error("local node `{local}` belongs to `{actual}`, not `{expected}`")]
    ParentMismatch {
        local: LocalId,
        expected: GlobalId,
        actual: GlobalId,
    },
    #[error("memory bank is read-only; fork it before recording outcomes")]
    ReadOnly,
    #[error("invalid feedback: {0}")]
    InvalidFeedback(String),
    #[error("invalid bank: {0}")]
    Invalid(String),
}

macro_rules! id_type {
    ($name:ident) => {
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                $name(s)
            }
        }
    };
}

id_type!(GlobalId);
id_type!(LocalId);

/// Runtime statistics shared by global and local nodes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub attempts: u64,
    pub successes: u64,
    pub compile_passes: u64,
    pub correct_passes: u64,
    pub gain_log_sum: f64,
    pub gain_count: u64,
    pub last_touched_step: u64,
}

impl NodeStats {
    pub fn success_rate(&self) -> f64 {
        laplace(self.successes, self.attempts)
    }

    fn observe(&mut self, step: u32, feedback: &EvaluationFeedback, c: &Classified) {
        self.attempts += 1;
        self.compile_passes += u64::from(feedback.compile);
        self.correct_passes += u64::from(feedback.compile && feedback.correct);
        self.successes += u64::from(c.success);
        if c.gain_measured {
            self.gain_log_sum += c.log_gain;
            self.gain_count += 1;
        }
        self.last_touched_step = u64::from(step);
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GlobalPrior {
    pub goal: String,
    #[serde(default)]
    pub triggers: Vec<Symptom>,
    #[serde(default)]
    pub applicable_patterns: Vec<String>,
    #[serde(default)]
    pub risks: Vec<String>,
    #[serde(default)]
    pub expected_gain_types: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalNode {
    pub id: GlobalId,
    pub label: String,
    pub prior: GlobalPrior,
    #[serde(default)]
    pub runtime: NodeStats,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LocalPrior {
    pub strategy: String,
    #[serde(default)]
    pub use_when: Vec<Symptom>,
    #[serde(default)]
    pub avoid_when: Vec<Symptom>,
    #[serde(default)]
    pub edit_recipe: String,
    #[serde(default)]
    pub verification_checklist: Vec<String>,
    #[serde(default)]
    pub common_failures: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeClass {
    CompileFail,
    CorrectFail,
    Regressed,
    Neutral,
    Improved,
}

impl fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutcomeClass::CompileFail => "compile_fail",
            OutcomeClass::CorrectFail => "correct_fail",
            OutcomeClass::Regressed => "regressed",
            OutcomeClass::Neutral => "neutral",
            OutcomeClass::Improved => "improved",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub task_id: String,
    pub step: u32,
    /// Per-node recording order; larger is more recent.
    pub seq: u64,
    pub outcome: OutcomeClass,
    pub log_gain: f64,
    pub summary: String,
    pub state_digest: BucketKey,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub positive: Vec<EvidenceItem>,
    pub negative: Vec<EvidenceItem>,
}

impl Evidence {
    /// All items, most recent first.
    pub fn most_recent_first(&self) -> Vec<&EvidenceItem> {
        let mut all: Vec<&EvidenceItem> = self.positive.iter().chain(&self.negative).collect();
        all.sort_by_key(|e| std::cmp::Reverse(e.seq));
        all
    }

    pub fn len(&self) -> usize {
        self.positive.len() + self.negative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalNode {
    pub id: LocalId,
    #[serde(rename = "parent_global_id")]
    pub parent: GlobalId,
    pub prior: LocalPrior,
    #[serde(default)]
    pub evidence: Evidence,
    #[serde(default)]
    pub runtime: NodeStats,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgePrior {
    pub rationale: String,
    #[serde(default)]
    pub pivot_conditions: Vec<Symptom>,
    #[serde(default)]
    pub risks: Vec<String>,
}

/// Observation counters for one transition (aggregate or bucket).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionStats {
    pub n: u64,
    pub imm_gain_sum: f64,
    pub fut_gain_sum: f64,
    pub pos: u64,
    pub succ: u64,
    pub comp: u64,
    pub corr: u64,
    pub safe: u64,
    pub cfail: u64,
    pub corfail: u64,
    pub neg: u64,
    pub risk_events: u64,
}

/// Laplace-smoothed rate `(count + 1) / (n + 2)`.
pub fn laplace(count: u64, n: u64) -> f64 {
    (count as f64 + 1.0) / (n as f64 + 2.0)
}

impl TransitionStats {
    fn observe(&mut self, feedback: &EvaluationFeedback, c: &Classified, failed_before: bool) {
        self.n += 1;
        self.imm_gain_sum += c.log_gain;
        self.pos += u64::from(c.outcome == OutcomeClass::Improved);
        self.neg += u64::from(c.outcome == OutcomeClass::Regressed);
        self.succ += u64::from(c.success);
        self.safe += u64::from(c.success && !failed_before);
        self.comp += u64::from(feedback.compile);
        self.corr += u64::from(feedback.compile && feedback.correct);
        self.cfail += u64::from(!feedback.compile);
        self.corfail += u64::from(feedback.compile && !feedback.correct);
        self.risk_events += u64::from(c.regressed);
    }

    pub fn mean_imm_gain(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.imm_gain_sum / self.n as f64
        }
    }

    pub fn mean_fut_gain(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.fut_gain_sum / self.n as f64
        }
    }

    /// Smoothed fraction of executable observations that regressed.
    pub fn risk(&self) -> f64 {
        laplace(self.risk_events, self.corr)
    }

    /// Every count is bounded by `n`, and `pos + neg ≤ n`.
    pub fn is_consistent(&self) -> bool {
        [
            self.pos,
            self.succ,
            self.comp,
            self.corr,
            self.safe,
            self.cfail,
            self.corfail,
            self.neg,
            self.risk_events,
        ]
        .iter()
        .all(|&x| x <= self.n)
            && self.pos + self.neg <= self.n
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Early,
    Mid,
    Late,
}

impl Stage {
    /// Steps 1–2 are early, 3–4 mid, 5 and later late.
    pub fn of_step(step: u32) -> Stage {
        match step {
            0..=2 => Stage::Early,
            3..=4 => Stage::Mid,
            _ => Stage::Late,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Stage::Early => "early",
            Stage::Mid => "mid",
            Stage::Late => "late",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CorrectnessStatus {
    NeverFailed,
    RecentlyFailed,
}

/// Discretized state digest keying the state-conditioned edge statistics.
/// Serialized as `stage|symptom|status`, e.g. `early|memory-bound|never_failed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BucketKey {
    pub stage: Stage,
    pub dominant_symptom: Option<Symptom>,
    pub correctness: CorrectnessStatus,
}

impl BucketKey {
    pub fn from_state(state: &DecisionState) -> BucketKey {
        BucketKey {
            stage: Stage::of_step(state.step),
            dominant_symptom: state.dominant_symptom(),
            correctness: if state.progress.failed_before {
                CorrectnessStatus::RecentlyFailed
            } else {
                CorrectnessStatus::NeverFailed
            },
        }
    }
}

impl fmt::Display for BucketKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sym = self.dominant_symptom.map_or("none", Symptom::tag);
        let status = match self.correctness {
            CorrectnessStatus::NeverFailed => "never_failed",
            CorrectnessStatus::RecentlyFailed => "recently_failed",
        };
        write!(f, "{}|{}|{}", self.stage.as_str(), sym, status)
    }
}

impl FromStr for BucketKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('|').collect();
        let [stage, sym, status] = parts.as_slice() else {
            return Err(format!("bucket key `{s}` must have three `|`-separated parts"));
        };
        let stage = match *stage {
            "early" => Stage::Early,
            "mid" => Stage::Mid,
            "late" => Stage::Late,
            other => return Err(format!("unknown stage `{other}`")),
        };
        let dominant_symptom = match *sym {
            "none" => None,
            other => Some(other.parse()?),
        };
        let correctness = match *status {
            "never_failed" => CorrectnessStatus::NeverFailed,
            "recently_failed" => CorrectnessStatus::RecentlyFailed,
            other => return Err(format!("unknown correctness status `{other}`")),
        };
        Ok(BucketKey { stage, dominant_symptom, correctness })
    }
}

impl Serialize for BucketKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BucketKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionEdge {
    pub src: GlobalId,
    pub dst: GlobalId,
    pub prior: EdgePrior,
    #[serde(default)]
    pub aggregate: TransitionStats,
    #[serde(default)]
    pub buckets: BTreeMap<BucketKey, TransitionStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankMeta {
    pub schema_version: String,
    pub created_from: String,
    pub writable: bool,
}

/// Knobs used when writing outcomes back into memory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MemoryParams {
    /// Relative margin a candidate must beat the incumbent best by to count
    /// as an improvement.
    pub timing_tolerance: f64,
    pub evidence_cap: usize,
    pub summary_max_chars: usize,
}

impl Default for MemoryParams {
    fn default() -> Self {
        MemoryParams {
            timing_tolerance: 0.01,
            evidence_cap: 32,
            summary_max_chars: 512,
        }
    }
}

/// Everything known about one evaluated step when writing it back.
#[derive(Clone, Debug)]
pub struct Observation<'a> {
    pub task_id: &'a str,
    pub step: u32,
    pub prev_global: Option<&'a GlobalId>,
    pub global: &'a GlobalId,
    pub local: &'a LocalId,
    pub state: &'a DecisionState,
    pub feedback: &'a EvaluationFeedback,
    /// Runtime of the implementation the candidate was derived from.
    pub runtime_before: Option<f64>,
    /// Runtime of the best implementation so far (the reference at first).
    pub incumbent_ms: Option<f64>,
    pub summary: String,
}

/// Result of classifying one piece of feedback.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Classified {
    pub outcome: OutcomeClass,
    pub log_gain: f64,
    /// Compiled, correct and strictly faster than the parent candidate.
    pub success: bool,
    /// Executable and strictly slower than the parent candidate.
    pub regressed: bool,
    pub gain_measured: bool,
}

pub fn classify(
    feedback: &EvaluationFeedback,
    runtime_before: Option<f64>,
    incumbent_ms: Option<f64>,
    tolerance: f64,
) -> Classified {
    let not_executable = |outcome| Classified {
        outcome,
        log_gain: 0.0,
        success: false,
        regressed: false,
        gain_measured: false,
    };
    if !feedback.compile {
        return not_executable(OutcomeClass::CompileFail);
    }
    let Some(after) = feedback.executable_runtime() else {
        return not_executable(OutcomeClass::CorrectFail);
    };
    let log_gain = runtime_before.map_or(0.0, |before| (before / after).ln());
    let success = runtime_before.is_some_and(|before| after < before);
    let regressed = runtime_before.is_some_and(|before| after > before);
    let improved = match incumbent_ms.or(runtime_before) {
        Some(best) => best / after > 1.0 + tolerance,
        None => false,
    };
    let worse = runtime_before.is_some_and(|before| after / before > 1.0 + tolerance);
    let outcome = if improved {
        OutcomeClass::Improved
    } else if worse {
        OutcomeClass::Regressed
    } else {
        OutcomeClass::Neutral
    };
    Classified {
        outcome,
        log_gain,
        success,
        regressed,
        gain_measured: runtime_before.is_some(),
    }
}

/// One finished step of a trajectory, used for future-gain credit.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRecord {
    pub step: u32,
    pub prev_global: Option<GlobalId>,
    pub global: GlobalId,
    pub bucket: BucketKey,
    pub log_gain: f64,
}

/// Discounted sum of the log-gains recorded after position `index`:
/// `Σ_{k>t} γ^(k−t) · gain_k`, with exponents taken from step numbers.
pub fn discounted_future_gain(trajectory: &[TransitionRecord], index: usize, gamma: f64) -> f64 {
    let here = trajectory[index].step;
    trajectory[index + 1..]
        .iter()
        .map(|later| gamma.powi((later.step - here) as i32) * later.log_gain)
        .sum()
}

/// The HTG triple plus run metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryBank {
    pub globals: Vec<GlobalNode>,
    pub locals: Vec<LocalNode>,
    pub edges: Vec<TransitionEdge>,
    pub meta: BankMeta,
}

impl MemoryBank {
    /// Builds a bank from nodes, creating every directed edge. `edge_priors`
    /// overrides the default prior for selected pairs.
    pub fn assemble(
        mut globals: Vec<GlobalNode>,
        mut locals: Vec<LocalNode>,
        edge_priors: &BTreeMap<(GlobalId, GlobalId), EdgePrior>,
        created_from: &str,
    ) -> Result<MemoryBank, MemoryError> {
        globals.sort_by(|a, b| a.id.cmp(&b.id));
        locals.sort_by(|a, b| a.id.cmp(&b.id));
        let mut edges = Vec::with_capacity(globals.len() * globals.len());
        for src in &globals {
            for dst in &globals {
                let prior = edge_priors
                    .get(&(src.id.clone(), dst.id.clone()))
                    .cloned()
                    .unwrap_or_else(|| default_edge_prior(src, dst));
                edges.push(TransitionEdge {
                    src: src.id.clone(),
                    dst: dst.id.clone(),
                    prior,
                    aggregate: TransitionStats::default(),
                    buckets: BTreeMap::new(),
                });
            }
        }
        let bank = MemoryBank {
            globals,
            locals,
            edges,
            meta: BankMeta {
                schema_version: SCHEMA_VERSION.to_string(),
                created_from: created_from.to_string(),
                writable: false,
            },
        };
        bank.validate()?;
        Ok(bank)
    }

    pub fn global_ids(&self) -> impl Iterator<Item = &GlobalId> {
        self.globals.iter().map(|g| &g.id)
    }

    fn global_index(&self, id: &GlobalId) -> Result<usize, MemoryError> {
        self.globals
            .binary_search_by(|g| g.id.cmp(id))
            .map_err(|_| MemoryError::UnknownGlobal(id.clone()))
    }

    fn local_index(&self, id: &LocalId) -> Result<usize, MemoryError> {
        self.locals
            .binary_search_by(|l| l.id.cmp(id))
            .map_err(|_| MemoryError::UnknownLocal(id.clone()))
    }

    pub fn global(&self, id: &GlobalId) -> Result<&GlobalNode, MemoryError> {
        Ok(&self.globals[self.global_index(id)?])
    }

    pub fn local(&self, id: &LocalId) -> Result<&LocalNode, MemoryError> {
        Ok(&self.locals[self.local_index(id)?])
    }

    fn edge_index(&self, src: &GlobalId, dst: &GlobalId) -> Result<usize, MemoryError> {
        let n = self.globals.len();
        Ok(self.global_index(src)? * n + self.global_index(dst)?)
    }

    pub fn edge(&self, src: &GlobalId, dst: &GlobalId) -> Result<&TransitionEdge, MemoryError> {
        Ok(&self.edges[self.edge_index(src, dst)?])
    }

    pub fn edge_mut(&mut self, src: &GlobalId, dst: &GlobalId) -> Result<&mut TransitionEdge, MemoryError> {
        let i = self.edge_index(src, dst)?;
        Ok(&mut self.edges[i])
    }

    /// Local nodes whose parent is `g`, in id order.
    pub fn children<'a>(&'a self, g: &'a GlobalId) -> impl Iterator<Item = &'a LocalNode> + 'a {
        self.locals.iter().filter(move |l| &l.parent == g)
    }

    /// Deep copy with writes enabled. The copy shares nothing with `self`.
    pub fn fork_writable(&self) -> MemoryBank {
        let mut fork = self.clone();
        fork.meta.writable = true;
        fork
    }

    /// Checks sortedness, id uniqueness, parent links, edge completeness and
    /// statistic bounds.
    pub fn validate(&self) -> Result<(), MemoryError> {
        let invalid = |msg: String| Err(MemoryError::Invalid(msg));
        if self.globals.windows(2).any(|w| w[0].id >= w[1].id) {
            return invalid("global ids must be unique and sorted".into());
        }
        if self.locals.windows(2).any(|w| w[0].id >= w[1].id) {
            return invalid("local ids must be unique and sorted".into());
        }
        for l in &self.locals {
            if self.global_index(&l.parent).is_err() {
                return invalid(format!("local `{}` has unknown parent `{}`", l.id, l.parent));
            }
        }
        let n = self.globals.len();
        if self.edges.len() != n * n {
            return invalid(format!("expected {} edges, found {}", n * n, self.edges.len()));
        }
        for (i, e) in self.edges.iter().enumerate() {
            let (src, dst) = (&self.globals[i / n].id, &self.globals[i % n].id);
            if &e.src != src || &e.dst != dst {
                return invalid(format!("edge slot {i} holds ({}, {}), expected ({src}, {dst})", e.src, e.dst));
            }
            if !e.aggregate.is_consistent() || e.buckets.values().any(|b| !b.is_consistent()) {
                return invalid(format!("edge ({src}, {dst}) has counts exceeding n"));
            }
            let bucket_n: u64 = e.buckets.values().map(|b| b.n).sum();
            if bucket_n > e.aggregate.n {
                return invalid(format!("edge ({src}, {dst}) buckets exceed aggregate"));
            }
        }
        let stats = self
            .globals
            .iter()
            .map(|g| (g.id.as_str(), &g.runtime))
            .chain(self.locals.iter().map(|l| (l.id.as_str(), &l.runtime)));
        for (id, s) in stats {
            if s.successes > s.attempts
                || s.compile_passes > s.attempts
                || s.correct_passes > s.compile_passes
                || s.gain_count > s.attempts
            {
                return invalid(format!("node `{id}` has inconsistent runtime counters"));
            }
        }
        Ok(())
    }

    /// Writes one evaluated step back into node statistics, local evidence
    /// and (from the second step on) the transition edge `(prev, g)`.
    pub fn record_outcome(
        &mut self,
        obs: &Observation<'_>,
        params: &MemoryParams,
    ) -> Result<Classified, MemoryError> {
        if !self.meta.writable {
            return Err(MemoryError::ReadOnly);
        }
        obs.feedback.validate().map_err(MemoryError::InvalidFeedback)?;
        let gi = self.global_index(obs.global)?;
        let li = self.local_index(obs.local)?;
        if &self.locals[li].parent != obs.global {
            return Err(MemoryError::ParentMismatch {
                local: obs.local.clone(),
                expected: obs.global.clone(),
                actual: self.locals[li].parent.clone(),
            });
        }
        let edge = match obs.prev_global {
            Some(prev) => Some(self.edge_index(prev, obs.global)?),
            None => None,
        };

        let c = classify(obs.feedback, obs.runtime_before, obs.incumbent_ms, params.timing_tolerance);
        let bucket = BucketKey::from_state(obs.state);

        self.globals[gi].runtime.observe(obs.step, obs.feedback, &c);
        let local = &mut self.locals[li];
        local.runtime.observe(obs.step, obs.feedback, &c);
        let item = EvidenceItem {
            task_id: obs.task_id.to_string(),
            step: obs.step,
            seq: local.runtime.attempts,
            outcome: c.outcome,
            log_gain: c.log_gain,
            summary: truncate_chars(&obs.summary, params.summary_max_chars),
            state_digest: bucket,
        };
        match c.outcome {
            OutcomeClass::Improved => push_capped(&mut local.evidence.positive, item, params.evidence_cap),
            OutcomeClass::Neutral => {}
            _ => push_capped(&mut local.evidence.negative, item, params.evidence_cap),
        }

        if let Some(ei) = edge {
            let failed_before = obs.state.progress.failed_before;
            let e = &mut self.edges[ei];
            e.aggregate.observe(obs.feedback, &c, failed_before);
            e.buckets
                .entry(bucket)
                .or_default()
                .observe(obs.feedback, &c, failed_before);
        }
        Ok(c)
    }

    /// Credits each observed transition with the discounted gains of the
    /// steps that followed it. Call once per finished trajectory.
    pub fn apply_future_gains(
        &mut self,
        trajectory: &[TransitionRecord],
        gamma: f64,
    ) -> Result<(), MemoryError> {
        if !self.meta.writable {
            return Err(MemoryError::ReadOnly);
        }
        for (i, rec) in trajectory.iter().enumerate() {
            let Some(prev) = &rec.prev_global else { continue };
            let future = discounted_future_gain(trajectory, i, gamma);
            let e = self.edge_mut(prev, &rec.global)?;
            e.aggregate.fut_gain_sum += future;
            if let Some(b) = e.buckets.get_mut(&rec.bucket) {
                b.fut_gain_sum += future;
            }
        }
        Ok(())
    }

    /// Sum of aggregate observation counts over all edges.
    pub fn total_edge_observations(&self) -> u64 {
        self.edges.iter().map(|e| e.aggregate.n).sum()
    }
}

fn default_edge_prior(src: &GlobalNode, dst: &GlobalNode) -> EdgePrior {
    let rationale = if src.id == dst.id {
        format!("Continue refining under {} after a step in the same direction.", dst.label)
    } else {
        format!("Move from {} to {}.", src.label, dst.label)
    };
    EdgePrior {
        rationale,
        pivot_conditions: Vec::new(),
        risks: Vec::new(),
    }
}

fn push_capped(list: &mut Vec<EvidenceItem>, item: EvidenceItem, cap: usize) {
    list.push(item);
    if list.len() > cap {
        let excess = list.len() - cap;
        list.drain(..excess);
    }
}

pub(crate) fn truncate_chars(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => s[..i].to_string(),
        None => s.to_string(),
    }
}

#[cfg(test)]
mod tests;
