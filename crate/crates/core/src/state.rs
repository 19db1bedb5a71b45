//! Decision state, evaluation feedback and code symptom detection.
//!
//! The state is a compact per-step summary assembled from structured
//! feedback and search progress. Nothing here calls a backend; symptom
//! tagging goes through the [`SymptomDetector`] hook so a model-backed
//! summarizer can be swapped in.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::local::Action;

/// Observable code symptom. The declaration order is the priority order used
/// when picking the dominant symptom of a state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Symptom {
    BoundaryRisk,
    StridedAccess,
    RepeatedIndexComputation,
    BranchHeavyLoop,
    MemoryBound,
}

impl Symptom {
    pub const ALL: [Symptom; 5] = [
        Symptom::BoundaryRisk,
        Symptom::StridedAccess,
        Symptom::RepeatedIndexComputation,
        Symptom::BranchHeavyLoop,
        Symptom::MemoryBound,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Symptom::BoundaryRisk => "boundary-risk",
            Symptom::StridedAccess => "strided-access",
            Symptom::RepeatedIndexComputation => "repeated-index-computation",
            Symptom::BranchHeavyLoop => "branch-heavy-loop",
            Symptom::MemoryBound => "memory-bound",
        }
    }
}

impl fmt::Display for Symptom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Symptom {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Symptom::ALL
            .into_iter()
            .find(|sym| sym.tag() == s)
            .ok_or_else(|| format!("unknown symptom tag `{s}`"))
    }
}

/// Outcome of evaluating one candidate implementation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationFeedback {
    pub compile: bool,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<f64>,
    #[serde(default)]
    pub timeout: bool,
    #[serde(default)]
    pub failure_detail: String,
}

impl EvaluationFeedback {
    pub fn passed(runtime_ms: f64) -> Self {
        EvaluationFeedback {
            compile: true,
            correct: true,
            runtime_ms: Some(runtime_ms),
            timeout: false,
            failure_detail: String::new(),
        }
    }

    pub fn compile_failure(detail: impl Into<String>) -> Self {
        EvaluationFeedback {
            compile: false,
            correct: false,
            runtime_ms: None,
            timeout: false,
            failure_detail: detail.into(),
        }
    }

    pub fn incorrect(detail: impl Into<String>) -> Self {
        EvaluationFeedback {
            compile: true,
            correct: false,
            runtime_ms: None,
            timeout: false,
            failure_detail: detail.into(),
        }
    }

    pub fn timed_out(detail: impl Into<String>) -> Self {
        EvaluationFeedback {
            compile: true,
            correct: false,
            runtime_ms: None,
            timeout: true,
            failure_detail: detail.into(),
        }
    }

    /// Checks `correct ⇒ compile` and `runtime ⇒ compile ∧ correct ∧ ¬timeout`,
    /// and that a reported runtime is finite and positive.
    pub fn validate(&self) -> Result<(), String> {
        if self.correct && !self.compile {
            return Err("feedback marks a candidate correct that did not compile".into());
        }
        if let Some(rt) = self.runtime_ms {
            if !(self.compile && self.correct && !self.timeout) {
                return Err("runtime reported for a non-executable candidate".into());
            }
            if !(rt.is_finite() && rt > 0.0) {
                return Err(format!("runtime must be finite and positive, got {rt}"));
            }
        }
        Ok(())
    }

    /// Runtime of an executable candidate.
    pub fn executable_runtime(&self) -> Option<f64> {
        if self.compile && self.correct && !self.timeout {
            self.runtime_ms
        } else {
            None
        }
    }

    /// Short failure tag for the state summary.
    pub fn failure_tag(&self) -> &'static str {
        if !self.compile {
            "compile_error"
        } else if self.timeout {
            "timeout"
        } else if !self.correct {
            "correctness_mismatch"
        } else {
            "none"
        }
    }
}

/// A generated (or initial) implementation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateImplementation {
    pub source: String,
    pub origin_step: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lineage: Option<String>,
}

impl CandidateImplementation {
    pub fn initial(source: impl Into<String>) -> Self {
        CandidateImplementation {
            source: source.into(),
            origin_step: 0,
            lineage: None,
        }
    }

    /// Hex sha-256 prefix of the source text.
    pub fn digest(&self) -> String {
        source_digest(&self.source)
    }
}

pub fn source_digest(source: &str) -> String {
    use sha2::{Digest, Sha256};
    let hash = Sha256::digest(source.as_bytes());
    hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskContext {
    pub task_id: String,
    #[serde(default)]
    pub operator_type: String,
    #[serde(default)]
    pub input_shape_summary: String,
    pub reference_runtime_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSummary {
    pub compile: bool,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speedup: Option<f64>,
    pub timeout: bool,
    pub dominant_failure: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub best_speedup: f64,
    pub recent_improvement: f64,
    pub stagnation: bool,
    pub steps_since_improvement: u32,
    pub recent_globals: Vec<String>,
    pub recent_locals: Vec<String>,
    /// Whether any candidate in this trajectory failed to compile or failed
    /// correctness so far.
    pub failed_before: bool,
}

impl Default for Progress {
    fn default() -> Self {
        Progress {
            best_speedup: 1.0,
            recent_improvement: 1.0,
            stagnation: false,
            steps_since_improvement: 0,
            recent_globals: Vec::new(),
            recent_locals: Vec::new(),
            failed_before: false,
        }
    }
}

/// Compact decision state `s_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionState {
    pub step: u32,
    pub task: TaskContext,
    pub code_summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeedbackSummary>,
    pub progress: Progress,
    pub symptoms: Vec<Symptom>,
}

impl DecisionState {
    /// Highest-priority symptom, if any.
    pub fn dominant_symptom(&self) -> Option<Symptom> {
        self.symptoms.iter().copied().min()
    }
}

/// Pluggable code-symptom tagging.
pub trait SymptomDetector {
    fn detect(&self, source: &str) -> Vec<Symptom>;
}

/// Text heuristics over the implementation source.
#[derive(Clone, Copy, Debug, Default)]
pub struct RuleBasedSymptoms;

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static regex"))
}

impl SymptomDetector for RuleBasedSymptoms {
    fn detect(&self, source: &str) -> Vec<Symptom> {
        static STRIDED: OnceLock<Regex> = OnceLock::new();
        static INDEX_EXPR: OnceLock<Regex> = OnceLock::new();
        static IF_STMT: OnceLock<Regex> = OnceLock::new();
        static LOOP: OnceLock<Regex> = OnceLock::new();

        let mut out = Vec::new();

        let vectorized = source.contains("float4") || source.contains("reinterpret_cast");
        let has_tail = ["tail", "remainder", "% 4", "%4", "scalar fallback"]
            .iter()
            .any(|m| source.contains(m));
        if vectorized && !has_tail {
            out.push(Symptom::BoundaryRisk);
        }

        let strided = re(&STRIDED, r"\[\s*\w+\s*\*\s*\w+").is_match(source)
            || source.contains("stride");
        if strided {
            out.push(Symptom::StridedAccess);
        }

        let index_re = re(&INDEX_EXPR, r"blockIdx\.\w\s*\*\s*blockDim\.\w\s*\+\s*threadIdx\.\w");
        if index_re.find_iter(source).count() >= 2 {
            out.push(Symptom::RepeatedIndexComputation);
        }

        let ifs = re(&IF_STMT, r"\bif\s*\(").find_iter(source).count();
        let loops = re(&LOOP, r"\b(for|while)\s*\(").find_iter(source).count();
        if loops > 0 && ifs >= 3 {
            out.push(Symptom::BranchHeavyLoop);
        }

        if !source.contains("__shared__") && !source.contains("wmma") {
            out.push(Symptom::MemoryBound);
        }
        out
    }
}

/// Inputs to [`summarize_state`] besides the previous state.
#[derive(Clone, Copy, Debug)]
pub struct StateUpdate<'a> {
    pub code: &'a CandidateImplementation,
    pub action: Option<&'a Action>,
    pub feedback: Option<&'a EvaluationFeedback>,
}

const RECENT_WINDOW: usize = 3;

/// Assembles `s_{t+1}` from `s_t`, the implementation to refine next, the
/// action just taken and its feedback. With no previous state this builds
/// the initial state for step 1.
pub fn summarize_state(
    task: &TaskContext,
    prev: Option<&DecisionState>,
    update: StateUpdate<'_>,
    stagnation_window: u32,
    detector: &dyn SymptomDetector,
) -> DecisionState {
    let mut progress = prev.map(|s| s.progress.clone()).unwrap_or_default();
    let step = prev.map_or(1, |s| s.step + 1);

    if let Some(action) = update.action {
        push_recent(&mut progress.recent_globals, action.global.as_str());
        push_recent(&mut progress.recent_locals, action.local.as_str());
    }

    let feedback = update.feedback.map(|fb| {
        let speedup = fb
            .executable_runtime()
            .map(|rt| task.reference_runtime_ms / rt);
        if !(fb.compile && fb.correct) {
            progress.failed_before = true;
        }
        match speedup {
            Some(s) if s > progress.best_speedup => {
                progress.recent_improvement = s / progress.best_speedup;
                progress.best_speedup = s;
                progress.steps_since_improvement = 0;
            }
            Some(s) => {
                progress.recent_improvement = s / progress.best_speedup;
                progress.steps_since_improvement += 1;
            }
            None => {
                progress.recent_improvement = 1.0;
                progress.steps_since_improvement += 1;
            }
        }
        FeedbackSummary {
            compile: fb.compile,
            correct: fb.correct,
            runtime_ms: fb.executable_runtime(),
            speedup,
            timeout: fb.timeout,
            dominant_failure: fb.failure_tag().to_string(),
        }
    });
    progress.stagnation = progress.steps_since_improvement >= stagnation_window.max(1);

    DecisionState {
        step,
        task: task.clone(),
        code_summary: code_summary(&update.code.source),
        feedback,
        progress,
        symptoms: detector.detect(&update.code.source),
    }
}

fn push_recent(list: &mut Vec<String>, item: &str) {
    list.push(item.to_string());
    if list.len() > RECENT_WINDOW {
        list.remove(0);
    }
}

/// One-line description of the implementation: line count plus the first
/// kernel or function signature found.
pub fn code_summary(source: &str) -> String {
    let lines = source.lines().count();
    let signature = source
        .lines()
        .map(str::trim)
        .find(|l| l.starts_with("__global__") || l.starts_with("def ") || l.contains("torch::Tensor"))
        .unwrap_or_else(|| source.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or(""));
    let mut sig: String = signature.chars().take(96).collect();
    if signature.chars().count() > 96 {
        sig.push_str("...");
    }
    format!("{lines} lines; {sig}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{GlobalId, LocalId};

    fn task() -> TaskContext {
        TaskContext {
            task_id: "swish".into(),
            operator_type: "activation".into(),
            input_shape_summary: "(16, 16384)".into(),
            reference_runtime_ms: 18.2,
        }
    }

    fn action() -> Action {
        Action {
            global: GlobalId::from("g_a"),
            local: LocalId::from("l_a"),
            edit_plan: String::new(),
        }
    }

    #[test]
    fn initial_state_has_empty_progress() {
        let code = CandidateImplementation::initial("return x * torch.sigmoid(x)");
        let s = summarize_state(
            &task(),
            None,
            StateUpdate { code: &code, action: None, feedback: None },
            2,
            &RuleBasedSymptoms,
        );
        assert_eq!(s.step, 1);
        assert!(s.feedback.is_none());
        assert_eq!(s.progress, Progress::default());
        assert_eq!(s.symptoms, vec![Symptom::MemoryBound]);
    }

    #[test]
    fn speedup_is_reference_over_candidate() {
        let code = CandidateImplementation::initial("k");
        let s0 = summarize_state(&task(), None, StateUpdate { code: &code, action: None, feedback: None }, 2, &RuleBasedSymptoms);
        let fb = EvaluationFeedback::passed(9.56);
        let act = action();
        let s1 = summarize_state(
            &task(),
            Some(&s0),
            StateUpdate { code: &code, action: Some(&act), feedback: Some(&fb) },
            2,
            &RuleBasedSymptoms,
        );
        let speedup = s1.feedback.as_ref().unwrap().speedup.unwrap();
        assert!((speedup - 1.904).abs() < 1e-3, "{speedup}");
        assert_eq!(s1.progress.best_speedup, speedup);
        assert_eq!(s1.progress.recent_globals, vec!["g_a".to_string()]);
    }

    #[test]
    fn stagnation_after_window_of_flat_steps() {
        let code = CandidateImplementation::initial("k");
        let act = action();
        let mut s = summarize_state(&task(), None, StateUpdate { code: &code, action: None, feedback: None }, 2, &RuleBasedSymptoms);
        let fb = EvaluationFeedback::passed(9.1);
        for _ in 0..3 {
            s = summarize_state(
                &task(),
                Some(&s),
                StateUpdate { code: &code, action: Some(&act), feedback: Some(&fb) },
                2,
                &RuleBasedSymptoms,
            );
        }
        assert!(s.progress.stagnation);
        assert_eq!(s.progress.best_speedup, 2.0);
    }

    #[test]
    fn failure_marks_state() {
        let code = CandidateImplementation::initial("k");
        let act = action();
        let s0 = summarize_state(&task(), None, StateUpdate { code: &code, action: None, feedback: None }, 2, &RuleBasedSymptoms);
        let fb = EvaluationFeedback::compile_failure("nvcc: error");
        let s1 = summarize_state(&task(), Some(&s0), StateUpdate { code: &code, action: Some(&act), feedback: Some(&fb) }, 2, &RuleBasedSymptoms);
        assert!(s1.progress.failed_before);
        let summary = s1.feedback.unwrap();
        assert_eq!(summary.dominant_failure, "compile_error");
        assert!(summary.speedup.is_none());
    }

    #[test]
    fn feedback_invariants() {
        assert!(EvaluationFeedback::passed(1.0).validate().is_ok());
        let bad = EvaluationFeedback { compile: false, correct: true, runtime_ms: None, timeout: false, failure_detail: String::new() };
        assert!(bad.validate().is_err());
        let bad = EvaluationFeedback { runtime_ms: Some(3.0), ..EvaluationFeedback::timed_out("slow") };
        assert!(bad.validate().is_err());
        assert!(EvaluationFeedback { runtime_ms: Some(-1.0), ..EvaluationFeedback::passed(1.0) }.validate().is_err());
    }

    #[test]
    fn symptom_heuristics() {
        let vec4 = "float4 v = reinterpret_cast<const float4*>(x)[i];";
        let tags = RuleBasedSymptoms.detect(vec4);
        assert!(tags.contains(&Symptom::BoundaryRisk));
        let guarded = format!("{vec4}\n// scalar fallback for the tail");
        assert!(!RuleBasedSymptoms.detect(&guarded).contains(&Symptom::BoundaryRisk));

        let idx = "int i = blockIdx.x * blockDim.x + threadIdx.x; int j = blockIdx.x * blockDim.x + threadIdx.x;";
        assert!(RuleBasedSymptoms.detect(idx).contains(&Symptom::RepeatedIndexComputation));

        let branchy = "for (;;) { if (a) {} if (b) {} if (c) {} }";
        assert!(RuleBasedSymptoms.detect(branchy).contains(&Symptom::BranchHeavyLoop));

        let tiled = "__shared__ float tile[32][32];";
        assert!(!RuleBasedSymptoms.detect(tiled).contains(&Symptom::MemoryBound));
    }

    #[test]
    fn symptom_tags_round_trip() {
        for s in Symptom::ALL {
            assert_eq!(s.tag().parse::<Symptom>().unwrap(), s);
        }
        assert!("nope".parse::<Symptom>().is_err());
    }
}
