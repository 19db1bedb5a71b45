//! Backend (model) and evaluator contracts plus the shipped implementations.

mod evaluator;
#[cfg(feature = "http")]
mod http;
mod script;
mod sim;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{GlobalId, LocalId};
use crate::state::{CandidateImplementation, EvaluationFeedback};

pub use evaluator::{
    serve_protocol, EvaluatorFixture, FixtureEntry, ScriptedEvaluator, SubprocessEvaluator,
    SubprocessRequest,
};
#[cfg(feature = "http")]
pub use http::HttpBackend;
pub use script::{BackendScript, CodeDefault, LocalDefault, ScriptEntry, ScriptedBackend};
pub use sim::{
    parse_sim_applies, sim_apply_line, Effect, FailureKind, FailureRule, SimulatedEnvironment,
    SimulatedEvaluator,
};

/// Which part of a step a backend call serves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    LocalSelection,
    CodeGeneration,
    Repair,
    StateSummarization,
}

impl Phase {
    pub const ALL: [Phase; 4] = [
        Phase::LocalSelection,
        Phase::CodeGeneration,
        Phase::Repair,
        Phase::StateSummarization,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::LocalSelection => "local_selection",
            Phase::CodeGeneration => "code_generation",
            Phase::Repair => "repair",
            Phase::StateSummarization => "state_summarization",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Maximum output tokens per phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseLimits {
    pub local_selection: u32,
    pub code_generation: u32,
    pub repair: u32,
    pub state_summarization: u32,
}

impl Default for PhaseLimits {
    fn default() -> Self {
        PhaseLimits {
            local_selection: 2048,
            code_generation: 16384,
            repair: 16384,
            state_summarization: 2048,
        }
    }
}

impl PhaseLimits {
    pub fn for_phase(&self, phase: Phase) -> u32 {
        match phase {
            Phase::LocalSelection => self.local_selection,
            Phase::CodeGeneration => self.code_generation,
            Phase::Repair => self.repair,
            Phase::StateSummarization => self.state_summarization,
        }
    }
}

/// Engine-side facts about one local candidate, sent alongside the prompt so
/// offline backends can answer without parsing prose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateHint {
    pub id: LocalId,
    /// 0 is the highest-ranked candidate.
    pub rank: usize,
    pub success_rate: f64,
    /// Current symptoms listed in the card's `use_when`.
    pub use_matches: usize,
    /// Current symptoms listed in the card's `avoid_when`.
    pub avoid_matches: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackendRequest {
    pub phase: Phase,
    pub task_id: String,
    pub step: u32,
    pub prompt: String,
    pub max_output_tokens: u32,
    /// Source being refined.
    pub current_code: String,
    pub global: Option<GlobalId>,
    pub local: Option<LocalId>,
    pub candidates: Vec<CandidateHint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendReply {
    pub text: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
    /// The reply hit the phase's output limit.
    #[serde(default)]
    pub truncated: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("backend rejected credentials (status {status})")]
    Auth { status: u16 },
    #[error("backend call timed out")]
    Timeout,
    #[error("backend rate limit exceeded")]
    RateLimit,
    #[error("backend transport failure: {0}")]
    Transport(String),
    #[error("backend protocol violation: {0}")]
    Protocol(String),
}

/// A code-generation service.
pub trait Backend: Send {
    fn complete(&mut self, request: &BackendRequest) -> Result<BackendReply, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&mut self, request: &BackendRequest) -> Result<BackendReply, BackendError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluatorError {
    #[error("evaluator configuration: {0}")]
    Config(String),
    #[error("evaluator transport failure: {0}")]
    Transport(String),
    #[error("evaluator protocol violation: {0}")]
    Protocol(String),
    #[error("reference implementation did not produce a runtime: {0}")]
    NoReference(String),
}

#[derive(Clone, Copy, Debug)]
pub struct EvalRequest<'a> {
    pub task_id: &'a str,
    pub candidate: &'a CandidateImplementation,
    pub timeout_ms: u64,
}

/// Compiles, checks and times candidates.
pub trait Evaluator: Send {
    fn evaluate(&mut self, request: &EvalRequest<'_>) -> Result<EvaluationFeedback, EvaluatorError>;

    /// Reference runtime for speedups. Defaults to timing the initial code.
    fn reference_runtime_ms(
        &mut self,
        task_id: &str,
        initial: &CandidateImplementation,
        timeout_ms: u64,
    ) -> Result<f64, EvaluatorError> {
        let fb = self.evaluate(&EvalRequest { task_id, candidate: initial, timeout_ms })?;
        fb.executable_runtime()
            .ok_or_else(|| EvaluatorError::NoReference(fb.failure_tag().to_string()))
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn evaluate(&mut self, request: &EvalRequest<'_>) -> Result<EvaluationFeedback, EvaluatorError> {
        (**self).evaluate(request)
    }

    fn reference_runtime_ms(
        &mut self,
        task_id: &str,
        initial: &CandidateImplementation,
        timeout_ms: u64,
    ) -> Result<f64, EvaluatorError> {
        (**self).reference_runtime_ms(task_id, initial, timeout_ms)
    }
}

/// Where a field lives in a chat-completion response, as JSON pointers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMap {
    pub content: String,
    pub tokens_in: String,
    pub tokens_out: String,
    pub finish_reason: String,
    /// `finish_reason` value meaning the output limit was hit.
    pub truncated_value: String,
    /// Request field carrying the output limit.
    pub max_tokens_field: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        FieldMap {
            content: "/choices/0/message/content".into(),
            tokens_in: "/usage/prompt_tokens".into(),
            tokens_out: "/usage/completion_tokens".into(),
            finish_reason: "/choices/0/finish_reason".into(),
            truncated_value: "length".into(),
            max_tokens_field: "max_tokens".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    #[serde(default = "default_http_timeout")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub limits: PhaseLimits,
    #[serde(default)]
    pub fields: FieldMap,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

fn default_http_timeout() -> u64 {
    600_000
}

/// Pulls the body of the first fenced code block out of a reply.
pub fn extract_code_block(text: &str) -> Option<String> {
    let start = text.find("```")?;
    let after_fence = &text[start + 3..];
    let body_start = after_fence.find('\n')? + 1;
    let body = &after_fence[body_start..];
    let end = body.find("```")?;
    let code = body[..end].trim_end_matches(['\n', '\r']);
    (!code.trim().is_empty()).then(|| code.to_string())
}

/// Wraps source in a fenced block, the shape code replies are expected in.
pub fn fence_code(source: &str) -> String {
    format!("```\n{source}\n```\n")
}

/// Rough token estimate (4 characters per token) for offline backends.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_block_extraction() {
        assert_eq!(extract_code_block("x\n```cuda\nint a;\n```\nok").as_deref(), Some("int a;"));
        assert_eq!(extract_code_block("```\na\nb\n```").as_deref(), Some("a\nb"));
        assert_eq!(extract_code_block("no fence"), None);
        assert_eq!(extract_code_block("```\n   \n```"), None);
        assert_eq!(extract_code_block("```\nunterminated"), None);
        let src = "line one\nline two";
        assert_eq!(extract_code_block(&fence_code(src)).as_deref(), Some(src));
    }

    #[test]
    fn phase_names() {
        for p in Phase::ALL {
            let json = serde_json::to_string(&p).unwrap();
            assert_eq!(json, format!("\"{}\"", p.as_str()));
            assert_eq!(Phase::ALL[p.index()], p);
        }
    }

    #[test]
    fn default_limits() {
        let l = PhaseLimits::default();
        assert_eq!(l.for_phase(Phase::LocalSelection), 2048);
        assert_eq!(l.for_phase(Phase::CodeGeneration), 16384);
    }
}
