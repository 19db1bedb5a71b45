//! Fixture-table and subprocess evaluators.

use std::io::{self, BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EvalRequest, Evaluator, EvaluatorError};
use crate::state::{CandidateImplementation, EvaluationFeedback};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    /// Substring identifying the candidate.
    pub marker: String,
    pub feedback: EvaluationFeedback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluatorFixture {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_runtime_ms: Option<f64>,
    #[serde(default)]
    pub entries: Vec<FixtureEntry>,
    /// Feedback for candidates matching no entry; a compile failure if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<EvaluationFeedback>,
}

/// Answers from a fixture table: the first entry whose marker occurs in the
/// candidate source wins.
#[derive(Clone, Debug)]
pub struct ScriptedEvaluator {
    fixture: EvaluatorFixture,
}

impl ScriptedEvaluator {
    pub fn new(fixture: EvaluatorFixture) -> Result<Self, EvaluatorError> {
        for e in &fixture.entries {
            e.feedback
                .validate()
                .map_err(|m| EvaluatorError::Config(format!("fixture entry `{}`: {m}", e.marker)))?;
            if e.marker.is_empty() {
                return Err(EvaluatorError::Config("fixture marker must be non-empty".into()));
            }
        }
        if let Some(d) = &fixture.default {
            d.validate().map_err(|m| EvaluatorError::Config(format!("fixture default: {m}")))?;
        }
        Ok(ScriptedEvaluator { fixture })
    }

    pub fn from_json(text: &str) -> Result<Self, EvaluatorError> {
        let fixture = serde_json::from_str(text).map_err(|e| {
            EvaluatorError::Config(format!("fixture parse error at line {}, column {}: {e}", e.line(), e.column()))
        })?;
        Self::new(fixture)
    }

    pub fn lookup(&self, source: &str) -> EvaluationFeedback {
        self.fixture
            .entries
            .iter()
            .find(|e| source.contains(&e.marker))
            .map(|e| e.feedback.clone())
            .or_else(|| self.fixture.default.clone())
            .unwrap_or_else(|| EvaluationFeedback::compile_failure("no fixture entry matches the candidate"))
    }
}

impl Evaluator for ScriptedEvaluator {
    fn evaluate(&mut self, req: &EvalRequest<'_>) -> Result<EvaluationFeedback, EvaluatorError> {
        Ok(self.lookup(&req.candidate.source))
    }

    fn reference_runtime_ms(
        &mut self,
        task_id: &str,
        initial: &CandidateImplementation,
        timeout_ms: u64,
    ) -> Result<f64, EvaluatorError> {
        match self.fixture.reference_runtime_ms {
            Some(r) => Ok(r),
            None => {
                let fb = self.evaluate(&EvalRequest { task_id, candidate: initial, timeout_ms })?;
                fb.executable_runtime()
                    .ok_or_else(|| EvaluatorError::NoReference(fb.failure_tag().to_string()))
            }
        }
    }
}

/// One request line of the evaluator wire protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubprocessRequest {
    pub task_id: String,
    pub candidate_source: String,
    pub timeout_ms: u64,
}

#[derive(Debug, Deserialize)]
struct SubprocessReply {
    #[serde(default)]
    error: Option<String>,
    #[serde(flatten)]
    feedback: Option<EvaluationFeedback>,
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<io::Result<String>>,
}

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Talks newline-delimited JSON to a long-running child process: one
/// [`SubprocessRequest`] per candidate on stdin, one feedback object per
/// line on stdout. A child that misses its deadline is killed and restarted
/// on the next request; the candidate is reported as timed out.
pub struct SubprocessEvaluator {
    program: PathBuf,
    args: Vec<String>,
    /// Added to each request's timeout before giving up on the child.
    pub grace_ms: u64,
    worker: Option<Worker>,
}

impl SubprocessEvaluator {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        SubprocessEvaluator {
            program: program.into(),
            args,
            grace_ms: 2_000,
            worker: None,
        }
    }

    fn spawn(&self) -> Result<Worker, EvaluatorError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| EvaluatorError::Transport(format!("spawn {}: {e}", self.program.display())))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Worker { child, stdin, lines: rx })
    }
}

impl Evaluator for SubprocessEvaluator {
    fn evaluate(&mut self, req: &EvalRequest<'_>) -> Result<EvaluationFeedback, EvaluatorError> {
        if self.worker.is_none() {
            self.worker = Some(self.spawn()?);
        }
        let worker = self.worker.as_mut().expect("worker spawned");
        let mut line = serde_json::to_string(&SubprocessRequest {
            task_id: req.task_id.to_string(),
            candidate_source: req.candidate.source.clone(),
            timeout_ms: req.timeout_ms,
        })
        .expect("request serializes");
        line.push('\n');
        if let Err(e) = worker.stdin.write_all(line.as_bytes()).and_then(|_| worker.stdin.flush()) {
            self.worker = None;
            return Err(EvaluatorError::Transport(format!("write to evaluator: {e}")));
        }
        let deadline = Duration::from_millis(req.timeout_ms.saturating_add(self.grace_ms));
        let reply = match worker.lines.recv_timeout(deadline) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => {
                self.worker = None;
                return Err(EvaluatorError::Transport(format!("read from evaluator: {e}")));
            }
            Err(RecvTimeoutError::Timeout) => {
                self.worker = None;
                return Ok(EvaluationFeedback::timed_out(format!(
                    "evaluator gave no reply within {} ms",
                    deadline.as_millis()
                )));
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.worker = None;
                return Err(EvaluatorError::Transport("evaluator exited".into()));
            }
        };
        let parsed: SubprocessReply = serde_json::from_str(&reply)
            .map_err(|e| EvaluatorError::Protocol(format!("bad reply `{reply}`: {e}")))?;
        if let Some(err) = parsed.error {
            return Err(EvaluatorError::Protocol(format!("evaluator error: {err}")));
        }
        let fb = parsed
            .feedback
            .ok_or_else(|| EvaluatorError::Protocol(format!("reply `{reply}` lacks feedback fields")))?;
        fb.validate().map_err(EvaluatorError::Protocol)?;
        Ok(fb)
    }
}

/// Serves the wire protocol from `input` to `output` with any evaluator,
/// one reply line per request line. Malformed requests get an `error`
/// reply and the loop continues.
pub fn serve_protocol(
    evaluator: &mut dyn Evaluator,
    input: impl BufRead,
    mut output: impl Write,
) -> io::Result<u64> {
    let mut served = 0;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<SubprocessRequest>(&line) {
            Ok(req) => {
                let cand = CandidateImplementation::initial(req.candidate_source);
                match evaluator.evaluate(&EvalRequest {
                    task_id: &req.task_id,
                    candidate: &cand,
                    timeout_ms: req.timeout_ms,
                }) {
                    Ok(fb) => serde_json::to_value(fb).expect("feedback serializes"),
                    Err(e) => error_reply(&e.to_string()),
                }
            }
            Err(e) => error_reply(&format!("malformed request: {e}")),
        };
        writeln!(output, "{reply}")?;
        output.flush()?;
        served += 1;
    }
    Ok(served)
}

fn error_reply(message: &str) -> serde_json::Value {
    serde_json::json!({
        "error": message,
        "compile": false,
        "correct": false,
        "timeout": false,
        "failure_detail": message,
    })
}
