//! Per-step trajectory records and the JSON-lines run log.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{PriceSheet, UsageSnapshot};
use crate::memory::{GlobalId, LocalId, OutcomeClass};
use crate::state::{DecisionState, EvaluationFeedback};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u32,
    /// State the decision was made in.
    pub state: DecisionState,
    pub global: GlobalId,
    /// Policy probability of `global` (1 for a forced direction).
    pub global_probability: f64,
    #[serde(default)]
    pub forced: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local: Option<LocalId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit_plan: Option<String>,
    /// Local choice fell back to the top-ranked candidate.
    #[serde(default)]
    pub local_fallback: bool,
    /// The direction had no strategies; nothing was generated.
    #[serde(default)]
    pub invalid: bool,
    #[serde(default)]
    pub repaired: bool,
    #[serde(default)]
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<EvaluationFeedback>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<OutcomeClass>,
    /// `ln(parent runtime / candidate runtime)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_gain: Option<f64>,
    /// Reference runtime over candidate runtime.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speedup: Option<f64>,
    /// Best speedup among generated correct candidates so far.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_speedup: Option<f64>,
}

/// The implementation reported for a task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    /// 0 when no generated candidate was correct and the reference stands.
    pub step: u32,
    pub speedup: f64,
    pub runtime_ms: f64,
    pub digest: String,
    pub generated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub task_id: String,
    pub reference_runtime_ms: f64,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub best: BestRecord,
    /// Source of the best implementation.
    pub best_source: String,
    pub usage: UsageSnapshot,
    /// Set when an adapter failure cut the run short.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

impl TrajectoryRecord {
    /// At least one generated candidate compiled and passed correctness.
    pub fn correct(&self) -> bool {
        self.best.generated
    }

    /// Best speedup over generated candidates; `None` if none was correct.
    pub fn best_generated_speedup(&self) -> Option<f64> {
        self.best.generated.then_some(self.best.speedup)
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("log is missing its {0} line")]
    Missing(&'static str),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine {
    Header {
        task_id: String,
        reference_runtime_ms: f64,
        seed: u64,
    },
    Step(Box<StepRecord>),
    Summary {
        best: BestRecord,
        best_source: String,
        usage: UsageSnapshot,
        prices: PriceSheet,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        aborted: Option<String>,
    },
}

/// Writes a header line, one line per step and a summary line.
pub fn write_log<W: Write>(out: W, record: &TrajectoryRecord, prices: &PriceSheet) -> io::Result<()> {
    let mut w = BufWriter::new(out);
    let mut line = |l: &LogLine| -> io::Result<()> {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")
    };
    line(&LogLine::Header {
        task_id: record.task_id.clone(),
        reference_runtime_ms: record.reference_runtime_ms,
        seed: record.seed,
    })?;
    for s in &record.steps {
        line(&LogLine::Step(Box::new(s.clone())))?;
    }
    line(&LogLine::Summary {
        best: record.best.clone(),
        best_source: record.best_source.clone(),
        usage: record.usage.clone(),
        prices: prices.clone(),
        aborted: record.aborted.clone(),
    })?;
    w.flush()
}

pub fn write_log_file(path: &Path, record: &TrajectoryRecord, prices: &PriceSheet) -> io::Result<()> {
    write_log(File::create(path)?, record, prices)
}

pub fn read_log<R: BufRead>(input: R) -> Result<(TrajectoryRecord, PriceSheet), LogError> {
    let mut header = None;
    let mut steps = Vec::new();
    let mut summary = None;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(&line)
            .map_err(|e| LogError::Parse { line: i + 1, message: e.to_string() })?;
        match parsed {
            LogLine::Header { task_id, reference_runtime_ms, seed } => header = Some((task_id, reference_runtime_ms, seed)),
            LogLine::Step(s) => steps.push(*s),
            LogLine::Summary { best, best_source, usage, prices, aborted } => {
                summary = Some((best, best_source, usage, prices, aborted))
            }
        }
    }
    let (task_id, reference_runtime_ms, seed) = header.ok_or(LogError::Missing("header"))?;
    let (best, best_source, usage, prices, aborted) = summary.ok_or(LogError::Missing("summary"))?;
    Ok((
        TrajectoryRecord { task_id, reference_runtime_ms, seed, steps, best, best_source, usage, aborted },
        prices,
    ))
}

pub fn read_log_file(path: &Path) -> Result<(TrajectoryRecord, PriceSheet), LogError> {
    read_log(BufReader::new(File::open(path)?))
}
