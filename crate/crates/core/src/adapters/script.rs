//! Deterministic backend replaying canned replies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    estimate_tokens, fence_code, parse_sim_applies, sim_apply_line, Backend, BackendError, BackendReply,
    BackendRequest, CandidateHint, Phase,
};

/// Reply to an unscripted local-selection query.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalDefault {
    /// Last candidate in engine rank order.
    #[default]
    LowestRanked,
    HighestRanked,
    /// Scores every candidate from its hint and returns the best.
    Argmax,
}

/// Reply to an unscripted code-generation or repair query.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeDefault {
    /// Return the current code unchanged.
    #[default]
    Echo,
    /// Append a `sim-apply` marker naming the chosen action, for the
    /// simulated evaluator.
    Annotate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub phase: Phase,
    /// Restricts the entry to one task; absent matches any task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
    pub step: u32,
    pub reply: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens_in: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens_out: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendScript {
    #[serde(default)]
    pub local_default: LocalDefault,
    #[serde(default)]
    pub code_default: CodeDefault,
    #[serde(default)]
    pub entries: Vec<ScriptEntry>,
}

type Key = (Phase, Option<String>, u32);

#[derive(Clone, Debug)]
pub struct ScriptedBackend {
    table: BTreeMap<Key, ScriptEntry>,
    local_default: LocalDefault,
    code_default: CodeDefault,
}

impl ScriptedBackend {
    pub fn new(script: BackendScript) -> Result<Self, BackendError> {
        let mut table = BTreeMap::new();
        for entry in script.entries {
            let key = (entry.phase, entry.task_id.clone(), entry.step);
            if table.contains_key(&key) {
                let task = entry.task_id.as_deref().map(|t| format!(", task {t}")).unwrap_or_default();
                return Err(BackendError::Config(format!(
                    "duplicate script entry (phase {}{task}, step {})",
                    entry.phase, entry.step
                )));
            }
            table.insert(key, entry);
        }
        Ok(ScriptedBackend {
            table,
            local_default: script.local_default,
            code_default: script.code_default,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let script: BackendScript = serde_json::from_str(text).map_err(|e| {
            BackendError::Config(format!("script parse error at line {}, column {}: {e}", e.line(), e.column()))
        })?;
        Self::new(script)
    }

    /// Empty script with the given defaults.
    pub fn with_defaults(local_default: LocalDefault, code_default: CodeDefault) -> Self {
        Self::new(BackendScript { local_default, code_default, entries: Vec::new() })
            .expect("empty script is valid")
    }

    fn lookup(&self, req: &BackendRequest) -> Option<&ScriptEntry> {
        self.table
            .get(&(req.phase, Some(req.task_id.clone()), req.step))
            .or_else(|| self.table.get(&(req.phase, None, req.step)))
    }

    fn default_reply(&self, req: &BackendRequest) -> String {
        match req.phase {
            Phase::LocalSelection => {
                let pick = match self.local_default {
                    LocalDefault::LowestRanked => req.candidates.iter().max_by_key(|c| c.rank),
                    LocalDefault::HighestRanked => req.candidates.iter().min_by_key(|c| c.rank),
                    LocalDefault::Argmax => argmax(&req.candidates, &req.current_code),
                };
                match pick {
                    Some(c) => format!(
                        "```json\n{}\n```\n",
                        serde_json::json!({
                            "selected_local_node": c.id,
                            "rationale": "scripted default",
                            "edit_plan": format!("apply {}", c.id),
                        })
                    ),
                    None => "{}".to_string(),
                }
            }
            Phase::CodeGeneration | Phase::Repair => match (self.code_default, req.phase) {
                (CodeDefault::Annotate, Phase::CodeGeneration) => {
                    let (Some(g), Some(l)) = (&req.global, &req.local) else {
                        return fence_code(&req.current_code);
                    };
                    fence_code(&format!("{}\n{}", req.current_code, sim_apply_line(g, l)))
                }
                _ => fence_code(&req.current_code),
            },
            Phase::StateSummarization => "{}".to_string(),
        }
    }
}

/// Per-candidate scalar preference: smoothed success rate plus matched
/// `use_when` symptoms minus twice the matched `avoid_when` symptoms. Ties
/// go to the better-ranked candidate.
fn candidate_score(c: &CandidateHint) -> f64 {
    c.success_rate + c.use_matches as f64 - 2.0 * c.avoid_matches as f64
}

/// Best hint score; strategies already marked in `current_code` rank below
/// every fresh one, as a model reading the code would skip them.
fn argmax<'a>(cands: &'a [CandidateHint], current_code: &str) -> Option<&'a CandidateHint> {
    let applied: Vec<_> = parse_sim_applies(current_code).into_iter().map(|a| a.local).collect();
    let key = |c: &CandidateHint| (!applied.contains(&c.id), candidate_score(c));
    cands.iter().fold(None, |best: Option<&CandidateHint>, c| match best {
        Some(b) if key(b) > key(c) || (key(b) == key(c) && b.rank <= c.rank) => Some(b),
        _ => Some(c),
    })
}

impl Backend for ScriptedBackend {
    fn complete(&mut self, req: &BackendRequest) -> Result<BackendReply, BackendError> {
        let (text, tin, tout) = match self.lookup(req) {
            Some(e) => (e.reply.clone(), e.tokens_in, e.tokens_out),
            None => (self.default_reply(req), None, None),
        };
        let tokens_in = tin.unwrap_or_else(|| estimate_tokens(&req.prompt));
        let tokens_out = tout.unwrap_or_else(|| estimate_tokens(&text));
        Ok(BackendReply {
            truncated: tokens_out > u64::from(req.max_output_tokens),
            text,
            tokens_in,
            tokens_out,
        })
    }
}
