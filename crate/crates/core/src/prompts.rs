//! Prompt templates with `{{name}}` placeholders, and the documents built
//! from them.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::local::Action;
use crate::memory::{BucketKey, EvidenceItem, GlobalNode, LocalNode};
use crate::state::{CandidateImplementation, DecisionState};

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("template `{name}` lacks placeholder `{{{{{placeholder}}}}}`")]
    MissingPlaceholder { name: &'static str, placeholder: &'static str },
}

const LOCAL_FIELDS: &[&str] = &["state", "code", "global", "candidates", "schema"];
const GENERATION_FIELDS: &[&str] = &["state", "global", "local", "edit_plan", "recipe", "checklist", "evidence", "code"];
const REPAIR_FIELDS: &[&str] = &["edit_plan", "failure", "detail", "code"];

/// Output schema shown in the local-selection prompt.
pub const LOCAL_SELECTION_SCHEMA: &str = "```json\n{\n  \"selected_local_node\": \"<candidate id>\",\n  \"rationale\": \"<why this candidate fits the current state>\",\n  \"edit_plan\": \"<concrete edit to apply>\"\n}\n```";

pub const NO_EVIDENCE: &str = "(no prior evidence)";
pub const EVIDENCE_FALLBACK: &str = "(no evidence matches the current state; showing the most recent instead)";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplates {
    pub local_selection: String,
    pub code_generation: String,
    pub repair: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            local_selection: include_str!("../assets/prompts/local_selection.txt").to_string(),
            code_generation: include_str!("../assets/prompts/code_generation.txt").to_string(),
            repair: include_str!("../assets/prompts/repair.txt").to_string(),
        }
    }
}

impl PromptTemplates {
    /// Loads `local_selection.txt`, `code_generation.txt` and `repair.txt`
    /// from `dir`; missing files keep the built-in text.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut t = PromptTemplates::default();
        for (file, slot) in [
            ("local_selection.txt", &mut t.local_selection),
            ("code_generation.txt", &mut t.code_generation),
            ("repair.txt", &mut t.repair),
        ] {
            let path = dir.join(file);
            if path.exists() {
                *slot = fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
            }
        }
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        for (name, text, fields) in [
            ("local_selection", &self.local_selection, LOCAL_FIELDS),
            ("code_generation", &self.code_generation, GENERATION_FIELDS),
            ("repair", &self.repair, REPAIR_FIELDS),
        ] {
            for &p in fields {
                if !text.contains(&format!("{{{{{p}}}}}")) {
                    return Err(TemplateError::MissingPlaceholder { name, placeholder: p });
                }
            }
        }
        Ok(())
    }
}

/// Substitutes every `{{key}}` in one pass, so values containing braces are
/// never re-expanded.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let key = &after[..end];
                match values.iter().find(|(k, _)| *k == key) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        out.push_str("{{");
                        out.push_str(key);
                        out.push_str("}}");
                    }
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn state_block(state: &DecisionState) -> String {
    serde_json::to_string_pretty(state).expect("state serializes")
}

fn list(items: &[String]) -> String {
    if items.is_empty() {
        "none".to_string()
    } else {
        items.join("; ")
    }
}

fn tags<T: std::fmt::Display>(items: &[T]) -> String {
    if items.is_empty() {
        "none".to_string()
    } else {
        items.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
    }
}

fn evidence_line(out: &mut String, e: &EvidenceItem) {
    let _ = writeln!(
        out,
        "  - [{} at step {} of {}, log-gain {:.4}, state {}] {}",
        e.outcome, e.step, e.task_id, e.log_gain, e.state_digest, e.summary
    );
}

fn global_block(g: &GlobalNode) -> String {
    format!(
        "id: {}\nlabel: {}\ngoal: {}\ntriggers: {}\napplicable patterns: {}\nrisks: {}\nexpected gains: {}\nattempts: {}, smoothed success rate: {:.3}",
        g.id,
        g.label,
        g.prior.goal,
        tags(&g.prior.triggers),
        list(&g.prior.applicable_patterns),
        list(&g.prior.risks),
        list(&g.prior.expected_gain_types),
        g.runtime.attempts,
        g.runtime.success_rate(),
    )
}

/// Local-selection prompt: decision state, current implementation, the
/// global node's memory and each candidate's memory (with at most
/// `evidence_k` most recent evidence summaries), then the output schema.
pub fn build_local_prompt(
    templates: &PromptTemplates,
    state: &DecisionState,
    code: &CandidateImplementation,
    global: &GlobalNode,
    candidates: &[&LocalNode],
    evidence_k: usize,
) -> String {
    let mut cands = String::new();
    for (rank, l) in candidates.iter().enumerate() {
        let _ = writeln!(cands, "### {}. {}", rank + 1, l.id);
        let _ = writeln!(cands, "strategy: {}", l.prior.strategy);
        let _ = writeln!(cands, "use when: {}", tags(&l.prior.use_when));
        let _ = writeln!(cands, "avoid when: {}", tags(&l.prior.avoid_when));
        let _ = writeln!(cands, "common failures: {}", list(&l.prior.common_failures));
        let _ = writeln!(
            cands,
            "attempts: {}, smoothed success rate: {:.3}",
            l.runtime.attempts,
            l.runtime.success_rate()
        );
        let _ = writeln!(cands, "evidence:");
        let recent = l.evidence.most_recent_first();
        if recent.is_empty() {
            let _ = writeln!(cands, "  {NO_EVIDENCE}");
        }
        for e in recent.into_iter().take(evidence_k) {
            evidence_line(&mut cands, e);
        }
        cands.push('\n');
    }
    render(
        &templates.local_selection,
        &[
            ("state", &state_block(state)),
            ("code", &code.source),
            ("global", &global_block(global)),
            ("candidates", cands.trim_end()),
            ("schema", LOCAL_SELECTION_SCHEMA),
        ],
    )
}

/// Evidence for a generation prompt: up to `k` items recorded under the same
/// bucket key, most recent first; the most recent items otherwise.
pub fn retrieve_evidence<'a>(local: &'a LocalNode, key: &BucketKey, k: usize) -> (Vec<&'a EvidenceItem>, bool) {
    let recent = local.evidence.most_recent_first();
    let matched: Vec<&EvidenceItem> = recent.iter().copied().filter(|e| &e.state_digest == key).take(k).collect();
    if !matched.is_empty() || k == 0 {
        (matched, false)
    } else {
        (recent.into_iter().take(k).collect(), true)
    }
}

/// Code-generation prompt for applying `action` to `code`.
pub fn build_generation_prompt(
    templates: &PromptTemplates,
    code: &CandidateImplementation,
    state: &DecisionState,
    action: &Action,
    local: &LocalNode,
    evidence_k: usize,
) -> String {
    let key = BucketKey::from_state(state);
    let (items, fallback) = retrieve_evidence(local, &key, evidence_k);
    let mut evidence = String::new();
    if evidence_k == 0 {
        evidence.push_str("(evidence retrieval disabled)");
    } else if local.evidence.is_empty() {
        evidence.push_str(NO_EVIDENCE);
    } else {
        if fallback {
            let _ = writeln!(evidence, "{EVIDENCE_FALLBACK}");
        }
        for e in items {
            evidence_line(&mut evidence, e);
        }
    }
    let checklist = if local.prior.verification_checklist.is_empty() {
        "- none".to_string()
    } else {
        local
            .prior
            .verification_checklist
            .iter()
            .map(|c| format!("- {c}"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    render(
        &templates.code_generation,
        &[
            ("state", &state_block(state)),
            ("global", action.global.as_str()),
            ("local", action.local.as_str()),
            ("edit_plan", &action.edit_plan),
            ("recipe", &local.prior.edit_recipe),
            ("checklist", &checklist),
            ("evidence", evidence.trim_end()),
            ("code", &code.source),
        ],
    )
}

/// Repair prompt for a candidate that was malformed or failed to compile.
pub fn build_repair_prompt(templates: &PromptTemplates, failed_source: &str, action: &Action, failure: &str, detail: &str) -> String {
    render(
        &templates.repair,
        &[
            ("edit_plan", &action.edit_plan),
            ("failure", failure),
            ("detail", if detail.is_empty() { "(none reported)" } else { detail }),
            ("code", failed_source),
        ],
    )
}
