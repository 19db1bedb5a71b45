//! Local strategy selection under a chosen global direction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{Backend, BackendError, BackendReply, BackendRequest, CandidateHint, Phase};
use crate::memory::{GlobalId, LocalId, LocalNode, MemoryBank, MemoryError};
use crate::prompts::{build_local_prompt, PromptTemplates};
use crate::state::{CandidateImplementation, DecisionState};

/// Edit plan used when the backend's choice is unusable.
pub const FALLBACK_EDIT_PLAN: &str = "apply strategy prior";

/// The composed action `a_t = (g_t, l_t)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub global: GlobalId,
    pub local: LocalId,
    pub edit_plan: String,
}

/// Structured reply of the local-selection call.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalSelection {
    pub selected_local_node: LocalId,
    #[serde(default)]
    pub rationale: String,
    #[serde(default)]
    pub edit_plan: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum LocalError {
    #[error("global `{0}` has no local strategies; step is invalid")]
    InvalidStep(GlobalId),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Children of `g`, best first: smoothed success rate descending, then
/// attempts descending, then id.
pub fn local_candidates<'a>(bank: &'a MemoryBank, g: &GlobalId) -> Result<Vec<&'a LocalNode>, MemoryError> {
    bank.global(g)?;
    let mut out: Vec<&LocalNode> = bank.locals.iter().filter(|l| &l.parent == g).collect();
    out.sort_by(|a, b| {
        b.runtime
            .success_rate()
            .total_cmp(&a.runtime.success_rate())
            .then(b.runtime.attempts.cmp(&a.runtime.attempts))
            .then(a.id.cmp(&b.id))
    });
    Ok(out)
}

fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let Some(nl) = after.find('\n') else { break };
        let body = &after[nl + 1..];
        let Some(end) = body.find("```") else { break };
        blocks.push(&body[..end]);
        rest = &body[end + 3..];
    }
    blocks
}

/// First fenced block that parses as a [`LocalSelection`]; failing that,
/// the whole reply as bare JSON.
pub fn parse_local_reply(text: &str) -> Option<LocalSelection> {
    fenced_blocks(text)
        .into_iter()
        .chain(std::iter::once(text))
        .find_map(|b| serde_json::from_str::<LocalSelection>(b.trim()).ok())
}

#[derive(Clone, Debug)]
pub struct LocalQuery<'a> {
    pub task_id: &'a str,
    pub state: &'a DecisionState,
    pub code: &'a CandidateImplementation,
    pub global: &'a GlobalId,
    pub evidence_k: usize,
    pub max_output_tokens: u32,
    pub templates: &'a PromptTemplates,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalChoice {
    pub action: Action,
    pub rationale: String,
    /// The backend reply was unusable and the top-ranked candidate was taken.
    pub fallback: bool,
    pub reply: BackendReply,
}

fn hints(state: &DecisionState, cands: &[&LocalNode]) -> Vec<CandidateHint> {
    cands
        .iter()
        .enumerate()
        .map(|(rank, l)| CandidateHint {
            id: l.id.clone(),
            rank,
            success_rate: l.runtime.success_rate(),
            use_matches: state.symptoms.iter().filter(|s| l.prior.use_when.contains(s)).count(),
            avoid_matches: state.symptoms.iter().filter(|s| l.prior.avoid_when.contains(s)).count(),
        })
        .collect()
}

/// One comparative backend call over all candidates of `q.global`. Replies
/// naming an id outside the candidate set, or that do not parse, fall back
/// to the highest-ranked candidate.
pub fn select_local(q: &LocalQuery<'_>, bank: &MemoryBank, backend: &mut dyn Backend) -> Result<LocalChoice, LocalError> {
    let cands = local_candidates(bank, q.global)?;
    if cands.is_empty() {
        return Err(LocalError::InvalidStep(q.global.clone()));
    }
    let prompt = build_local_prompt(q.templates, q.state, q.code, bank.global(q.global)?, &cands, q.evidence_k);
    let reply = backend.complete(&BackendRequest {
        phase: Phase::LocalSelection,
        task_id: q.task_id.to_string(),
        step: q.state.step,
        prompt,
        max_output_tokens: q.max_output_tokens,
        current_code: q.code.source.clone(),
        global: Some(q.global.clone()),
        local: None,
        candidates: hints(q.state, &cands),
    })?;
    let parsed = parse_local_reply(&reply.text).filter(|s| cands.iter().any(|c| c.id == s.selected_local_node));
    let (local, edit_plan, rationale, fallback) = match parsed {
        Some(s) => {
            let plan = if s.edit_plan.trim().is_empty() { FALLBACK_EDIT_PLAN.to_string() } else { s.edit_plan };
            (s.selected_local_node, plan, s.rationale, false)
        }
        None => (
            cands[0].id.clone(),
            FALLBACK_EDIT_PLAN.to_string(),
            "backend reply unusable; took the highest-ranked candidate".to_string(),
            true,
        ),
    };
    Ok(LocalChoice {
        action: Action { global: q.global.clone(), local, edit_plan },
        rationale,
        fallback,
        reply,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{CodeDefault, LocalDefault, ScriptedBackend};
    use crate::memory::init_default_bank;
    use crate::state::{Progress, Symptom, TaskContext};

    struct Fixed(String);

    impl Backend for Fixed {
        fn complete(&mut self, _: &BackendRequest) -> Result<BackendReply, BackendError> {
            Ok(BackendReply { text: self.0.clone(), tokens_in: 1, tokens_out: 1, truncated: false })
        }
    }

    fn state() -> DecisionState {
        DecisionState {
            step: 1,
            task: TaskContext {
                task_id: "t".into(),
                operator_type: String::new(),
                input_shape_summary: String::new(),
                reference_runtime_ms: 1.0,
            },
            code_summary: String::new(),
            feedback: None,
            progress: Progress::default(),
            symptoms: vec![Symptom::MemoryBound],
        }
    }

    fn choose(bank: &MemoryBank, g: &str, backend: &mut dyn Backend) -> Result<LocalChoice, LocalError> {
        let s = state();
        let code = CandidateImplementation::initial("k");
        let t = PromptTemplates::default();
        let g = GlobalId::from(g);
        select_local(
            &LocalQuery { task_id: "t", state: &s, code: &code, global: &g, evidence_k: 4, max_output_tokens: 2048, templates: &t },
            bank,
            backend,
        )
    }

    #[test]
    fn candidates_filtered_and_ordered() {
        let mut bank = init_default_bank();
        let g = GlobalId::from("g_memory_access_optimization");
        let ids: Vec<String> = local_candidates(&bank, &g).unwrap().iter().map(|l| l.id.0.clone()).collect();
        assert!(ids.len() >= 3);
        assert!(ids.windows(2).all(|w| w[0] < w[1]), "fresh stats tie, so id order");
        assert!(ids.iter().all(|id| id.starts_with("l_g_mem_")));

        let last = bank.locals.iter().position(|l| &l.id.0 == ids.last().unwrap()).unwrap();
        bank.locals[last].runtime.attempts = 2;
        bank.locals[last].runtime.successes = 2;
        let ids2: Vec<&str> = local_candidates(&bank, &g).unwrap().iter().map(|l| l.id.as_str()).collect();
        assert_eq!(ids2[0], ids.last().unwrap().as_str());
    }

    #[test]
    fn no_children_means_empty_list() {
        let mut bank = init_default_bank();
        let g = GlobalId::from("g_parallel_mapping");
        bank.locals.retain(|l| l.parent != g);
        assert!(local_candidates(&bank, &g).unwrap().is_empty());
        assert_eq!(
            choose(&bank, "g_parallel_mapping", &mut Fixed(String::new())).unwrap_err(),
            LocalError::InvalidStep(g)
        );
    }

    #[test]
    fn valid_reply_is_taken_verbatim() {
        let bank = init_default_bank();
        let reply = "Sure.\n```json\n{\"selected_local_node\": \"l_g_mem_ldg_readonly_texture_path\", \"rationale\": \"r\", \"edit_plan\": \"use __ldg\"}\n```";
        let c = choose(&bank, "g_memory_access_optimization", &mut Fixed(reply.into())).unwrap();
        assert!(!c.fallback);
        assert_eq!(c.action.local.as_str(), "l_g_mem_ldg_readonly_texture_path");
        assert_eq!(c.action.edit_plan, "use __ldg");
    }

    #[test]
    fn bogus_id_falls_back_to_top_ranked() {
        let bank = init_default_bank();
        let reply = "{\"selected_local_node\": \"l_bogus\", \"rationale\": \"\", \"edit_plan\": \"x\"}";
        let c = choose(&bank, "g_memory_access_optimization", &mut Fixed(reply.into())).unwrap();
        assert!(c.fallback);
        let top = &local_candidates(&bank, &GlobalId::from("g_memory_access_optimization")).unwrap()[0].id;
        assert_eq!(&c.action.local, top);
        assert_eq!(c.action.edit_plan, FALLBACK_EDIT_PLAN);
    }

    #[test]
    fn sibling_id_from_other_global_is_rejected() {
        let bank = init_default_bank();
        let reply = "```\n{\"selected_local_node\": \"l_g_reuse_staged_reuse\"}\n```";
        let c = choose(&bank, "g_memory_access_optimization", &mut Fixed(reply.into())).unwrap();
        assert!(c.fallback);
    }

    #[test]
    fn parser_skips_bad_blocks() {
        let text = "```\nnot json\n```\nthen\n```json\n{\"selected_local_node\": \"l_x\"}\n```";
        assert_eq!(parse_local_reply(text).unwrap().selected_local_node.as_str(), "l_x");
        assert!(parse_local_reply("nothing here").is_none());
        assert!(parse_local_reply("```\nunterminated").is_none());
    }

    #[test]
    fn scripted_default_is_lowest_ranked() {
        let bank = init_default_bank();
        let mut b = ScriptedBackend::with_defaults(LocalDefault::LowestRanked, CodeDefault::Echo);
        let c = choose(&bank, "g_boundary_simplification", &mut b).unwrap();
        let cands = local_candidates(&bank, &GlobalId::from("g_boundary_simplification")).unwrap();
        assert_eq!(&c.action.local, &cands.last().unwrap().id);
        assert!(!c.fallback);
    }
}
