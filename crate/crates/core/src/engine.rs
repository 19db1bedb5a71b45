//! The per-task evolution loop: pick a direction, pick a strategy, generate,
//! evaluate, write back.

use thiserror::Error;

use crate::adapters::{
    extract_code_block, Backend, BackendError, BackendReply, BackendRequest, EvalRequest, Evaluator,
    EvaluatorError, Phase,
};
use crate::config::{RunConfig, TaskSpec};
use crate::cost::TokenLedger;
use crate::local::{select_local, Action, LocalError, LocalQuery};
use crate::memory::{classify, BucketKey, GlobalId, MemoryBank, MemoryError, Observation, TransitionRecord};
use crate::policy::{global_distribution, sample_global, PolicyError, PolicyRng};
use crate::prompts::{build_generation_prompt, build_repair_prompt, PromptTemplates};
use crate::scoring::Scorer;
use crate::state::{
    summarize_state, CandidateImplementation, DecisionState, EvaluationFeedback, StateUpdate, SymptomDetector,
    TaskContext,
};
use crate::trajectory::{BestRecord, StepRecord, TrajectoryRecord};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("forced direction `{0}` is not in the bank")]
    UnknownForcedGlobal(GlobalId),
    #[error("task `{task}`: {source}")]
    Reference {
        task: String,
        #[source]
        source: EvaluatorError,
    },
}

/// Shared, read-only inputs of a run.
pub struct Engine<'a> {
    pub config: &'a RunConfig,
    pub templates: &'a PromptTemplates,
    pub detector: &'a (dyn SymptomDetector + Sync),
    /// Campaign-wide ledger, in addition to each record's own usage.
    pub ledger: Option<&'a TokenLedger>,
}

/// Why a run stopped early.
#[derive(Debug)]
enum Abort {
    Backend(BackendError),
    Evaluator(EvaluatorError),
}

impl std::fmt::Display for Abort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Abort::Backend(e) => write!(f, "{e}"),
            Abort::Evaluator(e) => write!(f, "{e}"),
        }
    }
}

struct Calls<'e> {
    backend: &'e mut dyn Backend,
    ledgers: [Option<&'e TokenLedger>; 2],
}

impl Calls<'_> {
    fn call(&mut self, req: &BackendRequest) -> Result<BackendReply, BackendError> {
        let reply = self.backend.complete(req)?;
        for l in self.ledgers.iter().flatten() {
            l.record(req.phase, reply.tokens_in, reply.tokens_out);
        }
        Ok(reply)
    }
}

struct Generated {
    candidate: Option<CandidateImplementation>,
    feedback: EvaluationFeedback,
    repaired: bool,
    truncated: bool,
}

fn evidence_summary(action: &Action, fb: &EvaluationFeedback, before_ms: f64) -> String {
    let result = match fb.executable_runtime() {
        Some(rt) => format!("{before_ms:.3} ms -> {rt:.3} ms"),
        None if fb.failure_detail.is_empty() => fb.failure_tag().to_string(),
        None => format!("{}: {}", fb.failure_tag(), fb.failure_detail),
    };
    format!("{}: {}; {}", action.local, action.edit_plan, result)
}

impl<'a> Engine<'a> {
    pub fn new(config: &'a RunConfig, templates: &'a PromptTemplates, detector: &'a (dyn SymptomDetector + Sync)) -> Self {
        Engine { config, templates, detector, ledger: None }
    }

    pub fn with_ledger(mut self, ledger: &'a TokenLedger) -> Self {
        self.ledger = Some(ledger);
        self
    }

    /// Runs `config.steps` refinement steps on one task. `bank` must be a
    /// writable fork unless memory is frozen.
    ///
    /// Adapter failures do not return an error: the partial trajectory
    /// comes back with `aborted` set. Errors are reserved for broken
    /// configuration or memory.
    pub fn run_task(
        &self,
        task: &TaskSpec,
        bank: &mut MemoryBank,
        backend: &mut dyn Backend,
        evaluator: &mut dyn Evaluator,
    ) -> Result<TrajectoryRecord, EngineError> {
        let cfg = self.config;
        for g in &cfg.forced_globals {
            bank.global(g).map_err(|_| EngineError::UnknownForcedGlobal(g.clone()))?;
        }
        if !cfg.ablation.freeze_memory && !bank.meta.writable {
            return Err(MemoryError::ReadOnly.into());
        }
        let policy = cfg.policy();
        policy.validate()?;

        let initial = CandidateImplementation::initial(task.initial_source.clone());
        let reference = match task.reference_runtime_ms {
            Some(r) => r,
            None => evaluator
                .reference_runtime_ms(&task.task_id, &initial, cfg.eval_timeout_ms)
                .map_err(|source| EngineError::Reference { task: task.task_id.clone(), source })?,
        };
        let ctx = TaskContext {
            task_id: task.task_id.clone(),
            operator_type: task.operator_type.clone(),
            input_shape_summary: task.input_shape_summary.clone(),
            reference_runtime_ms: reference,
        };

        let own_ledger = TokenLedger::new();
        let mut calls = Calls { backend, ledgers: [Some(&own_ledger), self.ledger] };
        let mut rng = PolicyRng::new(cfg.seed);
        let params = cfg.memory_params();

        let mut current = initial.clone();
        let mut current_ms = reference;
        let mut incumbent_ms = reference;
        let mut best: Option<(BestRecord, String)> = None;
        let mut state = summarize_state(
            &ctx,
            None,
            StateUpdate { code: &current, action: None, feedback: None },
            cfg.stagnation_window,
            self.detector,
        );
        let mut prefix: Vec<GlobalId> = Vec::new();
        let mut transitions: Vec<TransitionRecord> = Vec::new();
        let mut steps: Vec<StepRecord> = Vec::new();
        let mut aborted = None;

        for t in 1..=cfg.steps {
            // Direction.
            let scored_prefix: &[GlobalId] = if cfg.ablation.no_prefix && !prefix.is_empty() {
                &prefix[prefix.len() - 1..]
            } else {
                &prefix
            };
            let scores = Scorer::new(bank, &cfg.weights, cfg.n_min).all_scores(scored_prefix, &state, cfg.effective_lambda())?;
            let dist = global_distribution(&scores, &policy)?;
            let (g, forced) = match cfg.forced_globals.get(t as usize - 1) {
                Some(g) => (g.clone(), true),
                None => (sample_global(&dist, &mut rng), false),
            };
            let mut rec = StepRecord {
                step: t,
                state: state.clone(),
                global: g.clone(),
                global_probability: if forced { 1.0 } else { dist.prob(&g) },
                forced,
                local: None,
                edit_plan: None,
                local_fallback: false,
                invalid: false,
                repaired: false,
                truncated: false,
                candidate_digest: None,
                feedback: None,
                outcome: None,
                log_gain: None,
                speedup: None,
                best_speedup: best.as_ref().map(|b| b.0.speedup),
            };

            // Strategy.
            let query = LocalQuery {
                task_id: &task.task_id,
                state: &state,
                code: &current,
                global: &g,
                evidence_k: cfg.evidence_k,
                max_output_tokens: cfg.limits.local_selection,
                templates: self.templates,
            };
            let choice = match select_local(&query, bank, &mut ForLocal(&mut calls)) {
                Ok(c) => c,
                Err(LocalError::InvalidStep(_)) => {
                    rec.invalid = true;
                    steps.push(rec);
                    state = summarize_state(
                        &ctx,
                        Some(&state),
                        StateUpdate { code: &current, action: None, feedback: None },
                        cfg.stagnation_window,
                        self.detector,
                    );
                    prefix.push(g);
                    continue;
                }
                Err(LocalError::Backend(e)) => {
                    steps.push(rec);
                    aborted = Some(Abort::Backend(e));
                    break;
                }
                Err(LocalError::Memory(e)) => return Err(e.into()),
            };
            let action = choice.action;
            rec.local = Some(action.local.clone());
            rec.edit_plan = Some(action.edit_plan.clone());
            rec.local_fallback = choice.fallback;
            rec.truncated = choice.reply.truncated;

            // Implementation.
            let generated = match self.generate(task, &state, &current, &action, bank, &mut calls, evaluator) {
                Ok(gen) => gen,
                Err(a) => {
                    steps.push(rec);
                    aborted = Some(a);
                    break;
                }
            };
            rec.repaired = generated.repaired;
            rec.truncated |= generated.truncated;
            rec.candidate_digest = generated.candidate.as_ref().map(|c| c.digest());
            let fb = generated.feedback;

            // Write-back.
            let summary = evidence_summary(&action, &fb, current_ms);
            let obs = Observation {
                task_id: &task.task_id,
                step: t,
                prev_global: prefix.last(),
                global: &g,
                local: &action.local,
                state: &state,
                feedback: &fb,
                runtime_before: Some(current_ms),
                incumbent_ms: Some(incumbent_ms),
                summary,
            };
            let c = if cfg.ablation.freeze_memory {
                fb.validate().map_err(MemoryError::InvalidFeedback)?;
                classify(&fb, obs.runtime_before, obs.incumbent_ms, params.timing_tolerance)
            } else {
                bank.record_outcome(&obs, &params)?
            };
            transitions.push(TransitionRecord {
                step: t,
                prev_global: prefix.last().cloned(),
                global: g.clone(),
                bucket: BucketKey::from_state(&state),
                log_gain: c.log_gain,
            });
            rec.outcome = Some(c.outcome);
            if c.gain_measured {
                rec.log_gain = Some(c.log_gain);
            }

            if let (Some(rt), Some(cand)) = (fb.executable_runtime(), generated.candidate) {
                let speedup = reference / rt;
                rec.speedup = Some(speedup);
                if best.as_ref().is_none_or(|b| speedup > b.0.speedup) {
                    best = Some((
                        BestRecord { step: t, speedup, runtime_ms: rt, digest: cand.digest(), generated: true },
                        cand.source.clone(),
                    ));
                }
                incumbent_ms = incumbent_ms.min(rt);
                current = cand;
                current_ms = rt;
            }
            rec.best_speedup = best.as_ref().map(|b| b.0.speedup);
            rec.feedback = Some(fb.clone());
            steps.push(rec);

            state = summarize_state(
                &ctx,
                Some(&state),
                StateUpdate { code: &current, action: Some(&action), feedback: Some(&fb) },
                cfg.stagnation_window,
                self.detector,
            );
            prefix.push(g);
        }

        if !cfg.ablation.freeze_memory {
            bank.apply_future_gains(&transitions, cfg.gamma)?;
        }

        let (best, best_source) = best.unwrap_or_else(|| {
            (
                BestRecord { step: 0, speedup: 1.0, runtime_ms: reference, digest: initial.digest(), generated: false },
                initial.source.clone(),
            )
        });
        Ok(TrajectoryRecord {
            task_id: task.task_id.clone(),
            reference_runtime_ms: reference,
            seed: cfg.seed,
            steps,
            best,
            best_source,
            usage: own_ledger.snapshot(),
            aborted: aborted.map(|a| a.to_string()),
        })
    }

    /// One generation call, an optional repair call, and evaluation.
    #[allow(clippy::too_many_arguments)]
    fn generate(
        &self,
        task: &TaskSpec,
        state: &DecisionState,
        current: &CandidateImplementation,
        action: &Action,
        bank: &MemoryBank,
        calls: &mut Calls<'_>,
        evaluator: &mut dyn Evaluator,
    ) -> Result<Generated, Abort> {
        let cfg = self.config;
        let local = bank.local(&action.local).expect("selected local exists");
        let request = |phase, prompt, code: &str| BackendRequest {
            phase,
            task_id: task.task_id.clone(),
            step: state.step,
            prompt,
            max_output_tokens: cfg.limits.for_phase(phase),
            current_code: code.to_string(),
            global: Some(action.global.clone()),
            local: Some(action.local.clone()),
            candidates: Vec::new(),
        };
        let prompt = build_generation_prompt(self.templates, current, state, action, local, cfg.evidence_k);
        let reply = calls.call(&request(Phase::CodeGeneration, prompt, &current.source)).map_err(Abort::Backend)?;
        let mut truncated = reply.truncated;

        let evaluate = |source: String, evaluator: &mut dyn Evaluator| -> Result<_, Abort> {
            let cand = CandidateImplementation {
                source,
                origin_step: state.step,
                lineage: Some(current.digest()),
            };
            let fb = evaluator
                .evaluate(&EvalRequest { task_id: &task.task_id, candidate: &cand, timeout_ms: cfg.eval_timeout_ms })
                .map_err(Abort::Evaluator)?;
            Ok((cand, fb))
        };

        let (mut candidate, mut feedback, failed_text) = match extract_code_block(&reply.text) {
            Some(src) => {
                let (c, fb) = evaluate(src, evaluator)?;
                let failed = (!fb.compile).then(|| c.source.clone());
                (Some(c), fb, failed)
            }
            None => (
                None,
                EvaluationFeedback::compile_failure("reply contained no fenced code block"),
                Some(reply.text.clone()),
            ),
        };

        let mut repaired = false;
        if let (true, Some(failed)) = (cfg.repair, failed_text) {
            let prompt = build_repair_prompt(
                self.templates,
                &failed,
                action,
                feedback.failure_tag(),
                &feedback.failure_detail,
            );
            let fix = calls.call(&request(Phase::Repair, prompt, &failed)).map_err(Abort::Backend)?;
            truncated |= fix.truncated;
            repaired = true;
            match extract_code_block(&fix.text) {
                Some(src) => {
                    let (c, fb) = evaluate(src, evaluator)?;
                    candidate = Some(c);
                    feedback = fb;
                }
                None => {
                    feedback = EvaluationFeedback::compile_failure("repair reply contained no fenced code block");
                }
            }
        }
        Ok(Generated { candidate, feedback, repaired, truncated })
    }
}

/// Routes local-selection calls through the ledgers.
struct ForLocal<'c, 'e>(&'c mut Calls<'e>);

impl Backend for ForLocal<'_, '_> {
    fn complete(&mut self, request: &BackendRequest) -> Result<BackendReply, BackendError> {
        self.0.call(request)
    }
}
