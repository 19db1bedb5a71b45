//! Engine contracts exercised through hand-written adapters.

use std::collections::BTreeMap;

use htam::adapters::{Backend, BackendError, BackendReply, BackendRequest, EvalRequest, Evaluator, EvaluatorError, Phase};
use htam::config::RunConfig;
use htam::cost::PriceSheet;
use htam::memory::{init_default_bank, GlobalId, MemoryBank, OutcomeClass};
use htam::prompts::PromptTemplates;
use htam::report::compute_metrics;
use htam::state::{EvaluationFeedback, RuleBasedSymptoms};
use htam::trajectory::{read_log, write_log, TrajectoryRecord};
use htam::{Engine, TaskSpec};

const REUSE: &str = "g_data_reuse_locality";
const MEM: &str = "g_memory_access_optimization";

/// Picks the top-ranked strategy and emits `v<step>` as code. Fails with
/// a transport error on `fail_at`; `no_code` makes generation replies
/// prose-only so the repair path runs.
struct Fake {
    fail_at: Option<(Phase, u32)>,
    no_code: bool,
    calls: Vec<(Phase, u32)>,
}

impl Fake {
    fn new() -> Self {
        Fake { fail_at: None, no_code: false, calls: Vec::new() }
    }
}

impl Backend for Fake {
    fn complete(&mut self, req: &BackendRequest) -> Result<BackendReply, BackendError> {
        self.calls.push((req.phase, req.step));
        if self.fail_at == Some((req.phase, req.step)) {
            return Err(BackendError::Transport("connection reset".into()));
        }
        let text = match req.phase {
            Phase::LocalSelection => format!(
                "{{\"selected_local_node\": \"{}\", \"rationale\": \"top\", \"edit_plan\": \"apply\"}}",
                req.candidates[0].id
            ),
            Phase::CodeGeneration if self.no_code => "I would restructure the loop.".to_string(),
            Phase::Repair => format!("```\nrepaired v{}\n```", req.step),
            _ => format!("```\nv{}\n```", req.step),
        };
        Ok(BackendReply { text, tokens_in: 100, tokens_out: 10, truncated: false })
    }
}

/// Runtimes keyed by candidate text; `None` fails compilation.
struct Table {
    runtimes: BTreeMap<String, Option<f64>>,
    fail_on: Option<String>,
}

impl Evaluator for Table {
    fn evaluate(&mut self, req: &EvalRequest<'_>) -> Result<EvaluationFeedback, EvaluatorError> {
        let src = req.candidate.source.trim().to_string();
        if self.fail_on.as_deref() == Some(src.as_str()) {
            return Err(EvaluatorError::Transport("worker died".into()));
        }
        Ok(match self.runtimes.get(&src) {
            Some(Some(ms)) => EvaluationFeedback::passed(*ms),
            _ => EvaluationFeedback::compile_failure("error: expected `;`"),
        })
    }
}

fn table(pairs: &[(&str, Option<f64>)]) -> Table {
    Table { runtimes: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(), fail_on: None }
}

fn task() -> TaskSpec {
    TaskSpec {
        task_id: "t".into(),
        operator_type: "elementwise".into(),
        input_shape_summary: "[16, 16384]".into(),
        initial_source: "v0".into(),
        reference_runtime_ms: Some(10.0),
    }
}

fn config(steps: u32, forced: &[&str]) -> RunConfig {
    RunConfig { steps, forced_globals: forced.iter().map(|g| GlobalId::from(*g)).collect(), ..RunConfig::default() }
}

fn run(cfg: &RunConfig, bank: &mut MemoryBank, backend: &mut Fake, ev: &mut Table) -> TrajectoryRecord {
    let templates = PromptTemplates::default();
    Engine::new(cfg, &templates, &RuleBasedSymptoms).run_task(&task(), bank, backend, ev).unwrap()
}

fn observations(bank: &MemoryBank) -> u64 {
    bank.edges.iter().map(|e| e.aggregate.n).sum()
}

#[test]
fn backend_failure_aborts_with_the_partial_trajectory() {
    let cfg = config(4, &[REUSE, MEM, MEM, MEM]);
    let mut bank = init_default_bank().fork_writable();
    let mut backend = Fake { fail_at: Some((Phase::CodeGeneration, 3)), ..Fake::new() };
    let mut ev = table(&[("v1", Some(8.0)), ("v2", Some(5.0))]);
    let r = run(&cfg, &mut bank, &mut backend, &mut ev);

    assert!(r.aborted.as_deref().is_some_and(|a| a.contains("connection reset")), "{:?}", r.aborted);
    assert_eq!(r.steps.len(), 3);
    assert!(r.steps[..2].iter().all(|s| s.feedback.is_some()));
    assert!(r.steps[2].feedback.is_none() && r.steps[2].local.is_some());
    assert_eq!((r.best.step, r.best.speedup), (2, 2.0));
    // Only step 2 has a predecessor, so exactly one edge observation.
    assert_eq!(observations(&bank), 1);
    assert_eq!(bank.edge(&GlobalId::from(REUSE), &GlobalId::from(MEM)).unwrap().aggregate.n, 1);
}

#[test]
fn evaluator_failure_aborts_before_write_back() {
    let cfg = config(3, &[REUSE, MEM, REUSE]);
    let mut bank = init_default_bank().fork_writable();
    let mut ev = table(&[("v1", Some(8.0))]);
    ev.fail_on = Some("v2".into());
    let r = run(&cfg, &mut bank, &mut Fake::new(), &mut ev);
    assert!(r.aborted.as_deref().is_some_and(|a| a.contains("worker died")));
    assert_eq!(r.steps.len(), 2);
    assert!(r.steps[1].outcome.is_none());
    assert_eq!(observations(&bank), 0);
}

#[test]
fn repair_is_attempted_once_per_failed_generation() {
    let cfg = config(3, &[REUSE, MEM, MEM]);
    let mut bank = init_default_bank().fork_writable();
    let mut backend = Fake { no_code: true, ..Fake::new() };
    let mut ev = table(&[("repaired v2", Some(4.0))]);
    let r = run(&cfg, &mut bank, &mut backend, &mut ev);

    let repairs: Vec<u32> = backend.calls.iter().filter(|(p, _)| *p == Phase::Repair).map(|(_, s)| *s).collect();
    assert_eq!(repairs, vec![1, 2, 3]);
    assert!(r.steps.iter().all(|s| s.repaired));
    let outcomes: Vec<_> = r.steps.iter().map(|s| s.outcome.unwrap()).collect();
    assert_eq!(outcomes, vec![OutcomeClass::CompileFail, OutcomeClass::Improved, OutcomeClass::CompileFail]);
    assert_eq!((r.best.step, r.best.speedup), (2, 2.5));
    assert_eq!(r.usage.phases[&Phase::Repair].calls, 3);

    let mut backend = Fake { no_code: true, ..Fake::new() };
    let no_repair = RunConfig { repair: false, ..cfg };
    let r = run(&no_repair, &mut init_default_bank().fork_writable(), &mut backend, &mut table(&[]));
    assert!(backend.calls.iter().all(|(p, _)| *p != Phase::Repair));
    assert!(!r.correct());
}

#[test]
fn a_direction_without_strategies_is_an_invalid_step_that_still_extends_the_prefix() {
    let cfg = config(2, &[REUSE, MEM]);
    let mut bank = init_default_bank().fork_writable();
    bank.locals.retain(|l| l.parent.as_str() != REUSE);
    let mut backend = Fake::new();
    let r = run(&cfg, &mut bank, &mut backend, &mut table(&[("v2", Some(5.0))]));
    assert!(r.steps[0].invalid && r.steps[0].local.is_none());
    assert!(!r.steps[1].invalid);
    // No calls were spent on the invalid step.
    assert!(backend.calls.iter().all(|(_, s)| *s == 2));
    // The step-2 observation lands on the edge leaving the invalid direction.
    assert_eq!(bank.edge(&GlobalId::from(REUSE), &GlobalId::from(MEM)).unwrap().aggregate.n, 1);
}

#[test]
fn budget_of_one_step_makes_one_generation_call() {
    let cfg = RunConfig { steps: 1, ..RunConfig::default() };
    let mut backend = Fake::new();
    let r = run(&cfg, &mut init_default_bank().fork_writable(), &mut backend, &mut table(&[("v1", Some(9.0))]));
    assert_eq!(r.steps.len(), 1);
    let gens = backend.calls.iter().filter(|(p, _)| *p == Phase::CodeGeneration).count();
    assert_eq!(gens, 1);
}

#[test]
fn frozen_memory_is_never_written() {
    let mut cfg = config(4, &[]);
    cfg.ablation.freeze_memory = true;
    let mut bank = init_default_bank();
    let before = bank.to_canonical_string();
    let mut ev = table(&[("v1", Some(9.0)), ("v2", Some(8.0)), ("v3", None), ("v4", Some(12.0))]);
    let r = run(&cfg, &mut bank, &mut Fake::new(), &mut ev);
    assert_eq!(r.steps.len(), 4);
    assert_eq!(bank.to_canonical_string(), before);

    // The same run on a read-only bank without the flag is refused.
    let cfg = config(4, &[]);
    let templates = PromptTemplates::default();
    let err = Engine::new(&cfg, &templates, &RuleBasedSymptoms).run_task(&task(), &mut bank, &mut Fake::new(), &mut table(&[]));
    assert!(err.is_err());
}

#[test]
fn slower_correct_candidate_counts_as_correct_but_not_fast() {
    let cfg = config(2, &[MEM, MEM]);
    // Both candidates are slower than the 10 ms reference; the best is 0.9x.
    let mut ev = table(&[("v1", Some(10.0 / 0.9)), ("v2", Some(12.5))]);
    let r = run(&cfg, &mut init_default_bank().fork_writable(), &mut Fake::new(), &mut ev);
    assert!(r.correct());
    assert!((r.best.speedup - 0.9).abs() < 1e-12);
    assert_eq!(r.best.step, 1);

    let m = compute_metrics(&[r], &[1.0]);
    assert_eq!((m.correctness_rate, m.fast_at_1), (1.0, 0.0));
    assert_eq!(m.valid_at, vec![(1.0, 0.0)]);
    assert!((m.geomean_speedup.unwrap() - 0.9).abs() < 1e-12);
}

#[test]
fn tasks_without_a_correct_candidate_report_the_reference() {
    let cfg = config(2, &[MEM, MEM]);
    let r = run(&cfg, &mut init_default_bank().fork_writable(), &mut Fake::new(), &mut table(&[]));
    assert!(!r.correct());
    assert_eq!((r.best.step, r.best.generated, r.best_source.as_str()), (0, false, "v0"));
    let m = compute_metrics(&[r], &[]);
    assert_eq!((m.correct, m.geomean_speedup), (0, None));
}

#[test]
fn valid_at_thresholds_are_inclusive() {
    let mut records = Vec::new();
    for (i, ms) in [10.0 / 2.345, 5.0, 8.0].into_iter().enumerate() {
        let mut r = run(&config(1, &[MEM]), &mut init_default_bank().fork_writable(), &mut Fake::new(), &mut table(&[("v1", Some(ms))]));
        r.task_id = format!("t{i}");
        records.push(r);
    }
    let m = compute_metrics(&records, &[2.0, 2.5]);
    assert_eq!(m.valid_at, vec![(2.0, 2.0 / 3.0), (2.5, 0.0)]);
    assert_eq!(m.fast_at_1, 1.0);
    let want = (2.345f64 * 2.0 * 1.25).powf(1.0 / 3.0);
    assert!((m.geomean_speedup.unwrap() - want).abs() < 1e-12);
}

#[test]
fn trajectory_log_round_trips() {
    let cfg = config(3, &[REUSE, MEM, MEM]);
    let mut backend = Fake { fail_at: Some((Phase::LocalSelection, 3)), ..Fake::new() };
    let r = run(&cfg, &mut init_default_bank().fork_writable(), &mut backend, &mut table(&[("v1", Some(7.0))]));
    let prices = PriceSheet::from_dollars("p", 0.58, 2.32).unwrap();
    let mut buf = Vec::new();
    write_log(&mut buf, &r, &prices).unwrap();
    assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 2 + r.steps.len());
    let (back, back_prices) = read_log(buf.as_slice()).unwrap();
    assert_eq!(back, r);
    assert_eq!(back_prices, prices);

    // Dropping the summary line is detected.
    let text = String::from_utf8(buf).unwrap();
    let truncated: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
    assert!(read_log(truncated.as_bytes()).is_err());
}
