use std::path::Path;

use proptest::prelude::*;

use super::*;
use crate::state::{Progress, TaskContext};

fn state(step: u32, failed_before: bool) -> DecisionState {
    DecisionState {
        step,
        task: TaskContext {
            task_id: "t".into(),
            operator_type: String::new(),
            input_shape_summary: String::new(),
            reference_runtime_ms: 18.2,
        },
        code_summary: String::new(),
        feedback: None,
        progress: Progress { failed_before, ..Progress::default() },
        symptoms: vec![Symptom::MemoryBound],
    }
}

const MEM: &str = "g_memory_access_optimization";
const REUSE: &str = "g_data_reuse_locality";
const VEC4: &str = "l_g_mem_aligned_vec4_main_tail";
const FUSION: &str = "l_g_reuse_light_epilogue_fusion";

fn observe<'a>(
    step: u32,
    prev: Option<&'a GlobalId>,
    g: &'a GlobalId,
    l: &'a LocalId,
    st: &'a DecisionState,
    fb: &'a EvaluationFeedback,
    before: f64,
) -> Observation<'a> {
    Observation {
        task_id: "t",
        step,
        prev_global: prev,
        global: g,
        local: l,
        state: st,
        feedback: fb,
        runtime_before: Some(before),
        incumbent_ms: Some(before),
        summary: "s".into(),
    }
}

#[test]
fn default_bank_structure() {
    let bank = init_default_bank();
    assert_eq!(bank.globals.len(), 5);
    assert_eq!(bank.edges.len(), 25);
    assert_eq!(bank.edges.iter().filter(|e| e.src == e.dst).count(), 5);
    assert!(bank.edges.iter().all(|e| e.aggregate.n == 0 && e.buckets.is_empty()));
    for g in &bank.globals {
        assert!(bank.children(&g.id).count() >= 3, "{} has too few locals", g.id);
    }
    let labels: Vec<&str> = bank.globals.iter().map(|g| g.label.as_str()).collect();
    for want in ["Memory Access", "Boundary", "Throughput", "Data Reuse", "Parallel Mapping"] {
        assert!(labels.contains(&want), "missing {want}");
    }
    bank.validate().unwrap();
    assert!(!bank.meta.writable);
}

#[test]
fn seeded_priors_differ_from_defaults() {
    let plain = default_bank(false);
    let seeded = default_bank(true);
    let differing = plain
        .edges
        .iter()
        .zip(&seeded.edges)
        .filter(|(a, b)| a.prior != b.prior)
        .count();
    assert!(differing >= 1);
    assert_eq!(seeded.edges.len(), 25);
}

#[test]
fn fork_is_independent() {
    let base = init_default_bank();
    let before = base.to_canonical_string();
    let mut fork = base.fork_writable();
    let mut fork2 = fork.fork_writable();
    let (g, l) = (GlobalId::from(MEM), LocalId::from(VEC4));
    let st = state(2, false);
    let fb = EvaluationFeedback::passed(7.77);
    fork.record_outcome(&observe(2, Some(&g), &g, &l, &st, &fb, 9.56), &MemoryParams::default())
        .unwrap();
    assert_eq!(base.to_canonical_string(), before);
    assert_eq!(fork2.edges.len(), 25);
    assert_eq!(fork2.total_edge_observations(), 0);
    fork2
        .record_outcome(&observe(2, Some(&g), &g, &l, &st, &fb, 9.56), &MemoryParams::default())
        .unwrap();
    assert_eq!(fork.total_edge_observations(), 1);
    assert_eq!(fork2.total_edge_observations(), 1);
    assert_eq!(base.to_canonical_string(), before);
}

#[test]
fn read_only_bank_rejects_writes() {
    let mut bank = init_default_bank();
    let (g, l) = (GlobalId::from(MEM), LocalId::from(VEC4));
    let st = state(1, false);
    let fb = EvaluationFeedback::passed(7.77);
    let err = bank
        .record_outcome(&observe(1, None, &g, &l, &st, &fb, 9.56), &MemoryParams::default())
        .unwrap_err();
    assert_eq!(err, MemoryError::ReadOnly);
}

#[test]
fn unknown_and_mismatched_ids() {
    let mut bank = init_default_bank().fork_writable();
    let st = state(1, false);
    let fb = EvaluationFeedback::passed(7.77);
    let (g, bogus) = (GlobalId::from(MEM), LocalId::from("l_bogus"));
    let err = bank
        .record_outcome(&observe(1, None, &g, &bogus, &st, &fb, 9.0), &MemoryParams::default())
        .unwrap_err();
    assert!(matches!(err, MemoryError::UnknownLocal(_)));
    let fusion = LocalId::from(FUSION);
    let err = bank
        .record_outcome(&observe(1, None, &g, &fusion, &st, &fb, 9.0), &MemoryParams::default())
        .unwrap_err();
    assert!(matches!(err, MemoryError::ParentMismatch { .. }));
    let nowhere = GlobalId::from("g_nowhere");
    let err = bank
        .record_outcome(&observe(1, None, &nowhere, &fusion, &st, &fb, 9.0), &MemoryParams::default())
        .unwrap_err();
    assert!(matches!(err, MemoryError::UnknownGlobal(_)));
}

#[test]
fn first_step_touches_no_edge() {
    let mut bank = init_default_bank().fork_writable();
    let edges_before = bank.edges.clone();
    let (g, l) = (GlobalId::from(REUSE), LocalId::from(FUSION));
    let st = state(1, false);
    let fb = EvaluationFeedback::passed(9.56);
    let c = bank
        .record_outcome(&observe(1, None, &g, &l, &st, &fb, 18.2), &MemoryParams::default())
        .unwrap();
    assert_eq!(bank.edges, edges_before);
    assert_eq!(c.outcome, OutcomeClass::Improved);
    // ln(18.2 / 9.56) = 0.64383; the rounded figure 0.6437 is within 2e-4.
    assert!((c.log_gain - (18.2f64 / 9.56).ln()).abs() < 1e-12, "{}", c.log_gain);
    assert!((c.log_gain - 0.6437).abs() < 2e-4, "{}", c.log_gain);
    let node = bank.local(&l).unwrap();
    assert_eq!(node.evidence.positive.len(), 1);
    assert_eq!(node.evidence.positive[0].log_gain, c.log_gain);
    assert_eq!(node.runtime.attempts, 1);
    assert_eq!(bank.global(&g).unwrap().runtime.successes, 1);
}

#[test]
fn compile_failure_accounting() {
    let mut bank = init_default_bank().fork_writable();
    let (prev, g, l) = (GlobalId::from(REUSE), GlobalId::from(MEM), LocalId::from(VEC4));
    let st = state(2, false);
    let fb = EvaluationFeedback::compile_failure("error: identifier undefined");
    let c = bank
        .record_outcome(&observe(2, Some(&prev), &g, &l, &st, &fb, 9.56), &MemoryParams::default())
        .unwrap();
    assert_eq!(c.outcome, OutcomeClass::CompileFail);
    let e = bank.edge(&prev, &g).unwrap();
    assert_eq!(e.aggregate.n, 1);
    assert_eq!(e.aggregate.cfail, 1);
    assert_eq!(e.aggregate.imm_gain_sum, 0.0);
    let bucket = e.buckets.get(&BucketKey::from_state(&st)).unwrap();
    assert_eq!(bucket.n, 1);
    assert_eq!(bucket.cfail, 1);
    let node = bank.local(&l).unwrap();
    assert_eq!(node.evidence.negative.len(), 1);
    assert_eq!(node.evidence.negative[0].log_gain, 0.0);
    assert_eq!(node.runtime.compile_passes, 0);
}

#[test]
fn neutral_outcome_skips_evidence_lists() {
    let mut bank = init_default_bank().fork_writable();
    let (g, l) = (GlobalId::from(MEM), LocalId::from(VEC4));
    let st = state(3, false);
    let fb = EvaluationFeedback::passed(7.76);
    let c = bank
        .record_outcome(&observe(3, Some(&g), &g, &l, &st, &fb, 7.77), &MemoryParams::default())
        .unwrap();
    assert_eq!(c.outcome, OutcomeClass::Neutral);
    assert!(c.success);
    assert!(bank.local(&l).unwrap().evidence.is_empty());
    let e = bank.edge(&g, &g).unwrap();
    assert_eq!((e.aggregate.n, e.aggregate.succ, e.aggregate.pos), (1, 1, 0));
}

#[test]
fn classification_rules() {
    let tol = 0.01;
    let fb = EvaluationFeedback::passed(10.0);
    let c = classify(&fb, Some(9.0), Some(9.0), tol);
    assert_eq!(c.outcome, OutcomeClass::Regressed);
    assert!(c.regressed && !c.success);
    assert!(c.log_gain < 0.0);

    let c = classify(&EvaluationFeedback::incorrect("mismatch"), Some(9.0), Some(9.0), tol);
    assert_eq!(c.outcome, OutcomeClass::CorrectFail);
    assert_eq!(c.log_gain, 0.0);

    let c = classify(&EvaluationFeedback::timed_out("slow"), Some(9.0), Some(9.0), tol);
    assert_eq!(c.outcome, OutcomeClass::CorrectFail);

    // Faster than the parent but not than the incumbent best.
    let c = classify(&EvaluationFeedback::passed(8.0), Some(12.0), Some(7.0), tol);
    assert_eq!(c.outcome, OutcomeClass::Neutral);
    assert!(c.success);
}

#[test]
fn safe_counts_depend_on_earlier_failures() {
    let mut bank = init_default_bank().fork_writable();
    let (g, l) = (GlobalId::from(MEM), LocalId::from(VEC4));
    let fb = EvaluationFeedback::passed(5.0);
    let clean = state(2, false);
    let dirty = state(2, true);
    bank.record_outcome(&observe(2, Some(&g), &g, &l, &clean, &fb, 9.0), &MemoryParams::default())
        .unwrap();
    bank.record_outcome(&observe(2, Some(&g), &g, &l, &dirty, &fb, 9.0), &MemoryParams::default())
        .unwrap();
    let e = bank.edge(&g, &g).unwrap();
    assert_eq!((e.aggregate.succ, e.aggregate.safe), (2, 1));
    assert_eq!(e.buckets.len(), 2);
}

#[test]
fn evidence_cap_and_truncation() {
    let mut bank = init_default_bank().fork_writable();
    let (g, l) = (GlobalId::from(MEM), LocalId::from(VEC4));
    let st = state(2, false);
    let fb = EvaluationFeedback::compile_failure("x");
    let params = MemoryParams::default();
    for i in 0..40 {
        let mut obs = observe(2, None, &g, &l, &st, &fb, 9.0);
        obs.summary = format!("{i}:{}", "é".repeat(600));
        bank.record_outcome(&obs, &params).unwrap();
    }
    let node = bank.local(&l).unwrap();
    assert_eq!(node.evidence.negative.len(), 32);
    assert!(node.evidence.negative[0].summary.starts_with("8:"));
    assert!(node.evidence.negative.iter().all(|e| e.summary.chars().count() == 512));
    assert_eq!(node.runtime.attempts, 40);
}

fn rec(step: u32, prev: Option<&str>, g: &str, gain: f64) -> TransitionRecord {
    TransitionRecord {
        step,
        prev_global: prev.map(GlobalId::from),
        global: GlobalId::from(g),
        bucket: BucketKey::from_state(&state(step, false)),
        log_gain: gain,
    }
}

/// Independent oracle: explicit running power instead of `powi`.
fn brute_future(gains: &[f64], t: usize, gamma: f64) -> f64 {
    let mut total = 0.0;
    for k in t + 1..gains.len() {
        let mut w = 1.0;
        for _ in 0..(k - t) {
            w *= gamma;
        }
        total += w * gains[k];
    }
    total
}

#[test]
fn future_gain_discounting() {
    let gains = [0.6437, 0.2071, 0.0013];
    let traj = vec![
        rec(1, None, REUSE, gains[0]),
        rec(2, Some(REUSE), MEM, gains[1]),
        rec(3, Some(MEM), MEM, gains[2]),
    ];
    let expected = brute_future(&gains, 0, 0.9);
    assert!((expected - 0.187443).abs() < 1e-6);
    assert!((discounted_future_gain(&traj, 0, 0.9) - 0.1875).abs() < 1e-4);
    assert!((discounted_future_gain(&traj, 0, 0.9) - expected).abs() < 1e-15);
    assert_eq!(discounted_future_gain(&traj, 2, 0.9), 0.0);
    for i in 0..3 {
        assert_eq!(discounted_future_gain(&traj, i, 0.0), 0.0);
    }

    let mut bank = init_default_bank().fork_writable();
    // Populate the buckets the records point at.
    let st2 = state(2, false);
    let st3 = state(3, false);
    let fb = EvaluationFeedback::passed(7.0);
    let (reuse, mem, vec4) = (GlobalId::from(REUSE), GlobalId::from(MEM), LocalId::from(VEC4));
    bank.record_outcome(&observe(2, Some(&reuse), &mem, &vec4, &st2, &fb, 9.0), &MemoryParams::default())
        .unwrap();
    bank.record_outcome(&observe(3, Some(&mem), &mem, &vec4, &st3, &fb, 9.0), &MemoryParams::default())
        .unwrap();
    bank.apply_future_gains(&traj, 0.9).unwrap();
    let e = bank.edge(&reuse, &mem).unwrap();
    assert!((e.aggregate.fut_gain_sum - brute_future(&gains, 1, 0.9)).abs() < 1e-15);
    assert!((e.buckets[&BucketKey::from_state(&st2)].fut_gain_sum - 0.9 * 0.0013).abs() < 1e-15);
    assert_eq!(bank.edge(&mem, &mem).unwrap().aggregate.fut_gain_sum, 0.0);
}

#[test]
fn bucket_key_text_form() {
    let key = BucketKey::from_state(&state(5, true));
    assert_eq!(key.to_string(), "late|memory-bound|recently_failed");
    assert_eq!(key.to_string().parse::<BucketKey>().unwrap(), key);
    let none = BucketKey { stage: Stage::Mid, dominant_symptom: None, correctness: CorrectnessStatus::NeverFailed };
    assert_eq!(none.to_string(), "mid|none|never_failed");
    assert_eq!("mid|none|never_failed".parse::<BucketKey>().unwrap(), none);
    assert!("mid|none".parse::<BucketKey>().is_err());
    assert_eq!(Stage::of_step(1), Stage::Early);
    assert_eq!(Stage::of_step(2), Stage::Early);
    assert_eq!(Stage::of_step(4), Stage::Mid);
    assert_eq!(Stage::of_step(6), Stage::Late);
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bank.json");
    let bank = default_bank(true);
    save_bank(&bank, &path).unwrap();
    let back = load_bank(&path).unwrap();
    assert_eq!(back, bank);
    assert_eq!(back.to_canonical_string(), bank.to_canonical_string());
}

#[test]
fn canonical_text_is_key_sorted() {
    let text = init_default_bank().to_canonical_string();
    let top: Vec<usize> = ["\"edges\"", "\"globals\"", "\"locals\"", "\"meta\""]
        .iter()
        .map(|k| text.find(&format!("\n  {k}")).unwrap())
        .collect();
    assert!(top.windows(2).all(|w| w[0] < w[1]));
    assert!(text.contains("\"schema_version\": \"htg-1\""));
}

#[test]
fn load_rejects_unknown_schema() {
    let text = init_default_bank().to_canonical_string().replace("\"htg-1\"", "\"htg-9\"");
    let err = MemoryBank::from_canonical_str(&text, Path::new("b.json")).unwrap_err();
    assert!(matches!(err, PersistError::SchemaVersion { ref found, .. } if found == "htg-9"));
}

#[test]
fn load_reports_parse_location() {
    let err = MemoryBank::from_canonical_str("{\n  \"meta\": [,\n}", Path::new("b.json")).unwrap_err();
    match err {
        PersistError::Parse { line, .. } => assert_eq!(line, 2),
        other => panic!("unexpected {other:?}"),
    }
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_bank(&dir.path().join("missing.json")), Err(PersistError::Io { .. })));
}

#[test]
fn load_rejects_incomplete_edges() {
    let mut bank = init_default_bank();
    bank.edges.pop();
    let err = MemoryBank::from_canonical_str(&bank.to_canonical_string(), Path::new("b.json")).unwrap_err();
    assert!(matches!(err, PersistError::Invalid { .. }));
}

#[test]
fn merge_adds_fork_deltas() {
    let base = init_default_bank();
    let mut fork = base.fork_writable();
    let (reuse, mem, vec4) = (GlobalId::from(REUSE), GlobalId::from(MEM), LocalId::from(VEC4));
    let st = state(2, false);
    let fb = EvaluationFeedback::passed(7.77);
    for _ in 0..3 {
        fork.record_outcome(&observe(2, Some(&reuse), &mem, &vec4, &st, &fb, 9.56), &MemoryParams::default())
            .unwrap();
    }
    let merged = merge_banks(&base, &[fork.clone()], 32).unwrap();
    assert_eq!(merged.total_edge_observations(), base.total_edge_observations() + 3);
    assert_eq!(merged.local(&vec4).unwrap().evidence.positive.len(), 3);

    // Merging a second fork taken from the merged bank stacks on top.
    let mut fork2 = merged.fork_writable();
    fork2
        .record_outcome(&observe(2, Some(&reuse), &mem, &vec4, &st, &fb, 9.56), &MemoryParams::default())
        .unwrap();
    let again = merge_banks(&merged, &[fork2, merged.fork_writable()], 32).unwrap();
    assert_eq!(again.total_edge_observations(), 4);
    again.validate().unwrap();
}

#[test]
fn merge_of_empty_forks_is_identity() {
    let base = init_default_bank();
    let merged = merge_banks(&base, &[base.fork_writable(), base.fork_writable()], 32).unwrap();
    assert_eq!(merged, base);
}

#[test]
fn merge_detects_topology_conflict() {
    let base = init_default_bank();
    let mut globals = base.globals.clone();
    globals.push(GlobalNode {
        id: GlobalId::from("g_extra"),
        label: "Extra".into(),
        prior: GlobalPrior::default(),
        runtime: NodeStats::default(),
    });
    let fork = MemoryBank::assemble(globals, base.locals.clone(), &BTreeMap::new(), "x").unwrap();
    let err = merge_banks(&base, &[fork], 32).unwrap_err();
    match err {
        MergeError::Topology { ids } => assert_eq!(ids, vec!["global:g_extra".to_string()]),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn merge_rejects_foreign_fork() {
    let mut base = init_default_bank().fork_writable();
    let (mem, vec4) = (GlobalId::from(MEM), LocalId::from(VEC4));
    let st = state(1, false);
    let fb = EvaluationFeedback::passed(7.77);
    base.record_outcome(&observe(1, None, &mem, &vec4, &st, &fb, 9.0), &MemoryParams::default())
        .unwrap();
    let fresh = init_default_bank();
    assert!(matches!(merge_banks(&base, &[fresh], 32), Err(MergeError::NotDescendant { .. })));
}

fn arb_feedback() -> impl Strategy<Value = EvaluationFeedback> {
    prop_oneof![
        (0.5f64..50.0).prop_map(EvaluationFeedback::passed),
        Just(EvaluationFeedback::compile_failure("c")),
        Just(EvaluationFeedback::incorrect("m")),
        Just(EvaluationFeedback::timed_out("t")),
    ]
}

#[derive(Clone, Debug)]
struct Op {
    step: u32,
    prev: Option<usize>,
    local: usize,
    feedback: EvaluationFeedback,
    before: f64,
    failed_before: bool,
    symptom: usize,
}

fn arb_op() -> impl Strategy<Value = Op> {
    (1u32..8, proptest::option::of(0usize..5), 0usize..16, arb_feedback(), 0.5f64..50.0, any::<bool>(), 0usize..6)
        .prop_map(|(step, prev, local, feedback, before, failed_before, symptom)| Op {
            step,
            prev,
            local,
            feedback,
            before,
            failed_before,
            symptom,
        })
}

fn apply_ops(bank: &mut MemoryBank, ops: &[Op]) {
    let params = MemoryParams { evidence_cap: 4, ..MemoryParams::default() };
    for op in ops {
        let local = bank.locals[op.local].clone();
        let prev = op.prev.map(|i| bank.globals[i].id.clone());
        let mut st = state(op.step, op.failed_before);
        st.symptoms = Symptom::ALL.get(op.symptom).into_iter().copied().collect();
        let mut obs = observe(op.step, prev.as_ref(), &local.parent, &local.id, &st, &op.feedback, op.before);
        obs.summary = format!("op at step {}", op.step);
        bank.record_outcome(&obs, &params).unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn random_banks_round_trip(ops in proptest::collection::vec(arb_op(), 0..40), gamma in 0.0f64..1.0) {
        let mut bank = default_bank(true).fork_writable();
        apply_ops(&mut bank, &ops);
        let traj: Vec<TransitionRecord> = ops
            .iter()
            .enumerate()
            .map(|(i, op)| TransitionRecord {
                step: i as u32 + 1,
                prev_global: op.prev.map(|p| bank.globals[p].id.clone()),
                global: bank.locals[op.local].parent.clone(),
                bucket: BucketKey::from_state(&state(op.step, op.failed_before)),
                log_gain: 0.1,
            })
            .collect();
        bank.apply_future_gains(&traj, gamma).unwrap();
        let text = bank.to_canonical_string();
        let back = MemoryBank::from_canonical_str(&text, Path::new("p.json")).unwrap();
        prop_assert_eq!(&back, &bank);
        prop_assert_eq!(back.to_canonical_string(), text);
    }

    #[test]
    fn updates_preserve_invariants(ops in proptest::collection::vec(arb_op(), 1..60)) {
        let mut bank = init_default_bank().fork_writable();
        let mut expected_edge_obs = 0u64;
        let mut prev_counts: Vec<u64> = vec![0; bank.globals.len() + bank.locals.len() + bank.edges.len()];
        for op in &ops {
            apply_ops(&mut bank, std::slice::from_ref(op));
            expected_edge_obs += u64::from(op.prev.is_some());
            prop_assert_eq!(bank.edges.len(), 25);
            bank.validate().unwrap();
            let counts: Vec<u64> = bank
                .globals
                .iter()
                .map(|g| g.runtime.attempts)
                .chain(bank.locals.iter().map(|l| l.runtime.attempts))
                .chain(bank.edges.iter().map(|e| e.aggregate.n))
                .collect();
            prop_assert!(counts.iter().zip(&prev_counts).all(|(now, was)| now >= was));
            prev_counts = counts;
        }
        prop_assert_eq!(bank.total_edge_observations(), expected_edge_obs);
        for e in &bank.edges {
            let bucket_total: u64 = e.buckets.values().map(|b| b.n).sum();
            prop_assert!(bucket_total <= e.aggregate.n);
        }
    }
}
