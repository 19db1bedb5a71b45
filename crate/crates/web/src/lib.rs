//! Browser demo: the direction policy, the recency weights and simulated
//! campaigns over a memory bank that lives in the page.
//!
//! Every export returns a JSON string; the plain-Rust methods on [`Demo`]
//! carry the logic so they can be tested off the browser.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use htam::adapters::{Backend, CodeDefault, Evaluator, LocalDefault, ScriptedBackend, SimulatedEnvironment, SimulatedEvaluator};
use htam::campaign::run_campaign;
use htam::config::{Ablation, BackendConfig};
use htam::memory::{default_bank, GlobalId, MemoryBank};
use htam::policy::{global_distribution, PolicyConfig};
use htam::prompts::PromptTemplates;
use htam::report::compute_metrics;
use htam::scoring::{alpha_weights, Scorer};
use htam::state::{DecisionState, Progress, RuleBasedSymptoms, TaskContext};
use htam::{Engine, RunConfig, TaskSpec};

const KERNEL: &str = "__global__ void k(const float* x, float* y, int n) {\n    int i = blockIdx.x * blockDim.x + threadIdx.x;\n    if (i < n) y[i] = x[i];\n}";

/// `α_i` for a prefix of `len` directions, oldest first.
pub fn alpha_curve_json(len: usize, lambda: f64) -> Result<String, String> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(format!("lambda must be non-negative, got {lambda}"));
    }
    if len > 64 {
        return Err("prefix length is capped at 64".into());
    }
    Ok(json!(alpha_weights(len, lambda)).to_string())
}

#[wasm_bindgen]
pub fn alpha_curve(len: usize, lambda: f64) -> Result<String, JsError> {
    alpha_curve_json(len, lambda).map_err(|e| JsError::new(&e))
}

/// A bank plus a campaign counter, so successive simulations keep learning.
#[wasm_bindgen]
pub struct Demo {
    bank: MemoryBank,
    campaigns: u64,
}

impl Default for Demo {
    fn default() -> Self {
        Demo { bank: default_bank(false).fork_writable(), campaigns: 0 }
    }
}

fn state_at(step: u32, failed_before: bool) -> DecisionState {
    DecisionState {
        step,
        task: TaskContext {
            task_id: "demo".into(),
            operator_type: "elementwise".into(),
            input_shape_summary: "simulated".into(),
            reference_runtime_ms: 1.0,
        },
        code_summary: String::new(),
        feedback: None,
        progress: Progress { failed_before, ..Progress::default() },
        symptoms: Vec::new(),
    }
}

impl Demo {
    pub fn globals(&self) -> Vec<(String, String)> {
        self.bank.globals.iter().map(|g| (g.id.to_string(), g.label.clone())).collect()
    }

    /// Scores and probabilities of every direction after `prefix`.
    pub fn distribution(&self, prefix: &[String], epsilon: f64, tau: f64, lambda: f64, failed_before: bool) -> Result<Value, String> {
        let prefix: Vec<GlobalId> = prefix.iter().map(|g| GlobalId::from(g.as_str())).collect();
        for g in &prefix {
            self.bank.global(g).map_err(|e| e.to_string())?;
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(format!("lambda must be non-negative, got {lambda}"));
        }
        let cfg = RunConfig::default();
        let policy = PolicyConfig { epsilon, tau, seed: 0 };
        policy.validate().map_err(|e| e.to_string())?;
        let state = state_at(prefix.len() as u32 + 1, failed_before);
        let scores = Scorer::new(&self.bank, &cfg.weights, cfg.n_min)
            .all_scores(&prefix, &state, lambda)
            .map_err(|e| e.to_string())?;
        let dist = global_distribution(&scores, &policy).map_err(|e| e.to_string())?;
        let rows: Vec<Value> = scores
            .iter()
            .map(|(g, s)| json!({"global": g.as_str(), "score": s, "probability": dist.prob(g)}))
            .collect();
        Ok(json!(rows))
    }

    /// Runs `tasks` simulated tasks in sequence on the page's bank.
    pub fn simulate(&mut self, tasks: usize, steps: u32, seed: u64, lambda: f64, ablation: Ablation) -> Result<Value, String> {
        if !(1..=64).contains(&tasks) || !(1..=16).contains(&steps) {
            return Err("tasks must be 1..=64 and steps 1..=16".into());
        }
        let campaign = self.campaigns;
        let specs: Vec<TaskSpec> = (0..tasks)
            .map(|i| TaskSpec {
                task_id: format!("demo_{campaign}_{i}"),
                operator_type: "elementwise".into(),
                input_shape_summary: "simulated".into(),
                initial_source: KERNEL.into(),
                reference_runtime_ms: None,
            })
            .collect();
        let cfg = RunConfig {
            steps,
            seed,
            lambda,
            ablation,
            backend: BackendConfig::Offline { local_default: LocalDefault::Argmax, code_default: CodeDefault::Annotate },
            ..RunConfig::default()
        };
        cfg.validate().map_err(|e| e.to_string())?;
        let templates = PromptTemplates::default();
        let engine = Engine::new(&cfg, &templates, &RuleBasedSymptoms);
        let env = SimulatedEnvironment::default_env();
        // One job: the browser has no threads.
        let out = run_campaign(&engine, &specs, &self.bank, 1, |_| {
            Ok((
                Box::new(ScriptedBackend::with_defaults(LocalDefault::Argmax, CodeDefault::Annotate)) as Box<dyn Backend>,
                Box::new(SimulatedEvaluator::new(env.clone())) as Box<dyn Evaluator>,
            ))
        })
        .map_err(|e| e.to_string())?;
        self.bank = out.bank;
        self.campaigns += 1;

        let records: Vec<_> = out.results.into_iter().map(|r| r.record).collect();
        let m = compute_metrics(&records, &[1.5, 2.0]);
        let tasks: Vec<Value> = records
            .iter()
            .map(|r| {
                json!({
                    "task_id": r.task_id,
                    "best_speedup": r.best.speedup,
                    "correct": r.correct(),
                    "steps": r.steps.iter().map(|s| json!({
                        "global": s.global.as_str(),
                        "local": s.local.as_ref().map(|l| l.as_str()),
                        "probability": s.global_probability,
                        "outcome": s.outcome.map(|o| o.to_string()),
                        "speedup": s.speedup,
                    })).collect::<Vec<_>>(),
                })
            })
            .collect();
        Ok(json!({
            "campaign": campaign,
            "metrics": m,
            "mean_best_speedup": records.iter().map(|r| r.best.speedup).sum::<f64>() / records.len() as f64,
            "tasks": tasks,
            "observations": self.observations(),
        }))
    }

    pub fn observations(&self) -> u64 {
        self.bank.edges.iter().map(|e| e.aggregate.n).sum()
    }

    /// Per-edge observation counts and success rates, row = source.
    pub fn edges(&self) -> Value {
        let rows: Vec<Value> = self
            .bank
            .edges
            .iter()
            .map(|e| {
                json!({
                    "src": e.src.as_str(),
                    "dst": e.dst.as_str(),
                    "n": e.aggregate.n,
                    "succ": e.aggregate.succ,
                    "mean_gain": e.aggregate.mean_imm_gain(),
                })
            })
            .collect();
        json!(rows)
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Demo {
        Demo::default()
    }

    /// `[[id, label], …]`.
    #[wasm_bindgen(js_name = globals)]
    pub fn globals_json(&self) -> String {
        json!(self.globals()).to_string()
    }

    /// `prefix` is a JSON array of direction ids.
    #[wasm_bindgen(js_name = policyDistribution)]
    pub fn policy_distribution(&self, prefix: &str, epsilon: f64, tau: f64, lambda: f64, failed_before: bool) -> Result<String, JsError> {
        let prefix: Vec<String> = serde_json::from_str(prefix).map_err(|e| JsError::new(&e.to_string()))?;
        self.distribution(&prefix, epsilon, tau, lambda, failed_before)
            .map(|v| v.to_string())
            .map_err(|e| JsError::new(&e))
    }

    /// `ablation` is one of `full`, `freeze`, `no-prefix`, `flat-alpha`.
    #[wasm_bindgen(js_name = simulateRun)]
    pub fn simulate_run(&mut self, tasks: usize, steps: u32, seed: u64, lambda: f64, ablation: &str) -> Result<String, JsError> {
        let ablation = parse_ablation(ablation).map_err(|e| JsError::new(&e))?;
        self.simulate(tasks, steps, seed, lambda, ablation)
            .map(|v| v.to_string())
            .map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = edges)]
    pub fn edges_json(&self) -> String {
        self.edges().to_string()
    }

    pub fn reset(&mut self) {
        *self = Demo::default();
    }
}

pub fn parse_ablation(name: &str) -> Result<Ablation, String> {
    let mut a = Ablation::default();
    match name {
        "full" => {}
        "freeze" => a.freeze_memory = true,
        "no-prefix" => a.no_prefix = true,
        "flat-alpha" => a.flat_alpha = true,
        other => return Err(format!("unknown ablation `{other}`")),
    }
    Ok(a)
}
