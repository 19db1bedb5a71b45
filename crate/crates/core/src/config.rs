//! Run configuration and task files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{
    Backend, CodeDefault, Evaluator, HttpBackendConfig, LocalDefault, PhaseLimits, ScriptedBackend,
    ScriptedEvaluator, SimulatedEnvironment, SimulatedEvaluator, SubprocessEvaluator,
};
use crate::cost::PriceSheet;
use crate::memory::{GlobalId, MemoryParams};
use crate::policy::PolicyConfig;
use crate::prompts::PromptTemplates;
use crate::scoring::ScoringWeights;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Memory-update ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Never write outcomes back into memory.
    pub freeze_memory: bool,
    /// Score with only the most recent direction of the prefix.
    pub no_prefix: bool,
    /// Force `λ = 0`, weighting every prefix position equally.
    pub flat_alpha: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    /// Canned replies from a script file.
    Scripted { script: PathBuf },
    /// No script; every reply comes from the defaults.
    Offline {
        #[serde(default)]
        local_default: LocalDefault,
        #[serde(default)]
        code_default: CodeDefault,
    },
    Http(HttpBackendConfig),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Offline {
            local_default: LocalDefault::Argmax,
            code_default: CodeDefault::Annotate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvaluatorConfig {
    /// Fixture table keyed by candidate markers.
    Scripted { fixture: PathBuf },
    /// Newline-delimited JSON worker process.
    Subprocess { command: Vec<String> },
    /// Simulated environment; the shipped default when `env` is absent.
    Simulated {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        env: Option<PathBuf>,
    },
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        EvaluatorConfig::Simulated { env: None }
    }
}

/// All knobs of a campaign. Relative paths are resolved against the
/// directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub steps: u32,
    pub epsilon: f64,
    pub tau: f64,
    pub seed: u64,
    pub lambda: f64,
    /// Twelve weights in feature order; see [`crate::scoring`].
    pub weights: ScoringWeights,
    pub gamma: f64,
    pub n_min: u64,
    pub stagnation_window: u32,
    pub evidence_k: usize,
    pub repair: bool,
    pub timing_tolerance: f64,
    pub evidence_cap: usize,
    pub summary_max_chars: usize,
    pub eval_timeout_ms: u64,
    pub limits: PhaseLimits,
    pub prices: PriceSheet,
    pub ablation: Ablation,
    /// Directions to take at steps 1, 2, … instead of sampling. Used for
    /// replaying recorded trajectories.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub forced_globals: Vec<GlobalId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_dir: Option<PathBuf>,
    pub backend: BackendConfig,
    pub evaluator: EvaluatorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            steps: 6,
            epsilon: 0.1,
            tau: 1.0,
            seed: 42,
            lambda: 0.5,
            weights: ScoringWeights::default(),
            gamma: 0.9,
            n_min: 3,
            stagnation_window: 2,
            evidence_k: 4,
            repair: true,
            timing_tolerance: 0.01,
            evidence_cap: 32,
            summary_max_chars: 512,
            eval_timeout_ms: 120_000,
            limits: PhaseLimits::default(),
            prices: PriceSheet::free(),
            ablation: Ablation::default(),
            forced_globals: Vec::new(),
            prompt_dir: None,
            backend: BackendConfig::default(),
            evaluator: EvaluatorConfig::default(),
        }
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })
}

fn parse<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = parse(&read(path)?, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = cfg.prompt_dir.as_mut() {
            resolve(base, p);
        }
        match &mut cfg.backend {
            BackendConfig::Scripted { script } => resolve(base, script),
            BackendConfig::Offline { .. } | BackendConfig::Http(_) => {}
        }
        match &mut cfg.evaluator {
            EvaluatorConfig::Scripted { fixture } => resolve(base, fixture),
            EvaluatorConfig::Simulated { env: Some(p) } => resolve(base, p),
            EvaluatorConfig::Subprocess { command } => {
                // Resolve a relative program path that exists next to the config.
                if let Some(first) = command.first_mut() {
                    let candidate = base.join(&*first);
                    if Path::new(first.as_str()).is_relative() && candidate.exists() {
                        *first = candidate.display().to_string();
                    }
                }
            }
            EvaluatorConfig::Simulated { env: None } => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.steps < 1 {
            return bad("steps must be at least 1".into());
        }
        self.policy().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.timing_tolerance.is_finite() && self.timing_tolerance >= 0.0) {
            return bad("timing_tolerance must be non-negative".into());
        }
        if self.evidence_cap == 0 {
            return bad("evidence_cap must be positive".into());
        }
        if let EvaluatorConfig::Subprocess { command } = &self.evaluator {
            if command.is_empty() {
                return bad("subprocess evaluator needs a command".into());
            }
        }
        Ok(())
    }

    pub fn policy(&self) -> PolicyConfig {
        PolicyConfig { epsilon: self.epsilon, tau: self.tau, seed: self.seed }
    }

    pub fn memory_params(&self) -> MemoryParams {
        MemoryParams {
            timing_tolerance: self.timing_tolerance,
            evidence_cap: self.evidence_cap,
            summary_max_chars: self.summary_max_chars,
        }
    }

    /// λ after the flat-alpha ablation.
    pub fn effective_lambda(&self) -> f64 {
        if self.ablation.flat_alpha {
            0.0
        } else {
            self.lambda
        }
    }

    pub fn templates(&self) -> Result<PromptTemplates, ConfigError> {
        match &self.prompt_dir {
            Some(dir) => PromptTemplates::load_dir(dir).map_err(|e| ConfigError::Invalid(e.to_string())),
            None => Ok(PromptTemplates::default()),
        }
    }

    /// A fresh backend instance (one per trajectory).
    pub fn build_backend(&self) -> Result<Box<dyn Backend>, ConfigError> {
        match &self.backend {
            BackendConfig::Scripted { script } => {
                let text = read(script)?;
                let b = ScriptedBackend::from_json(&text)
                    .map_err(|e| ConfigError::Invalid(format!("{}: {e}", script.display())))?;
                Ok(Box::new(b))
            }
            BackendConfig::Offline { local_default, code_default } => {
                Ok(Box::new(ScriptedBackend::with_defaults(*local_default, *code_default)))
            }
            #[cfg(feature = "http")]
            BackendConfig::Http(cfg) => {
                let b = crate::adapters::HttpBackend::new(cfg.clone())
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(Box::new(b))
            }
            #[cfg(not(feature = "http"))]
            BackendConfig::Http(_) => Err(ConfigError::Invalid("built without the `http` feature".into())),
        }
    }

    /// A fresh evaluator instance (one per trajectory).
    pub fn build_evaluator(&self) -> Result<Box<dyn Evaluator>, ConfigError> {
        match &self.evaluator {
            EvaluatorConfig::Scripted { fixture } => {
                let text = read(fixture)?;
                let ev = ScriptedEvaluator::from_json(&text)
                    .map_err(|e| ConfigError::Invalid(format!("{}: {e}", fixture.display())))?;
                Ok(Box::new(ev))
            }
            EvaluatorConfig::Subprocess { command } => {
                let (program, args) = command.split_first().expect("validated non-empty");
                Ok(Box::new(SubprocessEvaluator::new(program, args.to_vec())))
            }
            EvaluatorConfig::Simulated { env } => {
                let env = match env {
                    Some(p) => {
                        let e: SimulatedEnvironment = parse(&read(p)?, p)?;
                        e.validate().map_err(ConfigError::Invalid)?;
                        e
                    }
                    None => SimulatedEnvironment::default_env(),
                };
                Ok(Box::new(SimulatedEvaluator::new(env)))
            }
        }
    }
}

/// One task of a campaign, with its initial source loaded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    #[serde(default)]
    pub operator_type: String,
    #[serde(default)]
    pub input_shape_summary: String,
    pub initial_source: String,
    /// Taken from the evaluator when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_runtime_ms: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskEntry {
    task_id: String,
    #[serde(default)]
    operator_type: String,
    #[serde(default)]
    input_shape_summary: String,
    /// Path to the initial implementation, relative to the task file.
    initial_implementation: PathBuf,
    #[serde(default)]
    reference_runtime_ms: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskFile {
    tasks: Vec<TaskEntry>,
}

/// Reads a task file `{"tasks": [{task_id, initial_implementation, …}]}`.
pub fn load_tasks(path: &Path) -> Result<Vec<TaskSpec>, ConfigError> {
    let file: TaskFile = parse(&read(path)?, path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = std::collections::BTreeSet::new();
    file.tasks
        .into_iter()
        .map(|t| {
            if !seen.insert(t.task_id.clone()) {
                return Err(ConfigError::Invalid(format!("duplicate task id `{}`", t.task_id)));
            }
            if let Some(r) = t.reference_runtime_ms {
                if !(r.is_finite() && r > 0.0) {
                    return Err(ConfigError::Invalid(format!("task `{}`: reference runtime must be positive", t.task_id)));
                }
            }
            let mut p = t.initial_implementation;
            resolve(base, &mut p);
            let initial_source = read(&p)?;
            if initial_source.trim().is_empty() {
                return Err(ConfigError::Invalid(format!("task `{}`: initial implementation is empty", t.task_id)));
            }
            Ok(TaskSpec {
                task_id: t.task_id,
                operator_type: t.operator_type,
                input_shape_summary: t.input_shape_summary,
                initial_source,
                reference_runtime_ms: t.reference_runtime_ms,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!((c.steps, c.epsilon, c.tau, c.lambda, c.seed), (6, 0.1, 1.0, 0.5, 42));
        assert_eq!((c.gamma, c.n_min, c.evidence_k, c.evidence_cap), (0.9, 3, 4, 32));
        c.validate().unwrap();
    }

    #[test]
    fn partial_file_fills_defaults_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        fs::write(
            &p,
            r#"{"steps": 3, "backend": {"kind": "scripted", "script": "s.json"},
                "evaluator": {"kind": "scripted", "fixture": "f.json"}}"#,
        )
        .unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.steps, 3);
        assert_eq!(c.epsilon, 0.1);
        assert_eq!(c.backend, BackendConfig::Scripted { script: dir.path().join("s.json") });
    }

    #[test]
    fn rejects_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        for body in [
            r#"{"steps": 0}"#,
            r#"{"epsilon": 1.5}"#,
            r#"{"tau": 0}"#,
            r#"{"lambda": -1}"#,
            r#"{"weights": [1, 2]}"#,
            r#"{"unknown_knob": 1}"#,
        ] {
            fs::write(&p, body).unwrap();
            assert!(RunConfig::load(&p).is_err(), "{body}");
        }
        fs::write(&p, "{\n  \"steps\": ,\n}").unwrap();
        match RunConfig::load(&p) {
            Err(ConfigError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn task_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("k.py"), "return x").unwrap();
        let p = dir.path().join("tasks.json");
        fs::write(&p, r#"{"tasks": [{"task_id": "a", "initial_implementation": "k.py", "reference_runtime_ms": 2.0}]}"#).unwrap();
        let tasks = load_tasks(&p).unwrap();
        assert_eq!(tasks[0].initial_source, "return x");
        fs::write(&p, r#"{"tasks": [{"task_id": "a", "initial_implementation": "k.py"}, {"task_id": "a", "initial_implementation": "k.py"}]}"#).unwrap();
        assert!(load_tasks(&p).is_err());
    }

    #[test]
    fn http_backend_without_credentials_is_config_error() {
        let mut c = RunConfig::default();
        c.backend = BackendConfig::Http(HttpBackendConfig {
            endpoint: "http://127.0.0.1:9/v1".into(),
            model: "m".into(),
            api_key_env: "HTAM_CONFIG_TEST_MISSING_KEY".into(),
            timeout_ms: 1000,
            limits: PhaseLimits::default(),
            fields: Default::default(),
            temperature: None,
        });
        assert!(matches!(c.build_backend(), Err(ConfigError::Invalid(_))));
    }
}
