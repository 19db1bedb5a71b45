//! Multi-task campaigns: tasks run in waves of up to `jobs`, each on its own
//! bank fork and adapters; forks are merged back after every wave so later
//! waves see what earlier ones learned.

use std::thread;

use thiserror::Error;

use crate::adapters::{Backend, Evaluator};
use crate::config::{ConfigError, TaskSpec};
use crate::engine::{Engine, EngineError};
use crate::memory::{merge_banks, MemoryBank, MergeError};
use crate::trajectory::TrajectoryRecord;

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Merge(#[from] MergeError),
}

/// Per-task adapters.
pub type Adapters = (Box<dyn Backend>, Box<dyn Evaluator>);

pub struct TaskResult {
    pub record: TrajectoryRecord,
    /// The task's fork after the run.
    pub fork: MemoryBank,
}

pub struct CampaignOutcome {
    pub results: Vec<TaskResult>,
    /// `base` plus every fork's delta; equal to `base` when memory is frozen.
    pub bank: MemoryBank,
}

/// Seed of the `index`-th task of a campaign.
pub fn task_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

/// Runs every task in `tasks` order. `make_adapters` is called once per task.
pub fn run_campaign<F>(
    engine: &Engine<'_>,
    tasks: &[TaskSpec],
    base: &MemoryBank,
    jobs: usize,
    make_adapters: F,
) -> Result<CampaignOutcome, CampaignError>
where
    F: Fn(&TaskSpec) -> Result<Adapters, ConfigError> + Sync,
{
    let jobs = jobs.max(1);
    let freeze = engine.config.ablation.freeze_memory;
    let mut bank = base.clone();
    let mut results = Vec::with_capacity(tasks.len());

    for (wave_no, wave) in tasks.chunks(jobs).enumerate() {
        let start = wave_no * jobs;
        let run_one = |offset: usize, task: &TaskSpec| -> Result<TaskResult, CampaignError> {
            let mut cfg = engine.config.clone();
            cfg.seed = task_seed(cfg.seed, start + offset);
            let eng = Engine { config: &cfg, ..*engine };
            let (mut backend, mut evaluator) = make_adapters(task)?;
            let mut fork = if freeze { bank.clone() } else { bank.fork_writable() };
            let record = eng.run_task(task, &mut fork, &mut backend, &mut evaluator)?;
            Ok(TaskResult { record, fork })
        };
        let wave_results: Vec<Result<TaskResult, CampaignError>> = if wave.len() == 1 {
            vec![run_one(0, &wave[0])]
        } else {
            thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        let run_one = &run_one;
                        s.spawn(move || run_one(i, t))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("task thread panicked")).collect()
            })
        };
        let wave_results = wave_results.into_iter().collect::<Result<Vec<_>, _>>()?;
        if !freeze {
            let forks: Vec<MemoryBank> = wave_results.iter().map(|r| r.fork.clone()).collect();
            let cap = engine.config.evidence_cap;
            bank = merge_banks(&bank, &forks, cap)?;
        }
        results.extend(wave_results);
    }
    Ok(CampaignOutcome { results, bank })
}
