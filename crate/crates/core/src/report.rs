//! Campaign metrics and the text report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::adapters::Phase;
use crate::cost::{phase_breakdown, Money, PhaseCost, PriceSheet, UsageSnapshot};
use crate::trajectory::TrajectoryRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tasks: usize,
    pub correct: usize,
    pub correctness_rate: f64,
    /// Share of tasks whose best generated candidate beats the reference.
    pub fast_at_1: f64,
    /// `(ρ, share of tasks with best speedup ≥ ρ)`.
    pub valid_at: Vec<(f64, f64)>,
    /// Over correct tasks only; `None` when there are none.
    pub geomean_speedup: Option<f64>,
    pub median_speedup: Option<f64>,
    pub max_speedup: Option<f64>,
    pub aborted: usize,
}

pub fn geometric_mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() || !xs.iter().all(|x| *x > 0.0) {
        return None;
    }
    Some((xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64).exp())
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

pub fn compute_metrics(records: &[TrajectoryRecord], valid_at: &[f64]) -> Metrics {
    let n = records.len();
    let speedups: Vec<f64> = records.iter().filter_map(|r| r.best_generated_speedup()).collect();
    let share = |count: usize| if n == 0 { 0.0 } else { count as f64 / n as f64 };
    Metrics {
        tasks: n,
        correct: speedups.len(),
        correctness_rate: share(speedups.len()),
        fast_at_1: share(speedups.iter().filter(|s| **s > 1.0).count()),
        valid_at: valid_at
            .iter()
            .map(|&rho| (rho, share(speedups.iter().filter(|s| **s >= rho).count())))
            .collect(),
        geomean_speedup: geometric_mean(&speedups),
        median_speedup: median(&speedups),
        max_speedup: speedups.iter().copied().reduce(f64::max),
        aborted: records.iter().filter(|r| r.aborted.is_some()).count(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub metrics: Metrics,
    pub usage: UsageSnapshot,
    pub prices: PriceSheet,
    pub total_cost: Money,
    pub per_task_cost: Money,
    pub phases: BTreeMap<Phase, PhaseCost>,
}

pub fn build_report(records: &[TrajectoryRecord], prices: &PriceSheet, valid_at: &[f64]) -> CampaignReport {
    let mut usage = UsageSnapshot::default();
    for r in records {
        usage.merge(&r.usage);
    }
    let total_cost = usage.cost(prices);
    let per_task_cost = if records.is_empty() { Money::ZERO } else { Money(total_cost.0 / records.len() as i128) };
    CampaignReport {
        metrics: compute_metrics(records, valid_at),
        phases: phase_breakdown(&usage, prices),
        usage,
        prices: prices.clone(),
        total_cost,
        per_task_cost,
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or("-".to_string(), |v| format!("{v:.3}x"))
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

/// Deterministic plain-text rendering: metrics, a per-task step table and
/// the cost breakdown.
pub fn render_report(report: &CampaignReport, records: &[TrajectoryRecord]) -> String {
    let m = &report.metrics;
    let mut s = String::new();
    let _ = writeln!(s, "tasks            {}", m.tasks);
    let _ = writeln!(s, "correct          {} ({})", m.correct, pct(m.correctness_rate));
    let _ = writeln!(s, "fast@1           {}", pct(m.fast_at_1));
    for (rho, v) in &m.valid_at {
        let _ = writeln!(s, "valid@{rho:<10} {}", pct(*v));
    }
    let _ = writeln!(s, "geomean speedup  {} *", opt(m.geomean_speedup));
    let _ = writeln!(s, "median speedup   {}", opt(m.median_speedup));
    let _ = writeln!(s, "max speedup      {}", opt(m.max_speedup));
    if m.aborted > 0 {
        let _ = writeln!(s, "aborted runs     {}", m.aborted);
    }
    let _ = writeln!(s, "* over tasks with at least one correct generated candidate");

    for r in records {
        let _ = writeln!(s, "\n{} (reference {:.3} ms)", r.task_id, r.reference_runtime_ms);
        let _ = writeln!(s, "  {:>4}  {:<32} {:<44} {:<12} {:>9} {:>9}", "step", "global", "local", "outcome", "speedup", "best");
        for st in &r.steps {
            let outcome = if st.invalid {
                "invalid".to_string()
            } else {
                st.outcome.map_or("-".to_string(), |o| o.to_string())
            };
            let local = st.local.as_ref().map_or("-", |l| l.as_str());
            let _ = writeln!(
                s,
                "  {:>4}  {:<32} {:<44} {:<12} {:>9} {:>9}",
                st.step,
                st.global.as_str(),
                local,
                outcome,
                opt(st.speedup),
                opt(st.best_speedup)
            );
        }
        let best = if r.best.generated {
            format!("step {} at {:.3}x", r.best.step, r.best.speedup)
        } else {
            "reference (no correct candidate)".to_string()
        };
        let _ = writeln!(s, "  best: {best}");
        if let Some(a) = &r.aborted {
            let _ = writeln!(s, "  aborted: {a}");
        }
    }

    let _ = writeln!(s, "\ncost ({})", report.prices.label);
    for (phase, pc) in &report.phases {
        let _ = writeln!(s, "  {:<20} {:>5} calls  {:>12}  {:>6.2}%", phase.as_str(), pc.calls, pc.cost.to_string(), pc.share_pct);
    }
    let _ = writeln!(s, "  total {}  per task {}", report.total_cost, report.per_task_cost);
    s
}
