//! Exclusive fork-merge: folds the runtime deltas of several forks back into
//! their common base.

use thiserror::Error;

use super::{push_capped, Evidence, MemoryBank, NodeStats, TransitionStats};

#[derive(Debug, Error, PartialEq)]
pub enum MergeError {
    #[error("merge conflict: schema version `{found}` differs from base `{base}`")]
    Schema { base: String, found: String },
    #[error("merge conflict: topology differs in ids [{}]", .ids.join(", "))]
    Topology { ids: Vec<String> },
    #[error("merge conflict: fork counters for `{id}` are below the base; fork was not taken from this base")]
    NotDescendant { id: String },
}

fn topology_diff(base: &MemoryBank, fork: &MemoryBank) -> Vec<String> {
    use std::collections::BTreeSet;
    let ids = |b: &MemoryBank| -> BTreeSet<String> {
        b.globals
            .iter()
            .map(|g| format!("global:{}", g.id))
            .chain(b.locals.iter().map(|l| format!("local:{}<-{}", l.id, l.parent)))
            .collect()
    };
    let (a, b) = (ids(base), ids(fork));
    a.symmetric_difference(&b).cloned().collect()
}

fn sub(fork: u64, base: u64, id: &str) -> Result<u64, MergeError> {
    fork.checked_sub(base)
        .ok_or_else(|| MergeError::NotDescendant { id: id.to_string() })
}

fn merge_node(out: &mut NodeStats, base: &NodeStats, fork: &NodeStats, id: &str) -> Result<(), MergeError> {
    out.attempts += sub(fork.attempts, base.attempts, id)?;
    out.successes += sub(fork.successes, base.successes, id)?;
    out.compile_passes += sub(fork.compile_passes, base.compile_passes, id)?;
    out.correct_passes += sub(fork.correct_passes, base.correct_passes, id)?;
    out.gain_count += sub(fork.gain_count, base.gain_count, id)?;
    out.gain_log_sum += fork.gain_log_sum - base.gain_log_sum;
    out.last_touched_step = out.last_touched_step.max(fork.last_touched_step);
    Ok(())
}

fn merge_stats(out: &mut TransitionStats, base: &TransitionStats, fork: &TransitionStats, id: &str) -> Result<(), MergeError> {
    out.n += sub(fork.n, base.n, id)?;
    out.pos += sub(fork.pos, base.pos, id)?;
    out.succ += sub(fork.succ, base.succ, id)?;
    out.comp += sub(fork.comp, base.comp, id)?;
    out.corr += sub(fork.corr, base.corr, id)?;
    out.safe += sub(fork.safe, base.safe, id)?;
    out.cfail += sub(fork.cfail, base.cfail, id)?;
    out.corfail += sub(fork.corfail, base.corfail, id)?;
    out.neg += sub(fork.neg, base.neg, id)?;
    out.risk_events += sub(fork.risk_events, base.risk_events, id)?;
    out.imm_gain_sum += fork.imm_gain_sum - base.imm_gain_sum;
    out.fut_gain_sum += fork.fut_gain_sum - base.fut_gain_sum;
    Ok(())
}

fn merge_evidence(out: &mut Evidence, base: &Evidence, fork: &Evidence, cap: usize) {
    let mut next_seq = out
        .positive
        .iter()
        .chain(&out.negative)
        .map(|e| e.seq)
        .max()
        .unwrap_or(0);
    for (dst, base_list, fork_list) in [
        (&mut out.positive, &base.positive, &fork.positive),
        (&mut out.negative, &base.negative, &fork.negative),
    ] {
        for item in fork_list.iter().filter(|it| !base_list.contains(it)) {
            next_seq += 1;
            let mut item = item.clone();
            item.seq = next_seq;
            push_capped(dst, item, cap);
        }
    }
}

/// Produces `base + Σ (fork − base)` for every runtime counter, appends the
/// evidence each fork added (re-applying `evidence_cap`), and leaves priors
/// untouched. Deterministic for a given fork order.
pub fn merge_banks(
    base: &MemoryBank,
    forks: &[MemoryBank],
    evidence_cap: usize,
) -> Result<MemoryBank, MergeError> {
    let mut out = base.clone();
    for fork in forks {
        if fork.meta.schema_version != base.meta.schema_version {
            return Err(MergeError::Schema {
                base: base.meta.schema_version.clone(),
                found: fork.meta.schema_version.clone(),
            });
        }
        let diff = topology_diff(base, fork);
        if !diff.is_empty() {
            return Err(MergeError::Topology { ids: diff });
        }
        for ((o, b), f) in out.globals.iter_mut().zip(&base.globals).zip(&fork.globals) {
            merge_node(&mut o.runtime, &b.runtime, &f.runtime, o.id.as_str())?;
        }
        for ((o, b), f) in out.locals.iter_mut().zip(&base.locals).zip(&fork.locals) {
            merge_node(&mut o.runtime, &b.runtime, &f.runtime, o.id.as_str())?;
            merge_evidence(&mut o.evidence, &b.evidence, &f.evidence, evidence_cap);
        }
        for ((o, b), f) in out.edges.iter_mut().zip(&base.edges).zip(&fork.edges) {
            let id = format!("edge:{}->{}", o.src, o.dst);
            merge_stats(&mut o.aggregate, &b.aggregate, &f.aggregate, &id)?;
            for (key, fork_bucket) in &f.buckets {
                let empty = TransitionStats::default();
                let base_bucket = b.buckets.get(key).unwrap_or(&empty);
                let slot = o.buckets.entry(*key).or_default();
                merge_stats(slot, base_bucket, fork_bucket, &id)?;
            }
        }
    }
    Ok(out)
}
