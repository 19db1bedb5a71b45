//! Token accounting and API cost model.
//!
//! Money is held as integer picodollars so that sums of many small per-call
//! costs never drift. Prices are integer micro-dollars per million tokens,
//! which makes `tokens × price` exactly a picodollar amount.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign, Mul};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::adapters::Phase;

const PICO_PER_DOLLAR: i128 = 1_000_000_000_000;

/// An amount of money in picodollars (10⁻¹² USD).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Money(pub i128);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn from_dollars(d: f64) -> Money {
        Money((d * PICO_PER_DOLLAR as f64).round() as i128)
    }

    pub fn dollars(self) -> f64 {
        self.0 as f64 / PICO_PER_DOLLAR as f64
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl Mul<u64> for Money {
    type Output = Money;
    fn mul(self, rhs: u64) -> Money {
        Money(self.0 * i128::from(rhs))
    }
}

impl std::iter::Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, Add::add)
    }
}

impl fmt::Display for Money {
    /// Six decimal places, e.g. `$0.214424`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let micros = (self.0 + self.0.signum() * 500_000) / 1_000_000;
        let sign = if micros < 0 { "-" } else { "" };
        let micros = micros.abs();
        write!(f, "{sign}${}.{:06}", micros / 1_000_000, micros % 1_000_000)
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.dollars())
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        if !v.is_finite() {
            return Err(serde::de::Error::custom("amount must be finite"));
        }
        Ok(Money::from_dollars(v))
    }
}

/// Per-million-token prices in micro-dollars. Serialized as dollar amounts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PriceSheet {
    pub label: String,
    pub input_per_million: u64,
    pub output_per_million: u64,
}

#[derive(Serialize, Deserialize)]
struct PriceSheetRepr {
    #[serde(default)]
    label: String,
    input_per_million: f64,
    output_per_million: f64,
}

fn dollars_to_micros(v: f64, field: &str) -> Result<u64, String> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(format!("{field} must be a non-negative amount, got {v}"));
    }
    Ok((v * 1e6).round() as u64)
}

impl PriceSheet {
    /// Builds a sheet from dollar prices; rounds to the nearest micro-dollar.
    pub fn from_dollars(label: &str, input: f64, output: f64) -> Result<Self, String> {
        Ok(PriceSheet {
            label: label.to_string(),
            input_per_million: dollars_to_micros(input, "input_per_million")?,
            output_per_million: dollars_to_micros(output, "output_per_million")?,
        })
    }

    pub fn free() -> Self {
        PriceSheet {
            label: "free".into(),
            input_per_million: 0,
            output_per_million: 0,
        }
    }
}

impl Serialize for PriceSheet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PriceSheetRepr {
            label: self.label.clone(),
            input_per_million: self.input_per_million as f64 / 1e6,
            output_per_million: self.output_per_million as f64 / 1e6,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PriceSheet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = PriceSheetRepr::deserialize(d)?;
        PriceSheet::from_dollars(&r.label, r.input_per_million, r.output_per_million)
            .map_err(serde::de::Error::custom)
    }
}

/// `tokens_in · p_in / 10⁶ + tokens_out · p_out / 10⁶`, exact.
pub fn cost_per_task(tokens_in: u64, tokens_out: u64, prices: &PriceSheet) -> Money {
    Money(
        i128::from(tokens_in) * i128::from(prices.input_per_million)
            + i128::from(tokens_out) * i128::from(prices.output_per_million),
    )
}

/// Parameters of `C_total = C_build + N·T·(C_local + C_code) + C_repair`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub build: Money,
    pub tasks: u64,
    pub steps: u64,
    pub local_per_call: Money,
    pub code_per_call: Money,
    pub repair: Money,
}

pub fn campaign_cost(m: &CostModel) -> Money {
    m.build + (m.local_per_call + m.code_per_call) * (m.tasks * m.steps) + m.repair
}

/// Totals for one phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseUsage {
    pub calls: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

impl PhaseUsage {
    pub fn cost(&self, prices: &PriceSheet) -> Money {
        cost_per_task(self.tokens_in, self.tokens_out, prices)
    }
}

impl Add for PhaseUsage {
    type Output = PhaseUsage;
    fn add(self, o: PhaseUsage) -> PhaseUsage {
        PhaseUsage {
            calls: self.calls + o.calls,
            tokens_in: self.tokens_in + o.tokens_in,
            tokens_out: self.tokens_out + o.tokens_out,
        }
    }
}

/// Point-in-time copy of a ledger; phases with no calls are omitted.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageSnapshot {
    pub phases: BTreeMap<Phase, PhaseUsage>,
}

impl UsageSnapshot {
    pub fn merge(&mut self, other: &UsageSnapshot) {
        for (phase, u) in &other.phases {
            let slot = self.phases.entry(*phase).or_default();
            *slot = *slot + *u;
        }
    }

    pub fn total(&self) -> PhaseUsage {
        self.phases.values().fold(PhaseUsage::default(), |a, b| a + *b)
    }

    pub fn cost(&self, prices: &PriceSheet) -> Money {
        self.phases.values().map(|u| u.cost(prices)).sum()
    }
}

#[derive(Debug, Default)]
struct Counters {
    calls: AtomicU64,
    tokens_in: AtomicU64,
    tokens_out: AtomicU64,
}

/// Lock-free per-phase token counters; shareable across trajectories.
#[derive(Debug, Default)]
pub struct TokenLedger {
    counters: [Counters; Phase::ALL.len()],
}

impl TokenLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, phase: Phase, tokens_in: u64, tokens_out: u64) {
        let c = &self.counters[phase.index()];
        c.calls.fetch_add(1, Ordering::Relaxed);
        c.tokens_in.fetch_add(tokens_in, Ordering::Relaxed);
        c.tokens_out.fetch_add(tokens_out, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> UsageSnapshot {
        let phases = Phase::ALL
            .iter()
            .filter_map(|&p| {
                let c = &self.counters[p.index()];
                let u = PhaseUsage {
                    calls: c.calls.load(Ordering::Relaxed),
                    tokens_in: c.tokens_in.load(Ordering::Relaxed),
                    tokens_out: c.tokens_out.load(Ordering::Relaxed),
                };
                (u.calls > 0).then_some((p, u))
            })
            .collect();
        UsageSnapshot { phases }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseCost {
    pub calls: u64,
    pub cost: Money,
    /// Percentage of the total cost, 0–100.
    pub share_pct: f64,
}

/// Per-phase calls, cost and percentage share.
pub fn phase_breakdown(usage: &UsageSnapshot, prices: &PriceSheet) -> BTreeMap<Phase, PhaseCost> {
    let total = usage.cost(prices);
    usage
        .phases
        .iter()
        .map(|(phase, u)| {
            let cost = u.cost(prices);
            let share_pct = if total.0 == 0 {
                100.0 / usage.phases.len() as f64
            } else {
                cost.0 as f64 / total.0 as f64 * 100.0
            };
            (*phase, PhaseCost { calls: u.calls, cost, share_pct })
        })
        .collect()
}
