//! Query accounting across the black-box boundary.
//!
//! Every batch that crosses into the target encoder increments exactly one
//! phase counter by the batch size. The ledger is the attack's cost model:
//! closed-form query costs are asserted against it after every run.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{RdaError, Result};

/// Phase under which a target query is recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryPhase {
    PrototypeGeneration,
    Training,
    EvaluationProbe,
}

impl QueryPhase {
    pub const ALL: [QueryPhase; 3] = [
        QueryPhase::PrototypeGeneration,
        QueryPhase::Training,
        QueryPhase::EvaluationProbe,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            QueryPhase::PrototypeGeneration => "prototype_generation",
            QueryPhase::Training => "training",
            QueryPhase::EvaluationProbe => "evaluation_probe",
        }
    }

    /// Parse a phase tag; unknown tags are rejected.
    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "prototype_generation" => Ok(QueryPhase::PrototypeGeneration),
            "training" => Ok(QueryPhase::Training),
            "evaluation_probe" => Ok(QueryPhase::EvaluationProbe),
            other => Err(RdaError::data(format!("unknown query phase tag: {other:?}"))),
        }
    }
}

impl fmt::Display for QueryPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Monotone per-phase query counters, safe under concurrent recording.
#[derive(Debug, Default)]
pub struct QueryLedger {
    counts: [AtomicU64; 3],
}

impl QueryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record `count` queries under `phase`.
    pub fn record(&self, phase: QueryPhase, count: u64) {
        self.counts[phase as usize].fetch_add(count, Ordering::Relaxed);
    }

    pub fn count(&self, phase: QueryPhase) -> u64 {
        self.counts[phase as usize].load(Ordering::Relaxed)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|c| c.load(Ordering::Relaxed)).sum()
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            prototype_generation: self.count(QueryPhase::PrototypeGeneration),
            training: self.count(QueryPhase::Training),
            evaluation_probe: self.count(QueryPhase::EvaluationProbe),
        }
    }
}

/// Immutable point-in-time view of a ledger, as persisted in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub prototype_generation: u64,
    pub training: u64,
    pub evaluation_probe: u64,
}

impl LedgerSnapshot {
    pub fn total(&self) -> u64 {
        self.prototype_generation + self.training + self.evaluation_probe
    }

    /// Queries attributable to the attack itself (probe traffic excluded).
    pub fn attack_total(&self) -> u64 {
        self.prototype_generation + self.training
    }
}

/// Record a count under a phase given by tag, rejecting unknown tags.
pub fn ledger_record(ledger: &QueryLedger, phase_tag: &str, count: u64) -> Result<()> {
    let phase = QueryPhase::parse(phase_tag)?;
    ledger.record(phase, count);
    Ok(())
}
