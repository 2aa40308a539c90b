//! Brute-force validators for cross-checking the engines on small
//! instances. Nothing here calls into the EDF engine or the simulator.

use std::collections::BTreeMap;

use num_integer::Integer;
use thiserror::Error;

use crate::pbft::{Commitment, ReservationTable};
use crate::taskmodel::{Interval, JobKey, Task, Tick};

/// Largest `processors * horizon` fault sweep the oracle accepts.
pub const SWEEP_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("hyperperiod exceeds the cap of {0} ticks")]
    HorizonCap(Tick),
    #[error("fault sweep of {runs} replays exceeds the cap of {cap}")]
    SweepCap { runs: u64, cap: u64 },
}

/// First point where demand outran supply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Witness {
    pub deadline: Tick,
    pub demand: Tick,
    pub supply: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleVerdict {
    pub schedulable: bool,
    pub witness: Option<Witness>,
}

/// Processor-demand test for synchronous periodic tasks on one processor:
/// at every absolute deadline `t` up to the hyperperiod, the work of jobs
/// with release and deadline inside `[0, t]` must not exceed `t`.
pub fn dbf_schedulable(tasks: &[Task], horizon_cap: Tick) -> Result<OracleVerdict, OracleError> {
    let mut hyper: u128 = 1;
    for t in tasks {
        hyper = hyper.lcm(&(t.period as u128));
        if hyper > horizon_cap as u128 {
            return Err(OracleError::HorizonCap(horizon_cap));
        }
    }
    let hyper = hyper as Tick;
    let mut deadlines: Vec<Tick> = tasks
        .iter()
        .flat_map(|t| {
            (0..)
                .map(move |k| k * t.period + t.deadline)
                .take_while(|&d| d <= hyper)
        })
        .collect();
    deadlines.sort_unstable();
    deadlines.dedup();
    for t in deadlines {
        let demand: Tick = tasks
            .iter()
            .filter(|task| t >= task.deadline)
            .map(|task| ((t - task.deadline) / task.period + 1) * task.wcet)
            .sum();
        if demand > t {
            return Ok(OracleVerdict {
                schedulable: false,
                witness: Some(Witness {
                    deadline: t,
                    demand,
                    supply: t,
                }),
            });
        }
    }
    Ok(OracleVerdict {
        schedulable: true,
        witness: None,
    })
}

/// True iff every committed job survives every single permanent processor
/// fault at every tick in `[0, horizon)`.
pub fn exhaustive_fault_check(table: &ReservationTable, horizon: Tick, processors: usize) -> Result<bool, OracleError> {
    first_unsafe_fault(table, horizon, processors).map(|w| w.is_none())
}

/// The first `(processor, tick)` permanent fault that makes a committed job
/// miss, scanning processors then ticks.
pub fn first_unsafe_fault(
    table: &ReservationTable,
    horizon: Tick,
    processors: usize,
) -> Result<Option<(usize, Tick)>, OracleError> {
    let runs = processors as u64 * horizon;
    if runs > SWEEP_CAP {
        return Err(OracleError::SweepCap { runs, cap: SWEEP_CAP });
    }
    let jobs: BTreeMap<JobKey, &Commitment> = table.commitments().map(|c| (c.job.key(), c)).collect();
    let footprint: Vec<(usize, Interval)> = table.footprint().map(|(p, i, _)| (p, i)).collect();
    for p in 0..processors {
        for f in 0..horizon {
            if !survives(&jobs, &footprint, p, f) {
                return Ok(Some((p, f)));
            }
        }
    }
    Ok(None)
}

fn primary_survives(jobs: &BTreeMap<JobKey, &Commitment>, c: &Commitment, p: usize, f: Tick) -> bool {
    let end = c
        .primary_runs
        .iter()
        .map(|r| r.end)
        .max()
        .unwrap_or(c.primary.interval.end);
    let own = c.primary.processor != p || end <= f;
    own && c
        .depends_on
        .and_then(|d| jobs.get(&d))
        .is_none_or(|d| primary_survives(jobs, d, p, f))
}

fn survives(jobs: &BTreeMap<JobKey, &Commitment>, footprint: &[(usize, Interval)], p: usize, f: Tick) -> bool {
    let activated: Vec<&Commitment> = jobs
        .values()
        .copied()
        .filter(|c| !primary_survives(jobs, c, p, f))
        .collect();
    for c in &activated {
        let b = c.backup;
        // The backup dies with its processor or starts before the loss is known.
        if (b.processor == p && b.interval.end > f) || b.interval.start < f {
            return false;
        }
        if b.interval.end > c.job.abs_deadline {
            return false;
        }
        if let Some(dep) = c.depends_on.and_then(|d| jobs.get(&d)) {
            if b.interval.start < dep.backup.interval.end {
                return false;
            }
        }
        // Two activated backups cannot share ticks on one processor.
        let clash = activated.iter().any(|o| {
            o.job.key() != c.job.key() && o.backup.processor == b.processor && o.backup.interval.overlaps(&b.interval)
        });
        if clash {
            return false;
        }
        let displaced = footprint
            .iter()
            .any(|&(q, run)| q == b.processor && q != p && run.overlaps(&b.interval));
        if displaced {
            return false;
        }
    }
    true
}
