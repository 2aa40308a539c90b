//! Composes partitioning, EDF execution, backup admission and fault
//! injection into complete runs.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edf::{self, Engine, EngineOutput, UnitOutcome, Workload};
use crate::pbft::{order_pending, FaultEvent, ReservationTable};
use crate::ratio::{serde_text, serde_text_list};
use crate::sasa::{self, AssignError, Assignment};
use crate::taskmodel::{
    hyperperiod, Interval, Job, JobKey, ModelError, Segment, TaskId, TaskSet, Tick, Util, DEFAULT_HORIZON_CAP,
};
use crate::ScheduleTrace;

/// Largest number of replays a single-fault sweep may perform.
pub const DEFAULT_SWEEP_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Partitioned,
    Ft,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Assign(#[from] AssignError),
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("fault sweep needs ft mode")]
    NotFt,
    #[error("fault sweep of {runs} replays exceeds the cap of {cap}")]
    SweepCap { runs: u64, cap: u64 },
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub mode: Mode,
    pub taskset: TaskSet,
    pub processor_count: usize,
    pub threshold: Util,
    /// Defaults to one hyperperiod.
    pub horizon: Option<Tick>,
    pub horizon_cap: Tick,
    /// Backup wcet is `ceil(backup_ratio * wcet)`.
    pub backup_ratio: Util,
    pub faults: Vec<FaultEvent>,
    pub sweep_cap: u64,
}

impl SimConfig {
    pub fn new(mode: Mode, taskset: TaskSet, processor_count: usize) -> Self {
        Self {
            mode,
            taskset,
            processor_count,
            threshold: Util::from_integer(1),
            horizon: None,
            horizon_cap: DEFAULT_HORIZON_CAP,
            backup_ratio: Util::from_integer(1),
            faults: Vec::new(),
            sweep_cap: DEFAULT_SWEEP_CAP,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.horizon == Some(0) {
            return Err(SimError::Config("horizon must be at least 1"));
        }
        if self.horizon.is_some_and(|h| h > self.horizon_cap) {
            return Err(SimError::Model(ModelError::HorizonCapExceeded {
                cap: self.horizon_cap,
            }));
        }
        if self.backup_ratio <= Util::from_integer(0) || self.backup_ratio > Util::from_integer(1) {
            return Err(SimError::Config("backup ratio must lie in (0, 1]"));
        }
        if self.faults.iter().any(|f| f.processor >= self.processor_count) {
            return Err(SimError::Config("fault references a missing processor"));
        }
        Ok(())
    }

    pub fn resolved_horizon(&self) -> Result<Tick, SimError> {
        match self.horizon {
            Some(h) => Ok(h),
            None => Ok(hyperperiod(&self.taskset, self.horizon_cap)?),
        }
    }

    pub fn backup_wcet(&self, wcet: Tick) -> Tick {
        let scaled = self.backup_ratio * Util::from_integer(wcet as i128);
        (scaled.ceil().to_integer() as Tick).clamp(1, wcet)
    }
}

/// Aggregate results of one run.
///
/// A job counts as committed when its deadline falls inside the horizon;
/// jobs released in the horizon but due after it are counted as rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub mode: Mode,
    pub horizon: Tick,
    pub committed_jobs: usize,
    pub rejected_jobs: usize,
    pub unprotected_jobs: usize,
    pub deadline_misses: usize,
    pub protected_misses: usize,
    pub recoveries: usize,
    pub backup_ticks: Tick,
    pub busy_ticks: Vec<Tick>,
    #[serde(with = "serde_text_list")]
    pub busy_fraction: Vec<Util>,
    pub backup_reservations: usize,
    pub overloaded_reservations: usize,
    #[serde(with = "serde_text")]
    pub overload_ratio: Util,
    pub live_backups: usize,
}

/// A finished run with the intermediate artifacts kept for reporting.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub assignment: Assignment,
    pub trace: ScheduleTrace,
    pub metrics: Metrics,
    /// Reservation table as admitted, before any fault.
    pub table: Option<ReservationTable>,
    pub unprotected: Vec<JobKey>,
}

struct Prepared {
    assignment: Assignment,
    horizon: Tick,
    workload: Workload,
    table: Option<ReservationTable>,
    unprotected: Vec<JobKey>,
}

fn prepare(config: &SimConfig) -> Result<Prepared, SimError> {
    config.validate()?;
    let horizon = config.resolved_horizon()?;
    let assignment = sasa::assign(&config.taskset, config.processor_count, config.threshold)?;
    let workload = edf::workload(&assignment, horizon);
    let (table, unprotected) = match config.mode {
        Mode::Partitioned => (None, Vec::new()),
        Mode::Ft => {
            let (table, unprotected) = protect_all(&workload, horizon, |c| config.backup_wcet(c));
            (Some(table), unprotected)
        }
    };
    Ok(Prepared {
        assignment,
        horizon,
        workload,
        table,
        unprotected,
    })
}

/// Builds the reservation table of the integrated mode: every primary keeps
/// its fault-free EDF execution and backups go into the ticks that run left
/// idle. Returns the table and the jobs that could not be protected.
pub fn protect_all(
    workload: &Workload,
    horizon: Tick,
    backup_wcet: impl Fn(Tick) -> Tick,
) -> (ReservationTable, Vec<JobKey>) {
    let dry = Engine::new(workload.clone(), horizon, &[], None).run();
    let mut runs: BTreeMap<JobKey, (usize, Vec<Interval>)> = BTreeMap::new();
    for run in dry.trace.runs().into_iter().filter(|r| r.role == crate::Role::Primary) {
        runs.entry(run.job)
            .or_insert((run.processor, Vec::new()))
            .1
            .push(run.interval);
    }
    let mut table = ReservationTable::new(workload.processors);
    for (key, (p, intervals)) in &runs {
        table.occupy(*p, *key, intervals);
    }
    let candidates: Vec<Job> = dry
        .units
        .values()
        .filter(|u| u.job.abs_deadline <= horizon)
        .map(|u| u.job)
        .collect();
    let mut unprotected = Vec::new();
    for job in order_pending(&candidates) {
        let key = job.key();
        let completed = matches!(dry.units[&key].outcome, UnitOutcome::Completed(_));
        let depends_on = (job.segment == Segment::Part2).then_some(JobKey {
            segment: Segment::Part1,
            ..key
        });
        let protected = completed
            && runs.get(&key).is_some_and(|(p, intervals)| {
                table
                    .protect(&job, *p, intervals, backup_wcet(job.wcet), depends_on)
                    .is_ok()
            });
        if !protected {
            unprotected.push(key);
        }
    }
    unprotected.sort();
    (table, unprotected)
}

fn metrics(
    mode: Mode,
    horizon: Tick,
    out: &EngineOutput,
    admitted: Option<&ReservationTable>,
    unprotected: usize,
) -> Metrics {
    let committed = out.units.values().filter(|u| u.job.abs_deadline <= horizon);
    let (mut committed_jobs, mut deadline_misses, mut protected_misses, mut recoveries) = (0, 0, 0, 0);
    for unit in committed {
        committed_jobs += 1;
        match unit.outcome {
            UnitOutcome::Missed(_) => {
                deadline_misses += 1;
                if admitted.is_some_and(|t| t.commitment(&unit.job.key()).is_some()) {
                    protected_misses += 1;
                }
            }
            UnitOutcome::Recovered(_) => recoveries += 1,
            _ => {}
        }
    }
    let busy_ticks = out.trace.busy_ticks();
    let busy_fraction = busy_ticks
        .iter()
        .map(|&b| Util::new(b as i128, horizon as i128))
        .collect();
    let (overloaded, total) = admitted.map_or((0, 0), |t| t.overload_counts());
    Metrics {
        mode,
        horizon,
        committed_jobs,
        rejected_jobs: out.units.len() - committed_jobs,
        unprotected_jobs: unprotected,
        deadline_misses,
        protected_misses,
        recoveries,
        backup_ticks: out.backup_ticks,
        busy_ticks,
        busy_fraction,
        backup_reservations: total,
        overloaded_reservations: overloaded,
        overload_ratio: if total == 0 {
            Util::from_integer(0)
        } else {
            Util::new(overloaded as i128, total as i128)
        },
        live_backups: out.table.as_ref().map_or(0, |t| t.live_backup_count()),
    }
}

/// Runs one configuration and keeps the assignment and admitted table.
pub fn execute(config: &SimConfig) -> Result<SimRun, SimError> {
    let prep = prepare(config)?;
    let out = Engine::new(prep.workload, prep.horizon, &config.faults, prep.table.clone()).run();
    let metrics = metrics(
        config.mode,
        prep.horizon,
        &out,
        prep.table.as_ref(),
        prep.unprotected.len(),
    );
    Ok(SimRun {
        assignment: prep.assignment,
        trace: out.trace,
        metrics,
        table: prep.table,
        unprotected: prep.unprotected,
    })
}

pub fn run(config: &SimConfig) -> Result<(ScheduleTrace, Metrics), SimError> {
    execute(config).map(|r| (r.trace, r.metrics))
}

/// One fault point that made protected jobs miss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepFailure {
    pub processor: usize,
    pub tick: Tick,
    pub missed: Vec<JobKey>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepReport {
    pub runs: u64,
    pub failures: Vec<SweepFailure>,
    /// Jobs outside the guarantee.
    pub unprotected: Vec<JobKey>,
}

impl SweepReport {
    pub fn is_clean(&self) -> bool {
        self.failures.is_empty()
    }

    /// The failure with the most missed jobs, earliest on ties.
    pub fn worst(&self) -> Option<&SweepFailure> {
        self.failures.iter().rev().max_by_key(|f| f.missed.len())
    }
}

fn sweep(
    workload: &Workload,
    table: &ReservationTable,
    horizon: Tick,
    cap: u64,
    unprotected: Vec<JobKey>,
) -> Result<SweepReport, SimError> {
    let runs = workload.processors as u64 * horizon;
    if runs > cap {
        return Err(SimError::SweepCap { runs, cap });
    }
    let protected: BTreeSet<JobKey> = table.commitments().map(|c| c.job.key()).collect();
    let points: Vec<(usize, Tick)> = (0..workload.processors)
        .flat_map(|p| (0..horizon).map(move |t| (p, t)))
        .collect();
    let failures = points
        .into_par_iter()
        .filter_map(|(p, t)| {
            let fault = FaultEvent::permanent(t, p);
            let out = Engine::new(workload.clone(), horizon, &[fault], Some(table.clone())).run();
            let missed: Vec<JobKey> = out
                .units
                .iter()
                .filter(|(k, u)| matches!(u.outcome, UnitOutcome::Missed(_)) && protected.contains(k))
                .map(|(k, _)| *k)
                .collect();
            (!missed.is_empty()).then_some(SweepFailure {
                processor: p,
                tick: t,
                missed,
            })
        })
        .collect();
    Ok(SweepReport {
        runs,
        failures,
        unprotected,
    })
}

/// Replays every single permanent fault `(processor, tick)` over the horizon
/// and reports the runs in which a protected job missed its deadline.
pub fn sweep_single_faults(config: &SimConfig) -> Result<SweepReport, SimError> {
    if config.mode != Mode::Ft {
        return Err(SimError::NotFt);
    }
    config.validate()?;
    let runs = config.processor_count as u64 * config.resolved_horizon()?;
    if runs > config.sweep_cap {
        return Err(SimError::SweepCap {
            runs,
            cap: config.sweep_cap,
        });
    }
    let prep = prepare(config)?;
    let table = prep.table.expect("ft mode builds a table");
    sweep(&prep.workload, &table, prep.horizon, config.sweep_cap, prep.unprotected)
}

/// Sweeps a stored table: each committed primary is replayed at exactly its
/// recorded execution runs.
pub fn sweep_table(table: &ReservationTable, horizon: Tick, cap: u64) -> Result<SweepReport, SimError> {
    let workload = Workload {
        processors: table.processors(),
        pinned: table
            .commitments()
            .map(|c| (c.primary.processor, c.job, c.primary_runs.clone()))
            .collect(),
        ..Workload::default()
    };
    sweep(&workload, table, horizon, cap, Vec::new())
}

/// One row of [`compare_partitioners`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionerRow {
    pub algorithm: &'static str,
    pub feasible: bool,
    pub splits: usize,
    pub max_utilization: Option<Util>,
    pub unplaced: Option<TaskId>,
}

/// SASA against plain first fit and best fit on the same input.
pub fn compare_partitioners(
    set: &TaskSet,
    processor_count: usize,
    threshold: Util,
) -> Result<Vec<PartitionerRow>, AssignError> {
    type Partitioner = fn(&TaskSet, usize, Util) -> Result<Assignment, AssignError>;
    let algorithms: [(&'static str, Partitioner); 3] = [
        ("sasa", sasa::assign),
        ("ff", sasa::assign_first_fit),
        ("bf", sasa::assign_best_fit),
    ];
    algorithms
        .into_iter()
        .map(|(name, f)| match f(set, processor_count, threshold) {
            Ok(a) => Ok(PartitionerRow {
                algorithm: name,
                feasible: true,
                splits: a.split_count(),
                max_utilization: Some(a.max_utilization()),
                unplaced: None,
            }),
            Err(AssignError::Infeasible { task_id }) => Ok(PartitionerRow {
                algorithm: name,
                feasible: false,
                splits: 0,
                max_utilization: None,
                unplaced: Some(task_id),
            }),
            Err(e) => Err(e),
        })
        .collect()
}

#[cfg(test)]
mod tests;
