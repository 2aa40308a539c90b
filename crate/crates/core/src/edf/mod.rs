//! Per-processor EDF execution and exact uniprocessor schedulability.
//!
//! Each processor schedules its own jobs by earliest absolute deadline,
//! breaking ties by release tick and then task id. The first portion of a
//! split task runs with a shortened deadline (the parent deadline minus the
//! second portion's wcet); the second portion is released on its own
//! processor the tick the first completes, with the parent's deadline.

mod engine;
mod trace;

pub use engine::{Chain, Engine, EngineOutput, UnitOutcome, UnitRecord, Workload};
pub use trace::{CopyLabel, EventKind, ExecRun, Role, ScheduleTrace, TraceEvent};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::pbft::FaultEvent;
use crate::sasa::{Assignment, Entry, Part};
use crate::taskmodel::{lcm_capped, Job, ModelError, Segment, Tick};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("job is not a first portion")]
    NotFirstPortion,
    #[error("task {0} has no second portion in the assignment")]
    MissingSecondPortion(u32),
    #[error("second portion released at {release}, at or after its deadline {deadline}")]
    Violation { release: Tick, deadline: Tick },
}

/// Full EDF ordering key including job index and segment, so picks are total.
fn edf_key(job: &Job) -> (Tick, Tick, u32, u64, Segment) {
    (job.abs_deadline, job.release, job.task_id, job.index, job.segment)
}

/// The job with the earliest deadline (then earliest release, then lowest
/// task id), or `None` when idle.
pub fn pick<'a>(ready: impl IntoIterator<Item = &'a Job>) -> Option<&'a Job> {
    ready.into_iter().min_by_key(|j| edf_key(j))
}

/// Jobs of `entry` released before `horizon`. First portions carry their
/// handoff deadline; second portions are not expanded (they are chained).
fn entry_jobs(entry: &Entry, horizon: Tick) -> Vec<Job> {
    let (segment, wcet, deadline) = match entry {
        Entry::Task(t) => (Segment::Whole, t.wcet, t.deadline),
        Entry::Portion(p) if p.part == Part::First => (Segment::Part1, p.wcet, p.handoff()),
        Entry::Portion(_) => return Vec::new(),
    };
    (0..)
        .map(|k| {
            let release = entry.phase() + k * entry.period();
            Job {
                task_id: entry.task_id(),
                index: k,
                segment,
                release,
                abs_deadline: release + deadline,
                wcet,
            }
        })
        .take_while(|j| j.release < horizon)
        .collect()
}

fn chains(assignment: &Assignment) -> BTreeMap<u32, Chain> {
    assignment
        .entries()
        .filter_map(|(p, e)| match e {
            Entry::Portion(portion) if portion.part == Part::Second => Some((
                portion.parent_id,
                Chain {
                    processor: p,
                    part2_wcet: portion.wcet,
                    period: portion.period,
                    phase: portion.phase,
                    deadline: portion.deadline,
                },
            )),
            _ => None,
        })
        .collect()
}

/// The EDF workload an assignment induces over `[0, horizon)`.
pub fn workload(assignment: &Assignment, horizon: Tick) -> Workload {
    let jobs = assignment
        .entries()
        .flat_map(|(p, e)| entry_jobs(e, horizon).into_iter().map(move |j| (p, j)))
        .collect();
    Workload {
        processors: assignment.processor_count,
        jobs,
        pinned: Vec::new(),
        chains: chains(assignment),
    }
}

/// Fault-free partitioned EDF run over `[0, horizon)`.
pub fn run_partitioned(assignment: &Assignment, horizon: Tick) -> ScheduleTrace {
    run_with_faults(assignment, horizon, &[]).trace
}

pub fn run_with_faults(assignment: &Assignment, horizon: Tick, faults: &[FaultEvent]) -> EngineOutput {
    Engine::new(workload(assignment, horizon), horizon, faults, None).run()
}

/// Runs explicit jobs on one processor.
pub fn run_jobs(jobs: &[Job], horizon: Tick) -> ScheduleTrace {
    let workload = Workload {
        processors: 1,
        jobs: jobs.iter().map(|j| (0, *j)).collect(),
        ..Workload::default()
    };
    Engine::new(workload, horizon, &[], None).run().trace
}

/// Releases the second portion after the first portion of the same job
/// completed at `completion`. Returns the processor and the job.
pub fn chain_portion(part1: &Job, completion: Tick, assignment: &Assignment) -> Result<(usize, Job), ChainError> {
    if part1.segment != Segment::Part1 {
        return Err(ChainError::NotFirstPortion);
    }
    let chain = chains(assignment)
        .get(&part1.task_id)
        .copied()
        .ok_or(ChainError::MissingSecondPortion(part1.task_id))?;
    let job = chain.part2_job(part1.task_id, part1.index, completion);
    if job.release >= job.abs_deadline {
        return Err(ChainError::Violation {
            release: job.release,
            deadline: job.abs_deadline,
        });
    }
    Ok((chain.processor, job))
}

/// Synchronous-release jobs of one processor's load over one hyperperiod.
/// Second portions are released at their latest possible handoff.
pub(crate) fn synchronous_jobs(entries: &[Entry], horizon_cap: Tick) -> Result<(Tick, Vec<Job>), ModelError> {
    let hyper = lcm_capped(entries.iter().map(Entry::period), horizon_cap)?;
    let mut jobs = Vec::new();
    for entry in entries {
        let (segment, offset, deadline) = match entry {
            Entry::Task(t) => (Segment::Whole, 0, t.deadline),
            Entry::Portion(p) if p.part == Part::First => (Segment::Part1, 0, p.handoff()),
            Entry::Portion(p) => (Segment::Part2, p.handoff(), p.deadline),
        };
        for k in 0..hyper / entry.period() {
            let base = k * entry.period();
            jobs.push(Job {
                task_id: entry.task_id(),
                index: k,
                segment,
                release: base + offset,
                abs_deadline: base + deadline,
                wcet: entry.wcet(),
            });
        }
    }
    Ok((hyper, jobs))
}

/// Exact EDF test for one processor: simulate synchronous release over one
/// hyperperiod and look for a miss.
pub fn exact_schedulable(entries: &[Entry], horizon_cap: Tick) -> Result<bool, ModelError> {
    if entries.is_empty() {
        return Ok(true);
    }
    let (hyper, jobs) = synchronous_jobs(entries, horizon_cap)?;
    Ok(run_jobs(&jobs, hyper).count(EventKind::Miss) == 0)
}

#[cfg(test)]
mod tests;
