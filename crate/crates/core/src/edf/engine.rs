//! Tick-driven multiprocessor executor.
//!
//! Each processor runs its own EDF scheduler. On top of EDF a processor may
//! carry time-triggered primaries (pinned to fixed runs) and activated backup
//! reservations; at any tick an activated backup outranks a pinned primary,
//! which outranks the EDF choice.

use std::collections::{BTreeMap, BTreeSet};

use crate::pbft::{FaultEvent, FaultKind, PrimaryOutcome, Promotion, ReservationTable};
use crate::taskmodel::{Interval, Job, JobKey, Segment, TaskId, Tick};

use super::pick;
use super::trace::{EventKind, Role, ScheduleTrace, TraceEvent};

/// Where the second portion of a split task runs and how it is timed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chain {
    pub processor: usize,
    pub part2_wcet: Tick,
    pub period: Tick,
    pub phase: Tick,
    /// Relative deadline of the parent task.
    pub deadline: Tick,
}

impl Chain {
    /// Second-portion job released when the first portion of job `index`
    /// completes at `completion`.
    pub fn part2_job(&self, task_id: TaskId, index: u64, completion: Tick) -> Job {
        Job {
            task_id,
            index,
            segment: Segment::Part2,
            release: completion,
            abs_deadline: self.phase + index * self.period + self.deadline,
            wcet: self.part2_wcet,
        }
    }
}

/// Everything the engine executes.
#[derive(Debug, Clone, Default)]
pub struct Workload {
    pub processors: usize,
    /// EDF-scheduled jobs with their processor.
    pub jobs: Vec<(usize, Job)>,
    /// Time-triggered primaries: processor, job, exact execution runs.
    pub pinned: Vec<(usize, Job, Vec<Interval>)>,
    pub chains: BTreeMap<TaskId, Chain>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitOutcome {
    Open,
    Completed(Tick),
    Recovered(Tick),
    Missed(Tick),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnitRecord {
    pub job: Job,
    pub processor: usize,
    pub outcome: UnitOutcome,
    /// A backup was activated for this unit.
    pub promoted: bool,
}

#[derive(Debug, Clone)]
pub struct EngineOutput {
    pub trace: ScheduleTrace,
    pub table: Option<ReservationTable>,
    pub units: BTreeMap<JobKey, UnitRecord>,
    pub backup_ticks: Tick,
}

#[derive(Debug, Clone)]
struct Active {
    job: Job,
    remaining: Tick,
    started: bool,
    corrupted: bool,
    runs: Option<Vec<Interval>>,
}

#[derive(Debug, Clone)]
struct ActiveBackup {
    job: JobKey,
    interval: Interval,
    remaining: Tick,
    started: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Occupant {
    Edf(JobKey),
    Pinned(JobKey),
    Backup(JobKey),
}

impl Occupant {
    fn key(&self) -> JobKey {
        match *self {
            Occupant::Edf(k) | Occupant::Pinned(k) | Occupant::Backup(k) => k,
        }
    }

    fn role(&self) -> Role {
        match self {
            Occupant::Backup(_) => Role::Backup,
            _ => Role::Primary,
        }
    }
}

#[derive(Debug, Default)]
struct Lane {
    ready: Vec<Active>,
    pinned: Vec<Active>,
    backups: Vec<ActiveBackup>,
    crashed: bool,
    current: Option<Occupant>,
}

impl Lane {
    fn holds(&self, occ: Occupant) -> bool {
        match occ {
            Occupant::Edf(k) => self.ready.iter().any(|a| a.job.key() == k),
            Occupant::Pinned(k) => self.pinned.iter().any(|a| a.job.key() == k),
            Occupant::Backup(k) => self.backups.iter().any(|b| b.job == k),
        }
    }

    fn was_started(&self, occ: Occupant) -> bool {
        match occ {
            Occupant::Edf(k) => self.ready.iter().any(|a| a.job.key() == k && a.started),
            Occupant::Pinned(k) => self.pinned.iter().any(|a| a.job.key() == k && a.started),
            Occupant::Backup(k) => self.backups.iter().any(|b| b.job == k && b.started),
        }
    }

    fn choose(&self, t: Tick) -> Option<Occupant> {
        if self.crashed {
            return None;
        }
        if let Some(b) = self.backups.iter().find(|b| b.interval.contains(t) && b.remaining > 0) {
            return Some(Occupant::Backup(b.job));
        }
        if let Some(a) = self
            .pinned
            .iter()
            .find(|a| a.remaining > 0 && a.runs.as_ref().is_some_and(|r| r.iter().any(|i| i.contains(t))))
        {
            return Some(Occupant::Pinned(a.job.key()));
        }
        pick(self.ready.iter().map(|a| &a.job)).map(|j| Occupant::Edf(j.key()))
    }
}

pub struct Engine {
    horizon: Tick,
    lanes: Vec<Lane>,
    events: Vec<TraceEvent>,
    table: Option<ReservationTable>,
    units: BTreeMap<JobKey, UnitRecord>,
    /// Open units by deadline.
    open: BTreeSet<(Tick, JobKey)>,
    chains: BTreeMap<TaskId, Chain>,
    releases: Vec<(usize, Active)>,
    faults: Vec<FaultEvent>,
    backup_ticks: Tick,
}

impl Engine {
    pub fn new(workload: Workload, horizon: Tick, faults: &[FaultEvent], table: Option<ReservationTable>) -> Self {
        let mut releases: Vec<(usize, Active)> = workload
            .jobs
            .into_iter()
            .map(|(p, job)| (p, Active::new(job, None)))
            .chain(
                workload
                    .pinned
                    .into_iter()
                    .map(|(p, job, runs)| (p, Active::new(job, Some(runs)))),
            )
            .collect();
        // Popped from the back: latest release first in the vector.
        releases
            .sort_by_key(|(p, a)| std::cmp::Reverse((a.job.release, *p, a.job.task_id, a.job.index, a.job.segment)));
        let mut faults: Vec<FaultEvent> = faults
            .iter()
            .copied()
            .filter(|f| f.processor < workload.processors)
            .collect();
        faults.sort_by_key(|f| f.time);
        faults.reverse();
        Self {
            horizon,
            lanes: (0..workload.processors).map(|_| Lane::default()).collect(),
            events: Vec::new(),
            table,
            units: BTreeMap::new(),
            open: BTreeSet::new(),
            chains: workload.chains,
            releases,
            faults,
            backup_ticks: 0,
        }
    }

    pub fn run(mut self) -> EngineOutput {
        for t in 0..self.horizon {
            self.apply_faults(t, false);
            self.release(t);
            self.check_deadlines(t);
            let occupants = self.dispatch(t);
            self.apply_faults(t, true);
            self.execute(t, &occupants);
        }
        self.check_deadlines(self.horizon);
        EngineOutput {
            trace: ScheduleTrace::from_events(self.lanes.len(), self.horizon, self.events),
            table: self.table,
            units: self.units,
            backup_ticks: self.backup_ticks,
        }
    }

    fn emit(&mut self, tick: Tick, processor: usize, job: JobKey, role: Role, kind: EventKind) {
        self.events.push(TraceEvent {
            tick,
            processor,
            job,
            role,
            kind,
        });
    }

    fn register(&mut self, processor: usize, job: Job) {
        if let std::collections::btree_map::Entry::Vacant(slot) = self.units.entry(job.key()) {
            slot.insert(UnitRecord {
                job,
                processor,
                outcome: UnitOutcome::Open,
                promoted: false,
            });
            self.open.insert((job.abs_deadline, job.key()));
        }
    }

    fn resolve(&mut self, job: &JobKey, outcome: UnitOutcome) {
        if let Some(u) = self.units.get_mut(job) {
            if u.outcome == UnitOutcome::Open {
                u.outcome = outcome;
                self.open.remove(&(u.job.abs_deadline, *job));
            }
        }
    }

    fn is_open(&self, job: &JobKey) -> bool {
        self.units.get(job).is_some_and(|u| u.outcome == UnitOutcome::Open)
    }

    /// Permanent faults are applied before dispatch; transient faults after,
    /// so they hit the copy that occupies the faulty tick.
    fn apply_faults(&mut self, t: Tick, transient: bool) {
        let mut idx = self.faults.len();
        let mut due = Vec::new();
        while idx > 0 && self.faults[idx - 1].time <= t {
            idx -= 1;
            let f = self.faults[idx];
            if (f.kind == FaultKind::Transient) == transient && f.time == t {
                due.push(f);
            }
        }
        for fault in due {
            match fault.kind {
                FaultKind::Permanent => self.crash(fault),
                FaultKind::Transient => self.corrupt(fault),
            }
        }
        if transient {
            self.faults.retain(|f| f.time > t);
        }
    }

    fn crash(&mut self, fault: FaultEvent) {
        let p = fault.processor;
        if self.lanes[p].crashed {
            return;
        }
        let t = fault.time;
        let lane = &mut self.lanes[p];
        lane.crashed = true;
        lane.current = None;
        let lost: Vec<Job> = lane
            .ready
            .drain(..)
            .chain(lane.pinned.drain(..))
            .map(|a| a.job)
            .collect();
        let dead_backups: Vec<JobKey> = lane.backups.drain(..).map(|b| b.job).collect();
        for job in &lost {
            self.emit(t, p, job.key(), Role::Primary, EventKind::Abort);
        }
        for key in dead_backups {
            self.emit(t, p, key, Role::Backup, EventKind::Abort);
        }
        if let Some(table) = self.table.as_mut() {
            let promotions = table.on_fault(&fault, None);
            self.activate(promotions);
        }
        for job in lost {
            self.lose_primary(job, t, true);
        }
    }

    fn corrupt(&mut self, fault: FaultEvent) {
        let lane = &mut self.lanes[fault.processor];
        let running = match lane.current {
            Some(Occupant::Edf(k)) => lane.ready.iter_mut().find(|a| a.job.key() == k),
            Some(Occupant::Pinned(k)) => lane.pinned.iter_mut().find(|a| a.job.key() == k),
            _ => None,
        };
        if let Some(active) = running {
            active.corrupted = true;
            let key = active.job.key();
            if let Some(table) = self.table.as_mut() {
                table.on_fault(&fault, Some(key));
            }
        }
    }

    /// A primary copy is gone: activate its backup if it has one and mark the
    /// continuation of a first portion as lost.
    fn lose_primary(&mut self, job: Job, at: Tick, promote: bool) {
        if job.segment == Segment::Part1 {
            if let Some(chain) = self.chains.get(&job.task_id).copied() {
                let part2 = chain.part2_job(job.task_id, job.index, at);
                self.register(chain.processor, part2);
            }
        }
        if !promote {
            return;
        }
        if let Some(table) = self.table.as_mut() {
            let promotions = table.promote(&job.key(), at);
            self.activate(promotions);
        }
    }

    fn activate(&mut self, promotions: Vec<Promotion>) {
        for p in promotions {
            let q = p.backup.processor;
            self.emit(p.at, q, p.job, Role::Backup, EventKind::Promote);
            if let Some(u) = self.units.get_mut(&p.job) {
                u.promoted = true;
            } else if let Some(c) = self.table.as_ref().and_then(|t| t.commitment(&p.job)) {
                let (job, processor) = (c.job, c.primary.processor);
                self.register(processor, job);
                self.units.get_mut(&p.job).unwrap().promoted = true;
            }
            self.lanes[q].backups.push(ActiveBackup {
                job: p.job,
                interval: p.backup.interval,
                remaining: p.backup.interval.len(),
                started: false,
            });
        }
    }

    fn release(&mut self, t: Tick) {
        while let Some((p, _)) = self.releases.last() {
            let p = *p;
            if self.releases.last().unwrap().1.job.release > t {
                break;
            }
            let (_, active) = self.releases.pop().unwrap();
            let job = active.job;
            self.register(p, job);
            if self.lanes[p].crashed {
                self.emit(t, p, job.key(), Role::Primary, EventKind::Abort);
                self.lose_primary(job, t, true);
                continue;
            }
            self.emit(t, p, job.key(), Role::Primary, EventKind::Release);
            if active.runs.is_some() {
                self.lanes[p].pinned.push(active);
            } else {
                self.lanes[p].ready.push(active);
            }
        }
    }

    fn check_deadlines(&mut self, t: Tick) {
        let due: Vec<(JobKey, UnitRecord)> = self
            .open
            .iter()
            .take_while(|(d, _)| *d <= t)
            .map(|(_, k)| (*k, self.units[k]))
            .collect();
        for (key, unit) in due {
            // Report the miss where a copy was still pending, else on the primary's processor.
            let mut location = (unit.processor, Role::Primary);
            let mut dropped_primary = None;
            for (p, lane) in self.lanes.iter_mut().enumerate() {
                if let Some(i) = lane.ready.iter().position(|a| a.job.key() == key) {
                    dropped_primary = Some(lane.ready.remove(i).job);
                    location = (p, Role::Primary);
                }
                if let Some(i) = lane.pinned.iter().position(|a| a.job.key() == key) {
                    dropped_primary = Some(lane.pinned.remove(i).job);
                    location = (p, Role::Primary);
                }
                if let Some(i) = lane.backups.iter().position(|b| b.job == key) {
                    lane.backups.remove(i);
                    location = (p, Role::Backup);
                }
                if lane.current.is_some_and(|c| c.key() == key) {
                    lane.current = None;
                }
            }
            self.emit(t, location.0, key, location.1, EventKind::Miss);
            self.resolve(&key, UnitOutcome::Missed(t));
            if let Some(job) = dropped_primary {
                self.lose_primary(job, t, false);
            }
        }
    }

    fn dispatch(&mut self, t: Tick) -> Vec<Option<Occupant>> {
        let mut out = Vec::with_capacity(self.lanes.len());
        for p in 0..self.lanes.len() {
            let lane = &self.lanes[p];
            let next = lane.choose(t);
            let prev = lane.current;
            if prev != next {
                let preempted = prev.filter(|&o| lane.holds(o));
                let started = next.map(|n| (n, lane.was_started(n)));
                if let Some(prev) = preempted {
                    self.emit(t, p, prev.key(), prev.role(), EventKind::Preempt);
                }
                if let Some((next, resumed)) = started {
                    let kind = if resumed { EventKind::Resume } else { EventKind::Start };
                    self.emit(t, p, next.key(), next.role(), kind);
                }
                self.lanes[p].current = next;
            }
            out.push(next);
        }
        out
    }

    fn execute(&mut self, t: Tick, occupants: &[Option<Occupant>]) {
        for (p, occ) in occupants.iter().enumerate() {
            let Some(occ) = *occ else { continue };
            let lane = &mut self.lanes[p];
            if lane.crashed {
                continue;
            }
            match occ {
                Occupant::Backup(key) => {
                    let i = lane
                        .backups
                        .iter()
                        .position(|b| b.job == key)
                        .expect("occupant present");
                    let b = &mut lane.backups[i];
                    b.started = true;
                    b.remaining -= 1;
                    self.backup_ticks += 1;
                    if b.remaining == 0 {
                        lane.backups.remove(i);
                        lane.current = None;
                        self.emit(t + 1, p, key, Role::Backup, EventKind::Complete);
                        self.resolve(&key, UnitOutcome::Recovered(t + 1));
                    }
                }
                Occupant::Edf(key) | Occupant::Pinned(key) => {
                    let list = match occ {
                        Occupant::Edf(_) => &mut lane.ready,
                        _ => &mut lane.pinned,
                    };
                    let i = list.iter().position(|a| a.job.key() == key).expect("occupant present");
                    let a = &mut list[i];
                    a.started = true;
                    a.remaining -= 1;
                    if a.remaining == 0 {
                        let done = list.remove(i);
                        lane.current = None;
                        self.finish_primary(p, done, t + 1);
                    }
                }
            }
        }
    }

    fn finish_primary(&mut self, p: usize, done: Active, at: Tick) {
        let job = done.job;
        let key = job.key();
        let committed = self
            .table
            .as_ref()
            .and_then(|t| t.commitment(&key))
            .is_some_and(|c| c.state == crate::pbft::BackupState::Pending);
        if done.corrupted {
            self.emit(at, p, key, Role::Primary, EventKind::Abort);
            if committed {
                let table = self.table.as_mut().unwrap();
                if let Ok(PrimaryOutcome::Promoted(promotions)) = table.complete_primary(&key, at) {
                    self.activate(promotions);
                }
            }
            self.lose_primary(job, at, true);
            return;
        }
        self.emit(at, p, key, Role::Primary, EventKind::Complete);
        if !self.is_open(&key) {
            return;
        }
        self.resolve(&key, UnitOutcome::Completed(at));
        if committed {
            let table = self.table.as_mut().unwrap();
            let backup = table.commitment(&key).unwrap().backup.processor;
            if table.deallocate_backup(&key).is_ok() {
                self.emit(at, backup, key, Role::Backup, EventKind::Dealloc);
            }
        }
        if job.segment == Segment::Part1 {
            if let Some(chain) = self.chains.get(&job.task_id).copied() {
                let part2 = chain.part2_job(job.task_id, job.index, at);
                let pos = self
                    .releases
                    .iter()
                    .position(|(_, a)| a.job.release <= part2.release)
                    .unwrap_or(self.releases.len());
                self.releases.insert(pos, (chain.processor, Active::new(part2, None)));
            }
        }
    }
}

impl Active {
    fn new(job: Job, runs: Option<Vec<Interval>>) -> Self {
        Self {
            job,
            remaining: job.wcet,
            started: false,
            corrupted: false,
            runs,
        }
    }
}
