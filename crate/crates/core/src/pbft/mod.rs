//! Primary-backup fault tolerance with backup overloading.
//!
//! Every protected job owns a primary execution on one processor and a
//! backup reservation on another. Backups are placed by overloading an
//! existing backup slot when the co-resident backups guard disjoint sets of
//! processors, otherwise in the latest free interval before the deadline.
//! A backup is released when its primary completes, and activated when the
//! primary is lost to a fault.
//!
//! Under a single processor failure at most one backup of any overloaded
//! slot can be activated, which is what makes the stacking safe.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taskmodel::{Interval, Job, JobKey, Tick};

pub type GroupId = u64;

/// Set of processor indices (at most 64 processors).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ProcSet(u64);

pub const MAX_PROCESSORS: usize = 64;

impl ProcSet {
    pub fn single(processor: usize) -> Self {
        Self(1 << processor)
    }

    pub fn contains(&self, processor: usize) -> bool {
        processor < MAX_PROCESSORS && self.0 & (1 << processor) != 0
    }

    pub fn union(self, other: ProcSet) -> Self {
        Self(self.0 | other.0)
    }

    pub fn is_disjoint(&self, other: &ProcSet) -> bool {
        self.0 & other.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..MAX_PROCESSORS).filter(|&p| self.contains(p))
    }
}

impl FromIterator<usize> for ProcSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        iter.into_iter()
            .fold(ProcSet::default(), |s, p| s.union(ProcSet::single(p)))
    }
}

impl Serialize for ProcSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for ProcSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let items = Vec::<usize>::deserialize(deserializer)?;
        if let Some(bad) = items.iter().find(|&&p| p >= MAX_PROCESSORS) {
            return Err(serde::de::Error::custom(format!("processor {bad} out of range")));
        }
        Ok(items.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Primary,
    Backup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotReservation {
    pub processor: usize,
    pub interval: Interval,
    pub job: JobKey,
    pub kind: SlotKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overload_group: Option<GroupId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultKind {
    /// The processor stops executing from the fault tick on.
    Permanent,
    /// The primary running at the fault tick produces a bad result, detected
    /// when it completes.
    Transient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaultEvent {
    pub time: Tick,
    pub processor: usize,
    pub kind: FaultKind,
}

impl FaultEvent {
    pub fn permanent(time: Tick, processor: usize) -> Self {
        Self {
            time,
            processor,
            kind: FaultKind::Permanent,
        }
    }

    pub fn transient(time: Tick, processor: usize) -> Self {
        Self {
            time,
            processor,
            kind: FaultKind::Transient,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "state", content = "at")]
pub enum BackupState {
    Pending,
    Deallocated,
    Promoted(Tick),
}

/// A committed job: primary plus backup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commitment {
    pub job: Job,
    pub primary: SlotReservation,
    /// Exact ticks the primary occupies; a single run equal to the primary
    /// interval for reserved primaries.
    pub primary_runs: Vec<Interval>,
    pub backup: SlotReservation,
    /// Processors whose failure can activate this backup.
    pub guards: ProcSet,
    /// For a second portion: the first portion it continues.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depends_on: Option<JobKey>,
    pub state: BackupState,
    #[serde(default)]
    pub corrupted: bool,
}

/// A backup activated by a fault.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Promotion {
    pub job: JobKey,
    pub backup: SlotReservation,
    pub at: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PrimaryOutcome {
    Deallocated(Interval),
    Promoted(Vec<Promotion>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PbftError {
    #[error("job {0} is not committed")]
    UnknownJob(JobKey),
    #[error("backup of job {0} is no longer pending")]
    NotPending(JobKey),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error("invalid request for job {0}: {1}")]
    Invalid(JobKey, &'static str),
    #[error("job {0} is already committed")]
    Duplicate(JobKey),
    #[error("no processor has a primary slot for job {0}")]
    NoPrimarySlot(JobKey),
    #[error("no processor can hold the backup of job {0}")]
    NoBackupSlot(JobKey),
    #[error("job {0} depends on an unprotected portion")]
    UnprotectedDependency(JobKey),
}

/// Placement request for one backup copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackupRequest {
    pub job: JobKey,
    /// Admissible interval for the backup.
    pub window: Interval,
    pub length: Tick,
    pub guards: ProcSet,
}

impl BackupRequest {
    /// Backup of `job` after the given primary, `backup_wcet` ticks long.
    pub fn after_primary(job: &Job, primary: &SlotReservation, backup_wcet: Tick) -> Self {
        Self {
            job: job.key(),
            window: Interval::new(primary.interval.end, job.abs_deadline.max(primary.interval.end)),
            length: backup_wcet,
            guards: ProcSet::single(primary.processor),
        }
    }
}

/// Backup slots in EDF admission order: `(abs_deadline, release, task id)`.
pub fn order_pending(jobs: &[Job]) -> Vec<Job> {
    let mut out = jobs.to_vec();
    out.sort_by_key(|j| (j.abs_deadline, j.release, j.task_id, j.index, j.segment));
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TableViolation {
    #[error("job {0}: backup shares a processor with a copy it protects")]
    BackupOnGuardedProcessor(JobKey),
    #[error("job {0}: backup interval outside [primary end, deadline)")]
    BackupOutsideWindow(JobKey),
    #[error("job {0}: backup starts before the backup of the portion it continues")]
    BackupBeforeDependency(JobKey),
    #[error("job {0}: reservation has zero length")]
    EmptyReservation(JobKey),
    #[error("processor {processor}: overlapping backups of {a} and {b} can be activated by the same failure")]
    OverloadConflict { processor: usize, a: JobKey, b: JobKey },
    #[error("processor {processor}: backup of {backup} overlaps execution of {primary}")]
    BackupOverlapsPrimary {
        processor: usize,
        backup: JobKey,
        primary: JobKey,
    },
    #[error("processor {processor}: executions of {a} and {b} overlap")]
    PrimaryOverlap { processor: usize, a: JobKey, b: JobKey },
    #[error("job {0}: reservation references a processor out of range")]
    ProcessorOutOfRange(JobKey),
}

/// Per-processor primary footprints and backup reservations of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReservationTable {
    processors: usize,
    footprint: Vec<Vec<(Interval, JobKey)>>,
    commitments: BTreeMap<JobKey, Commitment>,
    next_group: GroupId,
}

impl ReservationTable {
    pub fn new(processors: usize) -> Self {
        assert!(processors <= MAX_PROCESSORS, "at most {MAX_PROCESSORS} processors");
        Self {
            processors,
            footprint: vec![Vec::new(); processors],
            commitments: BTreeMap::new(),
            next_group: 0,
        }
    }

    /// Rebuilds a table from stored parts without checking placement
    /// invariants; use [`ReservationTable::audit`] on the result.
    pub fn from_parts(
        processors: usize,
        footprint: Vec<(usize, Interval, JobKey)>,
        commitments: Vec<Commitment>,
    ) -> Result<Self, TableViolation> {
        let mut table = Self::new(processors);
        for (p, interval, job) in footprint {
            if p >= processors {
                return Err(TableViolation::ProcessorOutOfRange(job));
            }
            table.footprint[p].push((interval, job));
        }
        for c in commitments {
            if c.primary.processor >= processors || c.backup.processor >= processors {
                return Err(TableViolation::ProcessorOutOfRange(c.job.key()));
            }
            if let Some(g) = c.backup.overload_group {
                table.next_group = table.next_group.max(g + 1);
            }
            table.commitments.insert(c.job.key(), c);
        }
        for lane in &mut table.footprint {
            lane.sort();
        }
        Ok(table)
    }

    pub fn processors(&self) -> usize {
        self.processors
    }

    pub fn commitments(&self) -> impl Iterator<Item = &Commitment> {
        self.commitments.values()
    }

    pub fn commitment(&self, job: &JobKey) -> Option<&Commitment> {
        self.commitments.get(job)
    }

    pub fn footprint(&self) -> impl Iterator<Item = (usize, Interval, JobKey)> + '_ {
        self.footprint
            .iter()
            .enumerate()
            .flat_map(|(p, lane)| lane.iter().map(move |&(i, j)| (p, i, j)))
    }

    pub fn len(&self) -> usize {
        self.commitments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commitments.is_empty()
    }

    /// Backups that are still reserved (pending or activated).
    pub fn live_backups(&self, processor: usize) -> impl Iterator<Item = &Commitment> {
        self.commitments
            .values()
            .filter(move |c| c.backup.processor == processor && c.state != BackupState::Deallocated)
    }

    pub fn live_backup_count(&self) -> usize {
        (0..self.processors).map(|p| self.live_backups(p).count()).sum()
    }

    /// Records primary execution that backups must avoid.
    pub fn occupy(&mut self, processor: usize, job: JobKey, runs: &[Interval]) {
        let lane = &mut self.footprint[processor];
        lane.extend(runs.iter().filter(|r| !r.is_empty()).map(|&r| (r, job)));
        lane.sort();
    }

    fn blocked(&self, processor: usize) -> Vec<Interval> {
        let mut out: Vec<Interval> = self.footprint[processor].iter().map(|&(i, _)| i).collect();
        out.extend(self.live_backups(processor).map(|c| c.backup.interval));
        out.sort();
        out
    }

    /// Free sub-intervals of `window` on `processor`.
    fn gaps(&self, processor: usize, window: Interval) -> Vec<Interval> {
        let mut gaps = Vec::new();
        let mut cursor = window.start;
        for b in self.blocked(processor) {
            if b.end <= cursor {
                continue;
            }
            if b.start >= window.end {
                break;
            }
            if b.start > cursor {
                gaps.push(Interval::new(cursor, b.start));
            }
            cursor = cursor.max(b.end);
        }
        if cursor < window.end {
            gaps.push(Interval::new(cursor, window.end));
        }
        gaps
    }

    /// Earliest contiguous free interval of `job.wcet` ticks inside
    /// `[release, abs_deadline)`, scanning processors in ascending order.
    pub fn find_primary_slot(&self, job: &Job) -> Option<(usize, Interval)> {
        if job.release >= job.abs_deadline {
            return None;
        }
        let window = Interval::new(job.release, job.abs_deadline);
        (0..self.processors).find_map(|p| {
            self.gaps(p, window)
                .into_iter()
                .find(|g| g.len() >= job.wcet)
                .map(|g| (p, Interval::new(g.start, g.start + job.wcet)))
        })
    }

    fn groups(&self, processor: usize) -> BTreeMap<GroupId, (Interval, ProcSet)> {
        let mut groups: BTreeMap<GroupId, (Interval, ProcSet)> = BTreeMap::new();
        for c in self.live_backups(processor) {
            let Some(g) = c.backup.overload_group else { continue };
            let i = c.backup.interval;
            groups
                .entry(g)
                .and_modify(|(extent, guards)| {
                    *extent = Interval::new(extent.start.min(i.start), extent.end.max(i.end));
                    *guards = guards.union(c.guards);
                })
                .or_insert((i, c.guards));
        }
        groups
    }

    /// Stacks the backup onto an existing backup slot whose members are all
    /// activated by failures of other processors.
    pub fn try_overload(&self, req: &BackupRequest) -> Option<SlotReservation> {
        if req.length == 0 {
            return None;
        }
        (0..self.processors).filter(|&q| !req.guards.contains(q)).find_map(|q| {
            self.groups(q)
                .into_iter()
                .filter(|(_, (extent, guards))| {
                    guards.is_disjoint(&req.guards)
                        && extent.start >= req.window.start
                        && extent.start + req.length <= extent.end.min(req.window.end)
                })
                .max_by_key(|(g, (extent, _))| (extent.start, std::cmp::Reverse(*g)))
                .map(|(g, (extent, _))| SlotReservation {
                    processor: q,
                    interval: Interval::new(extent.start, extent.start + req.length),
                    job: req.job,
                    kind: SlotKind::Backup,
                    overload_group: Some(g),
                })
        })
    }

    /// Latest-starting free interval for the backup on any processor outside
    /// its guard set; the lowest index wins ties.
    pub fn place_backup_latest(&self, req: &BackupRequest) -> Option<SlotReservation> {
        if req.length == 0 || req.window.len() < req.length {
            return None;
        }
        (0..self.processors)
            .filter(|&q| !req.guards.contains(q))
            .filter_map(|q| {
                self.gaps(q, req.window)
                    .into_iter()
                    .rev()
                    .find(|g| g.len() >= req.length)
                    .map(|g| (q, Interval::new(g.end - req.length, g.end)))
            })
            .max_by_key(|&(q, i)| (i.start, std::cmp::Reverse(q)))
            .map(|(q, interval)| SlotReservation {
                processor: q,
                interval,
                job: req.job,
                kind: SlotKind::Backup,
                overload_group: None,
            })
    }

    fn place_backup(&self, req: &BackupRequest) -> Option<SlotReservation> {
        self.try_overload(req).or_else(|| self.place_backup_latest(req))
    }

    fn commit(
        &mut self,
        job: Job,
        primary: SlotReservation,
        primary_runs: Vec<Interval>,
        mut backup: SlotReservation,
        guards: ProcSet,
        depends_on: Option<JobKey>,
    ) {
        if backup.overload_group.is_none() {
            backup.overload_group = Some(self.next_group);
            self.next_group += 1;
        }
        self.commitments.insert(
            job.key(),
            Commitment {
                job,
                primary,
                primary_runs,
                backup,
                guards,
                depends_on,
                state: BackupState::Pending,
                corrupted: false,
            },
        );
    }

    /// Admits a job with a reserved primary slot and a backup, or leaves the
    /// table untouched and rejects it.
    pub fn admit(&mut self, job: &Job, backup_wcet: Tick) -> Result<(SlotReservation, SlotReservation), Rejection> {
        let key = job.key();
        if job.release >= job.abs_deadline {
            return Err(Rejection::Invalid(key, "release must precede the deadline"));
        }
        if backup_wcet == 0 || backup_wcet > job.wcet {
            return Err(Rejection::Invalid(key, "backup wcet must lie in [1, wcet]"));
        }
        if self.commitments.contains_key(&key) {
            return Err(Rejection::Duplicate(key));
        }
        let (p, interval) = self.find_primary_slot(job).ok_or(Rejection::NoPrimarySlot(key))?;
        let primary = SlotReservation {
            processor: p,
            interval,
            job: key,
            kind: SlotKind::Primary,
            overload_group: None,
        };
        let req = BackupRequest::after_primary(job, &primary, backup_wcet);
        let backup = self.place_backup(&req).ok_or(Rejection::NoBackupSlot(key))?;
        self.footprint[p].push((interval, key));
        self.footprint[p].sort();
        self.commit(*job, primary, vec![interval], backup, req.guards, None);
        let c = &self.commitments[&key];
        Ok((c.primary, c.backup))
    }

    /// Protects a job whose primary already executes in `runs` on
    /// `processor` (those runs must already be [occupied](Self::occupy)).
    ///
    /// With `depends_on`, the backup also starts after the backup of that
    /// portion and is guarded against its failures too.
    pub fn protect(
        &mut self,
        job: &Job,
        processor: usize,
        runs: &[Interval],
        backup_wcet: Tick,
        depends_on: Option<JobKey>,
    ) -> Result<SlotReservation, Rejection> {
        let key = job.key();
        let (Some(first), Some(last)) = (runs.first(), runs.last()) else {
            return Err(Rejection::Invalid(key, "primary has no execution"));
        };
        if backup_wcet == 0 || backup_wcet > job.wcet {
            return Err(Rejection::Invalid(key, "backup wcet must lie in [1, wcet]"));
        }
        if self.commitments.contains_key(&key) {
            return Err(Rejection::Duplicate(key));
        }
        let primary = SlotReservation {
            processor,
            interval: Interval::new(first.start, last.end),
            job: key,
            kind: SlotKind::Primary,
            overload_group: None,
        };
        let mut req = BackupRequest::after_primary(job, &primary, backup_wcet);
        if let Some(dep) = depends_on {
            let d = self
                .commitments
                .get(&dep)
                .ok_or(Rejection::UnprotectedDependency(key))?;
            req.guards = req.guards.union(d.guards);
            req.window.start = req.window.start.max(d.backup.interval.end);
            req.window.end = req.window.end.max(req.window.start);
        }
        let backup = self.place_backup(&req).ok_or(Rejection::NoBackupSlot(key))?;
        self.commit(*job, primary, runs.to_vec(), backup, req.guards, depends_on);
        Ok(self.commitments[&key].backup)
    }

    /// Releases the backup of a job whose primary completed successfully.
    pub fn deallocate_backup(&mut self, job: &JobKey) -> Result<Interval, PbftError> {
        let c = self.commitments.get_mut(job).ok_or(PbftError::UnknownJob(*job))?;
        if c.state != BackupState::Pending {
            return Err(PbftError::NotPending(*job));
        }
        c.state = BackupState::Deallocated;
        Ok(c.backup.interval)
    }

    /// Activates the backup of `job` and of every pending portion that
    /// continues it.
    pub fn promote(&mut self, job: &JobKey, at: Tick) -> Vec<Promotion> {
        let mut out = Vec::new();
        let mut stack = vec![*job];
        while let Some(key) = stack.pop() {
            let Some(c) = self.commitments.get_mut(&key) else {
                continue;
            };
            if c.state != BackupState::Pending {
                continue;
            }
            c.state = BackupState::Promoted(at);
            out.push(Promotion {
                job: key,
                backup: c.backup,
                at,
            });
            stack.extend(
                self.commitments
                    .values()
                    .filter(|d| d.depends_on == Some(key) && d.state == BackupState::Pending)
                    .map(|d| d.job.key()),
            );
        }
        out
    }

    /// Applies a processor fault.
    ///
    /// A permanent fault activates the backup of every pending job whose
    /// primary lives on the processor. A transient fault marks `running`
    /// (the primary executing on that processor at the fault tick) as
    /// corrupted; its backup is activated by [`Self::complete_primary`].
    pub fn on_fault(&mut self, event: &FaultEvent, running: Option<JobKey>) -> Vec<Promotion> {
        match event.kind {
            FaultKind::Permanent => {
                let hit: Vec<JobKey> = self
                    .commitments
                    .values()
                    .filter(|c| c.primary.processor == event.processor && c.state == BackupState::Pending)
                    .map(|c| c.job.key())
                    .collect();
                hit.iter().flat_map(|k| self.promote(k, event.time)).collect()
            }
            FaultKind::Transient => {
                if let Some(c) = running.and_then(|k| self.commitments.get_mut(&k)) {
                    if c.primary.processor == event.processor && c.state == BackupState::Pending {
                        c.corrupted = true;
                    }
                }
                Vec::new()
            }
        }
    }

    /// Called when a primary finishes executing at `at`.
    pub fn complete_primary(&mut self, job: &JobKey, at: Tick) -> Result<PrimaryOutcome, PbftError> {
        let c = self.commitments.get(job).ok_or(PbftError::UnknownJob(*job))?;
        if c.state != BackupState::Pending {
            return Err(PbftError::NotPending(*job));
        }
        if c.corrupted {
            Ok(PrimaryOutcome::Promoted(self.promote(job, at)))
        } else {
            self.deallocate_backup(job).map(PrimaryOutcome::Deallocated)
        }
    }

    /// `(overloaded backups, all backups)`: a backup counts as overloaded when
    /// its slot holds at least one other backup.
    pub fn overload_counts(&self) -> (usize, usize) {
        let mut sizes: BTreeMap<(usize, GroupId), usize> = BTreeMap::new();
        for c in self.commitments.values() {
            if let Some(g) = c.backup.overload_group {
                *sizes.entry((c.backup.processor, g)).or_default() += 1;
            }
        }
        let overloaded = self
            .commitments
            .values()
            .filter(|c| {
                c.backup
                    .overload_group
                    .is_some_and(|g| sizes[&(c.backup.processor, g)] > 1)
            })
            .count();
        (overloaded, self.commitments.len())
    }

    /// Lists every violated placement invariant.
    pub fn audit(&self) -> Vec<TableViolation> {
        let mut out = Vec::new();
        for c in self.commitments.values() {
            let key = c.job.key();
            if c.backup.processor == c.primary.processor || c.guards.contains(c.backup.processor) {
                out.push(TableViolation::BackupOnGuardedProcessor(key));
            }
            if c.backup.interval.is_empty() || c.primary.interval.is_empty() {
                out.push(TableViolation::EmptyReservation(key));
            }
            if c.backup.interval.start < c.primary.interval.end || c.backup.interval.end > c.job.abs_deadline {
                out.push(TableViolation::BackupOutsideWindow(key));
            }
            if let Some(dep) = c.depends_on.and_then(|d| self.commitments.get(&d)) {
                if c.backup.interval.start < dep.backup.interval.end {
                    out.push(TableViolation::BackupBeforeDependency(key));
                }
            }
        }
        for p in 0..self.processors {
            let lane = &self.footprint[p];
            for (i, (a, ja)) in lane.iter().enumerate() {
                for (b, jb) in &lane[i + 1..] {
                    if a.overlaps(b) {
                        out.push(TableViolation::PrimaryOverlap {
                            processor: p,
                            a: *ja,
                            b: *jb,
                        });
                    }
                }
            }
            let live: Vec<&Commitment> = self.live_backups(p).collect();
            for (i, a) in live.iter().enumerate() {
                for (run, primary) in lane {
                    if run.overlaps(&a.backup.interval) {
                        out.push(TableViolation::BackupOverlapsPrimary {
                            processor: p,
                            backup: a.job.key(),
                            primary: *primary,
                        });
                    }
                }
                for b in &live[i + 1..] {
                    let same_primary_proc = a.primary.processor == b.primary.processor;
                    if a.backup.interval.overlaps(&b.backup.interval)
                        && (same_primary_proc || !a.guards.is_disjoint(&b.guards))
                    {
                        out.push(TableViolation::OverloadConflict {
                            processor: p,
                            a: a.job.key(),
                            b: b.job.key(),
                        });
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for ReservationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in self.commitments.values() {
            writeln!(
                f,
                "{} primary P{} {} backup P{} {}",
                c.job.key(),
                c.primary.processor,
                c.primary.interval,
                c.backup.processor,
                c.backup.interval
            )?;
        }
        Ok(())
    }
}
