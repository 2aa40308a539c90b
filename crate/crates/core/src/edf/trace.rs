//! Execution traces.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::taskmodel::{Interval, JobKey, Segment, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Primary,
    Backup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Release,
    Start,
    Preempt,
    Resume,
    Complete,
    Miss,
    /// A primary copy was lost to a processor fault.
    Abort,
    /// A backup reservation was activated.
    Promote,
    /// A backup reservation was released after its primary succeeded.
    Dealloc,
}

impl EventKind {
    pub const ALL: [EventKind; 9] = [
        EventKind::Release,
        EventKind::Start,
        EventKind::Preempt,
        EventKind::Resume,
        EventKind::Complete,
        EventKind::Miss,
        EventKind::Abort,
        EventKind::Promote,
        EventKind::Dealloc,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Release => "release",
            EventKind::Start => "start",
            EventKind::Preempt => "preempt",
            EventKind::Resume => "resume",
            EventKind::Complete => "complete",
            EventKind::Miss => "miss",
            EventKind::Abort => "abort",
            EventKind::Promote => "promote",
            EventKind::Dealloc => "dealloc",
        }
    }
}

impl FromStr for EventKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown event kind {s:?}"))
    }
}

/// Which copy of which piece of a job an event refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CopyLabel {
    pub segment: Segment,
    pub role: Role,
}

impl CopyLabel {
    pub fn as_str(&self) -> &'static str {
        match (self.segment, self.role) {
            (Segment::Whole, Role::Primary) => "primary",
            (Segment::Part1, Role::Primary) => "part1",
            (Segment::Part2, Role::Primary) => "part2",
            (Segment::Whole, Role::Backup) => "backup",
            (Segment::Part1, Role::Backup) => "part1-backup",
            (Segment::Part2, Role::Backup) => "part2-backup",
        }
    }
}

impl fmt::Display for CopyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CopyLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (segment, role) = match s {
            "primary" => (Segment::Whole, Role::Primary),
            "part1" => (Segment::Part1, Role::Primary),
            "part2" => (Segment::Part2, Role::Primary),
            "backup" => (Segment::Whole, Role::Backup),
            "part1-backup" => (Segment::Part1, Role::Backup),
            "part2-backup" => (Segment::Part2, Role::Backup),
            _ => return Err(format!("unknown copy label {s:?}")),
        };
        Ok(CopyLabel { segment, role })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    pub tick: Tick,
    pub processor: usize,
    pub job: JobKey,
    pub role: Role,
    pub kind: EventKind,
}

impl TraceEvent {
    pub fn copy(&self) -> CopyLabel {
        CopyLabel {
            segment: self.job.segment,
            role: self.role,
        }
    }
}

/// A maximal stretch of consecutive ticks one copy spent executing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecRun {
    pub processor: usize,
    pub job: JobKey,
    pub role: Role,
    pub interval: Interval,
}

/// Ordered event record of one simulation run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScheduleTrace {
    pub horizon: Tick,
    pub processors: usize,
    events: Vec<TraceEvent>,
}

impl ScheduleTrace {
    pub fn new(processors: usize, horizon: Tick) -> Self {
        Self {
            horizon,
            processors,
            events: Vec::new(),
        }
    }

    /// Builds a trace from events, ordering them by `(tick, processor)`
    /// while keeping the relative order of events that share both.
    pub fn from_events(processors: usize, horizon: Tick, mut events: Vec<TraceEvent>) -> Self {
        events.sort_by_key(|e| (e.tick, e.processor));
        Self {
            horizon,
            processors,
            events,
        }
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Reconstructs execution runs; copies still running at the horizon are
    /// closed there.
    pub fn runs(&self) -> Vec<ExecRun> {
        let mut open: BTreeMap<(usize, JobKey, Role), Tick> = BTreeMap::new();
        let mut runs = Vec::new();
        for e in &self.events {
            let slot = (e.processor, e.job, e.role);
            match e.kind {
                EventKind::Start | EventKind::Resume => {
                    open.insert(slot, e.tick);
                }
                EventKind::Preempt | EventKind::Complete | EventKind::Abort | EventKind::Miss => {
                    if let Some(start) = open.remove(&slot) {
                        if e.tick > start {
                            runs.push(ExecRun {
                                processor: e.processor,
                                job: e.job,
                                role: e.role,
                                interval: Interval::new(start, e.tick),
                            });
                        }
                    }
                }
                _ => {}
            }
        }
        for ((processor, job, role), start) in open {
            if self.horizon > start {
                runs.push(ExecRun {
                    processor,
                    job,
                    role,
                    interval: Interval::new(start, self.horizon),
                });
            }
        }
        runs.sort_by_key(|r| (r.interval.start, r.processor));
        runs
    }

    /// Executed ticks per processor.
    pub fn busy_ticks(&self) -> Vec<Tick> {
        let mut busy = vec![0; self.processors];
        for run in self.runs() {
            busy[run.processor] += run.interval.len();
        }
        busy
    }

    pub fn executed_ticks(&self, job: JobKey, role: Role) -> Tick {
        self.runs()
            .iter()
            .filter(|r| r.job == job && r.role == role)
            .map(|r| r.interval.len())
            .sum()
    }
}
