//! Partitioning of periodic tasks onto identical processors.
//!
//! [`assign`] is the sorted sequential assignment: tasks are sorted by
//! period, each one goes to the first processor whose utilization stays
//! within the threshold, and a task that fits nowhere is cut into two
//! portions placed on two different processors. [`assign_first_fit`] and
//! [`assign_best_fit`] are the classic bin-packing baselines; they neither
//! sort nor split.

use std::collections::BTreeMap;

use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ratio::format_ratio;
use crate::taskmodel::{sort_tasks, utilization, Segment, Task, TaskId, TaskSet, Tick, Util};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssignError {
    #[error("threshold {} outside (0, 1]", format_ratio(.0))]
    InvalidThreshold(Util),
    #[error("processor count must be at least 1")]
    NoProcessors,
    #[error("task {task_id} cannot be placed on any processor")]
    Infeasible { task_id: TaskId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SplitError {
    #[error("residual capacity holds less than one tick of the task")]
    SubTickResidual,
    #[error("a single-tick task cannot be split")]
    SingleTick,
    #[error("second portion exceeds the remaining capacity of processor {0}")]
    Part2Overflow(usize),
    #[error("portions must go to two processors in ascending order")]
    BadPair,
}

/// One half of a split task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Portion {
    pub parent_id: TaskId,
    pub part: Part,
    pub wcet: Tick,
    pub parent_wcet: Tick,
    pub period: Tick,
    pub deadline: Tick,
    pub phase: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Part {
    First,
    Second,
}

impl From<Part> for u8 {
    fn from(part: Part) -> u8 {
        match part {
            Part::First => 1,
            Part::Second => 2,
        }
    }
}

impl TryFrom<u8> for Part {
    type Error = String;
    fn try_from(value: u8) -> Result<Self, String> {
        match value {
            1 => Ok(Part::First),
            2 => Ok(Part::Second),
            other => Err(format!("portion part must be 1 or 2, got {other}")),
        }
    }
}

impl Portion {
    pub fn utilization(&self) -> Util {
        Util::new(self.wcet as i128, self.period as i128)
    }

    /// Wcet of the second portion of the parent task.
    pub fn part2_wcet(&self) -> Tick {
        match self.part {
            Part::First => self.parent_wcet - self.wcet,
            Part::Second => self.wcet,
        }
    }

    /// Relative time by which the first portion must complete so the second
    /// still fits before the parent deadline; also the latest relative
    /// release of the second portion.
    pub fn handoff(&self) -> Tick {
        self.deadline - self.part2_wcet()
    }
}

/// A bin item: a whole task or one portion of a split task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Entry {
    Task(Task),
    Portion(Portion),
}

impl Entry {
    pub fn task_id(&self) -> TaskId {
        match self {
            Entry::Task(t) => t.id,
            Entry::Portion(p) => p.parent_id,
        }
    }

    pub fn wcet(&self) -> Tick {
        match self {
            Entry::Task(t) => t.wcet,
            Entry::Portion(p) => p.wcet,
        }
    }

    pub fn period(&self) -> Tick {
        match self {
            Entry::Task(t) => t.period,
            Entry::Portion(p) => p.period,
        }
    }

    pub fn deadline(&self) -> Tick {
        match self {
            Entry::Task(t) => t.deadline,
            Entry::Portion(p) => p.deadline,
        }
    }

    pub fn phase(&self) -> Tick {
        match self {
            Entry::Task(t) => t.phase,
            Entry::Portion(p) => p.phase,
        }
    }

    pub fn segment(&self) -> Segment {
        match self {
            Entry::Task(_) => Segment::Whole,
            Entry::Portion(p) if p.part == Part::First => Segment::Part1,
            Entry::Portion(_) => Segment::Part2,
        }
    }

    pub fn utilization(&self) -> Util {
        match self {
            Entry::Task(t) => utilization(t),
            Entry::Portion(p) => p.utilization(),
        }
    }
}

/// Tasks and portions mapped onto `processor_count` processors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    #[serde(rename = "processors")]
    pub processor_count: usize,
    #[serde(with = "crate::ratio::serde_text")]
    pub threshold: Util,
    pub bins: Vec<Vec<Entry>>,
}

impl Assignment {
    pub fn empty(processor_count: usize, threshold: Util) -> Self {
        Self {
            processor_count,
            threshold,
            bins: vec![Vec::new(); processor_count],
        }
    }

    pub fn utilization(&self, processor: usize) -> Util {
        self.bins[processor]
            .iter()
            .map(Entry::utilization)
            .fold(Util::zero(), |a, b| a + b)
    }

    pub fn utilizations(&self) -> Vec<Util> {
        (0..self.bins.len()).map(|p| self.utilization(p)).collect()
    }

    pub fn max_utilization(&self) -> Util {
        self.utilizations().into_iter().max().unwrap_or_else(Util::zero)
    }

    pub fn split_count(&self) -> usize {
        self.entries()
            .filter(|(_, e)| matches!(e, Entry::Portion(p) if p.part == Part::First))
            .count()
    }

    /// `(processor, entry)` pairs in processor order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, &Entry)> {
        self.bins
            .iter()
            .enumerate()
            .flat_map(|(p, bin)| bin.iter().map(move |e| (p, e)))
    }

    /// Processor holding the given portion of a split task.
    pub fn portion_processor(&self, task_id: TaskId, part: Part) -> Option<usize> {
        self.entries().find_map(|(p, e)| match e {
            Entry::Portion(portion) if portion.parent_id == task_id && portion.part == part => Some(p),
            _ => None,
        })
    }

    pub fn portion(&self, task_id: TaskId, part: Part) -> Option<(usize, Portion)> {
        self.entries().find_map(|(p, e)| match e {
            Entry::Portion(portion) if portion.parent_id == task_id && portion.part == part => Some((p, *portion)),
            _ => None,
        })
    }
}

/// Spare capacity on one processor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slack {
    pub processor: usize,
    pub capacity: Util,
}

fn check_params(processor_count: usize, threshold: Util) -> Result<(), AssignError> {
    if processor_count == 0 {
        return Err(AssignError::NoProcessors);
    }
    if !threshold.is_positive() || threshold > Util::from_integer(1) {
        return Err(AssignError::InvalidThreshold(threshold));
    }
    Ok(())
}

/// Sorted sequential assignment with two-way splitting.
pub fn assign(set: &TaskSet, processor_count: usize, threshold: Util) -> Result<Assignment, AssignError> {
    assign_in_order(sort_tasks(set).tasks(), processor_count, threshold)
}

/// Sequential assignment with splitting over `tasks` in the order given.
pub fn assign_in_order(tasks: &[Task], processor_count: usize, threshold: Util) -> Result<Assignment, AssignError> {
    check_params(processor_count, threshold)?;
    let mut out = Assignment::empty(processor_count, threshold);
    let mut loads = vec![Util::zero(); processor_count];

    for task in tasks {
        let u = utilization(task);
        if let Some(p) = (0..processor_count).find(|&p| loads[p] + u <= threshold) {
            loads[p] += u;
            out.bins[p].push(Entry::Task(*task));
            continue;
        }

        let slack = |p: usize, loads: &[Util]| Slack {
            processor: p,
            capacity: threshold - loads[p],
        };
        let split = split_pairs(processor_count).find_map(|(lo, hi)| {
            split_task(task, slack(lo, &loads), slack(hi, &loads))
                .ok()
                .map(|s| (lo, hi, s))
        });
        let Some((lo, hi, (first, second))) = split else {
            return Err(AssignError::Infeasible { task_id: task.id });
        };
        loads[lo] += first.utilization();
        loads[hi] += second.utilization();
        out.bins[lo].push(Entry::Portion(first));
        out.bins[hi].push(Entry::Portion(second));
    }
    Ok(out)
}

/// Adjacent pairs left to right, then the remaining pairs lexicographically.
fn split_pairs(m: usize) -> impl Iterator<Item = (usize, usize)> {
    let adjacent = (0..m.saturating_sub(1)).map(|i| (i, i + 1));
    let rest = (0..m).flat_map(move |i| (i + 2..m).map(move |j| (i, j)));
    adjacent.chain(rest)
}

/// Cuts `task` so the first portion fills `low`'s spare capacity (in whole
/// ticks) and the remainder goes to `high`.
pub fn split_task(task: &Task, low: Slack, high: Slack) -> Result<(Portion, Portion), SplitError> {
    if low.processor >= high.processor {
        return Err(SplitError::BadPair);
    }
    if task.wcet < 2 {
        return Err(SplitError::SingleTick);
    }
    if !low.capacity.is_positive() {
        return Err(SplitError::SubTickResidual);
    }
    let fill = (low.capacity * Util::from_integer(task.period as i128))
        .floor()
        .to_integer()
        .to_u64()
        .unwrap_or(u64::MAX);
    if fill < 1 {
        return Err(SplitError::SubTickResidual);
    }
    let first_wcet = fill.clamp(1, task.wcet - 1);
    let portion = |part, wcet| Portion {
        parent_id: task.id,
        part,
        wcet,
        parent_wcet: task.wcet,
        period: task.period,
        deadline: task.deadline,
        phase: task.phase,
    };
    let first = portion(Part::First, first_wcet);
    let second = portion(Part::Second, task.wcet - first_wcet);
    if second.utilization() > high.capacity {
        return Err(SplitError::Part2Overflow(high.processor));
    }
    Ok((first, second))
}

/// First fit over the given order, no splitting.
pub fn assign_first_fit(set: &TaskSet, processor_count: usize, threshold: Util) -> Result<Assignment, AssignError> {
    pack(set, processor_count, threshold, |loads, u| {
        (0..loads.len()).find(|&p| loads[p] + u <= threshold)
    })
}

/// Best fit over the given order: the feasible processor left with the least
/// spare capacity wins, lowest index on ties. No splitting.
pub fn assign_best_fit(set: &TaskSet, processor_count: usize, threshold: Util) -> Result<Assignment, AssignError> {
    pack(set, processor_count, threshold, |loads, u| {
        (0..loads.len())
            .filter(|&p| loads[p] + u <= threshold)
            .min_by(|&a, &b| (threshold - loads[a]).cmp(&(threshold - loads[b])).then(a.cmp(&b)))
    })
}

fn pack(
    set: &TaskSet,
    processor_count: usize,
    threshold: Util,
    choose: impl Fn(&[Util], Util) -> Option<usize>,
) -> Result<Assignment, AssignError> {
    check_params(processor_count, threshold)?;
    let mut out = Assignment::empty(processor_count, threshold);
    let mut loads = vec![Util::zero(); processor_count];
    for task in set.tasks() {
        let u = utilization(task);
        let p = choose(&loads, u).ok_or(AssignError::Infeasible { task_id: task.id })?;
        loads[p] += u;
        out.bins[p].push(Entry::Task(*task));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("threshold {} outside (0, 1]", format_ratio(.0))]
    ThresholdOutOfRange(Util),
    #[error("{bins} bins recorded for {processors} processors")]
    BinCount { bins: usize, processors: usize },
    #[error("processor {processor} utilization {} exceeds threshold", format_ratio(.utilization))]
    OverThreshold { processor: usize, utilization: Util },
    #[error("task {0} placed more than once")]
    Duplicate(TaskId),
    #[error("task {0} has a missing or extra portion")]
    PortionCount(TaskId),
    #[error("both portions of task {0} are on the same processor")]
    PortionsShareProcessor(TaskId),
    #[error("first portion of task {0} is not on the lower-indexed processor")]
    PortionOrder(TaskId),
    #[error("portions of task {0} do not add up to the parent wcet")]
    WcetNotConserved(TaskId),
    #[error("portions of task {0} disagree on timing parameters")]
    PortionMismatch(TaskId),
}

/// Audits every assignment invariant; an empty result means the assignment is valid.
pub fn verify(assignment: &Assignment) -> Vec<Violation> {
    let mut report = Vec::new();
    let th = assignment.threshold;
    if !th.is_positive() || th > Util::from_integer(1) {
        report.push(Violation::ThresholdOutOfRange(th));
    }
    if assignment.bins.len() != assignment.processor_count {
        report.push(Violation::BinCount {
            bins: assignment.bins.len(),
            processors: assignment.processor_count,
        });
    }
    for (p, u) in assignment.utilizations().into_iter().enumerate() {
        if u > th {
            report.push(Violation::OverThreshold {
                processor: p,
                utilization: u,
            });
        }
    }

    let mut whole: BTreeMap<TaskId, usize> = BTreeMap::new();
    let mut portions: BTreeMap<TaskId, Vec<(usize, Portion)>> = BTreeMap::new();
    for (p, entry) in assignment.entries() {
        match entry {
            Entry::Task(t) => *whole.entry(t.id).or_default() += 1,
            Entry::Portion(portion) => portions.entry(portion.parent_id).or_default().push((p, *portion)),
        }
    }
    for (&id, &count) in &whole {
        if count > 1 || portions.contains_key(&id) {
            report.push(Violation::Duplicate(id));
        }
    }
    for (&id, parts) in &portions {
        let first: Vec<_> = parts.iter().filter(|(_, x)| x.part == Part::First).collect();
        let second: Vec<_> = parts.iter().filter(|(_, x)| x.part == Part::Second).collect();
        if first.len() != 1 || second.len() != 1 {
            report.push(Violation::PortionCount(id));
            continue;
        }
        let (lo, a) = first[0];
        let (hi, b) = second[0];
        if lo == hi {
            report.push(Violation::PortionsShareProcessor(id));
        } else if lo > hi {
            report.push(Violation::PortionOrder(id));
        }
        if a.wcet + b.wcet != a.parent_wcet || a.parent_wcet != b.parent_wcet {
            report.push(Violation::WcetNotConserved(id));
        }
        if (a.period, a.deadline, a.phase) != (b.period, b.deadline, b.phase) {
            report.push(Violation::PortionMismatch(id));
        }
    }
    report
}
