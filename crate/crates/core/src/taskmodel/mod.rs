//! Periodic task model.
//!
//! Time is measured in integer ticks and utilizations are exact rationals, so
//! every threshold comparison made by the partitioners is exact.

mod generate;

pub use generate::{generate, GenerateError};

use std::cmp::Ordering;
use std::fmt;

use num_integer::Integer;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A point or a duration on the discrete time line.
pub type Tick = u64;

/// Task identifier, unique within a [`TaskSet`].
pub type TaskId = u32;

/// Exact utilization value.
pub type Util = num_rational::Ratio<i128>;

/// Default cap on the hyperperiod / simulation horizon.
pub const DEFAULT_HORIZON_CAP: Tick = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("task {id}: {rule}")]
    InvalidTask { id: TaskId, rule: &'static str },
    #[error("duplicate task id {0}")]
    DuplicateId(TaskId),
    #[error("task set is empty")]
    EmptySet,
    #[error("hyperperiod exceeds the horizon cap of {cap} ticks (instance too large for exact analysis)")]
    HorizonCapExceeded { cap: Tick },
}

/// A periodic task with a relative deadline and a release offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub period: Tick,
    pub wcet: Tick,
    pub deadline: Tick,
    pub phase: Tick,
}

impl Task {
    /// Implicit-deadline task released at time zero.
    pub fn new(id: TaskId, period: Tick, wcet: Tick) -> Result<Self, ModelError> {
        Self {
            id,
            period,
            wcet,
            deadline: period,
            phase: 0,
        }
        .validated()
    }

    pub fn with_deadline(mut self, deadline: Tick) -> Result<Self, ModelError> {
        self.deadline = deadline;
        self.validated()
    }

    pub fn with_phase(mut self, phase: Tick) -> Self {
        self.phase = phase;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let rule = if self.wcet == 0 {
            "wcet must be positive"
        } else if self.wcet > self.deadline {
            "wcet must not exceed deadline"
        } else if self.deadline > self.period {
            "deadline must not exceed period"
        } else {
            return Ok(());
        };
        Err(ModelError::InvalidTask { id: self.id, rule })
    }

    fn validated(self) -> Result<Self, ModelError> {
        self.validate().map(|()| self)
    }

    pub fn utilization(&self) -> Util {
        utilization(self)
    }

    /// The `index`-th job of this task.
    pub fn job(&self, index: u64) -> Job {
        let release = self.phase + index * self.period;
        Job {
            task_id: self.id,
            index,
            segment: Segment::Whole,
            release,
            abs_deadline: release + self.deadline,
            wcet: self.wcet,
        }
    }
}

/// A non-empty, named collection of tasks with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSet {
    pub name: String,
    tasks: Vec<Task>,
}

impl TaskSet {
    pub fn new(name: impl Into<String>, tasks: Vec<Task>) -> Result<Self, ModelError> {
        if tasks.is_empty() {
            return Err(ModelError::EmptySet);
        }
        let mut seen = std::collections::BTreeSet::new();
        for task in &tasks {
            task.validate()?;
            if !seen.insert(task.id) {
                return Err(ModelError::DuplicateId(task.id));
            }
        }
        Ok(Self {
            name: name.into(),
            tasks,
        })
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn get(&self, id: TaskId) -> Option<&Task> {
        self.tasks.iter().find(|t| t.id == id)
    }
}

/// Which piece of a task a job executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Whole,
    Part1,
    Part2,
}

/// Identifies one schedulable unit: a job of a task, or one portion of a job
/// of a split task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JobKey {
    pub task_id: TaskId,
    pub index: u64,
    pub segment: Segment,
}

impl fmt::Display for JobKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}#{}", self.task_id, self.index)?;
        match self.segment {
            Segment::Whole => Ok(()),
            Segment::Part1 => f.write_str(".1"),
            Segment::Part2 => f.write_str(".2"),
        }
    }
}

/// A released instance of a task (or task portion).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Job {
    pub task_id: TaskId,
    pub index: u64,
    pub segment: Segment,
    pub release: Tick,
    pub abs_deadline: Tick,
    pub wcet: Tick,
}

impl Job {
    pub fn key(&self) -> JobKey {
        JobKey {
            task_id: self.task_id,
            index: self.index,
            segment: self.segment,
        }
    }

    /// EDF priority key; smaller runs first.
    pub fn priority(&self) -> (Tick, Tick, TaskId) {
        (self.abs_deadline, self.release, self.task_id)
    }
}

/// Half-open tick interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub start: Tick,
    pub end: Tick,
}

impl Interval {
    pub fn new(start: Tick, end: Tick) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> Tick {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, tick: Tick) -> bool {
        self.start <= tick && tick < self.end
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn covers(&self, other: &Interval) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

pub fn utilization(task: &Task) -> Util {
    Util::new(task.wcet as i128, task.period as i128)
}

pub fn total_utilization(set: &TaskSet) -> Util {
    set.tasks().iter().map(utilization).fold(Util::zero(), |a, b| a + b)
}

/// Least common multiple of all periods, refusing values above `cap`.
pub fn hyperperiod(set: &TaskSet, cap: Tick) -> Result<Tick, ModelError> {
    lcm_capped(set.tasks().iter().map(|t| t.period), cap)
}

pub(crate) fn lcm_capped(periods: impl IntoIterator<Item = Tick>, cap: Tick) -> Result<Tick, ModelError> {
    let mut acc: u128 = 1;
    for period in periods {
        acc = acc.lcm(&(period as u128));
        if acc > cap as u128 {
            return Err(ModelError::HorizonCapExceeded { cap });
        }
    }
    Ok(acc as Tick)
}

fn sort_key(task: &Task) -> (Tick, Tick, TaskId) {
    (task.period, task.wcet, task.id)
}

/// Orders tasks by ascending `(period, wcet, id)`.
pub fn sort_tasks(set: &TaskSet) -> TaskSet {
    let mut tasks = set.tasks.clone();
    tasks.sort_by_key(sort_key);
    TaskSet {
        name: set.name.clone(),
        tasks,
    }
}

/// Every job released strictly before `horizon`, ordered by release then task id.
pub fn release_jobs(set: &TaskSet, horizon: Tick) -> Vec<Job> {
    let mut jobs: Vec<Job> = set
        .tasks()
        .iter()
        .flat_map(|task| {
            (0..)
                .map(move |k| task.job(k))
                .take_while(move |job| job.release < horizon)
        })
        .collect();
    jobs.sort_by(|a, b| match a.release.cmp(&b.release) {
        Ordering::Equal => (a.task_id, a.index).cmp(&(b.task_id, b.index)),
        other => other,
    });
    jobs
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(params: &[(Tick, Tick)]) -> TaskSet {
        let tasks = params
            .iter()
            .enumerate()
            .map(|(i, &(c, t))| Task::new(i as TaskId + 1, t, c).unwrap())
            .collect();
        TaskSet::new("t", tasks).unwrap()
    }

    #[test]
    fn utilization_is_exact_ratio() {
        assert_eq!(utilization(&Task::new(1, 4, 1).unwrap()), Util::new(1, 4));
        assert_eq!(utilization(&Task::new(1, 4, 4).unwrap()), Util::from_integer(1));
        assert_eq!(utilization(&Task::new(1, 8, 3).unwrap()), Util::new(3, 8));
    }

    #[test]
    fn total_utilization_sums() {
        assert_eq!(total_utilization(&set(&[(1, 4), (1, 5), (2, 6)])), Util::new(47, 60));
        assert_eq!(total_utilization(&set(&[(2, 4)])), Util::new(1, 2));
        assert_eq!(total_utilization(&set(&[(4, 4), (4, 4)])), Util::from_integer(2));
    }

    #[test]
    fn hyperperiod_examples() {
        assert_eq!(hyperperiod(&set(&[(1, 4), (1, 6)]), 1000), Ok(12));
        assert_eq!(hyperperiod(&set(&[(1, 5)]), 1000), Ok(5));
        // 2^2 * 3 * 5
        assert_eq!(hyperperiod(&set(&[(1, 4), (1, 6), (1, 10)]), 1000), Ok(60));
        assert_eq!(
            hyperperiod(&set(&[(1, 7), (1, 11), (1, 13)]), 1000),
            Err(ModelError::HorizonCapExceeded { cap: 1000 })
        );
    }

    #[test]
    fn sort_examples() {
        let s = TaskSet::new("s", vec![Task::new(2, 6, 1).unwrap(), Task::new(1, 4, 1).unwrap()]).unwrap();
        let ids: Vec<_> = sort_tasks(&s).tasks().iter().map(|t| t.id).collect();
        assert_eq!(ids, [1, 2]);

        let s = TaskSet::new("s", vec![Task::new(5, 10, 3).unwrap(), Task::new(4, 10, 2).unwrap()]).unwrap();
        let ids: Vec<_> = sort_tasks(&s).tasks().iter().map(|t| t.id).collect();
        assert_eq!(ids, [4, 5]);

        let sorted = sort_tasks(&s);
        assert_eq!(sort_tasks(&sorted), sorted);
    }

    #[test]
    fn release_examples() {
        let s = set(&[(1, 4)]);
        let rel: Vec<_> = release_jobs(&s, 12).iter().map(|j| j.release).collect();
        assert_eq!(rel, [0, 4, 8]);

        let s = TaskSet::new("p", vec![Task::new(1, 5, 1).unwrap().with_phase(3)]).unwrap();
        let jobs = release_jobs(&s, 5);
        assert_eq!(jobs.len(), 1);
        assert_eq!((jobs[0].release, jobs[0].abs_deadline), (3, 8));

        assert_eq!(release_jobs(&set(&[(1, 4), (1, 6)]), 12).len(), 5);
    }

    #[test]
    fn invalid_tasks_are_rejected() {
        assert!(matches!(Task::new(3, 4, 5), Err(ModelError::InvalidTask { id: 3, .. })));
        assert!(Task::new(3, 4, 0).is_err());
        assert!(Task::new(3, 4, 2).unwrap().with_deadline(5).is_err());
        assert!(Task::new(3, 4, 2).unwrap().with_deadline(1).is_err());
        let t = Task::new(1, 4, 1).unwrap();
        assert_eq!(TaskSet::new("d", vec![t, t]), Err(ModelError::DuplicateId(1)));
        assert_eq!(TaskSet::new("e", vec![]), Err(ModelError::EmptySet));
    }

    fn arb_task() -> impl Strategy<Value = (Tick, Tick, Tick, Tick)> {
        (1..40u64).prop_flat_map(|period| {
            (Just(period), 1..=period)
                .prop_flat_map(|(period, deadline)| (Just(period), 1..=deadline, Just(deadline), 0..period))
        })
    }

    fn arb_set() -> impl Strategy<Value = TaskSet> {
        prop::collection::vec(arb_task(), 1..6).prop_map(|raw| {
            let tasks = raw
                .into_iter()
                .enumerate()
                .map(|(i, (t, c, d, p))| {
                    Task::new(i as TaskId, t, c)
                        .unwrap()
                        .with_deadline(d)
                        .unwrap()
                        .with_phase(p)
                })
                .collect();
            TaskSet::new("arb", tasks).unwrap()
        })
    }

    proptest! {
        #[test]
        fn utilization_times_period_is_wcet(set in arb_set()) {
            for task in set.tasks() {
                prop_assert_eq!(utilization(task) * Util::from_integer(task.period as i128),
                                Util::from_integer(task.wcet as i128));
            }
        }

        #[test]
        fn hyperperiod_divisible_by_periods(set in arb_set()) {
            let h = hyperperiod(&set, u64::MAX).unwrap();
            for task in set.tasks() {
                prop_assert_eq!(h % task.period, 0);
            }
        }

        #[test]
        fn sort_is_a_sorted_permutation(set in arb_set()) {
            let sorted = sort_tasks(&set);
            let mut a = set.tasks().to_vec();
            let mut b = sorted.tasks().to_vec();
            a.sort_by_key(|t| t.id);
            b.sort_by_key(|t| t.id);
            prop_assert_eq!(a, b);
            prop_assert!(sorted.tasks().windows(2).all(|w| sort_key(&w[0]) <= sort_key(&w[1])));
        }

        #[test]
        fn releases_are_periodic(set in arb_set(), horizon in 1..200u64) {
            let jobs = release_jobs(&set, horizon);
            for task in set.tasks() {
                let rel: Vec<_> = jobs.iter().filter(|j| j.task_id == task.id).map(|j| j.release).collect();
                let expected = if horizon > task.phase { (horizon - task.phase).div_ceil(task.period) } else { 0 };
                prop_assert_eq!(rel.len() as u64, expected);
                prop_assert!(rel.windows(2).all(|w| w[1] - w[0] == task.period));
            }
            prop_assert!(jobs.windows(2).all(|w| (w[0].release, w[0].task_id) <= (w[1].release, w[1].task_id)));
        }
    }
}
