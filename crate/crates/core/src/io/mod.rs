//! Document formats: JSON task sets, fault scenarios, assignments, metrics
//! and reservation tables; CSV traces; SVG Gantt charts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edf::{CopyLabel, EventKind, ScheduleTrace, TraceEvent};
use crate::pbft::{Commitment, FaultEvent, ReservationTable, TableViolation};
use crate::sasa::Assignment;
use crate::sim::Metrics;
use crate::taskmodel::{Interval, JobKey, ModelError, Task, TaskId, TaskSet, Tick, Util};

mod gantt;

pub use gantt::render_gantt;

pub const TRACE_HEADER: &str = "tick,processor,task_id,job_index,copy,event";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("reservation table: {0}")]
    Table(#[from] TableViolation),
    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },
}

impl From<serde_json::Error> for IoError {
    fn from(e: serde_json::Error) -> Self {
        IoError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskDoc {
    id: TaskId,
    period: Tick,
    wcet: Tick,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    deadline: Option<Tick>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phase: Option<Tick>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskSetDoc {
    #[serde(default)]
    name: String,
    tasks: Vec<TaskDoc>,
}

/// Parses and validates a task-set document. Missing deadlines default to
/// the period and missing phases to zero.
pub fn parse_taskset(text: &str) -> Result<TaskSet, IoError> {
    let doc: TaskSetDoc = serde_json::from_str(text)?;
    let tasks = doc
        .tasks
        .into_iter()
        .map(|t| {
            let task = Task {
                id: t.id,
                period: t.period,
                wcet: t.wcet,
                deadline: t.deadline.unwrap_or(t.period),
                phase: t.phase.unwrap_or(0),
            };
            task.validate().map(|_| task)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TaskSet::new(doc.name, tasks)?)
}

pub fn serialize_taskset(set: &TaskSet) -> String {
    let doc = TaskSetDoc {
        name: set.name.clone(),
        tasks: set
            .tasks()
            .iter()
            .map(|t| TaskDoc {
                id: t.id,
                period: t.period,
                wcet: t.wcet,
                deadline: Some(t.deadline),
                phase: Some(t.phase),
            })
            .collect(),
    };
    to_json(&doc)
}

/// Fault scenario with optional platform defaults.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub processors: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_ratio")]
    pub threshold: Option<Util>,
    pub events: Vec<FaultEvent>,
}

mod opt_ratio {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::ratio::serde_text;
    use crate::taskmodel::Util;

    #[derive(Serialize, Deserialize)]
    struct Wrapped(#[serde(with = "serde_text")] Util);

    pub fn serialize<S: Serializer>(value: &Option<Util>, serializer: S) -> Result<S::Ok, S::Error> {
        value.map(Wrapped).serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Option<Util>, D::Error> {
        Ok(Option::<Wrapped>::deserialize(deserializer)?.map(|w| w.0))
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, IoError> {
    Ok(serde_json::from_str(text)?)
}

pub fn serialize_scenario(scenario: &Scenario) -> String {
    to_json(scenario)
}

pub fn parse_assignment(text: &str) -> Result<Assignment, IoError> {
    Ok(serde_json::from_str(text)?)
}

pub fn serialize_assignment(assignment: &Assignment) -> String {
    to_json(assignment)
}

pub fn parse_metrics(text: &str) -> Result<Metrics, IoError> {
    Ok(serde_json::from_str(text)?)
}

pub fn serialize_metrics(metrics: &Metrics) -> String {
    to_json(metrics)
}

#[derive(Debug, Serialize, Deserialize)]
struct FootprintDoc {
    processor: usize,
    interval: Interval,
    job: JobKey,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableDoc {
    processors: usize,
    horizon: Tick,
    #[serde(default)]
    footprint: Vec<FootprintDoc>,
    commitments: Vec<Commitment>,
}

/// Parses a reservation-table document into the table and its horizon.
pub fn parse_table(text: &str) -> Result<(ReservationTable, Tick), IoError> {
    let doc: TableDoc = serde_json::from_str(text)?;
    let footprint = doc
        .footprint
        .into_iter()
        .map(|f| (f.processor, f.interval, f.job))
        .collect();
    Ok((
        ReservationTable::from_parts(doc.processors, footprint, doc.commitments)?,
        doc.horizon,
    ))
}

pub fn serialize_table(table: &ReservationTable, horizon: Tick) -> String {
    let doc = TableDoc {
        processors: table.processors(),
        horizon,
        footprint: table
            .footprint()
            .map(|(processor, interval, job)| FootprintDoc {
                processor,
                interval,
                job,
            })
            .collect(),
        commitments: table.commitments().cloned().collect(),
    };
    to_json(&doc)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("documents serialize");
    text.push('\n');
    text
}

/// One CSV row per event in trace order, LF line endings.
pub fn serialize_trace(trace: &ScheduleTrace) -> String {
    let mut out = String::with_capacity(32 * (trace.events().len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for e in trace.events() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.tick,
            e.processor,
            e.job.task_id,
            e.job.index,
            e.copy(),
            e.kind.as_str()
        ));
    }
    out
}

/// Inverse of [`serialize_trace`].
pub fn parse_trace(text: &str) -> Result<Vec<TraceEvent>, IoError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TRACE_HEADER => {}
        _ => {
            return Err(IoError::Trace {
                line: 1,
                message: "missing header".into(),
            })
        }
    }
    lines
        .map(|(i, line)| {
            let err = |message: String| IoError::Trace { line: i + 1, message };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(err(format!("expected 6 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<u64>().map_err(|e| err(format!("{s:?}: {e}")));
            let copy: CopyLabel = f[4].parse().map_err(err)?;
            Ok(TraceEvent {
                tick: num(f[0])?,
                processor: num(f[1])? as usize,
                job: JobKey {
                    task_id: num(f[2])? as TaskId,
                    index: num(f[3])?,
                    segment: copy.segment,
                },
                role: copy.role,
                kind: f[5].parse::<EventKind>().map_err(err)?,
            })
        })
        .collect()
}
