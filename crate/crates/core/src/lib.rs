//! Fault-tolerant real-time scheduling on identical multiprocessors.
//!
//! Periodic tasks are partitioned with sorted sequential assignment (a task
//! that fits nowhere is split across two processors), executed under
//! per-processor EDF, and protected with primary-backup copies whose backup
//! slots may be overloaded. A deterministic tick simulator ties the pieces
//! together and injects processor faults.

pub mod edf;
pub mod io;
pub mod oracle;
pub mod pbft;
pub mod ratio;
pub mod sasa;
pub mod sim;
pub mod taskmodel;

pub use edf::{EventKind, Role, ScheduleTrace, TraceEvent};
pub use pbft::{FaultEvent, FaultKind, ReservationTable};
pub use sasa::{Assignment, Entry, Portion};
pub use sim::{Metrics, Mode, SimConfig};
pub use taskmodel::{Interval, Job, JobKey, Segment, Task, TaskId, TaskSet, Tick, Util};
