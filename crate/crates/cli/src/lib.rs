//! `ftsched` command line.
//!
//! Exit codes: 0 success, 1 infeasible or rejected, 2 invariant or
//! verification failure, 3 usage or parse error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use ftsched::edf::exact_schedulable;
use ftsched::io;
use ftsched::oracle::dbf_schedulable;
use ftsched::ratio::{format_ratio, parse_ratio};
use ftsched::sasa::{self, AssignError, Assignment, Entry};
use ftsched::sim::{self, SimError, SweepReport};
use ftsched::taskmodel::{generate, total_utilization, GenerateError, ModelError, DEFAULT_HORIZON_CAP};
use ftsched::{Mode, SimConfig, Task, TaskSet, Tick, Util};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;
pub const EXIT_USAGE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "ftsched",
    version,
    about = "Fault-tolerant partitioned EDF scheduling simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Algo {
    Sasa,
    Ff,
    Bf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Partitioned,
    Ft,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Partitioned => Mode::Partitioned,
            ModeArg::Ft => Mode::Ft,
        }
    }
}

fn ratio_arg(text: &str) -> Result<Util, String> {
    parse_ratio(text).map_err(|e| e.to_string())
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a random task set.
    Gen {
        #[arg(long)]
        count: usize,
        /// Total utilization, as num/den or a decimal.
        #[arg(long, value_parser = ratio_arg)]
        util: Util,
        /// Comma-separated period pool.
        #[arg(long, value_delimiter = ',', required = true)]
        periods: Vec<Tick>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign a task set to processors.
    Partition {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        procs: usize,
        #[arg(long, value_parser = ratio_arg, default_value = "1")]
        uth: Util,
        #[arg(long, value_enum, default_value = "sasa")]
        algo: Algo,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one simulation.
    Simulate {
        #[arg(long = "in")]
        input: PathBuf,
        /// Defaults to the scenario's processor count.
        #[arg(long)]
        procs: Option<usize>,
        /// Defaults to the scenario's threshold, else 1.
        #[arg(long, value_parser = ratio_arg)]
        uth: Option<Util>,
        #[arg(long, value_enum, default_value = "partitioned")]
        mode: ModeArg,
        /// Defaults to one hyperperiod.
        #[arg(long)]
        horizon: Option<Tick>,
        #[arg(long, value_parser = ratio_arg, default_value = "1")]
        backup_ratio: Util,
        #[arg(long)]
        faults: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        gantt: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Replay every single permanent processor fault.
    Sweep {
        #[arg(long = "in", required_unless_present = "table")]
        input: Option<PathBuf>,
        #[arg(long, required_unless_present = "table")]
        procs: Option<usize>,
        #[arg(long, value_parser = ratio_arg, default_value = "1")]
        uth: Util,
        #[arg(long, value_enum, default_value = "ft")]
        mode: ModeArg,
        #[arg(long)]
        horizon: Option<Tick>,
        #[arg(long, value_parser = ratio_arg, default_value = "1")]
        backup_ratio: Util,
        /// Sweep a stored reservation table instead of a task set.
        #[arg(long, conflicts_with = "input")]
        table: Option<PathBuf>,
    },
    /// Partition with SASA and cross-check schedulability per processor.
    Check {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        procs: usize,
        #[arg(long, value_parser = ratio_arg, default_value = "1")]
        uth: Util,
    },
}

/// Exact per-processor schedulability test used by `check`.
pub type ExactTest = fn(&[Entry], Tick) -> Result<bool, ModelError>;

struct Failure {
    code: i32,
    message: String,
}

fn fail(code: i32, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

type Outcome = Result<String, Failure>;

/// Runs the command line with the production engine.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, out, err, exact_schedulable)
}

/// Runs the command line with `exact` as the engine's schedulability test.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write, exact: ExactTest) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let (code, text, is_err) = match dispatch(cli.command, exact) {
        Ok(summary) => (EXIT_OK, summary, false),
        Err(f) if f.code == EXIT_USAGE => (f.code, format!("error: {}\n", f.message), true),
        Err(f) => (f.code, f.message, false),
    };
    let sink: &mut dyn Write = if is_err { err } else { out };
    let _ = sink.write_all(text.as_bytes());
    code
}

fn dispatch(command: Command, exact: ExactTest) -> Outcome {
    match command {
        Command::Gen {
            count,
            util,
            periods,
            seed,
            out,
        } => gen(count, util, &periods, seed, &out),
        Command::Partition {
            input,
            procs,
            uth,
            algo,
            out,
        } => partition(&input, procs, uth, algo, out.as_deref()),
        Command::Simulate {
            input,
            procs,
            uth,
            mode,
            horizon,
            backup_ratio,
            faults,
            trace,
            gantt,
            metrics,
        } => {
            let scenario = faults.as_deref().map(read_scenario).transpose()?;
            let procs = procs.or(scenario.as_ref().and_then(|s| s.processors)).ok_or_else(|| {
                fail(
                    EXIT_USAGE,
                    "--procs is required when the scenario names no processor count",
                )
            })?;
            let uth = uth
                .or(scenario.as_ref().and_then(|s| s.threshold))
                .unwrap_or(Util::from_integer(1));
            let mut cfg = SimConfig::new(mode.into(), read_taskset(&input)?, procs);
            cfg.threshold = uth;
            cfg.horizon = horizon;
            cfg.backup_ratio = backup_ratio;
            cfg.faults = scenario.map(|s| s.events).unwrap_or_default();
            simulate(&cfg, trace.as_deref(), gantt.as_deref(), metrics.as_deref())
        }
        Command::Sweep {
            input,
            procs,
            uth,
            mode,
            horizon,
            backup_ratio,
            table,
        } => {
            if !matches!(mode, ModeArg::Ft) {
                return Err(fail(EXIT_USAGE, "sweep needs --mode ft"));
            }
            let report = match (table, input, procs) {
                (Some(path), _, _) => {
                    let (table, stored) = io::parse_table(&read(&path)?).map_err(|e| parse_failure(&path, e))?;
                    sim::sweep_table(&table, horizon.unwrap_or(stored), sim::DEFAULT_SWEEP_CAP).map_err(sim_failure)?
                }
                (None, Some(input), Some(procs)) => {
                    let mut cfg = SimConfig::new(Mode::Ft, read_taskset(&input)?, procs);
                    cfg.threshold = uth;
                    cfg.horizon = horizon;
                    cfg.backup_ratio = backup_ratio;
                    sim::sweep_single_faults(&cfg).map_err(sim_failure)?
                }
                _ => return Err(fail(EXIT_USAGE, "sweep needs --in and --procs, or --table")),
            };
            sweep_summary(&report)
        }
        Command::Check { input, procs, uth } => check(&read_taskset(&input)?, procs, uth, exact),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", path.display())))
}

fn parse_failure(path: &Path, e: io::IoError) -> Failure {
    fail(EXIT_USAGE, format!("{}: {e}", path.display()))
}

fn read_taskset(path: &Path) -> Result<TaskSet, Failure> {
    io::parse_taskset(&read(path)?).map_err(|e| parse_failure(path, e))
}

fn read_scenario(path: &Path) -> Result<io::Scenario, Failure> {
    io::parse_scenario(&read(path)?).map_err(|e| parse_failure(path, e))
}

fn assign_failure(e: AssignError) -> Failure {
    match e {
        AssignError::Infeasible { task_id } => fail(
            EXIT_INFEASIBLE,
            format!("infeasible: task {task_id} fits on no processor\n"),
        ),
        other => fail(EXIT_USAGE, other.to_string()),
    }
}

fn sim_failure(e: SimError) -> Failure {
    match e {
        SimError::Assign(a) => assign_failure(a),
        other => fail(EXIT_USAGE, other.to_string()),
    }
}

fn gen(count: usize, util: Util, periods: &[Tick], seed: u64, out: &Path) -> Outcome {
    let set = generate(count, util, periods, seed).map_err(|e| match e {
        GenerateError::InvalidParams(_) => fail(EXIT_USAGE, e.to_string()),
        GenerateError::Exhausted(_) => fail(EXIT_INFEASIBLE, format!("{e}\n")),
    })?;
    write(out, &io::serialize_taskset(&set))?;
    Ok(format!(
        "wrote {} tasks to {}\ntotal utilization {}\n",
        set.len(),
        out.display(),
        format_ratio(&total_utilization(&set))
    ))
}

fn describe(assignment: &Assignment) -> String {
    let mut text = String::new();
    for (p, bin) in assignment.bins.iter().enumerate() {
        let names: Vec<String> = bin
            .iter()
            .map(|e| match e {
                Entry::Task(t) => format!("T{}", t.id),
                Entry::Portion(_) => format!(
                    "T{}.{}",
                    e.task_id(),
                    u8::from(e.segment() == ftsched::Segment::Part2) + 1
                ),
            })
            .collect();
        let _ = writeln!(
            text,
            "P{p} U={} {}",
            format_ratio(&assignment.utilization(p)),
            names.join(" ")
        );
    }
    let _ = writeln!(text, "splits {}", assignment.split_count());
    text
}

fn partition(input: &Path, procs: usize, uth: Util, algo: Algo, out: Option<&Path>) -> Outcome {
    let set = read_taskset(input)?;
    let result = match algo {
        Algo::Sasa => sasa::assign(&set, procs, uth),
        Algo::Ff => sasa::assign_first_fit(&set, procs, uth),
        Algo::Bf => sasa::assign_best_fit(&set, procs, uth),
    };
    let assignment = result.map_err(assign_failure)?;
    if let Some(path) = out {
        write(path, &io::serialize_assignment(&assignment))?;
    }
    Ok(describe(&assignment))
}

fn simulate(cfg: &SimConfig, trace: Option<&Path>, gantt: Option<&Path>, metrics: Option<&Path>) -> Outcome {
    let run = sim::execute(cfg).map_err(sim_failure)?;
    if let Some(path) = trace {
        write(path, &io::serialize_trace(&run.trace))?;
    }
    if let Some(path) = gantt {
        write(path, &io::render_gantt(&run.trace, &run.assignment))?;
    }
    if let Some(path) = metrics {
        write(path, &io::serialize_metrics(&run.metrics))?;
    }
    let m = &run.metrics;
    let mut text = describe(&run.assignment);
    let _ = writeln!(text, "horizon {}", m.horizon);
    let _ = writeln!(
        text,
        "committed {} rejected {} unprotected {}",
        m.committed_jobs, m.rejected_jobs, m.unprotected_jobs
    );
    let _ = writeln!(
        text,
        "misses={} protected_misses={}",
        m.deadline_misses, m.protected_misses
    );
    let _ = writeln!(text, "recoveries={} backup_ticks={}", m.recoveries, m.backup_ticks);
    let busy: Vec<String> = m.busy_fraction.iter().map(format_ratio).collect();
    let _ = writeln!(text, "busy {}", busy.join(" "));
    let _ = writeln!(
        text,
        "overloaded backups {}/{}",
        m.overloaded_reservations, m.backup_reservations
    );
    if m.protected_misses > 0 {
        return Err(fail(EXIT_VERIFY, text));
    }
    Ok(text)
}

fn sweep_summary(report: &SweepReport) -> Outcome {
    let mut text = String::new();
    if !report.unprotected.is_empty() {
        let names: Vec<String> = report.unprotected.iter().map(|k| k.to_string()).collect();
        let _ = writeln!(text, "unprotected (excluded): {}", names.join(" "));
    }
    match report.worst() {
        None => {
            let _ = writeln!(text, "sweep clean: {} fault replays", report.runs);
            Ok(text)
        }
        Some(w) => {
            let missed: Vec<String> = w.missed.iter().map(|k| k.to_string()).collect();
            let _ = writeln!(
                text,
                "sweep failed: {} of {} fault points miss protected deadlines",
                report.failures.len(),
                report.runs
            );
            let _ = writeln!(
                text,
                "worst: processor {} tick {} misses {}",
                w.processor,
                w.tick,
                missed.join(" ")
            );
            Err(fail(EXIT_VERIFY, text))
        }
    }
}

fn check(set: &TaskSet, procs: usize, uth: Util, exact: ExactTest) -> Outcome {
    let assignment = sasa::assign(set, procs, uth).map_err(assign_failure)?;
    let mut text = String::new();
    let (mut unschedulable, mut disagree) = (false, false);
    for (p, bin) in assignment.bins.iter().enumerate() {
        let engine = exact(bin, DEFAULT_HORIZON_CAP).map_err(|e| fail(EXIT_USAGE, e.to_string()))?;
        let whole: Option<Vec<Task>> = bin
            .iter()
            .map(|e| match e {
                Entry::Task(t) => Some(*t),
                Entry::Portion(_) => None,
            })
            .collect();
        let oracle = match whole {
            Some(tasks) if tasks.iter().all(|t| t.phase == 0) => Some(
                dbf_schedulable(&tasks, DEFAULT_HORIZON_CAP)
                    .map_err(|e| fail(EXIT_USAGE, e.to_string()))?
                    .schedulable,
            ),
            _ => None,
        };
        let verdict = |b: bool| if b { "schedulable" } else { "unschedulable" };
        let oracle_text = oracle.map_or("not applicable", verdict);
        let _ = writeln!(text, "P{p}: engine {}, oracle {oracle_text}", verdict(engine));
        unschedulable |= !engine;
        disagree |= oracle.is_some_and(|o| o != engine);
    }
    if disagree {
        text.push_str("engine and oracle disagree\n");
        return Err(fail(EXIT_VERIFY, text));
    }
    if unschedulable {
        return Err(fail(EXIT_INFEASIBLE, text));
    }
    Ok(text)
}
