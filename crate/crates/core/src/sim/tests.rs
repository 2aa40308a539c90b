use super::*;
use crate::pbft::{FaultEvent, FaultKind};
use crate::taskmodel::{generate, sort_tasks, Task};

fn set(params: &[(Tick, Tick)]) -> TaskSet {
    let tasks = params
        .iter()
        .enumerate()
        .map(|(i, &(c, t))| Task::new(i as u32 + 1, t, c).unwrap())
        .collect();
    TaskSet::new("t", tasks).unwrap()
}

fn key(task_id: TaskId, index: u64) -> JobKey {
    JobKey {
        task_id,
        index,
        segment: Segment::Whole,
    }
}

#[test]
fn partitioned_four_task_example() {
    let cfg = SimConfig::new(Mode::Partitioned, set(&[(1, 4), (1, 5), (2, 6), (3, 8)]), 2);
    let (trace, m) = run(&cfg).unwrap();
    assert_eq!(m.horizon, 120);
    assert_eq!(m.deadline_misses, 0);
    assert_eq!(m.committed_jobs, 30 + 24 + 20 + 15);
    assert_eq!(m.rejected_jobs, 0);
    assert_eq!(m.backup_reservations, 0);
    assert_eq!(trace.count(crate::EventKind::Miss), 0);
    for (p, f) in m.busy_fraction.iter().enumerate() {
        assert_eq!(
            *f * Util::from_integer(120),
            Util::from_integer(m.busy_ticks[p] as i128)
        );
    }
    assert_eq!(m.busy_ticks, vec![94, 45]);
}

#[test]
fn ft_without_faults_frees_every_backup() {
    let cfg = SimConfig::new(Mode::Ft, set(&[(1, 4), (1, 5), (2, 6), (3, 8)]), 2);
    let r = execute(&cfg).unwrap();
    assert_eq!(r.metrics.recoveries, 0);
    assert_eq!(r.metrics.backup_ticks, 0);
    assert_eq!(r.metrics.live_backups, 0);
    assert_eq!(r.metrics.deadline_misses, 0);
    assert!(r.metrics.backup_reservations > 0);
    assert_eq!(
        r.metrics.backup_reservations + r.metrics.unprotected_jobs,
        r.metrics.committed_jobs
    );
}

fn two_lane() -> SimConfig {
    let mut cfg = SimConfig::new(Mode::Ft, set(&[(1, 4), (2, 8)]), 2);
    cfg.threshold = Util::new(1, 4);
    cfg
}

#[test]
fn ft_reservations_use_idle_ticks() {
    let r = execute(&two_lane()).unwrap();
    assert!(r.unprotected.is_empty());
    let table = r.table.unwrap();
    let slot = |k| {
        let c = table.commitment(&k).unwrap();
        (c.backup.processor, c.backup.interval)
    };
    assert_eq!(slot(key(1, 0)), (1, Interval::new(3, 4)));
    assert_eq!(slot(key(1, 1)), (1, Interval::new(7, 8)));
    assert_eq!(slot(key(2, 0)), (0, Interval::new(6, 8)));
    assert!(table.audit().is_empty());
}

#[test]
fn crash_at_zero_recovers_every_job_of_the_lane() {
    let mut cfg = two_lane();
    cfg.faults = vec![FaultEvent::permanent(0, 0)];
    let (trace, m) = run(&cfg).unwrap();
    assert_eq!(m.deadline_misses, 0);
    assert_eq!(m.recoveries, 2);
    assert_eq!(m.backup_ticks, 2);
    assert_eq!(trace.busy_ticks(), vec![0, 4]);
}

#[test]
fn transient_fault_recovers_the_corrupted_job() {
    let mut cfg = two_lane();
    cfg.faults = vec![FaultEvent::transient(0, 1)];
    let (_, m) = run(&cfg).unwrap();
    assert_eq!(m.deadline_misses, 0);
    assert_eq!(m.recoveries, 1);
    assert_eq!(m.backup_ticks, 2);
    assert_eq!(cfg.faults[0].kind, FaultKind::Transient);
}

#[test]
fn backup_ratio_scales_reservations() {
    let mut cfg = two_lane();
    cfg.backup_ratio = Util::new(1, 2);
    assert_eq!(cfg.backup_wcet(1), 1);
    assert_eq!(cfg.backup_wcet(3), 2);
    let table = execute(&cfg).unwrap().table.unwrap();
    assert_eq!(
        table.commitment(&key(2, 0)).unwrap().backup.interval,
        Interval::new(7, 8)
    );
}

#[test]
fn config_validation() {
    let mut cfg = two_lane();
    cfg.horizon = Some(0);
    assert!(matches!(run(&cfg), Err(SimError::Config(_))));
    let mut cfg = two_lane();
    cfg.backup_ratio = Util::new(3, 2);
    assert!(matches!(run(&cfg), Err(SimError::Config(_))));
    let mut cfg = two_lane();
    cfg.faults = vec![FaultEvent::permanent(0, 2)];
    assert!(matches!(run(&cfg), Err(SimError::Config(_))));
    let mut cfg = two_lane();
    cfg.horizon_cap = 4;
    assert!(matches!(run(&cfg), Err(SimError::Model(_))));
    let cfg = SimConfig::new(Mode::Partitioned, set(&[(3, 4), (3, 4)]), 1);
    assert!(matches!(run(&cfg), Err(SimError::Assign(_))));
}

#[test]
fn sweep_single_protected_job() {
    let cfg = SimConfig::new(Mode::Ft, set(&[(2, 8)]), 2);
    let report = sweep_single_faults(&cfg).unwrap();
    assert_eq!(report.runs, 16);
    assert!(report.is_clean());
    assert!(report.unprotected.is_empty());
}

#[test]
fn sweep_reports_unprotected_separately() {
    let cfg = SimConfig::new(Mode::Ft, set(&[(8, 8)]), 2);
    let report = sweep_single_faults(&cfg).unwrap();
    assert!(report.is_clean());
    assert_eq!(report.unprotected, vec![key(1, 0)]);
}

#[test]
fn sweep_guards() {
    let cfg = SimConfig::new(Mode::Partitioned, set(&[(2, 8)]), 2);
    assert!(matches!(sweep_single_faults(&cfg), Err(SimError::NotFt)));
    let mut cfg = SimConfig::new(Mode::Ft, set(&[(2, 8)]), 2);
    cfg.sweep_cap = 15;
    assert!(matches!(
        sweep_single_faults(&cfg),
        Err(SimError::SweepCap { runs: 16, cap: 15 })
    ));
}

#[test]
fn sweep_of_broken_table_finds_the_fault() {
    let table = ReservationTable::from_parts(
        2,
        vec![(0, Interval::new(0, 2), key(1, 0))],
        vec![crate::pbft::Commitment {
            job: Job {
                task_id: 1,
                index: 0,
                segment: Segment::Whole,
                release: 0,
                abs_deadline: 8,
                wcet: 2,
            },
            primary: crate::pbft::SlotReservation {
                processor: 0,
                interval: Interval::new(0, 2),
                job: key(1, 0),
                kind: crate::pbft::SlotKind::Primary,
                overload_group: None,
            },
            primary_runs: vec![Interval::new(0, 2)],
            backup: crate::pbft::SlotReservation {
                processor: 0,
                interval: Interval::new(6, 8),
                job: key(1, 0),
                kind: crate::pbft::SlotKind::Backup,
                overload_group: Some(0),
            },
            guards: crate::pbft::ProcSet::single(0),
            depends_on: None,
            state: crate::pbft::BackupState::Pending,
            corrupted: false,
        }],
    )
    .unwrap();
    let report = sweep_table(&table, 8, DEFAULT_SWEEP_CAP).unwrap();
    let worst = report.worst().unwrap();
    assert_eq!((worst.processor, worst.tick), (0, 0));
    assert_eq!(report.failures.len(), 2);
}

#[test]
fn split_set_survives_every_single_fault() {
    let mut cfg = SimConfig::new(Mode::Ft, set(&[(2, 10), (2, 10), (4, 10), (3, 10)]), 2);
    cfg.threshold = Util::new(3, 5);
    let r = execute(&cfg).unwrap();
    assert_eq!(r.assignment.split_count(), 1);
    assert!(sweep_single_faults(&cfg).unwrap().is_clean());
}

#[test]
fn runs_are_reproducible() {
    let ts = generate(5, Util::new(3, 2), &[4, 5, 8, 10], 3).unwrap();
    let mut cfg = SimConfig::new(Mode::Ft, ts, 3);
    cfg.faults = vec![FaultEvent::permanent(5, 1)];
    let a = run(&cfg).unwrap();
    let b = run(&cfg).unwrap();
    assert_eq!(a.0.events(), b.0.events());
    assert_eq!(a.1, b.1);
}

#[test]
fn compare_on_split_example() {
    let rows = compare_partitioners(&set(&[(4, 10), (5, 10), (8, 10), (3, 10)]), 2, Util::from_integer(1)).unwrap();
    assert_eq!(rows[0].algorithm, "sasa");
    assert!(rows[0].feasible);
    assert_eq!(rows[0].splits, 1);
    assert_eq!(rows[0].max_utilization, Some(Util::from_integer(1)));
    assert!(!rows[1].feasible);
    assert_eq!(rows[1].unplaced, Some(4));
}

#[test]
fn compare_single_task_agrees() {
    let rows = compare_partitioners(&set(&[(1, 4)]), 2, Util::from_integer(1)).unwrap();
    assert!(rows
        .iter()
        .all(|r| r.feasible && r.splits == 0 && r.max_utilization == Some(Util::new(1, 4))));
}

#[test]
fn sasa_dominates_sorted_first_fit() {
    for seed in 0..300 {
        let ts = generate(6, Util::new(5, 2), &[4, 5, 8, 10, 20], seed).unwrap();
        let sorted = sort_tasks(&ts);
        let ff = sasa::assign_first_fit(&sorted, 3, Util::from_integer(1));
        if ff.is_ok() {
            assert!(sasa::assign(&ts, 3, Util::from_integer(1)).is_ok(), "seed {seed}");
        }
    }
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]

    #[test]
    fn metrics_consistent_and_single_faults_safe(seed in 0u64..10_000, m in 2usize..4, p in 0usize..3, t in 0u64..40) {
        let Ok(ts) = generate(4, Util::new(m as i128 * 11, 20), &[4, 5, 8, 10, 20, 40], seed) else { return Ok(()) };
        let cfg = SimConfig::new(Mode::Ft, ts, m);
        let Ok(clean) = execute(&cfg) else { return Ok(()) };
        let m0 = &clean.metrics;
        proptest::prop_assert_eq!(m0.backup_reservations + m0.unprotected_jobs, m0.committed_jobs);
        for (b, f) in m0.busy_ticks.iter().zip(&m0.busy_fraction) {
            proptest::prop_assert_eq!(*f * Util::from_integer(m0.horizon as i128), Util::from_integer(*b as i128));
        }
        let mut faulted = cfg.clone();
        faulted.faults = vec![FaultEvent::permanent(t % m0.horizon, p % m)];
        let (_, m1) = run(&faulted).unwrap();
        proptest::prop_assert_eq!(m1.protected_misses, 0);
        proptest::prop_assert!(m1.recoveries >= m0.recoveries);
    }
}
