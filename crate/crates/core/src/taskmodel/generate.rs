//! Seeded task-set generation using UUniFast budget splitting.

use num_traits::Signed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{total_utilization, Task, TaskId, TaskSet, Tick, Util};

const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerateError {
    #[error("invalid generator parameters: {0}")]
    InvalidParams(&'static str),
    #[error("no valid task set after {0} attempts; target utilization is infeasible for these periods")]
    Exhausted(usize),
}

/// Draws `count` implicit-deadline tasks whose utilizations sum to
/// `target` up to integer rounding.
///
/// When the rounded total strays more than `1/min(periods)` from `target`,
/// wcets are nudged by one tick toward it; a draw that cannot be brought
/// within that bound, or whose rounded wcet exceeds its period, is redrawn.
pub fn generate(count: usize, target: Util, periods: &[Tick], seed: u64) -> Result<TaskSet, GenerateError> {
    if count == 0 {
        return Err(GenerateError::InvalidParams("count must be at least 1"));
    }
    if !target.is_positive() || target > Util::from_integer(count as i128) {
        return Err(GenerateError::InvalidParams(
            "target utilization must lie in (0, count]",
        ));
    }
    if periods.is_empty() || periods.contains(&0) {
        return Err(GenerateError::InvalidParams(
            "period choices must be non-empty and positive",
        ));
    }
    let mut choices = periods.to_vec();
    choices.sort_unstable();
    choices.dedup();
    let tolerance = Util::new(1, choices[0] as i128);
    let target_f = *target.numer() as f64 / *target.denom() as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let Some(mut tasks) = draw(&mut rng, count, target_f, &choices) else {
            continue;
        };
        if !nudge(&mut tasks, target, tolerance) {
            continue;
        }
        let set = TaskSet::new(format!("gen-s{seed}-n{count}"), tasks).expect("generated tasks are valid");
        debug_assert!((total_utilization(&set) - target).abs() <= tolerance);
        return Ok(set);
    }
    Err(GenerateError::Exhausted(MAX_ATTEMPTS))
}

/// Moves wcets one tick at a time, in task order, until the total lies
/// within `tolerance` of `target`. False if no task can move further.
fn nudge(tasks: &mut [Task], target: Util, tolerance: Util) -> bool {
    let mut error: Util = tasks.iter().map(Task::utilization).sum::<Util>() - target;
    loop {
        if error.abs() <= tolerance {
            return true;
        }
        let mut moved = false;
        for t in tasks.iter_mut() {
            let step = Util::new(1, t.period as i128);
            if error > tolerance && t.wcet > 1 {
                t.wcet -= 1;
                error -= step;
                moved = true;
            } else if error < -tolerance && t.wcet < t.period {
                t.wcet += 1;
                error += step;
                moved = true;
            }
            if error.abs() <= tolerance {
                return true;
            }
        }
        if !moved {
            return false;
        }
    }
}

fn uunifast<R: Rng>(rng: &mut R, count: usize, total: f64) -> Vec<f64> {
    let mut utils = Vec::with_capacity(count);
    let mut remaining = total;
    for i in 1..count {
        let next = remaining * rng.gen::<f64>().powf(1.0 / (count - i) as f64);
        utils.push(remaining - next);
        remaining = next;
    }
    utils.push(remaining);
    utils
}

fn draw<R: Rng>(rng: &mut R, count: usize, total: f64, choices: &[Tick]) -> Option<Vec<Task>> {
    let utils = uunifast(rng, count, total);
    let mut tasks = Vec::with_capacity(count);
    for (i, u) in utils.into_iter().enumerate() {
        let period = choices[rng.gen_range(0..choices.len())];
        let wcet = ((u * period as f64).round() as Tick).max(1);
        if wcet > period {
            return None;
        }
        tasks.push(Task::new(i as TaskId + 1, period, wcet).ok()?);
    }
    Some(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_task_takes_whole_budget() {
        let set = generate(1, Util::new(1, 2), &[10], 42).unwrap();
        assert_eq!(set.len(), 1);
        let t = set.tasks()[0];
        assert_eq!((t.wcet, t.period, t.deadline, t.phase), (5, 10, 10, 0));
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate(6, Util::new(5, 2), &[4, 5, 6, 10], 99).unwrap();
        let b = generate(6, Util::new(5, 2), &[4, 5, 6, 10], 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn total_within_rounding_bound() {
        let set = generate(4, Util::new(3, 2), &[4, 5, 6, 10], 7).unwrap();
        assert_eq!(set.len(), 4);
        let err = (total_utilization(&set) - Util::new(3, 2)).abs();
        assert!(
            err <= Util::new(1, 4),
            "total {} off by {}",
            total_utilization(&set),
            err
        );
    }

    #[test]
    fn rejects_bad_params() {
        assert!(matches!(
            generate(0, Util::new(1, 2), &[4], 1),
            Err(GenerateError::InvalidParams(_))
        ));
        assert!(matches!(
            generate(2, Util::from_integer(3), &[4], 1),
            Err(GenerateError::InvalidParams(_))
        ));
        assert!(matches!(
            generate(2, Util::new(1, 2), &[], 1),
            Err(GenerateError::InvalidParams(_))
        ));
    }

    #[test]
    fn infeasible_target_exhausts() {
        // Forty tasks each need at least 1/2 on period 2, far above 1/10.
        assert_eq!(
            generate(40, Util::new(1, 10), &[2], 3),
            Err(GenerateError::Exhausted(MAX_ATTEMPTS))
        );
    }

    #[test]
    fn wcet_within_period_over_many_seeds() {
        for seed in 0..200 {
            let set = generate(8, Util::new(7, 2), &[4, 5, 8, 10, 20], seed).unwrap();
            assert!(set.tasks().iter().all(|t| 1 <= t.wcet && t.wcet <= t.period));
        }
    }
}
