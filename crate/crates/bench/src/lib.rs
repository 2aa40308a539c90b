//! Fixtures shared by the benchmarks.

use ftsched::taskmodel::{generate, TaskSet, Util};

pub const PERIODS: [u64; 6] = [4, 5, 8, 10, 20, 40];

/// A seeded task set loading `processors` to 85% on average.
pub fn fixture(tasks: usize, processors: usize, seed: u64) -> TaskSet {
    let target = Util::new(processors as i128 * 85, 100).min(Util::from_integer(tasks as i128));
    generate(tasks, target, &PERIODS, seed).expect("fixture parameters are feasible")
}
