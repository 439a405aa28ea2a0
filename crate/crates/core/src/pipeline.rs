//! Shared helpers for the stage driver: task splits and demonstration
//! corpus generation.

use serde::{Deserialize, Serialize};

use crate::corpus::{TaskRecord, Trajectory};
use crate::error::Result;
use crate::gridworld::{sample_task, scripted_expert, Level, TaskSpec};

/// Task seeds ending in 0 or 5 are held out (a 80/20 split).
pub fn is_held_out(task_seed: u64) -> bool {
    task_seed % 5 == 0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub trajectories: usize,
    /// Relative share of single, two-subgoal and composite tasks.
    pub level_weights: [usize; 3],
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { trajectories: 200, level_weights: [1, 1, 1], seed: 0 }
    }
}

fn level_cycle(weights: [usize; 3]) -> Vec<Level> {
    let levels = [Level::SingleSubgoal, Level::TwoSubgoal, Level::CompositeLong];
    let mut out: Vec<Level> = levels.iter().zip(weights).flat_map(|(&l, w)| std::iter::repeat_n(l, w)).collect();
    if out.is_empty() {
        out = levels.to_vec();
    }
    out
}

/// Expert demonstrations on training-split tasks. Levels follow the
/// weights in a fixed cycle; task seeds count up from `seed * 10^6`.
pub fn generate_corpus(cfg: &DataConfig) -> Result<Vec<(TaskRecord, Trajectory)>> {
    let cycle = level_cycle(cfg.level_weights);
    let mut next = cfg.seed.wrapping_mul(1_000_000);
    let mut out = Vec::with_capacity(cfg.trajectories);
    for i in 0..cfg.trajectories {
        while is_held_out(next) {
            next += 1;
        }
        let task = sample_task(cycle[i % cycle.len()], next)?;
        next += 1;
        let (traj, boundaries) = scripted_expert(&task)?;
        out.push((TaskRecord { task, boundaries }, traj));
    }
    Ok(out)
}

/// `n` held-out tasks of one level.
pub fn held_out_tasks(level: Level, n: usize, seed: u64) -> Result<Vec<TaskSpec>> {
    let base = seed.wrapping_mul(1_000_000) + 500_000;
    let base = base - base % 5;
    (0..n as u64).map(|i| sample_task(level, base + 5 * i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_avoids_held_out_seeds_and_is_deterministic() {
        let cfg = DataConfig { trajectories: 12, ..DataConfig::default() };
        let a = generate_corpus(&cfg).unwrap();
        assert_eq!(a, generate_corpus(&cfg).unwrap());
        assert!(a.iter().all(|(r, _)| !is_held_out(r.task.seed)));
        assert_eq!(a.iter().filter(|(r, _)| r.task.level == Level::CompositeLong).count(), 4);
        let held = held_out_tasks(Level::CompositeLong, 3, 0).unwrap();
        assert!(held.iter().all(|t| is_held_out(t.seed)));
    }
}
