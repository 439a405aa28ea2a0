use std::collections::{HashSet, VecDeque};

use langskill::gridworld::{
    cell, sample_task, scripted_expert, Action, GridEnv, Level, Observation, Pose, Subgoal, TaskSpec,
    VIEW_SIZE,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Crops the full grid by rotating it so the agent faces up, then taking the
/// 7x7 block whose bottom-centre is the agent.
fn crop_oracle(env: &GridEnv) -> Observation {
    let w = env.width();
    let h = env.height();
    let p = env.pose();
    let mut full = vec![vec![[cell::WALL, 0, 0]; (w + 2 * 7) as usize]; (h + 2 * 7) as usize];
    for y in 0..h {
        for x in 0..w {
            full[(y + 7) as usize][(x + 7) as usize] = env.cell_at(x, y);
        }
    }
    // Rotate coordinates: count how many right turns bring `dir` to north.
    let rot = |dx: i32, dy: i32, times: u8| {
        let (mut a, mut b) = (dx, dy);
        for _ in 0..times {
            let t = a;
            a = -b;
            b = t;
        }
        (a, b)
    };
    let mut out = [[[0u8; 3]; VIEW_SIZE]; VIEW_SIZE];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, slot) in row.iter_mut().enumerate() {
            // View offset relative to the agent in a north-facing frame.
            let vx = c as i32 - 3;
            let vy = r as i32 - 6;
            let (dx, dy) = rot(vx, vy, p.dir);
            let gx = p.x + dx + 7;
            let gy = p.y + dy + 7;
            *slot = full[gy as usize][gx as usize];
        }
    }
    out[6][3] = env.carrying().unwrap_or([cell::EMPTY, 0, 0]);
    Observation(out)
}

#[test]
fn window_matches_full_grid_crop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..30 {
        let task = sample_task(Level::TwoSubgoal, seed).unwrap();
        let mut env = GridEnv::new(task).unwrap();
        let obs = env.reset();
        assert_eq!(obs, crop_oracle(&env));
        for _ in 0..60 {
            if env.is_done() {
                break;
            }
            let r = env.step(rng.gen_range(0..6)).unwrap();
            assert_eq!(r.observation, crop_oracle(&env));
            assert!(r.observation.is_valid());
        }
    }
}

#[test]
fn random_policy_runs_to_the_long_horizon() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut capped = 0;
    for seed in 0..10 {
        let task = sample_task(Level::CompositeLong, seed).unwrap();
        let mut env = GridEnv::new(task).unwrap();
        env.reset();
        let mut last = None;
        while !env.is_done() {
            last = Some(env.step(rng.gen_range(0..6)).unwrap());
        }
        let last = last.unwrap();
        if env.steps() == 400 {
            capped += 1;
            assert_eq!(last.reward, 0.0);
            assert!(last.done);
        } else {
            assert_eq!(last.reward, 1.0);
        }
        assert!(env.steps() <= 400);
        assert!(env.step(0).is_err());
    }
    assert!(capped >= 8, "random policy solved composite tasks too often: {capped}/10 capped");
}

#[test]
fn expert_demonstrations_replay_to_success() {
    for (i, level) in Level::ALL.iter().cycle().take(100).enumerate() {
        let task = sample_task(*level, i as u64).unwrap();
        let (traj, bounds) = scripted_expert(&task).unwrap();
        assert_eq!(bounds.len(), task.subgoals.len());
        assert_eq!(*bounds.last().unwrap(), traj.actions.len());
        assert!(bounds.windows(2).all(|w| w[0] < w[1]));
        let mut env = GridEnv::new(task.clone()).unwrap();
        let mut obs = env.reset();
        let mut total = 0.0;
        for (t, &a) in traj.actions.iter().enumerate() {
            assert_eq!(obs, traj.observations[t]);
            let r = env.step(a).unwrap();
            total += r.reward;
            obs = r.observation;
        }
        assert!(env.is_done());
        assert_eq!(total, 1.0);
        assert_eq!(env.completions(), &bounds[..]);
    }
}

/// Unit-cost BFS over (pose, door state) with every action, stopping once
/// the agent faces `target`.
fn bfs_face(task: &TaskSpec, target: (i32, i32)) -> usize {
    let mut env = GridEnv::new(task.clone()).unwrap();
    env.reset();
    let door = (0..env.height())
        .flat_map(|y| (0..env.width()).map(move |x| (x, y)))
        .find(|&(x, y)| env.cell_at(x, y)[0] == cell::DOOR)
        .unwrap();
    let open0 = env.cell_at(door.0, door.1)[2] == cell::OPEN;
    let start = (env.pose(), open0);
    let mut seen = HashSet::new();
    let mut q = VecDeque::new();
    seen.insert(start);
    q.push_back((start, 0usize));
    while let Some(((p, open), d)) = q.pop_front() {
        if p.front() == target {
            return d;
        }
        let free = |x: i32, y: i32| {
            let c = env.cell_at(x, y);
            c[0] == cell::EMPTY || ((x, y) == door && open)
        };
        let mut next = vec![
            (Pose { dir: (p.dir + 3) % 4, ..p }, open),
            (Pose { dir: (p.dir + 1) % 4, ..p }, open),
        ];
        let (fx, fy) = p.front();
        if free(fx, fy) {
            next.push((Pose { x: fx, y: fy, dir: p.dir }, open));
        }
        if (fx, fy) == door {
            next.push((p, !open));
        }
        for s in next {
            if seen.insert(s) {
                q.push_back((s, d + 1));
            }
        }
    }
    panic!("target unreachable");
}

#[test]
fn expert_is_no_longer_than_bfs_plus_interactions() {
    let mut checked = 0;
    for seed in 0..200 {
        let task = sample_task(Level::SingleSubgoal, seed).unwrap();
        let env = GridEnv::new(task.clone()).unwrap();
        let (traj, _) = scripted_expert(&task).unwrap();
        let (target, interactions) = match &task.subgoals[0] {
            Subgoal::GoTo { object } => (env.find(object.cell()).unwrap(), 0),
            Subgoal::PickUp { object } => (env.find(object.cell()).unwrap(), 1),
            Subgoal::OpenDoor { color } => (env.find([cell::DOOR, *color, 0]).unwrap(), 1),
            Subgoal::PutNextTo { .. } => continue,
        };
        let bound = bfs_face(&task, target) + interactions;
        assert!(
            traj.actions.len() <= bound,
            "seed {seed}: expert {} > bound {bound}",
            traj.actions.len()
        );
        checked += 1;
    }
    assert!(checked > 100);
}

#[test]
fn same_actions_give_same_observations() {
    let task = sample_task(Level::CompositeLong, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let acts: Vec<usize> = (0..150).map(|_| rng.gen_range(0..Action::ALL.len())).collect();
    let run = || {
        let mut env = GridEnv::new(task.clone()).unwrap();
        env.reset();
        acts.iter()
            .map_while(|&a| env.step(a).ok())
            .map(|r| (r.observation, r.reward.to_bits(), r.done))
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn cells_outside_the_window_never_change_the_observation(
        seed in 0u64..500,
        turns in 0u8..4,
        paint in prop::collection::vec((0i32..11, 0i32..7, 1u8..3), 1..10),
    ) {
        let mut task = sample_task(Level::SingleSubgoal, seed).unwrap();
        task.layout.agent.dir = (task.layout.agent.dir + turns) % 4;
        let env = GridEnv::new(task.clone()).unwrap();
        let before = env.observation();
        let p = env.pose();
        let (fx, fy) = Pose::forward_vec(p.dir);
        let (rx, ry) = Pose::forward_vec(p.dir + 1);
        let mut visible = HashSet::new();
        for f in 0..7 {
            for l in -3..=3 {
                visible.insert((p.x + f * fx + l * rx, p.y + f * fy + l * ry));
            }
        }
        let mut changed = task.clone();
        for (x, y, t) in paint {
            if visible.contains(&(x, y)) || changed.layout.cells[y as usize][x as usize][0] >= cell::DOOR {
                continue;
            }
            changed.layout.cells[y as usize][x as usize] = [t, 0, 0];
        }
        // Walls and floor only, so subgoal targets stay unique.
        let env2 = GridEnv::new(changed).unwrap();
        prop_assert_eq!(before, env2.observation());
    }
}
