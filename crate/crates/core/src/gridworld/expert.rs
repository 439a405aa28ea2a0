use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use super::{cell, Action, GridEnv, Pose, Subgoal, TaskSpec};
use crate::corpus::Trajectory;
use crate::error::{Error, Result};

/// Shortest action sequence (turns, moves, door toggles) that leaves the
/// agent facing one of `targets`. Ties break on the fixed move order
/// forward, left, right. Returns `None` when no target is reachable.
pub fn navigation_plan(env: &GridEnv, targets: &[(i32, i32)]) -> Option<Vec<Action>> {
    let start = env.pose();
    let is_goal = |p: &Pose| targets.contains(&p.front());
    let mut best: HashMap<Pose, usize> = HashMap::new();
    let mut parent: HashMap<Pose, (Pose, Action)> = HashMap::new();
    let mut heap = BinaryHeap::new();
    let mut seq = 0usize;
    best.insert(start, 0);
    heap.push(Reverse((0usize, seq, start.x, start.y, start.dir)));
    let mut found = None;
    while let Some(Reverse((cost, _, x, y, dir))) = heap.pop() {
        let pose = Pose { x, y, dir };
        if best.get(&pose).is_some_and(|&c| c < cost) {
            continue;
        }
        if is_goal(&pose) {
            found = Some(pose);
            break;
        }
        let (fx, fy) = pose.front();
        let front = env.cell_at(fx, fy);
        let forward = if env.passable(fx, fy) {
            Some(1)
        } else if front[0] == cell::DOOR && front[2] == cell::CLOSED {
            Some(2)
        } else {
            None
        };
        let mut moves: Vec<(Action, Pose, usize)> = Vec::with_capacity(3);
        if let Some(c) = forward {
            moves.push((Action::Forward, Pose { x: fx, y: fy, dir }, c));
        }
        moves.push((Action::TurnLeft, Pose { x, y, dir: (dir + 3) % 4 }, 1));
        moves.push((Action::TurnRight, Pose { x, y, dir: (dir + 1) % 4 }, 1));
        for (a, next, c) in moves {
            let nc = cost + c;
            if best.get(&next).is_none_or(|&old| nc < old) {
                best.insert(next, nc);
                parent.insert(next, (pose, a));
                seq += 1;
                heap.push(Reverse((nc, seq, next.x, next.y, next.dir)));
            }
        }
    }
    let goal = found?;
    let mut moves = Vec::new();
    let mut cur = goal;
    while cur != start {
        let (prev, a) = parent[&cur];
        moves.push(a);
        cur = prev;
    }
    moves.reverse();
    // Expand forward moves into closed doors as toggle + forward.
    let mut sim = env.clone();
    let mut out = Vec::with_capacity(moves.len());
    for a in moves {
        if a == Action::Forward {
            let (fx, fy) = sim.pose().front();
            let c = sim.cell_at(fx, fy);
            if c[0] == cell::DOOR && c[2] == cell::CLOSED {
                out.push(Action::Toggle);
                sim_step(&mut sim, Action::Toggle);
            }
        }
        out.push(a);
        sim_step(&mut sim, a);
    }
    Some(out)
}

fn sim_step(env: &mut GridEnv, a: Action) {
    env.apply(a);
}

fn neighbours((x, y): (i32, i32)) -> [(i32, i32); 4] {
    [(x, y - 1), (x + 1, y), (x, y + 1), (x - 1, y)]
}

fn plan_subgoal(env: &GridEnv, sg: &Subgoal) -> Result<Vec<Action>> {
    let locate = |c: [u8; 3], what: &str| {
        env.find(c)
            .ok_or_else(|| Error::Planner(format!("{what} is not on the grid")))
    };
    let unreachable = || Error::Planner(format!("cannot reach target of `{}`", sg.describe()));
    let mut plan = Vec::new();
    match sg {
        Subgoal::GoTo { object } => {
            let pos = locate(object.cell(), "goal object")?;
            plan = navigation_plan(env, &[pos]).ok_or_else(unreachable)?;
        }
        Subgoal::PickUp { object } => {
            if env.carrying().is_some() {
                return Err(Error::Planner("hands are full".into()));
            }
            let pos = locate(object.cell(), "object to pick up")?;
            plan = navigation_plan(env, &[pos]).ok_or_else(unreachable)?;
            plan.push(Action::Pickup);
        }
        Subgoal::OpenDoor { color } => {
            let pos = locate([cell::DOOR, *color, 0], "door")?;
            if env.cell_at(pos.0, pos.1)[2] == cell::OPEN {
                return Ok(Vec::new());
            }
            plan = navigation_plan(env, &[pos]).ok_or_else(unreachable)?;
            plan.push(Action::Toggle);
        }
        Subgoal::PutNextTo { object, target } => {
            let mut sim = env.clone();
            let held = env
                .carrying()
                .is_some_and(|c| c[0] == object.kind.code() && c[1] == object.color);
            if !held {
                if env.carrying().is_some() {
                    return Err(Error::Planner("hands hold a different object".into()));
                }
                let pos = locate(object.cell(), "object to move")?;
                plan = navigation_plan(env, &[pos]).ok_or_else(unreachable)?;
                plan.push(Action::Pickup);
                for a in &plan {
                    sim_step(&mut sim, *a);
                }
            }
            let tpos = sim
                .find(target.cell())
                .ok_or_else(|| Error::Planner("target object is not on the grid".into()))?;
            let spots: Vec<(i32, i32)> = neighbours(tpos)
                .into_iter()
                .filter(|&(x, y)| sim.cell_at(x, y)[0] == cell::EMPTY)
                .collect();
            let nav = navigation_plan(&sim, &spots).ok_or_else(unreachable)?;
            plan.extend(nav);
            plan.push(Action::Drop);
        }
    }
    Ok(plan)
}

/// Solves the task by planning each subgoal in order. Returns the
/// demonstration and, per subgoal, the number of actions taken when it
/// completed (the last entry equals the trajectory length).
pub fn scripted_expert(task: &TaskSpec) -> Result<(Trajectory, Vec<usize>)> {
    let mut env = GridEnv::new(task.clone())?;
    let mut obs = env.reset();
    let mut observations = Vec::new();
    let mut actions = Vec::new();
    let mut boundaries = Vec::new();
    let mut last_reward = 0.0;
    for (i, sg) in task.subgoals.iter().enumerate() {
        let plan = plan_subgoal(&env, sg)?;
        if plan.is_empty() {
            return Err(Error::Planner(format!(
                "subgoal {i} (`{}`) is already satisfied",
                sg.describe()
            )));
        }
        for (j, a) in plan.iter().enumerate() {
            observations.push(obs);
            actions.push(a.id());
            let r = env.step(a.id())?;
            obs = r.observation;
            last_reward = r.reward;
            let expected = if j + 1 == plan.len() { i + 1 } else { i };
            if env.progress() != expected {
                return Err(Error::Planner(format!(
                    "subgoal {i} completion did not align with its plan"
                )));
            }
            if r.done && i + 1 < task.subgoals.len() {
                return Err(Error::Planner("horizon reached before the task was solved".into()));
            }
        }
        boundaries.push(actions.len());
    }
    if last_reward != 1.0 || !env.is_done() {
        return Err(Error::Planner("demonstration did not end in success".into()));
    }
    Ok((
        Trajectory {
            goal: task.goal_text.clone(),
            observations,
            actions,
        },
        boundaries,
    ))
}
