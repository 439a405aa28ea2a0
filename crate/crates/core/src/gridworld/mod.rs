//! Two-room, partially observable gridworld with compositional goals.
//!
//! The agent sees a 7x7 egocentric window (type, color, state per cell),
//! picks from six language-named actions, and receives a sparse reward of 1
//! when the last subgoal of its task completes.

mod expert;
mod task;

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use expert::{navigation_plan, scripted_expert};
pub use task::{sample_task, sample_task_named};

pub const VIEW_SIZE: usize = 7;
pub const NUM_ACTIONS: usize = 6;

pub mod cell {
    pub const UNSEEN: u8 = 0;
    pub const EMPTY: u8 = 1;
    pub const WALL: u8 = 2;
    pub const DOOR: u8 = 3;
    pub const KEY: u8 = 4;
    pub const BALL: u8 = 5;
    pub const BOX: u8 = 6;
    pub const NUM_TYPES: usize = 7;

    pub const NUM_COLORS: usize = 6;

    pub const OPEN: u8 = 0;
    pub const CLOSED: u8 = 1;
    pub const NUM_STATES: usize = 2;
}

pub const COLOR_NAMES: [&str; cell::NUM_COLORS] = ["red", "green", "blue", "purple", "yellow", "grey"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Action {
    TurnLeft = 0,
    TurnRight = 1,
    Forward = 2,
    Pickup = 3,
    Drop = 4,
    Toggle = 5,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::TurnLeft,
        Action::TurnRight,
        Action::Forward,
        Action::Pickup,
        Action::Drop,
        Action::Toggle,
    ];

    pub fn from_id(id: usize) -> Result<Self> {
        Self::ALL.get(id).copied().ok_or(Error::InvalidAction(id))
    }

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::TurnLeft => "turn left",
            Action::TurnRight => "turn right",
            Action::Forward => "move forward",
            Action::Pickup => "pick up",
            Action::Drop => "drop",
            Action::Toggle => "toggle",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionDef {
    pub id: usize,
    pub name: String,
}

pub fn action_defs() -> Vec<ActionDef> {
    Action::ALL
        .iter()
        .map(|a| ActionDef {
            id: a.id(),
            name: a.name().to_string(),
        })
        .collect()
}

/// Egocentric window; the agent sits at the bottom-center cell facing up.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(pub [[[u8; 3]; VIEW_SIZE]; VIEW_SIZE]);

impl Observation {
    pub fn cell(&self, row: usize, col: usize) -> [u8; 3] {
        self.0[row][col]
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().flatten().all(|c| {
            (c[0] as usize) < cell::NUM_TYPES
                && (c[1] as usize) < cell::NUM_COLORS
                && (c[2] as usize) < cell::NUM_STATES
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    SingleSubgoal,
    TwoSubgoal,
    CompositeLong,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::SingleSubgoal, Level::TwoSubgoal, Level::CompositeLong];

    pub fn horizon(self) -> usize {
        match self {
            Level::SingleSubgoal => 64,
            Level::TwoSubgoal => 128,
            Level::CompositeLong => 400,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::SingleSubgoal => "single-subgoal",
            Level::TwoSubgoal => "two-subgoal",
            Level::CompositeLong => "composite-long",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Level::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::UnknownLevel(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjKind {
    Key,
    Ball,
    Box,
}

impl ObjKind {
    pub const ALL: [ObjKind; 3] = [ObjKind::Key, ObjKind::Ball, ObjKind::Box];

    pub fn code(self) -> u8 {
        match self {
            ObjKind::Key => cell::KEY,
            ObjKind::Ball => cell::BALL,
            ObjKind::Box => cell::BOX,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjKind::Key => "key",
            ObjKind::Ball => "ball",
            ObjKind::Box => "box",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjRef {
    pub kind: ObjKind,
    pub color: u8,
}

impl ObjRef {
    pub fn cell(self) -> [u8; 3] {
        [self.kind.code(), self.color, 0]
    }

    pub fn describe(self) -> String {
        format!("the {} {}", COLOR_NAMES[self.color as usize], self.kind.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Subgoal {
    GoTo { object: ObjRef },
    PickUp { object: ObjRef },
    OpenDoor { color: u8 },
    PutNextTo { object: ObjRef, target: ObjRef },
}

impl Subgoal {
    pub const CATEGORIES: [&'static str; 4] = ["go_to", "pick_up", "open_door", "put_next_to"];

    pub fn category(&self) -> &'static str {
        match self {
            Subgoal::GoTo { .. } => "go_to",
            Subgoal::PickUp { .. } => "pick_up",
            Subgoal::OpenDoor { .. } => "open_door",
            Subgoal::PutNextTo { .. } => "put_next_to",
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Subgoal::GoTo { object } => format!("go to {}", object.describe()),
            Subgoal::PickUp { object } => format!("pick up {}", object.describe()),
            Subgoal::OpenDoor { color } => format!("open the {} door", COLOR_NAMES[*color as usize]),
            Subgoal::PutNextTo { object, target } => {
                format!("put {} next to {}", object.describe(), target.describe())
            }
        }
    }
}

/// Goal sentence for an ordered subgoal list.
pub fn goal_text(subgoals: &[Subgoal]) -> String {
    subgoals
        .iter()
        .map(Subgoal::describe)
        .collect::<Vec<_>>()
        .join(", then ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pose {
    pub x: i32,
    pub y: i32,
    /// 0 = north, 1 = east, 2 = south, 3 = west.
    pub dir: u8,
}

impl Pose {
    pub fn forward_vec(dir: u8) -> (i32, i32) {
        match dir % 4 {
            0 => (0, -1),
            1 => (1, 0),
            2 => (0, 1),
            _ => (-1, 0),
        }
    }

    pub fn front(&self) -> (i32, i32) {
        let (dx, dy) = Self::forward_vec(self.dir);
        (self.x + dx, self.y + dy)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub width: usize,
    pub height: usize,
    /// Row-major `(type, color, state)` per cell.
    pub cells: Vec<Vec<[u8; 3]>>,
    pub agent: Pose,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub seed: u64,
    pub level: Level,
    pub goal_text: String,
    pub layout: Layout,
    pub subgoals: Vec<Subgoal>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

/// A running episode.
#[derive(Clone, Debug)]
pub struct GridEnv {
    task: TaskSpec,
    width: i32,
    height: i32,
    cells: Vec<[u8; 3]>,
    pose: Pose,
    carrying: Option<[u8; 3]>,
    progress: usize,
    completions: Vec<usize>,
    steps: usize,
    horizon: usize,
    done: bool,
}

impl GridEnv {
    /// Validates the layout and resets to the task's start state.
    pub fn new(task: TaskSpec) -> Result<Self> {
        validate_task(&task)?;
        let layout = &task.layout;
        let cells = layout.cells.iter().flatten().copied().collect();
        Ok(Self {
            width: layout.width as i32,
            height: layout.height as i32,
            cells,
            pose: layout.agent,
            carrying: None,
            progress: 0,
            completions: Vec::new(),
            steps: 0,
            horizon: task.level.horizon(),
            done: false,
            task,
        })
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn reset(&mut self) -> Observation {
        let layout = &self.task.layout;
        self.cells = layout.cells.iter().flatten().copied().collect();
        self.pose = layout.agent;
        self.carrying = None;
        self.progress = 0;
        self.completions.clear();
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn carrying(&self) -> Option<[u8; 3]> {
        self.carrying
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Number of subgoals completed so far.
    pub fn progress(&self) -> usize {
        self.progress
    }

    /// Step counts at which each completed subgoal was satisfied.
    pub fn completions(&self) -> &[usize] {
        &self.completions
    }

    pub fn width(&self) -> i32 {
        self.width
    }

    pub fn height(&self) -> i32 {
        self.height
    }

    pub fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && x < self.width && y < self.height
    }

    pub fn cell_at(&self, x: i32, y: i32) -> [u8; 3] {
        if self.in_bounds(x, y) {
            self.cells[(y * self.width + x) as usize]
        } else {
            [cell::WALL, 0, 0]
        }
    }

    fn set_cell(&mut self, x: i32, y: i32, c: [u8; 3]) {
        let w = self.width;
        self.cells[(y * w + x) as usize] = c;
    }

    pub fn find(&self, c: [u8; 3]) -> Option<(i32, i32)> {
        let i = self.cells.iter().position(|&v| v[0] == c[0] && v[1] == c[1])?;
        Some(((i as i32) % self.width, (i as i32) / self.width))
    }

    fn find_door(&self, color: u8) -> Option<(i32, i32)> {
        self.find([cell::DOOR, color, 0])
    }

    pub fn passable(&self, x: i32, y: i32) -> bool {
        let c = self.cell_at(x, y);
        c[0] == cell::EMPTY || (c[0] == cell::DOOR && c[2] == cell::OPEN)
    }

    pub fn observation(&self) -> Observation {
        let mut out = [[[0u8; 3]; VIEW_SIZE]; VIEW_SIZE];
        let (fx, fy) = Pose::forward_vec(self.pose.dir);
        let (rx, ry) = Pose::forward_vec(self.pose.dir + 1);
        let half = (VIEW_SIZE / 2) as i32;
        for (vr, row) in out.iter_mut().enumerate() {
            for (vc, slot) in row.iter_mut().enumerate() {
                let f = (VIEW_SIZE - 1 - vr) as i32;
                let l = vc as i32 - half;
                let x = self.pose.x + f * fx + l * rx;
                let y = self.pose.y + f * fy + l * ry;
                *slot = if f == 0 && l == 0 {
                    self.carrying.unwrap_or([cell::EMPTY, 0, 0])
                } else {
                    self.cell_at(x, y)
                };
            }
        }
        Observation(out)
    }

    pub fn subgoal_satisfied(&self, sg: &Subgoal) -> bool {
        match sg {
            Subgoal::GoTo { object } => {
                let (x, y) = self.pose.front();
                let c = self.cell_at(x, y);
                c[0] == object.kind.code() && c[1] == object.color
            }
            Subgoal::PickUp { object } => self
                .carrying
                .is_some_and(|c| c[0] == object.kind.code() && c[1] == object.color),
            Subgoal::OpenDoor { color } => self
                .find_door(*color)
                .is_some_and(|(x, y)| self.cell_at(x, y)[2] == cell::OPEN),
            Subgoal::PutNextTo { object, target } => {
                match (self.find(object.cell()), self.find(target.cell())) {
                    (Some((ax, ay)), Some((bx, by))) => (ax - bx).abs() + (ay - by).abs() == 1,
                    _ => false,
                }
            }
        }
    }

    /// Applies the transition dynamics only (no step counting or goal checks).
    pub(crate) fn apply(&mut self, action: Action) {
        let (fx, fy) = self.pose.front();
        match action {
            Action::TurnLeft => self.pose.dir = (self.pose.dir + 3) % 4,
            Action::TurnRight => self.pose.dir = (self.pose.dir + 1) % 4,
            Action::Forward => {
                if self.passable(fx, fy) {
                    self.pose.x = fx;
                    self.pose.y = fy;
                }
            }
            Action::Pickup => {
                let c = self.cell_at(fx, fy);
                if self.carrying.is_none() && matches!(c[0], cell::KEY | cell::BALL | cell::BOX) {
                    self.carrying = Some(c);
                    self.set_cell(fx, fy, [cell::EMPTY, 0, 0]);
                }
            }
            Action::Drop => {
                if let Some(c) = self.carrying {
                    if self.in_bounds(fx, fy) && self.cell_at(fx, fy)[0] == cell::EMPTY {
                        self.set_cell(fx, fy, c);
                        self.carrying = None;
                    }
                }
            }
            Action::Toggle => {
                let c = self.cell_at(fx, fy);
                if c[0] == cell::DOOR {
                    let state = if c[2] == cell::OPEN { cell::CLOSED } else { cell::OPEN };
                    self.set_cell(fx, fy, [c[0], c[1], state]);
                }
            }
        }
    }

    pub fn step(&mut self, action_id: usize) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let action = Action::from_id(action_id)?;
        self.apply(action);
        self.steps += 1;
        while self.progress < self.task.subgoals.len()
            && self.subgoal_satisfied(&self.task.subgoals[self.progress])
        {
            self.progress += 1;
            self.completions.push(self.steps);
        }
        let success = self.progress == self.task.subgoals.len();
        self.done = success || self.steps >= self.horizon;
        Ok(StepResult {
            observation: self.observation(),
            reward: if success { 1.0 } else { 0.0 },
            done: self.done,
        })
    }
}

fn validate_task(task: &TaskSpec) -> Result<()> {
    let l = &task.layout;
    let bad = |m: String| Err(Error::MalformedLayout(m));
    if l.width < 3 || l.height < 3 {
        return bad(format!("grid {}x{} is too small", l.width, l.height));
    }
    if l.cells.len() != l.height || l.cells.iter().any(|r| r.len() != l.width) {
        return bad("cell rows do not match the declared size".into());
    }
    for c in l.cells.iter().flatten() {
        if c[0] as usize >= cell::NUM_TYPES
            || c[1] as usize >= cell::NUM_COLORS
            || c[2] as usize >= cell::NUM_STATES
        {
            return bad(format!("cell code {c:?} out of vocabulary"));
        }
    }
    let a = l.agent;
    if a.dir > 3 || a.x < 0 || a.y < 0 || a.x as usize >= l.width || a.y as usize >= l.height {
        return bad(format!("agent pose {a:?} out of bounds"));
    }
    if l.cells[a.y as usize][a.x as usize][0] != cell::EMPTY {
        return bad("agent does not start on an empty cell".into());
    }
    if task.subgoals.is_empty() {
        return bad("task has no subgoals".into());
    }
    let count = |c: [u8; 3]| {
        l.cells
            .iter()
            .flatten()
            .filter(|v| v[0] == c[0] && v[1] == c[1])
            .count()
    };
    for sg in &task.subgoals {
        let refs: Vec<[u8; 3]> = match sg {
            Subgoal::GoTo { object } | Subgoal::PickUp { object } => vec![object.cell()],
            Subgoal::OpenDoor { color } => vec![[cell::DOOR, *color, 0]],
            Subgoal::PutNextTo { object, target } => vec![object.cell(), target.cell()],
        };
        for r in refs {
            if count(r) != 1 {
                return bad(format!("subgoal `{}` does not name a unique object", sg.describe()));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_room() -> TaskSpec {
        let (w, h) = (7, 7);
        let mut cells = vec![vec![[cell::EMPTY, 0, 0]; w]; h];
        for y in 0..h {
            for x in 0..w {
                if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                    cells[y][x] = [cell::WALL, 0, 0];
                }
            }
        }
        cells[1][3] = [cell::BALL, 0, 0];
        TaskSpec {
            seed: 0,
            level: Level::SingleSubgoal,
            goal_text: "go to the red ball".into(),
            layout: Layout {
                width: w,
                height: h,
                cells,
                agent: Pose { x: 3, y: 4, dir: 0 },
            },
            subgoals: vec![Subgoal::GoTo {
                object: ObjRef {
                    kind: ObjKind::Ball,
                    color: 0,
                },
            }],
        }
    }

    #[test]
    fn walking_into_a_wall_keeps_position() {
        let mut task = open_room();
        task.layout.agent = Pose { x: 1, y: 4, dir: 3 };
        let mut env = GridEnv::new(task).unwrap();
        let r = env.step(Action::Forward.id()).unwrap();
        assert_eq!(env.pose(), Pose { x: 1, y: 4, dir: 3 });
        assert_eq!(r.reward, 0.0);
        assert!(!r.done);
    }

    #[test]
    fn completing_the_goal_pays_one_and_ends() {
        let mut env = GridEnv::new(open_room()).unwrap();
        assert_eq!(env.step(Action::Forward.id()).unwrap().reward, 0.0);
        let r = env.step(Action::Forward.id()).unwrap();
        assert_eq!(r.reward, 1.0);
        assert!(r.done);
        assert!(matches!(env.step(0), Err(Error::EpisodeDone)));
    }

    #[test]
    fn invalid_action_is_rejected() {
        let mut env = GridEnv::new(open_room()).unwrap();
        assert!(matches!(env.step(6), Err(Error::InvalidAction(6))));
    }

    #[test]
    fn reset_is_repeatable() {
        let mut env = GridEnv::new(open_room()).unwrap();
        let a = env.reset();
        env.step(Action::TurnLeft.id()).unwrap();
        let b = env.reset();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_bounds_cells_read_as_walls() {
        let mut task = open_room();
        task.layout.agent = Pose { x: 1, y: 1, dir: 0 };
        let env = GridEnv::new(task).unwrap();
        let obs = env.observation();
        // Five cells ahead of a wall-hugging agent are beyond the grid.
        assert_eq!(obs.cell(0, 3), [cell::WALL, 0, 0]);
        assert_eq!(obs.cell(6, 0), [cell::WALL, 0, 0]);
    }

    #[test]
    fn malformed_layouts_are_rejected() {
        let mut task = open_room();
        task.layout.cells.pop();
        assert!(matches!(GridEnv::new(task), Err(Error::MalformedLayout(_))));
        let mut task = open_room();
        task.layout.agent = Pose { x: 0, y: 0, dir: 0 };
        assert!(matches!(GridEnv::new(task), Err(Error::MalformedLayout(_))));
        let mut task = open_room();
        task.layout.cells[2][2] = [9, 0, 0];
        assert!(GridEnv::new(task).is_err());
    }

    #[test]
    fn level_parsing() {
        assert_eq!("composite-long".parse::<Level>().unwrap(), Level::CompositeLong);
        assert!(matches!("boss".parse::<Level>(), Err(Error::UnknownLevel(_))));
    }
}
