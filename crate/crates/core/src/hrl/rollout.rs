use rand::Rng;

use super::learner::{choose, Actor, Transition};
use super::HRLConfig;
use crate::error::Result;
use crate::gridworld::{GridEnv, TaskSpec};
use crate::nets::SkillModel;

/// Outcome of one environment episode.
#[derive(Clone, Debug, Default)]
pub struct Episode {
    /// One entry per high-level decision.
    pub transitions: Vec<Transition>,
    pub env_steps: usize,
    pub decisions: usize,
    pub success: bool,
    /// Skill ids chosen in order.
    pub skills: Vec<usize>,
}

struct Pending {
    state: Vec<f64>,
    slot: usize,
    action: usize,
    reward: f64,
    steps: usize,
}

impl Pending {
    fn close(self, next_state: Vec<f64>, next_slot: usize, done: bool) -> Transition {
        Transition {
            state: self.state,
            slot: self.slot,
            action: self.action,
            reward: self.reward,
            steps: self.steps,
            next_state,
            next_slot,
            done,
        }
    }
}

/// Runs the frozen low-level policy under a high-level actor. A new skill
/// is chosen at the first step, whenever the termination head fires, and
/// after `max_skill_steps` primitive steps. `kept[i]` maps actor choice `i`
/// to a skill id.
pub fn run_skill_episode(
    task: &TaskSpec,
    model: &SkillModel,
    kept: &[usize],
    actor: &Actor,
    cfg: &HRLConfig,
    greedy: bool,
    rng: &mut impl Rng,
) -> Result<Episode> {
    let mut env = GridEnv::new(task.clone())?;
    let obs = env.reset();
    let mut st = model.online(&task.goal_text);
    model.observe(&mut st, &obs);
    let mut ep = Episode::default();
    let mut slot = actor.start_slot();
    let mut pending: Option<Pending> = None;
    let mut in_skill = 0usize;
    loop {
        let state = st.p_h.clone();
        let switch = match &pending {
            None => true,
            Some(_) if in_skill >= cfg.max_skill_steps => true,
            Some(_) => {
                let (_, t) = actor.eval(&state, slot);
                t.is_some_and(|t| choose(&t, greedy, rng) == 1)
            }
        };
        if switch {
            if let Some(p) = pending.take() {
                ep.transitions.push(p.close(state.clone(), slot, false));
            }
            let (c, _) = actor.eval(&state, slot);
            let choice = choose(&c, greedy, rng);
            ep.decisions += 1;
            ep.skills.push(kept[choice]);
            pending = Some(Pending { state, slot, action: choice, reward: 0.0, steps: 0 });
            slot = choice;
            in_skill = 0;
        }
        let p = pending.as_mut().expect("a skill is active");
        let logits = model.policy_logits(&st, kept[p.action])?;
        let a = if cfg.sample_skill_actions { choose(&logits, false, rng) } else { crate::autograd::argmax(&logits) };
        let r = env.step(a)?;
        model.acted(&mut st, a);
        p.reward += cfg.gamma.powi(p.steps as i32) * r.reward;
        p.steps += 1;
        in_skill += 1;
        ep.env_steps += 1;
        model.observe(&mut st, &r.observation);
        if r.done {
            ep.success = r.reward > 0.0;
            let p = pending.take().unwrap();
            ep.transitions.push(p.close(st.p_h.clone(), slot, ep.success));
            return Ok(ep);
        }
    }
}

/// Runs a primitive-action actor on frozen trunk features; one transition
/// per environment step.
pub fn run_flat_episode(
    task: &TaskSpec,
    features: &SkillModel,
    actor: &Actor,
    greedy: bool,
    rng: &mut impl Rng,
) -> Result<Episode> {
    let mut env = GridEnv::new(task.clone())?;
    let obs = env.reset();
    let mut st = features.online(&task.goal_text);
    features.observe(&mut st, &obs);
    let mut ep = Episode::default();
    loop {
        let state = st.pi_h.clone();
        let (c, _) = actor.eval(&state, 0);
        let a = choose(&c, greedy, rng);
        let r = env.step(a)?;
        features.acted(&mut st, a);
        features.observe(&mut st, &r.observation);
        ep.env_steps += 1;
        ep.decisions += 1;
        let done = r.done && r.reward > 0.0;
        ep.transitions.push(Transition {
            state,
            slot: 0,
            action: a,
            reward: r.reward,
            steps: 1,
            next_state: st.pi_h.clone(),
            next_slot: 0,
            done,
        });
        if r.done {
            ep.success = done;
            return Ok(ep);
        }
    }
}
