//! Online fine-tuning of a high-level skill policy over frozen skills, and
//! the flat baselines that share its learner.

mod learner;
mod rollout;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use learner::{choose, Actor, ActorLoss, Critic, Learner, Replay, Transition, UpdateStats};
pub use rollout::{run_flat_episode, run_skill_episode, Episode};

use crate::error::{Error, Result};
use crate::gridworld::TaskSpec;
use crate::nets::SkillModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HRLConfig {
    pub gamma: f64,
    /// Weight of the skill-choice KL to the prior.
    pub alpha_skill: f64,
    /// Weight of the termination KL to the prior.
    pub alpha_termination: f64,
    pub sac_temperature: f64,
    pub max_skill_steps: usize,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub critic_hidden: usize,
    pub tau: f64,
    pub grad_clip: f64,
    /// Gradient updates per stored transition.
    pub updates_per_transition: f64,
    /// Transitions collected before the first update.
    pub learning_starts: usize,
    /// Environment steps between greedy evaluations.
    pub eval_every: usize,
    /// Episodes per task at each evaluation.
    pub eval_episodes: usize,
    /// Skills act by sampling from the frozen low-level policy rather than
    /// taking its argmax; the high-level choice is still greedy at
    /// evaluation.
    pub sample_skill_actions: bool,
}

impl Default for HRLConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            alpha_skill: 0.01,
            alpha_termination: 1.0,
            sac_temperature: 1.0,
            max_skill_steps: 20,
            replay_capacity: 100_000,
            batch_size: 64,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            critic_hidden: 64,
            tau: 0.005,
            grad_clip: 10.0,
            updates_per_transition: 1.0,
            learning_starts: 64,
            eval_every: 2_000,
            eval_episodes: 10,
            sample_skill_actions: true,
        }
    }
}

impl HRLConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.alpha_skill >= 0.0 && self.alpha_termination >= 0.0 && self.sac_temperature >= 0.0) {
            return bad("KL weights and temperature must be non-negative");
        }
        if self.max_skill_steps == 0 || self.batch_size == 0 || self.replay_capacity == 0 || self.eval_episodes == 0 {
            return bad("max_skill_steps, batch_size, replay_capacity and eval_episodes must be positive");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        Ok(())
    }
}

/// What is being fine-tuned.
#[derive(Clone, Copy)]
pub enum Agent<'a> {
    /// Skill choice and termination over a frozen skill library.
    Hierarchical { model: &'a SkillModel, kept: &'a [usize] },
    /// Primitive actions on frozen policy-trunk features.
    Flat { features: &'a SkillModel },
}

/// One greedy evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub env_steps: usize,
    pub success_rate: f64,
    pub seed: u64,
}

pub struct DownstreamRun {
    pub curve: Vec<CurvePoint>,
    pub learner: Learner,
    pub episodes: usize,
    pub decisions: usize,
}

fn run_episode(agent: Agent<'_>, task: &TaskSpec, actor: &Actor, cfg: &HRLConfig, greedy: bool, rng: &mut ChaCha8Rng) -> Result<Episode> {
    match agent {
        Agent::Hierarchical { model, kept } => run_skill_episode(task, model, kept, actor, cfg, greedy, rng),
        Agent::Flat { features } => run_flat_episode(task, features, actor, greedy, rng),
    }
}

/// Success rate of an actor over tasks with greedy high-level choices.
pub fn evaluate(agent: Agent<'_>, actor: &Actor, tasks: &[TaskSpec], cfg: &HRLConfig, seed: u64) -> Result<f64> {
    if tasks.is_empty() {
        return Ok(0.0);
    }
    // Greedy rollouts are deterministic; one episode per task is enough.
    let stochastic = matches!(agent, Agent::Hierarchical { .. }) && cfg.sample_skill_actions;
    let reps = if stochastic { cfg.eval_episodes } else { 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ok = 0;
    for t in tasks {
        for _ in 0..reps {
            ok += usize::from(run_episode(agent, t, actor, cfg, true, &mut rng)?.success);
        }
    }
    Ok(ok as f64 / (tasks.len() * reps) as f64)
}

/// Fine-tunes `actor` on `train_tasks` for `budget` environment steps,
/// evaluating greedily on `eval_tasks` every `cfg.eval_every` steps and at
/// the end.
pub fn train_downstream(
    agent: Agent<'_>,
    actor: Actor,
    train_tasks: &[TaskSpec],
    eval_tasks: &[TaskSpec],
    budget: usize,
    cfg: &HRLConfig,
    seed: u64,
) -> Result<DownstreamRun> {
    cfg.validate()?;
    if train_tasks.is_empty() {
        return Err(Error::MissingInput("no downstream training tasks".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut learner = Learner::new(actor, cfg, seed);
    let mut replay = Replay::new(cfg.replay_capacity);
    let eval_seed = seed ^ 0xE7A1;
    let mut curve = vec![CurvePoint {
        env_steps: 0,
        success_rate: evaluate(agent, &learner.actor, eval_tasks, cfg, eval_seed)?,
        seed,
    }];
    let (mut steps, mut episodes, mut decisions) = (0usize, 0usize, 0usize);
    let mut next_eval = cfg.eval_every.max(1);
    let mut owed = 0.0f64;
    while steps < budget {
        let task = &train_tasks[episodes % train_tasks.len()];
        let ep = run_episode(agent, task, &learner.actor, cfg, false, &mut rng)?;
        episodes += 1;
        steps += ep.env_steps;
        decisions += ep.decisions;
        let fresh = ep.transitions.len();
        for t in ep.transitions {
            replay.push(t);
        }
        if replay.len() >= cfg.learning_starts {
            owed += fresh as f64 * cfg.updates_per_transition;
            while owed >= 1.0 {
                let batch = replay.sample(cfg.batch_size, &mut rng);
                learner.sac_update(&batch)?;
                owed -= 1.0;
            }
        }
        if steps >= next_eval || steps >= budget {
            while next_eval <= steps {
                next_eval += cfg.eval_every.max(1);
            }
            curve.push(CurvePoint {
                env_steps: steps.min(budget),
                success_rate: evaluate(agent, &learner.actor, eval_tasks, cfg, eval_seed)?,
                seed,
            });
        }
    }
    Ok(DownstreamRun { curve, learner, episodes, decisions })
}
