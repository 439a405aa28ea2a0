//! Zero-shot evaluation, the behavior-cloning baseline, skill statistics
//! and report emission.

mod report;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use report::{emit_report, line_plot_svg, segmentation_svg, CurveRecord, Report, Series};

use crate::autograd::{Adam, Graph, Grads, Matrix};
use crate::corpus::{EnrichedTrajectory, LatentAssignment, Trajectory};
use crate::error::{Error, Result};
use crate::gridworld::TaskSpec;
use crate::hrl::{evaluate, Actor, Agent, HRLConfig};
use crate::nets::{ModelConfig, SkillModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessRow {
    pub category: String,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessTable {
    pub method: String,
    pub rows: Vec<SuccessRow>,
}

impl SuccessTable {
    pub fn overall(&self) -> f64 {
        let (s, n) = self.rows.iter().fold((0, 0), |(s, n), r| (s + r.successes, n + r.episodes));
        if n == 0 {
            0.0
        } else {
            s as f64 / n as f64
        }
    }
}

/// Greedy rollouts, one per task, grouped by task level. The harness is the
/// same for every method; only `agent` and `actor` differ.
pub fn zero_shot_eval(
    method: &str,
    agent: Agent<'_>,
    actor: &Actor,
    tasks: &[TaskSpec],
    cfg: &HRLConfig,
    seed: u64,
) -> Result<SuccessTable> {
    let mut by_level: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (i, t) in tasks.iter().enumerate() {
        let ok = evaluate(agent, actor, std::slice::from_ref(t), cfg, seed.wrapping_add(i as u64))? > 0.0;
        let e = by_level.entry(t.level.to_string()).or_default();
        e.0 += 1;
        e.1 += usize::from(ok);
    }
    Ok(SuccessTable {
        method: method.to_string(),
        rows: by_level
            .into_iter()
            .map(|(category, (episodes, successes))| SuccessRow {
                category,
                episodes,
                successes,
                success_rate: successes as f64 / episodes as f64,
            })
            .collect(),
    })
}

/// Zero-shot success of the prior and skill policies of a trained model.
pub fn zero_shot_skills(model: &SkillModel, kept: &[usize], tasks: &[TaskSpec], cfg: &HRLConfig) -> Result<SuccessTable> {
    let actor = Actor::from_prior(model, kept)?;
    let greedy = HRLConfig { sample_skill_actions: false, ..cfg.clone() };
    zero_shot_eval("skills", Agent::Hierarchical { model, kept }, &actor, tasks, &greedy, 0)
}

/// Zero-shot success of a behavior-cloning model.
pub fn zero_shot_bc(bc: &SkillModel, tasks: &[TaskSpec], cfg: &HRLConfig) -> Result<SuccessTable> {
    let actor = Actor::from_policy(bc, 0)?;
    zero_shot_eval("bc", Agent::Flat { features: bc }, &actor, tasks, cfg, 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    /// Same trunk and head sizes as the skill policy; `k` is forced to 1.
    pub model: ModelConfig,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self { model: ModelConfig::desk(1), epochs: 40, lr: 1e-3, batch_size: 16, seed: 0 }
    }
}

fn bc_loss(model: &SkillModel, t: &Trajectory) -> Result<(f64, Grads)> {
    let mut g = Graph::new();
    let enc = model.encode(&mut g, &t.observations, &t.goal)?;
    let pi = model.pi_forward(&mut g, &enc);
    let lp = g.log_softmax_rows(pi.logits);
    let a = model.cfg.num_actions;
    let idx = t.actions.iter().enumerate().map(|(s, &x)| Some(s * a + x)).collect();
    let picked = g.gather(lp, idx, t.len(), 1);
    let m = g.mean(picked);
    let loss = g.neg(m);
    Ok((g.scalar(loss), g.backward(loss, &model.store)))
}

/// Goal-conditioned next-action prediction with the skill policy's
/// architecture and a single skill.
pub fn bc_baseline_train(corpus: &[Trajectory], cfg: &BcConfig) -> Result<SkillModel> {
    if corpus.is_empty() {
        return Err(Error::MissingInput("behavior-cloning corpus is empty".into()));
    }
    let mut model = SkillModel::new(ModelConfig { k: 1, ..cfg.model.clone() })?;
    let mut ids = model.ids_with_prefix("enc.");
    ids.extend(model.ids_with_prefix("pi."));
    let mut opt = Adam::new(&model.store, cfg.lr).restricted_to(ids);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut acc = Grads::zeros_like(&model.store);
            for &i in batch {
                let (l, gr) = bc_loss(&model, &corpus[i])?;
                if !l.is_finite() {
                    return Err(Error::NonFinite(format!("behavior-cloning loss at epoch {epoch}")));
                }
                total += l;
                acc.add(&gr);
            }
            acc.scale(1.0 / batch.len() as f64);
            acc.clip_norm(1.0);
            opt.step(&mut model.store, &acc);
        }
        log::info!("bc epoch {epoch}: nll {:.4}", total / corpus.len() as f64);
    }
    Ok(model)
}

/// Fraction of steps where the policy's argmax (skill 0) is the taken
/// action.
pub fn next_action_accuracy(model: &SkillModel, corpus: &[Trajectory]) -> Result<f64> {
    let (mut hit, mut n) = (0usize, 0usize);
    for t in corpus {
        let mut g = Graph::new();
        let enc = model.encode(&mut g, &t.observations, &t.goal)?;
        let pi = model.pi_forward(&mut g, &enc);
        let m: &Matrix = g.value(pi.logits);
        let k = model.k();
        for (s, &a) in t.actions.iter().enumerate() {
            hit += usize::from(m.argmax_row(s * k) == a);
            n += 1;
        }
    }
    Ok(hit as f64 / n.max(1) as f64)
}

/// Per-skill action usage and segment-level transition probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillStats {
    /// Used skill ids, ascending; rows of both tables follow this order.
    pub skills: Vec<usize>,
    pub segments: Vec<usize>,
    /// Per skill, the share of its steps spent on each action.
    pub action_proportions: Vec<Vec<f64>>,
    /// Row-stochastic; a skill never followed by another keeps its mass
    /// on itself.
    pub transitions: Vec<Vec<f64>>,
    pub notes: Vec<String>,
}

pub fn skill_stats(assignments: &[LatentAssignment], corpus: &[EnrichedTrajectory], num_actions: usize) -> Result<SkillStats> {
    if assignments.len() != corpus.len() {
        return Err(Error::Shape("one assignment per trajectory is required".into()));
    }
    let mut actions: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut segments: BTreeMap<usize, usize> = BTreeMap::new();
    let mut pairs: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (a, t) in assignments.iter().zip(corpus) {
        if a.skills.len() != t.len() {
            return Err(Error::Shape("assignment length differs from its trajectory".into()));
        }
        let mut last: Option<usize> = None;
        for ((&b, &k), &act) in a.beta.iter().zip(&a.skills).zip(&t.actions) {
            actions.entry(k).or_insert_with(|| vec![0; num_actions])[act] += 1;
            if b == 1 {
                *segments.entry(k).or_default() += 1;
                if let Some(p) = last {
                    *pairs.entry((p, k)).or_default() += 1;
                }
                last = Some(k);
            }
        }
    }
    let skills: Vec<usize> = actions.keys().copied().collect();
    let pos: BTreeMap<usize, usize> = skills.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let n = skills.len();
    let mut transitions = vec![vec![0.0; n]; n];
    for (&(a, b), &c) in &pairs {
        transitions[pos[&a]][pos[&b]] += c as f64;
    }
    let mut notes = Vec::new();
    for (i, row) in transitions.iter_mut().enumerate() {
        let s: f64 = row.iter().sum();
        if s == 0.0 {
            row[i] = 1.0;
            notes.push(format!("skill {} is never followed by another segment", skills[i]));
        } else {
            row.iter_mut().for_each(|x| *x /= s);
        }
    }
    let action_proportions = skills
        .iter()
        .map(|s| {
            let c = &actions[s];
            let tot: usize = c.iter().sum();
            c.iter().map(|&x| x as f64 / tot as f64).collect()
        })
        .collect();
    Ok(SkillStats {
        segments: skills.iter().map(|s| segments.get(s).copied().unwrap_or(0)).collect(),
        skills,
        action_proportions,
        transitions,
        notes,
    })
}

/// Mean and normal-approximation 95% interval half-width.
pub fn mean_ci(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, 1.96 * (var / n).sqrt())
}

#[cfg(test)]
mod tests;
