use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::HRLConfig;
use crate::autograd::{log_softmax, softmax, Adam, Graph, Grads, Matrix, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nets::{Linear, SkillModel};

/// High-level policy: a slot-conditioned hidden layer with a choice head
/// and an optional termination head. Slots index the previous choice, with
/// one extra slot for "no previous choice".
#[derive(Clone, Debug)]
pub struct Actor {
    pub store: ParamStore,
    hidden: Linear,
    slots: ParamId,
    choice: Linear,
    termination: Option<Linear>,
    pub n_slots: usize,
    pub n_actions: usize,
    pub state_dim: usize,
}

fn copy_linear(dst: &mut ParamStore, name: &str, src: &ParamStore, l: &Linear, cols: Option<&[usize]>) -> Linear {
    let pick = |m: &Matrix| match cols {
        None => m.clone(),
        Some(c) => {
            let mut out = Matrix::zeros(m.rows(), c.len());
            for r in 0..m.rows() {
                for (j, &k) in c.iter().enumerate() {
                    out.set(r, j, m.get(r, k));
                }
            }
            out
        }
    };
    Linear {
        w: dst.add(format!("{name}.w"), pick(src.value(l.w))),
        b: dst.add(format!("{name}.b"), pick(src.value(l.b))),
    }
}

impl Actor {
    /// Copy of the prior's heads restricted to `kept` skills; slot
    /// `kept.len()` is the start slot.
    pub fn from_prior(model: &SkillModel, kept: &[usize]) -> Result<Self> {
        if kept.is_empty() {
            return Err(Error::Config("skill library is empty".into()));
        }
        if let Some(&s) = kept.iter().find(|&&s| s >= model.k()) {
            return Err(Error::InvalidSkill { skill: s, k: model.k() });
        }
        let src = &model.store;
        let heads = &model.p_heads;
        let mut store = ParamStore::new();
        let hidden = copy_linear(&mut store, "hl.hidden", src, &heads.hidden, None);
        let prev = src.value(heads.prev);
        let rows: Vec<Vec<f64>> = kept
            .iter()
            .chain(std::iter::once(&model.k()))
            .map(|&r| prev.row(r).to_vec())
            .collect();
        let slots = store.add("hl.slots", Matrix::from_rows(&rows));
        let choice = copy_linear(&mut store, "hl.choice", src, &heads.k, Some(kept));
        let termination = Some(copy_linear(&mut store, "hl.termination", src, &heads.beta, None));
        Ok(Self {
            store,
            hidden,
            slots,
            choice,
            termination,
            n_slots: kept.len() + 1,
            n_actions: kept.len(),
            state_dim: model.cfg.width,
        })
    }

    /// Copy of the low-level policy head for one skill over primitive
    /// actions, with a single slot and no termination head.
    pub fn from_policy(model: &SkillModel, skill: usize) -> Result<Self> {
        if skill >= model.k() {
            return Err(Error::InvalidSkill { skill, k: model.k() });
        }
        let src = &model.store;
        let head = &model.pi_head;
        let mut store = ParamStore::new();
        let hidden = copy_linear(&mut store, "hl.hidden", src, &head.hidden, None);
        let slots = store.add("hl.slots", Matrix::row_vector(src.value(head.skill).row(skill).to_vec()));
        let choice = copy_linear(&mut store, "hl.choice", src, &head.out, None);
        Ok(Self {
            store,
            hidden,
            slots,
            choice,
            termination: None,
            n_slots: 1,
            n_actions: model.cfg.num_actions,
            state_dim: model.cfg.width,
        })
    }

    pub fn random(state_dim: usize, hidden: usize, n_slots: usize, n_actions: usize, termination: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let h = Linear::new(&mut store, "hl.hidden", state_dim, hidden, &mut rng);
        let slots = store.add_glorot("hl.slots", n_slots, hidden, &mut rng);
        let choice = Linear::new(&mut store, "hl.choice", hidden, n_actions, &mut rng);
        let termination = termination.then(|| Linear::new(&mut store, "hl.termination", hidden, 2, &mut rng));
        Self { store, hidden: h, slots, choice, termination, n_slots, n_actions, state_dim }
    }

    pub fn has_termination(&self) -> bool {
        self.termination.is_some()
    }

    pub fn start_slot(&self) -> usize {
        self.n_slots - 1
    }

    /// `(choice logits B x A, termination logits B x 2)`.
    pub fn forward(&self, g: &mut Graph, x: Var, slots: &[usize]) -> (Var, Option<Var>) {
        let h = self.hidden.forward(g, &self.store, x);
        let e = g.param(&self.store, self.slots);
        let e = g.select_rows(e, slots);
        let h = g.add(h, e);
        let h = g.tanh(h);
        let c = self.choice.forward(g, &self.store, h);
        let t = self.termination.map(|l| l.forward(g, &self.store, h));
        (c, t)
    }

    pub fn eval(&self, x: &[f64], slot: usize) -> (Vec<f64>, Option<Vec<f64>>) {
        let mut h = self.hidden.eval(&self.store, &Matrix::row_vector(x.to_vec()));
        for (v, e) in h.row_mut(0).iter_mut().zip(self.store.value(self.slots).row(slot)) {
            *v = (*v + e).tanh();
        }
        let c = self.choice.eval(&self.store, &h).into_data();
        let t = self.termination.map(|l| l.eval(&self.store, &h).into_data());
        (c, t)
    }
}

/// Twin-able Q network over `[state, one-hot slot]`.
#[derive(Clone, Debug)]
pub struct Critic {
    pub store: ParamStore,
    l1: Linear,
    l2: Linear,
    out: Linear,
    n_slots: usize,
}

impl Critic {
    pub fn new(state_dim: usize, n_slots: usize, n_actions: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let l1 = Linear::new(&mut store, "critic.l1", state_dim + n_slots, hidden, rng);
        let l2 = Linear::new(&mut store, "critic.l2", hidden, hidden, rng);
        let out = Linear::new(&mut store, "critic.out", hidden, n_actions, rng);
        Self { store, l1, l2, out, n_slots }
    }

    fn input(&self, states: &[&[f64]], slots: &[usize]) -> Matrix {
        let d = states[0].len();
        let mut m = Matrix::zeros(states.len(), d + self.n_slots);
        for (i, (s, &k)) in states.iter().zip(slots).enumerate() {
            m.row_mut(i)[..d].copy_from_slice(s);
            m.set(i, d + k, 1.0);
        }
        m
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.l1.forward(g, &self.store, x);
        let h = g.relu(h);
        let h = self.l2.forward(g, &self.store, h);
        let h = g.relu(h);
        self.out.forward(g, &self.store, h)
    }

    pub fn eval(&self, states: &[&[f64]], slots: &[usize]) -> Matrix {
        let x = self.input(states, slots);
        let h = self.l1.eval(&self.store, &x).map(|v| v.max(0.0));
        let h = self.l2.eval(&self.store, &h).map(|v| v.max(0.0));
        self.out.eval(&self.store, &h)
    }

    fn soft_update(&mut self, src: &Critic, tau: f64) {
        let ids: Vec<ParamId> = self.store.ids().collect();
        for id in ids {
            let s = src.store.value(id).clone();
            let d = self.store.value_mut(id);
            *d = d.zip_map(&s, |a, b| (1.0 - tau) * a + tau * b);
        }
    }
}

/// One high-level decision: chosen at `state` with previous slot `slot`,
/// run for `steps` primitive steps collecting the discounted `reward`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub slot: usize,
    pub action: usize,
    pub reward: f64,
    pub steps: usize,
    pub next_state: Vec<f64>,
    pub next_slot: usize,
    /// Task solved; no bootstrap.
    pub done: bool,
}

#[derive(Clone, Debug)]
pub struct Replay {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl Replay {
    pub fn new(capacity: usize) -> Self {
        Self { items: VecDeque::with_capacity(capacity.min(1 << 16)), capacity: capacity.max(1) }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<&Transition> {
        (0..n).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect()
    }
}

/// Actor objective split into its parts; each is a batch mean.
#[derive(Clone, Copy, Debug)]
pub struct ActorLoss {
    pub sac_choice: Var,
    pub sac_termination: Var,
    pub kl_choice: Var,
    pub kl_termination: Var,
    pub total: Var,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub kl_choice: f64,
    pub kl_termination: f64,
}

/// Discrete soft actor-critic with KL penalties towards a frozen copy of
/// the initial actor.
#[derive(Clone, Debug)]
pub struct Learner {
    pub cfg: HRLConfig,
    pub actor: Actor,
    prior: Actor,
    critics: [Critic; 2],
    targets: [Critic; 2],
    actor_opt: Adam,
    critic_opts: [Adam; 2],
    pub updates: usize,
}

fn row_mean(g: &mut Graph, per_row: Var) -> Var {
    g.mean(per_row)
}

impl Learner {
    pub fn new(actor: Actor, cfg: &HRLConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC817);
        let mk = |rng: &mut ChaCha8Rng| Critic::new(actor.state_dim, actor.n_slots, actor.n_actions, cfg.critic_hidden, rng);
        let critics = [mk(&mut rng), mk(&mut rng)];
        let critic_opts = [Adam::new(&critics[0].store, cfg.critic_lr), Adam::new(&critics[1].store, cfg.critic_lr)];
        Self {
            cfg: cfg.clone(),
            prior: actor.clone(),
            actor_opt: Adam::new(&actor.store, cfg.actor_lr),
            actor,
            targets: critics.clone(),
            critics,
            critic_opts,
            updates: 0,
        }
    }

    fn min_q(critics: &[Critic; 2], states: &[&[f64]], slots: &[usize]) -> Matrix {
        let a = critics[0].eval(states, slots);
        let b = critics[1].eval(states, slots);
        a.zip_map(&b, f64::min)
    }

    /// Soft value of `(state, slot)` under the current actor and target
    /// critics. Keeping the previous choice is valued as choosing it again.
    fn soft_value(&self, state: &[f64], slot: usize, q: &[f64]) -> f64 {
        let alpha = self.cfg.sac_temperature;
        let (c, t) = self.actor.eval(state, slot);
        let lp = log_softmax(&c);
        let v_choice: f64 = lp.iter().zip(q).map(|(l, q)| l.exp() * (q - alpha * l)).sum();
        match t {
            Some(t) if slot != self.actor.start_slot() => {
                let lb = log_softmax(&t);
                let (p0, p1) = (lb[0].exp(), lb[1].exp());
                p1 * v_choice + p0 * q[slot] - alpha * (p0 * lb[0] + p1 * lb[1])
            }
            _ => v_choice,
        }
    }

    /// Critic values the actor is scored against: the twin minimum per
    /// choice, and per row the `(keep, switch)` values for the termination
    /// head, where switching is worth the soft value of a fresh choice.
    pub fn actor_targets(&self, batch: &[&Transition]) -> (Matrix, Matrix) {
        let alpha = self.cfg.sac_temperature;
        let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
        let slots: Vec<usize> = batch.iter().map(|t| t.slot).collect();
        let qmin = Self::min_q(&self.critics, &states, &slots);
        let mut qb = Matrix::zeros(batch.len(), 2);
        for (i, t) in batch.iter().enumerate() {
            let lp = log_softmax(&self.actor.eval(&t.state, t.slot).0);
            let v: f64 = lp.iter().zip(qmin.row(i)).map(|(l, q)| l.exp() * (q - alpha * l)).sum();
            if t.slot != self.actor.start_slot() {
                qb.set(i, 0, qmin.get(i, t.slot));
            }
            qb.set(i, 1, v);
        }
        (qmin, qb)
    }

    /// Actor objective on a batch with fresh critic targets.
    pub fn actor_loss(&self, g: &mut Graph, batch: &[&Transition]) -> ActorLoss {
        let (qmin, qb) = self.actor_targets(batch);
        self.actor_loss_with(g, batch, &qmin, &qb)
    }

    /// Actor objective against fixed targets from [`Self::actor_targets`].
    pub fn actor_loss_with(&self, g: &mut Graph, batch: &[&Transition], qmin: &Matrix, qb: &Matrix) -> ActorLoss {
        let alpha = self.cfg.sac_temperature;
        let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
        let slots: Vec<usize> = batch.iter().map(|t| t.slot).collect();
        let x = g.constant(Matrix::from_rows(&states.iter().map(|s| s.to_vec()).collect::<Vec<_>>()));
        let (c, t) = self.actor.forward(g, x, &slots);
        let lc = g.log_softmax_rows(c);
        let pc = g.exp(lc);
        let q = g.constant(qmin.clone());
        let al = g.scale(lc, alpha);
        let adv = g.sub(al, q);
        let sac = g.mul(pc, adv);
        let sac = g.row_sums(sac);
        let sac_choice = row_mean(g, sac);
        let (pc_prior, pt_prior) = self.prior_log_probs(&states, &slots);
        let lprior = g.constant(pc_prior);
        let d = g.sub(lc, lprior);
        let kl = g.mul(pc, d);
        let kl = g.row_sums(kl);
        let kl_choice = row_mean(g, kl);
        let zero = g.constant(Matrix::scalar(0.0));
        let switchable: Vec<usize> = (0..batch.len()).filter(|&i| slots[i] != self.actor.start_slot()).collect();
        let (sac_termination, kl_termination) = match (t, pt_prior) {
            (Some(t), Some(ptp)) if !switchable.is_empty() => {
                let lt_all = g.log_softmax_rows(t);
                let lt = g.select_rows(lt_all, &switchable);
                let pt = g.exp(lt);
                let qb = g.constant(Matrix::from_rows(&switchable.iter().map(|&i| qb.row(i).to_vec()).collect::<Vec<_>>()));
                let al = g.scale(lt, alpha);
                let adv = g.sub(al, qb);
                let s = g.mul(pt, adv);
                let s = g.row_sums(s);
                let s = row_mean(g, s);
                let lpr = g.constant(Matrix::from_rows(&switchable.iter().map(|&i| ptp.row(i).to_vec()).collect::<Vec<_>>()));
                let d = g.sub(lt, lpr);
                let k = g.mul(pt, d);
                let k = g.row_sums(k);
                (s, row_mean(g, k))
            }
            _ => (zero, zero),
        };
        let a1 = g.scale(kl_choice, self.cfg.alpha_skill);
        let a2 = g.scale(kl_termination, self.cfg.alpha_termination);
        let s = g.add(sac_choice, sac_termination);
        let s = g.add(s, a1);
        let total = g.add(s, a2);
        ActorLoss { sac_choice, sac_termination, kl_choice, kl_termination, total }
    }

    fn prior_log_probs(&self, states: &[&[f64]], slots: &[usize]) -> (Matrix, Option<Matrix>) {
        let mut c = Vec::with_capacity(states.len());
        let mut t = Vec::with_capacity(states.len());
        for (s, &k) in states.iter().zip(slots) {
            let (lc, lt) = self.prior.eval(s, k);
            c.push(log_softmax(&lc));
            if let Some(lt) = lt {
                t.push(log_softmax(&lt));
            }
        }
        let t = (!t.is_empty()).then(|| Matrix::from_rows(&t));
        (Matrix::from_rows(&c), t)
    }

    /// One critic step, one actor step and a target update.
    pub fn sac_update(&mut self, batch: &[&Transition]) -> Result<UpdateStats> {
        if batch.is_empty() {
            return Err(Error::MissingInput("empty replay batch".into()));
        }
        let gamma = self.cfg.gamma;
        let next_states: Vec<&[f64]> = batch.iter().map(|t| t.next_state.as_slice()).collect();
        let next_slots: Vec<usize> = batch.iter().map(|t| t.next_slot).collect();
        let qn = Self::min_q(&self.targets, &next_states, &next_slots);
        let y: Vec<f64> = batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let boot = if t.done { 0.0 } else { gamma.powi(t.steps as i32) * self.soft_value(&t.next_state, t.next_slot, qn.row(i)) };
                t.reward + boot
            })
            .collect();
        let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
        let slots: Vec<usize> = batch.iter().map(|t| t.slot).collect();
        let n_actions = self.actor.n_actions;
        let mut critic_loss = 0.0;
        for (c, opt) in self.critics.iter_mut().zip(&mut self.critic_opts) {
            let mut g = Graph::new();
            let x = g.constant(c.input(&states, &slots));
            let q = c.forward(&mut g, x);
            let idx = batch.iter().enumerate().map(|(i, t)| Some(i * n_actions + t.action)).collect();
            let qa = g.gather(q, idx, batch.len(), 1);
            let target = g.constant(Matrix::from_vec(batch.len(), 1, y.clone()));
            let d = g.sub(qa, target);
            let sq = g.mul(d, d);
            let l = g.mean(sq);
            let v = g.scalar(l);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("critic loss {v}")));
            }
            critic_loss += v / 2.0;
            let mut gr = g.backward(l, &c.store);
            gr.clip_norm(self.cfg.grad_clip);
            opt.step(&mut c.store, &gr);
        }
        let mut g = Graph::new();
        let al = self.actor_loss(&mut g, batch);
        let v = g.scalar(al.total);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("actor loss {v}")));
        }
        let mut gr: Grads = g.backward(al.total, &self.actor.store);
        gr.clip_norm(self.cfg.grad_clip);
        self.actor_opt.step(&mut self.actor.store, &gr);
        for (t, c) in self.targets.iter_mut().zip(&self.critics) {
            t.soft_update(c, self.cfg.tau);
        }
        self.updates += 1;
        Ok(UpdateStats {
            critic_loss,
            actor_loss: v,
            kl_choice: g.scalar(al.kl_choice),
            kl_termination: g.scalar(al.kl_termination),
        })
    }
}

/// Samples (or takes the mode of) a categorical given logits.
pub fn choose(logits: &[f64], greedy: bool, rng: &mut impl Rng) -> usize {
    if greedy {
        return crate::autograd::argmax(logits);
    }
    let p = softmax(logits);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}
