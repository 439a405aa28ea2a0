//! The three sequence models (variational posterior q, causal prior p,
//! low-level policy pi) over shared per-modality encoders.

mod checkpoint;
mod layers;
mod relax;
mod text;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Matrix, ParamId, ParamStore, Var};
use crate::corpus::EnrichedTrajectory;
use crate::error::{Error, Result};
use crate::gridworld::{cell, Observation, NUM_ACTIONS, VIEW_SIZE};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use layers::{sinusoid, KvCache, LayerNorm, Linear, Transformer};
pub use relax::{relaxed_categorical_sample, RelaxationConfig};
pub use text::{bag, bucket, clause_bag, tokens};

const CELL_FEATURES: usize = cell::NUM_TYPES + cell::NUM_COLORS + cell::NUM_STATES;
const CELLS: usize = VIEW_SIZE * VIEW_SIZE;
/// Centres of the stride-2 second convolution (rows/cols 0, 2, 4, 6).
const POOLED: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Skill-library size.
    pub k: usize,
    pub num_actions: usize,
    /// Per-modality embedding size.
    pub embed: usize,
    /// Transformer width.
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub head_hidden: usize,
    pub conv_channels: usize,
    pub word_buckets: usize,
    pub goal_slots: usize,
    pub use_annotations: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk(100)
    }
}

impl ModelConfig {
    /// Single-core default.
    pub fn desk(k: usize) -> Self {
        Self {
            k,
            num_actions: NUM_ACTIONS,
            embed: 32,
            width: 64,
            layers: 2,
            heads: 4,
            ff: 128,
            head_hidden: 32,
            conv_channels: 16,
            word_buckets: 128,
            goal_slots: 5,
            use_annotations: true,
            seed: 0,
        }
    }

    /// Full-size setting: 256-d encoders, 512-d width, 3 layers, 8 heads.
    pub fn large(k: usize) -> Self {
        Self {
            embed: 256,
            width: 512,
            layers: 3,
            heads: 8,
            ff: 1024,
            head_hidden: 256,
            conv_channels: 32,
            word_buckets: 1024,
            ..Self::desk(k)
        }
    }

    /// For gradient checks.
    pub fn tiny(k: usize) -> Self {
        Self {
            embed: 4,
            width: 8,
            layers: 1,
            heads: 2,
            ff: 8,
            head_hidden: 6,
            conv_channels: 3,
            word_buckets: 8,
            goal_slots: 2,
            ..Self::desk(k)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.k == 0 {
            return bad("k must be positive");
        }
        if self.num_actions == 0 {
            return bad("num_actions must be positive");
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return bad("width must be a positive multiple of heads");
        }
        if self.embed == 0 || self.ff == 0 || self.head_hidden == 0 || self.conv_channels == 0 {
            return bad("layer sizes must be positive");
        }
        if self.word_buckets == 0 || self.goal_slots == 0 {
            return bad("text encoder sizes must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Encoders {
    conv1: Linear,
    conv2: Linear,
    obs: Linear,
    action: Linear,
    annotation: Linear,
    goal: Linear,
}

#[derive(Clone, Debug)]
struct QHeads {
    beta: Linear,
    hidden: Linear,
    prev: ParamId,
    k: Linear,
}

#[derive(Clone, Debug)]
pub(crate) struct PHeads {
    pub hidden: Linear,
    pub prev: ParamId,
    pub beta: Linear,
    pub k: Linear,
}

#[derive(Clone, Debug)]
pub(crate) struct PiHead {
    pub(crate) hidden: Linear,
    pub(crate) skill: ParamId,
    pub(crate) out: Linear,
}

/// Parameters and wiring of all three models.
#[derive(Clone, Debug)]
pub struct SkillModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    enc: Encoders,
    q_in: Linear,
    q_trunk: Transformer,
    q_heads: QHeads,
    p_in: Linear,
    p_trunk: Transformer,
    pub(crate) p_heads: PHeads,
    pi_in: Linear,
    pi_trunk: Transformer,
    pub(crate) pi_head: PiHead,
}

/// Encoded inputs shared by the three trunks.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub obs: Var,
    /// Goal embedding repeated on every row.
    pub goal: Var,
    pub len: usize,
}

/// Posterior outputs. `k_logits` has `K + 1` rows per step, one per
/// previous skill, the last being the start slot used at `t = 0`.
#[derive(Clone, Copy, Debug)]
pub struct QOut {
    pub beta_logits: Var,
    pub k_logits: Var,
}

/// Prior outputs, laid out like [`QOut::k_logits`] for both heads.
#[derive(Clone, Copy, Debug)]
pub struct POut {
    pub beta_logits: Var,
    pub k_logits: Var,
}

/// Policy logits, `K` rows per step (one per skill).
#[derive(Clone, Copy, Debug)]
pub struct PiOut {
    pub logits: Var,
}

fn one_hot_obs(o: &Observation) -> [[u8; 3]; CELLS] {
    let mut out = [[0u8; 3]; CELLS];
    for r in 0..VIEW_SIZE {
        for c in 0..VIEW_SIZE {
            out[r * VIEW_SIZE + c] = o.cell(r, c);
        }
    }
    out
}

/// First-stage patches: `T*49 x 9*CELL_FEATURES`, same padding.
fn conv1_patches(obs: &[Observation]) -> Matrix {
    let cols = 9 * CELL_FEATURES;
    let mut m = Matrix::zeros(obs.len() * CELLS, cols);
    for (t, o) in obs.iter().enumerate() {
        let cells = one_hot_obs(o);
        for r in 0..VIEW_SIZE as i32 {
            for c in 0..VIEW_SIZE as i32 {
                let row = m.row_mut(t * CELLS + (r as usize) * VIEW_SIZE + c as usize);
                for dr in -1..=1i32 {
                    for dc in -1..=1i32 {
                        let (rr, cc) = (r + dr, c + dc);
                        if rr < 0 || cc < 0 || rr >= VIEW_SIZE as i32 || cc >= VIEW_SIZE as i32 {
                            continue;
                        }
                        let n = ((dr + 1) * 3 + dc + 1) as usize;
                        let v = cells[rr as usize * VIEW_SIZE + cc as usize];
                        row[n * CELL_FEATURES + v[0] as usize] = 1.0;
                        row[n * CELL_FEATURES + cell::NUM_TYPES + v[1] as usize] = 1.0;
                        row[n * CELL_FEATURES + cell::NUM_TYPES + cell::NUM_COLORS + v[2] as usize] = 1.0;
                    }
                }
            }
        }
    }
    m
}

/// Gather map from first-stage maps (`T*49 x C`) to stride-2 patches laid
/// out as `T*16 x 9*C`.
fn conv2_index(t: usize, c: usize) -> Vec<Option<usize>> {
    let mut idx = Vec::with_capacity(t * POOLED * POOLED * 9 * c);
    for s in 0..t {
        for pr in 0..POOLED as i32 {
            for pc in 0..POOLED as i32 {
                for dr in -1..=1i32 {
                    for dc in -1..=1i32 {
                        let (r, cc) = (2 * pr + dr, 2 * pc + dc);
                        let inside = r >= 0 && cc >= 0 && r < VIEW_SIZE as i32 && cc < VIEW_SIZE as i32;
                        for ch in 0..c {
                            idx.push(inside.then(|| {
                                (s * CELLS + r as usize * VIEW_SIZE + cc as usize) * c + ch
                            }));
                        }
                    }
                }
            }
        }
    }
    idx
}

fn gather_plain(m: &Matrix, idx: &[Option<usize>], rows: usize, cols: usize) -> Matrix {
    let src = m.data();
    Matrix::from_vec(rows, cols, idx.iter().map(|i| i.map_or(0.0, |j| src[j])).collect())
}

fn one_hot_rows(ids: &[usize], n: usize) -> Matrix {
    let mut m = Matrix::zeros(ids.len(), n);
    for (i, &a) in ids.iter().enumerate() {
        m.set(i, a, 1.0);
    }
    m
}

/// Row `(t, j)` of the product table pairs step row `t` with slot row `j`.
fn pair_index(t: usize, slots: usize) -> (Vec<usize>, Vec<usize>) {
    let mut steps = Vec::with_capacity(t * slots);
    let mut which = Vec::with_capacity(t * slots);
    for s in 0..t {
        for j in 0..slots {
            steps.push(s);
            which.push(j);
        }
    }
    (steps, which)
}

impl SkillModel {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut s = ParamStore::new();
        let (e, d, k, a, h) = (cfg.embed, cfg.width, cfg.k, cfg.num_actions, cfg.head_hidden);
        let c = cfg.conv_channels;
        let enc = Encoders {
            conv1: Linear::new(&mut s, "enc.conv1", 9 * CELL_FEATURES, c, &mut rng),
            conv2: Linear::new(&mut s, "enc.conv2", 9 * c, c, &mut rng),
            obs: Linear::new(&mut s, "enc.obs", POOLED * POOLED * c, e, &mut rng),
            action: Linear::new(&mut s, "enc.action", a + 1, e, &mut rng),
            annotation: Linear::new(&mut s, "enc.annotation", cfg.word_buckets, e, &mut rng),
            goal: Linear::new(&mut s, "enc.goal", cfg.word_buckets * cfg.goal_slots, e, &mut rng),
        };
        let tr = |s: &mut ParamStore, name: &str, causal: bool, rng: &mut ChaCha8Rng| {
            Transformer::new(s, name, d, cfg.layers, cfg.heads, cfg.ff, causal, rng)
        };
        let q_in = Linear::new(&mut s, "q.in", 4 * e + 2, d, &mut rng);
        let q_trunk = tr(&mut s, "q.trunk", false, &mut rng);
        let q_heads = QHeads {
            beta: Linear::new(&mut s, "q.beta", d, 2, &mut rng),
            hidden: Linear::new(&mut s, "q.k_hidden", d, h, &mut rng),
            prev: s.add_glorot("q.k_prev", k + 1, h, &mut rng),
            k: Linear::new(&mut s, "q.k", h, k, &mut rng),
        };
        let p_in = Linear::new(&mut s, "p.in", 3 * e, d, &mut rng);
        let p_trunk = tr(&mut s, "p.trunk", true, &mut rng);
        let p_heads = PHeads {
            hidden: Linear::new(&mut s, "p.hidden", d, h, &mut rng),
            prev: s.add_glorot("p.prev", k + 1, h, &mut rng),
            beta: Linear::new(&mut s, "p.beta", h, 2, &mut rng),
            k: Linear::new(&mut s, "p.k", h, k, &mut rng),
        };
        let pi_in = Linear::new(&mut s, "pi.in", 2 * e, d, &mut rng);
        let pi_trunk = tr(&mut s, "pi.trunk", true, &mut rng);
        let pi_head = PiHead {
            hidden: Linear::new(&mut s, "pi.hidden", d, h, &mut rng),
            skill: s.add_glorot("pi.skill", k, h, &mut rng),
            out: Linear::new(&mut s, "pi.out", h, a, &mut rng),
        };
        Ok(Self {
            cfg,
            store: s,
            enc,
            q_in,
            q_trunk,
            q_heads,
            p_in,
            p_trunk,
            p_heads,
            pi_in,
            pi_trunk,
            pi_head,
        })
    }

    pub fn k(&self) -> usize {
        self.cfg.k
    }

    /// Parameter ids by prefix (`"q."`, `"p."`, `"pi."`, `"enc."`).
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.store.ids().filter(|&id| self.store.name(id).starts_with(prefix)).collect()
    }

    pub fn q_param_ids(&self) -> Vec<ParamId> {
        self.ids_with_prefix("q.")
    }

    fn encode_obs(&self, g: &mut Graph, obs: &[Observation]) -> Var {
        let t = obs.len();
        let c = self.cfg.conv_channels;
        let patches = g.constant(conv1_patches(obs));
        let h1 = self.enc.conv1.forward(g, &self.store, patches);
        let h1 = g.relu(h1);
        let p2 = g.gather(h1, conv2_index(t, c), t * POOLED * POOLED, 9 * c);
        let h2 = self.enc.conv2.forward(g, &self.store, p2);
        let h2 = g.relu(h2);
        // Rows of the `T*16 x C` map are already in flatten order.
        let n = POOLED * POOLED * c;
        let flat_idx = (0..t * n).map(Some).collect();
        let flat = g.gather(h2, flat_idx, t, n);
        let e = self.enc.obs.forward(g, &self.store, flat);
        g.tanh(e)
    }

    fn encode_obs_plain(&self, o: &Observation) -> Vec<f64> {
        let c = self.cfg.conv_channels;
        let s = &self.store;
        let h1 = self.enc.conv1.eval(s, &conv1_patches(std::slice::from_ref(o))).map(|v| v.max(0.0));
        let p2 = gather_plain(&h1, &conv2_index(1, c), POOLED * POOLED, 9 * c);
        let h2 = self.enc.conv2.eval(s, &p2).map(|v| v.max(0.0));
        let flat = Matrix::from_vec(1, POOLED * POOLED * c, h2.into_data());
        self.enc.obs.eval(s, &flat).map(f64::tanh).into_data()
    }

    fn goal_features(&self, goal: &str) -> Matrix {
        Matrix::row_vector(clause_bag(goal, self.cfg.word_buckets, self.cfg.goal_slots))
    }

    fn encode_goal_plain(&self, goal: &str) -> Vec<f64> {
        self.enc.goal.eval(&self.store, &self.goal_features(goal)).map(f64::tanh).into_data()
    }

    fn encode_action_plain(&self, a: Option<usize>) -> Vec<f64> {
        let x = one_hot_rows(&[a.unwrap_or(self.cfg.num_actions)], self.cfg.num_actions + 1);
        self.enc.action.eval(&self.store, &x).map(f64::tanh).into_data()
    }

    /// Encodes observations and goal once for all three trunks.
    pub fn encode(&self, g: &mut Graph, obs: &[Observation], goal: &str) -> Result<Encoded> {
        if obs.is_empty() {
            return Err(Error::Shape("empty sequence".into()));
        }
        let o = self.encode_obs(g, obs);
        let gf = g.constant(self.goal_features(goal));
        let ge = self.enc.goal.forward(g, &self.store, gf);
        let ge = g.tanh(ge);
        let goal = g.select_rows(ge, &vec![0; obs.len()]);
        Ok(Encoded { obs: o, goal, len: obs.len() })
    }

    fn encode_actions(&self, g: &mut Graph, ids: &[usize]) -> Var {
        let x = g.constant(one_hot_rows(ids, self.cfg.num_actions + 1));
        let e = self.enc.action.forward(g, &self.store, x);
        g.tanh(e)
    }

    /// Hidden table `tanh(h W + b + E[slot])` for every (step, slot) pair.
    fn pair_hidden(&self, g: &mut Graph, h: Var, hidden: &Linear, slots_emb: ParamId, slots: usize) -> Var {
        let t = g.shape(h).0;
        let a = hidden.forward(g, &self.store, h);
        let e = g.param(&self.store, slots_emb);
        let (steps, which) = pair_index(t, slots);
        let ar = g.select_rows(a, &steps);
        let er = g.select_rows(e, &which);
        let s = g.add(ar, er);
        g.tanh(s)
    }

    pub fn q_forward(&self, g: &mut Graph, enc: &Encoded, traj: &EnrichedTrajectory) -> Result<QOut> {
        traj.check()?;
        let t = enc.len;
        if traj.len() != t {
            return Err(Error::Shape("encoded length differs from trajectory".into()));
        }
        let act = self.encode_actions(g, &traj.actions);
        let ann = if self.cfg.use_annotations {
            let bags: Vec<f64> = traj
                .annotations
                .iter()
                .flat_map(|a| bag(a, self.cfg.word_buckets))
                .collect();
            let x = g.constant(Matrix::from_vec(t, self.cfg.word_buckets, bags));
            let e = self.enc.annotation.forward(g, &self.store, x);
            g.tanh(e)
        } else {
            g.constant(Matrix::zeros(t, self.cfg.embed))
        };
        let bb: Vec<usize> = traj.beta_bar.iter().map(|&b| b as usize).collect();
        let bb = g.constant(one_hot_rows(&bb, 2));
        let x = g.concat_cols(&[enc.obs, act, ann, enc.goal, bb]);
        let x = self.q_in.forward(g, &self.store, x);
        let h = self.q_trunk.forward(g, &self.store, x);
        let beta_logits = self.q_heads.beta.forward(g, &self.store, h);
        let hid = self.pair_hidden(g, h, &self.q_heads.hidden, self.q_heads.prev, self.cfg.k + 1);
        let k_logits = self.q_heads.k.forward(g, &self.store, hid);
        Ok(QOut { beta_logits, k_logits })
    }

    /// Prior over `(o_t, a_{t-1}, G)`, causal in time.
    pub fn p_forward(&self, g: &mut Graph, enc: &Encoded, actions: &[usize]) -> Result<POut> {
        let t = enc.len;
        if actions.len() < t.saturating_sub(1) {
            return Err(Error::Shape("not enough actions for the prior".into()));
        }
        let prev: Vec<usize> = (0..t)
            .map(|i| if i == 0 { self.cfg.num_actions } else { actions[i - 1] })
            .collect();
        let act = self.encode_actions(g, &prev);
        let x = g.concat_cols(&[enc.obs, act, enc.goal]);
        let x = self.p_in.forward(g, &self.store, x);
        let h = self.p_trunk.forward(g, &self.store, x);
        let hid = self.pair_hidden(g, h, &self.p_heads.hidden, self.p_heads.prev, self.cfg.k + 1);
        let beta_logits = self.p_heads.beta.forward(g, &self.store, hid);
        let k_logits = self.p_heads.k.forward(g, &self.store, hid);
        Ok(POut { beta_logits, k_logits })
    }

    /// Action logits for every (step, skill) pair.
    pub fn pi_forward(&self, g: &mut Graph, enc: &Encoded) -> PiOut {
        let x = g.concat_cols(&[enc.obs, enc.goal]);
        let x = self.pi_in.forward(g, &self.store, x);
        let h = self.pi_trunk.forward(g, &self.store, x);
        let hid = self.pair_hidden(g, h, &self.pi_head.hidden, self.pi_head.skill, self.cfg.k);
        PiOut {
            logits: self.pi_head.out.forward(g, &self.store, hid),
        }
    }

    /// Action logits of one skill over a whole prefix (last row is step t).
    pub fn pi_logits_for_skill(&self, obs: &[Observation], goal: &str, skill: usize) -> Result<Vec<f64>> {
        if skill >= self.cfg.k {
            return Err(Error::InvalidSkill { skill, k: self.cfg.k });
        }
        let mut g = Graph::new();
        let enc = self.encode(&mut g, obs, goal)?;
        let out = self.pi_forward(&mut g, &enc);
        let row = (obs.len() - 1) * self.cfg.k + skill;
        Ok(g.value(out.logits).row(row).to_vec())
    }

    /// Starts an online rollout of the causal models.
    pub fn online(&self, goal: &str) -> OnlineState {
        OnlineState {
            goal: self.encode_goal_plain(goal),
            p_cache: self.p_trunk.new_cache(),
            pi_cache: self.pi_trunk.new_cache(),
            prev_action: None,
            p_h: Vec::new(),
            pi_h: Vec::new(),
        }
    }

    /// Feeds the next observation through the p and pi trunks.
    pub fn observe(&self, st: &mut OnlineState, o: &Observation) {
        let oe = self.encode_obs_plain(o);
        let ae = self.encode_action_plain(st.prev_action);
        let px: Vec<f64> = oe.iter().chain(&ae).chain(&st.goal).copied().collect();
        let px = self.p_in.eval(&self.store, &Matrix::row_vector(px));
        st.p_h = self.p_trunk.step(&self.store, px.row(0), &mut st.p_cache);
        let pix: Vec<f64> = oe.iter().chain(&st.goal).copied().collect();
        let pix = self.pi_in.eval(&self.store, &Matrix::row_vector(pix));
        st.pi_h = self.pi_trunk.step(&self.store, pix.row(0), &mut st.pi_cache);
    }

    /// Records the action actually taken after the last observation.
    pub fn acted(&self, st: &mut OnlineState, a: usize) {
        st.prev_action = Some(a);
    }

    fn slot_hidden(&self, h: &[f64], hidden: &Linear, emb: ParamId, slot: usize) -> Matrix {
        let mut a = hidden.eval(&self.store, &Matrix::row_vector(h.to_vec()));
        let e = self.store.value(emb).row(slot);
        for (x, y) in a.row_mut(0).iter_mut().zip(e) {
            *x = (*x + y).tanh();
        }
        a
    }

    /// Prior `(beta logits, k logits)` at the current step given the
    /// previous skill (`None` at the first step).
    pub fn prior_logits(&self, st: &OnlineState, prev: Option<usize>) -> (Vec<f64>, Vec<f64>) {
        let slot = prev.unwrap_or(self.cfg.k);
        let hid = self.slot_hidden(&st.p_h, &self.p_heads.hidden, self.p_heads.prev, slot);
        (
            self.p_heads.beta.eval(&self.store, &hid).into_data(),
            self.p_heads.k.eval(&self.store, &hid).into_data(),
        )
    }

    pub fn policy_logits(&self, st: &OnlineState, skill: usize) -> Result<Vec<f64>> {
        if skill >= self.cfg.k {
            return Err(Error::InvalidSkill { skill, k: self.cfg.k });
        }
        let hid = self.slot_hidden(&st.pi_h, &self.pi_head.hidden, self.pi_head.skill, skill);
        Ok(self.pi_head.out.eval(&self.store, &hid).into_data())
    }
}

/// Incremental state of the causal models during a rollout.
#[derive(Clone, Debug)]
pub struct OnlineState {
    goal: Vec<f64>,
    p_cache: KvCache,
    pi_cache: KvCache,
    prev_action: Option<usize>,
    /// Latest prior trunk output.
    pub p_h: Vec<f64>,
    pub pi_h: Vec<f64>,
}

impl OnlineState {
    pub fn steps(&self) -> usize {
        self.p_cache.len()
    }
}

#[cfg(test)]
mod tests;
