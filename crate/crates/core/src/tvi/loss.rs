use rand::Rng;

use crate::autograd::{Graph, Matrix, Var};
use crate::error::{Error, Result};
use crate::nets::{relaxed_categorical_sample, Encoded, RelaxationConfig, SkillModel};
use crate::corpus::EnrichedTrajectory;

/// Raw head outputs for one trajectory, all logits.
///
/// `q_k`, `p_beta` and `p_k` carry `K + 1` rows per step, one per previous
/// skill plus the start slot (index `K`) used at the first step.
#[derive(Clone, Copy, Debug)]
pub struct Heads {
    pub q_beta: Var,
    pub q_k: Var,
    pub p_beta: Var,
    pub p_k: Var,
    /// `T*K x |A|` policy logits.
    pub pi: Var,
    pub k: usize,
    pub len: usize,
}

impl Heads {
    /// Runs all three models on a trajectory.
    pub fn build(g: &mut Graph, model: &SkillModel, traj: &EnrichedTrajectory) -> Result<(Self, Encoded)> {
        let enc = model.encode(g, &traj.observations, &traj.goal)?;
        let q = model.q_forward(g, &enc, traj)?;
        let p = model.p_forward(g, &enc, &traj.actions)?;
        let pi = model.pi_forward(g, &enc);
        Ok((
            Self {
                q_beta: q.beta_logits,
                q_k: q.k_logits,
                p_beta: p.beta_logits,
                p_k: p.k_logits,
                pi: pi.logits,
                k: model.k(),
                len: traj.len(),
            },
            enc,
        ))
    }

    /// Copies the q heads without a gradient path.
    pub fn detached_q(&self, g: &mut Graph) -> Self {
        Self {
            q_beta: g.detach(self.q_beta),
            q_k: g.detach(self.q_k),
            ..*self
        }
    }

    pub fn values(&self, g: &Graph, actions: &[usize]) -> Tables {
        let k = self.k;
        let lsm = |m: &Matrix| {
            let mut out = m.clone();
            for i in 0..m.rows() {
                out.row_mut(i).copy_from_slice(&crate::autograd::log_softmax(m.row(i)));
            }
            out
        };
        let pi = lsm(g.value(self.pi));
        let mut pi_logp = Matrix::zeros(self.len, k);
        for t in 0..self.len {
            for s in 0..k {
                pi_logp.set(t, s, pi.get(t * k + s, actions[t]));
            }
        }
        Tables {
            q_beta: lsm(g.value(self.q_beta)),
            q_k: lsm(g.value(self.q_k)),
            p_beta: lsm(g.value(self.p_beta)),
            p_k: lsm(g.value(self.p_k)),
            pi_logp,
            k,
        }
    }
}

/// Plain log-probability tables, laid out like [`Heads`] except that the
/// policy is reduced to `log pi(a_t | k)` as a `T x K` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Tables {
    pub q_beta: Matrix,
    pub q_k: Matrix,
    pub p_beta: Matrix,
    pub p_k: Matrix,
    pub pi_logp: Matrix,
    pub k: usize,
}

impl Tables {
    pub fn len(&self) -> usize {
        self.q_beta.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row of `log q(k_t | k_{t-1} = prev)`; `prev = None` is the start slot.
    pub fn q_k_row(&self, t: usize, prev: Option<usize>) -> &[f64] {
        self.q_k.row(t * (self.k + 1) + prev.unwrap_or(self.k))
    }

    pub fn p_k_row(&self, t: usize, prev: Option<usize>) -> &[f64] {
        self.p_k.row(t * (self.k + 1) + prev.unwrap_or(self.k))
    }

    pub fn p_beta_row(&self, t: usize, prev: Option<usize>) -> &[f64] {
        self.p_beta.row(t * (self.k + 1) + prev.unwrap_or(self.k))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElboMode {
    /// Marginalize the skill path analytically.
    Exact,
    /// Follow one relaxed sample of the skill path.
    Sampled,
}

/// The three ELBO components, each a scalar on the graph.
#[derive(Clone, Copy, Debug)]
pub struct ElboTerms {
    pub recon: Var,
    pub kl_beta: Var,
    pub kl_k: Var,
}

impl ElboTerms {
    /// `-(recon - w * (kl_beta + kl_k))`, to be minimized.
    pub fn loss(&self, g: &mut Graph, kl_weight: f64) -> Var {
        let kl = g.add(self.kl_beta, self.kl_k);
        let kl = g.scale(kl, kl_weight);
        let neg = g.neg(self.recon);
        g.add(neg, kl)
    }
}

struct Prepared {
    lqb: Var,
    qb: Var,
    lqk: Var,
    qk: Var,
    lpb: Var,
    lpk: Var,
    lpi: Var,
}

fn prepare(g: &mut Graph, h: &Heads, actions: &[usize]) -> Prepared {
    let lqb = g.log_softmax_rows(h.q_beta);
    let qb = g.exp(lqb);
    let lqk = g.log_softmax_rows(h.q_k);
    let qk = g.exp(lqk);
    let lpb = g.log_softmax_rows(h.p_beta);
    let lpk = g.log_softmax_rows(h.p_k);
    let lpi_all = g.log_softmax_rows(h.pi);
    let a = g.shape(h.pi).1;
    let idx = (0..h.len)
        .flat_map(|t| (0..h.k).map(move |s| Some((t * h.k + s) * a + actions[t])))
        .collect();
    let lpi = g.gather(lpi_all, idx, h.len, h.k);
    Prepared { lqb, qb, lqk, qk, lpb, lpk, lpi }
}

fn check_inputs(h: &Heads, beta_bar: &[u8], actions: &[usize]) -> Result<()> {
    if h.len == 0 || beta_bar.len() != h.len || actions.len() != h.len {
        return Err(Error::Shape("beta_bar/actions length differs from the heads".into()));
    }
    Ok(())
}

fn rows(g: &mut Graph, v: Var, t: usize, k: usize) -> Var {
    g.slice_rows(v, t * (k + 1), k)
}

fn start_row(g: &mut Graph, v: Var, k: usize) -> Var {
    g.slice_rows(v, k, 1)
}

/// Scalar `s` (1x1) repeated into an `n x 1` column.
fn column(g: &mut Graph, s: Var, n: usize) -> Var {
    g.select_rows(s, &vec![0; n])
}

/// ELBO components under the constrained factorization. Steps where
/// `beta_bar` is 0 copy the previous skill and add no KL; the first step
/// always switches.
pub fn elbo_terms(
    g: &mut Graph,
    h: &Heads,
    beta_bar: &[u8],
    actions: &[usize],
    mode: ElboMode,
    relax: RelaxationConfig,
    rng: &mut impl Rng,
) -> Result<ElboTerms> {
    check_inputs(h, beta_bar, actions)?;
    let k = h.k;
    let pr = prepare(g, h, actions);
    // First step: beta forced to 1, skill drawn from the start slot.
    let lq0 = start_row(g, pr.lqk, k);
    let q0 = start_row(g, pr.qk, k);
    let lp0 = start_row(g, pr.lpk, k);
    let d0 = g.sub(lq0, lp0);
    let kl0 = g.mul(q0, d0);
    let mut kl_k_terms = vec![g.sum(kl0)];
    let mut kl_b_terms = Vec::new();
    let mut z = match mode {
        ElboMode::Exact => q0,
        ElboMode::Sampled => {
            let l = start_row(g, h.q_k, k);
            relaxed_categorical_sample(g, l, relax, rng)?
        }
    };
    let mut path = vec![z];
    for t in 1..h.len {
        if beta_bar[t] == 0 {
            path.push(z);
            continue;
        }
        let qb_t = g.slice_rows(pr.qb, t, 1);
        let lqb_t = g.slice_rows(pr.lqb, t, 1);
        let qb0 = g.slice_cols(qb_t, 0, 1);
        let qb1 = g.slice_cols(qb_t, 1, 1);
        // KL over beta, averaged over the previous skill.
        let neg_h = g.mul(qb_t, lqb_t);
        let neg_h = g.sum(neg_h);
        let lpb_t = rows(g, pr.lpb, t, k);
        let qbt_t = g.transpose(qb_t);
        let cross = g.matmul(lpb_t, qbt_t);
        let cross = g.matmul(z, cross);
        kl_b_terms.push(g.sub(neg_h, cross));
        // KL over k, only paid when switching.
        let qk_t = rows(g, pr.qk, t, k);
        let lqk_t = rows(g, pr.lqk, t, k);
        let lpk_t = rows(g, pr.lpk, t, k);
        let d = g.sub(lqk_t, lpk_t);
        let per_prev = g.mul(qk_t, d);
        let per_prev = g.row_sums(per_prev);
        let klk = g.matmul(z, per_prev);
        kl_k_terms.push(g.mul(qb1, klk));
        // Next skill distribution.
        let switched = g.matmul(z, qk_t);
        let (w0, w1, new) = match mode {
            ElboMode::Exact => (qb0, qb1, switched),
            ElboMode::Sampled => {
                let qbl = g.slice_rows(h.q_beta, t, 1);
                let b = relaxed_categorical_sample(g, qbl, relax, rng)?;
                let lsw = g.log(switched);
                let ks = relaxed_categorical_sample(g, lsw, relax, rng)?;
                (g.slice_cols(b, 0, 1), g.slice_cols(b, 1, 1), ks)
            }
        };
        let keep = g.mul_col(z, w0);
        let take = g.mul_col(new, w1);
        z = g.add(keep, take);
        path.push(z);
    }
    let m = g.concat_rows(&path);
    let r = g.mul(m, pr.lpi);
    let recon = g.sum(r);
    let kl_k = sum_all(g, &kl_k_terms);
    let kl_beta = if kl_b_terms.is_empty() {
        g.constant(Matrix::scalar(0.0))
    } else {
        sum_all(g, &kl_b_terms)
    };
    Ok(ElboTerms { recon, kl_beta, kl_k })
}

fn sum_all(g: &mut Graph, vs: &[Var]) -> Var {
    let c = g.concat_rows(vs);
    g.sum(c)
}

/// Marginal skill distribution per step under q (`T x K`).
pub fn skill_marginals(t: &Tables, beta_bar: &[u8]) -> Matrix {
    let k = t.k;
    let mut out = Matrix::zeros(t.len(), k);
    let mut m: Vec<f64> = t.q_k_row(0, None).iter().map(|x| x.exp()).collect();
    out.row_mut(0).copy_from_slice(&m);
    for s in 1..t.len() {
        if beta_bar[s] == 1 {
            let b1 = t.q_beta.get(s, 1).exp();
            let mut next = vec![0.0; k];
            for (prev, &w) in m.iter().enumerate() {
                for (j, lq) in t.q_k_row(s, Some(prev)).iter().enumerate() {
                    next[j] += w * lq.exp();
                }
            }
            for j in 0..k {
                m[j] = (1.0 - b1) * m[j] + b1 * next[j];
            }
        }
        out.row_mut(s).copy_from_slice(&m);
    }
    out
}

/// Per-step and total compression terms.
#[derive(Clone, Debug)]
pub struct CodeLength {
    pub total: Var,
    pub per_step: Vec<f64>,
}

const LOG_EPS: f64 = 1e-12;

/// Entropy of each row (`n x 1`).
fn row_entropy(g: &mut Graph, p: Var) -> Var {
    let safe = g.add_scalar(p, LOG_EPS);
    let l = g.log(safe);
    let pl = g.mul(p, l);
    let s = g.row_sums(pl);
    g.neg(s)
}

/// Previous-skill weights per step: a one-hot along `path`, or the
/// q-marginal when no path is given.
fn prev_weights(g: &mut Graph, h: &Heads, pr_qk: Var, pr_qb: Var, beta_bar: &[u8], path: Option<&[usize]>) -> Vec<Var> {
    let k = h.k;
    match path {
        Some(p) => p
            .iter()
            .map(|&s| {
                let mut m = Matrix::zeros(1, k);
                m.set(0, s, 1.0);
                g.constant(m)
            })
            .collect(),
        None => {
            let mut m = start_row(g, pr_qk, k);
            let mut out = vec![m];
            for t in 1..h.len {
                if beta_bar[t] == 1 {
                    let qb_t = g.slice_rows(pr_qb, t, 1);
                    let qb0 = g.slice_cols(qb_t, 0, 1);
                    let qb1 = g.slice_cols(qb_t, 1, 1);
                    let qk_t = rows(g, pr_qk, t, k);
                    let sw = g.matmul(m, qk_t);
                    let a = g.mul_col(m, qb0);
                    let b = g.mul_col(sw, qb1);
                    m = g.add(a, b);
                }
                out.push(m);
            }
            out
        }
    }
}

/// Code length of the skill sequence in nats: per switchable step, the
/// entropy of `q(k) q(beta=1) + q(beta=0) [k = k_{t-1}]`. Steps with
/// `beta_bar = 0` cost nothing; the first step costs the entropy of q(k).
/// With `path = None` the previous skill is averaged under q.
pub fn mdl_loss(g: &mut Graph, h: &Heads, beta_bar: &[u8], path: Option<&[usize]>) -> Result<CodeLength> {
    if h.len == 0 || beta_bar.len() != h.len || path.is_some_and(|p| p.len() != h.len) {
        return Err(Error::Shape("mdl inputs disagree in length".into()));
    }
    let k = h.k;
    let lqk = g.log_softmax_rows(h.q_k);
    let qk = g.exp(lqk);
    let lqb = g.log_softmax_rows(h.q_beta);
    let qb = g.exp(lqb);
    let weights = prev_weights(g, h, qk, qb, beta_bar, path);
    let q0 = start_row(g, qk, k);
    let first = row_entropy(g, q0);
    let mut terms = vec![first];
    let mut per_step = vec![g.scalar(first)];
    let eye = {
        let mut m = Matrix::zeros(k, k);
        for i in 0..k {
            m.set(i, i, 1.0);
        }
        g.constant(m)
    };
    for t in 1..h.len {
        if beta_bar[t] == 0 {
            per_step.push(0.0);
            continue;
        }
        let qb_t = g.slice_rows(qb, t, 1);
        let qb0 = g.slice_cols(qb_t, 0, 1);
        let qb1 = g.slice_cols(qb_t, 1, 1);
        let qk_t = rows(g, qk, t, k);
        let c1 = column(g, qb1, k);
        let c0 = column(g, qb0, k);
        let a = g.mul_col(qk_t, c1);
        let b = g.mul_col(eye, c0);
        let mix = g.add(a, b);
        let ent = row_entropy(g, mix);
        let v = g.matmul(weights[t - 1], ent);
        per_step.push(g.scalar(v));
        terms.push(v);
    }
    Ok(CodeLength { total: sum_all(g, &terms), per_step })
}

/// How the switch indicator weights the comparator's per-step entropy.
#[derive(Clone, Copy, Debug)]
pub enum SwitchWeights<'a> {
    /// Use q(beta = 1).
    Expected,
    /// Use sampled switch flags.
    Sampled(&'a [u8]),
}

/// Comparator ignoring the copy term: `sum_t beta_t H(q_t(k))`.
pub fn love_loss(
    g: &mut Graph,
    h: &Heads,
    beta_bar: &[u8],
    weights: SwitchWeights<'_>,
    path: Option<&[usize]>,
) -> Result<CodeLength> {
    if h.len == 0 || beta_bar.len() != h.len || path.is_some_and(|p| p.len() != h.len) {
        return Err(Error::Shape("comparator inputs disagree in length".into()));
    }
    if let SwitchWeights::Sampled(b) = weights {
        if b.len() != h.len {
            return Err(Error::Shape("switch flags length differs".into()));
        }
    }
    let k = h.k;
    let lqk = g.log_softmax_rows(h.q_k);
    let qk = g.exp(lqk);
    let lqb = g.log_softmax_rows(h.q_beta);
    let qb = g.exp(lqb);
    let prev = prev_weights(g, h, qk, qb, beta_bar, path);
    let q0 = start_row(g, qk, k);
    let first = row_entropy(g, q0);
    let mut terms = vec![first];
    let mut per_step = vec![g.scalar(first)];
    for t in 1..h.len {
        let on = match weights {
            SwitchWeights::Sampled(b) => b[t] == 1,
            SwitchWeights::Expected => beta_bar[t] == 1,
        };
        if !on {
            per_step.push(0.0);
            continue;
        }
        let qk_t = rows(g, qk, t, k);
        let ent = row_entropy(g, qk_t);
        let mut v = g.matmul(prev[t - 1], ent);
        if let SwitchWeights::Expected = weights {
            let qb_t = g.slice_rows(qb, t, 1);
            let qb1 = g.slice_cols(qb_t, 1, 1);
            v = g.mul(v, qb1);
        }
        per_step.push(g.scalar(v));
        terms.push(v);
    }
    Ok(CodeLength { total: sum_all(g, &terms), per_step })
}
