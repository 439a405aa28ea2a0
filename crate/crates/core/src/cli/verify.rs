use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Matrix};
use crate::error::Result;
use crate::gridworld::NUM_ACTIONS;
use crate::nets::RelaxationConfig;
use crate::oracle::{enumerate_elbo, exact_code_length};
use crate::tvi::{constrained_sample, elbo_terms, love_loss, mdl_loss, ElboMode, Heads, SwitchWeights};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Instances the brute-force oracle can enumerate: `T <= 6`, `K <= 3`,
/// at most three segment openings, logits uniform in (-2, 2).
pub fn random_tiny_instance(rng: &mut impl Rng) -> (Graph, Heads, Vec<u8>, Vec<usize>) {
    let t = rng.gen_range(1..=6);
    let k = rng.gen_range(1..=3);
    let mut g = Graph::new();
    let mut m = |r: usize, c: usize| {
        let v = (0..r * c).map(|_| rng.gen_range(-2.0..2.0)).collect();
        g.constant(Matrix::from_vec(r, c, v))
    };
    let heads = Heads {
        q_beta: m(t, 2),
        q_k: m(t * (k + 1), k),
        p_beta: m(t * (k + 1), 2),
        p_k: m(t * (k + 1), k),
        pi: m(t * k, NUM_ACTIONS),
        k,
        len: t,
    };
    let mut bb = vec![0u8; t];
    bb[0] = 1;
    let extra = rng.gen_range(0..=2.min(t - 1));
    for i in sample(rng, t - 1, extra) {
        bb[i + 1] = 1;
    }
    let actions = (0..t).map(|_| rng.gen_range(0..NUM_ACTIONS)).collect();
    (g, heads, bb, actions)
}

/// Two-step heads with every q row equal to `(q_k, q_switch)`.
pub fn fixed_q_heads(g: &mut Graph, q_k: &[f64], q_switch: f64) -> Heads {
    let (k, t) = (q_k.len(), 2);
    let lk: Vec<f64> = q_k.iter().map(|p| p.ln()).collect();
    let qb = [(1.0 - q_switch).ln(), q_switch.ln()];
    Heads {
        q_beta: g.constant(Matrix::from_vec(t, 2, qb.repeat(t))),
        q_k: g.constant(Matrix::from_vec(t * (k + 1), k, lk.repeat(t * (k + 1)))),
        p_beta: g.constant(Matrix::zeros(t * (k + 1), 2)),
        p_k: g.constant(Matrix::zeros(t * (k + 1), k)),
        pi: g.constant(Matrix::zeros(t * k, NUM_ACTIONS)),
        k,
        len: t,
    }
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.into(), passed, detail }
}

fn hand_values() -> Result<Vec<Check>> {
    let mut g = Graph::new();
    let h = fixed_q_heads(&mut g, &[0.1, 0.2, 0.7], 0.1);
    let mdl = mdl_loss(&mut g, &h, &[1, 1], Some(&[0, 0]))?.per_step[1];
    let love = love_loss(&mut g, &h, &[1, 1], SwitchWeights::Expected, Some(&[0, 0]))?.per_step[1];
    Ok(vec![
        check("mdl_hand_value", (mdl - 0.35).abs() <= 5e-3, format!("{mdl:.6} vs 0.35 +- 0.005")),
        check("love_hand_value", (love - 0.08).abs() <= 5e-3, format!("{love:.6} vs 0.08 +- 0.005")),
    ])
}

fn oracle_equivalence(instances: usize) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut elbo_err, mut mdl_err) = (0.0f64, 0.0f64);
    for _ in 0..instances {
        let (mut g, h, bb, actions) = random_tiny_instance(&mut rng);
        let tab = h.values(&g, &actions);
        let (recon, kl) = enumerate_elbo(&tab, &bb)?;
        let mut srng = ChaCha8Rng::seed_from_u64(0);
        let e = elbo_terms(&mut g, &h, &bb, &actions, ElboMode::Exact, RelaxationConfig::default(), &mut srng)?;
        let got = g.scalar(e.recon) - g.scalar(e.kl_beta) - g.scalar(e.kl_k);
        elbo_err = elbo_err.max((got - (recon - kl)).abs());
        let path: Vec<usize> = (0..h.len).map(|_| rng.gen_range(0..h.k)).collect();
        let want = exact_code_length(&tab, &bb, &path)?;
        let c = mdl_loss(&mut g, &h, &bb, Some(&path))?;
        mdl_err = mdl_err.max((g.scalar(c.total) - want).abs());
    }
    Ok(vec![
        check("elbo_matches_enumeration", elbo_err <= 1e-5, format!("max error {elbo_err:.3e} over {instances} instances")),
        check("mdl_matches_oracle", mdl_err <= 1e-9, format!("max error {mdl_err:.3e} over {instances} instances")),
    ])
}

fn constraint_invariants(samples: usize) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut bad = 0usize;
    for _ in 0..samples {
        let (g, h, bb, actions) = random_tiny_instance(&mut rng);
        let a = constrained_sample(&h.values(&g, &actions), &bb, &mut rng)?;
        let ok = a.beta[0] == 1
            && (1..a.beta.len()).all(|t| (bb[t] == 1 || a.beta[t] == 0) && (a.beta[t] == 1 || a.skills[t] == a.skills[t - 1]))
            && a.beta.iter().map(|&b| b as usize).sum::<usize>() <= bb.iter().map(|&b| b as usize).sum();
        bad += usize::from(!ok);
    }
    Ok(check("sampled_assignments_respect_constraints", bad == 0, format!("{bad} violations in {samples} samples")))
}

/// The regression suite run by `langskill verify`.
pub fn verify_suite() -> Result<Vec<Check>> {
    let mut out = hand_values()?;
    out.extend(oracle_equivalence(200)?);
    out.push(constraint_invariants(10_000)?);
    Ok(out)
}
