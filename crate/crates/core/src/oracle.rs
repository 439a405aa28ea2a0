//! Brute-force references for the inference objectives on short
//! trajectories: every constrained latent path is listed explicitly.

use crate::corpus::LatentAssignment;
use crate::error::{Error, Result};
use crate::tvi::Tables;

/// Largest number of paths the enumerators will visit.
pub const MAX_ASSIGNMENTS: u64 = 100_000;

/// Number of constrained paths: K at the first step, then `K + 1` choices
/// (copy, or switch to any skill) wherever `beta_bar` is 1.
pub fn count_assignments(beta_bar: &[u8], k: usize) -> u128 {
    if beta_bar.is_empty() {
        return 0;
    }
    beta_bar[1..]
        .iter()
        .filter(|&&b| b == 1)
        .fold(k as u128, |n, _| n.saturating_mul(k as u128 + 1))
}

/// Lists every `(beta, k)` path consistent with `beta_bar`.
pub fn enumerate_assignments(beta_bar: &[u8], k: usize) -> Result<Vec<LatentAssignment>> {
    if beta_bar.is_empty() || k == 0 {
        return Err(Error::Shape("need at least one step and one skill".into()));
    }
    let n = count_assignments(beta_bar, k);
    if n > MAX_ASSIGNMENTS as u128 {
        return Err(Error::Infeasible(format!("{n} paths exceed the limit of {MAX_ASSIGNMENTS}")));
    }
    let mut paths: Vec<LatentAssignment> = (0..k)
        .map(|s| LatentAssignment { beta: vec![1], skills: vec![s] })
        .collect();
    for &bb in &beta_bar[1..] {
        let mut next = Vec::with_capacity(paths.len() * (k + 1));
        for p in paths {
            let last = *p.skills.last().unwrap();
            let mut keep = p.clone();
            keep.beta.push(0);
            keep.skills.push(last);
            if bb == 1 {
                for s in 0..k {
                    let mut q = p.clone();
                    q.beta.push(1);
                    q.skills.push(s);
                    next.push(q);
                }
            }
            next.push(keep);
        }
        paths = next;
    }
    Ok(paths)
}

/// `log q(path)` and `log p(path)` from the tables.
fn path_log_probs(t: &Tables, beta_bar: &[u8], a: &LatentAssignment) -> (f64, f64) {
    let mut lq = t.q_k_row(0, None)[a.skills[0]];
    let mut lp = t.p_k_row(0, None)[a.skills[0]];
    for s in 1..t.len() {
        if beta_bar[s] == 0 {
            continue;
        }
        let prev = Some(a.skills[s - 1]);
        let b = a.beta[s] as usize;
        lq += t.q_beta.get(s, b);
        lp += t.p_beta_row(s, prev)[b];
        if b == 1 {
            lq += t.q_k_row(s, prev)[a.skills[s]];
            lp += t.p_k_row(s, prev)[a.skills[s]];
        }
    }
    (lq, lp)
}

/// ELBO terms by enumeration: `(recon, kl)` with
/// `recon = E_q sum_t log pi(a_t | k_t)` and `kl = E_q [log q - log p]`.
pub fn enumerate_elbo(t: &Tables, beta_bar: &[u8]) -> Result<(f64, f64)> {
    if beta_bar.len() != t.len() {
        return Err(Error::Shape("beta_bar length differs from the tables".into()));
    }
    let (mut recon, mut kl) = (0.0, 0.0);
    for a in enumerate_assignments(beta_bar, t.k)? {
        let (lq, lp) = path_log_probs(t, beta_bar, &a);
        let w = lq.exp();
        let r: f64 = a.skills.iter().enumerate().map(|(s, &k)| t.pi_logp.get(s, k)).sum();
        recon += w * r;
        kl += w * (lq - lp);
    }
    Ok((recon, kl))
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Code length in nats of one step: the entropy of
/// `q_switch * q_k + (1 - q_switch) * onehot(prev)`, or of `q_k` alone when
/// there is no previous skill.
pub fn code_length_step(q_k: &[f64], q_switch: f64, prev: Option<usize>) -> f64 {
    let Some(prev) = prev else {
        return entropy(q_k);
    };
    let mix: Vec<f64> = q_k
        .iter()
        .enumerate()
        .map(|(j, &p)| q_switch * p + if j == prev { 1.0 - q_switch } else { 0.0 })
        .collect();
    entropy(&mix)
}

/// Comparator step: `q_switch * H(q_k)`.
pub fn love_step(q_k: &[f64], q_switch: f64) -> f64 {
    q_switch * entropy(q_k)
}

/// Code length of a whole trajectory along a fixed previous-skill path.
pub fn exact_code_length(t: &Tables, beta_bar: &[u8], path: &[usize]) -> Result<f64> {
    if beta_bar.len() != t.len() || path.len() != t.len() {
        return Err(Error::Shape("inputs disagree in length".into()));
    }
    let probs = |row: &[f64]| row.iter().map(|l| l.exp()).collect::<Vec<_>>();
    let mut total = code_length_step(&probs(t.q_k_row(0, None)), 1.0, None);
    for s in 1..t.len() {
        if beta_bar[s] == 1 {
            let prev = path[s - 1];
            total += code_length_step(&probs(t.q_k_row(s, Some(prev))), t.q_beta.get(s, 1).exp(), Some(prev));
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_counts_match_hand_values() {
        assert_eq!(enumerate_assignments(&[1], 3).unwrap().len(), 3);
        assert_eq!(enumerate_assignments(&[1, 0, 0], 2).unwrap().len(), 2);
        assert_eq!(enumerate_assignments(&[1, 1], 2).unwrap().len(), 6);
        assert_eq!(count_assignments(&[1, 1, 0, 1], 3), 3 * 4 * 4);
    }

    #[test]
    fn too_many_paths_is_refused() {
        let bb = vec![1u8; 12];
        assert!(matches!(enumerate_assignments(&bb, 5), Err(Error::Infeasible(_))));
    }

    #[test]
    fn enumerated_paths_are_distinct_and_valid() {
        let bb = [1, 1, 0, 1];
        let all = enumerate_assignments(&bb, 2).unwrap();
        let set: std::collections::HashSet<_> = all.iter().map(|a| (a.beta.clone(), a.skills.clone())).collect();
        assert_eq!(set.len(), all.len());
        for a in &all {
            a.check(2, Some(&bb)).unwrap();
        }
    }

    #[test]
    fn code_length_hand_values() {
        let q = [0.1, 0.2, 0.7];
        assert!((code_length_step(&q, 0.1, Some(0)) - 0.35).abs() < 5e-3);
        assert!((code_length_step(&q, 0.1, Some(2)) - 0.154).abs() < 5e-3);
        assert!((love_step(&q, 0.1) - 0.080).abs() < 5e-3);
        assert_eq!(code_length_step(&[1.0, 0.0], 0.3, Some(0)), 0.0);
    }
}
