use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::loss::Tables;
use crate::autograd::argmax;
use crate::corpus::LatentAssignment;
use crate::error::{Error, Result};

fn draw(logp: &[f64], rng: &mut impl Rng) -> Result<usize> {
    let w: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    let d = WeightedIndex::new(&w).map_err(|e| Error::NonFinite(format!("categorical weights: {e}")))?;
    Ok(d.sample(rng))
}

/// Draws `(beta, k)` from q respecting the language constraints: the first
/// step always switches and steps with `beta_bar = 0` copy the last skill.
pub fn constrained_sample(t: &Tables, beta_bar: &[u8], rng: &mut impl Rng) -> Result<LatentAssignment> {
    if beta_bar.len() != t.len() || t.is_empty() {
        return Err(Error::Shape("beta_bar length differs from the tables".into()));
    }
    let mut beta = vec![1u8];
    let mut skills = vec![draw(t.q_k_row(0, None), rng)?];
    for s in 1..t.len() {
        let prev = skills[s - 1];
        let b = if beta_bar[s] == 0 { 0 } else { draw(t.q_beta.row(s), rng)? as u8 };
        let k = if b == 1 { draw(t.q_k_row(s, Some(prev)), rng)? } else { prev };
        beta.push(b);
        skills.push(k);
    }
    Ok(LatentAssignment { beta, skills })
}

/// Most likely switch and skill at each step under the same constraints.
pub fn constrained_decode(t: &Tables, beta_bar: &[u8]) -> Result<LatentAssignment> {
    if beta_bar.len() != t.len() || t.is_empty() {
        return Err(Error::Shape("beta_bar length differs from the tables".into()));
    }
    let mut beta = vec![1u8];
    let mut skills = vec![argmax(t.q_k_row(0, None))];
    for s in 1..t.len() {
        let prev = skills[s - 1];
        let b = u8::from(beta_bar[s] == 1 && t.q_beta.get(s, 1) > t.q_beta.get(s, 0));
        let k = if b == 1 { argmax(t.q_k_row(s, Some(prev))) } else { prev };
        beta.push(b);
        skills.push(k);
    }
    Ok(LatentAssignment { beta, skills })
}
