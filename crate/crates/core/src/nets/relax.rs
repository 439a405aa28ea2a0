use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Matrix, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxationConfig {
    pub temperature: f64,
    /// Exact one-hot forward value with a straight-through gradient.
    pub hard: bool,
}

impl Default for RelaxationConfig {
    fn default() -> Self {
        Self { temperature: 1.0, hard: false }
    }
}

fn gumbel(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

/// Gumbel-softmax sample per row of `logits`.
pub fn relaxed_categorical_sample(
    g: &mut Graph,
    logits: Var,
    cfg: RelaxationConfig,
    rng: &mut impl Rng,
) -> Result<Var> {
    if cfg.temperature.is_nan() || cfg.temperature <= 0.0 {
        return Err(Error::Config(format!("temperature {} must be positive", cfg.temperature)));
    }
    if !g.value(logits).is_finite() {
        return Err(Error::NonFinite("logits passed to the relaxed sampler".into()));
    }
    let (r, c) = g.shape(logits);
    let noise = g.constant(Matrix::from_vec(r, c, (0..r * c).map(|_| gumbel(rng)).collect()));
    let z = g.add(logits, noise);
    let z = g.scale(z, 1.0 / cfg.temperature);
    let y = g.softmax_rows(z);
    if !cfg.hard {
        return Ok(y);
    }
    let soft = g.value(y);
    let mut hard = Matrix::zeros(r, c);
    for i in 0..r {
        hard.set(i, soft.argmax_row(i), 1.0);
    }
    Ok(g.with_value(y, hard))
}
