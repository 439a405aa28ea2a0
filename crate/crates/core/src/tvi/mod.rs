//! Temporal variational inference over skill sequences with a code-length
//! penalty, plus skill extraction from a trained model.

mod loss;
mod sample;

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{
    elbo_terms, love_loss, mdl_loss, skill_marginals, CodeLength, ElboMode, ElboTerms, Heads, SwitchWeights, Tables,
};
pub use sample::{constrained_decode, constrained_sample};

use crate::autograd::{Adam, Graph, Grads, Matrix};
use crate::corpus::{EnrichedTrajectory, LatentAssignment};
use crate::error::{Error, Result};
use crate::nets::{save_checkpoint, ModelConfig, RelaxationConfig, SkillModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compression {
    /// Entropy of the switch-or-copy mixture.
    Mdl,
    /// Switch-weighted entropy of q(k) only.
    Love,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Weight of the compression term.
    pub lambda: f64,
    pub kl_weight: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs trained on the ELBO alone; `None` means the first 10%.
    pub warmup_epochs: Option<usize>,
    pub temperature_start: f64,
    pub temperature_end: f64,
    pub prune_threshold: f64,
    pub compression: Compression,
    pub mode: ElboMode,
    pub grad_clip: f64,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(100),
            lambda: 0.01,
            kl_weight: 1e-4,
            lr: 3e-4,
            batch_size: 16,
            epochs: 80,
            warmup_epochs: None,
            temperature_start: 1.0,
            temperature_end: 0.3,
            prune_threshold: 0.01,
            compression: Compression::Mdl,
            mode: ElboMode::Exact,
            grad_clip: 1.0,
            checkpoint_every: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be a finite non-negative number");
        }
        if !(self.kl_weight >= 0.0) || !(self.lr > 0.0) {
            return bad("kl_weight must be >= 0 and lr > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.temperature_start > 0.0 && self.temperature_end > 0.0) {
            return bad("temperatures must be positive");
        }
        if !(0.0..=1.0).contains(&self.prune_threshold) {
            return bad("prune_threshold must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn warmup(&self) -> usize {
        self.warmup_epochs.unwrap_or(self.epochs / 10)
    }

    /// Linear anneal from start to end over the run.
    pub fn temperature(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.temperature_end;
        }
        let f = epoch as f64 / (self.epochs - 1) as f64;
        self.temperature_start + f * (self.temperature_end - self.temperature_start)
    }
}

/// One line of the training log; losses are per-trajectory means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub elbo: f64,
    pub recon: f64,
    pub kl_beta: f64,
    pub kl_k: f64,
    pub mdl: f64,
    pub total: f64,
    pub lr: f64,
    pub temperature: f64,
    pub warmup: bool,
    /// Norm of the compression gradient on the posterior parameters for
    /// the first trajectory of the epoch.
    pub mdl_grad_norm_q: f64,
}

pub struct TrainOutput {
    pub model: SkillModel,
    pub log: Vec<EpochLog>,
}

/// Value, gradient and diagnostics for one trajectory.
pub struct TrajLoss {
    pub total: f64,
    pub recon: f64,
    pub kl_beta: f64,
    pub kl_k: f64,
    pub compression: f64,
    pub grads: Grads,
    pub compression_grad_q: Option<f64>,
}

/// Builds the full objective for one trajectory and back-propagates it.
pub fn trajectory_loss(
    model: &SkillModel,
    traj: &EnrichedTrajectory,
    cfg: &TrainConfig,
    warmup: bool,
    temperature: f64,
    rng: &mut ChaCha8Rng,
    diagnose: bool,
) -> Result<TrajLoss> {
    let mut g = Graph::new();
    let (h, _) = Heads::build(&mut g, model, traj)?;
    let relax = RelaxationConfig { temperature, hard: false };
    let terms = elbo_terms(&mut g, &h, &traj.beta_bar, &traj.actions, cfg.mode, relax, rng)?;
    let elbo_loss = terms.loss(&mut g, cfg.kl_weight);
    let ch = if warmup { h.detached_q(&mut g) } else { h };
    let comp = match cfg.compression {
        Compression::Mdl => mdl_loss(&mut g, &ch, &traj.beta_bar, None)?,
        Compression::Love => love_loss(&mut g, &ch, &traj.beta_bar, SwitchWeights::Expected, None)?,
    };
    let weighted = g.scale(comp.total, cfg.lambda);
    let total = g.add(elbo_loss, weighted);
    let value = g.scalar(total);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss {value} (recon {}, kl_beta {}, kl_k {}, compression {})",
            g.scalar(terms.recon),
            g.scalar(terms.kl_beta),
            g.scalar(terms.kl_k),
            g.scalar(comp.total)
        )));
    }
    let grads = g.backward(total, &model.store);
    let compression_grad_q = diagnose.then(|| {
        let gc = g.backward(comp.total, &model.store);
        gc.norm_of(&model.q_param_ids())
    });
    Ok(TrajLoss {
        total: value,
        recon: g.scalar(terms.recon),
        kl_beta: g.scalar(terms.kl_beta),
        kl_k: g.scalar(terms.kl_k),
        compression: g.scalar(comp.total),
        grads,
        compression_grad_q,
    })
}

fn check_corpus(corpus: &[EnrichedTrajectory], num_actions: usize) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::MissingInput("training corpus is empty".into()));
    }
    for (i, t) in corpus.iter().enumerate() {
        t.check().map_err(|e| Error::CorpusLine { line: i + 1, msg: e.to_string() })?;
        if let Some(&a) = t.actions.iter().find(|&&a| a >= num_actions) {
            return Err(Error::InvalidAction(a));
        }
    }
    Ok(())
}

/// Trains q, p and pi jointly. With `out_dir`, writes `train_log.jsonl`,
/// periodic checkpoints and the final `model.json`. A non-finite loss or
/// gradient aborts the run with the epoch and batch in the error; the last
/// checkpoint on disk is left untouched.
pub fn train(corpus: &[EnrichedTrajectory], cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutput> {
    cfg.validate()?;
    check_corpus(corpus, cfg.model.num_actions)?;
    let mut model = SkillModel::new(cfg.model.clone())?;
    let mut opt = Adam::new(&model.store, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log_file = match out_dir {
        Some(d) => {
            fs::create_dir_all(d.join("checkpoints"))?;
            Some(fs::File::create(d.join("train_log.jsonl"))?)
        }
        None => None,
    };
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let warmup = epoch < cfg.warmup();
        let temperature = cfg.temperature(epoch);
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 5];
        let mut grad_q = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc = Grads::zeros_like(&model.store);
            for (j, &i) in batch.iter().enumerate() {
                let diagnose = b == 0 && j == 0;
                let r = trajectory_loss(&model, &corpus[i], cfg, warmup, temperature, &mut rng, diagnose)
                    .map_err(|e| Error::NonFinite(format!("epoch {epoch} batch {b}: {e}")))?;
                if let Some(n) = r.compression_grad_q {
                    grad_q = n;
                }
                acc.add(&r.grads);
                for (s, v) in sums.iter_mut().zip([r.total, r.recon, r.kl_beta, r.kl_k, r.compression]) {
                    *s += v;
                }
            }
            acc.scale(1.0 / batch.len() as f64);
            if !acc.is_finite() {
                return Err(Error::NonFinite(format!("epoch {epoch} batch {b}: gradient")));
            }
            acc.clip_norm(cfg.grad_clip);
            opt.step(&mut model.store, &acc);
        }
        let n = corpus.len() as f64;
        let [total, recon, kl_beta, kl_k, mdl] = sums.map(|s| s / n);
        let entry = EpochLog {
            epoch,
            elbo: recon - kl_beta - kl_k,
            recon,
            kl_beta,
            kl_k,
            mdl,
            total,
            lr: cfg.lr,
            temperature,
            warmup,
            mdl_grad_norm_q: grad_q,
        };
        log::info!(
            "epoch {epoch}: total {total:.4} recon {recon:.4} kl_b {kl_beta:.4} kl_k {kl_k:.4} mdl {mdl:.4} |dq mdl| {grad_q:.3e}"
        );
        if let (Some(f), Some(d)) = (log_file.as_mut(), out_dir) {
            writeln!(f, "{}", serde_json::to_string(&entry)?)?;
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                save_checkpoint(&model, &d.join("checkpoints").join(format!("epoch_{:04}.json", epoch + 1)))?;
            }
        }
        log.push(entry);
    }
    if let Some(d) = out_dir {
        save_checkpoint(&model, &d.join("model.json"))?;
    }
    Ok(TrainOutput { model, log })
}

/// Plain q/p/pi tables for one trajectory.
pub fn tables(model: &SkillModel, traj: &EnrichedTrajectory) -> Result<Tables> {
    let mut g = Graph::new();
    let (h, _) = Heads::build(&mut g, model, traj)?;
    Ok(h.values(&g, &traj.actions))
}

/// Skills that survive pruning, with per-skill segment counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillLibrary {
    pub k: usize,
    pub threshold: f64,
    /// Decoded segments per skill id.
    pub usage: Vec<usize>,
    pub total_segments: usize,
    /// Kept skill ids, ascending.
    pub kept: Vec<usize>,
}

impl SkillLibrary {
    pub fn from_assignments(k: usize, assignments: &[LatentAssignment], threshold: f64) -> Self {
        let mut usage = vec![0usize; k];
        for a in assignments {
            for (b, &s) in a.beta.iter().zip(&a.skills) {
                if *b == 1 {
                    usage[s] += 1;
                }
            }
        }
        let total: usize = usage.iter().sum();
        let kept = (0..k)
            .filter(|&s| usage[s] > 0 && usage[s] as f64 >= threshold * total as f64)
            .collect();
        Self { k, threshold, usage, total_segments: total, kept }
    }

    pub fn size(&self) -> usize {
        self.kept.len()
    }

    pub fn usage_fraction(&self, skill: usize) -> f64 {
        if self.total_segments == 0 {
            0.0
        } else {
            self.usage[skill] as f64 / self.total_segments as f64
        }
    }
}

/// Greedy constrained decode of every trajectory, then usage pruning.
pub fn extract_skills(
    model: &SkillModel,
    corpus: &[EnrichedTrajectory],
    threshold: f64,
) -> Result<(SkillLibrary, Vec<LatentAssignment>)> {
    let mut out = Vec::with_capacity(corpus.len());
    for t in corpus {
        out.push(constrained_decode(&tables(model, t)?, &t.beta_bar)?);
    }
    Ok((SkillLibrary::from_assignments(model.k(), &out, threshold), out))
}

/// Fraction of steps whose action is the policy argmax under the decoded
/// skill.
pub fn reconstruction_accuracy(model: &SkillModel, corpus: &[EnrichedTrajectory]) -> Result<f64> {
    let (mut hit, mut n) = (0usize, 0usize);
    for t in corpus {
        let mut g = Graph::new();
        let (h, _) = Heads::build(&mut g, model, t)?;
        let tab = h.values(&g, &t.actions);
        let dec = constrained_decode(&tab, &t.beta_bar)?;
        let logits: &Matrix = g.value(h.pi);
        for (s, (&k, &a)) in dec.skills.iter().zip(&t.actions).enumerate() {
            hit += usize::from(logits.argmax_row(s * h.k + k) == a);
            n += 1;
        }
    }
    Ok(hit as f64 / n.max(1) as f64)
}
