//! Initial segmentation: LLM-backed (prompt, call, parse, validate, cache)
//! or a deterministic oracle that chunks expert subgoal spans.

mod client;
mod parse;
mod prompt;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{enrich, validate_segmentation, EnrichedTrajectory, LengthPolicy, Segmentation, Trajectory, Violation};
use crate::error::{Error, Result};
use crate::gridworld::action_defs;

pub use client::{ChatBackend, HttpBackend, LlmConfig, ResponseCache, API_KEY_VAR, BASE_URL_VAR};
pub use parse::{normalize_action, parse_pairs, parse_response};
pub use prompt::{bound_sentence, build_prompt, estimate_tokens, with_feedback};

/// Language names for action ids, matched loosely on the way back.
#[derive(Clone, Debug)]
pub struct ActionVocab {
    names: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl ActionVocab {
    pub fn new(names: Vec<String>) -> Self {
        let lookup = names
            .iter()
            .enumerate()
            .map(|(i, n)| (normalize_action(n), i))
            .collect();
        Self { names, lookup }
    }

    pub fn gridworld() -> Self {
        Self::new(action_defs().into_iter().map(|d| d.name).collect())
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.lookup
            .get(&normalize_action(name))
            .copied()
            .ok_or_else(|| Error::Vocab(name.to_string()))
    }
}

/// Validates a parsed response against the trajectory it should cover.
pub fn check_response(
    traj: &Trajectory,
    seg: &Segmentation,
    ids: &[usize],
    policy: LengthPolicy,
) -> std::result::Result<(), Violation> {
    if let Some(p) = ids.iter().zip(&traj.actions).position(|(a, b)| a != b) {
        return Err(Violation::Order { position: p });
    }
    validate_segmentation(traj, seg, policy)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Llm,
    Oracle,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: Source,
    pub attempts: usize,
    pub network_calls: usize,
    pub cache_hits: usize,
    pub violations: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct SegmentOutcome {
    pub enriched: EnrichedTrajectory,
    pub provenance: Provenance,
}

/// Splits `[start, end)` greedily into chunks of at most `max_len`.
fn chunk(start: usize, end: usize, max_len: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut s = start;
    while s < end {
        let e = (s + max_len).min(end);
        out.push((s, e - 1));
        s = e;
    }
    out
}

/// Subgoal texts read back from a goal sentence.
pub fn subgoal_texts(goal: &str) -> Vec<String> {
    goal.split(", then ").map(|s| s.to_string()).collect()
}

/// Chunks each subgoal span (cumulative end counts in `boundaries`) into
/// pieces of at most `max_len`, annotated "<subgoal> step i".
pub fn oracle_segment(traj: &Trajectory, boundaries: &[usize], max_len: usize) -> Result<EnrichedTrajectory> {
    let texts = subgoal_texts(&traj.goal);
    if boundaries.is_empty()
        || texts.len() != boundaries.len()
        || boundaries.last() != Some(&traj.len())
        || boundaries.windows(2).any(|w| w[0] >= w[1])
        || boundaries[0] == 0
    {
        return Err(Error::Segmentation(format!(
            "boundaries {boundaries:?} do not match {} subgoals over {} steps",
            texts.len(),
            traj.len()
        )));
    }
    let mut segments = Vec::new();
    let mut start = 0;
    for (text, &end) in texts.iter().zip(boundaries) {
        for (i, (s, e)) in chunk(start, end, max_len).into_iter().enumerate() {
            segments.push(crate::corpus::Segment {
                start: s,
                end: e,
                annotation: format!("{text} step {}", i + 1),
            });
        }
        start = end;
    }
    enrich(traj, &Segmentation { segments })
}

/// Fixed-size chunks over the whole trajectory.
pub fn uniform_segment(traj: &Trajectory, max_len: usize) -> Result<EnrichedTrajectory> {
    let segments = chunk(0, traj.len(), max_len)
        .into_iter()
        .enumerate()
        .map(|(i, (s, e))| crate::corpus::Segment {
            start: s,
            end: e,
            annotation: format!("part {}", i + 1),
        })
        .collect();
    enrich(traj, &Segmentation { segments })
}

/// Asks the backend for a segmentation, retrying with the validator's
/// complaint appended. After `max_retries` rejected answers falls back to
/// the oracle (when boundaries are known) or to uniform chunks.
pub fn llm_segment(
    traj: &Trajectory,
    boundaries: Option<&[usize]>,
    cfg: &LlmConfig,
    backend: &dyn ChatBackend,
    cache: Option<&ResponseCache>,
) -> Result<SegmentOutcome> {
    traj.check()?;
    let vocab = ActionVocab::gridworld();
    let base = build_prompt(traj, &vocab, cfg.max_segments, cfg.policy);
    let mut prompt = base.clone();
    let mut prov = Provenance {
        source: Source::Llm,
        attempts: 0,
        network_calls: 0,
        cache_hits: 0,
        violations: Vec::new(),
    };
    for _ in 0..cfg.max_retries.max(1) {
        prov.attempts += 1;
        let cached = cache.and_then(|c| c.get(&cfg.model, &prompt));
        let text = match cached {
            Some(t) => {
                prov.cache_hits += 1;
                t
            }
            None => {
                prov.network_calls += 1;
                let t = backend.complete(&prompt).map_err(|e| Error::Llm {
                    attempts: prov.attempts,
                    msg: e.to_string(),
                })?;
                if let Some(c) = cache {
                    c.put(&cfg.model, &prompt, &t)?;
                }
                t
            }
        };
        let complaint = match parse_response(&text, &vocab) {
            Ok((seg, ids)) => match check_response(traj, &seg, &ids, cfg.policy) {
                Ok(()) if seg.segments.len() <= cfg.max_segments => {
                    let enriched = enrich(traj, &seg)?;
                    return Ok(SegmentOutcome { enriched, provenance: prov });
                }
                Ok(()) => format!(
                    "it has {} skills but at most {} are allowed",
                    seg.segments.len(),
                    cfg.max_segments
                ),
                Err(v) => v.to_string(),
            },
            Err(e) => e.to_string(),
        };
        log::debug!("segmentation attempt {} rejected: {complaint}", prov.attempts);
        prov.violations.push(complaint.clone());
        prompt = with_feedback(&base, &text, &complaint);
    }
    let enriched = match boundaries {
        Some(b) => {
            prov.source = Source::Oracle;
            oracle_segment(traj, b, cfg.policy.max_len)?
        }
        None => {
            prov.source = Source::Uniform;
            uniform_segment(traj, cfg.policy.max_len)?
        }
    };
    Ok(SegmentOutcome { enriched, provenance: prov })
}

/// Segments a corpus with at most `cfg.max_concurrency` requests in flight.
pub fn segment_corpus(
    trajs: &[Trajectory],
    boundaries: &[Option<Vec<usize>>],
    cfg: &LlmConfig,
    backend: &dyn ChatBackend,
    cache: Option<&ResponseCache>,
) -> Result<Vec<SegmentOutcome>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_concurrency.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| {
        trajs
            .par_iter()
            .enumerate()
            .map(|(i, t)| llm_segment(t, boundaries.get(i).and_then(|b| b.as_deref()), cfg, backend, cache))
            .collect()
    })
}

#[cfg(test)]
mod tests;
