//! Trajectories, segmentations and their JSONL storage.
//!
//! Step indices are zero-based throughout; segment ends are inclusive.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gridworld::{Observation, TaskSpec};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub goal: String,
    pub observations: Vec<Observation>,
    pub actions: Vec<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        if self.actions.is_empty() {
            return Err(Error::Shape("trajectory has no steps".into()));
        }
        if self.observations.len() != self.actions.len() {
            return Err(Error::Shape(format!(
                "{} observations for {} actions",
                self.observations.len(),
                self.actions.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub annotation: String,
}

impl Segment {
    pub fn len(&self) -> usize {
        (self.end + 1).saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segmentation {
    pub segments: Vec<Segment>,
}

impl Segmentation {
    /// Builds contiguous segments from lengths.
    pub fn from_lengths(lengths: &[usize], annotations: &[String]) -> Self {
        let mut start = 0;
        let segments = lengths
            .iter()
            .zip(annotations)
            .map(|(&n, a)| {
                let s = Segment {
                    start,
                    end: start + n - 1,
                    annotation: a.clone(),
                };
                start += n;
                s
            })
            .collect();
        Self { segments }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LengthPolicy {
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for LengthPolicy {
    fn default() -> Self {
        Self { min_len: 1, max_len: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    Empty,
    Gap { segment: usize, expected: usize, found: usize },
    Overlap { segment: usize, expected: usize, found: usize },
    Reversed { segment: usize },
    Length { segment: usize, len: usize, policy: LengthPolicy },
    Coverage { covered: usize, len: usize },
    Order { position: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Empty => write!(f, "no segments were given"),
            Violation::Gap { segment, expected, found } => write!(
                f,
                "segment {} starts at action {} but action {} is not covered",
                segment + 1,
                found + 1,
                expected + 1
            ),
            Violation::Overlap { segment, expected, found } => write!(
                f,
                "segment {} starts at action {} which overlaps the previous segment (expected {})",
                segment + 1,
                found + 1,
                expected + 1
            ),
            Violation::Reversed { segment } => write!(f, "segment {} ends before it starts", segment + 1),
            Violation::Length { segment, len, policy } => write!(
                f,
                "segment {} has {} actions; each segment must have between {} and {}",
                segment + 1,
                len,
                policy.min_len,
                policy.max_len
            ),
            Violation::Coverage { covered, len } => write!(
                f,
                "segments cover {covered} actions but the sequence has {len}"
            ),
            Violation::Order { position } => write!(
                f,
                "action {} of the concatenated segments differs from the given sequence",
                position + 1
            ),
        }
    }
}

/// Returns the first violation, scanning segments in order.
pub fn validate_segmentation(
    traj: &Trajectory,
    seg: &Segmentation,
    policy: LengthPolicy,
) -> std::result::Result<(), Violation> {
    validate_spans(traj.len(), seg, policy)
}

pub fn validate_spans(
    len: usize,
    seg: &Segmentation,
    policy: LengthPolicy,
) -> std::result::Result<(), Violation> {
    if seg.segments.is_empty() {
        return Err(Violation::Empty);
    }
    let mut next = 0usize;
    for (i, s) in seg.segments.iter().enumerate() {
        if s.start > next {
            return Err(Violation::Gap { segment: i, expected: next, found: s.start });
        }
        if s.start < next {
            return Err(Violation::Overlap { segment: i, expected: next, found: s.start });
        }
        if s.end < s.start {
            return Err(Violation::Reversed { segment: i });
        }
        let n = s.len();
        if n < policy.min_len || n > policy.max_len {
            return Err(Violation::Length { segment: i, len: n, policy });
        }
        next = s.end + 1;
    }
    if next != len {
        return Err(Violation::Coverage { covered: next, len });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnrichedTrajectory {
    pub goal: String,
    pub observations: Vec<Observation>,
    pub actions: Vec<usize>,
    pub beta_bar: Vec<u8>,
    pub annotations: Vec<String>,
}

impl EnrichedTrajectory {
    pub fn base(&self) -> Trajectory {
        Trajectory {
            goal: self.goal.clone(),
            observations: self.observations.clone(),
            actions: self.actions.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn num_segments(&self) -> usize {
        self.beta_bar.iter().filter(|&&b| b == 1).count()
    }

    /// Checks flag and annotation consistency.
    pub fn check(&self) -> Result<()> {
        self.base().check()?;
        let t = self.len();
        if self.beta_bar.len() != t || self.annotations.len() != t {
            return Err(Error::Shape("beta_bar/annotations length differs from actions".into()));
        }
        if self.beta_bar[0] != 1 {
            return Err(Error::Segmentation("first step must open a segment".into()));
        }
        for i in 1..t {
            match self.beta_bar[i] {
                0 if self.annotations[i] != self.annotations[i - 1] => {
                    return Err(Error::Segmentation(format!(
                        "annotation changes inside a segment at step {i}"
                    )))
                }
                0 | 1 => {}
                b => return Err(Error::Segmentation(format!("flag {b} at step {i} is not binary"))),
            }
        }
        Ok(())
    }

    /// Segment boundaries read back from the flags.
    pub fn segmentation(&self) -> Segmentation {
        let mut segments: Vec<Segment> = Vec::new();
        for (i, &b) in self.beta_bar.iter().enumerate() {
            if b == 1 || segments.is_empty() {
                segments.push(Segment {
                    start: i,
                    end: i,
                    annotation: self.annotations[i].clone(),
                });
            } else if let Some(last) = segments.last_mut() {
                last.end = i;
            }
        }
        Segmentation { segments }
    }
}

/// Attaches flags and per-step annotations. Only cover and order are
/// checked here; length bounds are a segmenter concern.
pub fn enrich(traj: &Trajectory, seg: &Segmentation) -> Result<EnrichedTrajectory> {
    traj.check()?;
    let loose = LengthPolicy { min_len: 1, max_len: usize::MAX };
    validate_spans(traj.len(), seg, loose).map_err(|v| Error::Segmentation(v.to_string()))?;
    let mut beta_bar = vec![0u8; traj.len()];
    let mut annotations = vec![String::new(); traj.len()];
    for s in &seg.segments {
        beta_bar[s.start] = 1;
        for a in &mut annotations[s.start..=s.end] {
            a.clone_from(&s.annotation);
        }
    }
    Ok(EnrichedTrajectory {
        goal: traj.goal.clone(),
        observations: traj.observations.clone(),
        actions: traj.actions.clone(),
        beta_bar,
        annotations,
    })
}

/// Per-step skill ids and switch flags.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentAssignment {
    pub beta: Vec<u8>,
    pub skills: Vec<usize>,
}

impl LatentAssignment {
    pub fn check(&self, k: usize, beta_bar: Option<&[u8]>) -> Result<()> {
        let t = self.beta.len();
        if t == 0 || self.skills.len() != t {
            return Err(Error::Shape("assignment lengths disagree".into()));
        }
        if self.beta[0] != 1 {
            return Err(Error::Segmentation("first step must switch".into()));
        }
        for i in 0..t {
            if self.skills[i] >= k {
                return Err(Error::InvalidSkill { skill: self.skills[i], k });
            }
            if i > 0 && self.beta[i] == 0 && self.skills[i] != self.skills[i - 1] {
                return Err(Error::Segmentation(format!("skill changes without a switch at step {i}")));
            }
            if let Some(bb) = beta_bar {
                if bb[i] == 0 && self.beta[i] == 1 {
                    return Err(Error::Segmentation(format!("switch inside a segment at step {i}")));
                }
            }
        }
        Ok(())
    }

    pub fn num_switches(&self) -> usize {
        self.beta.iter().filter(|&&b| b == 1).count()
    }
}

/// Task record kept next to a demonstration corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub task: TaskSpec,
    pub boundaries: Vec<usize>,
}

pub fn save_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::CorpusLine {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn save_corpus(path: &Path, corpus: &[Trajectory]) -> Result<()> {
    save_jsonl(path, corpus)
}

pub fn load_corpus(path: &Path) -> Result<Vec<Trajectory>> {
    let out: Vec<Trajectory> = load_jsonl(path)?;
    for (i, t) in out.iter().enumerate() {
        t.check().map_err(|e| Error::CorpusLine { line: i + 1, msg: e.to_string() })?;
    }
    Ok(out)
}

pub fn save_enriched(path: &Path, corpus: &[EnrichedTrajectory]) -> Result<()> {
    save_jsonl(path, corpus)
}

pub fn load_enriched(path: &Path) -> Result<Vec<EnrichedTrajectory>> {
    let out: Vec<EnrichedTrajectory> = load_jsonl(path)?;
    for (i, t) in out.iter().enumerate() {
        t.check().map_err(|e| Error::CorpusLine { line: i + 1, msg: e.to_string() })?;
    }
    Ok(out)
}

/// sha256 over the canonical JSON of each record.
pub fn content_hash<T: Serialize>(items: &[T]) -> String {
    let mut h = Sha256::new();
    for it in items {
        h.update(serde_json::to_vec(it).expect("serializable"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

pub fn bytes_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(bytes_hash(&std::fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{sample_task, scripted_expert, Level};
    use proptest::prelude::*;

    fn toy(t: usize) -> Trajectory {
        let obs = Observation([[[1, 0, 0]; 7]; 7]);
        Trajectory {
            goal: "go to the red ball".into(),
            observations: vec![obs; t],
            actions: (0..t).map(|i| i % 6).collect(),
        }
    }

    fn spans(v: &[(usize, usize)]) -> Segmentation {
        Segmentation {
            segments: v
                .iter()
                .enumerate()
                .map(|(i, &(s, e))| Segment { start: s, end: e, annotation: format!("part {i}") })
                .collect(),
        }
    }

    #[test]
    fn single_segment_sets_only_first_flag() {
        let e = enrich(&toy(6), &spans(&[(0, 5)])).unwrap();
        assert_eq!(e.beta_bar, vec![1, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn unit_segments_set_every_flag() {
        let s: Vec<_> = (0..4).map(|i| (i, i)).collect();
        let e = enrich(&toy(4), &spans(&s)).unwrap();
        assert_eq!(e.beta_bar, vec![1; 4]);
    }

    #[test]
    fn thirteen_segments_over_forty_four_actions() {
        let lens = [2, 3, 2, 6, 5, 3, 3, 2, 5, 2, 4, 4, 3];
        assert_eq!(lens.iter().sum::<usize>(), 44);
        let ann: Vec<String> = (0..13).map(|i| format!("piece {i}")).collect();
        let e = enrich(&toy(44), &Segmentation::from_lengths(&lens, &ann)).unwrap();
        assert_eq!(e.num_segments(), 13);
    }

    #[test]
    fn validator_reports_first_violation() {
        let p = LengthPolicy::default();
        let t = toy(5);
        assert_eq!(validate_segmentation(&t, &spans(&[(0, 2), (3, 4)]), p), Ok(()));
        assert!(matches!(
            validate_segmentation(&t, &spans(&[(0, 2), (2, 4)]), p),
            Err(Violation::Overlap { segment: 1, .. })
        ));
        let t6 = toy(6);
        assert!(matches!(
            validate_segmentation(&t6, &spans(&[(0, 5)]), p),
            Err(Violation::Length { len: 6, .. })
        ));
        assert!(matches!(
            validate_segmentation(&t, &spans(&[(0, 1), (3, 4)]), p),
            Err(Violation::Gap { .. })
        ));
        assert!(matches!(
            validate_segmentation(&t, &spans(&[(0, 2)]), p),
            Err(Violation::Coverage { covered: 3, len: 5 })
        ));
    }

    #[test]
    fn enrich_rejects_bad_cover() {
        assert!(matches!(enrich(&toy(5), &spans(&[(0, 3)])), Err(Error::Segmentation(_))));
    }

    #[test]
    fn empty_corpus_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        save_corpus(&p, &[]).unwrap();
        assert!(load_corpus(&p).unwrap().is_empty());
    }

    #[test]
    fn hundred_trajectories_round_trip_with_equal_hashes() {
        let corpus: Vec<Trajectory> = (0..100)
            .map(|s| scripted_expert(&sample_task(Level::SingleSubgoal, s).unwrap()).unwrap().0)
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        save_corpus(&p, &corpus).unwrap();
        let back = load_corpus(&p).unwrap();
        assert_eq!(back, corpus);
        assert_eq!(content_hash(&back), content_hash(&corpus));
        let q = dir.path().join("d.jsonl");
        save_corpus(&q, &back).unwrap();
        assert_eq!(file_hash(&p).unwrap(), file_hash(&q).unwrap());
    }

    #[test]
    fn unknown_field_and_bad_line_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let mut v = serde_json::to_value(toy(2)).unwrap();
        v["extra"] = serde_json::json!(1);
        let good = serde_json::to_string(&toy(2)).unwrap();
        std::fs::write(&p, format!("{good}\n{v}\n")).unwrap();
        assert!(matches!(load_corpus(&p), Err(Error::CorpusLine { line: 2, .. })));
        std::fs::write(&p, format!("{good}\n{good}\n{{not json\n")).unwrap();
        assert!(matches!(load_corpus(&p), Err(Error::CorpusLine { line: 3, .. })));
    }

    #[test]
    fn latent_assignment_respects_segments() {
        let la = LatentAssignment { beta: vec![1, 0, 1, 0], skills: vec![2, 2, 0, 0] };
        la.check(3, Some(&[1, 0, 1, 1])).unwrap();
        assert!(la.check(2, None).is_err());
        assert!(la.check(3, Some(&[1, 1, 0, 1])).is_err());
    }

    fn lengths_strategy() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..=5, 1..30)
    }

    proptest! {
        #[test]
        fn segment_spans_concatenate_to_the_actions(lens in lengths_strategy()) {
            let t: usize = lens.iter().sum();
            let traj = toy(t);
            let ann: Vec<String> = (0..lens.len()).map(|i| format!("s{i}")).collect();
            let seg = Segmentation::from_lengths(&lens, &ann);
            prop_assert!(validate_segmentation(&traj, &seg, LengthPolicy::default()).is_ok());
            let joined: Vec<usize> = seg
                .segments
                .iter()
                .flat_map(|s| traj.actions[s.start..=s.end].iter().copied())
                .collect();
            prop_assert_eq!(joined, traj.actions.clone());
        }

        #[test]
        fn enrich_then_recover_is_identity(lens in lengths_strategy()) {
            let t: usize = lens.iter().sum();
            let ann: Vec<String> = (0..lens.len()).map(|i| format!("s{i}")).collect();
            let seg = Segmentation::from_lengths(&lens, &ann);
            let e = enrich(&toy(t), &seg).unwrap();
            e.check().unwrap();
            prop_assert_eq!(e.segmentation(), seg);
        }
    }
}
