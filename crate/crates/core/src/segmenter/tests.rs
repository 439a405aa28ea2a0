use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::*;
use crate::gridworld::{sample_task, scripted_expert, Level};

const RECORDS: &str = include_str!("../../tests/fixtures/record_response.txt");
const RECORD_ACTIONS: &str = include_str!("../../tests/fixtures/record_actions.txt");

struct Scripted {
    replies: Mutex<VecDeque<String>>,
    calls: AtomicUsize,
}

impl Scripted {
    fn new(replies: &[String]) -> Self {
        Self {
            replies: Mutex::new(replies.iter().cloned().collect()),
            calls: AtomicUsize::new(0),
        }
    }
}

impl ChatBackend for Scripted {
    fn complete(&self, _prompt: &str) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.replies
            .lock()
            .unwrap()
            .pop_front()
            .ok_or_else(|| Error::Llm { attempts: 1, msg: "no reply scripted".into() })
    }
}

fn demo() -> (Trajectory, Vec<usize>) {
    scripted_expert(&sample_task(Level::TwoSubgoal, 3).unwrap()).unwrap()
}

/// Dictionary-style answer with chunks of at most 4 actions.
fn good_reply(traj: &Trajectory) -> String {
    let v = ActionVocab::gridworld();
    let parts: Vec<String> = traj
        .actions
        .chunks(4)
        .enumerate()
        .map(|(i, c)| {
            let names: Vec<&str> = c.iter().map(|&a| v.name(a)).collect();
            format!("move (step {}): [{}]", i + 1, names.join(", "))
        })
        .collect();
    format!("{{{}}}", parts.join(", "))
}

#[test]
fn record_format_yields_thirteen_segments() {
    let names: Vec<String> = RECORD_ACTIONS.trim().split(", ").map(|s| s.to_string()).collect();
    assert_eq!(names.len(), 44);
    let mut uniq: Vec<String> = Vec::new();
    for n in &names {
        if !uniq.contains(n) {
            uniq.push(n.clone());
        }
    }
    let vocab = ActionVocab::new(uniq);
    let (seg, ids) = parse_response(RECORDS, &vocab).unwrap();
    assert_eq!(seg.segments.len(), 13);
    assert_eq!(seg.segments[0].len(), 2);
    assert_eq!(seg.segments[0].annotation, "navigate to kitchen step 1");
    assert_eq!(ids[..2], [vocab.id("LookDown15").unwrap(), vocab.id("MoveAhead300").unwrap()]);
    assert_eq!(ids.len(), 44);
    let expect: Vec<usize> = names.iter().map(|n| vocab.id(n).unwrap()).collect();
    assert_eq!(ids, expect);
}

#[test]
fn json_record_list_is_accepted() {
    let text = r#"[{"index": 0, "summary_action_str": "turn", "robot_actions_str": ["turn left", "turn right"]},
                   {"index": 1, "summary_action_str": "go", "robot_actions_str": "move forward"}]"#;
    let (seg, ids) = parse_response(text, &ActionVocab::gridworld()).unwrap();
    assert_eq!(ids, vec![0, 1, 2]);
    assert_eq!(seg.segments.len(), 2);
    assert_eq!(seg.segments[1].annotation, "go");
}

#[test]
fn dictionary_with_missing_bracket_is_tolerated() {
    let text = "Output: {a (step 1): [turn left, move forward], a (step 2): toggle, drop], b: [pick up]}";
    let (seg, ids) = parse_response(text, &ActionVocab::gridworld()).unwrap();
    assert_eq!(ids, vec![0, 2, 5, 4, 3]);
    assert_eq!(seg.segments.iter().map(|s| s.len()).collect::<Vec<_>>(), vec![2, 2, 1]);
}

#[test]
fn empty_or_foreign_text_is_a_parse_error() {
    let v = ActionVocab::gridworld();
    assert!(matches!(parse_response("", &v), Err(Error::Parse(_))));
    assert!(matches!(parse_response("I cannot help with that.", &v), Err(Error::Parse(_))));
    assert!(matches!(parse_response("{go: [jump]}", &v), Err(Error::Vocab(_))));
}

#[test]
fn reordered_segments_fail_validation() {
    let (traj, _) = demo();
    let v = ActionVocab::gridworld();
    let good = good_reply(&traj);
    let (seg, ids) = parse_response(&good, &v).unwrap();
    assert!(check_response(&traj, &seg, &ids, LengthPolicy::default()).is_ok());
    // Swap first two entries.
    let inner = &good[1..good.len() - 1];
    let mut parts: Vec<&str> = inner.split("], ").collect();
    parts.swap(0, 1);
    let swapped = format!("{{{}]}}", parts.join("], ").trim_end_matches(']'));
    let (seg, ids) = parse_response(&swapped, &v).unwrap();
    if traj.actions[..4] != traj.actions[4..8] {
        assert!(matches!(
            check_response(&traj, &seg, &ids, LengthPolicy::default()),
            Err(Violation::Order { .. })
        ));
    }
}

#[test]
fn prompt_has_bounds_goal_and_ordered_actions() {
    let (traj, _) = demo();
    let v = ActionVocab::gridworld();
    let p = build_prompt(&traj, &v, 40, LengthPolicy::default());
    assert!(p.contains("should not exceed 5 but should be at least 1."));
    assert!(p.contains("no more than 40 skills"));
    assert!(p.contains(&traj.goal));
    let names: Vec<&str> = traj.actions.iter().map(|&a| v.name(a)).collect();
    assert!(p.contains(&format!("Actions: {}\n", names.join(", "))));
    assert!(!p.contains("observation"));
}

#[test]
fn long_prompts_fit_the_context_budget() {
    let v = ActionVocab::gridworld();
    let mut traj = demo().0;
    traj.actions = (0..400).map(|i| [2, 0, 1, 3, 4, 5][i % 6]).collect();
    traj.observations = vec![traj.observations[0]; 400];
    let p = build_prompt(&traj, &v, 40, LengthPolicy::default());
    let chars = p.chars().count();
    assert_eq!(estimate_tokens(&p), chars.div_ceil(4));
    assert!(estimate_tokens(&p) < 4096, "{} tokens", estimate_tokens(&p));
}

#[test]
fn oracle_chunks_greedily() {
    let (mut traj, _) = demo();
    traj.goal = "go to the red ball, then pick up the blue key".into();
    traj.actions = vec![2; 17];
    traj.observations = vec![traj.observations[0]; 17];
    let e = oracle_segment(&traj, &[12, 17], 5).unwrap();
    let seg = e.segmentation();
    let lens: Vec<usize> = seg.segments.iter().map(|s| s.len()).collect();
    assert_eq!(lens, vec![5, 5, 2, 5]);
    assert_eq!(seg.segments[0].annotation, "go to the red ball step 1");
    assert_eq!(seg.segments[2].annotation, "go to the red ball step 3");
    assert_eq!(seg.segments[3].annotation, "pick up the blue key step 1");
    assert!(oracle_segment(&traj, &[12], 5).is_err());
    assert!(oracle_segment(&traj, &[12, 16], 5).is_err());
}

#[test]
fn cache_hit_makes_no_calls() {
    let (traj, b) = demo();
    let dir = tempfile::tempdir().unwrap();
    let cache = ResponseCache::open(dir.path()).unwrap();
    let cfg = LlmConfig::default();
    let first = Scripted::new(&[good_reply(&traj)]);
    let a = llm_segment(&traj, Some(&b), &cfg, &first, Some(&cache)).unwrap();
    assert_eq!(first.calls.load(Ordering::SeqCst), 1);
    let second = Scripted::new(&[]);
    let c = llm_segment(&traj, Some(&b), &cfg, &second, Some(&cache)).unwrap();
    assert_eq!(second.calls.load(Ordering::SeqCst), 0);
    assert_eq!(c.provenance.cache_hits, 1);
    assert_eq!(a.enriched, c.enriched);
    assert_eq!(a.provenance.source, Source::Llm);
}

#[test]
fn invalid_then_valid_takes_two_attempts() {
    let (traj, b) = demo();
    let cfg = LlmConfig::default();
    let backend = Scripted::new(&["{everything: [turn left]}".to_string(), good_reply(&traj)]);
    let out = llm_segment(&traj, Some(&b), &cfg, &backend, None).unwrap();
    assert_eq!(out.provenance.attempts, 2);
    assert_eq!(out.provenance.violations.len(), 1);
    assert_eq!(out.provenance.source, Source::Llm);
    assert_eq!(out.enriched.num_segments(), traj.len().div_ceil(4));
}

#[test]
fn exhausted_retries_fall_back() {
    let (traj, b) = demo();
    let cfg = LlmConfig::default();
    let junk = vec!["nonsense".to_string(); 3];
    let out = llm_segment(&traj, None, &cfg, &Scripted::new(&junk), None).unwrap();
    assert_eq!(out.provenance.source, Source::Uniform);
    assert_eq!(out.provenance.attempts, 3);
    let seg = out.enriched.segmentation();
    assert!(seg.segments.iter().all(|s| s.len() <= 5));
    assert!(validate_segmentation(&traj, &seg, LengthPolicy::default()).is_ok());
    let out = llm_segment(&traj, Some(&b), &cfg, &Scripted::new(&junk), None).unwrap();
    assert_eq!(out.provenance.source, Source::Oracle);
}

#[test]
fn network_failure_is_surfaced() {
    let (traj, _) = demo();
    let r = llm_segment(&traj, None, &LlmConfig::default(), &Scripted::new(&[]), None);
    assert!(matches!(r, Err(Error::Llm { attempts: 1, .. })));
}

#[test]
fn corpus_segmentation_runs_concurrently() {
    let demos: Vec<(Trajectory, Vec<usize>)> = (0..6)
        .map(|s| scripted_expert(&sample_task(Level::SingleSubgoal, s).unwrap()).unwrap())
        .collect();
    let trajs: Vec<Trajectory> = demos.iter().map(|d| d.0.clone()).collect();
    let bounds: Vec<Option<Vec<usize>>> = demos.iter().map(|d| Some(d.1.clone())).collect();
    let cfg = LlmConfig { max_concurrency: 3, ..LlmConfig::default() };
    let out = segment_corpus(&trajs, &bounds, &cfg, &Scripted::new(&[]), None);
    assert!(out.is_err());
    struct Echo;
    impl ChatBackend for Echo {
        fn complete(&self, prompt: &str) -> Result<String> {
            let line = prompt.lines().rev().find(|l| l.starts_with("Actions: ")).unwrap();
            let v = ActionVocab::gridworld();
            let ids: Vec<usize> = line["Actions: ".len()..].split(", ").map(|n| v.id(n).unwrap()).collect();
            let t = Trajectory { goal: String::new(), observations: vec![], actions: ids };
            Ok(good_reply(&t))
        }
    }
    let out = segment_corpus(&trajs, &bounds, &cfg, &Echo, None).unwrap();
    for (o, t) in out.iter().zip(&trajs) {
        assert_eq!(o.enriched.actions, t.actions);
        assert_eq!(o.provenance.source, Source::Llm);
    }
}

#[test]
fn cache_key_depends_on_model_and_prompt() {
    let a = ResponseCache::key("m1", "p");
    assert_eq!(a, ResponseCache::key("m1", "p"));
    assert_ne!(a, ResponseCache::key("m2", "p"));
    assert_ne!(a, ResponseCache::key("m1", "q"));
}
