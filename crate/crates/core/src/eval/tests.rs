use super::*;
use crate::corpus::{enrich, save_jsonl, Segmentation};
use crate::gridworld::{sample_task, scripted_expert, Level, NUM_ACTIONS};
use crate::nets::ModelConfig;

fn enriched(actions: Vec<usize>, lens: &[usize]) -> EnrichedTrajectory {
    let obs = crate::gridworld::Observation([[[1, 0, 0]; 7]; 7]);
    let t = Trajectory { goal: "go to the red ball".into(), observations: vec![obs; actions.len()], actions };
    let ann: Vec<String> = (0..lens.len()).map(|i| format!("part {i}")).collect();
    enrich(&t, &Segmentation::from_lengths(lens, &ann)).unwrap()
}

#[test]
fn single_skill_gives_identity_transitions() {
    let e = enriched(vec![0, 1, 2], &[3]);
    let a = LatentAssignment { beta: vec![1, 0, 0], skills: vec![4, 4, 4] };
    let st = skill_stats(&[a], &[e], NUM_ACTIONS).unwrap();
    assert_eq!(st.skills, vec![4]);
    assert_eq!(st.transitions, vec![vec![1.0]]);
}

#[test]
fn hand_counted_proportions() {
    let e = enriched(vec![0, 0, 2, 2, 2, 3], &[2, 4]);
    let a = LatentAssignment { beta: vec![1, 0, 1, 0, 0, 0], skills: vec![1, 1, 0, 0, 0, 0] };
    let st = skill_stats(&[a], &[e], NUM_ACTIONS).unwrap();
    assert_eq!(st.skills, vec![0, 1]);
    assert_eq!(st.action_proportions[0], vec![0.0, 0.0, 0.75, 0.25, 0.0, 0.0]);
    assert_eq!(st.action_proportions[1], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    assert_eq!(st.transitions[1], vec![1.0, 0.0]);
    assert_eq!(st.transitions[0], vec![1.0, 0.0]);
    assert_eq!(st.segments, vec![1, 1]);
    for row in st.transitions.iter().chain(&st.action_proportions) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn untrained_model_rarely_solves_composite_tasks() {
    let m = SkillModel::new(ModelConfig { seed: 1, ..ModelConfig::tiny(3) }).unwrap();
    let tasks: Vec<_> = (0..5).map(|s| sample_task(Level::CompositeLong, 100 + s).unwrap()).collect();
    let t = zero_shot_skills(&m, &[0, 1, 2], &tasks, &HRLConfig::default()).unwrap();
    assert_eq!(t.rows.len(), 1);
    assert_eq!(t.rows[0].episodes, 5);
    assert!(t.overall() <= 0.2);
}

#[test]
fn behavior_cloning_overfits_its_corpus() {
    let corpus: Vec<Trajectory> = (0..6)
        .map(|s| scripted_expert(&sample_task(Level::SingleSubgoal, s).unwrap()).unwrap().0)
        .collect();
    let cfg = BcConfig { model: ModelConfig::tiny(1), epochs: 60, lr: 1e-2, batch_size: 2, seed: 0 };
    let bc = bc_baseline_train(&corpus, &cfg).unwrap();
    assert_eq!(bc.k(), 1);
    assert_eq!(bc.cfg.width, cfg.model.width);
    let acc = next_action_accuracy(&bc, &corpus).unwrap();
    assert!(acc >= 0.95, "accuracy {acc}");
    let tasks: Vec<_> = (0..2).map(|s| sample_task(Level::SingleSubgoal, s).unwrap()).collect();
    assert_eq!(zero_shot_bc(&bc, &tasks, &HRLConfig::default()).unwrap().rows[0].episodes, 2);
}

#[test]
fn empty_run_reports_no_data() {
    let dir = tempfile::tempdir().unwrap();
    let r = emit_report(dir.path(), &dir.path().join("report")).unwrap();
    assert!(r.sections.values().all(|v| v == "no data"));
    assert!(dir.path().join("report/summary.json").exists());
    assert!(matches!(emit_report(&dir.path().join("absent"), dir.path()), Err(Error::MissingInput(_))));
}

#[test]
fn report_is_stable_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::create_dir_all(root.join("downstream")).unwrap();
    let curves: Vec<report::CurveRecord> = (0..3)
        .flat_map(|seed| {
            (0..3).map(move |i| report::CurveRecord {
                method: "skills".into(),
                task: "t0".into(),
                env_steps: i * 100,
                success_rate: (i as f64 * 0.3 + seed as f64 * 0.1).min(1.0),
                seed,
            })
        })
        .collect();
    save_jsonl(&root.join("downstream/curves.jsonl"), &curves).unwrap();
    std::fs::create_dir_all(root.join("skills")).unwrap();
    let e = enriched(vec![0, 0, 2, 2, 2, 3], &[2, 4]);
    let a = LatentAssignment { beta: vec![1, 0, 1, 0, 0, 0], skills: vec![1, 1, 0, 0, 0, 0] };
    std::fs::create_dir_all(root.join("segment")).unwrap();
    save_jsonl(&root.join("segment/enriched.jsonl"), std::slice::from_ref(&e)).unwrap();
    save_jsonl(&root.join("skills/assignments.jsonl"), std::slice::from_ref(&a)).unwrap();
    let st = skill_stats(&[a], &[e], NUM_ACTIONS).unwrap();
    std::fs::write(root.join("skills/stats.json"), serde_json::to_string(&st).unwrap()).unwrap();
    let r1 = emit_report(root, &root.join("r1")).unwrap();
    let r2 = emit_report(root, &root.join("r2")).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(r1.sections["downstream"], "ok");
    assert_eq!(r1.sections["segmentation"], "ok");
    assert_eq!(r1.sections["training"], "no data");
    let svg = std::fs::read_to_string(root.join("r1/curves.svg")).unwrap();
    assert!(svg.contains("env steps") && svg.contains("success rate"));
    assert_eq!(
        std::fs::read(root.join("r1/summary.json")).unwrap(),
        std::fs::read(root.join("r2/summary.json")).unwrap()
    );
}

#[test]
fn confidence_interval_of_constant_is_zero() {
    assert_eq!(mean_ci(&[0.5, 0.5, 0.5]), (0.5, 0.0));
    let (m, ci) = mean_ci(&[0.0, 1.0]);
    assert_eq!(m, 0.5);
    assert!(ci > 0.0);
}
