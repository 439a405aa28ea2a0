use super::*;
use crate::corpus::file_hash;
use crate::eval::CurveRecord;

fn small() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.data.trajectories = 6;
    cfg
}

fn parse(args: &[&str]) -> Cli {
    Cli::try_parse_from(std::iter::once("langskill").chain(args.iter().copied())).unwrap()
}

#[test]
fn empty_config_takes_defaults() {
    let cfg = PipelineConfig::from_json("{}").unwrap();
    assert_eq!(cfg, PipelineConfig::default());
    assert_eq!(cfg.tvi.lambda, 0.01);
    assert_eq!(cfg.tvi.model.k, 100);
    assert_eq!(cfg.segment.backend, Backend::Oracle);
}

#[test]
fn partial_nested_config_fills_the_rest() {
    let cfg = PipelineConfig::from_json(r#"{"tvi": {"model": {"k": 7}, "epochs": 3}}"#).unwrap();
    assert_eq!(cfg.tvi.model.k, 7);
    assert_eq!(cfg.tvi.model.width, crate::nets::ModelConfig::default().width);
    assert_eq!(cfg.tvi.epochs, 3);
}

#[test]
fn unknown_fields_are_rejected() {
    for text in [r#"{"colour": 1}"#, r#"{"tvi": {"lamda": 1.0}}"#, r#"{"segment": {"llm": {"retries": 2}}}"#] {
        assert!(matches!(PipelineConfig::from_json(text), Err(Error::Config(_))), "{text}");
    }
}

#[test]
fn flags_override_config_fields() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cfg.json");
    fs::write(&p, r#"{"tvi": {"lambda": 0.5, "epochs": 9}, "segment": {"backend": "uniform"}}"#).unwrap();
    let cli = parse(&["--config", p.to_str().unwrap(), "--lambda", "1", "--seed", "4", "train-tvi"]);
    let cfg = cli.resolve().unwrap();
    assert_eq!(cfg.tvi.lambda, 1.0);
    assert_eq!(cfg.tvi.epochs, 9);
    assert_eq!(cfg.segment.backend, Backend::Uniform);
    assert_eq!((cfg.seed, cfg.data.seed, cfg.tvi.model.seed, cfg.bc.seed), (4, 4, 4, 4));
    let cli = parse(&["--config", p.to_str().unwrap(), "--epochs", "2", "--backend", "oracle", "segment"]);
    let cfg = cli.resolve().unwrap();
    assert_eq!((cfg.tvi.epochs, cfg.segment.backend), (2, Backend::Oracle));
}

#[test]
fn invalid_values_fail_before_any_stage_runs() {
    let cli = parse(&["--lambda=-1", "gen-data"]);
    assert!(matches!(cli.resolve(), Err(Error::Config(_))));
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.data.trajectories = 0;
    assert!(matches!(run_stage(Stage::GenData, &cfg, dir.path()), Err(Error::Config(_))));
    assert!(!dir.path().join("data").exists());
}

#[test]
fn missing_upstream_artifacts_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (Stage::Segment, "data/corpus.jsonl"),
        (Stage::TrainTvi, "segment/enriched.jsonl"),
        (Stage::ExtractSkills, "tvi/model.json"),
        (Stage::TrainHrl, "tvi/model.json"),
        (Stage::EvalDownstream, "hrl/curves.jsonl"),
    ];
    for (stage, name) in cases {
        match run_stage(stage, &small(), dir.path()) {
            Err(Error::MissingInput(m)) => assert!(m.contains(name), "{m}"),
            other => panic!("{stage:?}: {other:?}"),
        }
    }
}

#[test]
fn data_and_segmentation_are_reproducible() {
    let hashes = |cfg: &PipelineConfig| {
        let dir = tempfile::tempdir().unwrap();
        run_stage(Stage::GenData, cfg, dir.path()).unwrap();
        let m = run_stage(Stage::Segment, cfg, dir.path()).unwrap();
        assert!(m.inputs.contains_key("data/corpus.jsonl"));
        assert_eq!(m.config, *cfg);
        ["data/corpus.jsonl", "data/tasks.jsonl", "segment/enriched.jsonl"]
            .map(|p| file_hash(&dir.path().join(p)).unwrap())
    };
    let cfg = small();
    assert_eq!(hashes(&cfg), hashes(&cfg));
    let mut uni = small();
    uni.segment.backend = Backend::Uniform;
    let (a, b) = (hashes(&cfg), hashes(&uni));
    assert_eq!(a[0], b[0]);
    assert_ne!(a[2], b[2]);
}

#[test]
fn manifest_embeds_config_and_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let m = run_stage(Stage::GenData, &cfg, dir.path()).unwrap();
    let on_disk: Manifest = serde_json::from_str(&fs::read_to_string(dir.path().join("data/manifest.json")).unwrap()).unwrap();
    assert_eq!(m, on_disk);
    assert_eq!(m.outputs["data/corpus.jsonl"], file_hash(&dir.path().join("data/corpus.jsonl")).unwrap());
    assert!(m.inputs.is_empty());
}

#[test]
fn verify_suite_passes() {
    let checks = verify_suite().unwrap();
    assert_eq!(checks.len(), 5);
    for c in checks {
        assert!(c.passed, "{} failed: {}", c.name, c.detail);
    }
}

fn rec(method: &str, task: &str, steps: usize, s: f64, seed: u64) -> CurveRecord {
    CurveRecord { method: method.into(), task: task.into(), env_steps: steps, success_rate: s, seed }
}

#[test]
fn downstream_summary_uses_final_points_and_the_two_thirds_rule() {
    let mut recs = Vec::new();
    for seed in 0..2 {
        for (task, ours) in [("a", 1.0), ("b", 1.0), ("c", 0.0)] {
            recs.push(rec("skills", task, 0, 0.0, seed));
            recs.push(rec("skills", task, 100, ours, seed));
            recs.push(rec("flat_sac", task, 100, 0.0, seed));
            recs.push(rec("bc_finetune", task, 0, 1.0, seed));
            recs.push(rec("bc_finetune", task, 100, 0.5, seed));
        }
    }
    let s = summarise_downstream(&recs, 100);
    assert_eq!(s.wins, 2);
    assert!(s.directional);
    let a = &s.tasks[0];
    assert_eq!(a.methods.iter().find(|m| m.method == "bc_finetune").unwrap().final_mean, 0.5);
    assert_eq!(a.methods[0].runs, 2);
    let only_ours: Vec<_> = recs.into_iter().filter(|r| r.method == "skills").collect();
    assert_eq!(summarise_downstream(&only_ours, 100).wins, 0);
}

#[test]
fn exit_codes_distinguish_error_kinds() {
    assert_eq!(exit_code(&Error::Config("x".into())), 2);
    assert_eq!(exit_code(&Error::MissingInput("x".into())), 3);
    assert_eq!(exit_code(&Error::Verification("x".into())), 1);
    assert_eq!(main_with_args(["langskill", "no-such-stage"].map(Into::into)), 2);
}
