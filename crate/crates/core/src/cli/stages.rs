use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{verify_suite, Backend, PipelineConfig, Stage};
use crate::corpus::{
    file_hash, load_corpus, load_enriched, load_jsonl, save_corpus, save_enriched, save_jsonl, EnrichedTrajectory,
    LatentAssignment, TaskRecord, Trajectory,
};
use crate::error::{Error, Result};
use crate::eval::{bc_baseline_train, emit_report, mean_ci, next_action_accuracy, skill_stats, zero_shot_bc, zero_shot_skills, CurveRecord};
use crate::gridworld::{Level, TaskSpec};
use crate::hrl::{train_downstream, Actor, Agent};
use crate::nets::{load_checkpoint, save_checkpoint, ModelConfig, SkillModel};
use crate::pipeline::{generate_corpus, held_out_tasks};
use crate::segmenter::{
    oracle_segment, segment_corpus, uniform_segment, HttpBackend, Provenance, ResponseCache, Source, API_KEY_VAR,
    BASE_URL_VAR,
};
use crate::tvi::{extract_skills, reconstruction_accuracy, train, SkillLibrary};

/// Written as `manifest.json` into every stage directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub config: PipelineConfig,
    /// Path relative to the run root to content hash.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

struct Run<'a> {
    root: &'a Path,
    stage: Stage,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl<'a> Run<'a> {
    fn new(root: &'a Path, stage: Stage) -> Self {
        Self { root, stage, inputs: BTreeMap::new(), outputs: BTreeMap::new() }
    }

    /// Upstream artifact; missing files name the stage that makes them.
    fn input(&mut self, rel: &str, producer: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if !p.is_file() {
            return Err(Error::MissingInput(format!(
                "{} is missing; run `langskill {producer}` first",
                p.display()
            )));
        }
        self.inputs.insert(rel.to_string(), file_hash(&p)?);
        Ok(p)
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let d = self.root.join(self.stage.dir());
        fs::create_dir_all(&d)?;
        Ok(d)
    }

    fn output(&mut self, name: &str) -> Result<PathBuf> {
        Ok(self.out_dir()?.join(name))
    }

    fn record(&mut self, p: &Path) -> Result<()> {
        let rel = p.strip_prefix(self.root).unwrap_or(p).to_string_lossy().replace('\\', "/");
        self.outputs.insert(rel, file_hash(p)?);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.output(name)?;
        fs::write(&p, serde_json::to_string_pretty(value)? + "\n")?;
        self.record(&p)
    }

    fn lines<T: Serialize>(&mut self, name: &str, items: &[T]) -> Result<()> {
        let p = self.output(name)?;
        save_jsonl(&p, items)?;
        self.record(&p)
    }

    fn finish(self, cfg: &PipelineConfig) -> Result<Manifest> {
        let m = Manifest {
            stage: self.stage.dir().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.clone(),
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let d = self.root.join(self.stage.dir());
        fs::create_dir_all(&d)?;
        fs::write(d.join("manifest.json"), serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(m)
    }
}

/// Runs one stage under `root` and returns the manifest it wrote.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig, root: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let mut run = Run::new(root, stage);
    match stage {
        Stage::GenData => gen_data(&mut run, cfg)?,
        Stage::Segment => segment(&mut run, cfg)?,
        Stage::TrainTvi => train_tvi(&mut run, cfg)?,
        Stage::ExtractSkills => skills(&mut run, cfg)?,
        Stage::TrainHrl => train_hrl(&mut run, cfg)?,
        Stage::EvalZeroShot => zero_shot(&mut run, cfg)?,
        Stage::EvalDownstream => downstream(&mut run, cfg)?,
        Stage::Report => report(&mut run)?,
        Stage::Verify => verify(&mut run)?,
    }
    run.finish(cfg)
}

fn gen_data(run: &mut Run, cfg: &PipelineConfig) -> Result<()> {
    let recs = generate_corpus(&cfg.data)?;
    let (tasks, trajs): (Vec<TaskRecord>, Vec<Trajectory>) = recs.into_iter().unzip();
    let p = run.output("corpus.jsonl")?;
    save_corpus(&p, &trajs)?;
    run.record(&p)?;
    run.lines("tasks.jsonl", &tasks)?;
    log::info!("wrote {} demonstrations", trajs.len());
    Ok(())
}

fn segment(run: &mut Run, cfg: &PipelineConfig) -> Result<()> {
    let sc = &cfg.segment;
    // Credentials are checked before any input is read.
    let client = match sc.backend {
        Backend::Llm => {
            let mut llm = sc.llm.clone();
            llm.api_key = std::env::var(API_KEY_VAR).ok();
            if llm.base_url.is_none() {
                llm.base_url = std::env::var(BASE_URL_VAR).ok();
            }
            let backend = HttpBackend::new(&llm)?;
            Some((llm, backend))
        }
        _ => None,
    };
    let trajs = load_corpus(&run.input("data/corpus.jsonl", "gen-data")?)?;
    let tasks: Vec<TaskRecord> = load_jsonl(&run.input("data/tasks.jsonl", "gen-data")?)?;
    if tasks.len() != trajs.len() {
        return Err(Error::Shape("corpus and task records differ in length".into()));
    }
    let max_len = sc.llm.policy.max_len;
    let quiet = |source| Provenance { source, attempts: 0, network_calls: 0, cache_hits: 0, violations: Vec::new() };
    let (enriched, prov): (Vec<EnrichedTrajectory>, Vec<Provenance>) = match (&client, sc.backend) {
        (Some((llm, backend)), _) => {
            let dir = sc.cache_dir.clone().unwrap_or_else(|| run.root.join("segment/llm_cache"));
            let cache = ResponseCache::open(&dir)?;
            let bounds: Vec<Option<Vec<usize>>> = tasks.iter().map(|r| Some(r.boundaries.clone())).collect();
            segment_corpus(&trajs, &bounds, llm, backend, Some(&cache))?
                .into_iter()
                .map(|o| (o.enriched, o.provenance))
                .unzip()
        }
        (None, Backend::Uniform) => trajs
            .iter()
            .map(|t| Ok((uniform_segment(t, max_len)?, quiet(Source::Uniform))))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip(),
        (None, _) => trajs
            .iter()
            .zip(&tasks)
            .map(|(t, r)| Ok((oracle_segment(t, &r.boundaries, max_len)?, quiet(Source::Oracle))))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip(),
    };
    let p = run.output("enriched.jsonl")?;
    save_enriched(&p, &enriched)?;
    run.record(&p)?;
    run.lines("provenance.jsonl", &prov)?;
    Ok(())
}

fn train_tvi(run: &mut Run, cfg: &PipelineConfig) -> Result<()> {
    let corpus = load_enriched(&run.input("segment/enriched.jsonl", "segment")?)?;
    let dir = run.out_dir()?;
    let out = train(&corpus, &cfg.tvi, Some(&dir))?;
    run.record(&dir.join("model.json"))?;
    run.record(&dir.join("train_log.jsonl"))?;
    let acc = reconstruction_accuracy(&out.model, &corpus)?;
    run.json("summary.json", &json!({ "reconstruction_accuracy": acc, "final": out.log.last() }))
}

fn load_model(run: &mut Run, cfg: &PipelineConfig) -> Result<SkillModel> {
    let p = run.input("tvi/model.json", "train-tvi")?;
    load_checkpoint(&p, Some(cfg.tvi.model.k), Some(cfg.tvi.model.num_actions))
}

fn load_library(run: &mut Run) -> Result<SkillLibrary> {
    let p = run.input("skills/library.json", "extract-skills")?;
    Ok(serde_json::from_str(&fs::read_to_string(p)?)?)
}

fn skills(run: &mut Run, cfg: &PipelineConfig) -> Result<()> {
    let model = load_model(run, cfg)?;
    let corpus = load_enriched(&run.input("segment/enriched.jsonl", "segment")?)?;
    let (lib, assigned) = extract_skills(&model, &corpus, cfg.tvi.prune_threshold)?;
    let splits = never_split_violations(&assigned, &corpus);
    let stats = skill_stats(&assigned, &corpus, cfg.tvi.model.num_actions)?;
    run.json("library.json", &lib)?;
    run.lines("assignments.jsonl", &assigned)?;
    run.json("stats.json", &stats)?;
    run.json("checks.json", &json!({ "trajectories": corpus.len(), "never_split_violations": splits }))?;
    if splits > 0 {
        return Err(Error::Segmentation(format!("{splits} decoded switches fall inside initial segments")));
    }
    Ok(())
}

/// Decoded switches that do not sit on an initial segment boundary.
pub(crate) fn never_split_violations(assigned: &[LatentAssignment], corpus: &[EnrichedTrajectory]) -> usize {
    assigned
        .iter()
        .zip(corpus)
        .map(|(a, e)| a.beta.iter().zip(&e.beta_bar).filter(|&(&b, &bb)| b == 1 && bb == 0).count())
        .sum()
}

fn all_levels(n: usize, seed: u64) -> Result<Vec<TaskSpec>> {
    let mut out = Vec::new();
    for level in [Level::SingleSubgoal, Level::TwoSubgoal, Level::CompositeLong] {
        out.extend(held_out_tasks(level, n, seed)?);
    }
    Ok(out)
}

fn zero_shot(run: &mut Run, cfg: &PipelineConfig) -> Result<()> {
    let model = load_model(run, cfg)?;
    let lib = load_library(run)?;
    let trajs = load_corpus(&run.input("data/corpus.jsonl", "gen-data")?)?;
    let bc = bc_baseline_train(&trajs, &cfg.bc)?;
    let bc_path = run.root.join("bc/model.json");
    fs::create_dir_all(run.root.join("bc"))?;
    save_checkpoint(&bc, &bc_path)?;
    run.record(&bc_path)?;
    let tasks = all_levels(cfg.zero_shot.tasks_per_level, cfg.seed)?;
    let skills = zero_shot_skills(&model, &lib.kept, &tasks, &cfg.hrl)?;
    let base = zero_shot_bc(&bc, &tasks, &cfg.hrl)?;
    log::info!("zero-shot success: skills {:.3}, bc {:.3}", skills.overall(), base.overall());
    run.json("skills.json", &skills)?;
    run.json("bc.json", &base)?;
    let acc = next_action_accuracy(&bc, &trajs)?;
    let p = run.root.join("bc/summary.json");
    fs::write(&p, serde_json::to_string_pretty(&json!({ "train_next_action_accuracy": acc }))? + "\n")?;
    run.record(&p)
}

fn downstream_tasks(cfg: &PipelineConfig) -> Result<Vec<TaskSpec>> {
    held_out_tasks(Level::CompositeLong, cfg.downstream.tasks, cfg.seed)
}

fn task_name(t: &TaskSpec) -> String {
    format!("composite-{}", t.seed)
}

fn curve_records(method: &str, task: &TaskSpec, cfg: &PipelineConfig, agent: Agent<'_>, actor: impl Fn(u64) -> Result<Actor>) -> Result<Vec<CurveRecord>> {
    let mut out = Vec::new();
    let one = std::slice::from_ref(task);
    for seed in 0..cfg.downstream.seeds as u64 {
        let r = train_downstream(agent, actor(seed)?, one, one, cfg.downstream.budget, &cfg.hrl, seed)?;
        let last = r.curve.last().map_or(0.0, |p| p.success_rate);
        log::info!("{method} on {} seed {seed}: final success {last:.2}", task_name(task));
        out.extend(r.curve.into_iter().map(|p| CurveRecord {
            method: method.to_string(),
            task: task_name(task),
            env_steps: p.env_steps,
            success_rate: p.success_rate,
            seed,
        }));
    }
    Ok(out)
}

fn train_hrl(run: &mut Run, cfg: &PipelineConfig) -> Result<()> {
    let model = load_model(run, cfg)?;
    let lib = load_library(run)?;
    let mut recs = Vec::new();
    for task in downstream_tasks(cfg)? {
        let agent = Agent::Hierarchical { model: &model, kept: &lib.kept };
        recs.extend(curve_records("skills", &task, cfg, agent, |_| Actor::from_prior(&model, &lib.kept))?);
    }
    run.lines("curves.jsonl", &recs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub runs: usize,
    pub final_mean: f64,
    pub final_ci95: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task: String,
    pub methods: Vec<MethodResult>,
    /// Skill agent's final mean beats every baseline's.
    pub skills_win: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownstreamSummary {
    pub budget: usize,
    pub tasks: Vec<TaskResult>,
    pub wins: usize,
    /// At least two thirds of the tasks are wins.
    pub directional: bool,
}

/// Final success per (task, method, seed), summarised with intervals.
pub fn summarise_downstream(recs: &[CurveRecord], budget: usize) -> DownstreamSummary {
    let mut finals: BTreeMap<(String, String, u64), (usize, f64)> = BTreeMap::new();
    for r in recs {
        let e = finals.entry((r.task.clone(), r.method.clone(), r.seed)).or_insert((0, 0.0));
        if r.env_steps >= e.0 {
            *e = (r.env_steps, r.success_rate);
        }
    }
    let mut by_task: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for ((task, method, _), (_, s)) in finals {
        by_task.entry(task).or_default().entry(method).or_default().push(s);
    }
    let tasks: Vec<TaskResult> = by_task
        .into_iter()
        .map(|(task, methods)| {
            let methods: Vec<MethodResult> = methods
                .into_iter()
                .map(|(method, xs)| {
                    let (final_mean, final_ci95) = mean_ci(&xs);
                    MethodResult { method, runs: xs.len(), final_mean, final_ci95 }
                })
                .collect();
            let ours = methods.iter().find(|m| m.method == "skills").map(|m| m.final_mean);
            let skills_win = ours.is_some_and(|o| {
                methods.len() > 1 && methods.iter().filter(|m| m.method != "skills").all(|m| o > m.final_mean)
            });
            TaskResult { task, methods, skills_win }
        })
        .collect();
    let wins = tasks.iter().filter(|t| t.skills_win).count();
    let directional = !tasks.is_empty() && 3 * wins >= 2 * tasks.len();
    DownstreamSummary { budget, tasks, wins, directional }
}

fn downstream(run: &mut Run, cfg: &PipelineConfig) -> Result<()> {
    let mut recs: Vec<CurveRecord> = load_jsonl(&run.input("hrl/curves.jsonl", "train-hrl")?)?;
    let bc = load_checkpoint(&run.input("bc/model.json", "eval-zero-shot")?, Some(1), None)?;
    let features = SkillModel::new(ModelConfig { k: 1, ..cfg.bc.model.clone() })?;
    let (width, hidden, actions) = (features.cfg.width, features.cfg.head_hidden, features.cfg.num_actions);
    for task in downstream_tasks(cfg)? {
        let flat = Agent::Flat { features: &features };
        recs.extend(curve_records("flat_sac", &task, cfg, flat, |s| Ok(Actor::random(width, hidden, 1, actions, false, s)))?);
        let init = Agent::Flat { features: &bc };
        recs.extend(curve_records("bc_finetune", &task, cfg, init, |_| Actor::from_policy(&bc, 0))?);
    }
    run.lines("curves.jsonl", &recs)?;
    let summary = summarise_downstream(&recs, cfg.downstream.budget);
    log::info!("skill agent wins on {} of {} tasks", summary.wins, summary.tasks.len());
    run.json("summary.json", &summary)
}

fn report(run: &mut Run) -> Result<()> {
    let out = run.out_dir()?;
    let rep = emit_report(run.root, &out)?;
    for name in rep.files.keys() {
        run.record(&out.join(name))?;
    }
    run.record(&out.join("summary.json"))
}

fn verify(run: &mut Run) -> Result<()> {
    let checks = verify_suite()?;
    let mut failed = Vec::new();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        if !c.passed {
            failed.push(c.name.clone());
        }
    }
    run.json("checks.json", &checks)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Verification(failed.join(", ")))
    }
}
