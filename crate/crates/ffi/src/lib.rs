//! C interface: gridworld episodes, checkpoint inspection, per-step code
//! length and the stage driver.
//!
//! Every function returns an [`LsStatus`]. On failure the message is kept
//! per thread and can be copied out with [`ls_last_error`]. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::path::Path;
use std::ptr;

use langskill::cli::{run_stage, PipelineConfig, Stage};
use langskill::gridworld::{sample_task_named, GridEnv, Observation, VIEW_SIZE};
use langskill::nets::{load_checkpoint, SkillModel};
use langskill::oracle::code_length_step;
use langskill::Error;

/// Bytes in one egocentric observation (rows x cols x channels).
pub const LS_OBSERVATION_LEN: usize = 147;

const _: () = assert!(LS_OBSERVATION_LEN == VIEW_SIZE * VIEW_SIZE * 3);

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    MissingInput = 4,
    Io = 5,
    EpisodeDone = 6,
    Verification = 7,
    Internal = 8,
}

/// Running gridworld episode.
pub struct LsEnv {
    env: GridEnv,
}

/// Loaded skill model.
pub struct LsModel {
    model: SkillModel,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: LsStatus, msg: impl Into<String>) -> LsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

fn from_error(e: Error) -> LsStatus {
    let status = match &e {
        Error::Config(_) => LsStatus::Config,
        Error::MissingInput(_) => LsStatus::MissingInput,
        Error::Io(_) => LsStatus::Io,
        Error::EpisodeDone => LsStatus::EpisodeDone,
        Error::Verification(_) => LsStatus::Verification,
        Error::UnknownLevel(_) | Error::InvalidAction(_) | Error::InvalidSkill { .. } => LsStatus::InvalidArgument,
        _ => LsStatus::Internal,
    };
    fail(status, e.to_string())
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, LsStatus> {
    if p.is_null() {
        return Err(fail(LsStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(LsStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn write_observation(obs: &Observation, out: *mut u8) {
    if out.is_null() {
        return;
    }
    let flat: Vec<u8> = obs.0.iter().flatten().flatten().copied().collect();
    ptr::copy_nonoverlapping(flat.as_ptr(), out, flat.len());
}

/// Copies the last error message of this thread into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ls_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Samples the task for `(level, seed)` and starts an episode. `level` is
/// one of "single-subgoal", "two-subgoal" or "composite-long".
///
/// # Safety
/// `level` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_env_new(level: *const c_char, seed: u64, out: *mut *mut LsEnv) -> LsStatus {
    if out.is_null() {
        return fail(LsStatus::NullPointer, "out is null");
    }
    let level = match text(level, "level") {
        Ok(s) => s,
        Err(s) => return s,
    };
    match sample_task_named(level, seed).and_then(GridEnv::new) {
        Ok(env) => {
            *out = Box::into_raw(Box::new(LsEnv { env }));
            LsStatus::Ok
        }
        Err(e) => from_error(e),
    }
}

/// Resets the episode and writes the first observation
/// ([`LS_OBSERVATION_LEN`] bytes) to `obs`.
///
/// # Safety
/// `env` must come from [`ls_env_new`]; `obs` must be null or hold
/// [`LS_OBSERVATION_LEN`] bytes.
#[no_mangle]
pub unsafe extern "C" fn ls_env_reset(env: *mut LsEnv, obs: *mut u8) -> LsStatus {
    let Some(env) = env.as_mut() else {
        return fail(LsStatus::NullPointer, "env is null");
    };
    let o = env.env.reset();
    write_observation(&o, obs);
    LsStatus::Ok
}

/// Applies one action.
///
/// # Safety
/// As for [`ls_env_reset`]; `reward` and `done` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn ls_env_step(env: *mut LsEnv, action: usize, obs: *mut u8, reward: *mut f64, done: *mut bool) -> LsStatus {
    let Some(env) = env.as_mut() else {
        return fail(LsStatus::NullPointer, "env is null");
    };
    match env.env.step(action) {
        Ok(r) => {
            write_observation(&r.observation, obs);
            if !reward.is_null() {
                *reward = r.reward;
            }
            if !done.is_null() {
                *done = r.done;
            }
            LsStatus::Ok
        }
        Err(e) => from_error(e),
    }
}

/// # Safety
/// `env` must be null or come from [`ls_env_new`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ls_env_free(env: *mut LsEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Loads a model checkpoint written by training.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_model_load(path: *const c_char, out: *mut *mut LsModel) -> LsStatus {
    if out.is_null() {
        return fail(LsStatus::NullPointer, "out is null");
    }
    let path = match text(path, "path") {
        Ok(s) => s,
        Err(s) => return s,
    };
    match load_checkpoint(Path::new(path), None, None) {
        Ok(model) => {
            *out = Box::into_raw(Box::new(LsModel { model }));
            LsStatus::Ok
        }
        Err(e) => from_error(e),
    }
}

/// Skill-library size of a loaded model.
///
/// # Safety
/// `model` must come from [`ls_model_load`]; `k` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_model_num_skills(model: *const LsModel, k: *mut usize) -> LsStatus {
    match (model.as_ref(), k.is_null()) {
        (Some(m), false) => {
            *k = m.model.k();
            LsStatus::Ok
        }
        _ => fail(LsStatus::NullPointer, "model or k is null"),
    }
}

/// # Safety
/// `model` must be null or come from [`ls_model_load`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ls_model_free(model: *mut LsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Code length in nats of one step given a skill distribution `q_k`
/// (length `k`), the switch probability, and the previous skill (`prev < 0`
/// for the first step).
///
/// # Safety
/// `q_k` must point to `k` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_code_length_step(q_k: *const f64, k: usize, q_switch: f64, prev: i64, out: *mut f64) -> LsStatus {
    if q_k.is_null() || out.is_null() {
        return fail(LsStatus::NullPointer, "q_k or out is null");
    }
    let q = std::slice::from_raw_parts(q_k, k);
    let total: f64 = q.iter().sum();
    if k == 0 || q.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (total - 1.0).abs() > 1e-6 {
        return fail(LsStatus::InvalidArgument, "q_k must be a probability vector");
    }
    if !(0.0..=1.0).contains(&q_switch) || prev >= k as i64 {
        return fail(LsStatus::InvalidArgument, "q_switch or prev out of range");
    }
    let prev = usize::try_from(prev).ok();
    *out = code_length_step(q, q_switch, prev);
    LsStatus::Ok
}

/// Runs one pipeline stage (e.g. "gen-data", "verify") under `out_dir`.
/// `config` may be null for defaults.
///
/// # Safety
/// `stage` and `out_dir` must be NUL-terminated strings; `config` must be
/// null or one.
#[no_mangle]
pub unsafe extern "C" fn ls_run_stage(stage: *const c_char, config: *const c_char, out_dir: *const c_char) -> LsStatus {
    let (stage, out_dir) = match (text(stage, "stage"), text(out_dir, "out_dir")) {
        (Ok(s), Ok(o)) => (s, o),
        (Err(s), _) | (_, Err(s)) => return s,
    };
    let stage = match parse_stage(stage) {
        Some(s) => s,
        None => return fail(LsStatus::InvalidArgument, format!("unknown stage `{stage}`")),
    };
    let cfg = if config.is_null() {
        Ok(PipelineConfig::default())
    } else {
        match text(config, "config") {
            Ok(p) => PipelineConfig::load(Path::new(p)),
            Err(s) => return s,
        }
    };
    match cfg.and_then(|c| run_stage(stage, &c, Path::new(out_dir))) {
        Ok(_) => LsStatus::Ok,
        Err(e) => from_error(e),
    }
}

fn parse_stage(name: &str) -> Option<Stage> {
    Some(match name {
        "gen-data" => Stage::GenData,
        "segment" => Stage::Segment,
        "train-tvi" => Stage::TrainTvi,
        "extract-skills" => Stage::ExtractSkills,
        "train-hrl" => Stage::TrainHrl,
        "eval-zero-shot" => Stage::EvalZeroShot,
        "eval-downstream" => Stage::EvalDownstream,
        "report" => Stage::Report,
        "verify" => Stage::Verify,
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    #[test]
    fn episode_round_trip() {
        let level = CString::new("single-subgoal").unwrap();
        let mut env = ptr::null_mut();
        unsafe {
            assert_eq!(ls_env_new(level.as_ptr(), 3, &mut env), LsStatus::Ok);
            let mut obs = [0u8; LS_OBSERVATION_LEN];
            assert_eq!(ls_env_reset(env, obs.as_mut_ptr()), LsStatus::Ok);
            assert!(obs.iter().any(|&b| b != 0));
            let (mut r, mut d) = (0.0, false);
            assert_eq!(ls_env_step(env, 1, obs.as_mut_ptr(), &mut r, &mut d), LsStatus::Ok);
            assert_eq!(ls_env_step(env, 99, obs.as_mut_ptr(), &mut r, &mut d), LsStatus::InvalidArgument);
            ls_env_free(env);
        }
    }

    #[test]
    fn errors_carry_messages() {
        let level = CString::new("impossible").unwrap();
        let mut env = ptr::null_mut();
        unsafe {
            assert_eq!(ls_env_new(level.as_ptr(), 0, &mut env), LsStatus::InvalidArgument);
            assert!(env.is_null());
            let mut buf = [0 as c_char; 128];
            let n = ls_last_error(buf.as_mut_ptr(), buf.len());
            let msg = CStr::from_ptr(buf.as_ptr()).to_str().unwrap();
            assert_eq!(n, msg.len());
            assert!(msg.contains("impossible"));
            assert_eq!(ls_env_new(ptr::null(), 0, &mut env), LsStatus::NullPointer);
            assert_eq!(ls_env_reset(ptr::null_mut(), ptr::null_mut()), LsStatus::NullPointer);
        }
    }

    #[test]
    fn code_length_matches_hand_value() {
        let q = [0.1, 0.2, 0.7];
        let mut out = 0.0;
        unsafe {
            assert_eq!(ls_code_length_step(q.as_ptr(), 3, 0.1, 0, &mut out), LsStatus::Ok);
            assert!((out - 0.35).abs() < 5e-3);
            assert_eq!(ls_code_length_step(q.as_ptr(), 3, 1.5, 0, &mut out), LsStatus::InvalidArgument);
            assert_eq!(ls_code_length_step(q.as_ptr(), 3, 0.1, 3, &mut out), LsStatus::InvalidArgument);
        }
    }

    #[test]
    fn stage_driver_reports_missing_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let out = CString::new(dir.path().to_str().unwrap()).unwrap();
        let stage = CString::new("train-tvi").unwrap();
        let bogus = CString::new("train-everything").unwrap();
        let mut model = ptr::null_mut();
        let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
        unsafe {
            assert_eq!(ls_run_stage(stage.as_ptr(), ptr::null(), out.as_ptr()), LsStatus::MissingInput);
            assert_eq!(ls_run_stage(bogus.as_ptr(), ptr::null(), out.as_ptr()), LsStatus::InvalidArgument);
            assert_ne!(ls_model_load(missing.as_ptr(), &mut model), LsStatus::Ok);
        }
    }
}
