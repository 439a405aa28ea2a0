use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::LengthPolicy;
use crate::error::{Error, Result};

pub const BASE_URL_VAR: &str = "LAST_LLM_BASE_URL";
pub const API_KEY_VAR: &str = "LAST_LLM_API_KEY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmConfig {
    pub model: String,
    pub base_url: Option<String>,
    #[serde(skip)]
    pub api_key: Option<String>,
    pub max_retries: usize,
    pub max_segments: usize,
    pub policy: LengthPolicy,
    pub max_concurrency: usize,
    pub timeout_secs: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            model: "gpt-4".into(),
            base_url: None,
            api_key: None,
            max_retries: 3,
            max_segments: 40,
            policy: LengthPolicy::default(),
            max_concurrency: 4,
            timeout_secs: 120,
        }
    }
}

impl LlmConfig {
    /// Defaults with the endpoint and key taken from the environment.
    pub fn from_env() -> Self {
        Self {
            base_url: std::env::var(BASE_URL_VAR).ok(),
            api_key: std::env::var(API_KEY_VAR).ok(),
            ..Self::default()
        }
    }
}

/// Anything that turns a prompt into a completion.
pub trait ChatBackend: Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

/// Chat-completions endpoint (`POST {base}/chat/completions`).
pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(cfg: &LlmConfig) -> Result<Self> {
        if cfg.api_key.as_deref().is_none_or(str::is_empty) {
            return Err(Error::Config(format!("{API_KEY_VAR} is not set")));
        }
        let base = cfg
            .base_url
            .clone()
            .ok_or_else(|| Error::Config(format!("{BASE_URL_VAR} is not set")))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            url: format!("{}/chat/completions", base.trim_end_matches('/')),
            model: cfg.model.clone(),
            api_key: cfg.api_key.clone(),
        })
    }
}

fn redact(key: &Option<String>) -> String {
    match key {
        Some(k) if k.len() > 4 => format!("Bearer ***{}", &k[k.len() - 4..]),
        Some(_) => "Bearer ***".into(),
        None => "(none)".into(),
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, prompt: &str) -> Result<String> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        log::debug!(
            "POST {} authorization={} payload={}",
            self.url,
            redact(&self.api_key),
            body
        );
        let mut req = self.agent.post(&self.url);
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| Error::Llm { attempts: 1, msg: e.to_string() })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Llm { attempts: 1, msg: e.to_string() })?;
        log::debug!("response status={status} body={text}");
        if status != 200 {
            return Err(Error::Llm {
                attempts: 1,
                msg: format!("HTTP {status}: {text}"),
            });
        }
        let v: serde_json::Value = serde_json::from_str(&text)?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(|s| s.to_string())
            .ok_or_else(|| Error::Llm {
                attempts: 1,
                msg: "response has no message content".into(),
            })
    }
}

/// Responses stored as files named by sha256 of model id and prompt.
pub struct ResponseCache {
    dir: PathBuf,
    write: Mutex<()>,
}

impl ResponseCache {
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            write: Mutex::new(()),
        })
    }

    pub fn key(model: &str, prompt: &str) -> String {
        let mut h = Sha256::new();
        h.update(model.as_bytes());
        h.update([0u8]);
        h.update(prompt.as_bytes());
        hex::encode(h.finalize())
    }

    fn path(&self, model: &str, prompt: &str) -> PathBuf {
        self.dir.join(format!("{}.txt", Self::key(model, prompt)))
    }

    pub fn get(&self, model: &str, prompt: &str) -> Option<String> {
        fs::read_to_string(self.path(model, prompt)).ok()
    }

    pub fn put(&self, model: &str, prompt: &str, response: &str) -> Result<()> {
        let _guard = self.write.lock().unwrap_or_else(|e| e.into_inner());
        let path = self.path(model, prompt);
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, response)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|d| {
                d.filter_map(|e| e.ok())
                    .filter(|e| e.path().extension().is_some_and(|x| x == "txt"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
