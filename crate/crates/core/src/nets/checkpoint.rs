use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, SkillModel};
use crate::autograd::ParamStore;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    version: u32,
    config: ModelConfig,
    params: ParamStore,
}

pub fn save_checkpoint(model: &SkillModel, path: &Path) -> Result<()> {
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        config: model.cfg.clone(),
        params: model.store.clone(),
    };
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_vec(&ck)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a model, rejecting version, skill-count or action-count mismatches.
pub fn load_checkpoint(path: &Path, expect_k: Option<usize>, expect_actions: Option<usize>) -> Result<SkillModel> {
    let bytes = std::fs::read(path)?;
    let ck: Checkpoint = serde_json::from_slice(&bytes)?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
    }
    if let Some(k) = expect_k {
        if ck.config.k != k {
            return Err(Error::Checkpoint(format!("checkpoint has K={} but {k} was expected", ck.config.k)));
        }
    }
    if let Some(a) = expect_actions {
        if ck.config.num_actions != a {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} actions but {a} were expected",
                ck.config.num_actions
            )));
        }
    }
    let mut model = SkillModel::new(ck.config)?;
    if model.store.len() != ck.params.len() {
        return Err(Error::Checkpoint("parameter count differs from the configuration".into()));
    }
    for (name, value) in ck.params.named() {
        let id = model
            .store
            .find(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        if model.store.value(id).shape() != value.shape() {
            return Err(Error::Checkpoint(format!("shape mismatch for {name}")));
        }
        *model.store.value_mut(id) = value.clone();
    }
    Ok(model)
}
