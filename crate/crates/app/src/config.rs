use std::path::{Path, PathBuf};

use acurai_core::llm::{HttpChatConfig, LLM_API_KEY_ENV, LLM_BASE_URL_ENV};
use acurai_core::pipeline::PipelineConfig;
use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Path of the config file used when `--config` is not given.
pub const CONFIG_ENV: &str = "ACURAI_CONFIG";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub pipeline: PipelineConfig,
    /// Chat-completions backend used when not replaying.
    pub backend: HttpChatConfig,
}

impl AppConfig {
    /// Reads `path` (or `$ACURAI_CONFIG`), then applies environment
    /// overrides, which win over the file.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let path: Option<PathBuf> = path.map(Path::to_path_buf).or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(&p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => AppConfig::default(),
        };
        if let Ok(url) = std::env::var(LLM_BASE_URL_ENV) {
            config.backend.base_url = url;
        }
        if let Ok(key) = std::env::var(LLM_API_KEY_ENV) {
            config.backend.api_key = Some(key);
        }
        config.pipeline.validate()?;
        Ok(config)
    }
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// `base` with the fields present in `overrides` replaced.
pub fn apply_overrides(base: &PipelineConfig, overrides: &Value) -> Result<PipelineConfig, String> {
    if !overrides.is_object() {
        return Err("must be an object".into());
    }
    let mut v = serde_json::to_value(base).map_err(|e| e.to_string())?;
    merge(&mut v, overrides);
    let config: PipelineConfig = serde_json::from_value(v).map_err(|e| e.to_string())?;
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}
