use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{record_replay_key, ChatRequest, ChatResponse, LlmClient, LlmError, Usage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub content: String,
    pub model: String,
}

/// Request hash to recorded response.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cassette {
    pub entries: BTreeMap<String, CassetteEntry>,
}

impl Cassette {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| LlmError::Io(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))
    }

    pub fn get(&self, key: &str) -> Option<&CassetteEntry> {
        self.entries.get(key)
    }

    pub fn insert(&mut self, key: String, entry: CassetteEntry, force: bool) -> Result<(), LlmError> {
        if !force && self.entries.contains_key(&key) {
            return Err(LlmError::FixtureExists { key });
        }
        self.entries.insert(key, entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn merge(&mut self, other: Cassette) {
        self.entries.extend(other.entries);
    }
}

/// Serves responses from a cassette and never touches the network.
#[derive(Debug, Clone)]
pub struct ReplayClient {
    cassette: Cassette,
}

impl ReplayClient {
    pub fn new(cassette: Cassette) -> Self {
        Self { cassette }
    }

    pub fn from_path(path: &Path) -> Result<Self, LlmError> {
        Cassette::load(path).map(Self::new)
    }
}

impl LlmClient for ReplayClient {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let key = record_replay_key(request);
        let entry = self.cassette.get(&key).ok_or(LlmError::MissingFixture { key })?;
        Ok(ChatResponse {
            content: entry.content.clone(),
            model: entry.model.clone(),
            usage: Usage::default(),
            latency_ms: 0,
        })
    }
}

/// Forwards to an inner client and records each response. Keys already in
/// the cassette are served from it and never overwritten unless `force`.
pub struct RecordingClient<C: LlmClient> {
    inner: C,
    cassette: Mutex<Cassette>,
    path: Option<PathBuf>,
    force: bool,
}

impl<C: LlmClient> RecordingClient<C> {
    pub fn new(inner: C, cassette: Cassette, force: bool) -> Self {
        Self {
            inner,
            cassette: Mutex::new(cassette),
            path: None,
            force,
        }
    }

    /// Records into `path`, starting from its current contents if it exists.
    pub fn to_path(inner: C, path: &Path, force: bool) -> Result<Self, LlmError> {
        let cassette = if path.exists() { Cassette::load(path)? } else { Cassette::default() };
        let mut c = Self::new(inner, cassette, force);
        c.path = Some(path.to_path_buf());
        Ok(c)
    }

    pub fn cassette(&self) -> Cassette {
        self.cassette.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn flush(&self) -> Result<(), LlmError> {
        match &self.path {
            Some(p) => self.cassette().save(p),
            None => Ok(()),
        }
    }
}

impl<C: LlmClient> LlmClient for RecordingClient<C> {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let key = record_replay_key(request);
        if !self.force {
            if let Some(e) = self.cassette.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
                return Ok(ChatResponse {
                    content: e.content.clone(),
                    model: e.model.clone(),
                    usage: Usage::default(),
                    latency_ms: 0,
                });
            }
        }
        let resp = self.inner.chat(request)?;
        let entry = CassetteEntry {
            content: resp.content.clone(),
            model: resp.model.clone(),
        };
        self.cassette
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key, entry, self.force)?;
        Ok(resp)
    }
}

impl<C: LlmClient> Drop for RecordingClient<C> {
    fn drop(&mut self) {
        if let Err(e) = self.flush() {
            tracing::warn!("failed to write cassette: {e}");
        }
    }
}
