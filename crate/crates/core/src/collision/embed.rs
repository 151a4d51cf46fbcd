use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::CollisionError;
use crate::limit::InFlightLimit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub provider_id: String,
}

impl EmbeddingVector {
    pub fn new(provider_id: &str, values: Vec<f64>) -> Result<Self, CollisionError> {
        if values.is_empty() {
            return Err(CollisionError::InvalidInput("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CollisionError::InvalidInput("non-finite embedding component".into()));
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(CollisionError::InvalidInput("all-zero embedding".into()));
        }
        Ok(Self {
            values,
            provider_id: provider_id.to_string(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, CollisionError> {
    if a.dimension() != b.dimension() {
        return Err(CollisionError::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            a.dimension(),
            b.dimension()
        )));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(CollisionError::InvalidInput("zero vector".into()));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;
    fn dimension(&self) -> usize;
    /// Order-preserving: output `i` is the embedding of `texts[i]`.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, CollisionError>;
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Offline provider: signed feature hashing of character trigrams (with word
/// boundary markers) plus a heavier word-ending feature, into 64 dimensions.
/// Words that share an ending ("calcium"/"magnesium", "chemical"/"physical")
/// land close together; unrelated words stay near orthogonal.
#[derive(Debug, Clone)]
pub struct OfflineNgramProvider {
    dimension: usize,
}

impl Default for OfflineNgramProvider {
    fn default() -> Self {
        Self { dimension: 64 }
    }
}

impl OfflineNgramProvider {
    pub const ID: &'static str = "offline-ngram-v1";
    /// Each word ending is hashed into this many buckets.
    const SUFFIX_PROBES: u8 = 5;
    const SUFFIX_WEIGHT: f64 = 2.5;

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        let mut add = |feature: &[u8], weight: f64| {
            let h = fnv1a(feature);
            let idx = (h % self.dimension as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[idx] += sign * weight;
        };
        let lower = text.to_lowercase();
        for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            let padded: Vec<char> = std::iter::once('<')
                .chain(word.chars())
                .chain(std::iter::once('>'))
                .collect();
            for gram in padded.windows(3) {
                let s: String = gram.iter().collect();
                add(s.as_bytes(), 1.0);
            }
            let chars: Vec<char> = word.chars().collect();
            if chars.len() >= 4 {
                let ending: String = chars[chars.len() - 3..].iter().collect();
                for probe in 0..Self::SUFFIX_PROBES {
                    let mut feature = vec![b'#', probe];
                    feature.extend_from_slice(ending.as_bytes());
                    add(&feature, Self::SUFFIX_WEIGHT);
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // texts without any alphanumeric content get a fixed unit vector
            v[0] = 1.0;
        } else {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl EmbeddingProvider for OfflineNgramProvider {
    fn id(&self) -> &str {
        Self::ID
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, CollisionError> {
        texts
            .iter()
            .map(|t| EmbeddingVector::new(Self::ID, self.vector(t)))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpEmbeddingConfig {
    pub url: String,
    pub model: String,
    pub dimension: usize,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_in_flight() -> usize {
    4
}

fn default_timeout_secs() -> u64 {
    30
}

pub const EMBED_API_KEY_ENV: &str = "ACURAI_EMBED_API_KEY";

/// Client for any endpoint accepting `{"input": [..], "model": ..}` and
/// answering `{"data": [{"embedding": [..]}]}`.
pub struct HttpEmbeddingProvider {
    config: HttpEmbeddingConfig,
    id: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    limit: InFlightLimit,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a [String],
    model: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

impl HttpEmbeddingProvider {
    pub fn new(config: HttpEmbeddingConfig) -> Result<Self, CollisionError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| CollisionError::InvalidInput(e.to_string()))?;
        Ok(Self {
            id: format!("http:{}:{}", config.url, config.model),
            api_key: std::env::var(EMBED_API_KEY_ENV).ok(),
            limit: InFlightLimit::new(config.max_in_flight),
            config,
            client,
        })
    }

    fn provider_error(&self, texts: &[String], message: String, retryable: bool, retry_after: Option<Duration>) -> CollisionError {
        CollisionError::Provider {
            provider_id: self.id.clone(),
            message,
            batch: texts.to_vec(),
            retryable,
            retry_after,
        }
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, CollisionError> {
        let _permit = self.limit.acquire();
        let mut req = self.client.post(&self.config.url).json(&EmbedRequest {
            input: texts,
            model: &self.config.model,
        });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| self.provider_error(texts, e.to_string(), e.is_timeout() || e.is_connect(), None))?;
        let status = resp.status();
        if !status.is_success() {
            let retry_after = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.parse().ok())
                .map(Duration::from_secs);
            let retryable = status.as_u16() == 429 || status.is_server_error();
            return Err(self.provider_error(texts, format!("HTTP {status}"), retryable, retry_after));
        }
        let body: EmbedResponse = resp
            .json()
            .map_err(|e| self.provider_error(texts, format!("malformed response: {e}"), false, None))?;
        if body.data.len() != texts.len() {
            return Err(self.provider_error(
                texts,
                format!("expected {} embeddings, got {}", texts.len(), body.data.len()),
                false,
                None,
            ));
        }
        body.data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.config.dimension {
                    return Err(self.provider_error(
                        texts,
                        format!("expected dimension {}, got {}", self.config.dimension, d.embedding.len()),
                        false,
                        None,
                    ));
                }
                EmbeddingVector::new(&self.id, d.embedding)
            })
            .collect()
    }
}

/// Shared cache keyed by `(provider_id, text)`.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    map: Mutex<HashMap<(String, String), EmbeddingVector>>,
}

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Embeds `texts` in order, asking the provider only for texts (deduplicated)
/// that are not cached yet.
pub fn embed_batch(
    provider: &dyn EmbeddingProvider,
    cache: &EmbeddingCache,
    texts: &[String],
) -> Result<Vec<EmbeddingVector>, CollisionError> {
    if texts.is_empty() {
        return Err(CollisionError::InvalidInput("empty batch".into()));
    }
    let pid = provider.id().to_string();
    let mut missing: Vec<String> = Vec::new();
    {
        let map = cache.map.lock().unwrap_or_else(|e| e.into_inner());
        for t in texts {
            if !map.contains_key(&(pid.clone(), t.clone())) && !missing.contains(t) {
                missing.push(t.clone());
            }
        }
    }
    if !missing.is_empty() {
        let vectors = provider.embed(&missing)?;
        if vectors.len() != missing.len() {
            return Err(CollisionError::Provider {
                provider_id: pid,
                message: format!("expected {} embeddings, got {}", missing.len(), vectors.len()),
                batch: missing,
                retryable: false,
                retry_after: None,
            });
        }
        let mut map = cache.map.lock().unwrap_or_else(|e| e.into_inner());
        for (t, v) in missing.into_iter().zip(vectors) {
            map.insert((pid.clone(), t), v);
        }
    }
    let map = cache.map.lock().unwrap_or_else(|e| e.into_inner());
    Ok(texts
        .iter()
        .map(|t| map[&(pid.clone(), t.clone())].clone())
        .collect())
}
