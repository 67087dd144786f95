//! OpenAI-compatible chat and embedding clients, plus the cache-first
//! wrappers every stage goes through.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use quorum_core::geometry::EmbeddingSet;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::Semaphore;
use tracing::{debug, warn};

use crate::error::{PipelineError, Result};
use crate::store::{cache_key, CallCache};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

/// Body of `POST /v1/chat/completions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatReply {
    pub content: String,
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

impl ChatReply {
    pub fn tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatReply>;
}

#[async_trait]
pub trait EmbeddingBackend: Send + Sync {
    async fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    /// Delay before the second attempt; doubled for each later one.
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff_ms: 1000,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: usize) -> Duration {
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(1 << (attempt - 1).min(16)))
    }
}

/// HTTP client for one OpenAI-compatible server.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: reqwest::Client,
    base_url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: Option<String>, retry: RetryPolicy, timeout: Duration) -> Result<Self> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| PipelineError::Config(format!("http client: {e}")))?;
        Ok(HttpBackend {
            client,
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            retry,
        })
    }

    /// POSTs `body` with retries on transport errors, 408, 429 and 5xx.
    /// Other 4xx answers and unreadable bodies fail at once.
    async fn post(&self, path: &str, body: &Value) -> Result<Value> {
        let url = format!("{}{path}", self.base_url);
        let mut last = String::new();
        for attempt in 1..=self.retry.max_attempts {
            if attempt > 1 {
                tokio::time::sleep(self.retry.delay(attempt - 1)).await;
            }
            let mut req = self.client.post(&url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let resp = match req.send().await {
                Ok(r) => r,
                Err(e) => {
                    warn!(%url, attempt, "request failed: {e}");
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            let text = resp.text().await.unwrap_or_default();
            if status.is_success() {
                return serde_json::from_str(&text)
                    .map_err(|e| PipelineError::Protocol(format!("{url}: reply is not JSON: {e}")));
            }
            let code = status.as_u16();
            match code {
                401 | 403 => return Err(PipelineError::Auth { status: code, body: text }),
                408 | 429 | 500..=599 => {
                    warn!(%url, attempt, code, "retryable status");
                    last = format!("status {code}: {text}");
                }
                _ => return Err(PipelineError::Protocol(format!("{url}: status {code}: {text}"))),
            }
        }
        Err(PipelineError::Exhausted {
            attempts: self.retry.max_attempts,
            last,
        })
    }
}

#[async_trait]
impl ChatBackend for HttpBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatReply> {
        let body = serde_json::to_value(request)?;
        let v = self.post("/v1/chat/completions", &body).await?;
        let content = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| PipelineError::Protocol("reply has no choices[0].message.content".into()))?;
        let usage = |k: &str| v.pointer(&format!("/usage/{k}")).and_then(Value::as_u64).unwrap_or(0);
        Ok(ChatReply {
            content: content.to_string(),
            prompt_tokens: usage("prompt_tokens"),
            completion_tokens: usage("completion_tokens"),
        })
    }
}

#[async_trait]
impl EmbeddingBackend for HttpBackend {
    async fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let body = serde_json::json!({ "model": model, "input": texts });
        let v = self.post("/v1/embeddings", &body).await?;
        let data = v
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| PipelineError::Protocol("embedding reply has no data array".into()))?;
        if data.len() != texts.len() {
            return Err(PipelineError::Protocol(format!("{} embeddings for {} inputs", data.len(), texts.len())));
        }
        let mut out = vec![Vec::new(); texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let index = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
            let vector = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| PipelineError::Protocol("embedding item without vector".into()))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| PipelineError::Protocol("non-numeric embedding entry".into())))
                .collect::<Result<Vec<f64>>>()?;
            *out.get_mut(index).ok_or_else(|| PipelineError::Protocol(format!("embedding index {index} out of range")))? = vector;
        }
        Ok(out)
    }
}

/// Cache-first chat access with a cap on in-flight requests. Only cache
/// misses reach the backend; those are counted as network calls.
pub struct CachedChat {
    backend: Arc<dyn ChatBackend>,
    cache: Option<Arc<CallCache>>,
    limit: Semaphore,
    network_calls: AtomicU64,
}

impl CachedChat {
    pub fn new(backend: Arc<dyn ChatBackend>, cache: Option<Arc<CallCache>>, concurrency: usize) -> Self {
        CachedChat {
            backend,
            cache,
            limit: Semaphore::new(concurrency.max(1)),
            network_calls: AtomicU64::new(0),
        }
    }

    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::Relaxed)
    }

    /// `tag` names the template version that produced the request and is
    /// part of the cache key.
    pub async fn complete(&self, tag: &str, request: &ChatRequest) -> Result<ChatReply> {
        let key = cache_key(&(tag, request));
        if let Some(cache) = &self.cache {
            if let Some(text) = cache.get("chat", &key)? {
                return Ok(serde_json::from_str(&text)?);
            }
        }
        let reply = {
            let _permit = self.limit.acquire().await.expect("semaphore open");
            self.network_calls.fetch_add(1, Ordering::Relaxed);
            debug!(model = %request.model, tag, "chat request");
            self.backend.complete(request).await?
        };
        if let Some(cache) = &self.cache {
            cache.put("chat", &key, &serde_json::to_string(&reply)?)?;
        }
        Ok(reply)
    }
}

/// Cache-first embeddings keyed by (model id, text hash). Vectors come back
/// L2-normalized.
pub struct CachedEmbedder {
    backend: Arc<dyn EmbeddingBackend>,
    cache: Option<Arc<CallCache>>,
    model: String,
    dim: Option<usize>,
    batch_size: usize,
    limit: Semaphore,
    network_calls: AtomicU64,
}

impl CachedEmbedder {
    pub fn new(
        backend: Arc<dyn EmbeddingBackend>,
        cache: Option<Arc<CallCache>>,
        model: &str,
        dim: Option<usize>,
        batch_size: usize,
        concurrency: usize,
    ) -> Self {
        CachedEmbedder {
            backend,
            cache,
            model: model.to_string(),
            dim,
            batch_size: batch_size.max(1),
            limit: Semaphore::new(concurrency.max(1)),
            network_calls: AtomicU64::new(0),
        }
    }

    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::Relaxed)
    }

    pub async fn embed_texts(&self, texts: &[String]) -> Result<EmbeddingSet> {
        if texts.is_empty() {
            return Err(quorum_core::Error::Empty("texts to embed").into());
        }
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(PipelineError::Protocol(format!("text {i} to embed is empty")));
        }
        let keys: Vec<_> = texts.iter().map(|t| cache_key(&(&self.model, t))).collect();
        let mut vectors: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        if let Some(cache) = &self.cache {
            for (slot, key) in vectors.iter_mut().zip(&keys) {
                if let Some(text) = cache.get("embeddings", key)? {
                    *slot = Some(serde_json::from_str(&text)?);
                }
            }
        }
        // Identical texts share one request slot.
        let mut pending: HashMap<&str, Vec<usize>> = HashMap::new();
        let mut order = Vec::new();
        for (i, slot) in vectors.iter().enumerate() {
            if slot.is_none() {
                let entry = pending.entry(texts[i].as_str()).or_default();
                if entry.is_empty() {
                    order.push(texts[i].clone());
                }
                entry.push(i);
            }
        }
        for batch in order.chunks(self.batch_size) {
            let got = {
                let _permit = self.limit.acquire().await.expect("semaphore open");
                self.network_calls.fetch_add(1, Ordering::Relaxed);
                self.backend.embed(&self.model, batch).await?
            };
            for (text, vector) in batch.iter().zip(got) {
                let positions = &pending[text.as_str()];
                if let Some(cache) = &self.cache {
                    cache.put("embeddings", &keys[positions[0]], &serde_json::to_string(&vector)?)?;
                }
                for &i in positions {
                    vectors[i] = Some(vector.clone());
                }
            }
        }
        let vectors: Vec<Vec<f64>> = vectors.into_iter().map(|v| v.expect("every text embedded")).collect();
        Ok(EmbeddingSet::new(vectors, self.dim)?.normalized()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Echo {
        seen: Mutex<Vec<ChatRequest>>,
    }

    #[async_trait]
    impl ChatBackend for Echo {
        async fn complete(&self, request: &ChatRequest) -> Result<ChatReply> {
            self.seen.lock().unwrap().push(request.clone());
            Ok(ChatReply {
                content: request.messages.last().unwrap().content.clone(),
                prompt_tokens: 3,
                completion_tokens: 2,
            })
        }
    }

    struct Axes;

    #[async_trait]
    impl EmbeddingBackend for Axes {
        async fn embed(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>> {
            Ok(texts.iter().map(|t| vec![t.len() as f64, 1.0, 0.0]).collect())
        }
    }

    fn request(content: &str, temperature: f64) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage::user(content)],
            temperature,
            max_tokens: 10,
        }
    }

    #[tokio::test]
    async fn warm_cache_skips_the_backend() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(CallCache::open(dir.path()).unwrap());
        let backend = Arc::new(Echo { seen: Mutex::new(Vec::new()) });
        let chat = CachedChat::new(backend.clone(), Some(cache.clone()), 2);
        let a = chat.complete("t", &request("hi", 0.0)).await.unwrap();
        let b = chat.complete("t", &request("hi", 0.0)).await.unwrap();
        assert_eq!(a, b);
        assert_eq!(chat.network_calls(), 1);
        chat.complete("t", &request("hi", 0.7)).await.unwrap();
        chat.complete("t2", &request("hi", 0.0)).await.unwrap();
        assert_eq!(chat.network_calls(), 3);

        let fresh = CachedChat::new(backend, Some(cache), 2);
        fresh.complete("t", &request("hi", 0.0)).await.unwrap();
        assert_eq!(fresh.network_calls(), 0);
    }

    #[tokio::test]
    async fn embeddings_are_normalized_and_cached() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(CallCache::open(dir.path()).unwrap());
        let emb = CachedEmbedder::new(Arc::new(Axes), Some(cache.clone()), "e", Some(3), 2, 1);
        let texts: Vec<String> = ["aaa", "b", "aaa"].iter().map(|s| s.to_string()).collect();
        let set = emb.embed_texts(&texts).await.unwrap();
        assert!(set.is_normalized());
        assert_eq!(set.vectors()[0], set.vectors()[2]);
        assert_eq!(emb.network_calls(), 1);
        let warm = CachedEmbedder::new(Arc::new(Axes), Some(cache), "e", Some(3), 2, 1);
        assert_eq!(warm.embed_texts(&texts).await.unwrap(), set);
        assert_eq!(warm.network_calls(), 0);
    }

    #[tokio::test]
    async fn embedding_dimension_and_empty_text_are_checked() {
        let emb = CachedEmbedder::new(Arc::new(Axes), None, "e", Some(4), 8, 1);
        assert!(emb.embed_texts(&["x".to_string()]).await.is_err());
        let emb = CachedEmbedder::new(Arc::new(Axes), None, "e", Some(3), 8, 1);
        assert!(emb.embed_texts(&["x".to_string(), " ".to_string()]).await.is_err());
        assert!(emb.embed_texts(&[]).await.is_err());
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(1), Duration::from_secs(1));
        assert_eq!(p.delay(2), Duration::from_secs(2));
    }
}
