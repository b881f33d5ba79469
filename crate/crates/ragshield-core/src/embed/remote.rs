//! HTTP client for an external embedding service.
//!
//! Protocol: `POST {endpoint}` with body `{"texts": [string, ...]}`, expects
//! `{"embeddings": [[number, ...], ...]}` with one vector per input text in
//! input order. Status 200 is success; anything else is a transport failure.
//! Requests are batched to `batch_size` and retried with exponential backoff
//! up to `max_retries`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Embedder, EmbedderConfig, Embedding, TokenSeq};
use crate::error::{Error, Result};

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    // Cells are nullable: NaN-safe serializers emit null for non-finite
    // values, which must surface as a data error, not a decode failure.
    embeddings: Vec<Vec<Option<f32>>>,
}

/// Client for a remote embedding endpoint (a gateway to real dense
/// retrievers). Safe to share across workers; batches are issued
/// sequentially so results are always in input order.
pub struct RemoteEmbedder {
    config: EmbedderConfig,
    endpoint: String,
    client: reqwest::blocking::Client,
    calls: AtomicU64,
}

impl RemoteEmbedder {
    pub fn new(config: EmbedderConfig) -> Result<Self> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| Error::usage("remote embedder requires an endpoint"))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| Error::usage(format!("http client: {e}")))?;
        Ok(Self {
            config,
            endpoint,
            client,
            calls: AtomicU64::new(0),
        })
    }

    /// One POST covering `texts`, retried with exponential backoff.
    fn request_batch(&self, texts: &[String]) -> Result<Vec<Vec<Option<f32>>>> {
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match self.try_once(texts) {
                Ok(vectors) => return Ok(vectors),
                Err(TransportError(message)) => {
                    if attempts > self.config.max_retries {
                        return Err(Error::Retriable { attempts, message });
                    }
                    // 50ms, 100ms, 200ms, ...
                    let backoff = 50u64 << (attempts - 1).min(6);
                    std::thread::sleep(Duration::from_millis(backoff));
                }
            }
        }
    }

    fn try_once(
        &self,
        texts: &[String],
    ) -> std::result::Result<Vec<Vec<Option<f32>>>, TransportError> {
        let response = self
            .client
            .post(&self.endpoint)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| TransportError(e.to_string()))?;
        if !response.status().is_success() {
            return Err(TransportError(format!("status {}", response.status())));
        }
        let body: EmbedResponse = response
            .json()
            .map_err(|e| TransportError(format!("body decode: {e}")))?;
        Ok(body.embeddings)
    }

    /// Validates one returned vector against the configured dimension.
    fn check_vector(&self, global_index: usize, cells: Vec<Option<f32>>) -> Result<Embedding> {
        let values: Vec<f32> = cells.into_iter().map(|c| c.unwrap_or(f32::NAN)).collect();
        if values.len() != self.config.dim {
            return Err(Error::Data {
                index: global_index,
                message: format!(
                    "embedding has length {}, expected {}",
                    values.len(),
                    self.config.dim
                ),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data {
                index: global_index,
                message: "embedding contains non-finite values".into(),
            });
        }
        Ok(Embedding::new(values))
    }
}

struct TransportError(String);

impl Embedder for RemoteEmbedder {
    fn name(&self) -> &'static str {
        "remote"
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed_tokens(&self, tokens: &TokenSeq) -> Result<Embedding> {
        let mut out = self.embed_texts(&[tokens.text()])?;
        Ok(out.remove(0))
    }

    fn embed_text(&self, text: &str) -> Result<Embedding> {
        let mut out = self.embed_texts(&[text.to_string()])?;
        Ok(out.remove(0))
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        if texts.is_empty() {
            return Err(Error::usage("embed_texts requires at least one text"));
        }
        let mut out = Vec::with_capacity(texts.len());
        for (batch_no, batch) in texts.chunks(self.config.batch_size).enumerate() {
            let vectors = self.request_batch(batch)?;
            if vectors.len() != batch.len() {
                return Err(Error::Data {
                    index: batch_no * self.config.batch_size,
                    message: format!(
                        "server returned {} embeddings for a batch of {}",
                        vectors.len(),
                        batch.len()
                    ),
                });
            }
            for (offset, values) in vectors.into_iter().enumerate() {
                let global_index = batch_no * self.config.batch_size + offset;
                out.push(self.check_vector(global_index, values)?);
            }
        }
        self.calls.fetch_add(texts.len() as u64, Ordering::Relaxed);
        Ok(out)
    }

    fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn reset_calls(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }
}
