//! Client for the external embedding / re-rank provider protocol.
//!
//! `POST {base}/embed  {"texts": [..]}              -> {"vectors": [[..]..], "dim": n}`
//! `POST {base}/rerank {"query": q, "candidates": [..]} -> {"scores": [..]}`

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::embedding::{EmbeddingBackend, EmbeddingVector};
use super::RetrievalError;
use crate::exec::Execution;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Scores (query, candidate) pairs jointly.
pub trait RerankProvider: Send + Sync {
    fn scores(&self, query: &str, candidates: &[String]) -> Result<Vec<f64>, RetrievalError>;
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

#[derive(Serialize)]
struct RerankRequest<'a> {
    query: &'a str,
    candidates: &'a [String],
}

#[derive(Deserialize)]
struct RerankResponse {
    scores: Vec<f64>,
}

pub struct HttpProvider {
    base_url: String,
    dim: usize,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    /// `dim` is the dimension the provider is expected to declare.
    pub fn new(base_url: &str, dim: usize, timeout: Duration) -> Result<Self, RetrievalError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| RetrievalError::ProviderUnavailable(e.to_string()))?;
        Ok(HttpProvider {
            base_url: base_url.trim_end_matches('/').to_string(),
            dim,
            client,
        })
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, route: &str, body: &B) -> Result<R, RetrievalError> {
        let unavailable = |e: reqwest::Error| RetrievalError::ProviderUnavailable(e.to_string());
        self.client
            .post(format!("{}/{route}", self.base_url))
            .json(body)
            .send()
            .map_err(unavailable)?
            .error_for_status()
            .map_err(unavailable)?
            .json()
            .map_err(unavailable)
    }
}

impl EmbeddingBackend for HttpProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String], _exec: Execution) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        let resp: EmbedResponse = self.post("embed", &EmbedRequest { texts })?;
        if resp.vectors.len() != texts.len() {
            return Err(RetrievalError::ProviderUnavailable(format!(
                "provider returned {} vectors for {} texts",
                resp.vectors.len(),
                texts.len()
            )));
        }
        if resp.dim != self.dim || resp.vectors.iter().any(|v| v.len() != self.dim) {
            return Err(RetrievalError::ProviderUnavailable(format!(
                "provider dimension {} does not match expected {}",
                resp.dim, self.dim
            )));
        }
        Ok(resp.vectors.into_iter().map(EmbeddingVector::normalized).collect())
    }
}

impl RerankProvider for HttpProvider {
    fn scores(&self, query: &str, candidates: &[String]) -> Result<Vec<f64>, RetrievalError> {
        let resp: RerankResponse = self.post("rerank", &RerankRequest { query, candidates })?;
        if resp.scores.len() != candidates.len() {
            return Err(RetrievalError::ProviderUnavailable(format!(
                "provider returned {} scores for {} candidates",
                resp.scores.len(),
                candidates.len()
            )));
        }
        Ok(resp.scores)
    }
}
