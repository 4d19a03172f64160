//! Embedding providers for the candidate proposer and the retrieval pool.
//!
//! The local backend is a hashed bag-of-tokens embedder: deterministic,
//! dependency-free, good enough to cluster short procedural units by lexical
//! overlap. The remote backend talks to an OpenAI-compatible `/embeddings`
//! endpoint and exists for full-scale runs; tests and mock mode never use it.

use crate::error::{Error, Result};
use crate::text;

/// Dimension of the local hashed embedding.
pub const LOCAL_DIM: usize = 256;

/// Anything that can turn texts into unit-length vectors of a fixed
/// dimension. Same text must give the same vector for the local backend;
/// remote backends are documented best-effort.
pub trait EmbeddingProvider {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
    fn dim(&self) -> usize;
}

/// Deterministic hashed bag-of-tokens embedder.
///
/// Each normalized non-stopword token hashes to a bucket, with a second hash
/// bit choosing the sign; the count vector is then L2-normalized. Cosine
/// similarity under this embedding approximates content-token multiset
/// overlap.
#[derive(Debug, Clone, Default)]
pub struct LocalEmbedder;

impl LocalEmbedder {
    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut vec = vec![0.0f32; LOCAL_DIM];
        for token in text::tokens(text).into_iter().filter(|t| !text::is_stopword(t)) {
            let h = text::fnv1a(&token);
            let bucket = (h % LOCAL_DIM as u64) as usize;
            let sign = if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
            vec[bucket] += sign;
        }
        normalize(&mut vec);
        vec
    }
}

impl EmbeddingProvider for LocalEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn dim(&self) -> usize {
        LOCAL_DIM
    }
}

fn normalize(vec: &mut [f32]) {
    let norm: f32 = vec.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        for x in vec.iter_mut() {
            *x /= norm;
        }
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f32 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
    let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Remote embedding backend (OpenAI-compatible `/embeddings` wire shape).
///
/// Base URL and credential come from configuration / environment; see
/// [`crate::pipeline::PipelineConfig`].
#[cfg(feature = "remote")]
pub struct RemoteEmbedder {
    pub base_url: String,
    pub model: String,
    pub api_key: String,
    pub dim: usize,
    client: reqwest::blocking::Client,
}

#[cfg(feature = "remote")]
impl RemoteEmbedder {
    pub fn new(base_url: String, model: String, api_key: String, dim: usize) -> Self {
        Self { base_url, model, api_key, dim, client: reqwest::blocking::Client::new() }
    }
}

#[cfg(feature = "remote")]
impl EmbeddingProvider for RemoteEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let url = format!("{}/embeddings", self.base_url.trim_end_matches('/'));
        let body = serde_json::json!({ "model": self.model, "input": texts });
        let resp = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| Error::Provider { batch: 0, message: e.to_string() })?;
        let status = resp.status();
        let value: serde_json::Value = resp
            .json()
            .map_err(|e| Error::Provider { batch: 0, message: e.to_string() })?;
        if !status.is_success() {
            return Err(Error::Provider { batch: 0, message: format!("status {status}: {value}") });
        }
        let data = value
            .get("data")
            .and_then(|d| d.as_array())
            .ok_or_else(|| Error::Provider { batch: 0, message: "missing data array".into() })?;
        let mut out = Vec::with_capacity(data.len());
        for entry in data {
            let emb = entry
                .get("embedding")
                .and_then(|e| e.as_array())
                .ok_or_else(|| Error::Provider { batch: 0, message: "missing embedding".into() })?;
            let mut v: Vec<f32> =
                emb.iter().map(|x| x.as_f64().unwrap_or(0.0) as f32).collect();
            normalize(&mut v);
            out.push(v);
        }
        Ok(out)
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_text_identical_vector() {
        let e = LocalEmbedder;
        assert_eq!(e.embed_one("take the salt"), e.embed_one("take the salt"));
    }

    #[test]
    fn vectors_are_unit_length() {
        let v = LocalEmbedder.embed_one("move the object to the target receptacle");
        let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
    }

    #[test]
    fn identical_texts_have_cosine_one() {
        let e = LocalEmbedder;
        let a = e.embed_one("take salt from counter");
        let b = e.embed_one("take salt from counter");
        assert!((cosine(&a, &b) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn disjoint_texts_have_low_cosine() {
        let e = LocalEmbedder;
        let a = e.embed_one("validate the email address of the sender");
        let b = e.embed_one("heat the object with the appliance");
        assert!(cosine(&a, &b).abs() < 0.35);
    }

    #[test]
    fn empty_text_embeds_to_zero_vector() {
        let v = LocalEmbedder.embed_one("");
        assert!(v.iter().all(|&x| x == 0.0));
    }
}
