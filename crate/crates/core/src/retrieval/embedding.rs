use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::exec::Execution;

pub const DEFAULT_DIM: usize = 256;

/// Dense, L2-normalised embedding (or all-zero for empty text).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector(vec![0.0; dim])
    }

    /// Normalise raw values to unit length; an all-zero input stays zero.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVector(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity clamped to [-1, 1]; zero vectors score 0.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            (dot / denom).clamp(-1.0, 1.0)
        }
    }
}

/// Anything that turns text into fixed-dimension vectors.
pub trait EmbeddingBackend: Send + Sync {
    fn dim(&self) -> usize;

    fn embed_batch(&self, texts: &[String], exec: Execution) -> Result<Vec<EmbeddingVector>, RetrievalError>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        let mut v = self.embed_batch(&[text.to_string()], Execution::Sequential)?;
        v.pop()
            .ok_or_else(|| RetrievalError::ProviderUnavailable("empty embedding response".into()))
    }
}

/// Hashed term-frequency embedding. Offline and platform independent.
#[derive(Debug, Clone, Copy)]
pub struct LexicalEmbedder {
    dim: usize,
}

impl Default for LexicalEmbedder {
    fn default() -> Self {
        LexicalEmbedder { dim: DEFAULT_DIM }
    }
}

impl LexicalEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        LexicalEmbedder { dim }
    }

    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        let mut tf = vec![0.0; self.dim];
        for token in tokenize(text) {
            tf[(fnv1a64(token.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        EmbeddingVector::normalized(tf)
    }
}

impl EmbeddingBackend for LexicalEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String], exec: Execution) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        Ok(exec.map(texts, |t| self.embed_text(t)))
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Lowercased tokens split at non-alphanumerics (including `.`) and at
/// camelCase boundaries: `setIsSignaling` gives `set`, `is`, `signaling`;
/// `LIDARSensor` gives `lidar`, `sensor`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        let chars: Vec<char> = word.chars().collect();
        let mut start = 0;
        for i in 1..chars.len() {
            let (prev, cur) = (chars[i - 1], chars[i]);
            let lower_to_upper = (prev.is_lowercase() || prev.is_ascii_digit()) && cur.is_uppercase();
            let acronym_end = prev.is_uppercase()
                && cur.is_uppercase()
                && chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            if lower_to_upper || acronym_end {
                tokens.push(chars[start..i].iter().collect::<String>().to_lowercase());
                start = i;
            }
        }
        tokens.push(chars[start..].iter().collect::<String>().to_lowercase());
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        // published FNV-1a 64 test vectors
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn tokenizer_splits_paths_and_camel_case() {
        assert_eq!(tokenize("Vehicle.Body.Lights.Hazard"), ["vehicle", "body", "lights", "hazard"]);
        assert_eq!(tokenize("setIsSignaling(bool value)"), ["set", "is", "signaling", "bool", "value"]);
        assert_eq!(tokenize("LIDARSensor"), ["lidar", "sensor"]);
        assert_eq!(tokenize("set_is_signaling"), ["set", "is", "signaling"]);
        assert!(tokenize(" .,; ").is_empty());
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let v = LexicalEmbedder::default().embed_text("");
        assert_eq!(v.dim(), DEFAULT_DIM);
        assert!(v.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn case_folding() {
        let e = LexicalEmbedder::default();
        assert_eq!(e.embed_text("hazard"), e.embed_text("Hazard"));
    }

    #[test]
    fn unit_norm() {
        let v = LexicalEmbedder::default().embed_text("Vehicle.Body.Lights.Hazard,actuator");
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }
}
