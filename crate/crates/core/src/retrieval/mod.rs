//! Retrieve-and-re-rank over the flattened catalog, prompt chunking, and
//! merging/validation of model-selected signal lists.

pub mod embedding;
pub mod provider;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embedding::{EmbeddingBackend, EmbeddingVector, LexicalEmbedder, DEFAULT_DIM};
pub use provider::{HttpProvider, RerankProvider};

use crate::exec::Execution;
use crate::vss::{format_prompt_line, kb_line, Catalog, VssEntry};

pub const DEFAULT_K: usize = 32;
pub const DEFAULT_CHUNK_BUDGET: usize = 6000;
pub const DEFAULT_BOOST_WEIGHT: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("embedding/re-rank provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("line needs {tokens} tokens but the chunk budget is {budget}: {line:?}")]
    SingleLineOverflow { line: String, tokens: usize, budget: usize },
    #[error("invalid expansion table: {0}")]
    InvalidExpansionTable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalCandidate {
    pub entry: VssEntry,
    /// Position of the entry in its catalog; the tie-breaker for equal scores.
    pub catalog_position: usize,
    pub similarity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank_score: Option<f64>,
}

impl RetrievalCandidate {
    pub fn score(&self) -> f64 {
        self.rerank_score.unwrap_or(self.similarity)
    }
}

/// Embeddings of every KB line, aligned with catalog order.
pub struct SignalIndex<'c> {
    catalog: &'c Catalog,
    vectors: Vec<EmbeddingVector>,
}

impl<'c> SignalIndex<'c> {
    pub fn build(catalog: &'c Catalog, backend: &dyn EmbeddingBackend, exec: Execution) -> Result<Self, RetrievalError> {
        let lines: Vec<String> = catalog.entries().iter().map(kb_line).collect();
        let vectors = backend.embed_batch(&lines, exec)?;
        Ok(SignalIndex { catalog, vectors })
    }

    pub fn catalog(&self) -> &'c Catalog {
        self.catalog
    }

    pub fn vectors(&self) -> &[EmbeddingVector] {
        &self.vectors
    }

    /// Top-k by cosine similarity, descending, ties in catalog order.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize, exec: Execution) -> Result<Vec<RetrievalCandidate>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        if self.catalog.is_empty() {
            return Err(RetrievalError::EmptyCatalog);
        }
        let sims = exec.map(&self.vectors, |v| query.cosine(v));
        let mut order: Vec<usize> = (0..sims.len()).collect();
        // stable: equal similarities keep catalog order
        order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]));
        Ok(order
            .into_iter()
            .take(k)
            .map(|i| RetrievalCandidate {
                entry: self.catalog.entries()[i].clone(),
                catalog_position: i,
                similarity: sims[i],
                rerank_score: None,
            })
            .collect())
    }

    pub fn retrieve(&self, scenario: &str, backend: &dyn EmbeddingBackend, k: usize, exec: Execution) -> Result<Vec<RetrievalCandidate>, RetrievalError> {
        let query = backend.embed(scenario)?;
        self.top_k(&query, k, exec)
    }
}

pub fn retrieve_top_k(
    scenario: &str,
    catalog: &Catalog,
    k: usize,
    backend: &dyn EmbeddingBackend,
) -> Result<Vec<RetrievalCandidate>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    if catalog.is_empty() {
        return Err(RetrievalError::EmptyCatalog);
    }
    SignalIndex::build(catalog, backend, Execution::default())?.retrieve(scenario, backend, k, Execution::default())
}

/// Trigger term -> boost keywords, e.g. `accelerating -> [speed, pedal, torque]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionTable {
    #[serde(default = "default_boost")]
    pub boost_weight: f64,
    #[serde(default)]
    pub triggers: BTreeMap<String, Vec<String>>,
}

fn default_boost() -> f64 {
    DEFAULT_BOOST_WEIGHT
}

impl Default for ExpansionTable {
    fn default() -> Self {
        let row = |t: &str, ks: &[&str]| (t.to_string(), ks.iter().map(|k| k.to_string()).collect());
        ExpansionTable {
            boost_weight: DEFAULT_BOOST_WEIGHT,
            triggers: BTreeMap::from([
                row("accelerating", &["speed", "pedal", "torque"]),
                row("braking", &["brake", "pedal", "deceleration"]),
                row("hazard", &["hazard"]),
                row("pedestrian", &["hazard", "horn"]),
            ]),
        }
    }
}

impl ExpansionTable {
    pub fn empty() -> Self {
        ExpansionTable {
            boost_weight: DEFAULT_BOOST_WEIGHT,
            triggers: BTreeMap::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, RetrievalError> {
        let table: ExpansionTable =
            toml::from_str(text).map_err(|e| RetrievalError::InvalidExpansionTable(e.to_string()))?;
        table.check()?;
        Ok(table)
    }

    pub fn check(&self) -> Result<(), RetrievalError> {
        let bad = |s: &str| s.is_empty() || s.chars().any(char::is_uppercase);
        if self.boost_weight.is_nan() || self.boost_weight < 0.0 {
            return Err(RetrievalError::InvalidExpansionTable("boost_weight must be >= 0".into()));
        }
        for (trigger, keywords) in &self.triggers {
            if bad(trigger) || keywords.iter().any(|k| bad(k)) {
                return Err(RetrievalError::InvalidExpansionTable(format!(
                    "row {trigger:?}: triggers and keywords must be lowercase and non-empty"
                )));
            }
        }
        Ok(())
    }

    /// Distinct boost keywords for every trigger present in the scenario.
    pub fn active_keywords(&self, scenario: &str) -> Vec<&str> {
        let words = crate::text::words(scenario);
        let mut out: Vec<&str> = Vec::new();
        for (trigger, keywords) in &self.triggers {
            let needle = crate::text::words(trigger);
            let present = !needle.is_empty() && words.windows(needle.len()).any(|w| w == needle.as_slice());
            if present {
                for k in keywords {
                    if !out.contains(&k.as_str()) {
                        out.push(k);
                    }
                }
            }
        }
        out
    }
}

pub enum RerankMode<'a> {
    Rules(&'a ExpansionTable),
    External(&'a dyn RerankProvider),
}

/// Re-score candidates and re-sort by the new score (stable).
pub fn rerank(
    mut candidates: Vec<RetrievalCandidate>,
    scenario: &str,
    mode: RerankMode<'_>,
) -> Result<Vec<RetrievalCandidate>, RetrievalError> {
    match mode {
        RerankMode::Rules(table) => {
            let keywords = table.active_keywords(scenario);
            for c in &mut candidates {
                let path = c.entry.path.to_lowercase();
                let desc = c.entry.description.as_deref().unwrap_or("").to_lowercase();
                let hits = keywords
                    .iter()
                    .filter(|k| path.contains(*k) || desc.contains(*k))
                    .count();
                c.rerank_score = Some(c.similarity + table.boost_weight * hits as f64);
            }
        }
        RerankMode::External(provider) => {
            let lines: Vec<String> = candidates.iter().map(|c| kb_line(&c.entry)).collect();
            let scores = provider.scores(scenario, &lines)?;
            for (c, s) in candidates.iter_mut().zip(scores) {
                c.rerank_score = Some(s);
            }
        }
    }
    candidates.sort_by(|a, b| b.score().total_cmp(&a.score()));
    Ok(candidates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub lines: Vec<String>,
    pub estimated_tokens: usize,
}

/// `ceil(chars / 4)`.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Greedy, rank-order partition of candidate prompt lines into chunks whose
/// token estimate stays within `token_budget`.
pub fn make_chunks(candidates: &[RetrievalCandidate], token_budget: usize) -> Result<Vec<Chunk>, RetrievalError> {
    let lines: Vec<String> = candidates.iter().map(|c| format_prompt_line(&c.entry)).collect();
    chunk_lines(lines, token_budget)
}

pub fn chunk_lines(lines: Vec<String>, token_budget: usize) -> Result<Vec<Chunk>, RetrievalError> {
    let mut chunks: Vec<Chunk> = Vec::new();
    let mut current = Chunk {
        lines: Vec::new(),
        estimated_tokens: 0,
    };
    for line in lines {
        let tokens = estimate_tokens(&line);
        if tokens > token_budget {
            return Err(RetrievalError::SingleLineOverflow {
                line,
                tokens,
                budget: token_budget,
            });
        }
        if !current.lines.is_empty() && current.estimated_tokens + tokens > token_budget {
            chunks.push(std::mem::replace(
                &mut current,
                Chunk {
                    lines: Vec::new(),
                    estimated_tokens: 0,
                },
            ));
        }
        current.lines.push(line);
        current.estimated_tokens += tokens;
    }
    if !current.lines.is_empty() {
        chunks.push(current);
    }
    Ok(chunks)
}

fn clean_item(item: &str) -> &str {
    item.trim_matches(|c: char| c.is_whitespace() || matches!(c, '"' | '\'' | '`'))
}

/// Normalise, concatenate and de-duplicate the comma/newline separated
/// signal lists returned for each chunk.
pub fn merge_signal_lists<S: AsRef<str>>(responses: &[S]) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for response in responses {
        for item in response.as_ref().split([',', '\n']) {
            let item = clean_item(item);
            if !item.is_empty() && seen.insert(item.to_string()) {
                out.push(item.to_string());
            }
        }
    }
    out
}

/// Signals that passed catalog validation. Only [`validate_signals`] builds one.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedSignals {
    entries: Vec<VssEntry>,
}

impl ValidatedSignals {
    pub fn entries(&self) -> &[VssEntry] {
        &self.entries
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.path.as_str())
    }

    pub fn contains(&self, path: &str) -> bool {
        self.entries.iter().any(|e| e.path == path)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalValidation {
    pub valid: Vec<String>,
    pub rejected: Vec<String>,
    #[serde(skip)]
    entries: Vec<VssEntry>,
}

impl SignalValidation {
    pub fn validated(&self) -> ValidatedSignals {
        ValidatedSignals {
            entries: self.entries.clone(),
        }
    }
}

/// Split selected paths into catalog hits and rejects, both in input order.
pub fn validate_signals<S: AsRef<str>>(selected: &[S], catalog: &Catalog) -> SignalValidation {
    let mut seen = HashSet::new();
    let mut result = SignalValidation {
        valid: Vec::new(),
        rejected: Vec::new(),
        entries: Vec::new(),
    };
    for path in selected {
        let path = path.as_ref();
        if !seen.insert(path) {
            continue;
        }
        match catalog.lookup(path) {
            Some(entry) => {
                result.valid.push(path.to_string());
                result.entries.push(entry.clone());
            }
            None => result.rejected.push(path.to_string()),
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vss::{parse_vss_json, AccessorDirection, AccessorSpec, SignalKind};

    fn entry(path: &str, description: &str) -> VssEntry {
        VssEntry {
            path: path.into(),
            kind: SignalKind::Sensor,
            datatype: "float".into(),
            unit: None,
            description: (!description.is_empty()).then(|| description.into()),
            accessors: vec![AccessorSpec {
                name: "get".into(),
                direction: AccessorDirection::Getter,
                param_signature: String::new(),
            }],
        }
    }

    fn cand(path: &str, description: &str, pos: usize, sim: f64) -> RetrievalCandidate {
        RetrievalCandidate {
            entry: entry(path, description),
            catalog_position: pos,
            similarity: sim,
            rerank_score: None,
        }
    }

    #[test]
    fn lexical_similarity_prefers_hazard() {
        let e = LexicalEmbedder::default();
        let q = e.embed_text("hazard lights");
        let hazard = q.cosine(&e.embed_text("Vehicle.Body.Lights.Hazard"));
        let engine = q.cosine(&e.embed_text("Vehicle.Powertrain.Engine.Speed"));
        // "hazard" and "lights" both hit the hazard path: 2/sqrt(2*4)
        assert!((hazard - 2.0 / 8f64.sqrt()).abs() < 1e-12);
        assert_eq!(engine, 0.0);
    }

    #[test]
    fn rules_rerank_boosts_expansion_keywords() {
        let table = ExpansionTable {
            boost_weight: 0.5,
            triggers: BTreeMap::from([(
                "accelerating".to_string(),
                vec!["speed".into(), "pedal".into(), "torque".into()],
            )]),
        };
        let cands = vec![
            cand("Vehicle.Cabin.Seat.Heating", "Seat heating level.", 0, 0.30),
            cand("Vehicle.Powertrain.Torque", "Requested drive torque.", 1, 0.20),
        ];
        let out = rerank(cands, "Vehicle is accelerating onto the highway", RerankMode::Rules(&table)).unwrap();
        assert_eq!(out[0].entry.path, "Vehicle.Powertrain.Torque");
        assert!((out[0].rerank_score.unwrap() - 0.70).abs() < 1e-12);
        assert_eq!(out[1].rerank_score, Some(0.30));
    }

    #[test]
    fn empty_table_is_identity() {
        let cands = vec![cand("A.B", "", 0, 0.9), cand("A.C", "", 1, 0.5), cand("A.D", "", 2, 0.1)];
        let out = rerank(cands.clone(), "anything", RerankMode::Rules(&ExpansionTable::empty())).unwrap();
        let paths: Vec<_> = out.iter().map(|c| c.entry.path.as_str()).collect();
        assert_eq!(paths, ["A.B", "A.C", "A.D"]);
    }

    #[test]
    fn rerank_is_stable_on_ties() {
        let cands = vec![cand("A.X", "", 0, 0.4), cand("A.Y", "", 1, 0.4)];
        let out = rerank(cands, "x", RerankMode::Rules(&ExpansionTable::empty())).unwrap();
        assert_eq!(out[0].entry.path, "A.X");
        assert_eq!(out[1].entry.path, "A.Y");
    }

    struct FixedScores(Vec<f64>);
    impl RerankProvider for FixedScores {
        fn scores(&self, _q: &str, c: &[String]) -> Result<Vec<f64>, RetrievalError> {
            assert_eq!(c.len(), self.0.len());
            Ok(self.0.clone())
        }
    }

    #[test]
    fn external_rerank_uses_provider_scores() {
        let cands = vec![cand("A.X", "", 0, 0.9), cand("A.Y", "", 1, 0.1)];
        let out = rerank(cands, "q", RerankMode::External(&FixedScores(vec![-2.0, 3.5]))).unwrap();
        assert_eq!(out[0].entry.path, "A.Y");
        assert_eq!(out[0].rerank_score, Some(3.5));
    }

    #[test]
    fn chunk_sizes_follow_greedy_rule() {
        let lines: Vec<String> = (0..10).map(|i| format!("{:0>40}", i)).collect();
        let chunks = chunk_lines(lines, 25).unwrap();
        let sizes: Vec<_> = chunks.iter().map(|c| c.lines.len()).collect();
        assert_eq!(sizes, [2, 2, 2, 2, 2]);
        assert!(chunks.iter().all(|c| c.estimated_tokens == 20));
    }

    #[test]
    fn chunking_edge_cases() {
        assert!(chunk_lines(Vec::new(), 10).unwrap().is_empty());
        let big = chunk_lines(vec!["x".repeat(41)], 10);
        assert!(matches!(big, Err(RetrievalError::SingleLineOverflow { tokens: 11, .. })));
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcde"), 2);
    }

    #[test]
    fn merge_examples() {
        assert_eq!(
            merge_signal_lists(&["Vehicle.Body.Lights.Hazard, Vehicle.Speed", "Vehicle.Speed"]),
            ["Vehicle.Body.Lights.Hazard", "Vehicle.Speed"]
        );
        assert_eq!(merge_signal_lists(&[" `Vehicle.Body.Lights.Hazard` "]), ["Vehicle.Body.Lights.Hazard"]);
        assert!(merge_signal_lists(&[""]).is_empty());
        assert_eq!(merge_signal_lists(&["'A.B'\n\"A.C\",,A.B"]), ["A.B", "A.C"]);
    }

    #[test]
    fn validation_splits_hits_and_inventions() {
        let cat = parse_vss_json(
            r#"{"Vehicle": {"children": {
                "Speed": {"type": "sensor", "datatype": "float"},
                "Body": {"children": {"Lights": {"children": {"Hazard": {"type": "actuator",
                    "datatype": "boolean", "accessors": ["set_is_signaling(bool value)"]}}}}}}}}"#,
        )
        .unwrap();
        let r = validate_signals(
            &["Vehicle.Imaginary", "Vehicle.Speed", "vehicle.speed", "Vehicle.Body.Lights.Hazard", "Vehicle.Speed"],
            &cat,
        );
        assert_eq!(r.valid, ["Vehicle.Speed", "Vehicle.Body.Lights.Hazard"]);
        assert_eq!(r.rejected, ["Vehicle.Imaginary", "vehicle.speed"]);
        assert_eq!(r.validated().entries().len(), 2);
    }

    #[test]
    fn retrieval_errors() {
        let empty = Catalog::default();
        let e = LexicalEmbedder::default();
        assert_eq!(retrieve_top_k("x", &empty, 3, &e), Err(RetrievalError::EmptyCatalog));
        let one = Catalog::from_entries(vec![entry("Vehicle.Speed", "")]).unwrap();
        assert_eq!(retrieve_top_k("x", &one, 0, &e), Err(RetrievalError::InvalidK));
        let r = retrieve_top_k("speed", &one, 1, &e).unwrap();
        assert_eq!(r.len(), 1);
        assert!((-1.0..=1.0).contains(&r[0].similarity));
    }

    #[test]
    fn expansion_table_validation() {
        assert!(ExpansionTable::from_toml("boost_weight = 0.5\n[triggers]\nAccel = [\"speed\"]\n").is_err());
        assert!(ExpansionTable::from_toml("boost_weight = -1.0\n").is_err());
        let t = ExpansionTable::from_toml("[triggers]\naccelerating = [\"speed\"]\n").unwrap();
        assert_eq!(t.boost_weight, 0.5);
    }
}
