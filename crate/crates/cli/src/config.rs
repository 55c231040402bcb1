//! Pipeline configuration file. Relative paths resolve against the
//! directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use evchain_core::codegen::{DeployTarget, DEFAULT_BUILD_COMMAND, DEFAULT_TOPIC_PATTERN};
use evchain_core::llm::ProviderConfig;
use evchain_core::retrieval::{DEFAULT_CHUNK_BUDGET, DEFAULT_DIM, DEFAULT_K};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingBackendKind {
    #[default]
    Builtin,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RerankKind {
    #[default]
    Rules,
    External,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    #[serde(default)]
    pub backend: EmbeddingBackendKind,
    /// Base URL of the embedding service; required for `external`.
    pub url: Option<String>,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub rerank: RerankKind,
    #[serde(default = "default_embed_timeout")]
    pub timeout_s: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            backend: EmbeddingBackendKind::Builtin,
            url: None,
            dim: DEFAULT_DIM,
            rerank: RerankKind::Rules,
            timeout_s: default_embed_timeout(),
        }
    }
}

fn default_dim() -> usize {
    DEFAULT_DIM
}

fn default_embed_timeout() -> u64 {
    30
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeployConfig {
    pub host: String,
    pub user: String,
    pub remote_path: String,
    #[serde(default = "default_build")]
    pub build_command: String,
}

fn default_build() -> String {
    DEFAULT_BUILD_COMMAND.to_string()
}

impl DeployConfig {
    pub fn target(&self) -> DeployTarget {
        DeployTarget {
            host: self.host.clone(),
            user: self.user.clone(),
            remote_path: self.remote_path.clone(),
            build_command: self.build_command.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    catalog_path: PathBuf,
    kb_path: Option<PathBuf>,
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default = "default_chunk_budget")]
    chunk_budget: usize,
    expansion_table_path: Option<PathBuf>,
    #[serde(default)]
    topics: Vec<String>,
    topic_pattern: Option<String>,
    templates_dir: Option<PathBuf>,
    code_template_path: PathBuf,
    fixtures_dir: PathBuf,
    output_dir: PathBuf,
    model: String,
    #[serde(default)]
    rules: Vec<String>,
    provider: ProviderConfig,
    #[serde(default)]
    embedding: EmbeddingConfig,
    deploy: Option<DeployConfig>,
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_chunk_budget() -> usize {
    DEFAULT_CHUNK_BUDGET
}

/// Validated configuration with absolute paths.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub catalog_path: PathBuf,
    pub kb_path: PathBuf,
    pub k: usize,
    pub chunk_budget: usize,
    pub expansion_table_path: Option<PathBuf>,
    pub topics: Vec<String>,
    pub topic_pattern: String,
    /// `None` selects the templates bundled with the library.
    pub templates_dir: Option<PathBuf>,
    pub code_template_path: PathBuf,
    pub fixtures_dir: PathBuf,
    pub output_dir: PathBuf,
    pub model: String,
    pub rules: Vec<String>,
    pub provider: ProviderConfig,
    pub embedding: EmbeddingConfig,
    pub deploy: Option<DeployConfig>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base).with_context(|| format!("config {}", path.display()))
    }

    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text)?;
        let abs = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let output_dir = abs(&raw.output_dir);
        let cfg = PipelineConfig {
            catalog_path: abs(&raw.catalog_path),
            kb_path: raw.kb_path.as_deref().map(abs).unwrap_or_else(|| output_dir.join("kb.csv")),
            k: raw.k,
            chunk_budget: raw.chunk_budget,
            expansion_table_path: raw.expansion_table_path.as_deref().map(abs),
            topics: raw.topics,
            topic_pattern: raw.topic_pattern.unwrap_or_else(|| DEFAULT_TOPIC_PATTERN.to_string()),
            templates_dir: raw.templates_dir.as_deref().map(abs),
            code_template_path: abs(&raw.code_template_path),
            fixtures_dir: abs(&raw.fixtures_dir),
            output_dir,
            model: raw.model,
            rules: raw.rules,
            provider: raw.provider,
            embedding: raw.embedding,
            deploy: raw.deploy,
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.k < 1 {
            bail!("k must be at least 1");
        }
        if self.chunk_budget < 1 {
            bail!("chunk_budget must be at least 1");
        }
        if self.model.trim().is_empty() {
            bail!("model must be set");
        }
        let mut required = vec![("catalog_path", &self.catalog_path), ("code_template_path", &self.code_template_path)];
        if let Some(p) = &self.expansion_table_path {
            required.push(("expansion_table_path", p));
        }
        if let Some(p) = &self.templates_dir {
            required.push(("templates_dir", p));
        }
        for (key, path) in required {
            if !path.exists() {
                bail!("{key} {} does not exist", path.display());
            }
        }
        let external = self.embedding.backend == EmbeddingBackendKind::External || self.embedding.rerank == RerankKind::External;
        if external && self.embedding.url.is_none() {
            bail!("embedding.url is required for the external backend or reranker");
        }
        Ok(())
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_min(dir: &Path, extra: &str) -> PathBuf {
        fs::write(dir.join("catalog.json"), "{}").unwrap();
        fs::write(dir.join("template.cpp"), "").unwrap();
        let cfg = dir.join("config.toml");
        fs::write(
            &cfg,
            format!(
                "catalog_path = \"catalog.json\"\ncode_template_path = \"template.cpp\"\nfixtures_dir = \"fx\"\noutput_dir = \"out\"\nmodel = \"m\"\n{extra}\n[provider]\nbase_url = \"http://localhost:1\"\n"
            ),
        )
        .unwrap();
        cfg
    }

    #[test]
    fn resolves_relative_paths_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::load(&write_min(dir.path(), "")).unwrap();
        assert_eq!(cfg.catalog_path, dir.path().join("catalog.json"));
        assert_eq!(cfg.kb_path, dir.path().join("out/kb.csv"));
        assert_eq!((cfg.k, cfg.chunk_budget), (DEFAULT_K, DEFAULT_CHUNK_BUDGET));
        assert_eq!(cfg.embedding.backend, EmbeddingBackendKind::Builtin);
    }

    #[test]
    fn rejects_invalid_values() {
        let dir = tempfile::tempdir().unwrap();
        assert!(PipelineConfig::load(&write_min(dir.path(), "k = 0")).is_err());
        assert!(PipelineConfig::load(&write_min(dir.path(), "chunk_budget = 0")).is_err());
        assert!(PipelineConfig::load(&write_min(dir.path(), "expansion_table_path = \"nope.toml\"")).is_err());
        assert!(PipelineConfig::load(&write_min(dir.path(), "unknown_key = 1")).is_err());
        assert!(PipelineConfig::load(&write_min(dir.path(), "[embedding]\nbackend = \"external\"")).is_err());
    }
}
