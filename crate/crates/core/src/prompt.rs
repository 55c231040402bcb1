//! Prompt templates stored as text assets and rendered by `[name]`
//! placeholder substitution.
//!
//! Only the placeholders declared for a template are substituted; other
//! bracketed text in a body (for example `[time_budget]` in the rule-script
//! prompt, which is part of the rule syntax shown to the model) is literal.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bound to `[current-event-chain]` before any chain exists.
pub const NO_CURRENT_CHAIN: &str = "(none)";

/// File name of the acceleration mapping example shipped next to the templates.
pub const MAPPING_EXAMPLE_FILE: &str = "mapping_example.txt";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("missing template asset {0}")]
    MissingAsset(PathBuf),
    #[error("template {id} does not contain placeholder [{placeholder}]")]
    TemplateMismatch { id: TemplateId, placeholder: String },
    #[error("no binding for placeholder [{0}]")]
    MissingBinding(String),
    #[error("binding {0:?} is not a placeholder of this template")]
    UnknownBinding(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TemplateId {
    SignalSelection,
    EventChainGen,
    RuleScriptGen,
    CodeGen,
}

impl TemplateId {
    pub const ALL: [TemplateId; 4] = [
        TemplateId::SignalSelection,
        TemplateId::EventChainGen,
        TemplateId::RuleScriptGen,
        TemplateId::CodeGen,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateId::SignalSelection => "signal_selection.txt",
            TemplateId::EventChainGen => "event_chain_gen.txt",
            TemplateId::RuleScriptGen => "rule_script_gen.txt",
            TemplateId::CodeGen => "code_gen.txt",
        }
    }

    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateId::SignalSelection => &["scenario/diagram", "VSS candidate signals"],
            TemplateId::EventChainGen => &["current-event-chain", "scenario"],
            TemplateId::RuleScriptGen => &["constraint rule"],
            TemplateId::CodeGen => &["system-topics", "Extracted VSS signals", "code-template"],
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(id: TemplateId, body: String) -> Result<Self, PromptError> {
        for p in id.placeholders() {
            if !body.contains(&format!("[{p}]")) {
                return Err(PromptError::TemplateMismatch {
                    id,
                    placeholder: p.to_string(),
                });
            }
        }
        Ok(PromptTemplate { id, body })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenderedPrompt {
    pub template_id: TemplateId,
    pub text: String,
    pub bindings: BTreeMap<String, String>,
}

/// Directory of template assets.
#[derive(Debug, Clone)]
pub struct TemplateStore {
    dir: PathBuf,
}

impl TemplateStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        TemplateStore { dir: dir.into() }
    }

    /// Assets shipped with this crate.
    pub fn bundled() -> Self {
        TemplateStore::new(bundled_asset_dir())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn load(&self, id: TemplateId) -> Result<PromptTemplate, PromptError> {
        PromptTemplate::new(id, self.read(id.file_name())?)
    }

    pub fn mapping_example(&self) -> Result<String, PromptError> {
        self.read(MAPPING_EXAMPLE_FILE)
    }

    fn read(&self, name: &str) -> Result<String, PromptError> {
        let path = self.dir.join(name);
        fs::read_to_string(&path).map_err(|_| PromptError::MissingAsset(path))
    }
}

pub fn bundled_asset_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets").join("prompts")
}

/// Substitute every declared placeholder in one left-to-right pass.
pub fn render(template: &PromptTemplate, bindings: &BTreeMap<String, String>) -> Result<RenderedPrompt, PromptError> {
    let declared = template.id.placeholders();
    if let Some(unknown) = bindings.keys().find(|k| !declared.contains(&k.as_str())) {
        return Err(PromptError::UnknownBinding(unknown.clone()));
    }
    if let Some(missing) = declared.iter().find(|p| !bindings.contains_key(**p)) {
        return Err(PromptError::MissingBinding(missing.to_string()));
    }

    let body = template.body.as_str();
    let mut text = String::with_capacity(body.len());
    let mut rest = body;
    while let Some(open) = rest.find('[') {
        text.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = declared
            .iter()
            .find(|p| after.starts_with(**p) && after[p.len()..].starts_with(']'));
        match hit {
            Some(p) => {
                text.push_str(&bindings[*p]);
                rest = &after[p.len() + 1..];
            }
            None => {
                text.push('[');
                rest = after;
            }
        }
    }
    text.push_str(rest);

    Ok(RenderedPrompt {
        template_id: template.id,
        text,
        bindings: bindings.clone(),
    })
}

/// Convenience for building a binding map from pairs.
pub fn bindings<const N: usize>(pairs: [(&str, &str); N]) -> BTreeMap<String, String> {
    pairs
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
