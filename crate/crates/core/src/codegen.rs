//! Code generation context, request assembly, lexical lint of generated
//! sources against the validated signal and topic whitelists, and deploy
//! script emission.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::Serialize;
use thiserror::Error;

use crate::chain::{to_json_model, EventChain};
use crate::llm::{strip_code_fences, ChatMessage, ChatRequest, GatewayError, LlmGateway};
use crate::prompt::{bindings, render, PromptError, PromptTemplate, RenderedPrompt, TemplateId, TemplateStore};
use crate::retrieval::ValidatedSignals;
use crate::vss::format_prompt_line;

/// Lowercase words joined by hyphens, e.g. `camera-front-detect`.
pub const DEFAULT_TOPIC_PATTERN: &str = r"^[a-z0-9]+(-[a-z0-9]+)+$";

/// Remote build command used when none is configured.
pub const DEFAULT_BUILD_COMMAND: &str = "make";

static SIGNAL_PATH: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bVehicle(\.[A-Za-z0-9_]+)+").expect("valid regex"));
static IDENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[A-Za-z_][A-Za-z0-9_]*").expect("valid regex"));

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error("no validated signals to generate code for")]
    EmptySignalSet,
    #[error("missing asset {0}")]
    MissingAsset(PathBuf),
    #[error("code generation template does not embed the mapping example verbatim")]
    MappingExampleMissing,
    #[error("invalid topic {0:?}")]
    InvalidTopic(String),
    #[error("invalid topic pattern: {0}")]
    InvalidTopicPattern(String),
    #[error("invalid deploy target: {0}")]
    InvalidDeployTarget(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TopicRegistry {
    topics: Vec<String>,
}

impl TopicRegistry {
    pub fn new<S: AsRef<str>>(topics: &[S]) -> Result<Self, CodegenError> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(topics.len());
        for t in topics {
            let t = t.as_ref();
            if t.is_empty() || t.contains(char::is_whitespace) || !seen.insert(t) {
                return Err(CodegenError::InvalidTopic(t.to_string()));
            }
            out.push(t.to_string());
        }
        Ok(TopicRegistry { topics: out })
    }

    pub fn topics(&self) -> &[String] {
        &self.topics
    }

    pub fn contains(&self, topic: &str) -> bool {
        self.topics.iter().any(|t| t == topic)
    }
}

pub fn topic_pattern(pattern: &str) -> Result<Regex, CodegenError> {
    Regex::new(pattern).map_err(|e| CodegenError::InvalidTopicPattern(e.to_string()))
}

/// Everything the code-generation prompt is built from.
#[derive(Debug, Clone)]
pub struct GenerationContext<'a> {
    pub topics: TopicRegistry,
    pub signals: ValidatedSignals,
    pub mapping_example: String,
    pub code_template: String,
    pub chain: &'a EventChain,
    pub template: PromptTemplate,
    pub topic_pattern: Regex,
}

pub fn assemble_context<'a>(
    chain: &'a EventChain,
    signals: &ValidatedSignals,
    topics: &TopicRegistry,
    store: &TemplateStore,
    code_template_path: &Path,
) -> Result<GenerationContext<'a>, CodegenError> {
    if signals.is_empty() {
        return Err(CodegenError::EmptySignalSet);
    }
    let template = store.load(TemplateId::CodeGen)?;
    let mapping_example = store.mapping_example()?;
    if !template.body.contains(&mapping_example) {
        return Err(CodegenError::MappingExampleMissing);
    }
    let code_template =
        fs::read_to_string(code_template_path).map_err(|_| CodegenError::MissingAsset(code_template_path.to_path_buf()))?;
    Ok(GenerationContext {
        topics: topics.clone(),
        signals: signals.clone(),
        mapping_example,
        code_template,
        chain,
        template,
        topic_pattern: topic_pattern(DEFAULT_TOPIC_PATTERN)?,
    })
}

impl GenerationContext<'_> {
    pub fn render_prompt(&self) -> Result<RenderedPrompt, CodegenError> {
        let topics = self.topics.topics().join(", ");
        let signals: Vec<String> = self.signals.entries().iter().map(format_prompt_line).collect();
        let signals = signals.join("\n");
        Ok(render(
            &self.template,
            &bindings([
                ("system-topics", topics.as_str()),
                ("Extracted VSS signals", signals.as_str()),
                ("code-template", self.code_template.as_str()),
            ]),
        )?)
    }

    /// The validated chain goes in a system message ahead of the prompt.
    pub fn request(&self, model: &str) -> Result<ChatRequest, CodegenError> {
        let prompt = self.render_prompt()?;
        let mut request = ChatRequest::user(model, prompt.text);
        let chain = format!("Event chain to implement (JSON):\n{}", to_json_model(self.chain));
        request.messages.insert(0, ChatMessage::system(chain));
        Ok(request)
    }
}

/// Completion text with any surrounding code fence removed.
pub fn generate_code(context: &GenerationContext<'_>, gateway: &LlmGateway, model: &str) -> Result<String, CodegenError> {
    let reply = gateway.complete(&context.request(model)?)?;
    Ok(strip_code_fences(&reply.content).to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    UnknownSignal,
    UnknownTopic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub token: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LintReport {
    pub signal_refs_found: Vec<String>,
    pub accessor_refs_found: Vec<String>,
    pub topic_refs_found: Vec<String>,
    pub violations: Vec<Violation>,
    pub clean: bool,
}

pub fn lint_generated(source: &str, context: &GenerationContext<'_>) -> LintReport {
    lint_source(source, &context.signals, &context.topics, &context.topic_pattern)
}

/// Token scan: `Vehicle.*` paths must be validated signals and
/// topic-shaped string literals must be registered topics.
pub fn lint_source(source: &str, signals: &ValidatedSignals, topics: &TopicRegistry, topic_pattern: &Regex) -> LintReport {
    let accessors: BTreeSet<String> = signals
        .entries()
        .iter()
        .flat_map(|e| e.accessors.iter().map(|a| a.name.clone()))
        .collect();
    let mut signal_refs = Vec::new();
    let mut accessor_refs = Vec::new();
    let mut topic_refs = Vec::new();
    let mut violations = Vec::new();
    let push_unique = |list: &mut Vec<String>, token: &str| {
        if !list.iter().any(|t| t == token) {
            list.push(token.to_string());
        }
    };

    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        for m in SIGNAL_PATH.find_iter(line) {
            let path = m.as_str();
            if signals.contains(path) {
                push_unique(&mut signal_refs, path);
            } else {
                violations.push(Violation {
                    kind: ViolationKind::UnknownSignal,
                    token: path.to_string(),
                    line: line_no,
                });
            }
        }
        for m in IDENT.find_iter(line) {
            if accessors.contains(m.as_str()) {
                push_unique(&mut accessor_refs, m.as_str());
            }
        }
        for literal in string_literals(line) {
            if !topic_pattern.is_match(&literal) {
                continue;
            }
            if topics.contains(&literal) {
                push_unique(&mut topic_refs, &literal);
            } else {
                violations.push(Violation {
                    kind: ViolationKind::UnknownTopic,
                    token: literal,
                    line: line_no,
                });
            }
        }
    }
    LintReport {
        clean: violations.is_empty(),
        signal_refs_found: signal_refs,
        accessor_refs_found: accessor_refs,
        topic_refs_found: topic_refs,
        violations,
    }
}

/// Contents of double-quoted literals on one line, backslash escapes kept
/// verbatim except for the escaped quote itself.
fn string_literals(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut chars = line.chars();
    let mut current: Option<String> = None;
    while let Some(c) = chars.next() {
        match (&mut current, c) {
            (None, '"') => current = Some(String::new()),
            (None, '\'') => {
                // skip character literals such as '"'
                for d in chars.by_ref() {
                    if d == '\'' {
                        break;
                    }
                }
            }
            (None, '/') if chars.as_str().starts_with('/') => break,
            (None, _) => {}
            (Some(s), '\\') => {
                if let Some(d) = chars.next() {
                    if d != '"' {
                        s.push('\\');
                    }
                    s.push(d);
                }
            }
            (Some(_), '"') => out.push(current.take().expect("inside literal")),
            (Some(s), _) => s.push(c),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeployTarget {
    pub host: String,
    pub user: String,
    pub remote_path: String,
    pub build_command: String,
}

impl DeployTarget {
    pub fn new(host: &str, user: &str, remote_path: &str) -> Self {
        DeployTarget {
            host: host.to_string(),
            user: user.to_string(),
            remote_path: remote_path.to_string(),
            build_command: DEFAULT_BUILD_COMMAND.to_string(),
        }
    }
}

fn single_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

fn double_quote(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        if matches!(c, '\\' | '"' | '$' | '`') {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

/// Shell script that copies the artifacts to the target and rebuilds there.
/// Text only; nothing is executed.
pub fn emit_deploy_script<P: AsRef<Path>>(target: &DeployTarget, artifacts: &[P]) -> Result<String, CodegenError> {
    for (what, value) in [
        ("host", &target.host),
        ("user", &target.user),
        ("remote_path", &target.remote_path),
        ("build_command", &target.build_command),
    ] {
        if value.trim().is_empty() || value.contains(['\n', '\r']) {
            return Err(CodegenError::InvalidDeployTarget(format!("{what} must be a non-empty single line")));
        }
    }
    if target.host.contains(['@', ':', '/']) || target.user.contains(['@', ':', '/']) {
        return Err(CodegenError::InvalidDeployTarget("host and user must not contain '@', ':' or '/'".into()));
    }
    let login = format!("{}@{}", target.user, target.host);
    let remote = single_quote(&target.remote_path);
    let mut out = String::from("#!/bin/sh\nset -e\n");
    for a in artifacts {
        out.push_str(&format!(
            "scp {} {}\n",
            single_quote(&a.as_ref().to_string_lossy()),
            double_quote(&format!("{login}:{remote}"))
        ));
    }
    out.push_str(&format!(
        "ssh {} {}\n",
        single_quote(&login),
        double_quote(&format!("cd {remote} && {}", target.build_command))
    ));
    Ok(out)
}
