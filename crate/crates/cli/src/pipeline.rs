//! Pipeline stages. Each stage writes its artifact into the output
//! directory; the per-stage subcommands read the previous stage's artifact,
//! so a run can be resumed from any stage.

use std::fmt;
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use serde::Serialize;

use evchain_core::chain::{parse_plantuml, to_json_model, to_plantuml, EventChain};
use evchain_core::codegen::{
    assemble_context, emit_deploy_script, generate_code, lint_generated, topic_pattern, LintReport, TopicRegistry,
};
use evchain_core::llm::{strip_code_fences, ChatRequest, ChatTransport, HttpTransport, LlmGateway};
use evchain_core::prompt::{bindings, render, TemplateId, TemplateStore, NO_CURRENT_CHAIN};
use evchain_core::retrieval::{
    chunk_lines, merge_signal_lists, rerank, validate_signals, EmbeddingBackend, ExpansionTable, HttpProvider,
    LexicalEmbedder, RerankMode, RetrievalCandidate, SignalIndex, SignalValidation, ValidatedSignals,
};
use evchain_core::rules::{generate_rule_script, parse_rule, validate_all, Rule, Status, ValidationReport};
use evchain_core::vss::{flatten_catalog, format_prompt_line, kb_file, parse_kb, parse_vss_json, Catalog};
use evchain_core::Execution;

use crate::config::{EmbeddingBackendKind, PipelineConfig, RerankKind};

pub const KB: &str = "kb.csv";
pub const CANDIDATES: &str = "candidates.json";
pub const SELECTED: &str = "selected_signals.txt";
pub const SIGNALS: &str = "signals.txt";
pub const REJECTED: &str = "rejected_signals.txt";
pub const CHAIN_PUML: &str = "chain.puml";
pub const CHAIN_JSON: &str = "event_chain.json";
pub const REPORT: &str = "validation_report.json";
pub const RULE_SCRIPT: &str = "validate_rules.sh";
pub const CODE: &str = "main.cpp";
pub const LINT: &str = "lint_report.json";
pub const DEPLOY: &str = "deploy.sh";
pub const RUN_INFO: &str = "run_info.json";

/// Artifacts written after the chain is accepted; a run clears them first so
/// an aborted or failed run never leaves output from an earlier one.
const LATE_ARTIFACTS: [&str; 5] = [REPORT, CODE, LINT, DEPLOY, RUN_INFO];

/// A failed stage: reported on stderr, exit status 2.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: anyhow::Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {}: {:#}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

pub type StageResult<T> = Result<T, StageError>;

pub trait InStage<T> {
    fn stage(self, stage: &'static str) -> StageResult<T>;
}

impl<T, E: Into<anyhow::Error>> InStage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> StageResult<T> {
        self.map_err(|e| StageError { stage, error: e.into() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Batch,
    Interactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    RuleFailure,
    LintFailure,
    Aborted,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Completed => 0,
            Outcome::RuleFailure | Outcome::LintFailure => 1,
            Outcome::Aborted => 2,
        }
    }
}

#[derive(Serialize)]
struct RunInfo<'a> {
    scenario: &'a str,
    rules: Vec<String>,
    mode: Mode,
    refine_iterations: usize,
    feedback: &'a [String],
    outcome: Outcome,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    gateway: LlmGateway,
    templates: TemplateStore,
    exec: Execution,
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn lines_file(items: &[String]) -> String {
    items.iter().map(|s| format!("{s}\n")).collect()
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable artifact");
    s.push('\n');
    s
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        Self::with_transport(config, Arc::new(HttpTransport::new()))
    }

    pub fn with_transport(config: PipelineConfig, transport: Arc<dyn ChatTransport>) -> Self {
        let gateway = LlmGateway::with_transport(config.provider.clone(), config.fixtures_dir.clone(), transport);
        let templates = match &config.templates_dir {
            Some(dir) => TemplateStore::new(dir),
            None => TemplateStore::bundled(),
        };
        Pipeline {
            config,
            gateway,
            templates,
            exec: Execution::default(),
        }
    }

    fn artifact(&self, name: &str) -> std::path::PathBuf {
        self.config.artifact(name)
    }

    /// Parse the nested catalog and write the flattened knowledge base.
    pub fn catalog(&self) -> StageResult<Catalog> {
        const STAGE: &str = "vss parse";
        let doc = read(&self.config.catalog_path).stage(STAGE)?;
        let catalog = parse_vss_json(&doc).stage(STAGE)?;
        write(&self.config.kb_path, &kb_file(&flatten_catalog(&catalog))).stage(STAGE)?;
        Ok(catalog)
    }

    /// Catalog as recorded in the knowledge base file.
    pub fn load_kb(&self, stage: &'static str) -> StageResult<Catalog> {
        let text = read(&self.config.kb_path)
            .context("run `vss parse` first")
            .stage(stage)?;
        parse_kb(text.lines()).stage(stage)
    }

    fn embedding_backend(&self) -> anyhow::Result<Box<dyn EmbeddingBackend>> {
        let e = &self.config.embedding;
        Ok(match e.backend {
            EmbeddingBackendKind::Builtin => Box::new(LexicalEmbedder::new(e.dim)),
            EmbeddingBackendKind::External => Box::new(self.http_provider()?),
        })
    }

    fn http_provider(&self) -> anyhow::Result<HttpProvider> {
        let e = &self.config.embedding;
        let url = e.url.as_deref().ok_or_else(|| anyhow!("embedding.url is not set"))?;
        Ok(HttpProvider::new(url, e.dim, Duration::from_secs(e.timeout_s))?)
    }

    /// Top-k retrieval followed by re-ranking.
    pub fn retrieve(&self, catalog: &Catalog, scenario: &str) -> StageResult<Vec<RetrievalCandidate>> {
        const STAGE: &str = "retrieve";
        let backend = self.embedding_backend().stage(STAGE)?;
        let index = SignalIndex::build(catalog, backend.as_ref(), self.exec).stage(STAGE)?;
        let candidates = index
            .retrieve(scenario, backend.as_ref(), self.config.k, self.exec)
            .stage(STAGE)?;
        let ranked = match self.config.embedding.rerank {
            RerankKind::Rules => {
                let table = match &self.config.expansion_table_path {
                    Some(p) => ExpansionTable::from_toml(&read(p).stage(STAGE)?).stage(STAGE)?,
                    None => ExpansionTable::default(),
                };
                rerank(candidates, scenario, RerankMode::Rules(&table))
            }
            RerankKind::External => {
                let provider = self.http_provider().stage(STAGE)?;
                rerank(candidates, scenario, RerankMode::External(&provider))
            }
        }
        .stage(STAGE)?;
        write(&self.artifact(CANDIDATES), &pretty(&ranked)).stage(STAGE)?;
        Ok(ranked)
    }

    pub fn load_candidates(&self, stage: &'static str) -> StageResult<Vec<RetrievalCandidate>> {
        let text = read(&self.artifact(CANDIDATES)).context("run `retrieve` first").stage(stage)?;
        serde_json::from_str(&text).stage(stage)
    }

    /// One selection prompt per chunk; replies merged in chunk order.
    pub fn select_signals(&self, candidates: &[RetrievalCandidate], scenario: &str) -> StageResult<Vec<String>> {
        const STAGE: &str = "signals select";
        let template = self.templates.load(TemplateId::SignalSelection).stage(STAGE)?;
        let lines = candidates.iter().map(|c| format_prompt_line(&c.entry)).collect();
        let chunks = chunk_lines(lines, self.config.chunk_budget).stage(STAGE)?;
        let replies = self
            .exec
            .try_map(&chunks, |chunk| -> anyhow::Result<String> {
                let listed = chunk.lines.join("\n");
                let prompt = render(
                    &template,
                    &bindings([("scenario/diagram", scenario), ("VSS candidate signals", listed.as_str())]),
                )?;
                let reply = self.gateway.complete(&ChatRequest::user(&self.config.model, prompt.text))?;
                Ok(reply.content)
            })
            .stage(STAGE)?;
        let merged = merge_signal_lists(&replies);
        write(&self.artifact(SELECTED), &lines_file(&merged)).stage(STAGE)?;
        Ok(merged)
    }

    pub fn load_selected(&self, stage: &'static str) -> StageResult<Vec<String>> {
        let text = read(&self.artifact(SELECTED)).context("run `signals select` first").stage(stage)?;
        Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
    }

    pub fn validate_signals(&self, catalog: &Catalog, selected: &[String]) -> StageResult<SignalValidation> {
        const STAGE: &str = "signals validate";
        let v = validate_signals(selected, catalog);
        write(&self.artifact(SIGNALS), &lines_file(&v.valid)).stage(STAGE)?;
        write(&self.artifact(REJECTED), &lines_file(&v.rejected)).stage(STAGE)?;
        Ok(v)
    }

    /// Validated signals as recorded in `signals.txt`, re-checked against the KB.
    pub fn load_validated(&self, catalog: &Catalog, stage: &'static str) -> StageResult<ValidatedSignals> {
        let text = read(&self.artifact(SIGNALS)).context("run `signals validate` first").stage(stage)?;
        let paths: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let v = validate_signals(&paths, catalog);
        if !v.rejected.is_empty() {
            return Err(anyhow!("{} lists paths missing from the catalog: {:?}", SIGNALS, v.rejected)).stage(stage);
        }
        Ok(v.validated())
    }

    /// Render the chain prompt, parse the reply and write `chain.puml`.
    /// `current` is the chain being refined, if any.
    pub fn generate_chain(&self, scenario: &str, current: Option<&EventChain>) -> StageResult<EventChain> {
        const STAGE: &str = "chain generate";
        let template = self.templates.load(TemplateId::EventChainGen).stage(STAGE)?;
        let current_text = current.map(to_plantuml);
        let prompt = render(
            &template,
            &bindings([
                ("current-event-chain", current_text.as_deref().unwrap_or(NO_CURRENT_CHAIN)),
                ("scenario", scenario),
            ]),
        )
        .stage(STAGE)?;
        let reply = self
            .gateway
            .complete(&ChatRequest::user(&self.config.model, prompt.text))
            .stage(STAGE)?;
        let chain = parse_plantuml(strip_code_fences(&reply.content))
            .context("model reply is not a valid event-chain diagram")
            .stage(STAGE)?;
        write(&self.artifact(CHAIN_PUML), &format!("{}\n", to_plantuml(&chain))).stage(STAGE)?;
        Ok(chain)
    }

    /// `chain.puml` to `event_chain.json`.
    pub fn transform(&self, input: &Path, output: &Path) -> StageResult<EventChain> {
        const STAGE: &str = "chain transform";
        let chain = parse_plantuml(&read(input).stage(STAGE)?).stage(STAGE)?;
        write(output, &to_json_model(&chain)).stage(STAGE)?;
        Ok(chain)
    }

    pub fn load_chain_json(&self, stage: &'static str) -> StageResult<EventChain> {
        let text = read(&self.artifact(CHAIN_JSON)).context("run `chain transform` first").stage(stage)?;
        evchain_core::chain::from_json(&text).stage(stage)
    }

    pub fn validate_rules(&self, chain: &EventChain, rules: &[Rule]) -> StageResult<ValidationReport> {
        let report = validate_all(chain, rules);
        write(&self.artifact(REPORT), &pretty(&report)).stage("validate")?;
        Ok(report)
    }

    pub fn rule_script(&self, constraints: &str) -> StageResult<String> {
        const STAGE: &str = "rules gen";
        let template = self.templates.load(TemplateId::RuleScriptGen).stage(STAGE)?;
        let script = generate_rule_script(constraints, &self.gateway, &template, &self.config.model).stage(STAGE)?;
        write(&self.artifact(RULE_SCRIPT), &script).stage(STAGE)?;
        Ok(script)
    }

    fn topics(&self) -> anyhow::Result<TopicRegistry> {
        Ok(TopicRegistry::new(&self.config.topics)?)
    }

    pub fn generate_code(&self, chain: &EventChain, signals: &ValidatedSignals) -> StageResult<String> {
        const STAGE: &str = "codegen";
        let topics = self.topics().stage(STAGE)?;
        let context = assemble_context(chain, signals, &topics, &self.templates, &self.config.code_template_path).stage(STAGE)?;
        let code = generate_code(&context, &self.gateway, &self.config.model).stage(STAGE)?;
        write(&self.artifact(CODE), &code).stage(STAGE)?;
        Ok(code)
    }

    pub fn lint(&self, chain: &EventChain, signals: &ValidatedSignals, source: &str) -> StageResult<LintReport> {
        const STAGE: &str = "codegen lint";
        let topics = self.topics().stage(STAGE)?;
        let mut context =
            assemble_context(chain, signals, &topics, &self.templates, &self.config.code_template_path).stage(STAGE)?;
        context.topic_pattern = topic_pattern(&self.config.topic_pattern).stage(STAGE)?;
        let report = lint_generated(source, &context);
        write(&self.artifact(LINT), &pretty(&report)).stage(STAGE)?;
        Ok(report)
    }

    /// Writes `deploy.sh` when a deploy target is configured.
    pub fn deploy_script(&self, artifacts: &[String]) -> StageResult<Option<String>> {
        const STAGE: &str = "deploy script";
        let Some(deploy) = &self.config.deploy else {
            return Ok(None);
        };
        let script = emit_deploy_script(&deploy.target(), artifacts).stage(STAGE)?;
        let path = self.artifact(DEPLOY);
        write(&path, &script).stage(STAGE)?;
        make_executable(&path).stage(STAGE)?;
        Ok(Some(script))
    }

    /// The full workflow. In interactive mode the chain is shown after the
    /// transform and the user answers `accept`, `refine <feedback>` or `abort`.
    pub fn run(
        &self,
        scenario: &str,
        rule_texts: &[String],
        mode: Mode,
        input: &mut dyn BufRead,
        out: &mut dyn Write,
    ) -> StageResult<Outcome> {
        let rules: Vec<Rule> = rule_texts
            .iter()
            .map(|r| parse_rule(r))
            .collect::<Result<_, _>>()
            .stage("validate")?;
        for stale in LATE_ARTIFACTS {
            let path = self.artifact(stale);
            if path.exists() {
                fs::remove_file(&path).stage("setup")?;
            }
        }
        let mut say = |line: String| writeln!(out, "{line}").stage("output");

        self.catalog()?;
        // later stages work from the written KB, as the per-stage commands do
        let catalog = self.load_kb("vss parse")?;
        say(format!("[vss parse] {} entries -> {}", catalog.len(), KB))?;
        let candidates = self.retrieve(&catalog, scenario)?;
        say(format!("[retrieve] {} candidates -> {}", candidates.len(), CANDIDATES))?;
        let selected = self.select_signals(&candidates, scenario)?;
        say(format!("[signals select] {} selected -> {}", selected.len(), SELECTED))?;
        let validation = self.validate_signals(&catalog, &selected)?;
        say(format!(
            "[signals validate] {} valid, {} rejected -> {}, {}",
            validation.valid.len(),
            validation.rejected.len(),
            SIGNALS,
            REJECTED
        ))?;
        let signals = self.load_validated(&catalog, "signals validate")?;

        let mut feedback: Vec<String> = Vec::new();
        let mut chain: Option<EventChain> = None;
        let outcome = loop {
            let binding = std::iter::once(scenario.to_string())
                .chain(feedback.iter().cloned())
                .collect::<Vec<_>>()
                .join("\n");
            let generated = self.generate_chain(&binding, chain.as_ref())?;
            say(format!("[chain generate] {} nodes -> {}", generated.nodes().len(), CHAIN_PUML))?;
            let transformed = self.transform(&self.artifact(CHAIN_PUML), &self.artifact(CHAIN_JSON))?;
            say(format!("[chain transform] -> {}", CHAIN_JSON))?;
            chain = Some(transformed);
            if mode == Mode::Batch {
                break None;
            }
            say(to_plantuml(chain.as_ref().expect("just set")))?;
            match prompt_decision(input, &mut say)? {
                Decision::Accept => break None,
                Decision::Abort => break Some(Outcome::Aborted),
                Decision::Refine(text) => feedback.push(text),
            }
        };
        let chain = chain.expect("at least one chain generated");

        let finish = |outcome: Outcome| -> StageResult<Outcome> {
            let info = RunInfo {
                scenario,
                rules: rules.iter().map(ToString::to_string).collect(),
                mode,
                refine_iterations: feedback.len(),
                feedback: &feedback,
                outcome,
            };
            write(&self.artifact(RUN_INFO), &pretty(&info)).stage("run info")?;
            Ok(outcome)
        };
        if let Some(outcome) = outcome {
            say("[abort] stopped before code generation".to_string())?;
            return finish(outcome);
        }

        let report = self.validate_rules(&chain, &rules)?;
        for r in &report.results {
            say(format!("[validate] {}: {}: {}", status_word(r.status), r.rule, r.detail))?;
        }
        match report.overall {
            Status::Pass => {}
            Status::Fail => return finish(Outcome::RuleFailure),
            Status::Error => {
                return Err(anyhow!("rule evaluation error, see {REPORT}")).stage("validate");
            }
        }

        let code = self.generate_code(&chain, &signals)?;
        say(format!("[codegen] {} lines -> {}", code.lines().count(), CODE))?;
        let lint = self.lint(&chain, &signals, &code)?;
        say(format!("[codegen lint] {} violations -> {}", lint.violations.len(), LINT))?;
        if !lint.clean {
            for v in &lint.violations {
                say(format!("[codegen lint] line {}: {:?} {}", v.line, v.kind, v.token))?;
            }
            return finish(Outcome::LintFailure);
        }
        match self.deploy_script(&[CODE.to_string()])? {
            Some(_) => say(format!("[deploy script] -> {}", DEPLOY))?,
            None => say("[deploy script] skipped, no [deploy] section".to_string())?,
        }
        finish(Outcome::Completed)
    }
}

pub fn status_word(s: Status) -> &'static str {
    match s {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::Error => "ERROR",
    }
}

enum Decision {
    Accept,
    Refine(String),
    Abort,
}

fn prompt_decision(input: &mut dyn BufRead, say: &mut dyn FnMut(String) -> StageResult<()>) -> StageResult<Decision> {
    loop {
        say("accept | refine <feedback> | abort ?".to_string())?;
        let mut line = String::new();
        let n = input.read_line(&mut line).stage("interactive")?;
        if n == 0 {
            // end of input counts as abort
            return Ok(Decision::Abort);
        }
        let line = line.trim();
        let (word, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        match (word, rest.trim()) {
            ("accept", "") => return Ok(Decision::Accept),
            ("abort", "") => return Ok(Decision::Abort),
            ("refine", text) if !text.is_empty() => return Ok(Decision::Refine(text.to_string())),
            _ => say(format!("unrecognised answer {line:?}"))?,
        }
    }
}

#[cfg(unix)]
fn make_executable(path: &Path) -> anyhow::Result<()> {
    use std::os::unix::fs::PermissionsExt;
    fs::set_permissions(path, fs::Permissions::from_mode(0o755))?;
    Ok(())
}

#[cfg(not(unix))]
fn make_executable(_path: &Path) -> anyhow::Result<()> {
    Ok(())
}

/// Parse rule strings, failing the named stage on the first bad one.
pub fn parse_rules(texts: &[String], stage: &'static str) -> StageResult<Vec<Rule>> {
    texts.iter().map(|r| parse_rule(r)).collect::<Result<_, _>>().stage(stage)
}

/// Load a trace/chain style file that must exist.
pub fn require_file(path: &Path, stage: &'static str) -> StageResult<String> {
    if !path.is_file() {
        return Err(anyhow!("{} does not exist", path.display())).stage(stage);
    }
    read(path).stage(stage)
}
