//! Command-line surface. Every pipeline stage is a subcommand; `run` chains
//! them. Exit codes: 0 success, 1 check failure, 2 error.

use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use evchain_core::chain::{from_json, parse_plantuml};
use evchain_core::executor::{check_reaction_budget, simulate_many, ExecutionLog, MessageTrace};
use evchain_core::rules::{validate_all, Status};
use evchain_core::vss::{parse_kb, parse_vss_json, Catalog};
use evchain_core::Execution;

use crate::config::PipelineConfig;
use crate::pipeline::{self, status_word, InStage, Mode, Pipeline, StageError, StageResult};

#[derive(Parser, Debug)]
#[command(name = "evchain", version, about = "Event-chain driven ADAS code generation pipeline")]
pub struct Cli {
    /// Pipeline config file.
    #[arg(long, global = true, default_value = "evchain.toml")]
    pub config: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Catalog operations.
    #[command(subcommand)]
    Vss(VssCmd),
    /// Retrieve and re-rank catalog candidates for a scenario.
    Retrieve(ScenarioArg),
    /// Signal selection and validation.
    #[command(subcommand)]
    Signals(SignalsCmd),
    /// Event-chain generation and transformation.
    #[command(subcommand)]
    Chain(ChainCmd),
    /// Check rules against an event-chain JSON model.
    Validate(ValidateArgs),
    /// Rule-script generation.
    #[command(subcommand)]
    Rules(RulesCmd),
    /// Generate code (default) or lint generated code.
    Codegen(CodegenArgs),
    /// Simulated execution.
    #[command(subcommand)]
    Sim(SimCmd),
    /// Deployment helpers.
    #[command(subcommand)]
    Deploy(DeployCmd),
    /// Run the whole pipeline.
    Run(RunArgs),
}

#[derive(Args, Debug)]
pub struct ScenarioArg {
    #[arg(long)]
    pub scenario: String,
}

#[derive(Subcommand, Debug)]
pub enum VssCmd {
    /// Parse the catalog and write the flattened knowledge base.
    Parse,
}

#[derive(Subcommand, Debug)]
pub enum SignalsCmd {
    /// Ask the model to pick signals from the retrieved candidates.
    Select(ScenarioArg),
    /// Split selected signals into catalog hits and rejects.
    Validate,
}

#[derive(Subcommand, Debug)]
pub enum ChainCmd {
    /// Generate a PlantUML event chain.
    Generate {
        #[arg(long)]
        scenario: String,
        /// Chain to refine; omitted for a fresh chain.
        #[arg(long)]
        current: Option<PathBuf>,
        /// Refinement feedback appended to the scenario.
        #[arg(long)]
        feedback: Vec<String>,
    },
    /// Convert PlantUML to the JSON model.
    Transform {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long)]
    pub json: PathBuf,
    #[arg(long = "rule", required = true)]
    pub rules: Vec<String>,
    /// Also write the report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum RulesCmd {
    /// Generate a shell script that runs the validator once per rule.
    Gen {
        #[arg(long)]
        constraints: String,
    },
}

#[derive(Args, Debug)]
pub struct CodegenArgs {
    #[command(subcommand)]
    pub command: Option<CodegenCmd>,
}

#[derive(Subcommand, Debug)]
pub enum CodegenCmd {
    /// Generate source code from the chain and validated signals.
    Generate,
    /// Lint generated source against validated signals and topics.
    Lint {
        /// Source file; defaults to the generated artifact.
        #[arg(long)]
        source: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
pub enum SimCmd {
    /// Simulate the chain against one or more message traces.
    Run(SimArgs),
}

#[derive(Args, Debug)]
pub struct SimArgs {
    #[arg(long)]
    pub json: PathBuf,
    #[arg(long = "trace", required = true)]
    pub traces: Vec<PathBuf>,
    /// VSS catalog (JSON) used to recognise actuations.
    #[arg(long, conflicts_with = "kb")]
    pub catalog: Option<PathBuf>,
    /// Flattened knowledge base used to recognise actuations.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Reaction-time limit; any trace over it exits 1.
    #[arg(long)]
    pub limit_ms: Option<u64>,
    /// Write the execution logs as JSON.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum DeployCmd {
    /// Write deploy.sh for the configured target.
    Script {
        /// Artifacts to copy; defaults to the generated source.
        #[arg(long = "artifact")]
        artifacts: Vec<String>,
    },
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: String,
    /// Rules to check; defaults to the rules in the config.
    #[arg(long = "rule")]
    pub rules: Vec<String>,
    /// Pause after the chain is built for accept, refine or abort.
    #[arg(long)]
    pub interactive: bool,
}

/// Parse `args` (including the program name) and execute. Returns the exit code.
pub fn run<I, T>(args: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(stderr, "{rendered}")
            } else {
                write!(stdout, "{rendered}")
            };
            return code;
        }
    };
    match execute(cli, stdin, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            2
        }
    }
}

fn load_pipeline(config: &Path) -> StageResult<Pipeline> {
    Ok(Pipeline::new(PipelineConfig::load(config).stage("config")?))
}

fn say(out: &mut dyn Write, line: impl AsRef<str>) -> StageResult<()> {
    writeln!(out, "{}", line.as_ref()).stage("output")
}

fn execute(cli: Cli, stdin: &mut dyn BufRead, out: &mut dyn Write) -> StageResult<i32> {
    match cli.command {
        Command::Validate(args) => validate(&args, out),
        Command::Sim(SimCmd::Run(args)) => sim(&args, out),
        command => with_config(&cli.config, command, stdin, out),
    }
}

fn with_config(config: &Path, command: Command, stdin: &mut dyn BufRead, out: &mut dyn Write) -> StageResult<i32> {
    let p = load_pipeline(config)?;
    match command {
        Command::Vss(VssCmd::Parse) => {
            let catalog = p.catalog()?;
            say(out, format!("{} entries -> {}", catalog.len(), p.config.kb_path.display()))?;
        }
        Command::Retrieve(a) => {
            let catalog = p.load_kb("retrieve")?;
            for c in p.retrieve(&catalog, &a.scenario)? {
                say(out, format!("{:.4} {}", c.score(), c.entry.path))?;
            }
        }
        Command::Signals(SignalsCmd::Select(a)) => {
            let candidates = p.load_candidates("signals select")?;
            for s in p.select_signals(&candidates, &a.scenario)? {
                say(out, s)?;
            }
        }
        Command::Signals(SignalsCmd::Validate) => {
            let catalog = p.load_kb("signals validate")?;
            let selected = p.load_selected("signals validate")?;
            let v = p.validate_signals(&catalog, &selected)?;
            say(out, format!("{} valid, {} rejected", v.valid.len(), v.rejected.len()))?;
            for r in &v.rejected {
                say(out, format!("rejected: {r}"))?;
            }
        }
        Command::Chain(ChainCmd::Generate { scenario, current, feedback }) => {
            const STAGE: &str = "chain generate";
            let current = match current {
                Some(path) => Some(parse_plantuml(&pipeline::require_file(&path, STAGE)?).stage(STAGE)?),
                None => None,
            };
            let binding = std::iter::once(scenario).chain(feedback).collect::<Vec<_>>().join("\n");
            let chain = p.generate_chain(&binding, current.as_ref())?;
            say(out, format!("{} nodes -> {}", chain.nodes().len(), pipeline::CHAIN_PUML))?;
        }
        Command::Chain(ChainCmd::Transform { input, output }) => {
            let input = input.unwrap_or_else(|| p.config.artifact(pipeline::CHAIN_PUML));
            let output = output.unwrap_or_else(|| p.config.artifact(pipeline::CHAIN_JSON));
            p.transform(&input, &output)?;
            say(out, format!("-> {}", output.display()))?;
        }
        Command::Rules(RulesCmd::Gen { constraints }) => {
            p.rule_script(&constraints)?;
            say(out, format!("-> {}", pipeline::RULE_SCRIPT))?;
        }
        Command::Codegen(CodegenArgs { command }) => {
            let catalog = p.load_kb("codegen")?;
            let signals = p.load_validated(&catalog, "codegen")?;
            let chain = p.load_chain_json("codegen")?;
            match command.unwrap_or(CodegenCmd::Generate) {
                CodegenCmd::Generate => {
                    let code = p.generate_code(&chain, &signals)?;
                    say(out, format!("{} lines -> {}", code.lines().count(), pipeline::CODE))?;
                }
                CodegenCmd::Lint { source } => {
                    let source = source.unwrap_or_else(|| p.config.artifact(pipeline::CODE));
                    let text = pipeline::require_file(&source, "codegen lint")?;
                    let report = p.lint(&chain, &signals, &text)?;
                    for v in &report.violations {
                        say(out, format!("line {}: {:?} {}", v.line, v.kind, v.token))?;
                    }
                    say(out, if report.clean { "clean" } else { "violations found" })?;
                    if !report.clean {
                        return Ok(1);
                    }
                }
            }
        }
        Command::Deploy(DeployCmd::Script { artifacts }) => {
            let artifacts = if artifacts.is_empty() {
                vec![pipeline::CODE.to_string()]
            } else {
                artifacts
            };
            if p.deploy_script(&artifacts)?.is_none() {
                return Err(anyhow!("config has no [deploy] section")).stage("deploy script");
            }
            say(out, format!("-> {}", pipeline::DEPLOY))?;
        }
        Command::Run(a) => {
            let rules = if a.rules.is_empty() { p.config.rules.clone() } else { a.rules };
            let mode = if a.interactive { Mode::Interactive } else { Mode::Batch };
            let outcome = p.run(&a.scenario, &rules, mode, stdin, out)?;
            say(out, format!("[run] {outcome:?}"))?;
            return Ok(outcome.exit_code());
        }
        Command::Validate(_) | Command::Sim(_) => unreachable!("handled without config"),
    }
    Ok(0)
}

fn validate(args: &ValidateArgs, out: &mut dyn Write) -> StageResult<i32> {
    const STAGE: &str = "validate";
    let chain = from_json(&pipeline::require_file(&args.json, STAGE)?).stage(STAGE)?;
    let rules = pipeline::parse_rules(&args.rules, STAGE)?;
    let report = validate_all(&chain, &rules);
    for r in &report.results {
        say(out, format!("{}: {}: {}", status_word(r.status), r.rule, r.detail))?;
    }
    if let Some(path) = &args.report {
        let mut text = serde_json::to_string_pretty(&report).stage(STAGE)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display())).stage(STAGE)?;
    }
    Ok(match report.overall {
        Status::Pass => 0,
        Status::Fail => 1,
        Status::Error => 2,
    })
}

fn sim(args: &SimArgs, out: &mut dyn Write) -> StageResult<i32> {
    const STAGE: &str = "sim run";
    let chain = from_json(&pipeline::require_file(&args.json, STAGE)?).stage(STAGE)?;
    let catalog: Option<Catalog> = match (&args.catalog, &args.kb) {
        (Some(p), _) => Some(parse_vss_json(&pipeline::require_file(p, STAGE)?).stage(STAGE)?),
        (None, Some(p)) => Some(parse_kb(pipeline::require_file(p, STAGE)?.lines()).stage(STAGE)?),
        (None, None) => None,
    };
    let traces = args
        .traces
        .iter()
        .map(|p| MessageTrace::from_json(&pipeline::require_file(p, STAGE)?).map_err(|e| StageError {
            stage: STAGE,
            error: anyhow::Error::from(e).context(p.display().to_string()),
        }))
        .collect::<StageResult<Vec<_>>>()?;
    let logs: Vec<ExecutionLog> = simulate_many(&chain, &traces, catalog.as_ref(), Execution::default())
        .into_iter()
        .collect::<Result<_, _>>()
        .stage(STAGE)?;
    let mut code = 0;
    for (path, log) in args.traces.iter().zip(&logs) {
        let first = log.actuations.first();
        let line = match (first, args.limit_ms) {
            (None, _) => {
                code = 1;
                "no actuation".to_string()
            }
            (Some(a), None) => format!("actuation {} at {} ms", a.node_id, a.t_end_ms),
            (Some(_), Some(limit)) => {
                let check = check_reaction_budget(log, limit).stage(STAGE)?;
                if !check.pass {
                    code = 1;
                }
                let verdict = if check.pass { "PASS" } else { "FAIL" };
                format!("{verdict}: reaction {} ms, limit {limit} ms", check.reaction_ms)
            }
        };
        say(out, format!("{}: {line}", path.display()))?;
    }
    if let Some(path) = &args.log {
        let mut text = serde_json::to_string_pretty(&logs).stage(STAGE)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display())).stage(STAGE)?;
    }
    Ok(code)
}
