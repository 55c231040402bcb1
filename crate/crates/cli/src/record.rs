//! Fixture recording without a model endpoint. A scripted transport answers
//! each chat request with the first reply whose `when` text occurs in the
//! request body; the gateway in record mode stores the exchange as a replay
//! fixture.

use std::fs;
use std::io::{self, Cursor};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use serde::Deserialize;
use serde_json::json;

use evchain_core::llm::{ChatRequest, ChatTransport, HttpReply, ProviderMode, TransportError};

use crate::config::PipelineConfig;
use crate::pipeline::{Mode, Pipeline};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedReply {
    /// Substring of the last user message that selects this reply.
    pub when: String,
    pub reply: String,
}

pub struct ScriptedTransport {
    replies: Vec<ScriptedReply>,
    calls: AtomicUsize,
}

impl ScriptedTransport {
    pub fn new(replies: Vec<ScriptedReply>) -> Self {
        ScriptedTransport {
            replies,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self::new(serde_json::from_str(&text).with_context(|| path.display().to_string())?))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatTransport for ScriptedTransport {
    fn post_json(&self, _url: &str, _api_key: &str, body: &str, _timeout: Duration) -> Result<HttpReply, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let request: ChatRequest =
            serde_json::from_str(body).map_err(|e| TransportError::Connect(format!("bad request body: {e}")))?;
        let prompt = request.messages.last().map(|m| m.content.as_str()).unwrap_or("");
        let Some(r) = self.replies.iter().find(|r| prompt.contains(&r.when)) else {
            return Ok(HttpReply {
                status: 404,
                body: "no scripted reply".into(),
            });
        };
        let wire = json!({
            "choices": [{"message": {"role": "assistant", "content": r.reply}, "finish_reason": "stop"}],
        });
        Ok(HttpReply {
            status: 200,
            body: wire.to_string(),
        })
    }
}

/// A pipeline invocation whose model exchanges should be recorded.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Session {
    pub scenario: String,
    #[serde(default)]
    pub rules: Vec<String>,
    /// Interactive answers, one per line; empty for a batch run.
    #[serde(default)]
    pub answers: Vec<String>,
    /// Constraint text for a rule-script generation.
    #[serde(default)]
    pub constraints: Option<String>,
}

/// Run every session against the scripted replies and store fixtures in
/// `fixtures_dir`. Returns the number of scripted calls made.
pub fn record(
    config: &PipelineConfig,
    replies: Vec<ScriptedReply>,
    sessions: &[Session],
    fixtures_dir: &Path,
    output_dir: &Path,
) -> anyhow::Result<usize> {
    const KEY_ENV: &str = "EVCHAIN_RECORDER_KEY";
    // the gateway insists on a key before any live call
    std::env::set_var(KEY_ENV, "recorder");
    let mut config = config.clone();
    config.provider.mode = ProviderMode::Record;
    config.provider.api_key_env = KEY_ENV.to_string();
    config.provider.max_retries = 0;
    config.fixtures_dir = fixtures_dir.to_path_buf();
    config.output_dir = output_dir.to_path_buf();
    config.kb_path = output_dir.join(crate::pipeline::KB);
    let transport = Arc::new(ScriptedTransport::new(replies));
    let pipeline = Pipeline::with_transport(config, transport.clone());
    for s in sessions {
        let mode = if s.answers.is_empty() { Mode::Batch } else { Mode::Interactive };
        let mut input = Cursor::new(s.answers.iter().map(|a| format!("{a}\n")).collect::<String>());
        pipeline
            .run(&s.scenario, &s.rules, mode, &mut input, &mut io::sink())
            .map_err(|e| anyhow!("{e}"))?;
        if let Some(c) = &s.constraints {
            pipeline.rule_script(c).map_err(|e| anyhow!("{e}"))?;
        }
    }
    Ok(transport.calls())
}

/// The scripted replies and sessions stored next to a case-study config.
pub fn load_script(dir: &Path) -> anyhow::Result<(Vec<ScriptedReply>, Vec<Session>)> {
    let read = |name: &str| -> anyhow::Result<String> {
        let path = dir.join(name);
        fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))
    };
    let replies = serde_json::from_str(&read("replies.json")?).context("replies.json")?;
    let sessions = serde_json::from_str(&read("sessions.json")?).context("sessions.json")?;
    Ok((replies, sessions))
}
