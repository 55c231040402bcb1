//! Simulated-clock execution of an event chain against a scripted message
//! trace.
//!
//! Execution starts at the first trace entry whose topic matches the start
//! node's `input`. Each node consumes its full time budget. A decision reads
//! the boolean flags of all entries received up to its start time; the flags
//! it looks at are those whose names share a normalised token with the
//! condition text.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{EventChain, EventNode, NodeKind};
use crate::exec::Execution;
use crate::text::{shares_stem, stems};
use crate::vss::{Catalog, SignalKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("no trace entry matches the start node input")]
    NoTrigger,
    #[error("condition {condition:?} of node {node} matches no flag in the trace")]
    UnresolvableCondition { node: String, condition: String },
    #[error("execution log has no actuation")]
    NoActuation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEntry {
    pub t_ms: u64,
    pub topic: String,
    #[serde(default)]
    pub payload: String,
    #[serde(default)]
    pub flags: BTreeMap<String, bool>,
}

/// Entries ordered by non-decreasing `t_ms`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct MessageTrace {
    entries: Vec<TraceEntry>,
}

impl MessageTrace {
    pub fn new(entries: Vec<TraceEntry>) -> Result<Self, ExecError> {
        if let Some(w) = entries.windows(2).find(|w| w[1].t_ms < w[0].t_ms) {
            return Err(ExecError::InvalidTrace(format!(
                "t_ms decreases from {} to {}",
                w[0].t_ms, w[1].t_ms
            )));
        }
        Ok(MessageTrace { entries })
    }

    /// Parse a JSON array of entries.
    pub fn from_json(text: &str) -> Result<Self, ExecError> {
        let entries = serde_json::from_str(text).map_err(|e| ExecError::InvalidTrace(e.to_string()))?;
        MessageTrace::new(entries)
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub node_id: String,
    pub label: String,
    pub t_start_ms: u64,
    pub t_end_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actuation {
    pub node_id: String,
    pub t_end_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionLog {
    pub trigger_t_ms: u64,
    pub steps: Vec<Step>,
    pub actuations: Vec<Actuation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReactionCheck {
    pub pass: bool,
    pub reaction_ms: u64,
}

fn triggers(start: &EventNode, entry: &TraceEntry) -> bool {
    match &start.params.input {
        None => true,
        Some(input) => {
            let accepted = stems(input);
            let topic = stems(&entry.topic);
            !topic.is_empty() && topic.iter().all(|t| accepted.contains(t))
        }
    }
}

/// A terminal node drives an actuator when its `output` names a catalog
/// actuator or its label mentions an actuator's leaf name. Without a
/// catalog, any `Vehicle.` output counts.
fn is_actuation(node: &EventNode, catalog: Option<&Catalog>) -> bool {
    let output = node.params.output.as_deref().map(str::trim);
    match catalog {
        None => output.is_some_and(|o| o.starts_with("Vehicle.")),
        Some(cat) => {
            let label = stems(&node.label);
            cat.entries().iter().filter(|e| e.kind == SignalKind::Actuator).any(|e| {
                output == Some(e.path.as_str()) || shares_stem(&stems(e.leaf_name()), &label)
            })
        }
    }
}

fn decide(node: &EventNode, trace: &MessageTrace, now: u64) -> Result<bool, ExecError> {
    let condition = node.condition.as_deref().unwrap_or(&node.label);
    let cond = stems(condition);
    let relevant = |name: &str| shares_stem(&stems(name), &cond);
    let known = trace.entries().iter().flat_map(|e| e.flags.keys()).any(|k| relevant(k));
    if !known {
        return Err(ExecError::UnresolvableCondition {
            node: node.id.clone(),
            condition: condition.to_string(),
        });
    }
    Ok(trace
        .entries()
        .iter()
        .take_while(|e| e.t_ms <= now)
        .flat_map(|e| e.flags.iter())
        .any(|(k, &v)| v && relevant(k)))
}

pub fn simulate(chain: &EventChain, trace: &MessageTrace, catalog: Option<&Catalog>) -> Result<ExecutionLog, ExecError> {
    let start = chain.node(chain.start()).expect("start exists");
    let trigger = trace
        .entries()
        .iter()
        .find(|e| triggers(start, e))
        .ok_or(ExecError::NoTrigger)?;
    let mut now = trigger.t_ms;
    let mut steps = Vec::new();
    let mut actuations = Vec::new();
    let mut current = Some(start);
    while let Some(node) = current {
        let t_start = now;
        now += node.params.budget();
        steps.push(Step {
            node_id: node.id.clone(),
            label: node.label.clone(),
            t_start_ms: t_start,
            t_end_ms: now,
        });
        let mut outs = chain.out_edges(&node.id);
        let next = match node.kind {
            NodeKind::Action => outs.next(),
            NodeKind::Decision => {
                let (then_edge, else_edge) = (outs.next(), outs.next());
                if decide(node, trace, t_start)? {
                    then_edge
                } else {
                    else_edge
                }
            }
        };
        if next.is_none() && is_actuation(node, catalog) {
            actuations.push(Actuation {
                node_id: node.id.clone(),
                t_end_ms: now,
            });
        }
        current = next.map(|e| chain.node(&e.to).expect("validated edge"));
    }
    Ok(ExecutionLog {
        trigger_t_ms: trigger.t_ms,
        steps,
        actuations,
    })
}

/// One simulation per trace, results in trace order.
pub fn simulate_many(
    chain: &EventChain,
    traces: &[MessageTrace],
    catalog: Option<&Catalog>,
    exec: Execution,
) -> Vec<Result<ExecutionLog, ExecError>> {
    exec.map(traces, |t| simulate(chain, t, catalog))
}

/// Time from trigger to the end of the first actuation.
pub fn check_reaction_budget(log: &ExecutionLog, limit_ms: u64) -> Result<ReactionCheck, ExecError> {
    let first = log.actuations.first().ok_or(ExecError::NoActuation)?;
    let reaction_ms = first.t_end_ms - log.trigger_t_ms;
    Ok(ReactionCheck {
        pass: reaction_ms <= limit_ms,
        reaction_ms,
    })
}
