//! JSON form of an event chain. Key order is fixed, optional note values are
//! omitted when absent, nodes appear in first-visit order.

use serde::{Deserialize, Serialize};

use super::{ChainError, Edge, EventChain, EventNode, NodeKind, NoteParams};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainDoc {
    name: String,
    start: String,
    terminals: Vec<String>,
    nodes: Vec<NodeDoc>,
    edges: Vec<EdgeDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: String,
    label: String,
    kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    condition: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time_budget_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_format: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_format: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeDoc {
    from: String,
    to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    guard: Option<String>,
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_json_model(chain: &EventChain) -> String {
    let order = chain.visit_order();
    let nodes = order
        .iter()
        .map(|&i| {
            let n = &chain.nodes()[i];
            let p = n.params.clone();
            NodeDoc {
                id: n.id.clone(),
                label: n.label.clone(),
                kind: n.kind,
                condition: n.condition.clone(),
                time_budget_ms: p.time_budget_ms,
                input: p.input,
                input_format: p.input_format,
                output: p.output,
                output_format: p.output_format,
            }
        })
        .collect();
    let edges = order
        .iter()
        .flat_map(|&i| chain.out_edges(&chain.nodes()[i].id))
        .map(|e| EdgeDoc {
            from: e.from.clone(),
            to: e.to.clone(),
            guard: e.guard.clone(),
        })
        .collect();
    let doc = ChainDoc {
        name: chain.name().to_string(),
        start: chain.start().to_string(),
        terminals: chain.terminals().to_vec(),
        nodes,
        edges,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("chain document serializes");
    text.push('\n');
    text
}

/// Parse and validate a chain document.
pub fn from_json(text: &str) -> Result<EventChain, ChainError> {
    let doc: ChainDoc = serde_json::from_str(text).map_err(|e| ChainError::SchemaError(e.to_string()))?;
    let nodes = doc
        .nodes
        .into_iter()
        .map(|n| EventNode {
            id: n.id,
            label: n.label,
            kind: n.kind,
            condition: n.condition,
            params: NoteParams {
                time_budget_ms: n.time_budget_ms,
                input: n.input,
                input_format: n.input_format,
                output: n.output,
                output_format: n.output_format,
            },
        })
        .collect();
    let edges = doc
        .edges
        .into_iter()
        .map(|e| Edge {
            from: e.from,
            to: e.to,
            guard: e.guard,
        })
        .collect();
    EventChain::from_parts(doc.name, nodes, edges, doc.start, doc.terminals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::parse_plantuml;

    #[test]
    fn one_node_chain() {
        let c = parse_plantuml("@startuml\nstart\n:A;\nstop\n@enduml").unwrap();
        let v: serde_json::Value = serde_json::from_str(&to_json_model(&c)).unwrap();
        assert_eq!(v["nodes"].as_array().unwrap().len(), 1);
        assert_eq!(v["edges"].as_array().unwrap().len(), 0);
        let keys: Vec<_> = v["nodes"][0].as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["id", "label", "kind"]);
        let top: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(top, ["name", "start", "terminals", "nodes", "edges"]);
    }

    #[test]
    fn round_trip_keeps_structure() {
        let c = parse_plantuml(
            "@startuml\n:R;\nnote right\ntime_budget: 20\ninput: a-b\nend note\nif (p?) then (yes)\n:H;\nelse (no)\n:M;\nendif\n@enduml",
        )
        .unwrap();
        let back = from_json(&to_json_model(&c)).unwrap();
        assert!(c.structurally_eq(&back));
        assert_eq!(to_json_model(&back), to_json_model(&c));
    }

    #[test]
    fn invariant_violations() {
        let cyc = r#"{"name":"x","start":"a","terminals":[],
            "nodes":[{"id":"a","label":"A","kind":"action"},{"id":"b","label":"B","kind":"action"}],
            "edges":[{"from":"a","to":"b"},{"from":"b","to":"a"}]}"#;
        assert!(matches!(from_json(cyc), Err(ChainError::CycleDetected(_))));
        let dangling = r#"{"name":"x","start":"a","terminals":["a"],
            "nodes":[{"id":"a","label":"A","kind":"action"}],
            "edges":[{"from":"a","to":"zz"}]}"#;
        assert!(matches!(from_json(dangling), Err(ChainError::DanglingEdge { .. })));
        let extra = r#"{"name":"x","start":"a","terminals":["a"],
            "nodes":[{"id":"a","label":"A","kind":"action","colour":"red"}],"edges":[]}"#;
        assert!(matches!(from_json(extra), Err(ChainError::SchemaError(_))));
        assert!(matches!(from_json("not json"), Err(ChainError::SchemaError(_))));
        let negative = r#"{"name":"x","start":"a","terminals":["a"],
            "nodes":[{"id":"a","label":"A","kind":"action","time_budget_ms":-1}],"edges":[]}"#;
        assert!(matches!(from_json(negative), Err(ChainError::SchemaError(_))));
    }
}
