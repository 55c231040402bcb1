//! Event-chain model: an acyclic activity graph whose nodes carry timing and
//! I/O annotations, plus the PlantUML and JSON forms it moves between.
//!
//! Invariants held by every [`EventChain`] value:
//! - node ids are unique, labels non-empty and single-line;
//! - edges reference existing nodes and the graph is acyclic;
//! - every node is reachable from `start`;
//! - actions have at most one successor, decisions exactly two with
//!   distinct guards (the first listed edge is the `then` branch);
//! - `terminals` is exactly the set of nodes without successors;
//! - branches nest, i.e. the graph is expressible as if/else blocks.

mod json;
mod plantuml;

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use json::{from_json, to_json_model};
pub use plantuml::{parse_plantuml, to_plantuml};

/// Name used when a diagram does not carry one.
pub const DEFAULT_CHAIN_NAME: &str = "event_chain";

/// Note keys in their canonical order.
pub const NOTE_KEYS: [&str; 5] = ["time_budget", "input", "input_format", "output", "output_format"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("line {line}: {message}")]
    SyntaxError { line: usize, message: String },
    #[error("line {line}: unknown note key {key:?}")]
    UnknownNoteKey { line: usize, key: String },
    #[error("line {line}: note does not follow an activity")]
    NoteWithoutActivity { line: usize },
    #[error("line {line}: loops are not supported")]
    LoopUnsupported { line: usize },
    #[error("line {line}: unbalanced if/else/endif")]
    UnbalancedIf { line: usize },
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("cycle detected through {0:?}")]
    CycleDetected(Vec<String>),
    #[error("node {0} is not reachable from start")]
    UnreachableNode(String),
    #[error("edge {from} -> {to} references a missing node")]
    DanglingEdge { from: String, to: String },
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("{to} is not reachable from {from}")]
    Unreachable { from: String, to: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Action,
    Decision,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoteParams {
    pub time_budget_ms: Option<u64>,
    pub input: Option<String>,
    pub input_format: Option<String>,
    pub output: Option<String>,
    pub output_format: Option<String>,
}

impl NoteParams {
    pub fn is_empty(&self) -> bool {
        *self == NoteParams::default()
    }

    /// Present keys in canonical order, values rendered as text.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if let Some(b) = self.time_budget_ms {
            out.push(("time_budget", b.to_string()));
        }
        let texts = [
            ("input", &self.input),
            ("input_format", &self.input_format),
            ("output", &self.output),
            ("output_format", &self.output_format),
        ];
        for (key, value) in texts {
            if let Some(v) = value {
                out.push((key, v.clone()));
            }
        }
        out
    }

    fn text_slot(&mut self, key: &str) -> Option<&mut Option<String>> {
        match key {
            "input" => Some(&mut self.input),
            "input_format" => Some(&mut self.input_format),
            "output" => Some(&mut self.output),
            "output_format" => Some(&mut self.output_format),
            _ => None,
        }
    }

    /// Budget in ms, treating a missing budget as zero.
    pub fn budget(&self) -> u64 {
        self.time_budget_ms.unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventNode {
    pub id: String,
    pub label: String,
    pub kind: NodeKind,
    /// Branch condition; set for decisions only.
    pub condition: Option<String>,
    pub params: NoteParams,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub guard: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventChain {
    name: String,
    nodes: Vec<EventNode>,
    edges: Vec<Edge>,
    start: String,
    terminals: Vec<String>,
    index: HashMap<String, usize>,
    succ: Vec<Vec<usize>>,
}

/// Nested block structure recovered from the graph.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Stmt {
    Action(usize),
    If { decision: usize, then_block: Vec<Stmt>, else_block: Vec<Stmt> },
    Stop,
}

impl EventChain {
    /// Validate and assemble a chain. `terminals` must list exactly the nodes
    /// without successors (any order).
    pub fn from_parts(
        name: String,
        nodes: Vec<EventNode>,
        edges: Vec<Edge>,
        start: String,
        terminals: Vec<String>,
    ) -> Result<Self, ChainError> {
        let schema = |m: String| Err(ChainError::SchemaError(m));
        if name.trim() != name || name.is_empty() || name.contains('\n') {
            return schema(format!("invalid chain name {name:?}"));
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if n.id.trim().is_empty() || n.id.contains(char::is_whitespace) {
                return schema(format!("invalid node id {:?}", n.id));
            }
            if index.insert(n.id.clone(), i).is_some() {
                return schema(format!("duplicate node id {}", n.id));
            }
            check_node(n)?;
        }
        let mut succ = vec![Vec::new(); nodes.len()];
        for e in &edges {
            let (Some(&f), Some(&t)) = (index.get(&e.from), index.get(&e.to)) else {
                return Err(ChainError::DanglingEdge {
                    from: e.from.clone(),
                    to: e.to.clone(),
                });
            };
            succ[f].push(t);
        }
        let Some(&start_idx) = index.get(&start) else {
            return schema(format!("start {start:?} is not a node"));
        };

        let chain = EventChain {
            name,
            nodes,
            edges,
            start,
            terminals: Vec::new(),
            index,
            succ,
        };
        chain.topo_order()?;
        let reach = chain.reachable_from(start_idx);
        if let Some(i) = (0..chain.nodes.len()).find(|&i| !reach[i]) {
            return Err(ChainError::UnreachableNode(chain.nodes[i].id.clone()));
        }
        chain.check_out_edges()?;

        let expected: Vec<String> = (0..chain.nodes.len())
            .filter(|&i| chain.succ[i].is_empty())
            .map(|i| chain.nodes[i].id.clone())
            .collect();
        let mut given = terminals.clone();
        given.sort();
        given.dedup();
        let mut want = expected.clone();
        want.sort();
        if given.len() != terminals.len() || given != want {
            if let Some(t) = terminals.iter().find(|t| chain.index.get(*t).is_some_and(|&i| !chain.succ[i].is_empty())) {
                return schema(format!("terminal {t} has outgoing edges"));
            }
            return schema(format!("terminals {terminals:?} do not match nodes without successors {expected:?}"));
        }

        let mut chain = EventChain {
            terminals,
            ..chain
        };
        let structure = chain.structure()?;
        let mut order = Vec::new();
        preorder(&structure, &mut order);
        if order.len() != chain.nodes.len() {
            return schema("chain branches do not nest as if/else blocks".into());
        }
        // terminals follow first-visit order
        let pos: HashMap<usize, usize> = order.iter().enumerate().map(|(p, &i)| (i, p)).collect();
        chain.terminals.sort_by_key(|t| pos[&chain.index[t]]);
        Ok(chain)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn nodes(&self) -> &[EventNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn start(&self) -> &str {
        &self.start
    }

    pub fn terminals(&self) -> &[String] {
        &self.terminals
    }

    pub fn node(&self, id: &str) -> Option<&EventNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub(crate) fn idx(&self, id: &str) -> Result<usize, ChainError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| ChainError::UnknownNode(id.to_string()))
    }

    pub(crate) fn successors(&self, i: usize) -> &[usize] {
        &self.succ[i]
    }

    /// Outgoing edges of `id` in list order (for decisions: then, else).
    pub fn out_edges<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.from == id)
    }

    /// True when `to` can be reached from `from` along one or more edges.
    pub fn reaches(&self, from: &str, to: &str) -> Result<bool, ChainError> {
        let (f, t) = (self.idx(from)?, self.idx(to)?);
        if f == t {
            return Ok(false);
        }
        Ok(self.reachable_from(f)[t])
    }

    /// Inclusive reachability mask.
    fn reachable_from(&self, from: usize) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([from]);
        seen[from] = true;
        while let Some(n) = queue.pop_front() {
            for &s in &self.succ[n] {
                if !seen[s] {
                    seen[s] = true;
                    queue.push_back(s);
                }
            }
        }
        seen
    }

    /// Kahn's algorithm; reports the nodes left on a cycle.
    fn topo_order(&self) -> Result<Vec<usize>, ChainError> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        for s in self.succ.iter().flatten() {
            indeg[*s] += 1;
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for &s in &self.succ[i] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    queue.push_back(s);
                }
            }
        }
        if order.len() < n {
            let stuck = (0..n)
                .filter(|&i| indeg[i] > 0)
                .map(|i| self.nodes[i].id.clone())
                .collect();
            return Err(ChainError::CycleDetected(stuck));
        }
        Ok(order)
    }

    fn check_out_edges(&self) -> Result<(), ChainError> {
        for (i, node) in self.nodes.iter().enumerate() {
            let outs: Vec<&Edge> = self.out_edges(&node.id).collect();
            match node.kind {
                NodeKind::Action => {
                    if outs.len() > 1 {
                        return Err(ChainError::SchemaError(format!(
                            "action {} has {} successors; forks are not supported",
                            node.id,
                            outs.len()
                        )));
                    }
                    if outs.iter().any(|e| e.guard.is_some()) {
                        return Err(ChainError::SchemaError(format!("edge from action {} carries a guard", node.id)));
                    }
                }
                NodeKind::Decision => {
                    let guards: Vec<Option<&str>> = outs.iter().map(|e| e.guard.as_deref()).collect();
                    match guards.as_slice() {
                        [Some(a), Some(b)] if a != b => {
                            for g in [a, b] {
                                check_inline(g, "guard")?;
                            }
                        }
                        _ => {
                            return Err(ChainError::SchemaError(format!(
                                "decision {} needs exactly two outgoing edges with distinct guards",
                                node.id
                            )))
                        }
                    }
                }
            }
            debug_assert_eq!(self.succ[i].len(), outs.len());
        }
        Ok(())
    }

    /// First common node of two branches, or `None` when they never meet.
    fn join_of(&self, a: usize, b: usize, topo_pos: &[usize]) -> Option<usize> {
        let ra = self.reachable_from(a);
        let rb = self.reachable_from(b);
        (0..self.nodes.len())
            .filter(|&i| ra[i] && rb[i])
            .min_by_key(|&i| topo_pos[i])
    }

    pub(crate) fn structure(&self) -> Result<Vec<Stmt>, ChainError> {
        let order = self.topo_order()?;
        let mut topo_pos = vec![0; order.len()];
        for (p, &i) in order.iter().enumerate() {
            topo_pos[i] = p;
        }
        let mut visited = vec![false; self.nodes.len()];
        let start = self.index[&self.start];
        self.walk(start, None, &topo_pos, &mut visited)
    }

    fn walk(&self, from: usize, stop: Option<usize>, topo_pos: &[usize], visited: &mut [bool]) -> Result<Vec<Stmt>, ChainError> {
        let nested = || ChainError::SchemaError("chain branches do not nest as if/else blocks".into());
        let mut out = Vec::new();
        let mut cur = Some(from);
        while let Some(n) = cur {
            if Some(n) == stop {
                break;
            }
            if visited[n] {
                return Err(nested());
            }
            visited[n] = true;
            match self.nodes[n].kind {
                NodeKind::Action => {
                    out.push(Stmt::Action(n));
                    cur = self.succ[n].first().copied();
                    if cur.is_none() {
                        out.push(Stmt::Stop);
                    }
                }
                NodeKind::Decision => {
                    let (t, e) = (self.succ[n][0], self.succ[n][1]);
                    let join = self.join_of(t, e, topo_pos);
                    let inner_stop = join.or(stop);
                    let then_block = self.walk(t, inner_stop, topo_pos, visited)?;
                    let else_block = self.walk(e, inner_stop, topo_pos, visited)?;
                    out.push(Stmt::If {
                        decision: n,
                        then_block,
                        else_block,
                    });
                    cur = join;
                    if join.is_some_and(|j| stop.is_some_and(|s| topo_pos[j] > topo_pos[s])) {
                        return Err(nested());
                    }
                }
            }
        }
        Ok(out)
    }

    /// Node indices in first-visit (textual) order.
    pub(crate) fn visit_order(&self) -> Vec<usize> {
        let mut order = Vec::new();
        preorder(&self.structure().expect("validated chain has a block structure"), &mut order);
        order
    }

    /// Renumber ids `n1, n2, ...` in first-visit order and sort edges by
    /// source (then-branch first). Two chains are structurally equal when
    /// their canonical forms are equal.
    pub fn canonical(&self) -> EventChain {
        let order = self.visit_order();
        let new_id: HashMap<&str, String> = order
            .iter()
            .enumerate()
            .map(|(p, &i)| (self.nodes[i].id.as_str(), format!("n{}", p + 1)))
            .collect();
        let nodes = order
            .iter()
            .map(|&i| EventNode {
                id: new_id[self.nodes[i].id.as_str()].clone(),
                ..self.nodes[i].clone()
            })
            .collect();
        let mut edges = Vec::with_capacity(self.edges.len());
        for &i in &order {
            for e in self.out_edges(&self.nodes[i].id) {
                edges.push(Edge {
                    from: new_id[e.from.as_str()].clone(),
                    to: new_id[e.to.as_str()].clone(),
                    guard: e.guard.clone(),
                });
            }
        }
        let terminals = self.terminals.iter().map(|t| new_id[t.as_str()].clone()).collect();
        EventChain::from_parts(self.name.clone(), nodes, edges, new_id[self.start.as_str()].clone(), terminals)
            .expect("renaming preserves validity")
    }

    pub fn structurally_eq(&self, other: &EventChain) -> bool {
        self.canonical() == other.canonical()
    }
}

fn preorder(block: &[Stmt], out: &mut Vec<usize>) {
    for s in block {
        match s {
            Stmt::Action(i) => out.push(*i),
            Stmt::If {
                decision,
                then_block,
                else_block,
            } => {
                out.push(*decision);
                preorder(then_block, out);
                preorder(else_block, out);
            }
            Stmt::Stop => {}
        }
    }
}

fn check_inline(text: &str, what: &str) -> Result<(), ChainError> {
    let mut depth = 0i32;
    for c in text.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            _ => {}
        }
        if depth < 0 {
            break;
        }
    }
    if text.is_empty() || text.trim() != text || text.contains(['\n', '\r']) || depth != 0 {
        return Err(ChainError::SchemaError(format!(
            "{what} {text:?} must be non-empty, trimmed, single-line and paren-balanced"
        )));
    }
    Ok(())
}

fn check_node(n: &EventNode) -> Result<(), ChainError> {
    if n.label.trim().is_empty() || n.label.trim() != n.label || n.label.contains(['\n', '\r']) {
        return Err(ChainError::SchemaError(format!("node {} has an invalid label {:?}", n.id, n.label)));
    }
    match (n.kind, &n.condition) {
        (NodeKind::Decision, Some(c)) => check_inline(c, "condition")?,
        (NodeKind::Decision, None) => {
            return Err(ChainError::SchemaError(format!("decision {} has no condition", n.id)))
        }
        (NodeKind::Action, Some(_)) => {
            return Err(ChainError::SchemaError(format!("action {} carries a condition", n.id)))
        }
        (NodeKind::Action, None) => {}
    }
    for (key, value) in n.params.entries() {
        if value.is_empty() || value.trim() != value || value.contains(['\n', '\r']) {
            return Err(ChainError::SchemaError(format!("node {}: note value for {key} must be non-empty and single-line", n.id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Latency {
    pub min_ms: u64,
    pub max_ms: u64,
}

/// Minimum and maximum summed node budgets over all paths `from -> to`,
/// both endpoints included; missing budgets count as zero.
pub fn path_latency(chain: &EventChain, from: &str, to: &str) -> Result<Latency, ChainError> {
    let (f, t) = (chain.idx(from)?, chain.idx(to)?);
    let order = chain.topo_order()?;
    let budget = |i: usize| chain.nodes[i].params.budget();
    let mut best: Vec<Option<(u64, u64)>> = vec![None; chain.nodes.len()];
    best[f] = Some((budget(f), budget(f)));
    for &i in order.iter().skip_while(|&&i| i != f) {
        let Some((lo, hi)) = best[i] else { continue };
        for &s in chain.successors(i) {
            let b = budget(s);
            let cand = (lo + b, hi + b);
            best[s] = Some(match best[s] {
                None => cand,
                Some((l, h)) => (l.min(cand.0), h.max(cand.1)),
            });
        }
    }
    best[t]
        .map(|(min_ms, max_ms)| Latency { min_ms, max_ms })
        .ok_or_else(|| ChainError::Unreachable {
            from: from.to_string(),
            to: to.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn action(id: &str, budget: Option<u64>) -> EventNode {
        EventNode {
            id: id.into(),
            label: format!("step {id}"),
            kind: NodeKind::Action,
            condition: None,
            params: NoteParams {
                time_budget_ms: budget,
                ..NoteParams::default()
            },
        }
    }

    fn decision(id: &str) -> EventNode {
        EventNode {
            id: id.into(),
            label: "ok?".into(),
            kind: NodeKind::Decision,
            condition: Some("ok?".into()),
            params: NoteParams::default(),
        }
    }

    fn edge(from: &str, to: &str, guard: Option<&str>) -> Edge {
        Edge {
            from: from.into(),
            to: to.into(),
            guard: guard.map(str::to_string),
        }
    }

    fn chain(nodes: Vec<EventNode>, edges: Vec<Edge>, terminals: &[&str]) -> Result<EventChain, ChainError> {
        let start = nodes[0].id.clone();
        EventChain::from_parts(
            "t".into(),
            nodes,
            edges,
            start,
            terminals.iter().map(|s| s.to_string()).collect(),
        )
    }

    #[test]
    fn linear_latency() {
        let c = chain(
            vec![action("a", Some(20)), action("b", Some(10)), action("c", Some(50))],
            vec![edge("a", "b", None), edge("b", "c", None)],
            &["c"],
        )
        .unwrap();
        assert_eq!(path_latency(&c, "a", "c").unwrap(), Latency { min_ms: 80, max_ms: 80 });
        assert_eq!(path_latency(&c, "a", "a").unwrap(), Latency { min_ms: 20, max_ms: 20 });
        assert!(matches!(path_latency(&c, "c", "a"), Err(ChainError::Unreachable { .. })));
        assert!(matches!(path_latency(&c, "zz", "a"), Err(ChainError::UnknownNode(_))));
    }

    #[test]
    fn branch_latency_matches_path_enumeration() {
        // s -> d -> {x(30) | y(50)} -> j
        let c = chain(
            vec![action("s", Some(5)), decision("d"), action("x", Some(30)), action("y", Some(50)), action("j", Some(1))],
            vec![
                edge("s", "d", None),
                edge("d", "x", Some("yes")),
                edge("d", "y", Some("no")),
                edge("x", "j", None),
                edge("y", "j", None),
            ],
            &["j"],
        )
        .unwrap();
        // paths: s,d,x,j = 36 and s,d,y,j = 56
        assert_eq!(path_latency(&c, "s", "j").unwrap(), Latency { min_ms: 36, max_ms: 56 });
    }

    #[test]
    fn rejects_cycles_dangling_and_unreachable() {
        let cyc = chain(
            vec![action("a", None), action("b", None)],
            vec![edge("a", "b", None), edge("b", "a", None)],
            &[],
        );
        assert!(matches!(cyc, Err(ChainError::CycleDetected(_))));
        let dangling = chain(vec![action("a", None)], vec![edge("a", "zz", None)], &[]);
        assert_eq!(dangling, Err(ChainError::DanglingEdge { from: "a".into(), to: "zz".into() }));
        let unreachable = chain(vec![action("a", None), action("b", None)], vec![], &["a", "b"]);
        assert_eq!(unreachable, Err(ChainError::UnreachableNode("b".into())));
    }

    #[test]
    fn rejects_bad_terminals_and_decisions() {
        let t = chain(vec![action("a", None), action("b", None)], vec![edge("a", "b", None)], &["a"]);
        assert!(matches!(t, Err(ChainError::SchemaError(m)) if m.contains("outgoing")));
        let d = chain(
            vec![decision("d"), action("x", None), action("y", None)],
            vec![edge("d", "x", Some("yes")), edge("d", "y", Some("yes"))],
            &["x", "y"],
        );
        assert!(matches!(d, Err(ChainError::SchemaError(_))));
        let fork = chain(
            vec![action("a", None), action("x", None), action("y", None)],
            vec![edge("a", "x", None), edge("a", "y", None)],
            &["x", "y"],
        );
        assert!(matches!(fork, Err(ChainError::SchemaError(_))));
    }

    #[test]
    fn rejects_crossing_branches() {
        // d1 -> d2 | q ; d2 -> p | q ; p -> r ; q -> r : q is shared across nesting levels
        let c = chain(
            vec![decision("d1"), decision("d2"), action("p", None), action("q", None), action("r", None)],
            vec![
                edge("d1", "d2", Some("yes")),
                edge("d1", "q", Some("no")),
                edge("d2", "p", Some("yes")),
                edge("d2", "q", Some("no")),
                edge("p", "r", None),
                edge("q", "r", None),
            ],
            &["r"],
        );
        assert!(matches!(c, Err(ChainError::SchemaError(m)) if m.contains("nest")));
    }

    #[test]
    fn canonical_renumbers_in_visit_order() {
        let c = chain(
            vec![action("s", None), decision("d"), action("late", None), action("y", None), action("x", None)],
            vec![
                edge("s", "d", None),
                edge("d", "x", Some("yes")),
                edge("d", "y", Some("no")),
                edge("x", "late", None),
                edge("y", "late", None),
            ],
            &["late"],
        )
        .unwrap();
        let k = c.canonical();
        let labels: Vec<_> = k.nodes().iter().map(|n| n.label.as_str()).collect();
        assert_eq!(labels, ["step s", "ok?", "step x", "step y", "step late"]);
        assert_eq!(k.start(), "n1");
        assert_eq!(k.terminals(), ["n5"]);
        assert!(c.structurally_eq(&k));
    }
}
