//! PlantUML activity-diagram subset:
//!
//! ```text
//! @startuml [name]
//! start
//! :activity;
//! note right|left
//!   time_budget: 20
//!   input: camera-front-detect
//! end note
//! if (condition) then (yes)
//!   ...
//! else (no)
//!   ...
//! endif
//! stop
//! @enduml
//! ```
//!
//! A note binds to the node created by the statement directly before it
//! (an activity or an `if`). Branch tails join at the statement following
//! `endif`; a `stop` inside a branch terminates that branch.

use super::{ChainError, Edge, EventChain, EventNode, NodeKind, NoteParams, Stmt, DEFAULT_CHAIN_NAME, NOTE_KEYS};

#[derive(Debug, Clone)]
struct Pending {
    from: usize,
    guard: Option<String>,
    /// 0 for the then-branch edge of a decision, 1 for the else-branch.
    rank: u8,
}

struct IfFrame {
    decision: usize,
    line: usize,
    then_guard: String,
    then_tails: Option<Vec<Pending>>,
}

#[derive(Default)]
struct Builder {
    nodes: Vec<EventNode>,
    noted: Vec<bool>,
    edges: Vec<(usize, usize, Option<String>, u8)>,
    pending: Vec<Pending>,
    stack: Vec<IfFrame>,
}

impl Builder {
    fn add_node(&mut self, line: usize, label: String, kind: NodeKind, condition: Option<String>) -> Result<usize, ChainError> {
        if !self.nodes.is_empty() && self.pending.is_empty() {
            return Err(syntax(line, "statement is unreachable (follows stop)"));
        }
        let idx = self.nodes.len();
        self.nodes.push(EventNode {
            id: format!("n{}", idx + 1),
            label,
            kind,
            condition,
            params: NoteParams::default(),
        });
        self.noted.push(false);
        for p in self.pending.drain(..) {
            self.edges.push((p.from, idx, p.guard, p.rank));
        }
        Ok(idx)
    }

    fn check_no_open_branch(&self, line: usize) -> Result<(), ChainError> {
        match self.pending.iter().find(|p| p.guard.is_some()) {
            Some(p) => Err(syntax(
                line,
                &format!("branch {:?} of decision {:?} has no target", p.guard.as_deref().unwrap_or(""), self.nodes[p.from].label),
            )),
            None => Ok(()),
        }
    }
}

fn syntax(line: usize, message: &str) -> ChainError {
    ChainError::SyntaxError {
        line,
        message: message.to_string(),
    }
}

/// Parse `( ... )` at the start of `s`, returning the inner text and the rest.
fn parenthesized(s: &str) -> Option<(&str, &str)> {
    let s = s.trim_start();
    if !s.starts_with('(') {
        return None;
    }
    let mut depth = 0i32;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    return Some((s[1..i].trim(), &s[i + 1..]));
                }
            }
            _ => {}
        }
    }
    None
}

fn keyword_rest<'a>(line: &'a str, kw: &str) -> Option<&'a str> {
    let rest = line.strip_prefix(kw)?;
    (rest.is_empty() || rest.starts_with([' ', '\t', '('])).then_some(rest)
}

/// Optional `(guard)` after `then`/`else`.
fn optional_guard(line_no: usize, rest: &str) -> Result<Option<String>, ChainError> {
    let rest = rest.trim();
    if rest.is_empty() {
        return Ok(None);
    }
    match parenthesized(rest) {
        Some((g, tail)) if tail.trim().is_empty() && !g.is_empty() => Ok(Some(g.to_string())),
        _ => Err(syntax(line_no, "expected an optional (guard)")),
    }
}

fn is_loop(line: &str) -> bool {
    ["repeat", "while", "endwhile", "backward"]
        .iter()
        .any(|kw| keyword_rest(line, kw).is_some())
        || line == "end while"
}

fn parse_budget(line: usize, value: &str) -> Result<u64, ChainError> {
    let digits = value.strip_suffix("ms").map(str::trim_end).unwrap_or(value);
    digits
        .parse::<u64>()
        .map_err(|_| syntax(line, &format!("time_budget must be a non-negative integer (ms), got {value:?}")))
}

/// Parse a diagram in the supported subset into a validated chain.
pub fn parse_plantuml(text: &str) -> Result<EventChain, ChainError> {
    let mut b = Builder::default();
    let mut name: Option<String> = None;
    let mut ended = false;
    let mut started = false;
    // node the next note would attach to
    let mut note_target: Option<usize> = None;
    // (node, line of `note` keyword) while inside a note block
    let mut in_note: Option<(usize, usize)> = None;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();

        if let Some((node, _)) = in_note {
            if line.is_empty() {
                continue;
            }
            if line == "end note" || line == "endnote" {
                in_note = None;
                continue;
            }
            let Some((key, value)) = line.split_once(':') else {
                return Err(syntax(line_no, "note lines must be `key: value`"));
            };
            let (key, value) = (key.trim(), value.trim());
            if !NOTE_KEYS.contains(&key) {
                return Err(ChainError::UnknownNoteKey {
                    line: line_no,
                    key: key.to_string(),
                });
            }
            if value.is_empty() {
                return Err(syntax(line_no, &format!("note key {key} has no value")));
            }
            let params = &mut b.nodes[node].params;
            let dup = if key == "time_budget" {
                params.time_budget_ms.replace(parse_budget(line_no, value)?).is_some()
            } else {
                params.text_slot(key).expect("known key").replace(value.to_string()).is_some()
            };
            if dup {
                return Err(syntax(line_no, &format!("duplicate note key {key}")));
            }
            continue;
        }

        if line.is_empty() || line.starts_with('\'') {
            continue;
        }
        if ended {
            return Err(syntax(line_no, "content after @enduml"));
        }
        if name.is_none() {
            let Some(rest) = keyword_rest(line, "@startuml") else {
                return Err(syntax(line_no, "diagram must begin with @startuml"));
            };
            let rest = rest.trim();
            name = Some(if rest.is_empty() { DEFAULT_CHAIN_NAME.to_string() } else { rest.to_string() });
            continue;
        }

        let attach = note_target.take();
        if line == "@enduml" {
            ended = true;
        } else if line == "start" {
            if started || !b.nodes.is_empty() {
                return Err(syntax(line_no, "start must come first and only once"));
            }
            started = true;
        } else if line == "stop" || line == "end" {
            b.check_no_open_branch(line_no)?;
            b.pending.clear();
        } else if let Some(rest) = keyword_rest(line, "note") {
            let side = rest.trim();
            if side.contains(':') {
                return Err(syntax(line_no, "single-line notes are not supported; use note ... end note"));
            }
            if side != "right" && side != "left" {
                return Err(syntax(line_no, "expected `note right` or `note left`"));
            }
            let Some(node) = attach else {
                return Err(ChainError::NoteWithoutActivity { line: line_no });
            };
            if b.noted[node] {
                return Err(syntax(line_no, "node already has a note"));
            }
            b.noted[node] = true;
            in_note = Some((node, line_no));
        } else if is_loop(line) {
            return Err(ChainError::LoopUnsupported { line: line_no });
        } else if keyword_rest(line, "elseif").is_some() || line.starts_with("else if") {
            return Err(syntax(line_no, "elseif is not supported; nest if/else instead"));
        } else if let Some(rest) = keyword_rest(line, "if") {
            let Some((cond, tail)) = parenthesized(rest) else {
                return Err(syntax(line_no, "expected if (condition) then"));
            };
            if cond.is_empty() {
                return Err(syntax(line_no, "empty condition"));
            }
            let Some(after_then) = keyword_rest(tail.trim(), "then") else {
                return Err(syntax(line_no, "expected `then` after the condition"));
            };
            let then_guard = optional_guard(line_no, after_then)?.unwrap_or_else(|| "yes".to_string());
            if b.nodes.is_empty() {
                started = true;
            }
            let dec = b.add_node(line_no, cond.to_string(), NodeKind::Decision, Some(cond.to_string()))?;
            b.pending.push(Pending {
                from: dec,
                guard: Some(then_guard.clone()),
                rank: 0,
            });
            b.stack.push(IfFrame {
                decision: dec,
                line: line_no,
                then_guard,
                then_tails: None,
            });
            note_target = Some(dec);
        } else if let Some(rest) = keyword_rest(line, "else") {
            let guard = optional_guard(line_no, rest)?;
            let Some(frame) = b.stack.last_mut() else {
                return Err(ChainError::UnbalancedIf { line: line_no });
            };
            if frame.then_tails.is_some() {
                return Err(ChainError::UnbalancedIf { line: line_no });
            }
            let guard = guard.unwrap_or_else(|| default_else(&frame.then_guard));
            if guard == frame.then_guard {
                return Err(syntax(line_no, "then and else guards must differ"));
            }
            frame.then_tails = Some(std::mem::take(&mut b.pending));
            b.pending.push(Pending {
                from: frame.decision,
                guard: Some(guard),
                rank: 1,
            });
        } else if line == "endif" || line == "end if" {
            let Some(frame) = b.stack.pop() else {
                return Err(ChainError::UnbalancedIf { line: line_no });
            };
            match frame.then_tails {
                Some(mut tails) => {
                    tails.append(&mut b.pending);
                    b.pending = tails;
                }
                None => b.pending.push(Pending {
                    from: frame.decision,
                    guard: Some(default_else(&frame.then_guard)),
                    rank: 1,
                }),
            }
        } else if let Some(body) = line.strip_prefix(':') {
            let Some(label) = body.strip_suffix(';') else {
                return Err(syntax(line_no, "activities must be written on one line as :label;"));
            };
            let label = label.trim();
            if label.is_empty() {
                return Err(syntax(line_no, "empty activity label"));
            }
            if b.nodes.is_empty() {
                started = true;
            }
            let idx = b.add_node(line_no, label.to_string(), NodeKind::Action, None)?;
            b.pending.push(Pending {
                from: idx,
                guard: None,
                rank: 0,
            });
            note_target = Some(idx);
        } else {
            return Err(syntax(line_no, &format!("unsupported statement {line:?}")));
        }
    }

    let last_line = text.lines().count();
    if let Some((_, line)) = in_note {
        return Err(syntax(line, "note is not closed with end note"));
    }
    if name.is_none() {
        return Err(syntax(1, "diagram must begin with @startuml"));
    }
    if !ended {
        return Err(syntax(last_line, "diagram must end with @enduml"));
    }
    if let Some(frame) = b.stack.last() {
        return Err(ChainError::UnbalancedIf { line: frame.line });
    }
    b.check_no_open_branch(last_line)?;
    if b.nodes.is_empty() {
        return Err(syntax(last_line, "diagram has no activities"));
    }

    let mut edges = b.edges;
    edges.sort_by_key(|e| (e.0, e.3));
    let ids: Vec<String> = b.nodes.iter().map(|n| n.id.clone()).collect();
    let mut has_succ = vec![false; ids.len()];
    for e in &edges {
        has_succ[e.0] = true;
    }
    let terminals = (0..ids.len()).filter(|&i| !has_succ[i]).map(|i| ids[i].clone()).collect();
    let edges = edges
        .into_iter()
        .map(|(f, t, guard, _)| Edge {
            from: ids[f].clone(),
            to: ids[t].clone(),
            guard,
        })
        .collect();
    EventChain::from_parts(name.expect("checked"), b.nodes, edges, ids[0].clone(), terminals)
}

fn default_else(then_guard: &str) -> String {
    if then_guard == "no" { "yes" } else { "no" }.to_string()
}

/// Emit the chain in the supported subset, canonical layout.
pub fn to_plantuml(chain: &EventChain) -> String {
    let mut out = String::from("@startuml");
    if chain.name() != DEFAULT_CHAIN_NAME {
        out.push(' ');
        out.push_str(chain.name());
    }
    out.push_str("\nstart\n");
    let structure = chain.structure().expect("validated chain has a block structure");
    emit_block(chain, &structure, 0, &mut out);
    out.push_str("@enduml");
    out
}

fn emit_block(chain: &EventChain, block: &[Stmt], depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth);
    for stmt in block {
        match stmt {
            Stmt::Action(i) => {
                let node = &chain.nodes()[*i];
                out.push_str(&format!("{pad}:{};\n", node.label));
                emit_note(&node.params, &pad, out);
            }
            Stmt::If {
                decision,
                then_block,
                else_block,
            } => {
                let node = &chain.nodes()[*decision];
                let mut guards = chain.out_edges(&node.id).map(|e| e.guard.clone().unwrap_or_default());
                let (then_guard, else_guard) = (guards.next().unwrap_or_default(), guards.next().unwrap_or_default());
                out.push_str(&format!(
                    "{pad}if ({}) then ({then_guard})\n",
                    node.condition.as_deref().unwrap_or(&node.label)
                ));
                emit_note(&node.params, &pad, out);
                emit_block(chain, then_block, depth + 1, out);
                out.push_str(&format!("{pad}else ({else_guard})\n"));
                emit_block(chain, else_block, depth + 1, out);
                out.push_str(&format!("{pad}endif\n"));
            }
            Stmt::Stop => out.push_str(&format!("{pad}stop\n")),
        }
    }
}

fn emit_note(params: &NoteParams, pad: &str, out: &mut String) {
    let entries = params.entries();
    if entries.is_empty() {
        return;
    }
    out.push_str(&format!("{pad}note right\n"));
    for (key, value) in entries {
        out.push_str(&format!("{pad}  {key}: {value}\n"));
    }
    out.push_str(&format!("{pad}end note\n"));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_diagram() {
        let c = parse_plantuml("@startuml\nstart\n:A;\nstop\n@enduml").unwrap();
        assert_eq!(c.nodes().len(), 1);
        assert_eq!(c.node(c.start()).unwrap().label, "A");
        assert_eq!(c.terminals(), [c.start().to_string()]);
        assert_eq!(to_plantuml(&c), "@startuml\nstart\n:A;\nstop\n@enduml");
    }

    #[test]
    fn note_binds_to_preceding_activity() {
        let c = parse_plantuml(
            "@startuml\nstart\n:A;\n:B;\nnote right\n  time_budget: 50\n  output: Vehicle.Body.Lights.Hazard\nend note\nstop\n@enduml",
        )
        .unwrap();
        let b = c.node("n2").unwrap();
        assert_eq!(b.params.time_budget_ms, Some(50));
        assert_eq!(b.params.output.as_deref(), Some("Vehicle.Body.Lights.Hazard"));
        assert!(c.node("n1").unwrap().params.is_empty());
    }

    #[test]
    fn budget_accepts_ms_suffix() {
        let c = parse_plantuml("@startuml\n:A;\nnote left\ntime_budget: 15 ms\nend note\n@enduml").unwrap();
        assert_eq!(c.nodes()[0].params.time_budget_ms, Some(15));
    }

    #[test]
    fn if_else_joins() {
        let c = parse_plantuml(
            "@startuml\nstart\n:Receive;\nif (pedestrian?) then (yes)\n  :Activate;\nelse (no)\n  :Ignore;\nendif\n:Log;\nstop\n@enduml",
        )
        .unwrap();
        let d = c.node("n2").unwrap();
        assert_eq!(d.kind, NodeKind::Decision);
        assert_eq!(d.condition.as_deref(), Some("pedestrian?"));
        let outs: Vec<_> = c.out_edges("n2").map(|e| (e.to.as_str(), e.guard.as_deref())).collect();
        assert_eq!(outs, [("n3", Some("yes")), ("n4", Some("no"))]);
        assert_eq!(c.out_edges("n3").next().unwrap().to, "n5");
        assert_eq!(c.out_edges("n4").next().unwrap().to, "n5");
        assert_eq!(c.terminals(), ["n5"]);
    }

    #[test]
    fn missing_else_joins_directly() {
        let c = parse_plantuml("@startuml\n:A;\nif (x) then\n:B;\nendif\n:C;\n@enduml").unwrap();
        let outs: Vec<_> = c.out_edges("n2").map(|e| (e.to.as_str(), e.guard.as_deref())).collect();
        assert_eq!(outs, [("n3", Some("yes")), ("n4", Some("no"))]);
    }

    #[test]
    fn stop_inside_branch_terminates_it() {
        let c = parse_plantuml(
            "@startuml\nstart\nif (ok?) then (yes)\n:A;\nstop\nelse (no)\n:B;\nendif\n:C;\nstop\n@enduml",
        )
        .unwrap();
        assert_eq!(c.terminals(), ["n2", "n4"]);
        let again = parse_plantuml(&to_plantuml(&c)).unwrap();
        assert!(c.structurally_eq(&again));
    }

    #[test]
    fn decision_note() {
        let c = parse_plantuml(
            "@startuml\n:A;\nif (ok?) then (yes)\nnote right\ntime_budget: 10\nend note\n:B;\nelse (no)\n:C;\nendif\n@enduml",
        )
        .unwrap();
        assert_eq!(c.node("n2").unwrap().params.time_budget_ms, Some(10));
    }

    #[test]
    fn error_cases() {
        let err = |t: &str| parse_plantuml(t).unwrap_err();
        assert_eq!(
            err("@startuml\n:A;\nnote right\nlatency: 5\nend note\n@enduml"),
            ChainError::UnknownNoteKey { line: 4, key: "latency".into() }
        );
        assert_eq!(
            err("@startuml\nstart\nnote right\ntime_budget: 5\nend note\n:A;\n@enduml"),
            ChainError::NoteWithoutActivity { line: 3 }
        );
        assert_eq!(err("@startuml\n:A;\nrepeat\n:B;\nrepeat while (more?)\n@enduml"), ChainError::LoopUnsupported { line: 3 });
        assert_eq!(err("@startuml\nwhile (x?)\n:B;\nendwhile\n@enduml"), ChainError::LoopUnsupported { line: 2 });
        assert_eq!(err("@startuml\n:A;\nif (x) then\n:B;\n@enduml"), ChainError::UnbalancedIf { line: 3 });
        assert_eq!(err("@startuml\n:A;\nendif\n@enduml"), ChainError::UnbalancedIf { line: 3 });
        assert_eq!(err("@startuml\n:A;\nelse\n@enduml"), ChainError::UnbalancedIf { line: 3 });
        assert!(matches!(err(":A;\n@enduml"), ChainError::SyntaxError { line: 1, .. }));
        assert!(matches!(err("@startuml\n:A;"), ChainError::SyntaxError { .. }));
        assert!(matches!(err("@startuml\n:A\n@enduml"), ChainError::SyntaxError { line: 2, .. }));
        assert!(matches!(err("@startuml\n:A;\nstop\n:B;\n@enduml"), ChainError::SyntaxError { line: 4, .. }));
        assert!(matches!(err("@startuml\n:A;\nnote right\ntime_budget: -3\nend note\n@enduml"), ChainError::SyntaxError { line: 4, .. }));
        assert!(matches!(err("@startuml\n:A;\nif (x) then (yes)\nstop\nelse (no)\n:B;\nendif\n@enduml"), ChainError::SyntaxError { line: 4, .. }));
        assert!(matches!(err("@startuml\nstart\nstop\n@enduml"), ChainError::SyntaxError { .. }));
        assert!(matches!(err("@startuml\n:A;\nfork\n@enduml"), ChainError::SyntaxError { line: 3, .. }));
    }

    #[test]
    fn conditions_may_contain_parentheses() {
        let c = parse_plantuml("@startuml\n:A;\nif (detected (camera or lidar)?) then (yes)\n:B;\nelse (no)\n:C;\nendif\n@enduml").unwrap();
        assert_eq!(c.node("n2").unwrap().condition.as_deref(), Some("detected (camera or lidar)?"));
        assert!(to_plantuml(&c).contains("if (detected (camera or lidar)?) then (yes)"));
    }

    #[test]
    fn named_diagram_round_trips() {
        let c = parse_plantuml("@startuml hazard_chain\n:A;\n@enduml").unwrap();
        assert_eq!(c.name(), "hazard_chain");
        assert!(to_plantuml(&c).starts_with("@startuml hazard_chain\n"));
    }
}
