//! Order and time-budget rules over an event chain, and the shell-script
//! contract for per-rule validator calls.
//!
//! ```text
//! order:<term> before <term>
//! order:<term> after <term>
//! time:<term> <= <ms>
//! ```
//!
//! Terms name nodes by label fragments and resolve through the shared
//! stemmer; a term must match exactly one node.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::chain::{EventChain, EventNode};
use crate::llm::{ChatRequest, GatewayError, LlmGateway};
use crate::prompt::{bindings, render, PromptError, PromptTemplate};
use crate::text::{shares_stem, stems};

/// Script name the rule-script prompt asks the model to invoke.
pub const VALIDATOR_SCRIPT: &str = "event_chain_validator.py";

#[derive(Debug, Error, PartialEq)]
pub enum RuleError {
    #[error("bad rule syntax: {0:?}")]
    BadRuleSyntax(String),
    #[error("no node matches term {0:?}")]
    NoMatch(String),
    #[error("term {term:?} matches several nodes: {labels:?}")]
    AmbiguousMatch { term: String, labels: Vec<String> },
    #[error("generated script line {line}: {reason}")]
    ScriptShapeInvalid { line: usize, reason: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Before,
    After,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rule {
    Order { left: String, relation: Relation, right: String },
    TimeBudget { term: String, limit_ms: u64 },
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::Order { left, relation, right } => {
                let rel = match relation {
                    Relation::Before => "before",
                    Relation::After => "after",
                };
                write!(f, "order:{left} {rel} {right}")
            }
            Rule::TimeBudget { term, limit_ms } => write!(f, "time:{term} <= {limit_ms}"),
        }
    }
}

impl Serialize for Rule {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl FromStr for Rule {
    type Err = RuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_rule(s)
    }
}

/// Parse one rule string. Terms are whitespace-normalised.
pub fn parse_rule(text: &str) -> Result<Rule, RuleError> {
    let bad = || RuleError::BadRuleSyntax(text.to_string());
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("order:") {
        let tokens: Vec<&str> = rest.split_whitespace().collect();
        let rel_at: Vec<usize> = (0..tokens.len())
            .filter(|&i| tokens[i] == "before" || tokens[i] == "after")
            .collect();
        let [i] = rel_at[..] else { return Err(bad()) };
        let (left, right) = (tokens[..i].join(" "), tokens[i + 1..].join(" "));
        if left.is_empty() || right.is_empty() {
            return Err(bad());
        }
        let relation = if tokens[i] == "before" { Relation::Before } else { Relation::After };
        Ok(Rule::Order { left, relation, right })
    } else if let Some(rest) = t.strip_prefix("time:") {
        let (term, limit) = rest.rsplit_once("<=").ok_or_else(bad)?;
        let term = term.split_whitespace().collect::<Vec<_>>().join(" ");
        let limit = limit.trim();
        if term.is_empty() || limit.is_empty() || !limit.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let limit_ms = limit.parse().map_err(|_| bad())?;
        Ok(Rule::TimeBudget { term, limit_ms })
    } else {
        Err(bad())
    }
}

/// The unique node whose label shares a normalised token with `term`.
pub fn resolve_term<'c>(chain: &'c EventChain, term: &str) -> Result<&'c EventNode, RuleError> {
    let wanted = stems(term);
    let hits: Vec<&EventNode> = chain
        .nodes()
        .iter()
        .filter(|n| shares_stem(&wanted, &stems(&n.label)))
        .collect();
    match hits[..] {
        [] => Err(RuleError::NoMatch(term.to_string())),
        [one] => Ok(one),
        _ => Err(RuleError::AmbiguousMatch {
            term: term.to_string(),
            labels: hits.iter().map(|n| n.label.clone()).collect(),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleResult {
    pub rule: Rule,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub results: Vec<RuleResult>,
    pub overall: Status,
}

fn describe(n: &EventNode) -> String {
    format!("{} ({})", n.id, n.label)
}

pub fn evaluate(chain: &EventChain, rule: &Rule) -> RuleResult {
    let (status, detail) = match check(chain, rule) {
        Ok(outcome) => outcome,
        Err(e) => (Status::Error, e.to_string()),
    };
    RuleResult {
        rule: rule.clone(),
        status,
        detail,
    }
}

fn check(chain: &EventChain, rule: &Rule) -> Result<(Status, String), RuleError> {
    match rule {
        Rule::Order { left, relation, right } => {
            let (l, r) = (resolve_term(chain, left)?, resolve_term(chain, right)?);
            let (first, second) = match relation {
                Relation::Before => (l, r),
                Relation::After => (r, l),
            };
            let forward = chain.reaches(&first.id, &second.id).expect("resolved ids exist");
            let backward = chain.reaches(&second.id, &first.id).expect("resolved ids exist");
            let (a, b) = (describe(first), describe(second));
            Ok(if forward && !backward {
                (Status::Pass, format!("{a} precedes {b}"))
            } else if first.id == second.id {
                (Status::Fail, format!("both terms resolve to {a}"))
            } else {
                (Status::Fail, format!("{a} does not precede {b}"))
            })
        }
        Rule::TimeBudget { term, limit_ms } => {
            let n = resolve_term(chain, term)?;
            Ok(match n.params.time_budget_ms {
                None => (Status::Error, "no time_budget on node".to_string()),
                Some(b) if b <= *limit_ms => (Status::Pass, format!("{}: {b} ms <= {limit_ms} ms", describe(n))),
                Some(b) => (Status::Fail, format!("{}: {b} ms > {limit_ms} ms", describe(n))),
            })
        }
    }
}

/// Evaluate every rule; overall is the worst status (error over fail over pass).
pub fn validate_all(chain: &EventChain, rules: &[Rule]) -> ValidationReport {
    let results: Vec<RuleResult> = rules.iter().map(|r| evaluate(chain, r)).collect();
    let overall = results.iter().map(|r| r.status).max().unwrap_or(Status::Pass);
    ValidationReport { results, overall }
}

/// Render the rule-script prompt, send it, and shape-check the reply.
pub fn generate_rule_script(
    constraints: &str,
    gateway: &LlmGateway,
    template: &PromptTemplate,
    model: &str,
) -> Result<String, RuleError> {
    let prompt = render(template, &bindings([("constraint rule", constraints)]))?;
    let reply = gateway.complete(&ChatRequest::user(model, prompt.text))?;
    check_script_shape(&reply.content)?;
    Ok(reply.content)
}

/// Every command invoking the validator needs `--json` and exactly one
/// `--rule`. Backslash continuations are joined; comment lines are ignored.
pub fn check_script_shape(script: &str) -> Result<(), RuleError> {
    let mut logical = String::new();
    let mut first_line = 0;
    for (i, line) in script.lines().enumerate() {
        if logical.is_empty() {
            first_line = i + 1;
        }
        match line.strip_suffix('\\') {
            Some(head) => {
                logical.push_str(head);
                logical.push(' ');
            }
            None => {
                logical.push_str(line);
                check_command(&logical, first_line)?;
                logical.clear();
            }
        }
    }
    if !logical.is_empty() {
        check_command(&logical, first_line)?;
    }
    Ok(())
}

fn check_command(cmd: &str, line: usize) -> Result<(), RuleError> {
    let body = cmd.trim_start();
    if body.starts_with('#') || !body.contains(VALIDATOR_SCRIPT) {
        return Ok(());
    }
    let flag = |name: &str| {
        body.split_whitespace()
            .filter(|t| {
                let t = t.trim_start_matches(['"', '\'']);
                t == name || t.starts_with(&format!("{name}="))
            })
            .count()
    };
    let invalid = |reason: String| Err(RuleError::ScriptShapeInvalid { line, reason });
    if flag("--json") == 0 {
        return invalid(format!("{VALIDATOR_SCRIPT} call without --json"));
    }
    match flag("--rule") {
        1 => Ok(()),
        n => invalid(format!("{VALIDATOR_SCRIPT} call with {n} --rule arguments, expected 1")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::parse_plantuml;

    const REFERENCE: &str = "@startuml\nstart\n:Receive detection message from camera or LIDAR;\nnote right\n  time_budget: 20\nend note\nif (Pedestrian detected?) then (yes)\n  note right\n    time_budget: 10\n  end note\n  :Activate hazard lights;\n  note right\n    time_budget: 50\n  end note\nelse (no)\n  :Continue monitoring;\nendif\nstop\n@enduml";

    fn reference() -> EventChain {
        parse_plantuml(REFERENCE).unwrap()
    }

    #[test]
    fn parses_rule_grammar() {
        assert_eq!(
            parse_rule("order:camera before hazard").unwrap(),
            Rule::Order { left: "camera".into(), relation: Relation::Before, right: "hazard".into() }
        );
        assert_eq!(parse_rule("  time:hazard <= 90 ").unwrap(), Rule::TimeBudget { term: "hazard".into(), limit_ms: 90 });
        assert_eq!(parse_rule("time:hazard<=90").unwrap().to_string(), "time:hazard <= 90");
        for bad in [
            "order:hazard maybe camera",
            "order:x ??? y",
            "order: before hazard",
            "order:a before b before c",
            "time:hazard <= -5",
            "time:hazard <= 9.5",
            "time: <= 5",
            "latency:hazard <= 5",
            "",
        ] {
            assert_eq!(parse_rule(bad), Err(RuleError::BadRuleSyntax(bad.into())), "{bad}");
        }
    }

    #[test]
    fn resolves_terms_by_stem() {
        let c = reference();
        assert_eq!(resolve_term(&c, "receiving").unwrap().label, "Receive detection message from camera or LIDAR");
        assert_eq!(resolve_term(&c, "hazard").unwrap().label, "Activate hazard lights");
        assert_eq!(resolve_term(&c, "brake"), Err(RuleError::NoMatch("brake".into())));
        let two = parse_plantuml("@startuml\n:detect left;\n:detect right;\n@enduml").unwrap();
        assert!(matches!(resolve_term(&two, "detect"), Err(RuleError::AmbiguousMatch { labels, .. }) if labels.len() == 2));
    }

    #[test]
    fn case_study_rules_pass() {
        let c = reference();
        let rules: Vec<Rule> = ["order:camera before hazard", "order:hazard after receiving", "time:hazard <= 90"]
            .iter()
            .map(|r| parse_rule(r).unwrap())
            .collect();
        let report = validate_all(&c, &rules);
        assert_eq!(report.overall, Status::Pass, "{report:?}");
        assert_eq!(report.results.len(), 3);
    }

    #[test]
    fn mirrored_order_fails() {
        let c = reference();
        let r = evaluate(&c, &parse_rule("order:hazard before camera").unwrap());
        assert_eq!(r.status, Status::Fail);
        let parallel = evaluate(&c, &parse_rule("order:hazard before monitoring").unwrap());
        assert_eq!(parallel.status, Status::Fail);
        let after = evaluate(&c, &parse_rule("order:hazard after monitoring").unwrap());
        assert_eq!(after.status, Status::Fail);
    }

    #[test]
    fn budget_limits() {
        let c = reference();
        assert_eq!(evaluate(&c, &parse_rule("time:hazard <= 50").unwrap()).status, Status::Pass);
        assert_eq!(evaluate(&c, &parse_rule("time:hazard <= 49").unwrap()).status, Status::Fail);
        let over = parse_plantuml(&REFERENCE.replace("time_budget: 50", "time_budget: 100")).unwrap();
        assert_eq!(evaluate(&over, &parse_rule("time:hazard <= 90").unwrap()).status, Status::Fail);
        let missing = evaluate(&c, &parse_rule("time:monitoring <= 90").unwrap());
        assert_eq!((missing.status, missing.detail.as_str()), (Status::Error, "no time_budget on node"));
    }

    #[test]
    fn overall_status_ordering() {
        let c = reference();
        assert_eq!(validate_all(&c, &[]).overall, Status::Pass);
        let pf = [parse_rule("order:camera before hazard").unwrap(), parse_rule("order:hazard before camera").unwrap()];
        assert_eq!(validate_all(&c, &pf).overall, Status::Fail);
        let pfe = [pf[0].clone(), pf[1].clone(), parse_rule("order:brake before camera").unwrap()];
        let report = validate_all(&c, &pfe);
        assert_eq!(report.overall, Status::Error);
        assert_eq!(report.results.len(), 3);
    }

    #[test]
    fn report_serializes_rules_as_text() {
        let c = reference();
        let report = validate_all(&c, &[parse_rule("time:hazard <= 90").unwrap()]);
        let v = serde_json::to_value(&report).unwrap();
        assert_eq!(v["results"][0]["rule"], "time:hazard <= 90");
        assert_eq!(v["overall"], "pass");
    }

    #[test]
    fn script_shape() {
        let good = "#!/bin/sh\n# calls event_chain_validator.py\npython3 event_chain_validator.py --json event_chain.json --rule \"order:camera before hazard\"\npython3 event_chain_validator.py \\\n  --json event_chain.json --rule \"time:hazard <= 90\"\n";
        assert_eq!(check_script_shape(good), Ok(()));
        assert_eq!(check_script_shape("#!/bin/sh\n"), Ok(()));
        let no_json = "python3 event_chain_validator.py --rule \"order:a before b\"\n";
        assert!(matches!(check_script_shape(no_json), Err(RuleError::ScriptShapeInvalid { line: 1, .. })));
        let two = "echo hi\npython3 event_chain_validator.py --json e.json --rule \"a\" --rule \"b\"\n";
        assert!(matches!(check_script_shape(two), Err(RuleError::ScriptShapeInvalid { line: 2, .. })));
    }
}
