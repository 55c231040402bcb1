//! VSS catalog parsing, flattening and lookup.
//!
//! The source document is the COVESA nested tree (branch nodes with
//! `children`, leaves with `type`/`datatype`) extended with an `accessors`
//! list per leaf. Accessors are written either as `"set_x(bool value)"`
//! shorthand (direction inferred from the `set` prefix) or as objects
//! `{"name", "direction", "params"}`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CatalogError {
    #[error("malformed VSS document: {0}")]
    MalformedDocument(String),
    #[error("unknown signal kind {kind:?} at {path}")]
    UnknownKind { path: String, kind: String },
    #[error("duplicate signal path {0}")]
    DuplicatePath(String),
    #[error("invalid entry {path}: {reason}")]
    InvalidEntry { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    Sensor,
    Actuator,
    Attribute,
}

impl SignalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalKind::Sensor => "sensor",
            SignalKind::Actuator => "actuator",
            SignalKind::Attribute => "attribute",
        }
    }
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SignalKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sensor" => Ok(SignalKind::Sensor),
            "actuator" => Ok(SignalKind::Actuator),
            "attribute" => Ok(SignalKind::Attribute),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessorDirection {
    Getter,
    Setter,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccessorSpec {
    pub name: String,
    pub direction: AccessorDirection,
    pub param_signature: String,
}

impl AccessorSpec {
    /// Parse `name(params)`; the direction follows the `set` prefix convention.
    pub fn parse(text: &str) -> Result<Self, String> {
        let text = text.trim();
        let open = text
            .find('(')
            .ok_or_else(|| format!("accessor {text:?} has no parameter list"))?;
        if !text.ends_with(')') {
            return Err(format!("accessor {text:?} is not closed"));
        }
        let name = text[..open].trim();
        let params = text[open + 1..text.len() - 1].trim();
        if !is_identifier(name) {
            return Err(format!("accessor name {name:?} is not an identifier"));
        }
        Ok(AccessorSpec {
            name: name.to_string(),
            direction: infer_direction(name),
            param_signature: params.to_string(),
        })
    }
}

impl fmt::Display for AccessorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name, self.param_signature)
    }
}

fn infer_direction(name: &str) -> AccessorDirection {
    if name == "set" || name.starts_with("set_") || name.starts_with("set") && name[3..].starts_with(char::is_uppercase) {
        AccessorDirection::Setter
    } else {
        AccessorDirection::Getter
    }
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VssEntry {
    pub path: String,
    pub kind: SignalKind,
    pub datatype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub accessors: Vec<AccessorSpec>,
}

impl VssEntry {
    fn check(&self) -> Result<(), CatalogError> {
        let invalid = |reason: &str| CatalogError::InvalidEntry {
            path: self.path.clone(),
            reason: reason.to_string(),
        };
        if self.path.is_empty() || self.path.chars().any(char::is_whitespace) {
            return Err(invalid("path must be non-empty and free of whitespace"));
        }
        if self.path.split('.').any(str::is_empty) {
            return Err(invalid("empty path segment"));
        }
        if self.kind == SignalKind::Actuator
            && !self.accessors.iter().any(|a| a.direction == AccessorDirection::Setter)
        {
            return Err(invalid("actuator without a setter"));
        }
        Ok(())
    }

    pub fn accessors_text(&self, sep: &str) -> String {
        self.accessors
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(sep)
    }

    /// Last path segment, e.g. `Hazard` for `Vehicle.Body.Lights.Hazard`.
    pub fn leaf_name(&self) -> &str {
        self.path.rsplit('.').next().unwrap_or(&self.path)
    }
}

/// Immutable, path-indexed signal catalog in source-document order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    entries: Vec<VssEntry>,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn from_entries(entries: Vec<VssEntry>) -> Result<Self, CatalogError> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            e.check()?;
            if index.insert(e.path.clone(), i).is_some() {
                return Err(CatalogError::DuplicatePath(e.path.clone()));
            }
        }
        Ok(Catalog { entries, index })
    }

    pub fn entries(&self) -> &[VssEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact, case-sensitive path lookup.
    pub fn lookup(&self, path: &str) -> Option<&VssEntry> {
        self.index.get(path).map(|&i| &self.entries[i])
    }

    pub fn position(&self, path: &str) -> Option<usize> {
        self.index.get(path).copied()
    }

    pub fn contains(&self, path: &str) -> bool {
        self.index.contains_key(path)
    }
}

/// Parse a nested VSS JSON tree into a catalog, one entry per leaf.
pub fn parse_vss_json(document: &str) -> Result<Catalog, CatalogError> {
    let root: Value = serde_json::from_str(document)
        .map_err(|e| CatalogError::MalformedDocument(e.to_string()))?;
    let Value::Object(root) = root else {
        return Err(CatalogError::MalformedDocument(
            "top level must be an object".into(),
        ));
    };
    let mut entries = Vec::new();
    walk(&root, "", &mut entries)?;
    Catalog::from_entries(entries)
}

fn walk(children: &Map<String, Value>, prefix: &str, out: &mut Vec<VssEntry>) -> Result<(), CatalogError> {
    for (name, node) in children {
        let path = if prefix.is_empty() {
            name.clone()
        } else {
            format!("{prefix}.{name}")
        };
        let Value::Object(node) = node else {
            return Err(CatalogError::MalformedDocument(format!(
                "node {path} is not an object"
            )));
        };
        let type_tag = match node.get("type") {
            Some(Value::String(t)) => Some(t.as_str()),
            Some(_) => {
                return Err(CatalogError::MalformedDocument(format!(
                    "node {path} has a non-string type"
                )))
            }
            None => None,
        };
        match (type_tag, node.get("children")) {
            (Some("branch") | None, Some(Value::Object(kids))) => walk(kids, &path, out)?,
            (Some("branch"), _) => {
                return Err(CatalogError::MalformedDocument(format!(
                    "branch {path} has no children object"
                )))
            }
            (None, _) => {
                return Err(CatalogError::MalformedDocument(format!(
                    "node {path} is neither a branch nor a typed leaf"
                )))
            }
            (Some(tag), _) => out.push(parse_leaf(path, tag, node)?),
        }
    }
    Ok(())
}

fn parse_leaf(path: String, tag: &str, node: &Map<String, Value>) -> Result<VssEntry, CatalogError> {
    let kind = tag.parse::<SignalKind>().map_err(|kind| CatalogError::UnknownKind {
        path: path.clone(),
        kind,
    })?;
    let text_field = |key: &str| -> Result<Option<String>, CatalogError> {
        match node.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(CatalogError::MalformedDocument(format!(
                "{path}: field {key} must be a string"
            ))),
        }
    };
    let datatype = text_field("datatype")?.unwrap_or_default();
    let unit = text_field("unit")?;
    let description = text_field("description")?;
    let accessors = match node.get("accessors") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|item| parse_accessor_value(&path, item))
            .collect::<Result<_, _>>()?,
        Some(_) => {
            return Err(CatalogError::MalformedDocument(format!(
                "{path}: accessors must be an array"
            )))
        }
    };
    Ok(VssEntry {
        path,
        kind,
        datatype,
        unit,
        description,
        accessors,
    })
}

#[derive(Deserialize)]
struct AccessorObject {
    name: String,
    direction: AccessorDirection,
    #[serde(default)]
    params: String,
}

fn parse_accessor_value(path: &str, item: &Value) -> Result<AccessorSpec, CatalogError> {
    let invalid = |reason: String| CatalogError::InvalidEntry {
        path: path.to_string(),
        reason,
    };
    match item {
        Value::String(s) => AccessorSpec::parse(s).map_err(invalid),
        Value::Object(_) => {
            let obj: AccessorObject = serde_json::from_value(item.clone())
                .map_err(|e| CatalogError::MalformedDocument(format!("{path}: {e}")))?;
            if !is_identifier(&obj.name) {
                return Err(invalid(format!("accessor name {:?} is not an identifier", obj.name)));
            }
            Ok(AccessorSpec {
                name: obj.name,
                direction: obj.direction,
                param_signature: obj.params,
            })
        }
        _ => Err(CatalogError::MalformedDocument(format!(
            "{path}: accessor must be a string or object"
        ))),
    }
}

fn single_line(s: &str) -> String {
    s.replace(['\r', '\n'], " ")
}

/// One knowledge-base line per entry: `path,kind,accessors,description`.
pub fn flatten_catalog(catalog: &Catalog) -> Vec<String> {
    catalog.entries().iter().map(kb_line).collect()
}

pub fn kb_line(entry: &VssEntry) -> String {
    format!(
        "{},{},{},{}",
        entry.path,
        entry.kind,
        single_line(&entry.accessors_text("; ")),
        single_line(entry.description.as_deref().unwrap_or("")),
    )
}

/// The three-field form used inside prompts: `path, kind, accessors`.
pub fn format_prompt_line(entry: &VssEntry) -> String {
    if entry.accessors.is_empty() {
        format!("{}, {}", entry.path, entry.kind)
    } else {
        format!("{}, {}, {}", entry.path, entry.kind, entry.accessors_text("; "))
    }
}

/// Serialise KB lines as a UTF-8 file body with LF endings.
pub fn kb_file(lines: &[String]) -> String {
    let mut out = String::new();
    for line in lines {
        out.push_str(line);
        out.push('\n');
    }
    out
}

/// Split a KB line into its four fields. Commas inside an accessor's
/// parameter list do not terminate the accessors field.
fn split_kb_fields(line: &str) -> Option<[&str; 4]> {
    let (path, rest) = line.split_once(',')?;
    let (kind, rest) = rest.split_once(',')?;
    let mut depth = 0i32;
    for (i, c) in rest.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => return Some([path, kind, &rest[..i], &rest[i + 1..]]),
            _ => {}
        }
    }
    None
}

pub fn parse_kb_line(line: &str) -> Result<VssEntry, CatalogError> {
    let [path, kind, accessors, description] = split_kb_fields(line)
        .ok_or_else(|| CatalogError::MalformedDocument(format!("KB line needs 4 fields: {line:?}")))?;
    let kind = kind.parse::<SignalKind>().map_err(|kind| CatalogError::UnknownKind {
        path: path.to_string(),
        kind,
    })?;
    let accessors = split_accessors(accessors)
        .map(|a| {
            AccessorSpec::parse(a).map_err(|reason| CatalogError::InvalidEntry {
                path: path.to_string(),
                reason,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(VssEntry {
        path: path.to_string(),
        kind,
        datatype: String::new(),
        unit: None,
        description: (!description.is_empty()).then(|| description.to_string()),
        accessors,
    })
}

fn split_accessors(field: &str) -> impl Iterator<Item = &str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in field.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ';' if depth == 0 => {
                parts.push(&field[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&field[start..]);
    parts.into_iter().map(str::trim).filter(|p| !p.is_empty())
}

/// Rebuild a catalog from KB lines (datatype and unit are not carried).
pub fn parse_kb<'a, I>(lines: I) -> Result<Catalog, CatalogError>
where
    I: IntoIterator<Item = &'a str>,
{
    let entries = lines
        .into_iter()
        .filter(|l| !l.trim().is_empty())
        .map(parse_kb_line)
        .collect::<Result<Vec<_>, _>>()?;
    Catalog::from_entries(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HAZARD_DOC: &str = r#"{
      "Vehicle": {"type": "branch", "children": {
        "Body": {"type": "branch", "children": {
          "Lights": {"type": "branch", "children": {
            "Hazard": {"type": "actuator", "datatype": "boolean",
                       "accessors": ["set_is_signaling(bool value)"]}
          }}
        }},
        "Speed": {"type": "sensor", "datatype": "float", "unit": "km/h",
                  "description": "Vehicle speed.", "accessors": ["get_speed()"]}
      }}
    }"#;

    #[test]
    fn hazard_leaf_is_parsed() {
        let cat = parse_vss_json(HAZARD_DOC).unwrap();
        assert_eq!(cat.len(), 2);
        let hazard = cat.lookup("Vehicle.Body.Lights.Hazard").unwrap();
        assert_eq!(hazard.kind, SignalKind::Actuator);
        assert_eq!(
            hazard.accessors,
            vec![AccessorSpec {
                name: "set_is_signaling".into(),
                direction: AccessorDirection::Setter,
                param_signature: "bool value".into(),
            }]
        );
        assert_eq!(cat.entries()[1].path, "Vehicle.Speed");
    }

    #[test]
    fn empty_tree_is_empty_catalog() {
        let cat = parse_vss_json("{}").unwrap();
        assert!(cat.is_empty());
        assert!(flatten_catalog(&cat).is_empty());
    }

    #[test]
    fn kb_and_prompt_lines() {
        let cat = parse_vss_json(HAZARD_DOC).unwrap();
        let lines = flatten_catalog(&cat);
        assert_eq!(lines[0], "Vehicle.Body.Lights.Hazard,actuator,set_is_signaling(bool value),");
        assert_eq!(lines[1], "Vehicle.Speed,sensor,get_speed(),Vehicle speed.");
        assert_eq!(
            format_prompt_line(&cat.entries()[0]),
            "Vehicle.Body.Lights.Hazard, actuator, set_is_signaling(bool value)"
        );
        assert_eq!(format_prompt_line(&cat.entries()[1]), "Vehicle.Speed, sensor, get_speed()");
    }

    #[test]
    fn two_accessors_join_with_semicolon() {
        let doc = r#"{"Vehicle": {"children": {"Door": {"type": "actuator", "datatype": "boolean",
            "accessors": ["is_open()", "set_open(bool value)"]}}}}"#;
        let cat = parse_vss_json(doc).unwrap();
        assert_eq!(
            format_prompt_line(&cat.entries()[0]),
            "Vehicle.Door, actuator, is_open(); set_open(bool value)"
        );
    }

    #[test]
    fn lookup_is_exact() {
        let cat = parse_vss_json(HAZARD_DOC).unwrap();
        assert!(cat.lookup("vehicle.body.lights.hazard").is_none());
        assert!(cat.lookup("Vehicle.Made.Up.Signal").is_none());
        assert!(cat.lookup("Vehicle.Body.Lights").is_none());
    }

    #[test]
    fn rejects_unknown_kind() {
        let doc = r#"{"Vehicle": {"type": "branch", "children": {"X": {"type": "property", "datatype": "int8"}}}}"#;
        assert_eq!(
            parse_vss_json(doc),
            Err(CatalogError::UnknownKind { path: "Vehicle.X".into(), kind: "property".into() })
        );
    }

    #[test]
    fn rejects_duplicate_paths() {
        let doc = r#"{
          "Vehicle.Speed": {"type": "sensor", "datatype": "float"},
          "Vehicle": {"type": "branch", "children": {"Speed": {"type": "sensor", "datatype": "float"}}}
        }"#;
        assert_eq!(parse_vss_json(doc), Err(CatalogError::DuplicatePath("Vehicle.Speed".into())));
    }

    #[test]
    fn rejects_malformed_documents() {
        assert!(matches!(parse_vss_json("{"), Err(CatalogError::MalformedDocument(_))));
        assert!(matches!(parse_vss_json("[]"), Err(CatalogError::MalformedDocument(_))));
        assert!(matches!(
            parse_vss_json(r#"{"Vehicle": {"description": "no type, no children"}}"#),
            Err(CatalogError::MalformedDocument(_))
        ));
    }

    #[test]
    fn actuator_needs_setter() {
        let doc = r#"{"Vehicle": {"children": {"Horn": {"type": "actuator", "datatype": "boolean",
            "accessors": ["is_active()"]}}}}"#;
        assert!(matches!(parse_vss_json(doc), Err(CatalogError::InvalidEntry { .. })));
    }

    #[test]
    fn object_accessors_keep_explicit_direction() {
        let doc = r#"{"Vehicle": {"children": {"Horn": {"type": "actuator", "datatype": "boolean",
            "accessors": [{"name": "honk", "direction": "setter", "params": "bool on"}]}}}}"#;
        let cat = parse_vss_json(doc).unwrap();
        assert_eq!(cat.entries()[0].accessors[0].direction, AccessorDirection::Setter);
    }

    #[test]
    fn kb_line_keeps_commas_in_signatures() {
        let line = "Vehicle.Seat.Position,actuator,set_position(int x, int y); get_position(),Seat, front row";
        let e = parse_kb_line(line).unwrap();
        assert_eq!(e.accessors.len(), 2);
        assert_eq!(e.accessors[0].param_signature, "int x, int y");
        assert_eq!(e.description.as_deref(), Some("Seat, front row"));
        assert_eq!(kb_line(&e), line);
    }

    #[test]
    fn descriptions_lose_newlines() {
        let doc = r#"{"Vehicle": {"children": {"Speed": {"type": "sensor", "datatype": "float",
            "description": "line one\nline two"}}}}"#;
        let lines = flatten_catalog(&parse_vss_json(doc).unwrap());
        assert_eq!(lines[0], "Vehicle.Speed,sensor,,line one line two");
    }
}
