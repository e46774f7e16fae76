//! Ingestion of solc compact-AST JSON.

use std::collections::HashMap;

use serde_json::Value;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AstError {
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("unsupported AST schema: {0}")]
    UnsupportedSchema(String),
    #[error("duplicate AST node id {0}")]
    DuplicateId(i64),
    #[error("no function named `{0}`")]
    UnknownFunction(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionInfo {
    pub id: i64,
    /// Declared name; constructors, fallback and receive functions use their kind.
    pub name: String,
    pub contract: String,
    pub kind: String,
    pub implemented: bool,
}

impl FunctionInfo {
    pub fn qualified_name(&self) -> String {
        format!("{}.{}", self.contract, self.name)
    }
}

/// A parsed compact AST indexed by node id.
#[derive(Debug, Clone)]
pub struct AstDocument {
    root: Value,
    pub source_unit_id: String,
    /// Version pragma of the source unit, when present (e.g. `^0.5.0`).
    pub pragma: Option<String>,
    pointers: HashMap<i64, String>,
    parents: HashMap<i64, i64>,
    functions: Vec<FunctionInfo>,
}

/// Parses compiler output. Accepts a bare compact AST (root `SourceUnit`) or
/// a standard-JSON / combined-JSON output wrapping exactly one.
pub fn ingest_ast(json_text: &str) -> Result<AstDocument, AstError> {
    let value: Value =
        serde_json::from_str(json_text).map_err(|e| AstError::Json(e.to_string()))?;
    let root = unwrap_root(value)?;
    AstDocument::from_root(root)
}

fn unwrap_root(value: Value) -> Result<Value, AstError> {
    if node_type(&value) == "SourceUnit" {
        return Ok(value);
    }
    if let Some(sources) = value.get("sources").and_then(Value::as_object) {
        let mut found = sources
            .values()
            .filter_map(|s| s.get("ast").or_else(|| s.get("AST")))
            .cloned();
        if let (Some(first), None) = (found.next(), found.next()) {
            return unwrap_root(first);
        }
        return Err(AstError::UnsupportedSchema(
            "compiler output must wrap exactly one source AST".into(),
        ));
    }
    Err(AstError::UnsupportedSchema(describe_schema(&value)))
}

fn describe_schema(value: &Value) -> String {
    match value {
        Value::Object(map) if map.is_empty() => "empty object (no nodeType)".into(),
        Value::Object(map) => {
            if map.get("name").and_then(Value::as_str) == Some("SourceUnit")
                || map.contains_key("children")
            {
                "legacy AST (name/children layout)".into()
            } else if let Some(t) = map.get("nodeType").and_then(Value::as_str) {
                format!("compact AST rooted at `{t}`, expected `SourceUnit`")
            } else {
                "object without nodeType".into()
            }
        }
        Value::Array(_) => "JSON array".into(),
        _ => "JSON scalar".into(),
    }
}

impl AstDocument {
    fn from_root(root: Value) -> Result<Self, AstError> {
        let mut doc = AstDocument {
            source_unit_id: root
                .get("absolutePath")
                .and_then(Value::as_str)
                .map(str::to_owned)
                .or_else(|| id_of(&root).map(|i| i.to_string()))
                .unwrap_or_default(),
            pragma: None,
            pointers: HashMap::new(),
            parents: HashMap::new(),
            functions: Vec::new(),
            root: Value::Null,
        };
        index(
            &root,
            String::new(),
            None,
            &mut doc.pointers,
            &mut doc.parents,
        )?;

        for top in children(&root, "nodes") {
            match node_type(top) {
                "PragmaDirective" if doc.pragma.is_none() => {
                    let lits: Vec<&str> = top
                        .get("literals")
                        .and_then(Value::as_array)
                        .map(|a| a.iter().filter_map(Value::as_str).collect())
                        .unwrap_or_default();
                    if lits.first() == Some(&"solidity") {
                        doc.pragma = Some(lits[1..].concat());
                    }
                }
                "ContractDefinition" => {
                    let contract = str_field(top, "name").to_owned();
                    for member in children(top, "nodes") {
                        if node_type(member) != "FunctionDefinition" {
                            continue;
                        }
                        let kind = member
                            .get("kind")
                            .and_then(Value::as_str)
                            .map(str::to_owned)
                            .unwrap_or_else(|| {
                                if member.get("isConstructor").and_then(Value::as_bool)
                                    == Some(true)
                                {
                                    "constructor".into()
                                } else {
                                    "function".into()
                                }
                            });
                        let mut name = str_field(member, "name").to_owned();
                        if name.is_empty() {
                            name = kind.clone();
                        }
                        doc.functions.push(FunctionInfo {
                            id: id_of(member).unwrap_or(-1),
                            name,
                            contract: contract.clone(),
                            kind,
                            implemented: member.get("body").is_some_and(|b| !b.is_null()),
                        });
                    }
                }
                _ => {}
            }
        }
        doc.root = root;
        Ok(doc)
    }

    pub fn root(&self) -> &Value {
        &self.root
    }

    pub fn node(&self, id: i64) -> Option<&Value> {
        self.pointers.get(&id).and_then(|p| self.root.pointer(p))
    }

    pub fn contains(&self, id: i64) -> bool {
        self.pointers.contains_key(&id)
    }

    pub fn parent(&self, id: i64) -> Option<i64> {
        self.parents.get(&id).copied()
    }

    pub fn functions(&self) -> &[FunctionInfo] {
        &self.functions
    }

    /// Looks a function up by `name` or `Contract.name`; bare names resolve
    /// to the first match in document order.
    pub fn find_function(&self, name: &str) -> Result<&FunctionInfo, AstError> {
        self.functions
            .iter()
            .find(|f| f.name == name || f.qualified_name() == name)
            .ok_or_else(|| AstError::UnknownFunction(name.to_owned()))
    }

    /// True when `decl` is a contract-level variable declaration.
    pub fn is_state_variable(&self, decl: i64) -> bool {
        self.node(decl).is_some_and(|n| {
            node_type(n) == "VariableDeclaration"
                && n.get("stateVariable").and_then(Value::as_bool) == Some(true)
        })
    }

    /// Nearest ancestor (or self) whose node type satisfies `pred`.
    pub fn ancestor_where(&self, id: i64, pred: impl Fn(&Value) -> bool) -> Option<i64> {
        let mut cur = Some(id);
        while let Some(c) = cur {
            if self.node(c).is_some_and(&pred) {
                return Some(c);
            }
            cur = self.parent(c);
        }
        None
    }
}

fn index(
    value: &Value,
    pointer: String,
    parent: Option<i64>,
    pointers: &mut HashMap<i64, String>,
    parents: &mut HashMap<i64, i64>,
) -> Result<(), AstError> {
    match value {
        Value::Object(map) => {
            let mut here = parent;
            if map.contains_key("nodeType") {
                if let Some(id) = id_of(value) {
                    if pointers.insert(id, pointer.clone()).is_some() {
                        return Err(AstError::DuplicateId(id));
                    }
                    if let Some(p) = parent {
                        parents.insert(id, p);
                    }
                    here = Some(id);
                }
            }
            for (k, v) in map {
                if v.is_object() || v.is_array() {
                    let esc = k.replace('~', "~0").replace('/', "~1");
                    index(v, format!("{pointer}/{esc}"), here, pointers, parents)?;
                }
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                index(v, format!("{pointer}/{i}"), parent, pointers, parents)?;
            }
        }
        _ => {}
    }
    Ok(())
}

pub fn node_type(v: &Value) -> &str {
    v.get("nodeType").and_then(Value::as_str).unwrap_or("")
}

pub fn id_of(v: &Value) -> Option<i64> {
    v.get("id").and_then(Value::as_i64)
}

pub fn str_field<'a>(v: &'a Value, key: &str) -> &'a str {
    v.get(key).and_then(Value::as_str).unwrap_or("")
}

/// Byte offset where the node starts in the source (`src` = "start:len:file").
pub fn src_start(v: &Value) -> usize {
    src_parts(v).0
}

pub fn src_end(v: &Value) -> usize {
    let (s, l) = src_parts(v);
    s + l
}

fn src_parts(v: &Value) -> (usize, usize) {
    let src = str_field(v, "src");
    let mut it = src.split(':').map(|p| p.parse::<usize>().unwrap_or(0));
    (it.next().unwrap_or(0), it.next().unwrap_or(0))
}

/// AST child nodes stored under `key`, whether a single object or an array.
pub fn children<'a>(v: &'a Value, key: &str) -> Vec<&'a Value> {
    match v.get(key) {
        Some(Value::Array(items)) => items.iter().filter(|x| x.is_object()).collect(),
        Some(o @ Value::Object(_)) => vec![o],
        _ => Vec::new(),
    }
}

/// All direct AST child nodes, in key order.
pub fn all_children(v: &Value) -> Vec<&Value> {
    let mut out = Vec::new();
    if let Value::Object(map) = v {
        for val in map.values() {
            match val {
                Value::Object(_) if val.get("nodeType").is_some() => out.push(val),
                Value::Array(items) => {
                    out.extend(items.iter().filter(|x| x.get("nodeType").is_some()))
                }
                _ => {}
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const BANK: &str = include_str!("../tests/fixtures/handcrafted/r1_vulnerable_bank.ast.json");
    const EMPTY: &str = include_str!("../tests/fixtures/solc08/empty.ast.json");

    #[test]
    fn bank_has_two_functions() {
        let doc = ingest_ast(BANK).unwrap();
        let names: Vec<_> = doc.functions().iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["deposit", "withdraw"]);
        assert_eq!(doc.pragma.as_deref(), Some("^0.5.0"));
        assert_eq!(doc.source_unit_id, "r1_vulnerable_bank.sol");
    }

    #[test]
    fn empty_contract_has_no_functions() {
        let doc = ingest_ast(EMPTY).unwrap();
        assert!(doc.functions().is_empty());
    }

    #[test]
    fn empty_object_is_unsupported() {
        match ingest_ast("{}") {
            Err(AstError::UnsupportedSchema(msg)) => assert!(msg.contains("no nodeType")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn legacy_layout_is_named() {
        let err = ingest_ast(r#"{"name":"SourceUnit","children":[],"attributes":{}}"#).unwrap_err();
        assert_eq!(
            err,
            AstError::UnsupportedSchema("legacy AST (name/children layout)".into())
        );
    }

    #[test]
    fn standard_json_wrapper() {
        let wrapped = format!(r#"{{"sources":{{"a.sol":{{"id":0,"ast":{BANK}}}}}}}"#);
        let doc = ingest_ast(&wrapped).unwrap();
        assert_eq!(doc.functions().len(), 2);
    }

    #[test]
    fn index_and_parents() {
        let doc = ingest_ast(BANK).unwrap();
        let w = doc.find_function("VulnerableBank.withdraw").unwrap();
        let body = doc.node(w.id).unwrap().get("body").unwrap();
        let body_id = id_of(body).unwrap();
        assert_eq!(doc.parent(body_id), Some(w.id));
        assert!(doc.find_function("nope").is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text =
            r#"{"nodeType":"SourceUnit","id":1,"nodes":[{"nodeType":"PragmaDirective","id":1}]}"#;
        assert_eq!(ingest_ast(text).unwrap_err(), AstError::DuplicateId(1));
    }
}
