//! Code semantic graph construction from a compact AST.
//!
//! One node per statement, plus nested call nodes and variable-occurrence
//! leaves inside calls, comparisons and timestamp reads. Control-flow edges
//! follow statement order and branch structure; data-flow edges come from a
//! reaching-definitions pass over statement units.

use std::collections::BTreeSet;

use serde_json::Value;

use crate::ast::{
    all_children, children, id_of, node_type, src_end, src_start, str_field, AstDocument, AstError,
    FunctionInfo,
};
use crate::graph::{ContractGraph, EdgeType, GraphEdge, GraphNode, GraphScope, Modality, NodeKind};

const GLOBALS: &[&str] = &[
    "msg",
    "block",
    "tx",
    "now",
    "this",
    "super",
    "abi",
    "require",
    "assert",
    "revert",
    "keccak256",
    "sha3",
    "sha256",
    "ripemd160",
    "ecrecover",
    "addmod",
    "mulmod",
    "selfdestruct",
    "suicide",
    "gasleft",
    "blockhash",
    "type",
    "log0",
    "log1",
    "log2",
    "log3",
    "log4",
];

const PURE_BUILTINS: &[&str] = &[
    "keccak256",
    "sha3",
    "sha256",
    "ripemd160",
    "ecrecover",
    "addmod",
    "mulmod",
    "gasleft",
    "blockhash",
    "require",
    "assert",
    "revert",
    "type",
];

const COMPARISONS: &[&str] = &["<", ">", "<=", ">=", "==", "!="];

/// Builds the CSG of one function (modifier bodies inlined).
pub fn build_csg(doc: &AstDocument, function_name: &str) -> Result<ContractGraph, AstError> {
    let info = doc.find_function(function_name)?.clone();
    let mut graph = ContractGraph::new(Modality::Source, doc.source_unit_id.clone());
    append_function(doc, &info, &mut graph);
    Ok(graph)
}

/// Disjoint union of the CSGs of every implemented runtime function, one
/// scope per function, in document order.
pub fn build_contract_csg(doc: &AstDocument) -> ContractGraph {
    let mut graph = ContractGraph::new(Modality::Source, doc.source_unit_id.clone());
    for info in doc.functions() {
        if info.implemented && info.kind != "constructor" {
            append_function(doc, info, &mut graph);
        }
    }
    graph
}

fn append_function(doc: &AstDocument, info: &FunctionInfo, graph: &mut ContractGraph) {
    let offset = graph.nodes.len();
    let mut b = Builder::new(doc);
    if let Some(func) = doc.node(info.id) {
        let mods = children(func, "modifiers");
        b.run_body(func, &mods, 0, Vec::new());
    }
    let diagnostics = std::mem::take(&mut b.diagnostics);
    let (nodes, edges) = b.finish();
    for (i, (kind, payload)) in nodes.into_iter().enumerate() {
        graph.nodes.push(GraphNode {
            id: offset + i,
            kind,
            payload,
            temporal_rank: offset + i,
        });
    }
    graph.edges.extend(edges.into_iter().map(|e| GraphEdge {
        src: e.src + offset,
        dst: e.dst + offset,
        edge_type: e.edge_type,
    }));
    graph.scopes.push(GraphScope {
        name: info.qualified_name(),
        first_node: offset,
        node_count: graph.nodes.len() - offset,
    });
    graph.diagnostics.extend(
        diagnostics
            .into_iter()
            .map(|d| format!("{}: {d}", info.qualified_name())),
    );
}

struct Pending {
    kind: NodeKind,
    payload: i64,
    key: (usize, usize, usize),
}

struct Unit {
    entry: usize,
    exit: usize,
    defs: Vec<(i64, bool)>,
    uses: Vec<(i64, usize)>,
}

struct LoopCtx {
    cont: usize,
    breaks: Vec<usize>,
}

struct Builder<'a> {
    doc: &'a AstDocument,
    nodes: Vec<Pending>,
    cf: Vec<(usize, usize)>,
    units: Vec<Unit>,
    unit_edges: Vec<(usize, usize)>,
    segment: usize,
    pos_override: Option<usize>,
    loops: Vec<LoopCtx>,
    placeholder: Vec<usize>,
    diagnostics: Vec<String>,
}

impl<'a> Builder<'a> {
    fn new(doc: &'a AstDocument) -> Self {
        Builder {
            doc,
            nodes: Vec::new(),
            cf: Vec::new(),
            units: Vec::new(),
            unit_edges: Vec::new(),
            segment: 0,
            pos_override: None,
            loops: Vec::new(),
            placeholder: Vec::new(),
            diagnostics: Vec::new(),
        }
    }

    fn node(&mut self, kind: NodeKind, payload: i64, pos: usize) -> usize {
        let seq = self.nodes.len();
        let pos = self.pos_override.unwrap_or(pos);
        self.nodes.push(Pending {
            kind,
            payload,
            key: (self.segment, pos, seq),
        });
        seq
    }

    /// Creates a statement unit and scans its own expressions.
    fn unit(&mut self, kind: NodeKind, stmt: &Value, exprs: &[&Value]) -> usize {
        let entry = self.node(kind, id_of(stmt).unwrap_or(-1), src_start(stmt));
        let u = self.units.len();
        self.units.push(Unit {
            entry,
            exit: entry,
            defs: Vec::new(),
            uses: Vec::new(),
        });
        let mut defs = Vec::new();
        if node_type(stmt) == "VariableDeclarationStatement" {
            for d in children(stmt, "declarations") {
                if let Some(id) = id_of(d) {
                    defs.push((id, true));
                }
            }
        }
        for e in exprs {
            expression_defs(self.doc, e, &mut defs);
        }
        self.units[u].defs = defs;
        let own_call = kind.is_call();
        for e in exprs {
            if own_call && node_type(e) == "FunctionCall" {
                self.scan_children(e, entry, true, u);
            } else {
                self.scan(e, entry, false, u);
            }
        }
        u
    }

    fn link(&mut self, from: &[usize], to: usize) {
        for &f in from {
            let (a, b) = (self.units[f].exit, self.units[to].entry);
            self.cf.push((a, b));
            self.unit_edges.push((f, to));
        }
    }

    fn leaf(&mut self, kind: NodeKind, e: &Value, owner: usize) -> usize {
        let n = self.node(kind, id_of(e).unwrap_or(-1), src_start(e));
        self.cf.push((owner, n));
        n
    }

    fn scan_children(&mut self, e: &Value, owner: usize, relevant: bool, u: usize) {
        for c in all_children(e) {
            self.scan(c, owner, relevant, u);
        }
    }

    fn scan(&mut self, e: &Value, owner: usize, relevant: bool, u: usize) {
        match node_type(e) {
            "FunctionCall" => {
                if let Some(kind) = call_kind(self.doc, e) {
                    let n = self.node(kind, id_of(e).unwrap_or(-1), src_start(e));
                    let exit = self.units[u].exit;
                    self.cf.push((exit, n));
                    self.units[u].exit = n;
                    self.scan_children(e, n, true, u);
                } else {
                    self.scan_children(e, owner, relevant, u);
                }
            }
            "BinaryOperation" if COMPARISONS.contains(&str_field(e, "operator")) => {
                self.scan_children(e, owner, true, u);
            }
            "MemberAccess" => {
                if is_timestamp_member(e) {
                    self.leaf(NodeKind::TimestampRead, e, owner);
                } else {
                    self.scan_children(e, owner, relevant, u);
                }
            }
            "Assignment" => {
                let lhs = e.get("leftHandSide");
                if str_field(e, "operator") == "=" {
                    if let Some(l) = lhs {
                        self.scan_lvalue(l, owner, relevant, u);
                    }
                } else if let Some(l) = lhs {
                    self.scan(l, owner, relevant, u);
                }
                if let Some(r) = e.get("rightHandSide") {
                    self.scan(r, owner, relevant, u);
                }
            }
            "Identifier" => self.identifier(e, owner, relevant, u),
            _ => self.scan_children(e, owner, relevant, u),
        }
    }

    /// Target of a plain assignment: index expressions are reads, the base is not.
    fn scan_lvalue(&mut self, e: &Value, owner: usize, relevant: bool, u: usize) {
        match node_type(e) {
            "Identifier" => {}
            "IndexAccess" => {
                if let Some(b) = e.get("baseExpression") {
                    self.scan_lvalue(b, owner, relevant, u);
                }
                if let Some(i) = e.get("indexExpression") {
                    self.scan(i, owner, relevant, u);
                }
            }
            "MemberAccess" => {
                if let Some(b) = e.get("expression") {
                    self.scan_lvalue(b, owner, relevant, u);
                }
            }
            "TupleExpression" => {
                for c in children(e, "components") {
                    self.scan_lvalue(c, owner, relevant, u);
                }
            }
            _ => self.scan(e, owner, relevant, u),
        }
    }

    fn identifier(&mut self, e: &Value, owner: usize, relevant: bool, u: usize) {
        let name = str_field(e, "name");
        let decl = e.get("referencedDeclaration").and_then(Value::as_i64);
        match decl.filter(|d| self.doc.contains(*d)) {
            Some(d) => {
                let Some(target) = self.doc.node(d) else {
                    return;
                };
                if node_type(target) != "VariableDeclaration" {
                    return;
                }
                let user = if relevant {
                    let kind = if self.doc.is_state_variable(d) {
                        NodeKind::StateVariable
                    } else {
                        NodeKind::LocalVariable
                    };
                    self.leaf(kind, e, owner)
                } else {
                    owner
                };
                self.units[u].uses.push((d, user));
            }
            None => {
                if name == "now" || name == "blockhash" {
                    self.leaf(NodeKind::TimestampRead, e, owner);
                } else if !GLOBALS.contains(&name) {
                    self.diagnostics.push(format!(
                        "unresolved identifier `{name}` (AST node {})",
                        id_of(e).unwrap_or(-1)
                    ));
                    self.leaf(NodeKind::UnknownRef, e, owner);
                }
            }
        }
    }

    fn run_body(
        &mut self,
        func: &Value,
        mods: &[&Value],
        idx: usize,
        frontier: Vec<usize>,
    ) -> Vec<usize> {
        if let Some(inv) = mods.get(idx) {
            let target = inv
                .get("modifierName")
                .and_then(|m| m.get("referencedDeclaration"))
                .and_then(Value::as_i64)
                .and_then(|d| self.doc.node(d));
            if let Some(m) = target.filter(|m| node_type(m) == "ModifierDefinition") {
                if let Some(body) = m.get("body").filter(|b| b.is_object()) {
                    self.placeholder.push(idx + 1);
                    self.segment += 1;
                    let out = self.stmt(body, frontier, func, mods);
                    self.segment += 1;
                    self.placeholder.pop();
                    return out;
                }
            }
            return self.run_body(func, mods, idx + 1, frontier);
        }
        match func.get("body").filter(|b| b.is_object()) {
            Some(body) => self.stmt(body, frontier, func, mods),
            None => frontier,
        }
    }

    fn stmt(
        &mut self,
        s: &Value,
        frontier: Vec<usize>,
        func: &Value,
        mods: &[&Value],
    ) -> Vec<usize> {
        match node_type(s) {
            "Block" | "UncheckedBlock" => {
                let mut f = frontier;
                for c in children(s, "statements") {
                    f = self.stmt(c, f, func, mods);
                }
                f
            }
            "PlaceholderStatement" => {
                let next = self.placeholder.last().copied().unwrap_or(mods.len());
                self.segment += 1;
                let out = self.run_body(func, mods, next, frontier);
                self.segment += 1;
                out
            }
            "IfStatement" => {
                let cond: Vec<&Value> = s.get("condition").into_iter().collect();
                let u = self.unit(NodeKind::Branch, s, &cond);
                self.link(&frontier, u);
                let mut out = match s.get("trueBody").filter(|b| b.is_object()) {
                    Some(t) => self.stmt(t, vec![u], func, mods),
                    None => vec![u],
                };
                match s.get("falseBody").filter(|b| b.is_object()) {
                    Some(f) => out.extend(self.stmt(f, vec![u], func, mods)),
                    None => out.push(u),
                }
                out.sort_unstable();
                out.dedup();
                out
            }
            "WhileStatement" | "DoWhileStatement" => {
                let cond: Vec<&Value> = s.get("condition").into_iter().collect();
                let u = self.unit(NodeKind::WhileLoop, s, &cond);
                self.link(&frontier, u);
                self.loops.push(LoopCtx {
                    cont: u,
                    breaks: Vec::new(),
                });
                let tail = match s.get("body").filter(|b| b.is_object()) {
                    Some(b) => self.stmt(b, vec![u], func, mods),
                    None => vec![u],
                };
                self.link(&tail, u);
                let ctx = self.loops.pop().expect("loop context");
                let mut out = vec![u];
                out.extend(ctx.breaks);
                out
            }
            "ForStatement" => {
                let mut f = frontier;
                if let Some(init) = s.get("initializationExpression").filter(|b| b.is_object()) {
                    f = self.stmt(init, f, func, mods);
                }
                let cond = s.get("condition").filter(|c| c.is_object());
                let pos = match (
                    cond,
                    s.get("initializationExpression").filter(|b| b.is_object()),
                ) {
                    (Some(c), _) => src_start(c),
                    (None, Some(i)) => src_end(i),
                    (None, None) => src_start(s),
                };
                let entry = self.node(NodeKind::ForLoop, id_of(s).unwrap_or(-1), pos);
                let u = self.units.len();
                self.units.push(Unit {
                    entry,
                    exit: entry,
                    defs: Vec::new(),
                    uses: Vec::new(),
                });
                if let Some(c) = cond {
                    let mut defs = Vec::new();
                    expression_defs(self.doc, c, &mut defs);
                    self.units[u].defs = defs;
                    self.scan(c, entry, false, u);
                }
                self.link(&f, u);
                // the step executes after the body, so it is ranked there
                let step = s.get("loopExpression").filter(|b| b.is_object()).map(|st| {
                    self.pos_override = Some(src_end(s));
                    let exprs: Vec<&Value> = st.get("expression").into_iter().collect();
                    let kind = expression_statement_kind(self.doc, st);
                    let su = self.unit(kind, st, &exprs);
                    self.pos_override = None;
                    su
                });
                self.loops.push(LoopCtx {
                    cont: step.unwrap_or(u),
                    breaks: Vec::new(),
                });
                let tail = match s.get("body").filter(|b| b.is_object()) {
                    Some(b) => self.stmt(b, vec![u], func, mods),
                    None => vec![u],
                };
                match step {
                    Some(su) => {
                        self.link(&tail, su);
                        self.link(&[su], u);
                    }
                    None => self.link(&tail, u),
                }
                let ctx = self.loops.pop().expect("loop context");
                let mut out = vec![u];
                out.extend(ctx.breaks);
                out
            }
            "Break" | "Continue" => {
                let u = self.unit(NodeKind::LoopJump, s, &[]);
                self.link(&frontier, u);
                let is_break = node_type(s) == "Break";
                if let Some(ctx) = self.loops.last_mut() {
                    if is_break {
                        ctx.breaks.push(u);
                    } else {
                        let c = ctx.cont;
                        self.link(&[u], c);
                    }
                }
                Vec::new()
            }
            "Return" => {
                let exprs: Vec<&Value> = s
                    .get("expression")
                    .filter(|e| e.is_object())
                    .into_iter()
                    .collect();
                let u = self.unit(NodeKind::Return, s, &exprs);
                self.link(&frontier, u);
                Vec::new()
            }
            "Throw" | "RevertStatement" => {
                let exprs: Vec<&Value> = s.get("errorCall").into_iter().collect();
                let u = self.unit(NodeKind::Statement, s, &exprs);
                self.link(&frontier, u);
                Vec::new()
            }
            "EmitStatement" => {
                let args: Vec<&Value> = s
                    .get("eventCall")
                    .map(|c| children(c, "arguments"))
                    .unwrap_or_default();
                let u = self.unit(NodeKind::Emit, s, &args);
                self.link(&frontier, u);
                vec![u]
            }
            "VariableDeclarationStatement" => {
                let exprs: Vec<&Value> = s
                    .get("initialValue")
                    .filter(|e| e.is_object())
                    .into_iter()
                    .collect();
                let u = self.unit(NodeKind::Declaration, s, &exprs);
                self.link(&frontier, u);
                vec![u]
            }
            "ExpressionStatement" => {
                let exprs: Vec<&Value> = s.get("expression").into_iter().collect();
                let kind = expression_statement_kind(self.doc, s);
                let u = self.unit(kind, s, &exprs);
                self.link(&frontier, u);
                if exprs.first().is_some_and(|e| is_revert_call(self.doc, e)) {
                    Vec::new()
                } else {
                    vec![u]
                }
            }
            "TryStatement" => {
                let call: Vec<&Value> = s.get("externalCall").into_iter().collect();
                let u = self.unit(NodeKind::Branch, s, &call);
                self.link(&frontier, u);
                let mut out = Vec::new();
                for clause in children(s, "clauses") {
                    match clause.get("block").filter(|b| b.is_object()) {
                        Some(b) => out.extend(self.stmt(b, vec![u], func, mods)),
                        None => out.push(u),
                    }
                }
                out.sort_unstable();
                out.dedup();
                out
            }
            "InlineAssembly" => {
                let u = self.unit(NodeKind::Statement, s, &[]);
                self.link(&frontier, u);
                vec![u]
            }
            _ => {
                let exprs = all_children(s);
                let u = self.unit(NodeKind::Statement, s, &exprs);
                self.link(&frontier, u);
                vec![u]
            }
        }
    }

    /// Sorts nodes into temporal order and derives data-flow edges.
    fn finish(self) -> (Vec<(NodeKind, i64)>, Vec<GraphEdge>) {
        let n_units = self.units.len();
        let mut preds = vec![Vec::new(); n_units];
        for &(a, b) in &self.unit_edges {
            preds[b].push(a);
        }
        let mut reach_in: Vec<BTreeSet<(i64, usize)>> = vec![BTreeSet::new(); n_units];
        let mut reach_out: Vec<BTreeSet<(i64, usize)>> = vec![BTreeSet::new(); n_units];
        let mut changed = true;
        while changed {
            changed = false;
            for u in 0..n_units {
                let inn: BTreeSet<(i64, usize)> = preds[u]
                    .iter()
                    .flat_map(|&p| reach_out[p].iter().copied())
                    .collect();
                let killed: BTreeSet<i64> = self.units[u]
                    .defs
                    .iter()
                    .filter(|d| d.1)
                    .map(|d| d.0)
                    .collect();
                let mut out: BTreeSet<(i64, usize)> = inn
                    .iter()
                    .filter(|(s, _)| !killed.contains(s))
                    .copied()
                    .collect();
                out.extend(self.units[u].defs.iter().map(|&(s, _)| (s, u)));
                if out != reach_out[u] {
                    reach_out[u] = out;
                    changed = true;
                }
                reach_in[u] = inn;
            }
        }

        let mut df = Vec::new();
        for (u, unit) in self.units.iter().enumerate() {
            for &(sym, user) in &unit.uses {
                for &(s, d) in reach_in[u].range((sym, 0)..=(sym, usize::MAX)) {
                    debug_assert_eq!(s, sym);
                    df.push((self.units[d].entry, user));
                }
            }
        }

        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by_key(|&i| self.nodes[i].key);
        let mut new_id = vec![0; self.nodes.len()];
        for (rank, &old) in order.iter().enumerate() {
            new_id[old] = rank;
        }
        let nodes = order
            .iter()
            .map(|&i| (self.nodes[i].kind, self.nodes[i].payload))
            .collect();
        let mut edges: BTreeSet<GraphEdge> = BTreeSet::new();
        for &(a, b) in &self.cf {
            edges.insert(GraphEdge {
                src: new_id[a],
                dst: new_id[b],
                edge_type: EdgeType::ControlFlow,
            });
        }
        for (a, b) in df {
            edges.insert(GraphEdge {
                src: new_id[a],
                dst: new_id[b],
                edge_type: EdgeType::DataFlow,
            });
        }
        (nodes, edges.into_iter().collect())
    }
}

fn expression_statement_kind(doc: &AstDocument, s: &Value) -> NodeKind {
    let Some(e) = s.get("expression") else {
        return NodeKind::Statement;
    };
    match node_type(e) {
        "Assignment" => NodeKind::Assignment,
        "UnaryOperation" if matches!(str_field(e, "operator"), "++" | "--" | "delete") => {
            NodeKind::Assignment
        }
        "FunctionCall" => {
            if is_guard_call(doc, e) {
                NodeKind::Guard
            } else if let Some(k) = call_kind(doc, e) {
                k
            } else if is_array_mutation(e) {
                NodeKind::Assignment
            } else {
                NodeKind::Statement
            }
        }
        _ => NodeKind::Statement,
    }
}

fn builtin_callee<'v>(doc: &AstDocument, e: &'v Value) -> Option<&'v str> {
    let callee = e.get("expression")?;
    if node_type(callee) != "Identifier" {
        return None;
    }
    let unresolved = callee
        .get("referencedDeclaration")
        .and_then(Value::as_i64)
        .is_none_or(|d| !doc.contains(d));
    unresolved.then(|| str_field(callee, "name"))
}

pub(crate) fn is_guard_call(doc: &AstDocument, e: &Value) -> bool {
    node_type(e) == "FunctionCall" && matches!(builtin_callee(doc, e), Some("require" | "assert"))
}

fn is_revert_call(doc: &AstDocument, e: &Value) -> bool {
    node_type(e) == "FunctionCall" && builtin_callee(doc, e) == Some("revert")
}

fn is_timestamp_member(e: &Value) -> bool {
    let base = e.get("expression");
    base.is_some_and(|b| node_type(b) == "Identifier" && str_field(b, "name") == "block")
        && matches!(
            str_field(e, "memberName"),
            "timestamp" | "number" | "blockhash"
        )
}

fn type_string(e: &Value) -> &str {
    e.get("typeDescriptions")
        .and_then(|t| t.get("typeString"))
        .and_then(Value::as_str)
        .unwrap_or("")
}

fn is_array_mutation(e: &Value) -> bool {
    let Some(callee) = e.get("expression") else {
        return false;
    };
    node_type(callee) == "MemberAccess"
        && matches!(str_field(callee, "memberName"), "push" | "pop")
        && callee
            .get("referencedDeclaration")
            .is_none_or(Value::is_null)
}

/// A `.value(..)` / `.gas(..)` application on a function-typed expression.
fn is_call_option(e: &Value) -> bool {
    let Some(callee) = e.get("expression") else {
        return false;
    };
    node_type(callee) == "MemberAccess"
        && matches!(str_field(callee, "memberName"), "value" | "gas")
        && callee
            .get("expression")
            .is_some_and(|b| type_string(b).starts_with("function"))
}

/// Classifies a `FunctionCall` as a call node kind, or `None` when it is a
/// builtin, a type conversion or an option application.
pub(crate) fn call_kind(doc: &AstDocument, e: &Value) -> Option<NodeKind> {
    if node_type(e) != "FunctionCall" || is_call_option(e) {
        return None;
    }
    if matches!(
        str_field(e, "kind"),
        "typeConversion" | "structConstructorCall"
    ) {
        return None;
    }
    let mut has_value = false;
    let mut callee = e.get("expression")?;
    loop {
        match node_type(callee) {
            "FunctionCallOptions" => {
                let names = callee.get("names").and_then(Value::as_array);
                has_value |= names.is_some_and(|n| n.iter().any(|x| x.as_str() == Some("value")));
                callee = callee.get("expression")?;
            }
            "FunctionCall" if is_call_option(callee) => {
                let m = callee.get("expression")?;
                has_value |= str_field(m, "memberName") == "value";
                callee = m.get("expression")?;
            }
            _ => break,
        }
    }
    match node_type(callee) {
        "MemberAccess" => {
            let member = str_field(callee, "memberName");
            match member {
                "call" if has_value => return Some(NodeKind::ValueCall),
                "call" | "delegatecall" | "staticcall" | "callcode" | "send" | "transfer" => {
                    return Some(NodeKind::Call)
                }
                "push" | "pop"
                    if callee
                        .get("referencedDeclaration")
                        .is_none_or(Value::is_null) =>
                {
                    return None
                }
                _ => {}
            }
            let base = callee.get("expression")?;
            if node_type(base) == "Identifier"
                && matches!(
                    str_field(base, "name"),
                    "abi" | "msg" | "block" | "tx" | "type"
                )
                && base
                    .get("referencedDeclaration")
                    .and_then(Value::as_i64)
                    .is_none_or(|d| !doc.contains(d))
            {
                return None;
            }
            if type_string(callee).starts_with("function")
                || callee
                    .get("referencedDeclaration")
                    .and_then(Value::as_i64)
                    .is_some()
            {
                Some(NodeKind::Call)
            } else {
                None
            }
        }
        "Identifier" => {
            let decl = callee.get("referencedDeclaration").and_then(Value::as_i64);
            match decl.and_then(|d| doc.node(d)) {
                Some(t) => match node_type(t) {
                    "FunctionDefinition" | "ModifierDefinition" => Some(NodeKind::Call),
                    "VariableDeclaration" => Some(NodeKind::Call),
                    _ => None,
                },
                None => {
                    let name = str_field(callee, "name");
                    if PURE_BUILTINS.contains(&name) {
                        None
                    } else {
                        Some(NodeKind::Call)
                    }
                }
            }
        }
        "NewExpression" => Some(NodeKind::Call),
        _ => None,
    }
}

/// Variables written by an expression: `(declaration id, kills previous definitions)`.
pub fn expression_defs(doc: &AstDocument, e: &Value, out: &mut Vec<(i64, bool)>) {
    match node_type(e) {
        "Assignment" => {
            if let Some(l) = e.get("leftHandSide") {
                lvalue_defs(doc, l, out);
            }
        }
        "UnaryOperation" if matches!(str_field(e, "operator"), "++" | "--" | "delete") => {
            if let Some(s) = e.get("subExpression") {
                lvalue_defs(doc, s, out);
            }
        }
        "FunctionCall" if is_array_mutation(e) => {
            if let Some(base) = e.get("expression").and_then(|c| c.get("expression")) {
                if let Some(d) = base_symbol(doc, base) {
                    out.push((d, false));
                }
            }
        }
        _ => {}
    }
    for c in all_children(e) {
        expression_defs(doc, c, out);
    }
}

fn lvalue_defs(doc: &AstDocument, l: &Value, out: &mut Vec<(i64, bool)>) {
    if node_type(l) == "TupleExpression" {
        for c in children(l, "components") {
            lvalue_defs(doc, c, out);
        }
        return;
    }
    if let Some(d) = base_symbol(doc, l) {
        out.push((d, node_type(l) == "Identifier"));
    }
}

/// Declaration id of the variable at the root of an access path.
pub fn base_symbol(doc: &AstDocument, e: &Value) -> Option<i64> {
    let mut cur = e;
    loop {
        match node_type(cur) {
            "Identifier" => {
                let d = cur.get("referencedDeclaration").and_then(Value::as_i64)?;
                return doc
                    .node(d)
                    .filter(|t| node_type(t) == "VariableDeclaration")
                    .map(|_| d);
            }
            "IndexAccess" => cur = cur.get("baseExpression")?,
            "MemberAccess" => cur = cur.get("expression")?,
            _ => return None,
        }
    }
}

/// The expressions evaluated by the graph node built for statement `s`.
pub fn own_expressions(s: &Value) -> Vec<&Value> {
    let keys: &[&str] = match node_type(s) {
        "IfStatement" | "WhileStatement" | "DoWhileStatement" | "ForStatement" => &["condition"],
        "ExpressionStatement" | "Return" => &["expression"],
        "VariableDeclarationStatement" => &["initialValue"],
        "EmitStatement" => &["eventCall"],
        "TryStatement" => &["externalCall"],
        "FunctionCall" => return vec![s],
        _ => &[],
    };
    keys.iter()
        .filter_map(|k| s.get(*k).filter(|v| v.is_object()))
        .collect()
}

/// True when the expression reads `block.timestamp`, `now`, `block.number`
/// or `blockhash`.
pub fn contains_timestamp(doc: &AstDocument, e: &Value) -> bool {
    let here = match node_type(e) {
        "MemberAccess" => is_timestamp_member(e),
        "Identifier" => {
            let name = str_field(e, "name");
            (name == "now" || name == "blockhash")
                && e.get("referencedDeclaration")
                    .and_then(Value::as_i64)
                    .is_none_or(|d| !doc.contains(d))
        }
        _ => false,
    };
    here || all_children(e)
        .into_iter()
        .any(|c| contains_timestamp(doc, c))
}

/// Variable declarations read anywhere in the expression.
pub fn referenced_variables(doc: &AstDocument, e: &Value, out: &mut BTreeSet<i64>) {
    if node_type(e) == "Identifier" {
        if let Some(d) = e.get("referencedDeclaration").and_then(Value::as_i64) {
            if doc
                .node(d)
                .is_some_and(|t| node_type(t) == "VariableDeclaration")
            {
                out.insert(d);
            }
        }
    }
    for c in all_children(e) {
        referenced_variables(doc, c, out);
    }
}

pub fn contains_comparison(e: &Value) -> bool {
    (node_type(e) == "BinaryOperation" && COMPARISONS.contains(&str_field(e, "operator")))
        || all_children(e).into_iter().any(contains_comparison)
}

pub fn contains_call(doc: &AstDocument, e: &Value) -> bool {
    call_kind(doc, e).is_some() || all_children(e).into_iter().any(|c| contains_call(doc, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::ingest_ast;

    const BANK05: &str = include_str!("../tests/fixtures/handcrafted/r1_vulnerable_bank.ast.json");
    const BANK08: &str = include_str!("../tests/fixtures/solc08/vulnerable_bank.ast.json");
    const LOOPS: &str = include_str!("../tests/fixtures/solc08/loops.ast.json");
    const MODBANK: &str = include_str!("../tests/fixtures/handcrafted/r3_modifier_bank.ast.json");

    fn kinds(g: &ContractGraph) -> Vec<NodeKind> {
        g.nodes.iter().map(|n| n.kind).collect()
    }

    fn cf_reaches(g: &ContractGraph, from: usize, to: usize) -> bool {
        let (succ, _) = g.adjacency(|t| t == EdgeType::ControlFlow);
        ContractGraph::reachable(&succ, from)[to]
    }

    fn withdraw_call_then_update(text: &str) {
        let doc = ingest_ast(text).unwrap();
        let g = build_csg(&doc, "withdraw").unwrap();
        g.validate().unwrap();
        let call = g
            .nodes
            .iter()
            .position(|n| n.kind == NodeKind::ValueCall)
            .unwrap();
        let update = g
            .nodes
            .iter()
            .rposition(|n| n.kind == NodeKind::Assignment)
            .unwrap();
        assert!(g.nodes[update].temporal_rank > g.nodes[call].temporal_rank);
        assert!(cf_reaches(&g, call, update));
        let stmt = doc.node(g.nodes[update].payload).unwrap();
        let lhs = &stmt["expression"]["leftHandSide"]["baseExpression"];
        assert_eq!(lhs["name"], "balances");
    }

    #[test]
    fn fig1_withdraw_both_compilers() {
        withdraw_call_then_update(BANK05);
        withdraw_call_then_update(BANK08);
    }

    #[test]
    fn withdraw_node_layout() {
        let doc = ingest_ast(BANK05).unwrap();
        let g = build_csg(&doc, "withdraw").unwrap();
        use NodeKind::*;
        assert_eq!(
            kinds(&g),
            [
                Guard,
                StateVariable,
                LocalVariable,
                Declaration,
                ValueCall,
                LocalVariable,
                Guard,
                Assignment
            ]
        );
        // success flows from its declaration into the second require
        assert!(g.edges.contains(&GraphEdge {
            src: 3,
            dst: 6,
            edge_type: EdgeType::DataFlow
        }));
        assert!(g.diagnostics.is_empty());
    }

    #[test]
    fn single_return_is_one_node() {
        let doc = ingest_ast(LOOPS).unwrap();
        let g = build_csg(&doc, "single").unwrap();
        assert_eq!(kinds(&g), [NodeKind::Return]);
        assert!(g.edges.iter().all(|e| e.edge_type != EdgeType::DataFlow));
    }

    #[test]
    fn while_true_self_loop() {
        let doc = ingest_ast(LOOPS).unwrap();
        let g = build_csg(&doc, "forever").unwrap();
        assert_eq!(kinds(&g), [NodeKind::WhileLoop]);
        assert_eq!(
            g.edges,
            [GraphEdge {
                src: 0,
                dst: 0,
                edge_type: EdgeType::ControlFlow
            }]
        );
    }

    #[test]
    fn for_loop_back_edge_targets_condition() {
        let doc = ingest_ast(LOOPS).unwrap();
        let g = build_csg(&doc, "sum").unwrap();
        g.validate().unwrap();
        let lp = g
            .nodes
            .iter()
            .position(|n| n.kind == NodeKind::ForLoop)
            .unwrap();
        for e in g
            .edges
            .iter()
            .filter(|e| e.edge_type == EdgeType::ControlFlow)
        {
            if e.dst <= e.src {
                assert_eq!(e.dst, lp, "backward edge {e:?} does not target the loop");
            }
        }
        // i++ in the step reaches the condition occurrence of i
        let step = g.nodes.len() - 1;
        assert_eq!(g.nodes[step].kind, NodeKind::Assignment);
        assert!(g.edges.iter().any(|e| e.edge_type == EdgeType::DataFlow
            && e.src == step
            && e.dst > lp
            && e.dst < step));
    }

    #[test]
    fn modifier_guard_precedes_call() {
        let doc = ingest_ast(MODBANK).unwrap();
        let g = build_csg(&doc, "withdraw").unwrap();
        assert_eq!(g.nodes[0].kind, NodeKind::Guard);
        let call = g
            .nodes
            .iter()
            .position(|n| n.kind == NodeKind::ValueCall)
            .unwrap();
        assert!(cf_reaches(&g, 0, call));
    }

    #[test]
    fn contract_union_has_scopes() {
        let doc = ingest_ast(BANK05).unwrap();
        let g = build_contract_csg(&doc);
        g.validate().unwrap();
        let names: Vec<_> = g.scopes.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["VulnerableBank.deposit", "VulnerableBank.withdraw"]);
        for e in &g.edges {
            let sa = g.scopes.iter().position(|s| s.nodes().contains(&e.src));
            let sb = g.scopes.iter().position(|s| s.nodes().contains(&e.dst));
            assert_eq!(sa, sb);
        }
    }

    #[test]
    fn unknown_reference_is_diagnosed() {
        let text = r#"{"nodeType":"SourceUnit","id":1,"absolutePath":"x.sol","nodes":[
          {"nodeType":"ContractDefinition","id":2,"name":"C","nodes":[
            {"nodeType":"FunctionDefinition","id":3,"name":"f","kind":"function","modifiers":[],
             "body":{"nodeType":"Block","id":4,"src":"0:10:0","statements":[
               {"nodeType":"ExpressionStatement","id":5,"src":"1:5:0","expression":
                 {"nodeType":"Assignment","id":6,"src":"1:5:0","operator":"=",
                  "leftHandSide":{"nodeType":"Identifier","id":7,"src":"1:1:0","name":"ghost","referencedDeclaration":99},
                  "rightHandSide":{"nodeType":"Identifier","id":8,"src":"5:1:0","name":"ghost2","referencedDeclaration":98}}}]}}]}]}"#;
        let doc = ingest_ast(text).unwrap();
        let g = build_csg(&doc, "f").unwrap();
        assert_eq!(kinds(&g), [NodeKind::Assignment, NodeKind::UnknownRef]);
        assert_eq!(g.diagnostics.len(), 1);
        assert!(g.diagnostics[0].contains("ghost2"));
    }

    #[test]
    fn serialization_is_deterministic() {
        let doc = ingest_ast(MODBANK).unwrap();
        let a = build_contract_csg(&doc).to_json();
        let b = build_contract_csg(&ingest_ast(MODBANK).unwrap()).to_json();
        assert_eq!(a, b);
    }
}
