//! The nine expert sub-patterns, evaluated on CFGs and CSGs.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ast::{node_type, AstDocument};
use crate::cfg::is_backward_jump;
use crate::csg::{
    call_kind, contains_timestamp, expression_defs, own_expressions, referenced_variables,
};
use crate::evm::{BasicBlock, Instruction, TerminatorKind};
use crate::graph::{ContractGraph, EdgeType, GraphError, Modality, NodeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Vulnerability {
    Reentrancy,
    Timestamp,
    InfiniteLoop,
}

impl Vulnerability {
    pub const ALL: [Vulnerability; 3] = [
        Vulnerability::Reentrancy,
        Vulnerability::Timestamp,
        Vulnerability::InfiniteLoop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Vulnerability::Reentrancy => "reentrancy",
            Vulnerability::Timestamp => "timestamp",
            Vulnerability::InfiniteLoop => "infinite-loop",
        }
    }

    pub fn sub_patterns(self) -> [SubPattern; 3] {
        let i = self as usize * 3;
        [
            SubPattern::ALL[i],
            SubPattern::ALL[i + 1],
            SubPattern::ALL[i + 2],
        ]
    }
}

impl fmt::Display for Vulnerability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Vulnerability {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Vulnerability::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown vulnerability `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SubPattern {
    CallValueInvocation,
    BalanceDeduction,
    EnoughBalance,
    TimestampInvocation,
    TimestampAssign,
    TimestampContamination,
    LoopStatement,
    LoopCondition,
    SelfInvocation,
}

impl SubPattern {
    pub const ALL: [SubPattern; 9] = [
        SubPattern::CallValueInvocation,
        SubPattern::BalanceDeduction,
        SubPattern::EnoughBalance,
        SubPattern::TimestampInvocation,
        SubPattern::TimestampAssign,
        SubPattern::TimestampContamination,
        SubPattern::LoopStatement,
        SubPattern::LoopCondition,
        SubPattern::SelfInvocation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn vulnerability(self) -> Vulnerability {
        Vulnerability::ALL[self as usize / 3]
    }

    pub fn name(self) -> &'static str {
        match self {
            SubPattern::CallValueInvocation => "callValueInvocation",
            SubPattern::BalanceDeduction => "balanceDeduction",
            SubPattern::EnoughBalance => "enoughBalance",
            SubPattern::TimestampInvocation => "timestampInvocation",
            SubPattern::TimestampAssign => "timestampAssign",
            SubPattern::TimestampContamination => "timestampContamination",
            SubPattern::LoopStatement => "loopStatement",
            SubPattern::LoopCondition => "loopCondition",
            SubPattern::SelfInvocation => "selfInvocation",
        }
    }

    /// The sub-pattern this one is conditioned on, if any.
    pub fn base(self) -> Option<SubPattern> {
        match self {
            SubPattern::BalanceDeduction | SubPattern::EnoughBalance => {
                Some(SubPattern::CallValueInvocation)
            }
            SubPattern::TimestampAssign | SubPattern::TimestampContamination => {
                Some(SubPattern::TimestampInvocation)
            }
            _ => None,
        }
    }
}

impl fmt::Display for SubPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SubPattern {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        SubPattern::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown sub-pattern `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternAnnotation {
    pub contract_id: String,
    pub vulnerability: Vulnerability,
    pub sub_pattern: SubPattern,
    pub modality: Modality,
    /// Sorted node ids.
    pub key_nodes: Vec<usize>,
    /// Key nodes matched only through a weaker trigger; paired last during alignment.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub secondary_nodes: Vec<usize>,
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatternConfig {
    /// Hop radius for "successor" and "predecessor" blocks.
    pub radius: usize,
}

impl Default for PatternConfig {
    fn default() -> Self {
        PatternConfig { radius: 3 }
    }
}

/// Sub-patterns that fired, in canonical order.
pub fn fired(annotations: &[PatternAnnotation]) -> BTreeSet<SubPattern> {
    annotations.iter().map(|a| a.sub_pattern).collect()
}

struct Collector {
    contract_id: String,
    modality: Modality,
    found: Vec<(SubPattern, BTreeSet<usize>, BTreeSet<usize>, Vec<String>)>,
}

impl Collector {
    fn new(graph: &ContractGraph) -> Self {
        Collector {
            contract_id: graph.contract_id.clone(),
            modality: graph.modality,
            found: SubPattern::ALL
                .iter()
                .map(|&p| (p, BTreeSet::new(), BTreeSet::new(), Vec::new()))
                .collect(),
        }
    }

    fn add(&mut self, p: SubPattern, node: usize, evidence: String) {
        let slot = &mut self.found[p.index()];
        slot.2.remove(&node);
        if slot.1.insert(node) {
            slot.3.push(evidence);
        }
    }

    /// Adds a node unless it is already a primary key node.
    fn add_secondary(&mut self, p: SubPattern, node: usize, evidence: String) {
        let slot = &mut self.found[p.index()];
        if slot.1.insert(node) {
            slot.2.insert(node);
            slot.3.push(evidence);
        }
    }

    fn add_as(&mut self, primary: bool, p: SubPattern, node: usize, evidence: String) {
        if primary {
            self.add(p, node, evidence)
        } else {
            self.add_secondary(p, node, evidence)
        }
    }

    fn finish(self) -> Vec<PatternAnnotation> {
        let contract_id = self.contract_id;
        let modality = self.modality;
        self.found
            .into_iter()
            .filter(|(_, nodes, _, _)| !nodes.is_empty())
            .map(|(p, nodes, secondary, evidence)| PatternAnnotation {
                contract_id: contract_id.clone(),
                vulnerability: p.vulnerability(),
                sub_pattern: p,
                modality,
                key_nodes: nodes.into_iter().collect(),
                secondary_nodes: secondary.into_iter().collect(),
                evidence,
            })
            .collect()
    }
}

const CALLS: &[&str] = &["CALL", "DELEGATECALL", "STATICCALL"];
const TIMESTAMPS: &[&str] = &["TIMESTAMP", "BLOCKHASH", "NUMBER"];
const CHECKS: &[&str] = &["LT", "GT", "EQ", "ISZERO"];
const ARITH: &[&str] = &[
    "ADD", "MUL", "SUB", "DIV", "SDIV", "MOD", "SMOD", "ADDMOD", "MULMOD", "EXP", "LT", "GT",
    "SLT", "SGT", "EQ", "ISZERO", "AND", "OR", "XOR", "NOT",
];

fn is_forwarding(ins: &Instruction) -> bool {
    ARITH.contains(&ins.mnemonic.as_str())
        || ins.mnemonic.starts_with("DUP")
        || ins.mnemonic.starts_with("SWAP")
}

fn first_index(block: &BasicBlock, names: &[&str]) -> Option<usize> {
    block
        .instructions
        .iter()
        .position(|i| names.contains(&i.mnemonic.as_str()))
}

fn find_after<'b>(block: &'b BasicBlock, from: usize, names: &[&str]) -> Option<&'b Instruction> {
    block
        .instructions
        .iter()
        .skip(from)
        .find(|i| names.contains(&i.mnemonic.as_str()))
}

/// A forwarding or arithmetic instruction at or after `from` that is later
/// followed by the block's JUMPI.
fn forwards_into_branch(block: &BasicBlock, from: usize) -> Option<&Instruction> {
    if block.terminator_kind != TerminatorKind::Jumpi {
        return None;
    }
    let n = block.instructions.len();
    block.instructions[from.min(n)..n - 1]
        .iter()
        .find(|i| is_forwarding(i))
}

fn comparison_then_jumpi(block: &BasicBlock) -> Option<&Instruction> {
    if block.terminator_kind != TerminatorKind::Jumpi {
        return None;
    }
    let n = block.instructions.len();
    block.instructions[..n - 1]
        .iter()
        .find(|i| CHECKS.contains(&i.mnemonic.as_str()))
}

/// Evaluates the bytecode column with the default configuration.
pub fn match_bytecode_patterns(
    graph: &ContractGraph,
    blocks: &[BasicBlock],
) -> Result<Vec<PatternAnnotation>, GraphError> {
    match_bytecode_patterns_with(graph, blocks, &PatternConfig::default())
}

pub fn match_bytecode_patterns_with(
    graph: &ContractGraph,
    blocks: &[BasicBlock],
    config: &PatternConfig,
) -> Result<Vec<PatternAnnotation>, GraphError> {
    graph.expect_modality(Modality::Bytecode)?;
    let block_of: Vec<&BasicBlock> = graph
        .nodes
        .iter()
        .map(|n| {
            blocks
                .get(n.payload as usize)
                .filter(|b| b.id == n.payload as usize)
                .ok_or_else(|| {
                    GraphError::Invalid(format!(
                        "node {} references unknown block {}",
                        n.id, n.payload
                    ))
                })
        })
        .collect::<Result<_, _>>()?;
    let (succ, pred) = graph.adjacency(|_| true);
    let r = config.radius;
    let mut c = Collector::new(graph);

    // reentrancy
    let mut triggers = Vec::new();
    for (n, b) in block_of.iter().enumerate() {
        if let Some(i) = first_index(b, &["CALL"]) {
            c.add(
                SubPattern::CallValueInvocation,
                n,
                format!("CALL at 0x{:x} in block {n}", b.instructions[i].offset),
            );
            triggers.push((n, i, true));
        } else if let Some(i) = first_index(b, &["CALLVALUE"]) {
            c.add_secondary(
                SubPattern::CallValueInvocation,
                n,
                format!("CALLVALUE at 0x{:x} in block {n}", b.instructions[i].offset),
            );
            triggers.push((n, i, false));
        }
    }
    for &(t, at, primary) in &triggers {
        if let Some(ins) = find_after(block_of[t], at + 1, &["SSTORE"]) {
            c.add_as(
                primary,
                SubPattern::BalanceDeduction,
                t,
                format!(
                    "SSTORE at 0x{:x} after the trigger in block {t}",
                    ins.offset
                ),
            );
        }
        for s in ContractGraph::within_hops(&succ, t, r) {
            if let Some(ins) = find_after(block_of[s], if s == t { at + 1 } else { 0 }, &["SSTORE"])
            {
                c.add_as(
                    primary,
                    SubPattern::BalanceDeduction,
                    s,
                    format!(
                        "SSTORE at 0x{:x} in block {s}, successor of block {t}",
                        ins.offset
                    ),
                );
            }
        }
        for p in ContractGraph::within_hops(&pred, t, r) {
            if let Some(ins) = comparison_then_jumpi(block_of[p]) {
                c.add_as(
                    primary,
                    SubPattern::EnoughBalance,
                    p,
                    format!("{} at 0x{:x} guarding block {t}", ins.mnemonic, ins.offset),
                );
            }
        }
    }

    // timestamp
    let mut stamps = Vec::new();
    for (n, b) in block_of.iter().enumerate() {
        if let Some(i) = first_index(b, TIMESTAMPS) {
            let ins = &b.instructions[i];
            c.add(
                SubPattern::TimestampInvocation,
                n,
                format!("{} at 0x{:x} in block {n}", ins.mnemonic, ins.offset),
            );
            stamps.push((n, i));
        }
    }
    for &(t, at) in &stamps {
        let mut region: Vec<(usize, usize)> = vec![(t, at + 1)];
        region.extend(
            ContractGraph::within_hops(&succ, t, r)
                .into_iter()
                .filter(|&s| s != t)
                .map(|s| (s, 0)),
        );
        for (s, from) in region {
            if let Some(ins) = find_after(block_of[s], from, &["SSTORE", "MSTORE"]) {
                c.add(
                    SubPattern::TimestampAssign,
                    s,
                    format!(
                        "{} at 0x{:x} in block {s} after timestamp read in block {t}",
                        ins.mnemonic, ins.offset
                    ),
                );
            }
            if let Some(ins) = forwards_into_branch(block_of[s], from) {
                c.add(
                    SubPattern::TimestampContamination,
                    s,
                    format!(
                        "{} at 0x{:x} feeds JUMPI in block {s}",
                        ins.mnemonic, ins.offset
                    ),
                );
            }
        }
    }

    // infinite loop
    for e in &graph.edges {
        if !matches!(e.edge_type, EdgeType::JumpUncond | EdgeType::JumpCondTrue) {
            continue;
        }
        if !is_backward_jump(e, graph)? {
            continue;
        }
        let src_block = block_of[e.src];
        c.add(
            SubPattern::LoopStatement,
            e.src,
            format!(
                "{} at 0x{:x} jumps back to block {}",
                src_block.last().mnemonic,
                src_block.last().offset,
                e.dst
            ),
        );
        let from_head = ContractGraph::reachable(&succ, e.dst);
        let to_tail = ContractGraph::reachable(&pred, e.src);
        let body: Vec<usize> = (0..graph.len())
            .filter(|&n| from_head[n] && to_tail[n])
            .collect();
        let mut constant = false;
        for &n in &body {
            if let Some(off) = constant_true_jumpi(block_of[n]) {
                constant = true;
                c.add(
                    SubPattern::LoopCondition,
                    n,
                    format!("JUMPI at 0x{off:x} tests the constant 0x1"),
                );
            }
        }
        if !constant
            && !body
                .iter()
                .any(|&n| block_of[n].contains_any(&["SSTORE", "SLOAD"]))
        {
            c.add(
                SubPattern::LoopCondition,
                e.src,
                format!("loop {}..{} touches no storage", e.dst, e.src),
            );
        }
    }
    self_invocation_bytecode(graph, &block_of, &succ, &pred, &mut c);

    Ok(c.finish())
}

/// `PUSH1 0x01 (ISZERO)* PUSHn target JUMPI` at the end of the block.
fn constant_true_jumpi(block: &BasicBlock) -> Option<usize> {
    let ins = &block.instructions;
    if block.terminator_kind != TerminatorKind::Jumpi || ins.len() < 3 {
        return None;
    }
    let jumpi = ins.len() - 1;
    if !ins[jumpi - 1].is_push() {
        return None;
    }
    let mut k = jumpi - 1;
    while k > 0 && ins[k - 1].is("ISZERO") {
        k -= 1;
    }
    let push = k.checked_sub(1)?;
    (ins[push].is("PUSH1") && ins[push].push_value() == Some(1)).then_some(ins[jumpi].offset)
}

/// Function entry blocks: cond-true targets of selector-comparison blocks,
/// or block 0 when there is no dispatcher.
fn function_entries(graph: &ContractGraph, block_of: &[&BasicBlock]) -> Vec<usize> {
    let mut entries: Vec<usize> = graph
        .edges
        .iter()
        .filter(|e| e.edge_type == EdgeType::JumpCondTrue)
        .filter(|e| {
            let b = block_of[e.src];
            b.contains("EQ") && b.contains("PUSH4")
        })
        .map(|e| e.dst)
        .collect();
    entries.sort_unstable();
    entries.dedup();
    if entries.is_empty() && !graph.is_empty() {
        entries.push(0);
    }
    entries
}

fn self_invocation_bytecode(
    graph: &ContractGraph,
    block_of: &[&BasicBlock],
    succ: &[Vec<usize>],
    pred: &[Vec<usize>],
    c: &mut Collector,
) {
    let entries = function_entries(graph, block_of);
    let from_entry: Vec<Vec<bool>> = entries
        .iter()
        .map(|&e| ContractGraph::reachable(succ, e))
        .collect();
    for (n, b) in block_of.iter().enumerate() {
        let Some(i) = first_index(b, CALLS) else {
            continue;
        };
        let to_call = ContractGraph::reachable(pred, n);
        let unguarded = entries.iter().zip(&from_entry).find(|(_, reach)| {
            reach[n]
                && (0..graph.len()).all(|m| {
                    m == n
                        || !(reach[m] && to_call[m])
                        || block_of[m].terminator_kind != TerminatorKind::Jumpi
                })
        });
        if let Some((&entry, _)) = unguarded {
            c.add(
                SubPattern::SelfInvocation,
                n,
                format!(
                    "{} at 0x{:x} unguarded from entry block {entry}",
                    b.instructions[i].mnemonic, b.instructions[i].offset
                ),
            );
        }
    }
}

/// Evaluates the CSG column, scope by scope.
pub fn match_source_patterns(
    graph: &ContractGraph,
    doc: &AstDocument,
) -> Result<Vec<PatternAnnotation>, GraphError> {
    graph.expect_modality(Modality::Source)?;
    let mut c = Collector::new(graph);
    let (cf_succ, cf_pred) = graph.adjacency(|t| t == EdgeType::ControlFlow);
    for scope in graph.scope_ranges() {
        SourceScope {
            graph,
            doc,
            nodes: scope,
            cf_succ: &cf_succ,
            cf_pred: &cf_pred,
        }
        .evaluate(&mut c);
    }
    Ok(c.finish())
}

struct SourceScope<'a> {
    graph: &'a ContractGraph,
    doc: &'a AstDocument,
    nodes: std::ops::Range<usize>,
    cf_succ: &'a [Vec<usize>],
    cf_pred: &'a [Vec<usize>],
}

impl SourceScope<'_> {
    fn kind(&self, n: usize) -> NodeKind {
        self.graph.nodes[n].kind
    }

    fn ast(&self, n: usize) -> Option<&Value> {
        self.doc.node(self.graph.nodes[n].payload)
    }

    fn exprs(&self, n: usize) -> Vec<&Value> {
        self.ast(n).map(own_expressions).unwrap_or_default()
    }

    fn defs(&self, n: usize) -> Vec<i64> {
        let mut out = Vec::new();
        if let Some(s) = self.ast(n) {
            if node_type(s) == "VariableDeclarationStatement" {
                for d in crate::ast::children(s, "declarations") {
                    if let Some(id) = crate::ast::id_of(d) {
                        out.push((id, true));
                    }
                }
            }
        }
        for e in self.exprs(n) {
            expression_defs(self.doc, e, &mut out);
        }
        out.into_iter().map(|d| d.0).collect()
    }

    fn describe(&self, n: usize, what: &str) -> String {
        let node = &self.graph.nodes[n];
        format!("{what}: node {n} ({:?}, AST {})", node.kind, node.payload)
    }

    fn evaluate(&self, c: &mut Collector) {
        let nodes: Vec<usize> = self.nodes.clone().collect();
        let base = |c: &Collector, p: SubPattern| {
            c.found[p.index()].1.iter().any(|n| self.nodes.contains(n))
        };

        // reentrancy
        let calls: Vec<usize> = nodes
            .iter()
            .copied()
            .filter(|&n| self.kind(n) == NodeKind::ValueCall)
            .collect();
        for &n in &calls {
            c.add(
                SubPattern::CallValueInvocation,
                n,
                self.describe(n, "value-bearing low-level call"),
            );
        }
        if base(c, SubPattern::CallValueInvocation) {
            for &call in &calls {
                let after = ContractGraph::reachable(self.cf_succ, call);
                let before = ContractGraph::reachable(self.cf_pred, call);
                for &n in &nodes {
                    let rank_after =
                        self.graph.nodes[n].temporal_rank > self.graph.nodes[call].temporal_rank;
                    if self.kind(n) == NodeKind::Assignment
                        && rank_after
                        && after[n]
                        && self.defs(n).iter().any(|&d| self.doc.is_state_variable(d))
                    {
                        c.add(
                            SubPattern::BalanceDeduction,
                            n,
                            self.describe(n, "state update after the call"),
                        );
                    }
                    if matches!(self.kind(n), NodeKind::Guard | NodeKind::Branch)
                        && n != call
                        && before[n]
                        && self.graph.nodes[n].temporal_rank < self.graph.nodes[call].temporal_rank
                        && self.checks_state(n)
                    {
                        c.add(
                            SubPattern::EnoughBalance,
                            n,
                            self.describe(n, "state comparison before the call"),
                        );
                    }
                }
            }
        }

        // timestamp
        for &n in &nodes {
            if self.kind(n) == NodeKind::TimestampRead {
                c.add(
                    SubPattern::TimestampInvocation,
                    n,
                    self.describe(n, "timestamp read"),
                );
            }
        }
        if base(c, SubPattern::TimestampInvocation) {
            let stamped = |n: usize| {
                self.exprs(n)
                    .iter()
                    .any(|e| contains_timestamp(self.doc, e))
            };
            let mut tainted: BTreeSet<usize> = BTreeSet::new();
            for &n in &nodes {
                if matches!(self.kind(n), NodeKind::Assignment | NodeKind::Declaration)
                    && !self.defs(n).is_empty()
                    && stamped(n)
                {
                    c.add(
                        SubPattern::TimestampAssign,
                        n,
                        self.describe(n, "timestamp-derived assignment"),
                    );
                    tainted.insert(n);
                }
            }
            let mut frontier: Vec<usize> = tainted.iter().copied().collect();
            let mut reached_control: BTreeSet<usize> = BTreeSet::new();
            while let Some(d) = frontier.pop() {
                for e in self
                    .graph
                    .out_edges(d)
                    .filter(|e| e.edge_type == EdgeType::DataFlow)
                {
                    let Some(user) = self.statement_of(e.dst) else {
                        continue;
                    };
                    if self.kind(user).is_control() {
                        reached_control.insert(user);
                    }
                    if !self.defs(user).is_empty() && tainted.insert(user) {
                        frontier.push(user);
                    }
                }
            }
            for &n in &nodes {
                if self.kind(n).is_control() && (stamped(n) || reached_control.contains(&n)) {
                    c.add(
                        SubPattern::TimestampContamination,
                        n,
                        self.describe(n, "condition depends on a timestamp"),
                    );
                }
            }
        }

        // infinite loop
        for &n in &nodes {
            if !self.kind(n).is_loop() {
                continue;
            }
            c.add(
                SubPattern::LoopStatement,
                n,
                self.describe(n, "loop construct"),
            );
            if self.loop_condition_stuck(n) {
                c.add(
                    SubPattern::LoopCondition,
                    n,
                    self.describe(n, "exit condition never changes"),
                );
            }
        }
        for &n in &nodes {
            if self.kind(n).is_call() && self.is_self_call(n) {
                let before = ContractGraph::reachable(self.cf_pred, n);
                let guarded = nodes
                    .iter()
                    .any(|&m| m != n && before[m] && self.kind(m).is_control());
                if !guarded {
                    c.add(
                        SubPattern::SelfInvocation,
                        n,
                        self.describe(n, "unguarded self invocation"),
                    );
                }
            }
        }
    }

    /// The statement-level graph node that owns node `n`.
    fn statement_of(&self, n: usize) -> Option<usize> {
        let kind = self.kind(n);
        if !kind.is_variable() && kind != NodeKind::TimestampRead && kind != NodeKind::UnknownRef {
            return Some(n);
        }
        let mut owner = self.cf_pred[n].first().copied()?;
        // occurrences inside nested calls belong to the statement that starts the chain
        while self.kind(owner).is_call()
            && self
                .ast(owner)
                .is_some_and(|a| node_type(a) == "FunctionCall")
        {
            owner = *self.cf_pred[owner].first()?;
        }
        Some(owner)
    }

    fn checks_state(&self, n: usize) -> bool {
        self.exprs(n).iter().any(|e| {
            let mut found = false;
            visit_comparisons(e, &mut |cmp| {
                let mut vars = BTreeSet::new();
                referenced_variables(self.doc, cmp, &mut vars);
                found |= vars.iter().any(|&d| self.doc.is_state_variable(d));
            });
            found
        })
    }

    fn loop_condition_stuck(&self, n: usize) -> bool {
        let Some(stmt) = self.ast(n) else {
            return false;
        };
        let cond = stmt.get("condition").filter(|c| c.is_object());
        let Some(cond) = cond else { return true };
        if is_true_literal(cond) {
            return true;
        }
        if contains_call_expr(self.doc, cond) {
            return false;
        }
        let mut vars = BTreeSet::new();
        referenced_variables(self.doc, cond, &mut vars);
        if vars.is_empty() {
            return true;
        }
        let mut written = Vec::new();
        for key in ["body", "loopExpression", "condition"] {
            if let Some(part) = stmt.get(key).filter(|p| p.is_object()) {
                collect_writes(self.doc, part, &mut written);
            }
        }
        !vars.iter().any(|v| written.contains(v))
    }

    fn is_self_call(&self, n: usize) -> bool {
        let Some(node) = self.ast(n) else {
            return false;
        };
        let call = if node_type(node) == "FunctionCall" {
            node
        } else {
            match node.get("expression") {
                Some(e) if node_type(e) == "FunctionCall" => e,
                _ => return false,
            }
        };
        let enclosing = self.doc.ancestor_where(self.graph.nodes[n].payload, |v| {
            matches!(node_type(v), "FunctionDefinition" | "ModifierDefinition")
        });
        let Some(func) = enclosing else { return false };
        let Some(callee) = call.get("expression") else {
            return false;
        };
        match node_type(callee) {
            "Identifier" | "MemberAccess" => {
                let target = callee.get("referencedDeclaration").and_then(Value::as_i64);
                if target == Some(func) {
                    return true;
                }
                node_type(callee) == "MemberAccess"
                    && crate::ast::str_field(callee, "memberName") == "delegatecall"
                    && callee.get("expression").is_some_and(is_this)
            }
            _ => false,
        }
    }
}

fn visit_comparisons(e: &Value, f: &mut dyn FnMut(&Value)) {
    if node_type(e) == "BinaryOperation"
        && matches!(
            crate::ast::str_field(e, "operator"),
            "<" | ">" | "<=" | ">=" | "==" | "!="
        )
    {
        f(e);
    }
    for c in crate::ast::all_children(e) {
        visit_comparisons(c, f);
    }
}

/// `this` or `address(this)`.
fn is_this(e: &Value) -> bool {
    match node_type(e) {
        "Identifier" => crate::ast::str_field(e, "name") == "this",
        "FunctionCall" => {
            crate::ast::str_field(e, "kind") == "typeConversion"
                && crate::ast::children(e, "arguments")
                    .first()
                    .is_some_and(|a| is_this(a))
        }
        _ => false,
    }
}

fn is_true_literal(e: &Value) -> bool {
    match node_type(e) {
        "Literal" => crate::ast::str_field(e, "value") == "true",
        "TupleExpression" => {
            let parts = crate::ast::children(e, "components");
            parts.len() == 1 && is_true_literal(parts[0])
        }
        _ => false,
    }
}

fn contains_call_expr(doc: &AstDocument, e: &Value) -> bool {
    call_kind(doc, e).is_some()
        || crate::ast::all_children(e)
            .into_iter()
            .any(|c| contains_call_expr(doc, c))
}

fn collect_writes(doc: &AstDocument, e: &Value, out: &mut Vec<i64>) {
    let mut defs = Vec::new();
    expression_defs(doc, e, &mut defs);
    out.extend(defs.into_iter().map(|d| d.0));
    collect_declarations(e, out);
}

fn collect_declarations(e: &Value, out: &mut Vec<i64>) {
    if node_type(e) == "VariableDeclarationStatement" {
        for d in crate::ast::children(e, "declarations") {
            if let Some(id) = crate::ast::id_of(d) {
                out.push(id);
            }
        }
    }
    for c in crate::ast::all_children(e) {
        collect_declarations(c, out);
    }
}
