//! The typed-node/typed-edge graph shared by both modalities.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Ord, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Source,
    Bytecode,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Source => "source",
            Modality::Bytecode => "bytecode",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeType {
    Fallthrough,
    JumpUncond,
    JumpCondTrue,
    JumpCondFalse,
    ControlFlow,
    DataFlow,
}

impl EdgeType {
    /// Full relation vocabulary across both modalities, in relation-table order.
    pub const VOCAB: [EdgeType; 6] = [
        EdgeType::Fallthrough,
        EdgeType::JumpUncond,
        EdgeType::JumpCondTrue,
        EdgeType::JumpCondFalse,
        EdgeType::ControlFlow,
        EdgeType::DataFlow,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn modality(self) -> Modality {
        match self {
            EdgeType::ControlFlow | EdgeType::DataFlow => Modality::Source,
            _ => Modality::Bytecode,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeType::Fallthrough => "fallthrough",
            EdgeType::JumpUncond => "jump-uncond",
            EdgeType::JumpCondTrue => "jump-cond-true",
            EdgeType::JumpCondFalse => "jump-cond-false",
            EdgeType::ControlFlow => "control-flow",
            EdgeType::DataFlow => "data-flow",
        }
    }
}

/// Node kinds. Bytecode graphs only use `BasicBlock`; the remaining sixteen
/// form the capped source vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    BasicBlock,
    Statement,
    Assignment,
    Declaration,
    Branch,
    ForLoop,
    WhileLoop,
    Guard,
    Return,
    Emit,
    Call,
    ValueCall,
    StateVariable,
    LocalVariable,
    TimestampRead,
    LoopJump,
    UnknownRef,
}

impl NodeKind {
    pub const SOURCE_KINDS: [NodeKind; 16] = [
        NodeKind::Statement,
        NodeKind::Assignment,
        NodeKind::Declaration,
        NodeKind::Branch,
        NodeKind::ForLoop,
        NodeKind::WhileLoop,
        NodeKind::Guard,
        NodeKind::Return,
        NodeKind::Emit,
        NodeKind::Call,
        NodeKind::ValueCall,
        NodeKind::StateVariable,
        NodeKind::LocalVariable,
        NodeKind::TimestampRead,
        NodeKind::LoopJump,
        NodeKind::UnknownRef,
    ];

    /// Position in [`NodeKind::SOURCE_KINDS`]; `None` for basic blocks.
    pub fn source_index(self) -> Option<usize> {
        Self::SOURCE_KINDS.iter().position(|&k| k == self)
    }

    pub fn is_loop(self) -> bool {
        matches!(self, NodeKind::ForLoop | NodeKind::WhileLoop)
    }

    pub fn is_call(self) -> bool {
        matches!(self, NodeKind::Call | NodeKind::ValueCall)
    }

    /// Conditional control constructs.
    pub fn is_control(self) -> bool {
        matches!(
            self,
            NodeKind::Branch | NodeKind::ForLoop | NodeKind::WhileLoop | NodeKind::Guard
        )
    }

    pub fn is_variable(self) -> bool {
        matches!(self, NodeKind::StateVariable | NodeKind::LocalVariable)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: usize,
    pub kind: NodeKind,
    /// Basic-block id (bytecode) or AST node id (source).
    pub payload: i64,
    pub temporal_rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GraphEdge {
    pub src: usize,
    pub dst: usize,
    pub edge_type: EdgeType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractGraph {
    pub modality: Modality,
    pub contract_id: String,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
    /// Function spans of a source graph: each scope owns a contiguous id range.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scopes: Vec<GraphScope>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphScope {
    pub name: String,
    pub first_node: usize,
    pub node_count: usize,
}

impl GraphScope {
    pub fn nodes(&self) -> std::ops::Range<usize> {
        self.first_node..self.first_node + self.node_count
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("expected a {expected} graph, got {found}")]
    WrongModality { expected: Modality, found: Modality },
    #[error("invalid graph: {0}")]
    Invalid(String),
}

impl ContractGraph {
    pub fn new(modality: Modality, contract_id: impl Into<String>) -> Self {
        ContractGraph {
            modality,
            contract_id: contract_id.into(),
            nodes: Vec::new(),
            edges: Vec::new(),
            diagnostics: Vec::new(),
            scopes: Vec::new(),
        }
    }

    /// Node ranges to evaluate independently: the declared scopes, or the
    /// whole graph when none are recorded.
    pub fn scope_ranges(&self) -> Vec<std::ops::Range<usize>> {
        if self.scopes.is_empty() {
            vec![0..self.nodes.len()]
        } else {
            self.scopes.iter().map(GraphScope::nodes).collect()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn expect_modality(&self, expected: Modality) -> Result<(), GraphError> {
        if self.modality == expected {
            Ok(())
        } else {
            Err(GraphError::WrongModality {
                expected,
                found: self.modality,
            })
        }
    }

    pub fn out_edges(&self, node: usize) -> impl Iterator<Item = &GraphEdge> + '_ {
        self.edges.iter().filter(move |e| e.src == node)
    }

    pub fn in_edges(&self, node: usize) -> impl Iterator<Item = &GraphEdge> + '_ {
        self.edges.iter().filter(move |e| e.dst == node)
    }

    /// Adjacency lists over all edge types (or only those accepted by `keep`).
    pub fn adjacency(&self, keep: impl Fn(EdgeType) -> bool) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let mut succ = vec![Vec::new(); self.nodes.len()];
        let mut pred = vec![Vec::new(); self.nodes.len()];
        for e in self.edges.iter().filter(|e| keep(e.edge_type)) {
            if !succ[e.src].contains(&e.dst) {
                succ[e.src].push(e.dst);
            }
            if !pred[e.dst].contains(&e.src) {
                pred[e.dst].push(e.src);
            }
        }
        (succ, pred)
    }

    /// Checks dense ids, endpoint validity and the edge vocabulary.
    pub fn validate(&self) -> Result<(), GraphError> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return Err(GraphError::Invalid(format!("node {i} carries id {}", n.id)));
            }
            let ok = match self.modality {
                Modality::Bytecode => n.kind == NodeKind::BasicBlock,
                Modality::Source => n.kind != NodeKind::BasicBlock,
            };
            if !ok {
                return Err(GraphError::Invalid(format!(
                    "node {i} kind {:?} not allowed in {} graph",
                    n.kind, self.modality
                )));
            }
        }
        let mut ranks: Vec<usize> = self.nodes.iter().map(|n| n.temporal_rank).collect();
        ranks.sort_unstable();
        ranks.dedup();
        if ranks.len() != self.nodes.len() {
            return Err(GraphError::Invalid(
                "temporal ranks are not distinct".into(),
            ));
        }
        for e in &self.edges {
            if e.src >= self.nodes.len() || e.dst >= self.nodes.len() {
                return Err(GraphError::Invalid(format!(
                    "edge {}->{} out of range",
                    e.src, e.dst
                )));
            }
            if e.edge_type.modality() != self.modality {
                return Err(GraphError::Invalid(format!(
                    "edge type {} not in {} vocabulary",
                    e.edge_type.name(),
                    self.modality
                )));
            }
        }
        let mut next = 0;
        for sc in &self.scopes {
            if sc.first_node != next {
                return Err(GraphError::Invalid(format!(
                    "scope `{}` is not contiguous",
                    sc.name
                )));
            }
            next += sc.node_count;
        }
        if !self.scopes.is_empty() && next != self.nodes.len() {
            return Err(GraphError::Invalid("scopes do not cover every node".into()));
        }
        Ok(())
    }

    /// Nodes reachable from `start` within `1..=radius` hops along `adj`.
    pub fn within_hops(adj: &[Vec<usize>], start: usize, radius: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; adj.len()];
        let mut queue = VecDeque::new();
        let mut out = Vec::new();
        dist[start] = 0;
        queue.push_back(start);
        while let Some(n) = queue.pop_front() {
            if dist[n] == radius {
                continue;
            }
            for &m in &adj[n] {
                if dist[m] == usize::MAX {
                    dist[m] = dist[n] + 1;
                    out.push(m);
                    queue.push_back(m);
                } else if m == start && !out.contains(&start) {
                    out.push(start);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// All nodes reachable from `start` (inclusive) along `adj`.
    pub fn reachable(adj: &[Vec<usize>], start: usize) -> Vec<bool> {
        let mut seen = vec![false; adj.len()];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(n) = stack.pop() {
            for &m in &adj[n] {
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        seen
    }

    /// Weakly connected components, each sorted by node id.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let (succ, pred) = self.adjacency(|_| true);
        let mut comp = vec![usize::MAX; self.nodes.len()];
        let mut out = Vec::new();
        for start in 0..self.nodes.len() {
            if comp[start] != usize::MAX {
                continue;
            }
            let idx = out.len();
            let mut members = vec![start];
            comp[start] = idx;
            let mut stack = vec![start];
            while let Some(n) = stack.pop() {
                for &m in succ[n].iter().chain(pred[n].iter()) {
                    if comp[m] == usize::MAX {
                        comp[m] = idx;
                        members.push(m);
                        stack.push(m);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let g: ContractGraph =
            serde_json::from_str(text).map_err(|e| GraphError::Invalid(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> Vec<Vec<usize>> {
        (0..n)
            .map(|i| if i + 1 < n { vec![i + 1] } else { vec![] })
            .collect()
    }

    #[test]
    fn hops_respect_radius() {
        let adj = chain(5);
        assert_eq!(ContractGraph::within_hops(&adj, 0, 2), vec![1, 2]);
        assert_eq!(ContractGraph::within_hops(&adj, 3, 5), vec![4]);
        assert!(ContractGraph::within_hops(&adj, 4, 3).is_empty());
    }

    #[test]
    fn self_loop_is_its_own_successor() {
        let adj = vec![vec![0]];
        assert_eq!(ContractGraph::within_hops(&adj, 0, 1), vec![0]);
    }

    #[test]
    fn edge_vocab_is_checked() {
        let mut g = ContractGraph::new(Modality::Bytecode, "c");
        g.nodes.push(GraphNode {
            id: 0,
            kind: NodeKind::BasicBlock,
            payload: 0,
            temporal_rank: 0,
        });
        g.edges.push(GraphEdge {
            src: 0,
            dst: 0,
            edge_type: EdgeType::DataFlow,
        });
        assert!(g.validate().is_err());
        g.edges[0].edge_type = EdgeType::JumpUncond;
        assert!(g.validate().is_ok());
    }

    #[test]
    fn json_schema_field_names() {
        let mut g = ContractGraph::new(Modality::Source, "c");
        g.nodes.push(GraphNode {
            id: 0,
            kind: NodeKind::ValueCall,
            payload: 17,
            temporal_rank: 0,
        });
        let v: serde_json::Value = serde_json::from_str(&g.to_json()).unwrap();
        assert_eq!(v["modality"], "source");
        assert_eq!(v["nodes"][0]["kind"], "value-call");
        assert_eq!(v["nodes"][0]["temporal_rank"], 0);
        assert!(v["edges"].as_array().unwrap().is_empty());
        assert!(v["diagnostics"].as_array().unwrap().is_empty());
    }
}
