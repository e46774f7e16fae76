//! Initial node feature vectors for both graph modalities.
//!
//! Bytecode rows: opcode-category histogram (8), log block length (1),
//! terminator one-hot (8), SSTORE/SLOAD/CALL/TIMESTAMP bits (4), rank (1),
//! and one zero column. Source rows: node-kind one-hot (16), log in/out
//! degree (2), call/timestamp/comparison/assignment bits (4), rank (1).

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ast::{node_type, AstDocument};
use crate::csg::{contains_call, contains_comparison, contains_timestamp, expression_defs, own_expressions};
use crate::evm::{opcodes, BasicBlock, OpCategory, OpcodeTable, TerminatorKind};
use crate::graph::{ContractGraph, GraphError, Modality, NodeKind};

/// Shared feature width of both modalities.
pub const D_IN: usize = 23;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("node {node} references block {block}, but only {count} blocks were given")]
    MissingBlock { node: usize, block: i64, count: usize },
    #[error("cannot read embeddings: {0}")]
    Io(#[from] std::io::Error),
    #[error("embedding file line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("embedding file has no row for node {0}")]
    MissingRow(usize),
    #[error("embedding file line {line}: expected {expected} values, found {found}")]
    Dimension { line: usize, expected: usize, found: usize },
    #[error("embedding file declares {declared} rows but the graph has {nodes} nodes")]
    RowCount { declared: usize, nodes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFeatures {
    pub contract_id: String,
    pub modality: Modality,
    pub d_in: usize,
    pub matrix: Vec<Vec<f64>>,
}

impl NodeFeatures {
    pub fn rows(&self) -> usize {
        self.matrix.len()
    }

    /// Row-major copy of the matrix.
    pub fn flat(&self) -> Vec<f64> {
        self.matrix.iter().flatten().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.matrix.iter().flatten().all(|v| v.is_finite())
    }
}

fn rank_fraction(rank: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        (rank as f64 / (n - 1) as f64).min(1.0)
    }
}

pub fn block_features(block: &BasicBlock, rank: f64, table: &OpcodeTable) -> Vec<f64> {
    let mut row = vec![0.0; D_IN];
    let len = block.instructions.len().max(1) as f64;
    for ins in &block.instructions {
        row[table.get(ins.opcode).category.index()] += 1.0 / len;
    }
    let base = OpCategory::ALL.len();
    row[base] = (1.0 + block.instructions.len() as f64).ln();
    row[base + 1 + block.terminator_kind.index()] = 1.0;
    let flags = base + 1 + TerminatorKind::ALL.len();
    for (i, m) in ["SSTORE", "SLOAD", "CALL", "TIMESTAMP"].iter().enumerate() {
        if block.contains(m) {
            row[flags + i] = 1.0;
        }
    }
    row[flags + 4] = rank;
    row
}

pub fn featurize_bytecode(
    blocks: &[BasicBlock],
    graph: &ContractGraph,
) -> Result<NodeFeatures, FeatureError> {
    featurize_bytecode_with(blocks, graph, opcodes::shanghai())
}

pub fn featurize_bytecode_with(
    blocks: &[BasicBlock],
    graph: &ContractGraph,
    table: &OpcodeTable,
) -> Result<NodeFeatures, FeatureError> {
    graph.expect_modality(Modality::Bytecode)?;
    let n = graph.len();
    let matrix = graph
        .nodes
        .iter()
        .map(|node| {
            let block = usize::try_from(node.payload)
                .ok()
                .and_then(|i| blocks.get(i))
                .ok_or(FeatureError::MissingBlock {
                    node: node.id,
                    block: node.payload,
                    count: blocks.len(),
                })?;
            Ok(block_features(block, rank_fraction(node.temporal_rank, n), table))
        })
        .collect::<Result<_, FeatureError>>()?;
    Ok(NodeFeatures {
        contract_id: graph.contract_id.clone(),
        modality: Modality::Bytecode,
        d_in: D_IN,
        matrix,
    })
}

fn is_statement(v: &Value) -> bool {
    let t = node_type(v);
    t.ends_with("Statement") || matches!(t, "Return" | "Throw" | "Block" | "InlineAssembly")
}

/// Expressions a node stands for: a statement's own expressions, or the
/// expression node itself.
fn node_expressions(v: &Value) -> Vec<&Value> {
    if is_statement(v) {
        own_expressions(v)
    } else {
        vec![v]
    }
}

pub fn featurize_source(
    graph: &ContractGraph,
    doc: &AstDocument,
) -> Result<NodeFeatures, FeatureError> {
    graph.expect_modality(Modality::Source)?;
    let n = graph.len();
    let mut indeg = vec![0usize; n];
    let mut outdeg = vec![0usize; n];
    for e in &graph.edges {
        outdeg[e.src] += 1;
        indeg[e.dst] += 1;
    }
    let kinds = NodeKind::SOURCE_KINDS.len();
    let matrix = graph
        .nodes
        .iter()
        .map(|node| {
            let mut row = vec![0.0; D_IN];
            if let Some(k) = node.kind.source_index() {
                row[k] = 1.0;
            }
            row[kinds] = (1.0 + indeg[node.id] as f64).ln();
            row[kinds + 1] = (1.0 + outdeg[node.id] as f64).ln();
            let exprs = doc.node(node.payload).map(node_expressions).unwrap_or_default();
            let mut defs = Vec::new();
            for e in &exprs {
                expression_defs(doc, e, &mut defs);
            }
            let bits = [
                node.kind.is_call() || exprs.iter().any(|e| contains_call(doc, e)),
                node.kind == NodeKind::TimestampRead
                    || exprs.iter().any(|e| contains_timestamp(doc, e)),
                exprs.iter().any(|e| contains_comparison(e)),
                matches!(node.kind, NodeKind::Assignment | NodeKind::Declaration)
                    || !defs.is_empty(),
            ];
            for (i, b) in bits.into_iter().enumerate() {
                row[kinds + 2 + i] = if b { 1.0 } else { 0.0 };
            }
            row[kinds + 6] = rank_fraction(node.temporal_rank, n);
            row
        })
        .collect();
    Ok(NodeFeatures {
        contract_id: graph.contract_id.clone(),
        modality: Modality::Source,
        d_in: D_IN,
        matrix,
    })
}

#[derive(Deserialize)]
struct EmbeddingHeader {
    d_in: usize,
    count: usize,
}

/// Reads an external embedding file for `graph`. The first line is a JSON
/// header `{"d_in": .., "count": ..}`, followed by `node_id<TAB>v1,...,vd`.
pub fn import_embeddings(path: &Path, graph: &ContractGraph) -> Result<NodeFeatures, FeatureError> {
    parse_embeddings(&std::fs::read_to_string(path)?, graph)
}

pub fn parse_embeddings(text: &str, graph: &ContractGraph) -> Result<NodeFeatures, FeatureError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or(FeatureError::Format {
        line: 1,
        msg: "missing header".into(),
    })?;
    let header: EmbeddingHeader = serde_json::from_str(head).map_err(|e| FeatureError::Format {
        line: 1,
        msg: format!("bad header: {e}"),
    })?;
    if header.count != graph.len() {
        return Err(FeatureError::RowCount { declared: header.count, nodes: graph.len() });
    }
    let mut rows: HashMap<usize, Vec<f64>> = HashMap::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let bad = |msg: String| FeatureError::Format { line: line_no, msg };
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected `node_id<TAB>values`".into()))?;
        let id: usize = id.trim().parse().map_err(|_| bad(format!("bad node id `{id}`")))?;
        if id >= graph.len() {
            return Err(bad(format!("node id {id} out of range")));
        }
        let vec = values
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| bad(format!("bad value `{}`", v.trim())))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if vec.len() != header.d_in {
            return Err(FeatureError::Dimension {
                line: line_no,
                expected: header.d_in,
                found: vec.len(),
            });
        }
        if rows.insert(id, vec).is_some() {
            return Err(bad(format!("duplicate node id {id}")));
        }
    }
    let matrix = (0..graph.len())
        .map(|i| rows.remove(&i).ok_or(FeatureError::MissingRow(i)))
        .collect::<Result<_, _>>()?;
    Ok(NodeFeatures {
        contract_id: graph.contract_id.clone(),
        modality: graph.modality,
        d_in: header.d_in,
        matrix,
    })
}

/// Serializes features in the embedding file format.
pub fn write_embeddings(features: &NodeFeatures) -> String {
    let mut out = format!("{{\"d_in\":{},\"count\":{}}}\n", features.d_in, features.rows());
    for (i, row) in features.matrix.iter().enumerate() {
        let vals: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&format!("{i}\t{}\n", vals.join(",")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::ingest_ast;
    use crate::cfg::build_cfg;
    use crate::csg::build_csg;
    use crate::evm::{asm::assemble, decode_bytes, segment_blocks};
    use proptest::prelude::*;

    fn blocks_of(src: &str) -> Vec<BasicBlock> {
        segment_blocks(&decode_bytes(&assemble(src).unwrap(), opcodes::shanghai()))
    }

    fn bytecode(src: &str) -> NodeFeatures {
        let blocks = blocks_of(src);
        featurize_bytecode(&blocks, &build_cfg(&blocks, "c")).unwrap()
    }

    const TERM: usize = 9;
    const FLAGS: usize = 17;

    #[test]
    fn stop_block() {
        let f = bytecode("STOP");
        let row = &f.matrix[0];
        assert_eq!(row.len(), D_IN);
        assert_eq!(row[OpCategory::Other.index()], 1.0);
        assert_eq!(row[..8].iter().sum::<f64>(), 1.0);
        assert_eq!(row[8], 2f64.ln());
        assert_eq!(row[TERM + TerminatorKind::Stop.index()], 1.0);
        assert_eq!(row[TERM..FLAGS].iter().sum::<f64>(), 1.0);
        assert_eq!(row[D_IN - 1], 0.0);
    }

    #[test]
    fn sstore_bit() {
        let f = bytecode("SSTORE\nSTOP");
        assert_eq!(f.matrix[0][FLAGS], 1.0);
        assert_eq!(f.matrix[0][FLAGS + 1], 0.0);
        assert_eq!(f.matrix[0][OpCategory::Storage.index()], 0.5);
    }

    #[test]
    fn identical_blocks_differ_only_in_rank() {
        let f = bytecode("JUMPDEST\nSTOP\nJUMPDEST\nSTOP");
        assert_eq!(f.rows(), 2);
        let diff: Vec<usize> =
            (0..D_IN).filter(|&j| f.matrix[0][j] != f.matrix[1][j]).collect();
        assert_eq!(diff, [FLAGS + 4]);
        assert_eq!(f.matrix[1][FLAGS + 4], 1.0);
    }

    #[test]
    fn wrong_modality() {
        let doc = ingest_ast(include_str!("../tests/fixtures/handcrafted/r1_vulnerable_bank.ast.json")).unwrap();
        let g = build_csg(&doc, "withdraw").unwrap();
        assert!(featurize_bytecode(&[], &g).is_err());
        let blocks = blocks_of("STOP");
        assert!(featurize_source(&build_cfg(&blocks, "c"), &doc).is_err());
    }

    #[test]
    fn fig1_source_rows() {
        let doc = ingest_ast(include_str!("../tests/fixtures/handcrafted/r1_vulnerable_bank.ast.json")).unwrap();
        let g = build_csg(&doc, "withdraw").unwrap();
        let f = featurize_source(&g, &doc).unwrap();
        assert_eq!(f.rows(), g.len());
        for (node, row) in g.nodes.iter().zip(&f.matrix) {
            let k = node.kind.source_index().unwrap();
            assert_eq!(row[k], 1.0);
            assert_eq!(row[..16].iter().sum::<f64>(), 1.0);
        }
        let call = g.nodes.iter().find(|n| n.kind == NodeKind::ValueCall).unwrap();
        assert_eq!(f.matrix[call.id][18], 1.0);
        let guard = &f.matrix[0];
        assert_eq!(guard[20], 1.0, "require(balances >= amount) compares");
        let upd = g.nodes.iter().rfind(|n| n.kind == NodeKind::Assignment).unwrap();
        assert_eq!(f.matrix[upd.id][21], 1.0);
        assert_eq!(f.matrix[upd.id][18], 0.0);
    }

    #[test]
    fn embeddings_round_trip_and_errors() {
        let blocks = blocks_of("JUMPDEST\nSTOP\nJUMPDEST\nSTOP");
        let g = build_cfg(&blocks, "c");
        let f = featurize_bytecode(&blocks, &g).unwrap();
        let text = write_embeddings(&f);
        assert_eq!(parse_embeddings(&text, &g).unwrap(), f);

        let missing = "{\"d_in\":2,\"count\":2}\n0\t1,2\n";
        assert!(matches!(parse_embeddings(missing, &g), Err(FeatureError::MissingRow(1))));
        let short = "{\"d_in\":2,\"count\":2}\n0\t1,2\n1\t3\n";
        assert!(matches!(
            parse_embeddings(short, &g),
            Err(FeatureError::Dimension { expected: 2, found: 1, .. })
        ));
        let count = "{\"d_in\":2,\"count\":3}\n";
        assert!(matches!(parse_embeddings(count, &g), Err(FeatureError::RowCount { .. })));
    }

    proptest! {
        #[test]
        fn bytecode_rows_bounded(code in proptest::collection::vec(any::<u8>(), 1..300)) {
            let blocks = segment_blocks(&decode_bytes(&code, opcodes::shanghai()));
            let f = featurize_bytecode(&blocks, &build_cfg(&blocks, "c")).unwrap();
            let lmax = blocks.iter().map(|b| b.instructions.len()).max().unwrap_or(0);
            let hi = (1.0 + lmax as f64).ln().max(1.0);
            prop_assert_eq!(f.rows(), blocks.len());
            for row in &f.matrix {
                prop_assert!(row.iter().all(|&v| v.is_finite() && (-1.0..=hi + 1e-12).contains(&v)));
            }
            // permuting the block list permutes rows
            let mut rev = blocks.clone();
            rev.reverse();
            let g = build_cfg(&blocks, "c");
            for (i, node) in g.nodes.iter().enumerate() {
                let r = rank_fraction(node.temporal_rank, g.len());
                let row = block_features(&rev[blocks.len() - 1 - i], r, opcodes::shanghai());
                prop_assert_eq!(&row, &f.matrix[i]);
            }
        }
    }
}
