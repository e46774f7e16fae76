//! Control flow graph over basic blocks.

use std::collections::HashMap;

use crate::evm::{BasicBlock, TerminatorKind};
use crate::graph::{ContractGraph, EdgeType, GraphEdge, GraphError, GraphNode, Modality, NodeKind};

/// Builds the bytecode CFG. Jump targets are resolved only when a PUSH
/// immediately precedes the JUMP/JUMPI; everything else is diagnosed.
pub fn build_cfg(blocks: &[BasicBlock], contract_id: &str) -> ContractGraph {
    let mut graph = ContractGraph::new(Modality::Bytecode, contract_id);
    let by_offset: HashMap<usize, usize> = blocks.iter().map(|b| (b.start_offset, b.id)).collect();

    for (i, block) in blocks.iter().enumerate() {
        graph.nodes.push(GraphNode {
            id: i,
            kind: NodeKind::BasicBlock,
            payload: block.id as i64,
            temporal_rank: i,
        });
    }

    for (i, block) in blocks.iter().enumerate() {
        let next = (i + 1 < blocks.len()).then_some(i + 1);
        match block.terminator_kind {
            TerminatorKind::Jump | TerminatorKind::Jumpi => {
                let kind = if block.terminator_kind == TerminatorKind::Jump {
                    EdgeType::JumpUncond
                } else {
                    EdgeType::JumpCondTrue
                };
                match resolve_target(block, blocks, &by_offset) {
                    Ok(dst) => graph.edges.push(GraphEdge {
                        src: i,
                        dst,
                        edge_type: kind,
                    }),
                    Err(msg) => graph.diagnostics.push(msg),
                }
                if block.terminator_kind == TerminatorKind::Jumpi {
                    if let Some(n) = next {
                        graph.edges.push(GraphEdge {
                            src: i,
                            dst: n,
                            edge_type: EdgeType::JumpCondFalse,
                        });
                    }
                }
            }
            TerminatorKind::Fallthrough => {
                if let Some(n) = next {
                    graph.edges.push(GraphEdge {
                        src: i,
                        dst: n,
                        edge_type: EdgeType::Fallthrough,
                    });
                }
            }
            _ => {}
        }
    }
    graph
}

fn resolve_target(
    block: &BasicBlock,
    blocks: &[BasicBlock],
    by_offset: &HashMap<usize, usize>,
) -> Result<usize, String> {
    let jump = block.last();
    let n = block.instructions.len();
    let pushed = (n >= 2)
        .then(|| &block.instructions[n - 2])
        .filter(|ins| ins.is_push());
    let Some(push) = pushed else {
        return Err(format!(
            "block {} @0x{:04x}: {} target is not a constant",
            block.id, jump.offset, jump.mnemonic
        ));
    };
    let Some(target) = push.push_value() else {
        return Err(format!(
            "block {} @0x{:04x}: {} target exceeds the address range",
            block.id, jump.offset, jump.mnemonic
        ));
    };
    match by_offset.get(&target) {
        Some(&dst) if blocks[dst].starts_with_jumpdest() => Ok(dst),
        _ => Err(format!(
            "block {} @0x{:04x}: {} target 0x{:04x} is not a JUMPDEST",
            block.id, jump.offset, jump.mnemonic, target
        )),
    }
}

/// True when the edge goes to a block laid out at or before its source.
pub fn is_backward_jump(edge: &GraphEdge, graph: &ContractGraph) -> Result<bool, GraphError> {
    graph.expect_modality(Modality::Bytecode)?;
    let rank = |id: usize| {
        graph
            .nodes
            .get(id)
            .map(|n| n.temporal_rank)
            .ok_or_else(|| GraphError::Invalid(format!("edge endpoint {id} out of range")))
    };
    Ok(rank(edge.dst)? <= rank(edge.src)?)
}

/// Structural checks every CFG should satisfy.
pub fn check_cfg(graph: &ContractGraph, blocks: &[BasicBlock]) -> Result<(), String> {
    graph.validate().map_err(|e| e.to_string())?;
    if graph.nodes.len() != blocks.len() {
        return Err("node count differs from block count".into());
    }
    for e in &graph.edges {
        if matches!(e.edge_type, EdgeType::JumpUncond | EdgeType::JumpCondTrue)
            && !blocks[e.dst].starts_with_jumpdest()
        {
            return Err(format!(
                "jump edge {}->{} lands off a JUMPDEST",
                e.src, e.dst
            ));
        }
    }
    for (i, b) in blocks.iter().enumerate() {
        let out: Vec<&GraphEdge> = graph.out_edges(i).collect();
        let ok = match b.terminator_kind {
            TerminatorKind::Jump => out.len() <= 1,
            TerminatorKind::Jumpi => {
                out.len() <= 2 && (out.len() < 2 || out[0].edge_type != out[1].edge_type)
            }
            TerminatorKind::Fallthrough => out.len() <= 1,
            _ => out.is_empty(),
        };
        if !ok {
            return Err(format!(
                "block {i} ({:?}) has {} out-edges",
                b.terminator_kind,
                out.len()
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evm::{asm::assemble, decode_bytes, opcodes, segment_blocks};

    fn cfg_of(src: &str) -> (Vec<BasicBlock>, ContractGraph) {
        let code = assemble(src).unwrap();
        let blocks = segment_blocks(&decode_bytes(&code, opcodes::shanghai()));
        let g = build_cfg(&blocks, "t");
        (blocks, g)
    }

    #[test]
    fn single_static_jump() {
        let (blocks, g) = cfg_of("PUSH1 0x03 JUMP JUMPDEST STOP");
        assert_eq!(blocks.len(), 2);
        assert_eq!(
            g.edges,
            vec![GraphEdge {
                src: 0,
                dst: 1,
                edge_type: EdgeType::JumpUncond
            }]
        );
        assert!(g.diagnostics.is_empty());
        check_cfg(&g, &blocks).unwrap();
    }

    #[test]
    fn jumpi_at_code_end_has_no_false_edge() {
        let (_, g) = cfg_of("top: JUMPDEST PUSH1 0x01 @top JUMPI");
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[0].edge_type, EdgeType::JumpCondTrue);
        assert!(is_backward_jump(&g.edges[0], &g).unwrap());
    }

    #[test]
    fn jumpi_gets_both_edges() {
        let (blocks, g) = cfg_of("PUSH1 0x01 @yes JUMPI STOP yes: JUMPDEST STOP");
        assert_eq!(g.edges.len(), 2);
        assert_eq!(
            g.edges[0],
            GraphEdge {
                src: 0,
                dst: 2,
                edge_type: EdgeType::JumpCondTrue
            }
        );
        assert_eq!(
            g.edges[1],
            GraphEdge {
                src: 0,
                dst: 1,
                edge_type: EdgeType::JumpCondFalse
            }
        );
        assert!(!is_backward_jump(&g.edges[0], &g).unwrap());
        check_cfg(&g, &blocks).unwrap();
    }

    #[test]
    fn dynamic_and_bad_targets_are_diagnosed() {
        let (_, g) = cfg_of("CALLDATALOAD JUMP JUMPDEST STOP");
        assert!(g.edges.is_empty());
        assert_eq!(g.diagnostics.len(), 1);
        assert!(g.diagnostics[0].contains("not a constant"));

        let (_, g) = cfg_of("PUSH1 0x04 JUMP STOP STOP");
        assert!(g.edges.is_empty());
        assert!(g.diagnostics[0].contains("not a JUMPDEST"));
    }

    #[test]
    fn fallthrough_into_jumpdest() {
        let (_, g) = cfg_of("PUSH1 0x00 JUMPDEST STOP");
        assert_eq!(
            g.edges,
            vec![GraphEdge {
                src: 0,
                dst: 1,
                edge_type: EdgeType::Fallthrough
            }]
        );
        assert!(!is_backward_jump(&g.edges[0], &g).unwrap());
    }

    #[test]
    fn self_loop_is_backward() {
        let (_, g) = cfg_of("top: JUMPDEST @top JUMP");
        assert_eq!(g.edges.len(), 1);
        assert_eq!((g.edges[0].src, g.edges[0].dst), (0, 0));
        assert!(is_backward_jump(&g.edges[0], &g).unwrap());
    }

    #[test]
    fn backward_check_rejects_source_graphs() {
        let g = ContractGraph::new(Modality::Source, "s");
        let e = GraphEdge {
            src: 0,
            dst: 0,
            edge_type: EdgeType::ControlFlow,
        };
        assert!(matches!(
            is_backward_jump(&e, &g),
            Err(GraphError::WrongModality { .. })
        ));
    }
}
