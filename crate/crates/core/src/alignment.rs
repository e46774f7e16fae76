//! Cross-modal alignment of expert key nodes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::{ContractGraph, Modality};
use crate::patterns::{PatternAnnotation, SubPattern};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AlignError {
    #[error("contract id mismatch: `{0}` vs `{1}`")]
    ContractMismatch(String, String),
    #[error("pair ({source_node}, {bytecode_node}) references a node outside its graph")]
    DanglingPair {
        source_node: usize,
        bytecode_node: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AlignedPair {
    pub source_node: usize,
    pub bytecode_node: usize,
    pub sub_pattern: SubPattern,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnpairedNode {
    pub sub_pattern: SubPattern,
    /// Which argument the node came from.
    pub side: Modality,
    pub node: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentDictionary {
    pub contract_id: String,
    pub pairs: Vec<AlignedPair>,
    #[serde(default)]
    pub unpaired: Vec<UnpairedNode>,
}

impl AlignmentDictionary {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs restricted to the given sub-patterns.
    pub fn restricted(&self, keep: impl Fn(SubPattern) -> bool) -> AlignmentDictionary {
        AlignmentDictionary {
            contract_id: self.contract_id.clone(),
            pairs: self.pairs.iter().copied().filter(|p| keep(p.sub_pattern)).collect(),
            unpaired: self.unpaired.clone(),
        }
    }

    /// Swaps the roles of the two modalities.
    pub fn inverted(&self) -> AlignmentDictionary {
        let flip = |m| match m {
            Modality::Source => Modality::Bytecode,
            Modality::Bytecode => Modality::Source,
        };
        let mut pairs: Vec<_> = self
            .pairs
            .iter()
            .map(|p| AlignedPair {
                source_node: p.bytecode_node,
                bytecode_node: p.source_node,
                sub_pattern: p.sub_pattern,
            })
            .collect();
        pairs.sort();
        let mut unpaired: Vec<_> = self
            .unpaired
            .iter()
            .map(|u| UnpairedNode { side: flip(u.side), ..u.clone() })
            .collect();
        unpaired.sort();
        AlignmentDictionary { contract_id: self.contract_id.clone(), pairs, unpaired }
    }

    /// Checks that every pair indexes an existing node of each graph.
    pub fn check_against(
        &self,
        source: &ContractGraph,
        bytecode: &ContractGraph,
    ) -> Result<(), AlignError> {
        for p in &self.pairs {
            if p.source_node >= source.len() || p.bytecode_node >= bytecode.len() {
                return Err(AlignError::DanglingPair {
                    source_node: p.source_node,
                    bytecode_node: p.bytecode_node,
                });
            }
        }
        Ok(())
    }
}

/// Key nodes per sub-pattern, primary nodes first, each group in temporal order.
fn ordered_keys(ann: &[PatternAnnotation]) -> BTreeMap<SubPattern, Vec<usize>> {
    let mut primary: BTreeMap<SubPattern, Vec<usize>> = BTreeMap::new();
    let mut secondary: BTreeMap<SubPattern, Vec<usize>> = BTreeMap::new();
    for a in ann {
        for &n in &a.key_nodes {
            let bucket = if a.secondary_nodes.contains(&n) { &mut secondary } else { &mut primary };
            bucket.entry(a.sub_pattern).or_default().push(n);
        }
    }
    let mut out = BTreeMap::new();
    for p in SubPattern::ALL {
        let mut first = primary.remove(&p).unwrap_or_default();
        let mut second = secondary.remove(&p).unwrap_or_default();
        first.sort_unstable();
        first.dedup();
        second.sort_unstable();
        second.dedup();
        second.retain(|n| !first.contains(n));
        first.extend(second);
        if !first.is_empty() {
            out.insert(p, first);
        }
    }
    out
}

fn contract_of(ann: &[PatternAnnotation]) -> Result<Option<&str>, AlignError> {
    let mut id: Option<&str> = None;
    for a in ann {
        match id {
            None => id = Some(&a.contract_id),
            Some(prev) if prev != a.contract_id => {
                return Err(AlignError::ContractMismatch(prev.into(), a.contract_id.clone()))
            }
            _ => {}
        }
    }
    Ok(id)
}

/// Pairs the k-th source key node with the k-th bytecode key node of each
/// sub-pattern. Node ids are assigned in temporal-rank order in both graphs.
pub fn build_dictionary(
    src_ann: &[PatternAnnotation],
    byt_ann: &[PatternAnnotation],
) -> Result<AlignmentDictionary, AlignError> {
    let contract_id = match (contract_of(src_ann)?, contract_of(byt_ann)?) {
        (Some(a), Some(b)) if a != b => {
            return Err(AlignError::ContractMismatch(a.into(), b.into()))
        }
        (Some(a), _) | (None, Some(a)) => a.to_owned(),
        (None, None) => String::new(),
    };
    let src = ordered_keys(src_ann);
    let byt = ordered_keys(byt_ann);
    let mut dict = AlignmentDictionary { contract_id, ..Default::default() };
    for p in SubPattern::ALL {
        let s = src.get(&p).map(Vec::as_slice).unwrap_or(&[]);
        let b = byt.get(&p).map(Vec::as_slice).unwrap_or(&[]);
        let k = s.len().min(b.len());
        dict.pairs.extend(s.iter().zip(b).map(|(&source_node, &bytecode_node)| AlignedPair {
            source_node,
            bytecode_node,
            sub_pattern: p,
        }));
        for (nodes, side) in [(s, Modality::Source), (b, Modality::Bytecode)] {
            dict.unpaired.extend(
                nodes[k..].iter().map(|&node| UnpairedNode { sub_pattern: p, side, node }),
            );
        }
    }
    dict.pairs.sort();
    dict.unpaired.sort();
    Ok(dict)
}
