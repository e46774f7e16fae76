#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use exdos::ast::{ingest_ast, AstDocument};
use exdos::cfg::build_cfg;
use exdos::csg::build_contract_csg;
use exdos::evm::{decode, segment_blocks, BasicBlock};
use exdos::graph::ContractGraph;
use exdos::patterns::{fired, match_bytecode_patterns, match_source_patterns, SubPattern};

pub fn fixture_dir(sub: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(sub)
}

pub fn read(sub: &str, name: &str) -> String {
    let p = fixture_dir(sub).join(name);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

pub struct Fixture {
    pub stem: String,
    pub doc: AstDocument,
    pub csg: ContractGraph,
    pub blocks: Vec<BasicBlock>,
    pub cfg: ContractGraph,
}

pub fn load(sub: &str, stem: &str) -> Fixture {
    let doc = ingest_ast(&read(sub, &format!("{stem}.ast.json"))).unwrap();
    let csg = build_contract_csg(&doc);
    let blocks = segment_blocks(&decode(read(sub, &format!("{stem}.bin")).trim()).unwrap());
    let cfg = build_cfg(&blocks, &doc.source_unit_id);
    Fixture { stem: stem.into(), doc, csg, blocks, cfg }
}

impl Fixture {
    pub fn source_fired(&self) -> BTreeSet<SubPattern> {
        fired(&match_source_patterns(&self.csg, &self.doc).unwrap())
    }

    pub fn bytecode_fired(&self) -> BTreeSet<SubPattern> {
        fired(&match_bytecode_patterns(&self.cfg, &self.blocks).unwrap())
    }
}

#[derive(serde::Deserialize)]
pub struct Label {
    pub source: BTreeSet<SubPattern>,
    pub bytecode: BTreeSet<SubPattern>,
}

pub fn handcrafted_labels() -> BTreeMap<String, Label> {
    serde_json::from_str(&read("handcrafted", "labels.json")).unwrap()
}
