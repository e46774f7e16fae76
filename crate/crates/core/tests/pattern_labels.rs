mod common;

use common::{handcrafted_labels, load};

#[test]
fn handcrafted_corpus_matches_hand_labels() {
    let labels = handcrafted_labels();
    assert_eq!(labels.len(), 14);
    let mut mismatches = Vec::new();
    for (stem, want) in &labels {
        let fx = load("handcrafted", stem);
        let (src, byt) = (fx.source_fired(), fx.bytecode_fired());
        if src != want.source {
            mismatches.push(format!("{stem} source: got {src:?}, want {:?}", want.source));
        }
        if byt != want.bytecode {
            mismatches.push(format!("{stem} bytecode: got {byt:?}, want {:?}", want.bytecode));
        }
    }
    assert!(mismatches.is_empty(), "{}", mismatches.join("\n"));
}

#[test]
fn solc08_bank_source_patterns() {
    let fx = load("solc08", "vulnerable_bank");
    let src = fx.source_fired();
    assert!(src.contains(&exdos::patterns::SubPattern::CallValueInvocation));
    assert!(src.contains(&exdos::patterns::SubPattern::BalanceDeduction));
}

#[test]
fn fig1_alignment_pairs_call_and_update() {
    use exdos::alignment::build_dictionary;
    use exdos::graph::NodeKind;
    use exdos::patterns::{match_bytecode_patterns, match_source_patterns, SubPattern};

    let fx = load("handcrafted", "r1_vulnerable_bank");
    let src = match_source_patterns(&fx.csg, &fx.doc).unwrap();
    let byt = match_bytecode_patterns(&fx.cfg, &fx.blocks).unwrap();
    let dict = build_dictionary(&src, &byt).unwrap();
    dict.check_against(&fx.csg, &fx.cfg).unwrap();
    assert!(dict.len() >= 2);
    let pair = |p| dict.pairs.iter().find(|q| q.sub_pattern == p).unwrap();
    let call = pair(SubPattern::CallValueInvocation);
    assert_eq!(fx.csg.nodes[call.source_node].kind, NodeKind::ValueCall);
    assert!(fx.blocks[call.bytecode_node].contains("CALL"));
    let upd = pair(SubPattern::BalanceDeduction);
    assert_eq!(fx.csg.nodes[upd.source_node].kind, NodeKind::Assignment);
    assert!(fx.blocks[upd.bytecode_node].contains("SSTORE"));
    assert!(upd.bytecode_node > call.bytecode_node);
}
