//! Corpus handling: manifests, synthetic generation, splits and metrics.

pub mod metrics;
pub mod runs;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{build_dictionary, AlignError};
use crate::ast::{ingest_ast, AstError};
use crate::cfg::build_cfg;
use crate::csg::build_contract_csg;
use crate::dagn::{DagnError, GraphInput};
use crate::evm::{decode_with, segment_blocks, DecodeOptions, DisasmError, OpcodeTable};
use crate::features::{featurize_bytecode_with, featurize_source, FeatureError};
use crate::graph::GraphError;
use crate::patterns::{match_bytecode_patterns, match_source_patterns, Vulnerability};
use crate::tensor::Scalar;
use crate::train::{PairedSample, TrainError};

pub use metrics::{evaluate, evaluate_scores, roc_auc, MeanMetrics, RocPoint, RunMetrics};
pub use runs::{five_run_report, ExperimentConfig, FiveRunReport};
pub use synth::{generate_contract, generate_synthetic_corpus, SynthContract, SynthSpec};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{contract}: {source}")]
    Contract { contract: String, source: Box<DatasetError> },
    #[error(transparent)]
    Ast(#[from] AstError),
    #[error(transparent)]
    Disasm(#[from] DisasmError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Model(#[from] DagnError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl DatasetError {
    /// True when the underlying cause is a non-finite value during training.
    pub fn is_numeric(&self) -> bool {
        match self {
            DatasetError::Train(e) => e.is_numeric(),
            DatasetError::Contract { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Vulnerable,
    Normal,
}

impl Label {
    pub fn is_vulnerable(self) -> bool {
        self == Label::Vulnerable
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub contract_id: String,
    pub bytecode_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ast_path: Option<PathBuf>,
    pub vulnerability: Vulnerability,
    pub label: Label,
}

/// Labeled contract inventory. Relative paths resolve against `root`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    #[serde(default)]
    pub notes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Io { path: path.to_path_buf(), message: e.to_string() }
}

impl DatasetManifest {
    pub fn from_json(text: &str, root: impl Into<PathBuf>) -> Result<Self, DatasetError> {
        let mut m: DatasetManifest =
            serde_json::from_str(text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
        m.root = root.into();
        Ok(m)
    }

    /// Reads and validates a manifest file.
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::from_json(&text, root)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Unique ids, existing files, and one vulnerability subset per contract.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen: BTreeMap<&str, Vulnerability> = BTreeMap::new();
        for e in &self.entries {
            if e.contract_id.is_empty() {
                return Err(DatasetError::Manifest("empty contract_id".into()));
            }
            if let Some(prev) = seen.insert(&e.contract_id, e.vulnerability) {
                let what = if prev == e.vulnerability { "duplicate contract_id" } else { "contract in two vulnerability subsets" };
                return Err(DatasetError::Manifest(format!("{what}: {}", e.contract_id)));
            }
            let paths = std::iter::once(&e.bytecode_path).chain(e.ast_path.as_ref());
            for p in paths {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(DatasetError::Manifest(format!(
                        "{}: missing file {}",
                        e.contract_id,
                        full.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn subset(&self, v: Vulnerability) -> DatasetManifest {
        DatasetManifest {
            notes: self.notes.clone(),
            entries: self.entries.iter().filter(|e| e.vulnerability == v).cloned().collect(),
            root: self.root.clone(),
        }
    }

    /// The entries named by `ids`, in manifest order; unknown ids are an error.
    pub fn select(&self, ids: &[String]) -> Result<DatasetManifest, DatasetError> {
        let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        let entries: Vec<ManifestEntry> =
            self.entries.iter().filter(|e| wanted.contains(e.contract_id.as_str())).cloned().collect();
        if entries.len() != wanted.len() {
            let known: BTreeSet<&str> = self.entries.iter().map(|e| e.contract_id.as_str()).collect();
            let missing = wanted.difference(&known).next().copied().unwrap_or_default();
            return Err(DatasetError::Manifest(format!("split names unknown contract {missing}")));
        }
        Ok(DatasetManifest { notes: self.notes.clone(), entries, root: self.root.clone() })
    }

    pub fn vulnerabilities(&self) -> BTreeSet<Vulnerability> {
        self.entries.iter().map(|e| e.vulnerability).collect()
    }
}

/// Writes each contract as `<vuln>/<id>.bin`, `.ast.json` and `.sol` below
/// `dir`, plus `manifest.json`.
pub fn write_corpus(dir: &Path, contracts: &[SynthContract], seed: u64) -> Result<DatasetManifest, DatasetError> {
    let mut entries = Vec::with_capacity(contracts.len());
    for c in contracts {
        let sub = PathBuf::from(c.vulnerability.name());
        std::fs::create_dir_all(dir.join(&sub)).map_err(|e| io_err(&dir.join(&sub), e))?;
        let bin = sub.join(format!("{}.bin", c.contract_id));
        let ast = sub.join(format!("{}.ast.json", c.contract_id));
        let sol = sub.join(format!("{}.sol", c.contract_id));
        for (p, body) in [(&bin, &c.bytecode_hex), (&ast, &c.ast_json), (&sol, &c.solidity)] {
            std::fs::write(dir.join(p), body).map_err(|e| io_err(&dir.join(p), e))?;
        }
        entries.push(ManifestEntry {
            contract_id: c.contract_id.clone(),
            bytecode_path: bin,
            ast_path: Some(ast),
            vulnerability: c.vulnerability,
            label: if c.vulnerable { Label::Vulnerable } else { Label::Normal },
        });
    }
    let manifest = DatasetManifest {
        notes: vec![format!("synthetic corpus, seed {seed}, {} contracts", contracts.len())],
        entries,
        root: dir.to_path_buf(),
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, manifest.to_json()).map_err(|e| io_err(&path, e))?;
    Ok(manifest)
}

/// Source and bytecode graphs, features and alignment of one contract.
pub fn pair_from_texts<T: Scalar>(
    contract_id: &str,
    ast_json: &str,
    bytecode_hex: &str,
    vulnerable: bool,
    table: &OpcodeTable,
) -> Result<PairedSample<T>, DatasetError> {
    let inner = || -> Result<PairedSample<T>, DatasetError> {
        let doc = ingest_ast(ast_json)?;
        let mut csg = build_contract_csg(&doc);
        csg.contract_id = contract_id.to_owned();
        let src_ann = match_source_patterns(&csg, &doc)?;
        let src_feats = featurize_source(&csg, &doc)?;

        let ins = decode_with(bytecode_hex, &DecodeOptions { table, ..Default::default() })?;
        let blocks = segment_blocks(&ins);
        let cfg = build_cfg(&blocks, contract_id);
        let byt_ann = match_bytecode_patterns(&cfg, &blocks)?;
        let byt_feats = featurize_bytecode_with(&blocks, &cfg, table)?;

        let dict = build_dictionary(&src_ann, &byt_ann)?;
        dict.check_against(&csg, &cfg)?;
        let source = GraphInput::new(&csg, &src_feats)?;
        let bytecode = GraphInput::new(&cfg, &byt_feats)?;
        Ok(PairedSample::new(contract_id, source, bytecode, dict, vulnerable)?)
    };
    inner().map_err(|e| DatasetError::Contract { contract: contract_id.to_owned(), source: Box::new(e) })
}

/// Builds paired samples for every manifest entry, in manifest order.
/// Contracts are processed concurrently on the current rayon pool.
pub fn load_samples<T: Scalar>(
    manifest: &DatasetManifest,
    table: &OpcodeTable,
) -> Result<Vec<PairedSample<T>>, DatasetError> {
    manifest
        .entries
        .par_iter()
        .map(|e| {
            let ast_path = e.ast_path.as_ref().ok_or_else(|| {
                DatasetError::Manifest(format!("{}: training needs ast_path", e.contract_id))
            })?;
            let read = |p: &Path| {
                let full = manifest.resolve(p);
                std::fs::read_to_string(&full).map_err(|err| io_err(&full, err))
            };
            let ast = read(ast_path)?;
            let hex = read(&e.bytecode_path)?;
            pair_from_texts(&e.contract_id, &ast, hex.trim(), e.label.is_vulnerable(), table)
        })
        .collect()
}

/// Contract ids per partition.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Largest-remainder apportionment of `n` items by `ratios`.
fn apportion(n: usize, ratios: [usize; 3]) -> [usize; 3] {
    let total: usize = ratios.iter().sum();
    let mut counts = ratios.map(|r| n * r / total);
    let mut rem: Vec<(usize, usize)> = (0..3).map(|i| (n * ratios[i] % total, i)).collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let assigned: usize = counts.iter().sum();
    for &(_, i) in rem.iter().take(n - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Shuffles each (vulnerability, label) stratum with `seed` and cuts it by
/// `ratios`. Each partition lists ids in manifest order.
pub fn stratified_split(manifest: &DatasetManifest, ratios: [usize; 3], seed: u64) -> Result<Split, DatasetError> {
    if ratios.iter().sum::<usize>() == 0 {
        return Err(DatasetError::Manifest("split ratios sum to zero".into()));
    }
    let mut strata: BTreeMap<(Vulnerability, Label), Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        strata.entry((e.vulnerability, e.label)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut part = vec![0u8; manifest.entries.len()];
    for idx in strata.values_mut() {
        idx.shuffle(&mut rng);
        let [a, b, _] = apportion(idx.len(), ratios);
        for (k, &i) in idx.iter().enumerate() {
            part[i] = if k < a { 0 } else if k < a + b { 1 } else { 2 };
        }
    }
    let mut split = Split { seed, ..Default::default() };
    for (e, p) in manifest.entries.iter().zip(part) {
        let dst = match p {
            0 => &mut split.train,
            1 => &mut split.val,
            _ => &mut split.test,
        };
        dst.push(e.contract_id.clone());
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn manifest(pos: usize, neg: usize) -> DatasetManifest {
        let mut entries = Vec::new();
        for i in 0..pos + neg {
            entries.push(ManifestEntry {
                contract_id: format!("c{i}"),
                bytecode_path: format!("c{i}.bin").into(),
                ast_path: None,
                vulnerability: Vulnerability::Reentrancy,
                label: if i < pos { Label::Vulnerable } else { Label::Normal },
            });
        }
        DatasetManifest { notes: vec![], entries, root: PathBuf::new() }
    }

    fn count(m: &DatasetManifest, ids: &[String], label: Label) -> usize {
        ids.iter()
            .filter(|id| m.entries.iter().any(|e| &e.contract_id == *id && e.label == label))
            .count()
    }

    #[test]
    fn ten_and_ten_split_seven_one_two() {
        let m = manifest(10, 10);
        let s = stratified_split(&m, [7, 1, 2], 4).unwrap();
        for label in [Label::Vulnerable, Label::Normal] {
            assert_eq!(count(&m, &s.train, label), 7);
            assert_eq!(count(&m, &s.val, label), 1);
            assert_eq!(count(&m, &s.test, label), 2);
        }
    }

    #[test]
    fn seed_changes_membership_not_sizes() {
        let m = manifest(30, 30);
        let a = stratified_split(&m, [7, 1, 2], 1).unwrap();
        let b = stratified_split(&m, [7, 1, 2], 2).unwrap();
        assert_eq!(stratified_split(&m, [7, 1, 2], 1).unwrap(), a);
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (b.train.len(), b.val.len(), b.test.len()));
        assert_ne!(a.test, b.test);
    }

    #[test]
    fn select_keeps_manifest_order_and_rejects_unknown_ids() {
        let m = manifest(3, 3);
        let s = m.select(&["c4".into(), "c1".into()]).unwrap();
        let ids: Vec<&str> = s.entries.iter().map(|e| e.contract_id.as_str()).collect();
        assert_eq!(ids, ["c1", "c4"]);
        assert!(m.select(&["c9".into()]).is_err());
    }

    #[test]
    fn manifest_rejects_cross_subset_ids_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("c0.bin"), "0x00").unwrap();
        let mut m = manifest(1, 0);
        m.root = dir.path().to_path_buf();
        m.validate().unwrap();
        let mut dup = m.entries[0].clone();
        dup.vulnerability = Vulnerability::Timestamp;
        m.entries.push(dup);
        assert!(matches!(m.validate(), Err(DatasetError::Manifest(msg)) if msg.contains("two vulnerability")));
        let mut missing = manifest(2, 0);
        missing.root = dir.path().to_path_buf();
        assert!(missing.validate().is_err());
    }

    #[test]
    fn synthetic_corpus_round_trips_through_a_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let contracts = generate_synthetic_corpus(SynthSpec { per_vulnerability: 4, vulnerable_per_vulnerability: 2 }, 9);
        write_corpus(dir.path(), &contracts, 9).unwrap();
        let m = DatasetManifest::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(m.entries.len(), 12);
        let samples = load_samples::<f64>(&m, crate::evm::opcodes::shanghai()).unwrap();
        assert_eq!(samples.len(), 12);
        assert!(samples.iter().any(|s| !s.alignment.is_empty()));
        assert_eq!(m.subset(Vulnerability::Timestamp).entries.len(), 4);
    }

    proptest! {
        #[test]
        fn split_is_a_partition_with_proportional_strata(pos in 0usize..40, neg in 0usize..40, seed: u64) {
            let m = manifest(pos, neg);
            let s = stratified_split(&m, [7, 1, 2], seed).unwrap();
            let mut all: Vec<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), pos + neg);
            for (label, n) in [(Label::Vulnerable, pos), (Label::Normal, neg)] {
                for (ids, r) in [(&s.train, 0.7), (&s.val, 0.1), (&s.test, 0.2)] {
                    let got = count(&m, ids, label) as f64;
                    prop_assert!((got - n as f64 * r).abs() <= 1.0, "{got} vs {}", n as f64 * r);
                }
            }
        }
    }
}
