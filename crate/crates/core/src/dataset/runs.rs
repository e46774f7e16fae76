//! The five-run protocol: independent splits, full training, test metrics.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate_scores, MeanMetrics, RunMetrics};
use super::{stratified_split, DatasetError, DatasetManifest, Split};
use crate::dagn::DagnParams;
use crate::tensor::Scalar;
use crate::train::{distill, finetune, pretrain_teacher, scores, student_init, LabeledGraph, PairedSample, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub runs: usize,
    pub ratios: [usize; 3],
    /// Run `r` splits with `split_seed + r` and trains with `train.seed + r`.
    pub split_seed: u64,
    pub threshold: f64,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig { runs: 5, ratios: [7, 1, 2], split_seed: 0, threshold: 0.5, train: TrainConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub split_seed: u64,
    pub train_seed: u64,
    pub metrics: RunMetrics,
    pub test_ids: Vec<String>,
    pub test_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiveRunReport {
    pub runs: Vec<RunRecord>,
    pub mean: MeanMetrics,
}

fn pick<'a, T>(ids: &[String], by_id: &HashMap<&str, &'a PairedSample<T>>) -> Result<Vec<&'a PairedSample<T>>, DatasetError> {
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| DatasetError::Manifest(format!("no sample for {id}")))
        })
        .collect()
}

/// Teacher, distillation and fine-tuning on `train`, each phase keeping its
/// best epoch on `val` (the last epoch when `val` is empty). The returned
/// student only ever sees bytecode at inference.
pub fn train_student<T: Scalar>(
    train: &[PairedSample<T>],
    val: &[PairedSample<T>],
    config: &TrainConfig,
) -> Result<DagnParams<T>, DatasetError> {
    let init = student_init(config);
    let student = if config.distills() {
        let sources = |set: &[PairedSample<T>]| set.iter().map(PairedSample::source_view).collect::<Vec<_>>();
        let (teacher, _) = pretrain_teacher(&sources(train), &sources(val), config)?;
        distill(&teacher, &init, train, val, config)?.0
    } else {
        init
    };
    let bytecode = |set: &[PairedSample<T>]| set.iter().map(PairedSample::bytecode_view).collect::<Vec<_>>();
    Ok(finetune(&student, &bytecode(train), &bytecode(val), config)?.0)
}

fn run_once<T: Scalar>(
    manifest: &DatasetManifest,
    by_id: &HashMap<&str, &PairedSample<T>>,
    config: &ExperimentConfig,
    run: usize,
) -> Result<RunRecord, DatasetError> {
    let split_seed = config.split_seed.wrapping_add(run as u64);
    let Split { train, val, test, .. } = stratified_split(manifest, config.ratios, split_seed)?;
    let mut train_cfg = config.train.clone();
    train_cfg.seed = config.train.seed.wrapping_add(run as u64);
    let train_set: Vec<PairedSample<T>> = pick(&train, by_id)?.into_iter().cloned().collect();
    let val_set: Vec<PairedSample<T>> = pick(&val, by_id)?.into_iter().cloned().collect();
    let student = train_student(&train_set, &val_set, &train_cfg)?;
    let test_set: Vec<LabeledGraph<T>> = pick(&test, by_id)?.into_iter().map(|s| s.bytecode_view()).collect();
    let s = scores(&student, &test_set)?;
    let labels: Vec<bool> = test_set.iter().map(|g| g.vulnerable).collect();
    Ok(RunRecord {
        run,
        split_seed,
        train_seed: train_cfg.seed,
        metrics: evaluate_scores(&s, &labels, config.threshold),
        test_ids: test,
        test_scores: s,
    })
}

/// Runs `config.runs` independent split/train/test cycles, concurrently on
/// the current rayon pool. Results do not depend on the thread count.
pub fn five_run_report<T: Scalar>(
    manifest: &DatasetManifest,
    samples: &[PairedSample<T>],
    config: &ExperimentConfig,
) -> Result<FiveRunReport, DatasetError> {
    config.train.validate()?;
    let by_id: HashMap<&str, &PairedSample<T>> = samples.iter().map(|s| (s.contract_id.as_str(), s)).collect();
    let runs = (0..config.runs)
        .into_par_iter()
        .map(|r| run_once(manifest, &by_id, config, r))
        .collect::<Result<Vec<_>, _>>()?;
    let metrics: Vec<RunMetrics> = runs.iter().map(|r| r.metrics.clone()).collect();
    Ok(FiveRunReport { mean: MeanMetrics::of(&metrics), runs })
}

fn csv_string(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w).expect("in-memory csv");
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

impl FiveRunReport {
    /// One row per run and a final `mean` row.
    pub fn metrics_csv(&self) -> String {
        csv_string(|w| {
            w.write_record(["run", "split_seed", "train_seed", "accuracy", "precision", "recall", "f1", "tp", "tn", "fp", "fn", "auc"])?;
            for r in &self.runs {
                let m = &r.metrics;
                w.write_record([
                    r.run.to_string(),
                    r.split_seed.to_string(),
                    r.train_seed.to_string(),
                    m.accuracy.to_string(),
                    m.precision.to_string(),
                    m.recall.to_string(),
                    m.f1.to_string(),
                    m.tp.to_string(),
                    m.tn.to_string(),
                    m.fp.to_string(),
                    m.fn_.to_string(),
                    m.auc.to_string(),
                ])?;
            }
            let m = &self.mean;
            w.write_record([
                "mean".to_string(),
                String::new(),
                String::new(),
                m.accuracy.to_string(),
                m.precision.to_string(),
                m.recall.to_string(),
                m.f1.to_string(),
                m.tp.to_string(),
                m.tn.to_string(),
                m.fp.to_string(),
                m.fn_.to_string(),
                m.auc.to_string(),
            ])
        })
    }

    /// ROC points of every run, for external plotting.
    pub fn roc_csv(&self) -> String {
        csv_string(|w| {
            w.write_record(["run", "fpr", "tpr", "threshold"])?;
            for r in &self.runs {
                for p in &r.metrics.roc_points {
                    w.write_record([r.run.to_string(), p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()])?;
                }
            }
            Ok(())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dagn::DagnConfig;
    use crate::dataset::{pair_from_texts, write_corpus, SynthSpec};
    use crate::evm::opcodes::shanghai;

    fn tiny() -> ExperimentConfig {
        let mut train = TrainConfig {
            teacher_epochs: 2,
            distill_epochs: 2,
            finetune_epochs: 2,
            batch_size: 8,
            ..Default::default()
        };
        train.model = DagnConfig { d: 8, d_r: 4, hidden: 8, ..DagnConfig::default() };
        ExperimentConfig { runs: 2, train, ..Default::default() }
    }

    #[test]
    fn report_is_deterministic_and_the_mean_row_recomputes() {
        let dir = tempfile::tempdir().unwrap();
        let contracts = crate::dataset::generate_synthetic_corpus(SynthSpec { per_vulnerability: 10, vulnerable_per_vulnerability: 5 }, 1);
        let contracts: Vec<_> = contracts.into_iter().filter(|c| c.vulnerability == crate::patterns::Vulnerability::Reentrancy).collect();
        let m = write_corpus(dir.path(), &contracts, 1).unwrap();
        let samples: Vec<PairedSample<f64>> = contracts
            .iter()
            .map(|c| pair_from_texts(&c.contract_id, &c.ast_json, &c.bytecode_hex, c.vulnerable, shanghai()).unwrap())
            .collect();
        let cfg = tiny();
        let a = five_run_report(&m, &samples, &cfg).unwrap();
        let b = five_run_report(&m, &samples, &cfg).unwrap();
        assert_eq!(a.metrics_csv(), b.metrics_csv());
        assert_eq!(a.runs.len(), 2);

        let text = a.metrics_csv();
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 3);
        let f1: Vec<f64> = rows[..2].iter().map(|r| r[6].parse().unwrap()).collect();
        let mean: f64 = rows[2][6].parse().unwrap();
        assert!((mean - (f1[0] + f1[1]) / 2.0).abs() < 1e-12);
        assert!(a.roc_csv().lines().count() > 2);
    }
}
