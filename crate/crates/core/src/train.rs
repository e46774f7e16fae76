//! Teacher pretraining, dual-focus distillation, fine-tuning and detection.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::AlignmentDictionary;
use crate::autodiff::{AutodiffError, Tape, Var};
use crate::cfg::build_cfg;
use crate::dagn::{Bound, DagnConfig, DagnError, DagnParams, GraphInput, ParamGroup};
use crate::evm::{decode_with, segment_blocks, DecodeOptions, DisasmError, OpcodeTable};
use crate::features::{featurize_bytecode_with, FeatureError};
use crate::patterns::{match_bytecode_patterns, SubPattern};
use crate::tensor::{Matrix, Scalar};

pub const LEARNING_RATES: [f64; 4] = [1e-4, 5e-4, 1e-3, 5e-3];

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("teacher d = {teacher} but student d = {student}")]
    DimMismatch { teacher: usize, student: usize },
    #[error("learning rate {0} is not one of 1e-4, 5e-4, 1e-3, 5e-3")]
    LearningRate(f64),
    #[error("alignment pair ({0}, {1}) references a missing node")]
    BadAlignment(usize, usize),
    #[error(transparent)]
    Model(#[from] DagnError),
    #[error(transparent)]
    Disasm(#[from] DisasmError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error("empty bytecode")]
    EmptyBytecode,
}

impl TrainError {
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            TrainError::Model(DagnError::Autodiff(AutodiffError::NumericFault(_)))
        )
    }
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Model(DagnError::Autodiff(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistillTarget {
    /// Encoder and pooling receive distillation gradients.
    #[default]
    Both,
    /// Pooling frozen.
    GnnOnly,
    /// Encoder frozen.
    AgpOnly,
    /// No distillation phase.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMix {
    #[default]
    Both,
    GlobalOnly,
    LocalOnly,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub teacher_epochs: usize,
    pub distill_epochs: usize,
    pub finetune_epochs: usize,
    pub seed: u64,
    pub model: DagnConfig,
    pub distill_target: DistillTarget,
    pub loss_mix: LossMix,
    /// Sub-patterns whose aligned pairs enter the local loss.
    pub pattern_mask: BTreeSet<SubPattern>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            teacher_epochs: 10,
            distill_epochs: 200,
            finetune_epochs: 200,
            seed: 0,
            model: DagnConfig::default(),
            distill_target: DistillTarget::Both,
            loss_mix: LossMix::Both,
            pattern_mask: SubPattern::ALL.into_iter().collect(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !LEARNING_RATES.iter().any(|&r| (r - self.learning_rate).abs() < 1e-12) {
            return Err(TrainError::LearningRate(self.learning_rate));
        }
        Ok(())
    }

    pub fn distills(&self) -> bool {
        self.distill_target != DistillTarget::Off && self.loss_mix != LossMix::Off
    }

    fn distill_group(&self, g: ParamGroup) -> bool {
        match self.distill_target {
            DistillTarget::Both => g != ParamGroup::Head,
            DistillTarget::GnnOnly => g == ParamGroup::Encoder,
            DistillTarget::AgpOnly => g == ParamGroup::Pooling,
            DistillTarget::Off => false,
        }
    }
}

/// One graph with its binary label (`true` = vulnerable).
#[derive(Debug, Clone)]
pub struct LabeledGraph<T> {
    pub contract_id: String,
    pub input: GraphInput<T>,
    pub vulnerable: bool,
}

#[derive(Debug, Clone)]
pub struct PairedSample<T> {
    pub contract_id: String,
    pub source: GraphInput<T>,
    pub bytecode: GraphInput<T>,
    pub alignment: AlignmentDictionary,
    pub vulnerable: bool,
}

impl<T: Scalar> PairedSample<T> {
    pub fn new(
        contract_id: impl Into<String>,
        source: GraphInput<T>,
        bytecode: GraphInput<T>,
        alignment: AlignmentDictionary,
        vulnerable: bool,
    ) -> Result<Self, TrainError> {
        for p in &alignment.pairs {
            if p.source_node >= source.nodes() || p.bytecode_node >= bytecode.nodes() {
                return Err(TrainError::BadAlignment(p.source_node, p.bytecode_node));
            }
        }
        Ok(PairedSample { contract_id: contract_id.into(), source, bytecode, alignment, vulnerable })
    }

    pub fn source_view(&self) -> LabeledGraph<T> {
        LabeledGraph {
            contract_id: self.contract_id.clone(),
            input: self.source.clone(),
            vulnerable: self.vulnerable,
        }
    }

    pub fn bytecode_view(&self) -> LabeledGraph<T> {
        LabeledGraph {
            contract_id: self.contract_id.clone(),
            input: self.bytecode.clone(),
            vulnerable: self.vulnerable,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
    /// Mean validation loss per epoch; empty without a validation set.
    pub val_losses: Vec<f64>,
    /// Epoch (0-based) of the returned parameters.
    pub selected_epoch: Option<usize>,
    /// Sample-epochs whose alignment dictionary was empty.
    pub skipped_local: usize,
    pub diagnostics: Vec<String>,
}

pub fn one_hot<T: Scalar>(vulnerable: bool) -> Matrix<T> {
    if vulnerable {
        Matrix::row_vector(vec![T::zero(), T::one()])
    } else {
        Matrix::row_vector(vec![T::one(), T::zero()])
    }
}

/// `||g_s - g_f||^2`.
pub fn global_loss<T: Scalar>(t: &mut Tape<T>, g_s: Var, g_f: Var) -> Result<Var, AutodiffError> {
    t.squared_l2_diff(g_s, g_f)
}

/// Mean squared distance between aligned node states; `None` when the
/// dictionary has no pairs (the loss is then 0).
pub fn local_loss<T: Scalar>(
    t: &mut Tape<T>,
    teacher_states: Var,
    student_states: Var,
    dict: &AlignmentDictionary,
) -> Result<Option<Var>, AutodiffError> {
    if dict.is_empty() {
        return Ok(None);
    }
    let si: Vec<usize> = dict.pairs.iter().map(|p| p.source_node).collect();
    let fj: Vec<usize> = dict.pairs.iter().map(|p| p.bytecode_node).collect();
    let a = t.index_rows(teacher_states, &si)?;
    let b = t.index_rows(student_states, &fj)?;
    let s = t.squared_l2_diff(a, b)?;
    let inv = T::one() / T::from_usize(dict.len()).unwrap();
    Ok(Some(t.scale(s, inv)?))
}

/// `L_Global + L_Local` restricted by `mix`; `None` when no term applies
/// (local-only with an empty dictionary, or `mix` off).
pub fn distillation_loss<T: Scalar>(
    t: &mut Tape<T>,
    mix: LossMix,
    teacher_graph: Var,
    student_graph: Var,
    teacher_states: Var,
    student_states: Var,
    dict: &AlignmentDictionary,
) -> Result<Option<Var>, AutodiffError> {
    let global = match mix {
        LossMix::Both | LossMix::GlobalOnly => Some(global_loss(t, teacher_graph, student_graph)?),
        _ => None,
    };
    let local = match mix {
        LossMix::Both | LossMix::LocalOnly => local_loss(t, teacher_states, student_states, dict)?,
        _ => None,
    };
    Ok(match (global, local) {
        (Some(g), Some(l)) => Some(t.add(g, l)?),
        (g, l) => g.or(l),
    })
}

fn mean_loss<T: Scalar, S>(
    params: &DagnParams<T>,
    samples: &[S],
    loss: &mut impl FnMut(&mut Tape<T>, &Bound, &S, &mut PhaseReport) -> Result<Option<Var>, TrainError>,
) -> Result<f64, TrainError> {
    let mut scratch = PhaseReport::default();
    let mut sum = 0.0;
    for s in samples {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, |_| false);
        if let Some(l) = loss(&mut tape, &bound, s, &mut scratch)? {
            sum += tape.value(l).item().to_f64().unwrap_or(f64::NAN);
        }
    }
    Ok(sum / samples.len() as f64)
}

/// Generic mini-batch loop: `loss` builds one sample's loss on a fresh tape
/// and returns `None` when the sample contributes nothing. With a non-empty
/// `val` the epoch with the lowest mean validation loss is kept.
fn run_phase<T: Scalar, S>(
    params: &mut DagnParams<T>,
    samples: &[S],
    val: &[S],
    config: &TrainConfig,
    epochs: usize,
    phase_seed: u64,
    trainable: impl Fn(ParamGroup) -> bool + Copy,
    mut loss: impl FnMut(&mut Tape<T>, &Bound, &S, &mut PhaseReport) -> Result<Option<Var>, TrainError>,
) -> Result<PhaseReport, TrainError> {
    let mut report = PhaseReport::default();
    let mut opt = crate::optim::Adam::new(
        T::of(config.learning_rate),
        params.params.iter().map(|p| p.value.shape()),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ phase_seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let batch = config.batch_size.max(1);
    let mut best: Option<(f64, DagnParams<T>)> = None;
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let mut acc: Vec<Option<Matrix<T>>> = vec![None; params.params.len()];
            for &i in chunk {
                let mut tape = Tape::new();
                let bound = params.bind(&mut tape, trainable);
                let Some(l) = loss(&mut tape, &bound, &samples[i], &mut report)? else { continue };
                epoch_loss += tape.value(l).item().to_f64().unwrap_or(f64::NAN);
                let grads = tape.backward(l)?;
                for (slot, v) in acc.iter_mut().zip(&bound.vars) {
                    if let Some(g) = grads.get(*v) {
                        match slot {
                            Some(s) => s.add_assign(g),
                            None => *slot = Some(g.clone()),
                        }
                    }
                }
                report.diagnostics.append(&mut tape.diagnostics);
            }
            let scale = T::one() / T::from_usize(chunk.len()).unwrap();
            for g in acc.iter_mut().flatten() {
                *g = g.map(|x| x * scale);
            }
            let mut refs: Vec<&mut Matrix<T>> = params.params.iter_mut().map(|p| &mut p.value).collect();
            opt.step(&mut refs, &acc);
        }
        report.losses.push(epoch_loss / samples.len() as f64);
        if !val.is_empty() {
            let v = mean_loss(params, val, &mut loss)?;
            report.val_losses.push(v);
            if v.is_finite() && best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, params.clone()));
                report.selected_epoch = Some(epoch);
            }
        }
    }
    match best {
        Some((_, p)) => *params = p,
        None if epochs > 0 => report.selected_epoch = Some(epochs - 1),
        None => {}
    }
    report.diagnostics.sort();
    report.diagnostics.dedup();
    if !params.is_finite() {
        return Err(AutodiffError::NumericFault("parameter update").into());
    }
    Ok(report)
}

fn supervised<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    input: &GraphInput<T>,
    vulnerable: bool,
) -> Result<Var, TrainError> {
    let enc = bound.encode(tape, input)?;
    let z = bound.logits(tape, enc.graph_vector)?;
    Ok(tape.cross_entropy_with_softmax(z, &one_hot(vulnerable))?)
}

/// Fresh student parameters for `config`; distinct from the teacher's
/// initialisation under the same seed.
pub fn student_init<T: Scalar>(config: &TrainConfig) -> DagnParams<T> {
    DagnParams::init(config.model, config.seed ^ 0x5eed_5eed)
}

/// Trains a fresh teacher on source graphs with the supervised cross-entropy.
pub fn pretrain_teacher<T: Scalar>(
    samples: &[LabeledGraph<T>],
    val: &[LabeledGraph<T>],
    config: &TrainConfig,
) -> Result<(DagnParams<T>, PhaseReport), TrainError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let mut teacher = DagnParams::init(config.model, config.seed);
    let report = run_phase(
        &mut teacher,
        samples,
        val,
        config,
        config.teacher_epochs,
        0x7eac,
        |_| true,
        |t, b, s, _| Ok(Some(supervised(t, b, &s.input, s.vulnerable)?)),
    )?;
    Ok((teacher, report))
}

/// Frozen-teacher node states and graph vector of one sample.
struct TeacherView<T> {
    states: Matrix<T>,
    graph: Matrix<T>,
}

type DistillSample<'a, T> = (&'a PairedSample<T>, TeacherView<T>, AlignmentDictionary);

fn teacher_views<'a, T: Scalar>(
    teacher: &DagnParams<T>,
    set: &'a [PairedSample<T>],
    config: &TrainConfig,
) -> Result<Vec<DistillSample<'a, T>>, TrainError> {
    set.iter()
        .map(|s| {
            let (states, graph) = teacher.embed(&s.source)?;
            let dict = s.alignment.restricted(|p| config.pattern_mask.contains(&p));
            Ok((s, TeacherView { states, graph }, dict))
        })
        .collect()
}

/// Trains the student towards the frozen teacher with the global and local
/// distillation losses.
pub fn distill<T: Scalar>(
    teacher: &DagnParams<T>,
    student_init: &DagnParams<T>,
    samples: &[PairedSample<T>],
    val: &[PairedSample<T>],
    config: &TrainConfig,
) -> Result<(DagnParams<T>, PhaseReport), TrainError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if teacher.config.d != student_init.config.d {
        return Err(TrainError::DimMismatch {
            teacher: teacher.config.d,
            student: student_init.config.d,
        });
    }
    let mut student = student_init.clone();
    if !config.distills() {
        return Ok((student, PhaseReport::default()));
    }
    let pairs = teacher_views(teacher, samples, config)?;
    let val_pairs = teacher_views(teacher, val, config)?;
    let mix = config.loss_mix;
    let report = run_phase(
        &mut student,
        &pairs,
        &val_pairs,
        config,
        config.distill_epochs,
        0xd157,
        |g| config.distill_group(g),
        |t, b, (s, view, dict), report| {
            let enc = b.encode(t, &s.bytecode)?;
            let gs = t.constant(view.graph.clone());
            let ts = t.constant(view.states.clone());
            if dict.is_empty() && matches!(mix, LossMix::Both | LossMix::LocalOnly) {
                report.skipped_local += 1;
            }
            Ok(distillation_loss(t, mix, gs, enc.graph_vector, ts, enc.node_states, dict)?)
        },
    )?;
    Ok((student, report))
}

/// Supervised training of the student (all groups, head included) on
/// bytecode graphs only.
pub fn finetune<T: Scalar>(
    student: &DagnParams<T>,
    samples: &[LabeledGraph<T>],
    val: &[LabeledGraph<T>],
    config: &TrainConfig,
) -> Result<(DagnParams<T>, PhaseReport), TrainError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let mut model = student.clone();
    let report = run_phase(
        &mut model,
        samples,
        val,
        config,
        config.finetune_epochs,
        0xf17e,
        |_| true,
        |t, b, s, _| Ok(Some(supervised(t, b, &s.input, s.vulnerable)?)),
    )?;
    Ok((model, report))
}

/// Vulnerable-class probability of each graph.
pub fn scores<T: Scalar>(model: &DagnParams<T>, samples: &[LabeledGraph<T>]) -> Result<Vec<f64>, TrainError> {
    samples
        .iter()
        .map(|s| Ok(model.predict(&s.input)?[1].to_f64().unwrap_or(f64::NAN)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiredPattern {
    pub sub_pattern: SubPattern,
    pub key_nodes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub contract_id: String,
    /// Probability of the vulnerable class.
    pub probability: f64,
    pub label: String,
    pub blocks: usize,
    pub fired_patterns: Vec<FiredPattern>,
}

/// Bytecode-only inference: disassembly, CFG, features, encoder and head.
pub fn detect<T: Scalar>(
    contract_id: &str,
    bytecode_hex: &str,
    student: &DagnParams<T>,
    table: &OpcodeTable,
) -> Result<DetectionReport, TrainError> {
    let ins = decode_with(bytecode_hex, &DecodeOptions { table, ..Default::default() })?;
    if ins.is_empty() {
        return Err(TrainError::EmptyBytecode);
    }
    let blocks = segment_blocks(&ins);
    let cfg = build_cfg(&blocks, contract_id);
    let feats = featurize_bytecode_with(&blocks, &cfg, table)?;
    let input = GraphInput::new(&cfg, &feats)?;
    // one CFG per contract, so the max over graphs is this graph's score
    let probability = student.predict(&input)?[1].to_f64().unwrap_or(f64::NAN);
    let fired_patterns = match_bytecode_patterns(&cfg, &blocks)
        .unwrap_or_default()
        .into_iter()
        .map(|a| FiredPattern { sub_pattern: a.sub_pattern, key_nodes: a.key_nodes })
        .collect();
    Ok(DetectionReport {
        contract_id: contract_id.to_owned(),
        probability,
        label: if probability >= 0.5 { "vulnerable" } else { "normal" }.into(),
        blocks: blocks.len(),
        fired_patterns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::AlignedPair;
    use rand::Rng;

    fn tiny() -> TrainConfig {
        TrainConfig {
            learning_rate: 5e-3,
            teacher_epochs: 500,
            distill_epochs: 50,
            finetune_epochs: 50,
            model: DagnConfig { d_in: 3, d: 6, layers: 1, d_r: 2, hidden: 4, ..Default::default() },
            ..Default::default()
        }
    }

    fn graph(seed: u64, n: usize) -> GraphInput<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = Matrix::from_vec(n, 3, (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i, 0)).collect();
        GraphInput::from_parts(f, &edges).unwrap()
    }

    fn labeled(seed: u64, vulnerable: bool) -> LabeledGraph<f64> {
        LabeledGraph { contract_id: format!("c{seed}"), input: graph(seed, 4), vulnerable }
    }

    #[test]
    fn single_sample_overfits() {
        let (_, rep) = pretrain_teacher(&[labeled(1, true)], &[], &tiny()).unwrap();
        assert!(*rep.losses.last().unwrap() < 0.01, "{:?}", rep.losses.last());
    }

    #[test]
    fn flipped_duplicates_are_uninformative() {
        let mut data = Vec::new();
        for s in 0..6 {
            data.push(labeled(s, true));
            data.push(labeled(s, false));
        }
        let cfg = TrainConfig { teacher_epochs: 100, ..tiny() };
        let (m, _) = pretrain_teacher(&data, &[], &cfg).unwrap();
        for p in scores(&m, &data).unwrap() {
            assert!((p - 0.5).abs() < 0.1, "{p}");
        }
    }

    #[test]
    fn validation_keeps_best_epoch() {
        let train: Vec<_> = (0..6).map(|s| labeled(s, s % 2 == 0)).collect();
        // validation labels disagree with training, so its loss rises
        let val: Vec<_> = (0..6).map(|s| labeled(s, s % 2 == 1)).collect();
        let cfg = TrainConfig { teacher_epochs: 40, ..tiny() };
        let (m, rep) = pretrain_teacher(&train, &val, &cfg).unwrap();
        assert_eq!(rep.val_losses.len(), 40);
        let best = rep.val_losses.iter().cloned().fold(f64::INFINITY, f64::min);
        let e = rep.selected_epoch.unwrap();
        assert_eq!(rep.val_losses[e], best);
        assert!(e < 39);
        let ce: f64 = scores(&m, &val)
            .unwrap()
            .iter()
            .zip(&val)
            .map(|(p, s)| -(if s.vulnerable { *p } else { 1.0 - p }).ln())
            .sum::<f64>()
            / 6.0;
        assert!((ce - best).abs() < 1e-9, "{ce} vs {best}");
        let (_, last) = pretrain_teacher(&train, &[], &cfg).unwrap();
        assert_eq!(last.selected_epoch, Some(39));
        assert!(last.val_losses.is_empty());
    }

    #[test]
    fn empty_sets_rejected() {
        assert!(matches!(pretrain_teacher::<f64>(&[], &[], &tiny()), Err(TrainError::EmptyTrainingSet)));
        let bad = TrainConfig { learning_rate: 0.01, ..tiny() };
        assert!(matches!(pretrain_teacher(&[labeled(1, true)], &[], &bad), Err(TrainError::LearningRate(_))));
    }

    #[test]
    fn local_loss_cases() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]));
        let b = t.constant(Matrix::from_rows(&[vec![1.0, 1.0], vec![3.0, 2.0], vec![0.0, 0.0]]));
        let empty = AlignmentDictionary::default();
        assert!(local_loss(&mut t, a, b, &empty).unwrap().is_none());
        let pair = |s, f| AlignedPair { source_node: s, bytecode_node: f, sub_pattern: SubPattern::LoopStatement };
        let dict = AlignmentDictionary { pairs: vec![pair(0, 0), pair(1, 1)], ..Default::default() };
        let l = local_loss(&mut t, a, b, &dict).unwrap().unwrap();
        // (0 + 1) and (9 + 0), averaged over two pairs
        assert_eq!(t.value(l).item(), 5.0);
        let single = AlignmentDictionary { pairs: vec![pair(0, 0)], ..Default::default() };
        let l = local_loss(&mut t, a, a, &single).unwrap().unwrap();
        assert_eq!(t.value(l).item(), 0.0);
    }

    #[test]
    fn global_loss_unit_vector() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(Matrix::row_vector(vec![1.0, 0.0, 0.0]));
        let b = t.constant(Matrix::row_vector(vec![0.0, 0.0, 0.0]));
        let l = global_loss(&mut t, a, b).unwrap();
        assert_eq!(t.value(l).item(), 1.0);
        let l0 = global_loss(&mut t, a, a).unwrap();
        assert_eq!(t.value(l0).item(), 0.0);
    }

    fn paired(seed: u64) -> PairedSample<f64> {
        let pair = AlignedPair { source_node: 1, bytecode_node: 2, sub_pattern: SubPattern::CallValueInvocation };
        let dict = AlignmentDictionary { contract_id: "c".into(), pairs: vec![pair], unpaired: vec![] };
        PairedSample::new("c", graph(seed, 3), graph(seed + 100, 5), dict, seed % 2 == 0).unwrap()
    }

    #[test]
    fn teacher_frozen_and_off_is_identity() {
        let cfg = tiny();
        let data: Vec<_> = (0..4).map(paired).collect();
        let src: Vec<_> = data.iter().map(|s| s.source_view()).collect();
        let (teacher, _) = pretrain_teacher(&src, &[], &TrainConfig { teacher_epochs: 20, ..cfg.clone() }).unwrap();
        let before = teacher.to_json();
        let init = DagnParams::init(cfg.model, 99);
        let (student, rep) = distill(&teacher, &init, &data, &[], &cfg).unwrap();
        assert_eq!(before, teacher.to_json());
        assert_ne!(student, init);
        assert!(rep.losses.last() < rep.losses.first());
        let off = TrainConfig { distill_target: DistillTarget::Off, ..cfg.clone() };
        assert_eq!(distill(&teacher, &init, &data, &[], &off).unwrap().0, init);
        let off = TrainConfig { loss_mix: LossMix::Off, ..cfg.clone() };
        assert_eq!(distill(&teacher, &init, &data, &[], &off).unwrap().0, init);
    }

    #[test]
    fn frozen_groups_stay_put() {
        let cfg = tiny();
        let data: Vec<_> = (0..3).map(paired).collect();
        let teacher = DagnParams::init(cfg.model, 1);
        let init = DagnParams::init(cfg.model, 2);
        for (target, moved) in [
            (DistillTarget::GnnOnly, ParamGroup::Encoder),
            (DistillTarget::AgpOnly, ParamGroup::Pooling),
        ] {
            let c = TrainConfig { distill_target: target, distill_epochs: 5, ..cfg.clone() };
            let (s, _) = distill(&teacher, &init, &data, &[], &c).unwrap();
            for (a, b) in s.params.iter().zip(&init.params) {
                if a.group != moved {
                    assert_eq!(a.value, b.value, "{target:?} moved {}", a.name);
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let cfg = tiny();
        let teacher = DagnParams::init(cfg.model, 1);
        let other = DagnParams::init(DagnConfig { d: 7, ..cfg.model }, 2);
        assert!(matches!(
            distill(&teacher, &other, &[paired(0)], &[], &cfg),
            Err(TrainError::DimMismatch { .. })
        ));
    }

    #[test]
    fn dist_is_sum_of_terms() {
        let s = paired(3);
        let teacher = DagnParams::<f64>::init(tiny().model, 1);
        let student = DagnParams::<f64>::init(tiny().model, 2);
        let (ts, tg) = teacher.embed(&s.source).unwrap();
        let mut t = Tape::new();
        let b = student.bind(&mut t, |_| true);
        let enc = b.encode(&mut t, &s.bytecode).unwrap();
        let gs = t.constant(tg);
        let st = t.constant(ts);
        let g = global_loss(&mut t, gs, enc.graph_vector).unwrap();
        let l = local_loss(&mut t, st, enc.node_states, &s.alignment).unwrap().unwrap();
        let d = t.add(g, l).unwrap();
        assert_eq!(t.value(d).item(), t.value(g).item() + t.value(l).item());
    }

    #[test]
    fn detect_rejects_empty() {
        let m = DagnParams::<f64>::init(DagnConfig::default(), 0);
        let table = crate::evm::opcodes::shanghai();
        assert!(matches!(detect("c", "0x", &m, table), Err(TrainError::EmptyBytecode)));
        let a = detect("c", "0x6001600055", &m, table).unwrap();
        let b = detect("c", "0x6001600055", &m, table).unwrap();
        assert_eq!(a, b);
    }
}
