//! Dual-attention graph network: relation-aware attention message passing,
//! attention-based graph pooling and a two-class MLP head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Axis, Tape, Var};
use crate::features::{NodeFeatures, D_IN};
use crate::graph::{ContractGraph, EdgeType};
use crate::tensor::{Matrix, Scalar};

/// Relation index used for the self term of every neighbourhood.
pub const SELF_RELATION: usize = EdgeType::VOCAB.len();
pub const RELATIONS: usize = SELF_RELATION + 1;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DagnError {
    #[error("graph has no nodes to pool")]
    EmptyGraph,
    #[error("feature matrix has {rows} rows but the graph has {nodes} nodes")]
    FeatureRows { rows: usize, nodes: usize },
    #[error("features are {got}-dimensional, model expects {expected}")]
    FeatureDim { expected: usize, got: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Agp,
    Avg,
    Max,
    /// Signed power mean with a learnable exponent initialised to 1.
    Power,
}

impl std::str::FromStr for Pooling {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "agp" => Ok(Pooling::Agp),
            "avg" => Ok(Pooling::Avg),
            "max" => Ok(Pooling::Max),
            "power" => Ok(Pooling::Power),
            _ => Err(format!("unknown pooling `{s}` (agp, avg, max, power)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DagnConfig {
    pub d_in: usize,
    pub d: usize,
    pub layers: usize,
    pub d_r: usize,
    pub hidden: usize,
    pub pooling: Pooling,
}

impl Default for DagnConfig {
    fn default() -> Self {
        DagnConfig { d_in: D_IN, d: 128, layers: 2, d_r: 16, hidden: 64, pooling: Pooling::Agp }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    /// Input projection, relation table and message-passing layers.
    Encoder,
    Pooling,
    Head,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DagnParams<T> {
    pub config: DagnConfig,
    pub seed: u64,
    pub params: Vec<Param<T>>,
}

const PER_LAYER: usize = 5;

struct Layout {
    layers: usize,
}

impl Layout {
    const INPUT: usize = 0;
    const RELATIONS: usize = 1;
    fn layer(&self, l: usize) -> usize {
        2 + PER_LAYER * l
    }
    fn pool(&self) -> usize {
        2 + PER_LAYER * self.layers
    }
    fn head(&self) -> usize {
        self.pool() + 4
    }
}

impl<T: Scalar> DagnParams<T> {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation; the power
    /// exponent starts at 1.
    pub fn init(config: DagnConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut add = |name: String, group, rows: usize, cols: usize, fan_in: usize| {
            // fan_in 0 marks the power exponent, which starts at 1
            let data = if fan_in == 0 {
                vec![T::one(); rows * cols]
            } else {
                let a = 1.0 / (fan_in as f64).sqrt();
                (0..rows * cols).map(|_| T::of(rng.gen_range(-a..a))).collect()
            };
            params.push(Param { name, group, value: Matrix::from_vec(rows, cols, data) });
        };
        let (d, dr) = (config.d, config.d_r);
        add("input_proj".into(), ParamGroup::Encoder, config.d_in, d, config.d_in);
        add("relation_table".into(), ParamGroup::Encoder, RELATIONS, dr, dr);
        for l in 0..config.layers {
            add(format!("layer{l}.w_q"), ParamGroup::Encoder, d, d, d);
            add(format!("layer{l}.w_k"), ParamGroup::Encoder, d + dr, d, d + dr);
            add(format!("layer{l}.w_m"), ParamGroup::Encoder, d + dr, d, d + dr);
            add(format!("layer{l}.w_v"), ParamGroup::Encoder, d, d, d);
            add(format!("layer{l}.b_v"), ParamGroup::Encoder, 1, d, d);
        }
        add("pool.w_mat".into(), ParamGroup::Pooling, d, d, d);
        add("pool.w_vec".into(), ParamGroup::Pooling, d, 1, d);
        add("pool.b".into(), ParamGroup::Pooling, 1, d, d);
        add("pool.p".into(), ParamGroup::Pooling, 1, 1, 0);
        add("head.w1".into(), ParamGroup::Head, d, config.hidden, d);
        add("head.b1".into(), ParamGroup::Head, 1, config.hidden, d);
        add("head.w2".into(), ParamGroup::Head, config.hidden, 2, config.hidden);
        add("head.b2".into(), ParamGroup::Head, 1, 2, config.hidden);
        DagnParams { config, seed, params }
    }

    pub fn get(&self, name: &str) -> Option<&Matrix<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix<T>> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Records every parameter on `tape`; groups rejected by `trainable`
    /// become constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: impl Fn(ParamGroup) -> bool) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| {
                    if trainable(p.group) {
                        tape.leaf(p.value.clone())
                    } else {
                        tape.constant(p.value.clone())
                    }
                })
                .collect(),
            layers: self.config.layers,
            d: self.config.d,
            pooling: self.config.pooling,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            d: self.config.d,
            layers: self.config.layers,
            d_r: self.config.d_r,
            d_in: self.config.d_in,
            hidden: self.config.hidden,
            pooling: self.config.pooling,
            edge_type_vocab: EdgeType::VOCAB
                .iter()
                .map(|e| e.name().to_owned())
                .chain(["self".to_owned()])
                .collect(),
            seed: self.seed,
            tensors: self
                .params
                .iter()
                .map(|p| CheckpointTensor {
                    name: p.name.clone(),
                    group: p.group,
                    shape: [p.value.rows, p.value.cols],
                    data: p.value.to_f64(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, DagnError> {
        let bad = |m: String| DagnError::Checkpoint(m);
        if ck.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {}", ck.version)));
        }
        let config = DagnConfig {
            d_in: ck.d_in,
            d: ck.d,
            layers: ck.layers,
            d_r: ck.d_r,
            hidden: ck.hidden,
            pooling: ck.pooling,
        };
        let template = DagnParams::<T>::init(config, ck.seed);
        if ck.tensors.len() != template.params.len() {
            return Err(bad(format!(
                "expected {} tensors, found {}",
                template.params.len(),
                ck.tensors.len()
            )));
        }
        let mut params = Vec::with_capacity(ck.tensors.len());
        for (t, p) in ck.tensors.iter().zip(&template.params) {
            if t.name != p.name || t.shape != [p.value.rows, p.value.cols] {
                return Err(bad(format!(
                    "tensor `{}` {:?} does not match expected `{}` {:?}",
                    t.name,
                    t.shape,
                    p.name,
                    p.value.shape()
                )));
            }
            if t.data.len() != t.shape[0] * t.shape[1] || t.data.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("tensor `{}` has bad data", t.name)));
            }
            params.push(Param {
                name: t.name.clone(),
                group: p.group,
                value: Matrix::from_f64(t.shape[0], t.shape[1], &t.data),
            });
        }
        Ok(DagnParams { config, seed: ck.seed, params })
    }

    pub fn from_json(text: &str) -> Result<Self, DagnError> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| DagnError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(&ck)
    }

    /// Class probabilities `[normal, vulnerable]` without recording gradients.
    pub fn predict(&self, input: &GraphInput<T>) -> Result<[T; 2], DagnError> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, |_| false);
        let enc = b.encode(&mut tape, input)?;
        let probs = b.probabilities(&mut tape, enc.graph_vector)?;
        let p = &tape.value(probs).data;
        Ok([p[0], p[1]])
    }

    /// Node states and graph vector without recording gradients.
    pub fn embed(&self, input: &GraphInput<T>) -> Result<(Matrix<T>, Matrix<T>), DagnError> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, |_| false);
        let enc = b.encode(&mut tape, input)?;
        Ok((tape.value(enc.node_states).clone(), tape.value(enc.graph_vector).clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointTensor {
    pub name: String,
    pub group: ParamGroup,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub d: usize,
    #[serde(rename = "L")]
    pub layers: usize,
    pub d_r: usize,
    pub d_in: usize,
    pub hidden: usize,
    pub pooling: Pooling,
    pub edge_type_vocab: Vec<String>,
    pub seed: u64,
    pub tensors: Vec<CheckpointTensor>,
}

/// Graph structure and features ready for the encoder. Edge lists include a
/// self loop per node.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput<T> {
    pub features: Matrix<T>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub rel: Vec<usize>,
}

impl<T: Scalar> GraphInput<T> {
    pub fn new(graph: &ContractGraph, feats: &NodeFeatures) -> Result<Self, DagnError> {
        if feats.rows() != graph.len() {
            return Err(DagnError::FeatureRows { rows: feats.rows(), nodes: graph.len() });
        }
        let edges: Vec<_> =
            graph.edges.iter().map(|e| (e.src, e.dst, e.edge_type.index())).collect();
        let rows = feats.matrix.iter().flatten().copied().collect::<Vec<_>>();
        Self::from_parts(Matrix::from_f64(feats.rows(), feats.d_in, &rows), &edges)
    }

    /// `edges` are `(src, dst, relation)` triples with relations below
    /// [`SELF_RELATION`].
    pub fn from_parts(features: Matrix<T>, edges: &[(usize, usize, usize)]) -> Result<Self, DagnError> {
        let n = features.rows;
        if n == 0 {
            return Err(DagnError::EmptyGraph);
        }
        let mut input = GraphInput { features, src: vec![], dst: vec![], rel: vec![] };
        for &(s, d, r) in edges {
            if s >= n || d >= n || r >= SELF_RELATION {
                return Err(DagnError::Checkpoint(format!("edge ({s}, {d}, {r}) out of range")));
            }
            input.src.push(s);
            input.dst.push(d);
            input.rel.push(r);
        }
        for i in 0..n {
            input.src.push(i);
            input.dst.push(i);
            input.rel.push(SELF_RELATION);
        }
        Ok(input)
    }

    pub fn nodes(&self) -> usize {
        self.features.rows
    }
}

/// Parameters recorded on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
    layers: usize,
    d: usize,
    pooling: Pooling,
}

#[derive(Debug, Clone)]
pub struct Encoded {
    /// |V|×d final node states.
    pub node_states: Var,
    /// 1×d pooled graph vector.
    pub graph_vector: Var,
    /// Per layer, attention weight of each (edge, then self-loop) message.
    pub attention: Vec<Var>,
    /// |V|×1 pooling weights (attention pooling only).
    pub pool_weights: Option<Var>,
}

impl Bound {
    /// Binds `vars`, laid out as [`DagnParams::params`], to `config`. Lets
    /// callers differentiate through leaves they created themselves.
    pub fn from_vars(config: &DagnConfig, vars: Vec<Var>) -> Bound {
        Bound { vars, layers: config.layers, d: config.d, pooling: config.pooling }
    }

    fn layout(&self) -> Layout {
        Layout { layers: self.layers }
    }

    pub fn encode<T: Scalar>(&self, t: &mut Tape<T>, input: &GraphInput<T>) -> Result<Encoded, DagnError> {
        let lay = self.layout();
        let n = input.nodes();
        let x = t.constant(input.features.clone());
        let proj = self.vars[Layout::INPUT];
        if t.shape(x).1 != t.shape(proj).0 {
            return Err(DagnError::FeatureDim { expected: t.shape(proj).0, got: t.shape(x).1 });
        }
        let mut h = t.matmul(x, proj)?;
        let rel = t.index_rows(self.vars[Layout::RELATIONS], &input.rel)?;
        let inv_sqrt_d = T::one() / T::of(self.d as f64).sqrt();
        let mut attention = Vec::with_capacity(self.layers);
        for l in 0..self.layers {
            let base = lay.layer(l);
            let [wq, wk, wm, wv, bv] = [0, 1, 2, 3, 4].map(|k| self.vars[base + k]);
            let q_nodes = t.matmul(h, wq)?;
            let q = t.index_rows(q_nodes, &input.src)?;
            let h_src = t.index_rows(h, &input.src)?;
            let h_dst = t.index_rows(h, &input.dst)?;
            let key_in = t.concat_cols(h_dst, rel)?;
            let k = t.matmul(key_in, wk)?;
            let msg_in = t.concat_cols(h_src, rel)?;
            let m = t.matmul(msg_in, wm)?;
            let logits = t.row_dot(q, k)?;
            let logits = t.scale(logits, inv_sqrt_d)?;
            let alpha = t.segment_softmax(logits, &input.dst)?;
            let weighted = t.scale_rows(alpha, m)?;
            let agg = t.segment_sum(weighted, &input.dst, n)?;
            let z = t.matmul(agg, wv)?;
            let z = t.add_row(z, bv)?;
            h = t.tanh(z)?;
            attention.push(alpha);
        }
        let (graph_vector, pool_weights) = self.pool(t, h)?;
        Ok(Encoded { node_states: h, graph_vector, attention, pool_weights })
    }

    /// Applies the configured pooling variant to `h`.
    pub fn pool<T: Scalar>(&self, t: &mut Tape<T>, h: Var) -> Result<(Var, Option<Var>), DagnError> {
        let p = self.layout().pool();
        Ok(match self.pooling {
            Pooling::Agp => {
                let s = t.matmul(h, self.vars[p])?;
                let s = t.add_row(s, self.vars[p + 2])?;
                let s = t.tanh(s)?;
                let score = t.matmul(s, self.vars[p + 1])?;
                let beta = t.softmax(score, Axis::Cols)?;
                let weighted = t.scale_rows(beta, h)?;
                (t.column_sum(weighted)?, Some(beta))
            }
            Pooling::Avg => (t.mean_rows(h)?, None),
            Pooling::Max => (t.max_rows(h)?, None),
            Pooling::Power => {
                let pw = self.vars[p + 3];
                let raised = t.signed_pow(h, pw)?;
                let mean = t.mean_rows(raised)?;
                let inv = t.recip(pw)?;
                (t.signed_pow(mean, inv)?, None)
            }
        })
    }

    /// Pre-softmax class scores for a 1×d graph vector.
    pub fn logits<T: Scalar>(&self, t: &mut Tape<T>, g: Var) -> Result<Var, DagnError> {
        let h = self.layout().head();
        let z = t.matmul(g, self.vars[h])?;
        let z = t.add_row(z, self.vars[h + 1])?;
        let z = t.tanh(z)?;
        let z = t.matmul(z, self.vars[h + 2])?;
        Ok(t.add_row(z, self.vars[h + 3])?)
    }

    pub fn probabilities<T: Scalar>(&self, t: &mut Tape<T>, g: Var) -> Result<Var, DagnError> {
        let z = self.logits(t, g)?;
        Ok(t.softmax(z, Axis::Rows)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;

    fn small(pooling: Pooling, layers: usize) -> DagnConfig {
        DagnConfig { d_in: 4, d: 5, layers, d_r: 3, hidden: 4, pooling }
    }

    fn toy_input(n: usize, seed: u64) -> GraphInput<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats = Matrix::from_vec(n, 4, (0..n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i, i % 6)).chain([(n - 1, 0, 1)]).collect();
        GraphInput::from_parts(feats, &edges).unwrap()
    }

    #[test]
    fn singleton_pooling_weight_is_one() {
        let p = DagnParams::<f64>::init(small(Pooling::Agp, 2), 1);
        let input = toy_input(1, 2);
        let mut t = Tape::new();
        let b = p.bind(&mut t, |_| false);
        let e = b.encode(&mut t, &input).unwrap();
        assert!((t.value(e.pool_weights.unwrap()).item() - 1.0).abs() < 1e-15);
        assert_eq!(t.value(e.graph_vector).data, t.value(e.node_states).data);
    }

    #[test]
    fn equal_states_give_uniform_weights() {
        let p = DagnParams::<f64>::init(small(Pooling::Agp, 0), 1);
        let feats = Matrix::from_vec(3, 4, [0.1, 0.2, -0.3, 0.4].repeat(3));
        let input = GraphInput::from_parts(feats, &[(0, 1, 0), (1, 2, 0)]).unwrap();
        let mut t = Tape::new();
        let b = p.bind(&mut t, |_| false);
        let e = b.encode(&mut t, &input).unwrap();
        for &w in &t.value(e.pool_weights.unwrap()).data {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn power_one_equals_avg() {
        let input = toy_input(5, 3);
        let mut pw = DagnParams::<f64>::init(small(Pooling::Power, 1), 9);
        let mut avg = pw.clone();
        avg.config.pooling = Pooling::Avg;
        let (_, g_avg) = avg.embed(&input).unwrap();
        let (_, g_pow) = pw.embed(&input).unwrap();
        assert!(g_avg.max_abs_diff(&g_pow) < 1e-12);
        *pw.get_mut("pool.p").unwrap() = Matrix::scalar(2.0);
        let (_, g2) = pw.embed(&input).unwrap();
        assert!(g2.max_abs_diff(&g_avg) > 1e-6);
    }

    #[test]
    fn zero_head_is_uniform() {
        let mut p = DagnParams::<f64>::init(small(Pooling::Agp, 1), 4);
        for name in ["head.w1", "head.b1", "head.w2", "head.b2"] {
            let m = p.get_mut(name).unwrap();
            *m = m.map(|_| 0.0);
        }
        assert_eq!(p.predict(&toy_input(4, 1)).unwrap(), [0.5, 0.5]);
    }

    #[test]
    fn checkpoint_is_bit_exact() {
        let p = DagnParams::<f64>::init(DagnConfig::default(), 42);
        let q = DagnParams::<f64>::from_json(&p.to_json()).unwrap();
        assert_eq!(p, q);
        let ck = p.to_checkpoint();
        assert_eq!(ck.edge_type_vocab.len(), RELATIONS);
        assert!(p.to_json().contains("\"L\": 2"));
    }

    #[test]
    fn empty_graph_is_an_error() {
        assert!(matches!(
            GraphInput::<f64>::from_parts(Matrix::zeros(0, 4), &[]),
            Err(DagnError::EmptyGraph)
        ));
    }

    #[test]
    fn full_model_gradient() {
        let cfg = small(Pooling::Agp, 2);
        let params = DagnParams::<f64>::init(cfg, 5);
        let input = toy_input(6, 8);
        let values: Vec<Matrix<f64>> = params.params.iter().map(|p| p.value.clone()).collect();
        let err = gradcheck(&values, 1e-5, 1e-3, |t, vars| {
            let b = Bound::from_vars(&cfg, vars.to_vec());
            let e = b.encode(t, &input).map_err(|e| match e {
                DagnError::Autodiff(a) => a,
                other => panic!("{other}"),
            })?;
            let z = b.logits(t, e.graph_vector).unwrap();
            t.cross_entropy_with_softmax(z, &Matrix::row_vector(vec![0.0, 1.0]))
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn distillation_objective_gradient() {
        let cfg = small(Pooling::Agp, 2);
        let params = DagnParams::<f64>::init(cfg, 9);
        let input = toy_input(6, 8);
        let target_states = Matrix::from_f64(3, cfg.d, &(0..3 * cfg.d).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>());
        let target_graph = Matrix::from_f64(1, cfg.d, &(0..cfg.d).map(|i| (i as f64 * 0.71).cos()).collect::<Vec<_>>());
        let values: Vec<Matrix<f64>> = params.params.iter().map(|p| p.value.clone()).collect();
        let err = gradcheck(&values, 1e-5, 1e-3, |t, vars| {
            let b = Bound::from_vars(&cfg, vars.to_vec());
            let e = b.encode(t, &input).map_err(|e| match e {
                DagnError::Autodiff(a) => a,
                other => panic!("{other}"),
            })?;
            let gs = t.constant(target_graph.clone());
            let global = t.squared_l2_diff(gs, e.graph_vector)?;
            let ts = t.constant(target_states.clone());
            let a = t.index_rows(ts, &[0, 1, 2])?;
            let s = t.index_rows(e.node_states, &[4, 1, 4])?;
            let local = t.squared_l2_diff(a, s)?;
            t.add(global, local)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn f32_forward_runs() {
        let p = DagnParams::<f32>::init(small(Pooling::Agp, 2), 5);
        let input64 = toy_input(4, 2);
        let input = GraphInput {
            features: Matrix::<f32>::from_f64(4, 4, &input64.features.data),
            src: input64.src,
            dst: input64.dst,
            rel: input64.rel,
        };
        let pr = p.predict(&input).unwrap();
        assert!((pr[0] + pr[1] - 1.0).abs() < 1e-6);
    }
}
