//! Bytecode vulnerability detection by cross-modal distillation.
//!
//! EVM bytecode is disassembled into a control flow graph, compiler ASTs
//! into code semantic graphs, and both are annotated with nine expert
//! sub-patterns for reentrancy, timestamp dependence and infinite loops.
//! Aligned key nodes guide the distillation of a source-graph teacher into
//! a bytecode-only student built on a dual-attention graph network.
//!
//! The numeric core is generic over [`tensor::Scalar`] (`f32` or `f64`);
//! the aliases below fix it to `f64`.

pub mod alignment;
pub mod ast;
pub mod autodiff;
pub mod cfg;
pub mod csg;
pub mod dataset;
pub mod dagn;
pub mod evm;
pub mod features;
pub mod graph;
pub mod optim;
pub mod patterns;
pub mod tensor;
pub mod train;

pub type Tensor = tensor::Matrix<f64>;
pub type Tape = autodiff::Tape<f64>;
pub type Model = dagn::DagnParams<f64>;
pub type Input = dagn::GraphInput<f64>;
pub type Sample = train::PairedSample<f64>;
pub type Labeled = train::LabeledGraph<f64>;
