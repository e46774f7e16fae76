//! EVM bytecode decoding, basic-block segmentation and a small assembler.

pub mod asm;
mod disasm;
pub mod opcodes;

pub use disasm::{
    decode, decode_bytes, decode_with, encode, parse_hex, segment_blocks, strip_metadata,
    BasicBlock, DecodeOptions, Instruction, InstructionRecord, TerminatorKind,
};
pub use opcodes::{OpCategory, OpcodeInfo, OpcodeTable};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DisasmError {
    #[error("malformed hex input at position {position}: {reason}")]
    MalformedInput { position: usize, reason: String },
    #[error("opcode override file: {0}")]
    Override(String),
    #[error("assembler: {0}")]
    Assembly(String),
}
