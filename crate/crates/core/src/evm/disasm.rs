use serde::{Deserialize, Serialize};

use super::opcodes::{self, OpcodeTable};
use super::DisasmError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub offset: usize,
    pub opcode: u8,
    pub mnemonic: String,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "hex_bytes_opt"
    )]
    pub push_data: Option<Vec<u8>>,
    /// Zero bytes appended because the code ended inside this PUSH's immediate.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub padded: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

impl Instruction {
    /// Encoded size in the original code, excluding padding.
    pub fn byte_len(&self) -> usize {
        1 + self.push_data.as_ref().map_or(0, Vec::len) - self.padded
    }

    pub fn is(&self, mnemonic: &str) -> bool {
        self.mnemonic == mnemonic
    }

    pub fn is_push(&self) -> bool {
        self.mnemonic.starts_with("PUSH")
    }

    /// Immediate of a PUSH as an integer, if it fits in `usize`. PUSH0 yields 0.
    pub fn push_value(&self) -> Option<usize> {
        if self.mnemonic == "PUSH0" {
            return Some(0);
        }
        let data = self.push_data.as_ref()?;
        let significant: Vec<u8> = data.iter().copied().skip_while(|&b| b == 0).collect();
        if significant.len() > std::mem::size_of::<usize>() {
            return None;
        }
        Some(
            significant
                .iter()
                .fold(0usize, |acc, &b| (acc << 8) | b as usize),
        )
    }

    pub fn terminator(&self) -> Option<TerminatorKind> {
        match self.mnemonic.as_str() {
            "JUMP" => Some(TerminatorKind::Jump),
            "JUMPI" => Some(TerminatorKind::Jumpi),
            "STOP" => Some(TerminatorKind::Stop),
            "RETURN" => Some(TerminatorKind::Return),
            "REVERT" => Some(TerminatorKind::Revert),
            "SELFDESTRUCT" => Some(TerminatorKind::SelfDestruct),
            "INVALID" => Some(TerminatorKind::Invalid),
            m if m.starts_with("INVALID_") => Some(TerminatorKind::Invalid),
            _ => None,
        }
    }
}

/// Wire record for `disasm --json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub offset: usize,
    pub mnemonic: String,
    pub push_data_hex: Option<String>,
}

impl From<&Instruction> for InstructionRecord {
    fn from(ins: &Instruction) -> Self {
        InstructionRecord {
            offset: ins.offset,
            mnemonic: ins.mnemonic.clone(),
            push_data_hex: ins.push_data.as_ref().map(hex::encode),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminatorKind {
    Jump,
    Jumpi,
    Stop,
    Return,
    Revert,
    SelfDestruct,
    Invalid,
    Fallthrough,
}

impl TerminatorKind {
    pub const ALL: [TerminatorKind; 8] = [
        TerminatorKind::Jump,
        TerminatorKind::Jumpi,
        TerminatorKind::Stop,
        TerminatorKind::Return,
        TerminatorKind::Revert,
        TerminatorKind::SelfDestruct,
        TerminatorKind::Invalid,
        TerminatorKind::Fallthrough,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Execution halts; the block has no successors.
    pub fn halts(self) -> bool {
        matches!(
            self,
            TerminatorKind::Stop
                | TerminatorKind::Return
                | TerminatorKind::Revert
                | TerminatorKind::SelfDestruct
                | TerminatorKind::Invalid
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasicBlock {
    pub id: usize,
    pub start_offset: usize,
    /// Exclusive: offset one past the last byte of the block.
    pub end_offset: usize,
    pub instructions: Vec<Instruction>,
    pub terminator_kind: TerminatorKind,
}

impl BasicBlock {
    pub fn contains(&self, mnemonic: &str) -> bool {
        self.instructions.iter().any(|i| i.mnemonic == mnemonic)
    }

    pub fn contains_any(&self, mnemonics: &[&str]) -> bool {
        self.instructions
            .iter()
            .any(|i| mnemonics.contains(&i.mnemonic.as_str()))
    }

    pub fn starts_with_jumpdest(&self) -> bool {
        self.instructions.first().is_some_and(|i| i.is("JUMPDEST"))
    }

    pub fn last(&self) -> &Instruction {
        self.instructions.last().expect("blocks are never empty")
    }
}

#[derive(Debug, Clone)]
pub struct DecodeOptions<'a> {
    pub strip_metadata: bool,
    pub table: &'a OpcodeTable,
}

impl Default for DecodeOptions<'static> {
    fn default() -> Self {
        DecodeOptions {
            strip_metadata: true,
            table: opcodes::shanghai(),
        }
    }
}

/// Parses hex text, optionally `0x`-prefixed, into bytes.
pub fn parse_hex(text: &str) -> Result<Vec<u8>, DisasmError> {
    let (prefix, body) = match text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
        Some(rest) => (2, rest),
        None => (0, text),
    };
    if let Some((i, c)) = body.char_indices().find(|(_, c)| !c.is_ascii_hexdigit()) {
        return Err(DisasmError::MalformedInput {
            position: prefix + i,
            reason: format!("non-hex character {c:?}"),
        });
    }
    if body.len() % 2 != 0 {
        return Err(DisasmError::MalformedInput {
            position: prefix + body.len(),
            reason: "odd number of hex digits".to_string(),
        });
    }
    Ok(hex::decode(body).expect("validated above"))
}

/// Splits off a trailing Solidity CBOR metadata section, if one is present.
pub fn strip_metadata(code: &[u8]) -> (&[u8], Option<&[u8]>) {
    const MARKERS: [&[u8]; 5] = [b"ipfs", b"bzzr0", b"bzzr1", b"solc", b"experimental"];
    if code.len() < 2 {
        return (code, None);
    }
    let n = code.len();
    let cbor_len = u16::from_be_bytes([code[n - 2], code[n - 1]]) as usize;
    if cbor_len == 0 || cbor_len + 2 > n {
        return (code, None);
    }
    let start = n - 2 - cbor_len;
    let cbor = &code[start..n - 2];
    let is_map = (0xa1..=0xa5).contains(&cbor[0]);
    let has_marker = MARKERS
        .iter()
        .any(|m| cbor.windows(m.len()).any(|w| w == *m));
    if is_map && has_marker {
        (&code[..start], Some(&code[start..]))
    } else {
        (code, None)
    }
}

/// Decodes hex bytecode with the default options (Shanghai, strip metadata).
pub fn decode(bytecode_hex: &str) -> Result<Vec<Instruction>, DisasmError> {
    decode_with(bytecode_hex, &DecodeOptions::default())
}

pub fn decode_with(
    bytecode_hex: &str,
    options: &DecodeOptions<'_>,
) -> Result<Vec<Instruction>, DisasmError> {
    let bytes = parse_hex(bytecode_hex)?;
    let code = if options.strip_metadata {
        strip_metadata(&bytes).0
    } else {
        &bytes[..]
    };
    Ok(decode_bytes(code, options.table))
}

/// Total decoder over raw bytes.
pub fn decode_bytes(code: &[u8], table: &OpcodeTable) -> Vec<Instruction> {
    let mut out = Vec::new();
    let mut pc = 0;
    while pc < code.len() {
        let opcode = code[pc];
        let info = table.get(opcode);
        let (push_data, padded) = if info.immediate > 0 {
            let begin = (pc + 1).min(code.len());
            let end = (pc + 1 + info.immediate).min(code.len());
            let mut data = code[begin..end].to_vec();
            let padded = info.immediate - data.len();
            data.resize(info.immediate, 0);
            (Some(data), padded)
        } else {
            (None, 0)
        };
        out.push(Instruction {
            offset: pc,
            opcode,
            mnemonic: info.mnemonic.clone(),
            push_data,
            padded,
        });
        pc += 1 + info.immediate;
    }
    out
}

/// Re-serializes instructions to bytes, dropping any end-of-code padding.
pub fn encode(instructions: &[Instruction]) -> Vec<u8> {
    let mut out = Vec::new();
    for ins in instructions {
        out.push(ins.opcode);
        if let Some(data) = &ins.push_data {
            out.extend_from_slice(&data[..data.len() - ins.padded]);
        }
    }
    out
}

/// Splits an instruction stream into basic blocks.
///
/// Leaders are offset 0, every JUMPDEST and every instruction following a
/// terminator.
pub fn segment_blocks(instructions: &[Instruction]) -> Vec<BasicBlock> {
    let mut blocks = Vec::new();
    let mut current: Vec<Instruction> = Vec::new();

    let close = |current: &mut Vec<Instruction>, blocks: &mut Vec<BasicBlock>| {
        if current.is_empty() {
            return;
        }
        let instructions = std::mem::take(current);
        let last = instructions.last().expect("non-empty");
        let terminator_kind = last.terminator().unwrap_or(TerminatorKind::Fallthrough);
        let start_offset = instructions[0].offset;
        let end_offset = last.offset + last.byte_len();
        blocks.push(BasicBlock {
            id: blocks.len(),
            start_offset,
            end_offset,
            instructions,
            terminator_kind,
        });
    };

    for ins in instructions {
        if ins.is("JUMPDEST") {
            close(&mut current, &mut blocks);
        }
        let ends = ins.terminator().is_some();
        current.push(ins.clone());
        if ends {
            close(&mut current, &mut blocks);
        }
    }
    close(&mut current, &mut blocks);
    blocks
}

mod hex_bytes_opt {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(bytes) => s.serialize_str(&hex::encode(bytes)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        let s: Option<String> = Option::deserialize(d)?;
        s.map(|s| hex::decode(s).map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(ins: &[Instruction]) -> Vec<&str> {
        ins.iter().map(|i| i.mnemonic.as_str()).collect()
    }

    #[test]
    fn decodes_add_program() {
        let ins = decode("0x6001600101").unwrap();
        assert_eq!(names(&ins), ["PUSH1", "PUSH1", "ADD"]);
        assert_eq!(ins.iter().map(|i| i.offset).collect::<Vec<_>>(), [0, 2, 4]);
        assert_eq!(ins[0].push_data.as_deref(), Some(&[0x01u8][..]));
        assert_eq!(ins[2].push_data, None);
    }

    #[test]
    fn empty_and_stop() {
        assert!(decode("").unwrap().is_empty());
        assert!(decode("0x").unwrap().is_empty());
        let ins = decode("0x00").unwrap();
        assert_eq!(names(&ins), ["STOP"]);
        assert_eq!(ins[0].offset, 0);
    }

    #[test]
    fn malformed_input_reports_position() {
        assert_eq!(
            decode("0x60g1"),
            Err(DisasmError::MalformedInput {
                position: 4,
                reason: "non-hex character 'g'".into()
            })
        );
        match decode("600") {
            Err(DisasmError::MalformedInput { position, .. }) => assert_eq!(position, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_opcode_mnemonic() {
        let ins = decode("0x0c").unwrap();
        assert_eq!(ins[0].mnemonic, "INVALID_0x0c");
        assert_eq!(ins[0].terminator(), Some(TerminatorKind::Invalid));
    }

    #[test]
    fn truncated_push_is_padded_and_flagged() {
        let ins = decode("0x6101").unwrap();
        assert_eq!(ins.len(), 1);
        assert_eq!(ins[0].push_data.as_deref(), Some(&[0x01u8, 0x00][..]));
        assert_eq!(ins[0].padded, 1);
        assert_eq!(encode(&ins), vec![0x61, 0x01]);
        let bare = decode("0x7f").unwrap();
        assert_eq!(bare[0].padded, 32);
        assert_eq!(bare[0].push_data.as_ref().unwrap().len(), 32);
    }

    #[test]
    fn push0_has_no_immediate() {
        let ins = decode("0x5f00").unwrap();
        assert_eq!(names(&ins), ["PUSH0", "STOP"]);
        assert_eq!(ins[0].push_data, None);
        assert_eq!(ins[0].push_value(), Some(0));
    }

    #[test]
    fn metadata_trailer_is_stripped_by_default() {
        // 0.5.x style trailer: a2 65 "bzzr1" 58 20 <32 bytes> 64 "solc" 43 00 05 11, length 0x0032
        let mut code = vec![0x60, 0x80, 0x56, 0xfe];
        let mut cbor = vec![0xa2, 0x65];
        cbor.extend_from_slice(b"bzzr1");
        cbor.extend_from_slice(&[0x58, 0x20]);
        cbor.extend_from_slice(&[0x11; 32]);
        cbor.push(0x64);
        cbor.extend_from_slice(b"solc");
        cbor.extend_from_slice(&[0x43, 0x00, 0x05, 0x11]);
        let len = cbor.len() as u16;
        code.extend_from_slice(&cbor);
        code.extend_from_slice(&len.to_be_bytes());
        let hexed = hex::encode(&code);
        let stripped = decode(&hexed).unwrap();
        assert_eq!(names(&stripped), ["PUSH1", "JUMP", "INVALID"]);
        let kept = decode_with(
            &hexed,
            &DecodeOptions {
                strip_metadata: false,
                ..DecodeOptions::default()
            },
        )
        .unwrap();
        assert!(kept.len() > 3);
        assert_eq!(encode(&kept), code);
    }

    #[test]
    fn segments_jump_program() {
        // PUSH1 0x03 JUMP JUMPDEST STOP
        let blocks = segment_blocks(&decode("0x6003565b00").unwrap());
        assert_eq!(blocks.len(), 2);
        assert_eq!(names(&blocks[0].instructions), ["PUSH1", "JUMP"]);
        assert_eq!(blocks[0].terminator_kind, TerminatorKind::Jump);
        assert_eq!(names(&blocks[1].instructions), ["JUMPDEST", "STOP"]);
        assert_eq!(blocks[1].terminator_kind, TerminatorKind::Stop);
        assert_eq!((blocks[1].start_offset, blocks[1].end_offset), (3, 5));
    }

    #[test]
    fn single_stop_block() {
        let blocks = segment_blocks(&decode("0x00").unwrap());
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].terminator_kind, TerminatorKind::Stop);
    }

    #[test]
    fn trailing_block_without_terminator_falls_through() {
        let blocks = segment_blocks(&decode("0x600160015b6001").unwrap());
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].terminator_kind, TerminatorKind::Fallthrough);
        assert_eq!(blocks[1].terminator_kind, TerminatorKind::Fallthrough);
    }

    fn check_partition(code: &[u8], blocks: &[BasicBlock]) {
        let mut expected_start = 0;
        let mut total = 0;
        for (i, b) in blocks.iter().enumerate() {
            assert_eq!(b.id, i);
            assert_eq!(b.start_offset, expected_start);
            assert!(!b.instructions.is_empty());
            for (k, ins) in b.instructions.iter().enumerate() {
                let last = k + 1 == b.instructions.len();
                if !last {
                    assert!(ins.terminator().is_none());
                }
                if k > 0 {
                    assert!(!ins.is("JUMPDEST"));
                }
                total += ins.byte_len();
            }
            expected_start = b.end_offset;
        }
        assert_eq!(expected_start, code.len());
        assert_eq!(total, code.len());
    }

    proptest! {
        #[test]
        fn random_bytes_decode_roundtrip_and_partition(code in proptest::collection::vec(any::<u8>(), 0..512)) {
            let ins = decode_bytes(&code, opcodes::shanghai());
            prop_assert_eq!(encode(&ins), code.clone());
            for w in ins.windows(2) {
                prop_assert_eq!(w[1].offset, w[0].offset + 1 + w[0].push_data.as_ref().map_or(0, Vec::len));
            }
            let blocks = segment_blocks(&ins);
            check_partition(&code, &blocks);
        }
    }
}
