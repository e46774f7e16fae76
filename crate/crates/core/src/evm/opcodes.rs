//! Static EVM opcode table pinned to the Shanghai revision.
//!
//! Later forks can be layered on top with [`OpcodeTable::with_overrides`],
//! which reads a small JSON file:
//!
//! ```json
//! { "fork": "cancun",
//!   "opcodes": [ { "opcode": "0x5c", "mnemonic": "TLOAD" },
//!                { "opcode": "0x5e", "mnemonic": "MCOPY", "immediate": 0 } ] }
//! ```

use std::path::Path;

use serde::Deserialize;

use super::DisasmError;

/// Coarse instruction families used for block features and pattern rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpCategory {
    Arithmetic,
    Comparison,
    Memory,
    Storage,
    CallFamily,
    JumpFamily,
    Push,
    Other,
}

impl OpCategory {
    pub const ALL: [OpCategory; 8] = [
        OpCategory::Arithmetic,
        OpCategory::Comparison,
        OpCategory::Memory,
        OpCategory::Storage,
        OpCategory::CallFamily,
        OpCategory::JumpFamily,
        OpCategory::Push,
        OpCategory::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpcodeInfo {
    pub mnemonic: String,
    /// Number of immediate bytes following the opcode (PUSHn carries n).
    pub immediate: usize,
    pub category: OpCategory,
    pub defined: bool,
}

const SHANGHAI: &[(u8, &str)] = &[
    (0x00, "STOP"),
    (0x01, "ADD"),
    (0x02, "MUL"),
    (0x03, "SUB"),
    (0x04, "DIV"),
    (0x05, "SDIV"),
    (0x06, "MOD"),
    (0x07, "SMOD"),
    (0x08, "ADDMOD"),
    (0x09, "MULMOD"),
    (0x0a, "EXP"),
    (0x0b, "SIGNEXTEND"),
    (0x10, "LT"),
    (0x11, "GT"),
    (0x12, "SLT"),
    (0x13, "SGT"),
    (0x14, "EQ"),
    (0x15, "ISZERO"),
    (0x16, "AND"),
    (0x17, "OR"),
    (0x18, "XOR"),
    (0x19, "NOT"),
    (0x1a, "BYTE"),
    (0x1b, "SHL"),
    (0x1c, "SHR"),
    (0x1d, "SAR"),
    (0x20, "KECCAK256"),
    (0x30, "ADDRESS"),
    (0x31, "BALANCE"),
    (0x32, "ORIGIN"),
    (0x33, "CALLER"),
    (0x34, "CALLVALUE"),
    (0x35, "CALLDATALOAD"),
    (0x36, "CALLDATASIZE"),
    (0x37, "CALLDATACOPY"),
    (0x38, "CODESIZE"),
    (0x39, "CODECOPY"),
    (0x3a, "GASPRICE"),
    (0x3b, "EXTCODESIZE"),
    (0x3c, "EXTCODECOPY"),
    (0x3d, "RETURNDATASIZE"),
    (0x3e, "RETURNDATACOPY"),
    (0x3f, "EXTCODEHASH"),
    (0x40, "BLOCKHASH"),
    (0x41, "COINBASE"),
    (0x42, "TIMESTAMP"),
    (0x43, "NUMBER"),
    (0x44, "PREVRANDAO"),
    (0x45, "GASLIMIT"),
    (0x46, "CHAINID"),
    (0x47, "SELFBALANCE"),
    (0x48, "BASEFEE"),
    (0x50, "POP"),
    (0x51, "MLOAD"),
    (0x52, "MSTORE"),
    (0x53, "MSTORE8"),
    (0x54, "SLOAD"),
    (0x55, "SSTORE"),
    (0x56, "JUMP"),
    (0x57, "JUMPI"),
    (0x58, "PC"),
    (0x59, "MSIZE"),
    (0x5a, "GAS"),
    (0x5b, "JUMPDEST"),
    (0x5f, "PUSH0"),
    (0xa0, "LOG0"),
    (0xa1, "LOG1"),
    (0xa2, "LOG2"),
    (0xa3, "LOG3"),
    (0xa4, "LOG4"),
    (0xf0, "CREATE"),
    (0xf1, "CALL"),
    (0xf2, "CALLCODE"),
    (0xf3, "RETURN"),
    (0xf4, "DELEGATECALL"),
    (0xf5, "CREATE2"),
    (0xfa, "STATICCALL"),
    (0xfd, "REVERT"),
    (0xfe, "INVALID"),
    (0xff, "SELFDESTRUCT"),
];

fn category_of(mnemonic: &str) -> OpCategory {
    match mnemonic {
        "ADD" | "MUL" | "SUB" | "DIV" | "SDIV" | "MOD" | "SMOD" | "ADDMOD" | "MULMOD" | "EXP"
        | "SIGNEXTEND" | "AND" | "OR" | "XOR" | "NOT" | "BYTE" | "SHL" | "SHR" | "SAR" => {
            OpCategory::Arithmetic
        }
        "LT" | "GT" | "SLT" | "SGT" | "EQ" | "ISZERO" => OpCategory::Comparison,
        "MLOAD" | "MSTORE" | "MSTORE8" | "MSIZE" | "KECCAK256" | "CALLDATACOPY" | "CODECOPY"
        | "EXTCODECOPY" | "RETURNDATACOPY" | "MCOPY" => OpCategory::Memory,
        "SLOAD" | "SSTORE" | "TLOAD" | "TSTORE" => OpCategory::Storage,
        "CALL" | "CALLCODE" | "DELEGATECALL" | "STATICCALL" | "CREATE" | "CREATE2" => {
            OpCategory::CallFamily
        }
        "JUMP" | "JUMPI" | "JUMPDEST" => OpCategory::JumpFamily,
        m if m.starts_with("PUSH") => OpCategory::Push,
        _ => OpCategory::Other,
    }
}

/// 256-entry opcode lookup table.
#[derive(Debug, Clone)]
pub struct OpcodeTable {
    fork: String,
    entries: Vec<OpcodeInfo>,
}

#[derive(Deserialize)]
struct OverrideFile {
    fork: String,
    opcodes: Vec<OverrideEntry>,
}

#[derive(Deserialize)]
struct OverrideEntry {
    opcode: String,
    mnemonic: String,
    #[serde(default)]
    immediate: usize,
}

impl OpcodeTable {
    pub fn shanghai() -> Self {
        let mut entries: Vec<OpcodeInfo> = (0..=255u8)
            .map(|b| OpcodeInfo {
                mnemonic: format!("INVALID_0x{b:02x}"),
                immediate: 0,
                category: OpCategory::Other,
                defined: false,
            })
            .collect();
        for &(byte, name) in SHANGHAI {
            entries[byte as usize] = OpcodeInfo {
                mnemonic: name.to_string(),
                immediate: 0,
                category: category_of(name),
                defined: true,
            };
        }
        for n in 1..=32u8 {
            entries[(0x5f + n) as usize] = OpcodeInfo {
                mnemonic: format!("PUSH{n}"),
                immediate: n as usize,
                category: OpCategory::Push,
                defined: true,
            };
        }
        for n in 1..=16u8 {
            let dup = format!("DUP{n}");
            let swap = format!("SWAP{n}");
            entries[(0x7f + n) as usize] = OpcodeInfo {
                mnemonic: dup,
                immediate: 0,
                category: OpCategory::Other,
                defined: true,
            };
            entries[(0x8f + n) as usize] = OpcodeInfo {
                mnemonic: swap,
                immediate: 0,
                category: OpCategory::Other,
                defined: true,
            };
        }
        OpcodeTable {
            fork: "shanghai".to_string(),
            entries,
        }
    }

    /// Applies a JSON override file on top of this table.
    pub fn with_overrides(mut self, path: &Path) -> Result<Self, DisasmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DisasmError::Override(format!("{}: {e}", path.display())))?;
        let file: OverrideFile =
            serde_json::from_str(&text).map_err(|e| DisasmError::Override(e.to_string()))?;
        for entry in file.opcodes {
            let digits = entry.opcode.trim_start_matches("0x");
            let byte = u8::from_str_radix(digits, 16).map_err(|_| {
                DisasmError::Override(format!("bad opcode byte {:?}", entry.opcode))
            })?;
            if entry.immediate > 32 {
                return Err(DisasmError::Override(format!(
                    "immediate size {} exceeds 32",
                    entry.immediate
                )));
            }
            let category = category_of(&entry.mnemonic);
            self.entries[byte as usize] = OpcodeInfo {
                mnemonic: entry.mnemonic,
                immediate: entry.immediate,
                category,
                defined: true,
            };
        }
        self.fork = file.fork;
        Ok(self)
    }

    pub fn fork(&self) -> &str {
        &self.fork
    }

    pub fn get(&self, opcode: u8) -> &OpcodeInfo {
        &self.entries[opcode as usize]
    }

    /// Reverse lookup used by the assembler.
    pub fn opcode_of(&self, mnemonic: &str) -> Option<u8> {
        self.entries
            .iter()
            .position(|e| e.defined && e.mnemonic.eq_ignore_ascii_case(mnemonic))
            .map(|i| i as u8)
    }
}

impl Default for OpcodeTable {
    fn default() -> Self {
        Self::shanghai()
    }
}

pub fn shanghai() -> &'static OpcodeTable {
    use std::sync::OnceLock;
    static TABLE: OnceLock<OpcodeTable> = OnceLock::new();
    TABLE.get_or_init(OpcodeTable::shanghai)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defined_opcode_count() {
        let t = OpcodeTable::shanghai();
        let defined = (0..=255u8).filter(|&b| t.get(b).defined).count();
        // 80 named entries + 32 PUSHn + 16 DUP + 16 SWAP
        assert_eq!(defined, SHANGHAI.len() + 64);
        assert_eq!(SHANGHAI.len(), 80);
    }

    #[test]
    fn cancun_opcodes_are_undefined() {
        let t = OpcodeTable::shanghai();
        for b in [0x49u8, 0x4a, 0x5c, 0x5d, 0x5e] {
            assert!(!t.get(b).defined);
            assert_eq!(t.get(b).mnemonic, format!("INVALID_0x{b:02x}"));
        }
    }

    #[test]
    fn override_file_extends_table() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cancun.json");
        std::fs::write(
            &path,
            r#"{"fork":"cancun","opcodes":[{"opcode":"0x5c","mnemonic":"TLOAD"},{"opcode":"0x5e","mnemonic":"MCOPY"}]}"#,
        )
        .unwrap();
        let t = OpcodeTable::shanghai().with_overrides(&path).unwrap();
        assert_eq!(t.fork(), "cancun");
        assert_eq!(t.get(0x5c).mnemonic, "TLOAD");
        assert_eq!(t.get(0x5c).category, OpCategory::Storage);
        assert_eq!(t.get(0x5e).category, OpCategory::Memory);
    }
}
