//! Tiny two-pass assembler for opcode templates.
//!
//! Syntax: whitespace-separated mnemonics; `PUSHn 0x..` takes the next token
//! as its immediate; `name:` defines a label at the current offset and
//! `@name` emits `PUSH2 <offset of name>`; `;` starts a comment.

use std::collections::HashMap;

use super::opcodes::{self, OpcodeTable};
use super::DisasmError;

enum Item {
    Byte(u8),
    Bytes(Vec<u8>),
    LabelRef(String),
}

pub fn assemble(source: &str) -> Result<Vec<u8>, DisasmError> {
    assemble_with(source, opcodes::shanghai())
}

pub fn assemble_with(source: &str, table: &OpcodeTable) -> Result<Vec<u8>, DisasmError> {
    let tokens: Vec<&str> = source
        .lines()
        .map(|l| l.split(';').next().unwrap_or(""))
        .flat_map(str::split_whitespace)
        .collect();

    let mut items = Vec::new();
    let mut labels = HashMap::new();
    let mut offset = 0usize;
    let mut iter = tokens.into_iter();
    while let Some(tok) = iter.next() {
        if let Some(name) = tok.strip_suffix(':') {
            if labels.insert(name.to_string(), offset).is_some() {
                return Err(DisasmError::Assembly(format!("duplicate label {name}")));
            }
            continue;
        }
        if let Some(name) = tok.strip_prefix('@') {
            items.push(Item::Byte(0x61));
            items.push(Item::LabelRef(name.to_string()));
            offset += 3;
            continue;
        }
        let op = table
            .opcode_of(tok)
            .ok_or_else(|| DisasmError::Assembly(format!("unknown mnemonic {tok}")))?;
        items.push(Item::Byte(op));
        offset += 1;
        let width = table.get(op).immediate;
        if width > 0 {
            let value = iter
                .next()
                .ok_or_else(|| DisasmError::Assembly(format!("{tok} needs an immediate")))?;
            let digits = value.trim_start_matches("0x");
            let digits = if digits.len() % 2 == 1 {
                format!("0{digits}")
            } else {
                digits.to_string()
            };
            let raw = hex::decode(&digits)
                .map_err(|_| DisasmError::Assembly(format!("bad immediate {value}")))?;
            if raw.len() > width {
                return Err(DisasmError::Assembly(format!(
                    "immediate {value} does not fit {tok}"
                )));
            }
            let mut bytes = vec![0u8; width - raw.len()];
            bytes.extend_from_slice(&raw);
            items.push(Item::Bytes(bytes));
            offset += width;
        }
    }

    let mut out = Vec::with_capacity(offset);
    for item in items {
        match item {
            Item::Byte(b) => out.push(b),
            Item::Bytes(bs) => out.extend_from_slice(&bs),
            Item::LabelRef(name) => {
                let target = *labels
                    .get(&name)
                    .ok_or_else(|| DisasmError::Assembly(format!("undefined label {name}")))?;
                let target = u16::try_from(target).map_err(|_| {
                    DisasmError::Assembly(format!("label {name} out of PUSH2 range"))
                })?;
                out.extend_from_slice(&target.to_be_bytes());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_resolve_to_offsets() {
        let code = assemble("@end JUMP end: JUMPDEST STOP").unwrap();
        assert_eq!(code, vec![0x61, 0x00, 0x04, 0x56, 0x5b, 0x00]);
    }

    #[test]
    fn push_immediates_are_left_padded() {
        let code = assemble("PUSH2 0x1 PUSH1 0xff ADD ; comment\nSTOP").unwrap();
        assert_eq!(code, vec![0x61, 0x00, 0x01, 0x60, 0xff, 0x01, 0x00]);
    }

    #[test]
    fn errors() {
        assert!(assemble("FOO").is_err());
        assert!(assemble("PUSH1").is_err());
        assert!(assemble("PUSH1 0x1234").is_err());
        assert!(assemble("@nowhere JUMP").is_err());
    }
}
