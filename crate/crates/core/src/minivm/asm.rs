//! A small label-resolving assembler plus a mnemonic text parser.

use std::collections::BTreeMap;

use super::opcode as op;
use crate::types::{Address, Word};

/// Bytecode builder with forward labels. Jumps always use `PUSH2 <label>`.
#[derive(Debug, Clone, Default)]
pub struct Asm {
    code: Vec<u8>,
    labels: BTreeMap<String, usize>,
    fixups: Vec<(usize, String)>,
}

impl Asm {
    pub fn new() -> Asm {
        Asm::default()
    }

    pub fn len(&self) -> usize {
        self.code.len()
    }

    pub fn is_empty(&self) -> bool {
        self.code.is_empty()
    }

    pub fn op(&mut self, byte: u8) -> &mut Self {
        self.code.push(byte);
        self
    }

    pub fn ops(&mut self, bytes: &[u8]) -> &mut Self {
        self.code.extend_from_slice(bytes);
        self
    }

    /// Pushes `v` with the shortest PUSHn that holds it (PUSH1 for zero).
    pub fn push(&mut self, v: Word) -> &mut Self {
        let n = v.bits().div_ceil(8).max(1);
        let be = v.to_big_endian();
        self.code.push(op::PUSH1 + (n as u8 - 1));
        self.code.extend_from_slice(&be[32 - n..]);
        self
    }

    pub fn push_u64(&mut self, v: u64) -> &mut Self {
        self.push(Word::from(v))
    }

    /// Pushes exactly `n` bytes (PUSHn) of `v`.
    pub fn push_n(&mut self, n: usize, v: Word) -> &mut Self {
        assert!((1..=32).contains(&n));
        let be = v.to_big_endian();
        self.code.push(op::PUSH1 + (n as u8 - 1));
        self.code.extend_from_slice(&be[32 - n..]);
        self
    }

    pub fn push_addr(&mut self, a: Address) -> &mut Self {
        self.code.push(op::PUSH20);
        self.code.extend_from_slice(&a.0);
        self
    }

    pub fn push_selector(&mut self, sel: [u8; 4]) -> &mut Self {
        self.code.push(op::PUSH4);
        self.code.extend_from_slice(&sel);
        self
    }

    /// Defines `name` here and emits a JUMPDEST.
    pub fn label(&mut self, name: &str) -> &mut Self {
        let prev = self.labels.insert(name.to_string(), self.code.len());
        assert!(prev.is_none(), "duplicate label {name}");
        self.code.push(op::JUMPDEST);
        self
    }

    /// Emits `PUSH2 <label>`.
    pub fn push_label(&mut self, name: &str) -> &mut Self {
        self.code.push(op::PUSH2);
        self.fixups.push((self.code.len(), name.to_string()));
        self.code.extend_from_slice(&[0, 0]);
        self
    }

    pub fn jump(&mut self, name: &str) -> &mut Self {
        self.push_label(name).op(op::JUMP)
    }

    /// Emits `PUSH2 <label> JUMPI`; the condition must already be on the stack.
    pub fn jumpi(&mut self, name: &str) -> &mut Self {
        self.push_label(name).op(op::JUMPI)
    }

    pub fn offset_of(&self, name: &str) -> Option<usize> {
        self.labels.get(name).copied()
    }

    pub fn build(&self) -> Vec<u8> {
        let mut code = self.code.clone();
        for (at, name) in &self.fixups {
            let dest = *self
                .labels
                .get(name)
                .unwrap_or_else(|| panic!("undefined label {name}"));
            assert!(dest <= u16::MAX as usize, "label {name} out of PUSH2 range");
            code[*at] = (dest >> 8) as u8;
            code[*at + 1] = dest as u8;
        }
        code
    }

    // ---- common idioms ----

    /// `revert(0, 0)`.
    pub fn revert0(&mut self) -> &mut Self {
        self.push_u64(0).push_u64(0).op(op::REVERT)
    }

    /// Reverts unless the top of stack is nonzero (consumes it).
    pub fn require(&mut self, ok_label: &str) -> &mut Self {
        self.jumpi(ok_label).revert0().label(ok_label)
    }

    /// Loads calldata argument `k` (after the selector).
    pub fn arg(&mut self, k: usize) -> &mut Self {
        self.push_u64(4 + 32 * k as u64).op(op::CALLDATALOAD)
    }

    /// Loads calldata argument `k` masked to an address.
    pub fn arg_addr(&mut self, k: usize) -> &mut Self {
        self.arg(k).push(crate::types::address_mask()).op(op::AND)
    }

    /// Returns the single word on top of the stack.
    pub fn return_top(&mut self) -> &mut Self {
        self.push_u64(0)
            .op(op::MSTORE)
            .push_u64(32)
            .push_u64(0)
            .op(op::RETURN)
    }

    /// Solidity-style dispatcher: one arm per (selector, label), then the fallback label.
    pub fn dispatcher(&mut self, arms: &[([u8; 4], &str)], fallback: &str) -> &mut Self {
        self.push_u64(0).op(op::CALLDATALOAD).push_u64(0xe0).op(op::SHR);
        for (sel, label) in arms {
            self.op(op::DUP1).push_selector(*sel).op(op::EQ).jumpi(label);
        }
        self.jump(fallback)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AsmError {
    #[error("unknown mnemonic {0:?}")]
    UnknownMnemonic(String),
    #[error("missing immediate after {0}")]
    MissingImmediate(String),
    #[error("bad immediate {0:?}")]
    BadImmediate(String),
}

/// Parses whitespace-separated mnemonics, e.g. `PUSH1 0x2A PUSH1 0x00 MSTORE`.
/// PUSHn immediates are hex (`0x..`) or decimal and are left-padded to n bytes.
pub fn assemble(text: &str) -> Result<Vec<u8>, AsmError> {
    let mut out = Vec::new();
    let mut toks = text.split_whitespace();
    while let Some(t) = toks.next() {
        let byte = op::from_mnemonic(t).ok_or_else(|| AsmError::UnknownMnemonic(t.to_string()))?;
        out.push(byte);
        let n = op::immediate_len(byte);
        if n > 0 {
            let imm = toks.next().ok_or_else(|| AsmError::MissingImmediate(t.to_string()))?;
            let v = crate::types::parse_word(imm).map_err(|_| AsmError::BadImmediate(imm.to_string()))?;
            if v.bits() > n * 8 {
                return Err(AsmError::BadImmediate(imm.to_string()));
            }
            let be = v.to_big_endian();
            out.extend_from_slice(&be[32 - n..]);
        }
    }
    Ok(out)
}

/// Renders bytecode as mnemonic text, one instruction per line with its pc.
pub fn disassemble(code: &[u8]) -> String {
    let mut out = String::new();
    let mut pc = 0;
    while pc < code.len() {
        let b = code[pc];
        let n = op::immediate_len(b);
        match op::mnemonic(b) {
            Some(name) if n > 0 => {
                let end = (pc + 1 + n).min(code.len());
                out.push_str(&format!("{pc:04x} {name} 0x{}\n", hex::encode(&code[pc + 1..end])));
            }
            Some(name) => out.push_str(&format!("{pc:04x} {name}\n")),
            None => out.push_str(&format!("{pc:04x} INVALID(0x{b:02x})\n")),
        }
        pc += 1 + n;
    }
    out
}
