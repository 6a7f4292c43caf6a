//! The supported opcode subset. Byte values follow the Ethereum yellow paper.

pub const STOP: u8 = 0x00;
pub const ADD: u8 = 0x01;
pub const MUL: u8 = 0x02;
pub const SUB: u8 = 0x03;
pub const DIV: u8 = 0x04;
pub const SDIV: u8 = 0x05;
pub const MOD: u8 = 0x06;
pub const SMOD: u8 = 0x07;
pub const ADDMOD: u8 = 0x08;
pub const MULMOD: u8 = 0x09;
pub const EXP: u8 = 0x0a;
pub const SIGNEXTEND: u8 = 0x0b;
pub const LT: u8 = 0x10;
pub const GT: u8 = 0x11;
pub const SLT: u8 = 0x12;
pub const SGT: u8 = 0x13;
pub const EQ: u8 = 0x14;
pub const ISZERO: u8 = 0x15;
pub const AND: u8 = 0x16;
pub const OR: u8 = 0x17;
pub const XOR: u8 = 0x18;
pub const NOT: u8 = 0x19;
pub const BYTE: u8 = 0x1a;
pub const SHL: u8 = 0x1b;
pub const SHR: u8 = 0x1c;
pub const SAR: u8 = 0x1d;
pub const SHA3: u8 = 0x20;
pub const ADDRESS: u8 = 0x30;
pub const BALANCE: u8 = 0x31;
pub const ORIGIN: u8 = 0x32;
pub const CALLER: u8 = 0x33;
pub const CALLVALUE: u8 = 0x34;
pub const CALLDATALOAD: u8 = 0x35;
pub const CALLDATASIZE: u8 = 0x36;
pub const CALLDATACOPY: u8 = 0x37;
pub const RETURNDATASIZE: u8 = 0x3d;
pub const RETURNDATACOPY: u8 = 0x3e;
pub const POP: u8 = 0x50;
pub const MLOAD: u8 = 0x51;
pub const MSTORE: u8 = 0x52;
pub const MSTORE8: u8 = 0x53;
pub const SLOAD: u8 = 0x54;
pub const SSTORE: u8 = 0x55;
pub const JUMP: u8 = 0x56;
pub const JUMPI: u8 = 0x57;
pub const PC: u8 = 0x58;
pub const GAS: u8 = 0x5a;
pub const JUMPDEST: u8 = 0x5b;
pub const PUSH1: u8 = 0x60;
pub const PUSH2: u8 = 0x61;
pub const PUSH4: u8 = 0x63;
pub const PUSH20: u8 = 0x73;
pub const PUSH32: u8 = 0x7f;
pub const DUP1: u8 = 0x80;
pub const DUP16: u8 = 0x8f;
pub const SWAP1: u8 = 0x90;
pub const SWAP16: u8 = 0x9f;
pub const LOG0: u8 = 0xa0;
pub const LOG4: u8 = 0xa4;
pub const CREATE: u8 = 0xf0;
pub const CALL: u8 = 0xf1;
pub const RETURN: u8 = 0xf3;
pub const DELEGATECALL: u8 = 0xf4;
pub const STATICCALL: u8 = 0xfa;
pub const REVERT: u8 = 0xfd;
pub const INVALID: u8 = 0xfe;
pub const SELFDESTRUCT: u8 = 0xff;

const FIXED: &[(&str, u8)] = &[
    ("STOP", STOP),
    ("ADD", ADD),
    ("MUL", MUL),
    ("SUB", SUB),
    ("DIV", DIV),
    ("SDIV", SDIV),
    ("MOD", MOD),
    ("SMOD", SMOD),
    ("ADDMOD", ADDMOD),
    ("MULMOD", MULMOD),
    ("EXP", EXP),
    ("SIGNEXTEND", SIGNEXTEND),
    ("LT", LT),
    ("GT", GT),
    ("SLT", SLT),
    ("SGT", SGT),
    ("EQ", EQ),
    ("ISZERO", ISZERO),
    ("AND", AND),
    ("OR", OR),
    ("XOR", XOR),
    ("NOT", NOT),
    ("BYTE", BYTE),
    ("SHL", SHL),
    ("SHR", SHR),
    ("SAR", SAR),
    ("SHA3", SHA3),
    ("ADDRESS", ADDRESS),
    ("BALANCE", BALANCE),
    ("ORIGIN", ORIGIN),
    ("CALLER", CALLER),
    ("CALLVALUE", CALLVALUE),
    ("CALLDATALOAD", CALLDATALOAD),
    ("CALLDATASIZE", CALLDATASIZE),
    ("CALLDATACOPY", CALLDATACOPY),
    ("RETURNDATASIZE", RETURNDATASIZE),
    ("RETURNDATACOPY", RETURNDATACOPY),
    ("POP", POP),
    ("MLOAD", MLOAD),
    ("MSTORE", MSTORE),
    ("MSTORE8", MSTORE8),
    ("SLOAD", SLOAD),
    ("SSTORE", SSTORE),
    ("JUMP", JUMP),
    ("JUMPI", JUMPI),
    ("PC", PC),
    ("GAS", GAS),
    ("JUMPDEST", JUMPDEST),
    ("CREATE", CREATE),
    ("CALL", CALL),
    ("RETURN", RETURN),
    ("DELEGATECALL", DELEGATECALL),
    ("STATICCALL", STATICCALL),
    ("REVERT", REVERT),
    ("INVALID", INVALID),
    ("SELFDESTRUCT", SELFDESTRUCT),
];

const PUSH_NAMES: [&str; 32] = [
    "PUSH1", "PUSH2", "PUSH3", "PUSH4", "PUSH5", "PUSH6", "PUSH7", "PUSH8", "PUSH9", "PUSH10",
    "PUSH11", "PUSH12", "PUSH13", "PUSH14", "PUSH15", "PUSH16", "PUSH17", "PUSH18", "PUSH19",
    "PUSH20", "PUSH21", "PUSH22", "PUSH23", "PUSH24", "PUSH25", "PUSH26", "PUSH27", "PUSH28",
    "PUSH29", "PUSH30", "PUSH31", "PUSH32",
];
const DUP_NAMES: [&str; 16] = [
    "DUP1", "DUP2", "DUP3", "DUP4", "DUP5", "DUP6", "DUP7", "DUP8", "DUP9", "DUP10", "DUP11",
    "DUP12", "DUP13", "DUP14", "DUP15", "DUP16",
];
const SWAP_NAMES: [&str; 16] = [
    "SWAP1", "SWAP2", "SWAP3", "SWAP4", "SWAP5", "SWAP6", "SWAP7", "SWAP8", "SWAP9", "SWAP10",
    "SWAP11", "SWAP12", "SWAP13", "SWAP14", "SWAP15", "SWAP16",
];
const LOG_NAMES: [&str; 5] = ["LOG0", "LOG1", "LOG2", "LOG3", "LOG4"];

/// Mnemonic for a supported byte, `None` for anything outside the subset.
pub fn mnemonic(byte: u8) -> Option<&'static str> {
    match byte {
        PUSH1..=PUSH32 => Some(PUSH_NAMES[(byte - PUSH1) as usize]),
        DUP1..=DUP16 => Some(DUP_NAMES[(byte - DUP1) as usize]),
        SWAP1..=SWAP16 => Some(SWAP_NAMES[(byte - SWAP1) as usize]),
        LOG0..=LOG4 => Some(LOG_NAMES[(byte - LOG0) as usize]),
        _ => FIXED.iter().find(|(_, b)| *b == byte).map(|(n, _)| *n),
    }
}

pub fn is_supported(byte: u8) -> bool {
    mnemonic(byte).is_some()
}

pub fn from_mnemonic(name: &str) -> Option<u8> {
    let upper = name.to_ascii_uppercase();
    if upper == "KECCAK256" {
        return Some(SHA3);
    }
    (0u8..=255).find(|b| mnemonic(*b) == Some(upper.as_str()))
}

/// Number of immediate bytes following `byte`.
pub fn immediate_len(byte: u8) -> usize {
    if (PUSH1..=PUSH32).contains(&byte) {
        (byte - PUSH1 + 1) as usize
    } else {
        0
    }
}

/// The frozen subset as (mnemonic, byte) pairs in byte order.
pub fn supported_opcodes() -> Vec<(&'static str, u8)> {
    (0u8..=255)
        .filter_map(|b| mnemonic(b).map(|n| (n, b)))
        .collect()
}

/// One decoded instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instr<'a> {
    pub pc: usize,
    pub op: u8,
    pub imm: &'a [u8],
}

/// Linear disassembly. Stops with an error at the first byte outside the subset.
pub fn decode(code: &[u8]) -> Result<Vec<Instr<'_>>, DecodeError> {
    let mut out = Vec::new();
    let mut pc = 0;
    while pc < code.len() {
        let op = code[pc];
        if !is_supported(op) {
            return Err(DecodeError { pc, byte: op });
        }
        let n = immediate_len(op);
        let end = (pc + 1 + n).min(code.len());
        out.push(Instr {
            pc,
            op,
            imm: &code[pc + 1..end],
        });
        pc += 1 + n;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("unsupported opcode 0x{byte:02x} at pc {pc}")]
pub struct DecodeError {
    pub pc: usize,
    pub byte: u8,
}

/// Bitmap of valid jump destinations (JUMPDEST bytes outside push data).
pub fn jumpdests(code: &[u8]) -> Vec<bool> {
    let mut out = vec![false; code.len()];
    let mut pc = 0;
    while pc < code.len() {
        let op = code[pc];
        if op == JUMPDEST {
            out[pc] = true;
        }
        pc += 1 + immediate_len(op);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_contains_jumpi_and_excludes_create2() {
        let ops = supported_opcodes();
        assert!(ops.contains(&("JUMPI", 0x57)));
        assert!(!ops.iter().any(|(_, b)| *b == 0xf5));
        assert!(!ops.iter().any(|(n, _)| *n == "CREATE2"));
        assert!(!ops.iter().any(|(_, b)| *b == 0x5f), "PUSH0 is not in the subset");
    }

    #[test]
    fn mnemonic_round_trip() {
        for (name, byte) in supported_opcodes() {
            assert_eq!(from_mnemonic(name), Some(byte));
        }
    }

    #[test]
    fn push_data_is_not_a_jumpdest() {
        let code = [PUSH1, JUMPDEST, JUMPDEST];
        assert_eq!(jumpdests(&code), vec![false, false, true]);
    }
}
