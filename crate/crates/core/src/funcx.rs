//! Function extraction from dispatcher bytecode and dynamic argument-type inference.

use std::collections::{HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::minivm::opcode::{self as op, Instr};
use crate::minivm::{execute, BranchOverrides, Message, WorldState};
use crate::types::{Address, Word};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "width", rename_all = "lowercase")]
pub enum ArgType {
    Uint(u16),
    Address,
    Bool,
    Bytes,
    Word,
}

impl ArgType {
    /// Largest value representable under this type, `None` for dynamic bytes.
    pub fn max_value(self) -> Option<Word> {
        match self {
            ArgType::Uint(w) if w < 256 => Some((Word::one() << w as usize) - 1),
            ArgType::Uint(_) | ArgType::Word => Some(Word::MAX),
            ArgType::Address => Some(crate::types::address_mask()),
            ArgType::Bool => Some(Word::one()),
            ArgType::Bytes => None,
        }
    }

    pub fn bit_width(self) -> usize {
        match self {
            ArgType::Uint(w) => w as usize,
            ArgType::Address => 160,
            ArgType::Bool => 1,
            ArgType::Bytes | ArgType::Word => 256,
        }
    }

    pub fn accepts(self, v: Word) -> bool {
        self.max_value().map(|m| v <= m).unwrap_or(true)
    }
}

impl fmt::Display for ArgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgType::Uint(w) => write!(f, "uint{w}"),
            ArgType::Address => write!(f, "address"),
            ArgType::Bool => write!(f, "bool"),
            ArgType::Bytes => write!(f, "bytes"),
            ArgType::Word => write!(f, "word"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FunctionDesc {
    #[serde(with = "crate::types::hex_selector")]
    pub selector: [u8; 4],
    pub entry_pc: u32,
    pub args: Vec<ArgType>,
    pub is_fallback: bool,
}

impl FunctionDesc {
    /// Calldata for this function with word arguments; `Bytes` args take their
    /// payload from `bytes` in order and are ABI-encoded in the tail.
    pub fn encode_call(&self, words: &[Word], bytes: &[Vec<u8>]) -> Vec<u8> {
        if self.is_fallback {
            return Vec::new();
        }
        encode_abi(self.selector, &self.args, words, bytes)
    }
}

/// ABI-style encoding: static heads, then dynamic tails for `Bytes` args.
pub fn encode_abi(selector: [u8; 4], types: &[ArgType], words: &[Word], bytes: &[Vec<u8>]) -> Vec<u8> {
    let mut head = Vec::with_capacity(4 + 32 * types.len());
    head.extend_from_slice(&selector);
    let mut tail = Vec::new();
    let mut bi = 0;
    for (k, t) in types.iter().enumerate() {
        if *t == ArgType::Bytes {
            let payload = bytes.get(bi).cloned().unwrap_or_default();
            bi += 1;
            let off = 32 * types.len() + tail.len();
            head.extend_from_slice(&Word::from(off).to_big_endian());
            tail.extend_from_slice(&Word::from(payload.len()).to_big_endian());
            tail.extend_from_slice(&payload);
            tail.resize(tail.len().div_ceil(32) * 32, 0);
        } else {
            let w = words.get(k).copied().unwrap_or_default();
            head.extend_from_slice(&w.to_big_endian());
        }
    }
    head.extend_from_slice(&tail);
    head
}

/// Extracts one descriptor per `PUSH4 s ... EQ PUSHn d JUMPI` dispatcher arm,
/// plus a fallback when the default path does not immediately revert.
///
/// Undecodable code yields an empty list (the decode error is logged).
pub fn extract_funcs(code: &[u8]) -> Vec<FunctionDesc> {
    if code.is_empty() {
        return Vec::new();
    }
    let instrs = match op::decode(code) {
        Ok(i) => i,
        Err(e) => {
            log::warn!("extract_funcs: {e}");
            return Vec::new();
        }
    };
    let dests = op::jumpdests(code);
    let mut out: Vec<FunctionDesc> = Vec::new();
    let mut last_arm_end = None;
    for i in 0..instrs.len() {
        if instrs[i].op != op::PUSH4 || instrs[i].imm.len() != 4 {
            continue;
        }
        if let Some((dest, jumpi_idx)) = match_arm(&instrs, i) {
            if dest < dests.len() && dests[dest] {
                let sel = [instrs[i].imm[0], instrs[i].imm[1], instrs[i].imm[2], instrs[i].imm[3]];
                if !out.iter().any(|f| f.selector == sel) {
                    out.push(FunctionDesc {
                        selector: sel,
                        entry_pc: dest as u32,
                        args: Vec::new(),
                        is_fallback: false,
                    });
                }
                last_arm_end = Some(jumpi_idx + 1);
            }
        }
    }
    match last_arm_end {
        None => out.push(FunctionDesc {
            selector: [0; 4],
            entry_pc: 0,
            args: Vec::new(),
            is_fallback: true,
        }),
        Some(idx) => {
            if let Some(entry) = fallback_entry(&instrs, idx, &dests) {
                out.push(FunctionDesc {
                    selector: [0; 4],
                    entry_pc: entry as u32,
                    args: Vec::new(),
                    is_fallback: true,
                });
            }
        }
    }
    out
}

/// Matches `PUSH4 s` at `i` followed (within a short window) by `EQ`, then `PUSH1/PUSH2 d`, `JUMPI`.
fn match_arm(instrs: &[Instr<'_>], i: usize) -> Option<(usize, usize)> {
    for eq_at in i + 1..(i + 4).min(instrs.len()) {
        if instrs[eq_at].op == op::EQ {
            let push = instrs.get(eq_at + 1)?;
            let jumpi = instrs.get(eq_at + 2)?;
            if (push.op == op::PUSH1 || push.op == op::PUSH2) && jumpi.op == op::JUMPI {
                let dest = push.imm.iter().fold(0usize, |acc, b| (acc << 8) | *b as usize);
                return Some((dest, eq_at + 2));
            }
            return None;
        }
        if !matches!(instrs[eq_at].op, op::DUP1..=op::DUP16 | op::SWAP1..=op::SWAP16) {
            return None;
        }
    }
    None
}

/// Where the default dispatch path goes after the last arm, or `None` if it reverts at once.
fn fallback_entry(instrs: &[Instr<'_>], idx: usize, dests: &[bool]) -> Option<usize> {
    let first = instrs.get(idx)?;
    let target = if (first.op == op::PUSH1 || first.op == op::PUSH2)
        && instrs.get(idx + 1).map(|n| n.op) == Some(op::JUMP)
    {
        let d = first.imm.iter().fold(0usize, |acc, b| (acc << 8) | *b as usize);
        if d >= dests.len() || !dests[d] {
            return None;
        }
        instrs.iter().position(|x| x.pc == d)?
    } else {
        idx
    };
    if immediately_reverts(&instrs[target..]) {
        None
    } else {
        Some(instrs[target].pc)
    }
}

fn immediately_reverts(tail: &[Instr<'_>]) -> bool {
    let ops: Vec<u8> = tail
        .iter()
        .map(|i| i.op)
        .filter(|o| *o != op::JUMPDEST && !matches!(*o, op::DUP1..=op::DUP16 | op::POP))
        .take(3)
        .collect();
    matches!(ops.first(), Some(&op::INVALID))
        || (ops.len() == 3
            && matches!(ops[0], op::PUSH1..=op::PUSH32)
            && matches!(ops[1], op::PUSH1..=op::PUSH32)
            && ops[2] == op::REVERT)
}

/// Canary for argument `k`: distinctive, fits in 72 bits, never a plausible mask.
pub fn canary(k: usize) -> Word {
    (Word::from(k as u64 + 1) << 64) | Word::from(0xC0FF_EE00u64)
}

const MAX_PROBED_ARGS: usize = 8;
const MAX_FORCED_PROBES: usize = 32;

/// Infers argument types of `f` on the contract at `contract` from a traced run.
///
/// Each argument slot is filled with a distinct canary word. A CALLDATALOAD at
/// `4 + 32k` reveals argument `k`; an AND of its canary with `2^160-1` types it as
/// an address, with `2^w-1` as `uint(w)`; a later load at `4 + canary` marks the
/// standard dynamic-bytes indirection. If that run reverts, forced runs from
/// the function entry add the loads hidden behind guards.
pub fn infer_args(world: &WorldState, contract: Address, f: &FunctionDesc) -> Vec<ArgType> {
    if f.is_fallback {
        return Vec::new();
    }
    let mut data = f.selector.to_vec();
    for k in 0..MAX_PROBED_ARGS {
        data.extend_from_slice(&canary(k).to_big_endian());
    }
    let probe = Address::from_low_u64(0x00c0_ffee_0000_0001);
    let mut w = world.clone();
    w.set_balance(probe, crate::types::ether(1));
    let msg = Message::call(probe, contract, data);
    let r = execute(&w, &msg, &BranchOverrides::none());
    let mut loads = r.trace.calldata_loads.clone();
    let mut ands = r.trace.and_operands.clone();
    if r.trace.reverted {
        // Guards often run before the arguments are read: force past them.
        let mut frontier = VecDeque::from([BranchOverrides::from_pc(f.entry_pc)]);
        let mut seen: HashSet<BranchOverrides> = frontier.iter().cloned().collect();
        let mut runs = 0;
        while let Some(d) = frontier.pop_front() {
            if runs >= MAX_FORCED_PROBES {
                break;
            }
            runs += 1;
            let t = execute(&w, &msg, &d).trace;
            let last = d.max_index();
            for j in t.eligible_jumpis() {
                let idx = j.eligible_index.expect("eligible");
                if last.is_some_and(|l| idx <= l) {
                    continue;
                }
                let next = d.clone().with(idx, j.taken.flip());
                if seen.insert(next.clone()) {
                    frontier.push_back(next);
                }
            }
            loads.extend(t.calldata_loads);
            ands.extend(t.and_operands);
        }
    }
    infer_from_loads(&loads, &ands)
}

fn infer_from_loads(loads: &[(Word, Word)], ands: &[(Word, Word)]) -> Vec<ArgType> {
    let mut kinds: Vec<Option<ArgType>> = vec![None; MAX_PROBED_ARGS];
    let mut max_k = None;
    for (off, _) in loads {
        if off.bits() <= 16 {
            let o = off.low_u64() as usize;
            if o >= 4 && (o - 4) % 32 == 0 && (o - 4) / 32 < MAX_PROBED_ARGS {
                let k = (o - 4) / 32;
                max_k = Some(max_k.map_or(k, |m: usize| m.max(k)));
                kinds[k].get_or_insert(ArgType::Word);
            }
        }
    }
    let Some(max_k) = max_k else {
        return Vec::new();
    };
    for k in 0..=max_k {
        let c = canary(k);
        let bytes_off = c + Word::from(4);
        if loads.iter().any(|(o, _)| *o == bytes_off) {
            kinds[k] = Some(ArgType::Bytes);
            continue;
        }
        for (a, b) in ands {
            let mask = if *a == c {
                *b
            } else if *b == c {
                *a
            } else {
                continue;
            };
            if let Some(t) = mask_type(mask) {
                kinds[k] = Some(t);
                break;
            }
        }
    }
    kinds[..=max_k]
        .iter()
        .map(|k| k.unwrap_or(ArgType::Word))
        .collect()
}

fn mask_type(mask: Word) -> Option<ArgType> {
    // mask + 1 must be a power of two: 2^w - 1.
    let plus = mask.overflowing_add(Word::one()).0;
    if mask.is_zero() || !(plus & mask).is_zero() {
        return None;
    }
    let w = mask.bits();
    match w {
        160 => Some(ArgType::Address),
        1 => Some(ArgType::Bool),
        256 => None,
        w if w % 8 == 0 => Some(ArgType::Uint(w as u16)),
        _ => None,
    }
}

/// `extract_funcs` followed by `infer_args` for every descriptor.
pub fn describe(world: &WorldState, contract: Address) -> Vec<FunctionDesc> {
    let code = world.code(&contract).to_vec();
    extract_funcs(&code)
        .into_iter()
        .map(|mut f| {
            f.args = infer_args(world, contract, &f);
            f
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_widths() {
        assert_eq!(mask_type(crate::types::address_mask()), Some(ArgType::Address));
        assert_eq!(mask_type(Word::from(0xffffu64)), Some(ArgType::Uint(16)));
        assert_eq!(mask_type(Word::from(0xfff0u64)), None);
        assert_eq!(mask_type(Word::MAX), None);
    }

    #[test]
    fn abi_bytes_tail() {
        let enc = encode_abi([1, 2, 3, 4], &[ArgType::Uint(256), ArgType::Bytes], &[Word::from(7)], &[vec![0xaa]]);
        assert_eq!(enc.len(), 4 + 32 * 4);
        assert_eq!(crate::types::read_word(&enc, 36), Word::from(64));
        assert_eq!(crate::types::read_word(&enc, 68), Word::one());
        assert_eq!(enc[100], 0xaa);
    }
}
