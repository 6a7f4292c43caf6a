//! Execution traces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::types::{Address, Word};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Taken,
    Fallthrough,
}

impl Direction {
    pub fn flip(self) -> Direction {
        match self {
            Direction::Taken => Direction::Fallthrough,
            Direction::Fallthrough => Direction::Taken,
        }
    }

    pub fn from_cond(nonzero: bool) -> Direction {
        if nonzero {
            Direction::Taken
        } else {
            Direction::Fallthrough
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Revert,
    OutOfGas,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallKind {
    Call,
    StaticCall,
    DelegateCall,
    Create,
}

/// Pc history of one call frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameTrace {
    pub depth: u32,
    /// Account whose storage the frame uses.
    pub address: Address,
    /// Account whose code the frame runs (differs under DELEGATECALL).
    pub code_address: Address,
    pub pcs: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JumpiEvent {
    pub depth: u32,
    pub pc: u32,
    /// Direction implied by the condition value.
    pub concrete: Direction,
    /// Direction actually taken.
    pub taken: Direction,
    /// Occurrence index among override-eligible JUMPIs, top frame only.
    pub eligible_index: Option<u32>,
    pub overridden: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    pub op: String,
    pub lhs: Word,
    pub rhs: Word,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub depth: u32,
    pub kind: CallKind,
    pub caller: Address,
    pub target: Address,
    /// Index of the enclosing call record, `None` for the message itself.
    pub parent: Option<usize>,
    #[serde(with = "crate::types::hex_bytes")]
    pub input: Vec<u8>,
    pub value: Word,
    #[serde(with = "crate::types::hex_bytes")]
    pub output: Vec<u8>,
    pub success: bool,
}

impl CallRecord {
    pub fn selector(&self) -> Option<[u8; 4]> {
        if self.input.len() >= 4 {
            Some([self.input[0], self.input[1], self.input[2], self.input[3]])
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageWrite {
    pub address: Address,
    pub key: Word,
    pub old: Word,
    pub new: Word,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub address: Address,
    pub topics: Vec<Word>,
    #[serde(with = "crate::types::hex_bytes")]
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceDelta {
    pub before: Word,
    pub after: Word,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExecTrace {
    pub frames: Vec<FrameTrace>,
    pub jumpis: Vec<JumpiEvent>,
    pub comparisons: Vec<Comparison>,
    /// Operand pairs of every AND, used for argument-width inference.
    pub and_operands: Vec<(Word, Word)>,
    /// (offset, loaded value) for CALLDATALOAD in the top frame.
    pub calldata_loads: Vec<(Word, Word)>,
    pub calls: Vec<CallRecord>,
    pub storage_writes: Vec<StorageWrite>,
    pub balance_deltas: BTreeMap<Address, BalanceDelta>,
    pub created: Vec<Address>,
    pub logs: Vec<LogRecord>,
    pub reverted: bool,
    #[serde(with = "crate::types::hex_bytes")]
    pub return_data: Vec<u8>,
    /// Override indices that never matched an eligible JUMPI.
    pub unused_overrides: Vec<u32>,
    pub gas_used: u64,
    pub steps: u64,
}

impl ExecTrace {
    /// Pc sequence of the outermost frame.
    pub fn top_pcs(&self) -> &[u32] {
        self.frames
            .iter()
            .find(|f| f.depth == 0)
            .map(|f| f.pcs.as_slice())
            .unwrap_or(&[])
    }

    /// First-occurrence (pc, direction) of every distinct top-frame JUMPI pc, in order.
    pub fn top_branch_signature(&self) -> Vec<(u32, Direction)> {
        let mut seen = std::collections::BTreeSet::new();
        self.jumpis
            .iter()
            .filter(|j| j.depth == 0 && seen.insert(j.pc))
            .map(|j| (j.pc, j.taken))
            .collect()
    }

    /// Top-frame JUMPIs that are override-eligible, in occurrence order.
    pub fn eligible_jumpis(&self) -> impl Iterator<Item = &JumpiEvent> {
        self.jumpis.iter().filter(|j| j.eligible_index.is_some())
    }

    /// Control-flow edges over all frames, keyed by code address.
    pub fn edges(&self) -> Vec<(Address, u32, u32)> {
        let mut out = Vec::new();
        for f in &self.frames {
            let mut prev = u32::MAX;
            for &pc in &f.pcs {
                out.push((f.code_address, prev, pc));
                prev = pc;
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}
