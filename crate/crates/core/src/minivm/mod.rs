//! A deterministic interpreter for an EVM opcode subset, with tracing and
//! occurrence-indexed branch overrides.

pub mod asm;
pub mod lang;
mod interp;
pub mod opcode;
mod state;
mod trace;

pub use interp::{
    execute, execute_in_place, execute_with, BranchOverrides, CallSite, ExecResult, GasSchedule,
    Host, Inspector, Message, VmConfig, DEFAULT_GAS_LIMIT,
};
pub use opcode::supported_opcodes;
pub use state::{Account, BlockContext, WorldState};
pub use trace::*;
