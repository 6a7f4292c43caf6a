//! Preemptive hijack: enumerate forced paths through every function of a
//! suspect contract and turn each path into a runnable program.

use std::collections::{BTreeSet, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::funcx::{extract_funcs, infer_args, ArgType, FunctionDesc};
use crate::minivm::lang::deployer;
use crate::minivm::opcode::{self as op, decode};
use crate::minivm::{
    execute_with, BranchOverrides, Direction, ExecTrace, Message, VmConfig, WorldState,
};
use crate::program::{HijackPath, Hole, HoleSlot, Operator, ProgramBody, ProgramWithHoles, Provenance};
use crate::types::{Address, Word};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathCaps {
    pub max_paths: usize,
    pub step_budget: u64,
    /// Sender used for forced runs, also appended to the sender candidates.
    pub sender: Address,
}

impl Default for PathCaps {
    fn default() -> Self {
        PathCaps {
            max_paths: 4096,
            step_budget: 1_000_000,
            sender: Operator::default().eoa,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloneResult {
    pub programs: Vec<ProgramWithHoles>,
    pub truncated: bool,
}

impl CloneResult {
    /// Minimum open-hole count over all programs.
    pub fn min_holes(&self) -> Option<usize> {
        self.programs.iter().map(|p| p.open_holes()).min()
    }
}

fn default_calldata(f: &FunctionDesc) -> Vec<u8> {
    let words = vec![Word::zero(); f.args.len()];
    let bytes = vec![Vec::new(); f.args.iter().filter(|t| **t == ArgType::Bytes).count()];
    f.encode_call(&words, &bytes)
}

fn forced_run(
    world: &WorldState,
    contract: Address,
    f: &FunctionDesc,
    decisions: &BranchOverrides,
    caps: &PathCaps,
) -> ExecTrace {
    let cfg = VmConfig {
        step_budget: caps.step_budget,
        ..VmConfig::default()
    };
    let msg = Message::call(caps.sender, contract, default_calldata(f));
    execute_with(world, &msg, decisions, &cfg, None).trace
}

/// Re-executes a hijack program's path with default inputs.
pub fn replay(world: &WorldState, program: &ProgramWithHoles, caps: &PathCaps) -> ExecTrace {
    forced_run(world, program.target, &program.function, &program.decisions, caps)
}

/// Enumerates forced paths of every function of `contract`.
///
/// Each function runs from its entry pc with default inputs. Every newly met
/// eligible JUMPI past the current decision prefix spawns a flipped prefix on a
/// FIFO frontier, so each decision vector is explored exactly once.
pub fn clone_exploit(world: &WorldState, contract: Address, caps: &PathCaps) -> CloneResult {
    let code = world.code(&contract).to_vec();
    let funcs = extract_funcs(&code);
    if funcs.is_empty() {
        return CloneResult::default();
    }
    let senders = enumerate_senders(world, contract, caps.sender);
    let mut out = CloneResult::default();
    'funcs: for mut f in funcs {
        f.args = infer_args(world, contract, &f);
        let mut frontier: VecDeque<BranchOverrides> = VecDeque::new();
        let mut queued: HashSet<BranchOverrides> = HashSet::new();
        let root = BranchOverrides::from_pc(f.entry_pc);
        queued.insert(root.clone());
        frontier.push_back(root);
        let mut realized: HashSet<Vec<u32>> = HashSet::new();
        while let Some(decisions) = frontier.pop_front() {
            if out.programs.len() >= caps.max_paths {
                out.truncated = true;
                break 'funcs;
            }
            let trace = forced_run(world, contract, &f, &decisions, caps);
            let last = decisions.max_index();
            for j in trace.eligible_jumpis() {
                let idx = j.eligible_index.expect("eligible");
                if last.is_some_and(|l| idx <= l) {
                    continue;
                }
                let next = decisions.clone().with(idx, j.taken.flip());
                if queued.insert(next.clone()) {
                    frontier.push_back(next);
                }
            }
            let pcs = trace.top_pcs().to_vec();
            if !realized.insert(pcs.clone()) {
                continue;
            }
            let forced = decisions
                .decisions
                .iter()
                .filter_map(|(idx, dir)| {
                    trace
                        .eligible_jumpis()
                        .find(|j| j.eligible_index == Some(*idx))
                        .map(|j| (j.pc, *dir))
                })
                .collect();
            let holes = f
                .args
                .iter()
                .enumerate()
                .map(|(k, t)| Hole::new(HoleSlot::Arg(k), *t, Word::zero()))
                .collect();
            out.programs.push(ProgramWithHoles {
                target: contract,
                function: f.clone(),
                decisions,
                holes,
                provenance: Provenance::Hijack,
                sender_candidates: senders.clone(),
                body: ProgramBody::Hijack(HijackPath {
                    forced,
                    signature: trace.top_branch_signature(),
                    pcs,
                    reverted: trace.reverted,
                }),
            });
        }
    }
    out.programs.sort_by(|a, b| {
        (a.function.selector, a.function.is_fallback, &a.decisions.decisions)
            .cmp(&(b.function.selector, b.function.is_fallback, &b.decisions.decisions))
    });
    out
}

/// Address-shaped constants from storage and code, then `default`.
pub fn enumerate_senders(world: &WorldState, contract: Address, default: Address) -> Vec<Address> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut push = |a: Address| {
        if !a.is_zero() && seen.insert(a) {
            out.push(a);
        }
    };
    if let Some(acct) = world.account(&contract) {
        for v in acct.storage.values() {
            if Address::fits(*v) {
                push(Address::from_word(*v));
            }
        }
    }
    if let Ok(instrs) = decode(world.code(&contract)) {
        for i in instrs {
            if i.op == op::PUSH20 || i.op == op::PUSH32 {
                let imm = &i.imm[i.imm.len() - 20..];
                let mut a = [0u8; 20];
                a.copy_from_slice(imm);
                push(Address(a));
            }
        }
    }
    push(default);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RealizeError {
    #[error("program is not a hijack program")]
    NotHijack,
    #[error("branch at pc {0} is not a patchable PUSH2/JUMPI pair")]
    Unpatchable(u32),
    #[error("code does not decode")]
    BadCode,
}

/// Rewrites each forced JUMPI so the branch goes the chosen way unconditionally.
///
/// Fallthrough: `PUSH2 d JUMPI` becomes `POP JUMPDEST JUMPDEST JUMPDEST`.
/// Taken: it becomes `PUSH2 t JUMP` where the trampoline `t` (appended after a
/// STOP) is `JUMPDEST POP PUSH2 d JUMP`.
pub fn patch_branches(code: &[u8], forced: &[(u32, Direction)]) -> Result<Vec<u8>, RealizeError> {
    let instrs = decode(code).map_err(|_| RealizeError::BadCode)?;
    let starts: HashSet<usize> = instrs.iter().map(|i| i.pc).collect();
    let mut out = code.to_vec();
    let mut tramps = vec![op::STOP];
    for &(pc, dir) in forced {
        let p = pc as usize;
        if p < 3 || out.get(p) != Some(&op::JUMPI) || !starts.contains(&(p - 3)) || code[p - 3] != op::PUSH2 {
            return Err(RealizeError::Unpatchable(pc));
        }
        match dir {
            Direction::Fallthrough => {
                out[p - 3..=p].copy_from_slice(&[op::POP, op::JUMPDEST, op::JUMPDEST, op::JUMPDEST]);
            }
            Direction::Taken => {
                let t = code.len() + tramps.len();
                if t > 0xffff {
                    return Err(RealizeError::Unpatchable(pc));
                }
                let dest = [code[p - 2], code[p - 1]];
                tramps.extend_from_slice(&[op::JUMPDEST, op::POP, op::PUSH2, dest[0], dest[1], op::JUMP]);
                out[p - 3..=p].copy_from_slice(&[op::PUSH2, (t >> 8) as u8, t as u8, op::JUMP]);
            }
        }
    }
    if tramps.len() > 1 {
        out.extend_from_slice(&tramps);
    }
    Ok(out)
}

/// Whether `a` looks like an externally owned account that has transacted.
fn is_active_eoa(world: &WorldState, a: &Address) -> bool {
    world
        .account(a)
        .is_some_and(|acct| !acct.has_code() && acct.nonce > 0)
}

/// Init code for a path-specialized copy of the target owned by `operator`.
///
/// Storage words naming an active EOA become the operator's EOA, and references
/// to the contract itself become the clone's address, in storage and PUSH20s.
pub fn clone_initcode(
    world: &WorldState,
    program: &ProgramWithHoles,
    operator: &Operator,
    clone: Address,
) -> Result<Vec<u8>, RealizeError> {
    let path = program.hijack_path().ok_or(RealizeError::NotHijack)?;
    let target = program.target;
    let mut code = patch_branches(world.code(&target), &path.forced)?;
    let storage: Vec<(Word, Word)> = world
        .account(&target)
        .map(|a| a.storage.iter().map(|(k, v)| (*k, *v)).collect())
        .unwrap_or_default();
    let owners: BTreeSet<Address> = storage
        .iter()
        .filter(|(_, v)| Address::fits(*v) && !v.is_zero())
        .map(|(_, v)| Address::from_word(*v))
        .filter(|a| is_active_eoa(world, a))
        .collect();
    let map = |a: Address| -> Option<Address> {
        if a == target {
            Some(clone)
        } else if owners.contains(&a) {
            Some(operator.eoa)
        } else {
            None
        }
    };
    let storage: Vec<(Word, Word)> = storage
        .into_iter()
        .map(|(k, v)| {
            let nv = if Address::fits(v) {
                map(Address::from_word(v)).map(|a| a.to_word()).unwrap_or(v)
            } else {
                v
            };
            (k, nv)
        })
        .collect();
    let pushes: Vec<(usize, Address)> = decode(&code)
        .map_err(|_| RealizeError::BadCode)?
        .into_iter()
        .filter(|i| i.op == op::PUSH20)
        .filter_map(|i| {
            let mut a = [0u8; 20];
            a.copy_from_slice(&i.imm);
            map(Address(a)).map(|n| (i.pc, n))
        })
        .collect();
    for (pc, n) in pushes {
        code[pc + 1..pc + 21].copy_from_slice(&n.0);
    }
    Ok(deployer(&code, &storage))
}

/// Messages that run `program` with the given argument fills: deploy the clone, then call it.
pub fn realize(
    world: &WorldState,
    program: &ProgramWithHoles,
    words: &[Word],
    bytes: &[Vec<u8>],
    operator: &Operator,
) -> Result<Vec<Message>, RealizeError> {
    let clone = Address::create(operator.eoa, world.nonce(&operator.eoa));
    let init = clone_initcode(world, program, operator, clone)?;
    Ok(vec![
        Message::create(operator.eoa, init),
        Message::call(operator.eoa, clone, program.function.encode_call(words, bytes)),
    ])
}
