//! The interpreter proper.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use primitive_types::U512;
use serde::{Deserialize, Serialize};

use super::opcode::{self as op, jumpdests};
use super::state::{Account, WorldState};
use super::trace::*;
use crate::types::{keccak256, read_word, Address, Word};

/// A top-level message. `target: None` is a contract creation whose init code is `data`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub caller: Address,
    pub origin: Address,
    pub target: Option<Address>,
    #[serde(with = "crate::types::hex_bytes")]
    pub data: Vec<u8>,
    pub value: Word,
    pub gas_limit: u64,
}

impl Message {
    pub fn call(from: Address, to: Address, data: Vec<u8>) -> Message {
        Message {
            caller: from,
            origin: from,
            target: Some(to),
            data,
            value: Word::zero(),
            gas_limit: DEFAULT_GAS_LIMIT,
        }
    }

    pub fn create(from: Address, initcode: Vec<u8>) -> Message {
        Message {
            caller: from,
            origin: from,
            target: None,
            data: initcode,
            value: Word::zero(),
            gas_limit: DEFAULT_GAS_LIMIT,
        }
    }

    pub fn with_value(mut self, value: Word) -> Message {
        self.value = value;
        self
    }
}

pub const DEFAULT_GAS_LIMIT: u64 = 30_000_000;

/// Flat gas costs. Relative magnitudes matter, absolute ones do not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasSchedule {
    pub tx_base: u64,
    pub per_op: u64,
    pub per_call: u64,
    pub per_create: u64,
}

impl Default for GasSchedule {
    fn default() -> Self {
        GasSchedule {
            tx_base: 21_000,
            per_op: 3,
            per_call: 700,
            per_create: 32_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmConfig {
    pub gas: GasSchedule,
    pub step_budget: u64,
    pub max_depth: u32,
    pub max_memory: usize,
}

impl Default for VmConfig {
    fn default() -> Self {
        VmConfig {
            gas: GasSchedule::default(),
            step_budget: 1_000_000,
            max_depth: 64,
            max_memory: 1 << 24,
        }
    }
}

/// Occurrence-indexed branch overrides for the top-level frame.
///
/// Only the first dynamic occurrence of each distinct JUMPI pc counts as an
/// eligible occurrence. When `start_pc` is set, eligibility begins once the
/// top frame first executes that pc, so a dispatcher ahead of it runs concretely.
#[derive(Debug, Clone, PartialEq, Eq, Default, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BranchOverrides {
    pub decisions: Vec<(u32, Direction)>,
    pub start_pc: Option<u32>,
}

impl BranchOverrides {
    pub fn none() -> BranchOverrides {
        BranchOverrides::default()
    }

    pub fn from_pc(start_pc: u32) -> BranchOverrides {
        BranchOverrides {
            decisions: Vec::new(),
            start_pc: Some(start_pc),
        }
    }

    pub fn with(mut self, index: u32, dir: Direction) -> BranchOverrides {
        self.decisions.push((index, dir));
        self.decisions.sort_by_key(|d| d.0);
        self.decisions.dedup_by_key(|d| d.0);
        self
    }

    pub fn max_index(&self) -> Option<u32> {
        self.decisions.iter().map(|d| d.0).max()
    }
}

#[derive(Debug, Clone)]
pub struct ExecResult {
    pub outcome: Outcome,
    pub trace: ExecTrace,
    pub world: WorldState,
    /// Address of the deployed contract for creation messages.
    pub created: Option<Address>,
}

/// Information handed to an [`Inspector`] about a call about to happen.
#[derive(Debug, Clone)]
pub struct CallSite {
    pub depth: u32,
    pub kind: CallKind,
    pub caller: Address,
    pub target: Address,
    /// Position in [`ExecTrace::calls`].
    pub record: usize,
}

/// Read access (plus side-effect-free calls) to the state at a call point.
pub trait Host {
    fn storage(&self, addr: &Address, key: Word) -> Word;
    fn balance(&self, addr: &Address) -> Word;
    /// Runs a static call against the current state and returns its output on success.
    fn static_call(&mut self, caller: Address, target: Address, input: Vec<u8>) -> Option<Vec<u8>>;
}

/// Hooks around every call made during execution, including the top-level message.
pub trait Inspector {
    fn before_call(
        &mut self,
        _host: &mut dyn Host,
        _site: &CallSite,
        _input: &mut Vec<u8>,
        _value: &mut Word,
    ) {
    }
    fn after_call(&mut self, _host: &mut dyn Host, _site: &CallSite, _success: bool, _output: &[u8]) {}
}

/// Executes `msg` against a copy of `world` with the default configuration.
pub fn execute(world: &WorldState, msg: &Message, overrides: &BranchOverrides) -> ExecResult {
    execute_with(world, msg, overrides, &VmConfig::default(), None)
}

pub fn execute_with(
    world: &WorldState,
    msg: &Message,
    overrides: &BranchOverrides,
    cfg: &VmConfig,
    inspector: Option<&mut dyn Inspector>,
) -> ExecResult {
    let mut w = world.clone();
    let (outcome, trace, created) = execute_in_place(&mut w, msg, overrides, cfg, inspector);
    ExecResult {
        outcome,
        trace,
        world: w,
        created,
    }
}

/// Executes `msg` on `world` directly. On any non-success outcome `world` is left untouched.
pub fn execute_in_place(
    world: &mut WorldState,
    msg: &Message,
    overrides: &BranchOverrides,
    cfg: &VmConfig,
    inspector: Option<&mut dyn Inspector>,
) -> (Outcome, ExecTrace, Option<Address>) {
    let mut m = Machine {
        world,
        journal: Vec::new(),
        cfg,
        trace: ExecTrace::default(),
        tracing: true,
        overrides,
        next_override: 0,
        eligible: 0,
        seen_top_jumpis: HashSet::new(),
        forcing: overrides.start_pc.is_none(),
        gas_used: 0,
        gas_limit: msg.gas_limit,
        steps: 0,
        origin: msg.origin,
        inspector,
        first_balances: BTreeMap::new(),
    };
    let (outcome, created) = m.run_message(msg);
    m.finish(outcome);
    let trace = std::mem::take(&mut m.trace);
    (outcome, trace, created)
}

enum Journal {
    Storage { addr: Address, key: Word, old: Word },
    Balance { addr: Address, old: Word },
    Nonce { addr: Address, old: u64 },
    Code { addr: Address, old: Arc<Vec<u8>> },
    Account { addr: Address, old: Option<Account> },
}

/// Whole-message abort.
#[derive(Debug)]
struct OutOfGas;

struct FrameEnd {
    success: bool,
    output: Vec<u8>,
}

struct Frame {
    address: Address,
    code_address: Address,
    caller: Address,
    value: Word,
    data: Vec<u8>,
    code: Arc<Vec<u8>>,
    depth: u32,
    is_static: bool,
}

struct Machine<'a, 'i> {
    world: &'a mut WorldState,
    journal: Vec<Journal>,
    cfg: &'a VmConfig,
    trace: ExecTrace,
    tracing: bool,
    overrides: &'a BranchOverrides,
    next_override: usize,
    eligible: u32,
    seen_top_jumpis: HashSet<u32>,
    forcing: bool,
    gas_used: u64,
    gas_limit: u64,
    steps: u64,
    origin: Address,
    inspector: Option<&'a mut (dyn Inspector + 'i)>,
    first_balances: BTreeMap<Address, Word>,
}

const MAX_LOGGED: usize = 1 << 14;

impl Machine<'_, '_> {
    fn run_message(&mut self, msg: &Message) -> (Outcome, Option<Address>) {
        if let Err(OutOfGas) = self.charge(self.cfg.gas.tx_base) {
            return (Outcome::OutOfGas, None);
        }
        let res = match msg.target {
            Some(target) => self
                .do_call(CallKind::Call, msg.caller, target, target, msg.value, msg.data.clone(), 0, false, None)
                .map(|end| {
                    if end.success {
                        self.bump_nonce(msg.caller);
                    }
                    (end, None)
                }),
            None => self.do_create(msg.caller, msg.value, msg.data.clone(), 0, None),
        };
        match res {
            Ok((end, created)) => {
                self.trace.return_data = end.output;
                if end.success {
                    (Outcome::Success, created)
                } else {
                    self.revert_to(0);
                    (Outcome::Revert, None)
                }
            }
            Err(OutOfGas) => {
                self.revert_to(0);
                (Outcome::OutOfGas, None)
            }
        }
    }

    fn finish(&mut self, outcome: Outcome) {
        self.trace.reverted = outcome != Outcome::Success;
        self.trace.gas_used = self.gas_used;
        self.trace.steps = self.steps;
        self.trace.unused_overrides = self.overrides.decisions[self.next_override.min(self.overrides.decisions.len())..]
            .iter()
            .map(|d| d.0)
            .collect();
        if outcome == Outcome::Success {
            for (addr, before) in &self.first_balances {
                let after = self.world.balance(addr);
                if after != *before {
                    self.trace.balance_deltas.insert(
                        *addr,
                        BalanceDelta {
                            before: *before,
                            after,
                        },
                    );
                }
            }
        }
    }

    fn charge(&mut self, amount: u64) -> Result<(), OutOfGas> {
        self.gas_used = self.gas_used.saturating_add(amount);
        if self.gas_used > self.gas_limit {
            Err(OutOfGas)
        } else {
            Ok(())
        }
    }

    // ---- journaled state helpers ----

    fn revert_to(&mut self, checkpoint: usize) {
        while self.journal.len() > checkpoint {
            match self.journal.pop().expect("non-empty journal") {
                Journal::Storage { addr, key, old } => self.world.set_storage(addr, key, old),
                Journal::Balance { addr, old } => self.world.account_mut(addr).balance = old,
                Journal::Nonce { addr, old } => self.world.account_mut(addr).nonce = old,
                Journal::Code { addr, old } => self.world.account_mut(addr).code = old,
                Journal::Account { addr, old } => match old {
                    Some(a) => {
                        self.world.accounts.insert(addr, a);
                    }
                    None => {
                        self.world.accounts.remove(&addr);
                    }
                },
            }
        }
    }

    fn touch(&mut self, addr: Address) {
        if !self.world.exists(&addr) {
            self.journal.push(Journal::Account { addr, old: None });
            self.world.account_mut(addr);
        }
    }

    fn set_balance(&mut self, addr: Address, value: Word) {
        self.touch(addr);
        let old = self.world.balance(&addr);
        self.first_balances.entry(addr).or_insert(old);
        self.journal.push(Journal::Balance { addr, old });
        self.world.account_mut(addr).balance = value;
    }

    fn transfer(&mut self, from: Address, to: Address, value: Word) -> bool {
        if value.is_zero() {
            return true;
        }
        let fb = self.world.balance(&from);
        if fb < value {
            return false;
        }
        if from == to {
            return true;
        }
        self.set_balance(from, fb - value);
        let tb = self.world.balance(&to);
        self.set_balance(to, tb.saturating_add(value));
        true
    }

    fn bump_nonce(&mut self, addr: Address) {
        self.touch(addr);
        let old = self.world.nonce(&addr);
        self.journal.push(Journal::Nonce { addr, old });
        self.world.account_mut(addr).nonce = old + 1;
    }

    fn sstore(&mut self, addr: Address, key: Word, value: Word) {
        self.touch(addr);
        let old = self.world.storage(&addr, key);
        self.journal.push(Journal::Storage { addr, key, old });
        self.world.set_storage(addr, key, value);
        if self.tracing && self.trace.storage_writes.len() < MAX_LOGGED {
            self.trace.storage_writes.push(StorageWrite {
                address: addr,
                key,
                old,
                new: value,
            });
        }
    }

    // ---- calls ----

    #[allow(clippy::too_many_arguments)]
    fn do_call(
        &mut self,
        kind: CallKind,
        caller: Address,
        target: Address,
        storage_addr: Address,
        mut value: Word,
        mut input: Vec<u8>,
        depth: u32,
        is_static: bool,
        parent: Option<usize>,
    ) -> Result<FrameEnd, OutOfGas> {
        let record = self.begin_record(kind, caller, target, parent, &input, value);
        let site = CallSite {
            depth,
            kind,
            caller,
            target,
            record,
        };
        self.inspect_before(&site, &mut input, &mut value);
        if self.tracing {
            if let Some(r) = self.trace.calls.get_mut(record) {
                r.input = input.clone();
                r.value = value;
            }
        }

        if depth > self.cfg.max_depth {
            return Ok(self.end_call(&site, false, Vec::new()));
        }
        let checkpoint = self.journal.len();
        if kind == CallKind::Call && !self.transfer(caller, target, value) {
            return Ok(self.end_call(&site, false, Vec::new()));
        }
        let code = self.world.code_arc(&target);
        if code.is_empty() {
            return Ok(self.end_call(&site, true, Vec::new()));
        }
        let frame = Frame {
            address: storage_addr,
            code_address: target,
            caller,
            value,
            data: input,
            code,
            depth,
            is_static,
        };
        let end = self.run_frame(frame, Some(record))?;
        if !end.success {
            self.revert_to(checkpoint);
        }
        Ok(self.end_call(&site, end.success, end.output))
    }

    fn do_create(
        &mut self,
        creator: Address,
        mut value: Word,
        mut initcode: Vec<u8>,
        depth: u32,
        parent: Option<usize>,
    ) -> Result<(FrameEnd, Option<Address>), OutOfGas> {
        let nonce = self.world.nonce(&creator);
        let addr = Address::create(creator, nonce);
        let record = self.begin_record(CallKind::Create, creator, addr, parent, &initcode, value);
        let site = CallSite {
            depth,
            kind: CallKind::Create,
            caller: creator,
            target: addr,
            record,
        };
        self.inspect_before(&site, &mut initcode, &mut value);
        if depth > self.cfg.max_depth {
            return Ok((self.end_call(&site, false, Vec::new()), None));
        }
        self.bump_nonce(creator);
        let checkpoint = self.journal.len();
        let collides = self
            .world
            .account(&addr)
            .map(|a| a.has_code() || a.nonce > 0)
            .unwrap_or(false);
        if collides {
            return Ok((self.end_call(&site, false, Vec::new()), None));
        }
        let prior = self.world.account(&addr).cloned();
        self.journal.push(Journal::Account { addr, old: prior });
        self.world.account_mut(addr);
        if !self.transfer(creator, addr, value) {
            self.revert_to(checkpoint);
            return Ok((self.end_call(&site, false, Vec::new()), None));
        }
        let frame = Frame {
            address: addr,
            code_address: addr,
            caller: creator,
            value,
            data: Vec::new(),
            code: Arc::new(initcode),
            depth,
            is_static: false,
        };
        let end = self.run_frame(frame, Some(record))?;
        if !end.success {
            self.revert_to(checkpoint);
            return Ok((self.end_call(&site, false, end.output), None));
        }
        let old = self.world.code_arc(&addr);
        self.journal.push(Journal::Code { addr, old });
        self.world.account_mut(addr).code = Arc::new(end.output);
        if self.tracing {
            self.trace.created.push(addr);
        }
        Ok((self.end_call(&site, true, Vec::new()), Some(addr)))
    }

    fn begin_record(
        &mut self,
        kind: CallKind,
        caller: Address,
        target: Address,
        parent: Option<usize>,
        input: &[u8],
        value: Word,
    ) -> usize {
        if !self.tracing {
            return usize::MAX;
        }
        let depth = parent.map(|p| self.trace.calls[p].depth + 1).unwrap_or(0);
        self.trace.calls.push(CallRecord {
            depth,
            kind,
            caller,
            target,
            parent,
            input: input.to_vec(),
            value,
            output: Vec::new(),
            success: false,
        });
        self.trace.calls.len() - 1
    }

    fn end_call(&mut self, site: &CallSite, success: bool, output: Vec<u8>) -> FrameEnd {
        if self.tracing {
            if let Some(r) = self.trace.calls.get_mut(site.record) {
                r.success = success;
                r.output = output.clone();
            }
        }
        if let Some(insp) = self.inspector.take() {
            insp.after_call(self, site, success, &output);
            self.inspector = Some(insp);
        }
        FrameEnd { success, output }
    }

    fn inspect_before(&mut self, site: &CallSite, input: &mut Vec<u8>, value: &mut Word) {
        if let Some(insp) = self.inspector.take() {
            insp.before_call(self, site, input, value);
            self.inspector = Some(insp);
        }
    }

    // ---- the interpreter loop ----

    fn run_frame(&mut self, f: Frame, record: Option<usize>) -> Result<FrameEnd, OutOfGas> {
        let code = f.code.clone();
        let code = code.as_slice();
        let dests = jumpdests(code);
        let frame_idx = if self.tracing {
            self.trace.frames.push(FrameTrace {
                depth: f.depth,
                address: f.address,
                code_address: f.code_address,
                pcs: Vec::new(),
            });
            Some(self.trace.frames.len() - 1)
        } else {
            None
        };
        let mut stack: Vec<Word> = Vec::with_capacity(64);
        let mut mem: Vec<u8> = Vec::new();
        let mut ret_data: Vec<u8> = Vec::new();
        let mut pc: usize = 0;
        let top = f.depth == 0;

        macro_rules! fail {
            () => {
                return Ok(FrameEnd {
                    success: false,
                    output: Vec::new(),
                })
            };
        }
        macro_rules! pop {
            () => {
                match stack.pop() {
                    Some(v) => v,
                    None => fail!(),
                }
            };
        }
        macro_rules! push {
            ($v:expr) => {{
                let v = $v;
                if stack.len() >= 1024 {
                    fail!();
                }
                stack.push(v);
            }};
        }
        macro_rules! mem_range {
            ($off:expr, $len:expr) => {{
                let off: Word = $off;
                let len: Word = $len;
                if len.is_zero() {
                    (0usize, 0usize)
                } else {
                    let max = self.cfg.max_memory as u64;
                    if off.bits() > 40 || len.bits() > 40 || off.low_u64() + len.low_u64() > max {
                        return Err(OutOfGas);
                    }
                    let o = off.low_u64() as usize;
                    let l = len.low_u64() as usize;
                    let end = (o + l).div_ceil(32) * 32;
                    if mem.len() < end {
                        mem.resize(end, 0);
                    }
                    (o, l)
                }
            }};
        }

        loop {
            if pc >= code.len() {
                return Ok(FrameEnd {
                    success: true,
                    output: Vec::new(),
                });
            }
            self.steps += 1;
            if self.steps > self.cfg.step_budget {
                return Err(OutOfGas);
            }
            self.charge(self.cfg.gas.per_op)?;
            if let Some(i) = frame_idx {
                self.trace.frames[i].pcs.push(pc as u32);
            }
            if top && !self.forcing && self.overrides.start_pc == Some(pc as u32) {
                self.forcing = true;
            }
            let opcode = code[pc];
            let mut next = pc + 1;
            match opcode {
                op::STOP => {
                    return Ok(FrameEnd {
                        success: true,
                        output: Vec::new(),
                    })
                }
                op::ADD => {
                    let (a, b) = (pop!(), pop!());
                    push!(a.overflowing_add(b).0)
                }
                op::MUL => {
                    let (a, b) = (pop!(), pop!());
                    push!(a.overflowing_mul(b).0)
                }
                op::SUB => {
                    let (a, b) = (pop!(), pop!());
                    push!(a.overflowing_sub(b).0)
                }
                op::DIV => {
                    let (a, b) = (pop!(), pop!());
                    push!(if b.is_zero() { Word::zero() } else { a / b })
                }
                op::SDIV => {
                    let (a, b) = (pop!(), pop!());
                    push!(sdiv(a, b))
                }
                op::MOD => {
                    let (a, b) = (pop!(), pop!());
                    push!(if b.is_zero() { Word::zero() } else { a % b })
                }
                op::SMOD => {
                    let (a, b) = (pop!(), pop!());
                    push!(smod(a, b))
                }
                op::ADDMOD => {
                    let (a, b, n) = (pop!(), pop!(), pop!());
                    push!(if n.is_zero() {
                        Word::zero()
                    } else {
                        narrow((U512::from(a) + U512::from(b)) % U512::from(n))
                    })
                }
                op::MULMOD => {
                    let (a, b, n) = (pop!(), pop!(), pop!());
                    push!(if n.is_zero() {
                        Word::zero()
                    } else {
                        narrow((U512::from(a) * U512::from(b)) % U512::from(n))
                    })
                }
                op::EXP => {
                    let (a, b) = (pop!(), pop!());
                    push!(a.overflowing_pow(b).0)
                }
                op::SIGNEXTEND => {
                    let (b, x) = (pop!(), pop!());
                    push!(signextend(b, x))
                }
                op::LT | op::GT | op::SLT | op::SGT | op::EQ => {
                    let (a, b) = (pop!(), pop!());
                    let r = match opcode {
                        op::LT => a < b,
                        op::GT => a > b,
                        op::SLT => slt(a, b),
                        op::SGT => slt(b, a),
                        _ => a == b,
                    };
                    if self.tracing && self.trace.comparisons.len() < MAX_LOGGED {
                        self.trace.comparisons.push(Comparison {
                            op: op::mnemonic(opcode).unwrap_or("?").to_string(),
                            lhs: a,
                            rhs: b,
                        });
                    }
                    push!(bool_word(r))
                }
                op::ISZERO => {
                    let a = pop!();
                    push!(bool_word(a.is_zero()))
                }
                op::AND => {
                    let (a, b) = (pop!(), pop!());
                    if top && self.tracing && self.trace.and_operands.len() < MAX_LOGGED {
                        self.trace.and_operands.push((a, b));
                    }
                    push!(a & b)
                }
                op::OR => {
                    let (a, b) = (pop!(), pop!());
                    push!(a | b)
                }
                op::XOR => {
                    let (a, b) = (pop!(), pop!());
                    push!(a ^ b)
                }
                op::NOT => {
                    let a = pop!();
                    push!(!a)
                }
                op::BYTE => {
                    let (i, x) = (pop!(), pop!());
                    push!(if i < Word::from(32) {
                        (x >> (8 * (31 - i.low_u64() as usize))) & Word::from(0xff)
                    } else {
                        Word::zero()
                    })
                }
                op::SHL => {
                    let (s, x) = (pop!(), pop!());
                    push!(if s < Word::from(256) { x << s.low_u64() as usize } else { Word::zero() })
                }
                op::SHR => {
                    let (s, x) = (pop!(), pop!());
                    push!(if s < Word::from(256) { x >> s.low_u64() as usize } else { Word::zero() })
                }
                op::SAR => {
                    let (s, x) = (pop!(), pop!());
                    push!(sar(s, x))
                }
                op::SHA3 => {
                    let (o, l) = (pop!(), pop!());
                    let (o, l) = mem_range!(o, l);
                    push!(Word::from_big_endian(&keccak256(&mem[o..o + l])))
                }
                op::ADDRESS => push!(f.address.to_word()),
                op::BALANCE => {
                    let a = pop!();
                    push!(self.world.balance(&Address::from_word(a)))
                }
                op::ORIGIN => push!(self.origin.to_word()),
                op::CALLER => push!(f.caller.to_word()),
                op::CALLVALUE => push!(f.value),
                op::CALLDATALOAD => {
                    let off = pop!();
                    let v = if off.bits() > 32 {
                        Word::zero()
                    } else {
                        read_word(&f.data, off.low_u64() as usize)
                    };
                    if top && self.tracing && self.trace.calldata_loads.len() < MAX_LOGGED {
                        self.trace.calldata_loads.push((off, v));
                    }
                    push!(v)
                }
                op::CALLDATASIZE => push!(Word::from(f.data.len())),
                op::CALLDATACOPY => {
                    let (d, s, l) = (pop!(), pop!(), pop!());
                    let (d, l) = mem_range!(d, l);
                    copy_padded(&mut mem[d..d + l], &f.data, s);
                }
                op::RETURNDATASIZE => push!(Word::from(ret_data.len())),
                op::RETURNDATACOPY => {
                    let (d, s, l) = (pop!(), pop!(), pop!());
                    let end = s.checked_add(l);
                    match end {
                        Some(e) if e <= Word::from(ret_data.len()) => {}
                        _ => fail!(),
                    }
                    let (d, l) = mem_range!(d, l);
                    let s = s.low_u64() as usize;
                    mem[d..d + l].copy_from_slice(&ret_data[s..s + l]);
                }
                op::POP => {
                    pop!();
                }
                op::MLOAD => {
                    let o = pop!();
                    let (o, _) = mem_range!(o, Word::from(32));
                    push!(Word::from_big_endian(&mem[o..o + 32]))
                }
                op::MSTORE => {
                    let (o, v) = (pop!(), pop!());
                    let (o, _) = mem_range!(o, Word::from(32));
                    mem[o..o + 32].copy_from_slice(&v.to_big_endian());
                }
                op::MSTORE8 => {
                    let (o, v) = (pop!(), pop!());
                    let (o, _) = mem_range!(o, Word::one());
                    mem[o] = v.byte(0);
                }
                op::SLOAD => {
                    let k = pop!();
                    push!(self.world.storage(&f.address, k))
                }
                op::SSTORE => {
                    if f.is_static {
                        fail!();
                    }
                    let (k, v) = (pop!(), pop!());
                    self.sstore(f.address, k, v);
                }
                op::JUMP => {
                    let d = pop!();
                    match valid_dest(&dests, d) {
                        Some(d) => next = d,
                        None => fail!(),
                    }
                }
                op::JUMPI => {
                    let (d, c) = (pop!(), pop!());
                    let concrete = Direction::from_cond(!c.is_zero());
                    let mut taken = concrete;
                    let mut eligible_index = None;
                    let mut overridden = false;
                    if top && self.forcing && self.seen_top_jumpis.insert(pc as u32) {
                        let idx = self.eligible;
                        self.eligible += 1;
                        eligible_index = Some(idx);
                        if let Some(&(oi, dir)) = self.overrides.decisions.get(self.next_override) {
                            if oi == idx {
                                taken = dir;
                                overridden = true;
                                self.next_override += 1;
                            }
                        }
                    }
                    if self.tracing && self.trace.jumpis.len() < MAX_LOGGED {
                        self.trace.jumpis.push(JumpiEvent {
                            depth: f.depth,
                            pc: pc as u32,
                            concrete,
                            taken,
                            eligible_index,
                            overridden,
                        });
                    }
                    if taken == Direction::Taken {
                        match valid_dest(&dests, d) {
                            Some(d) => next = d,
                            None => fail!(),
                        }
                    }
                }
                op::PC => push!(Word::from(pc)),
                op::GAS => push!(Word::from(self.gas_limit.saturating_sub(self.gas_used))),
                op::JUMPDEST => {}
                op::PUSH1..=op::PUSH32 => {
                    let n = op::immediate_len(opcode);
                    let end = (pc + 1 + n).min(code.len());
                    let mut buf = [0u8; 32];
                    let imm = &code[pc + 1..end];
                    // Truncated push data is right-padded with zeros.
                    buf[32 - n..32 - n + imm.len()].copy_from_slice(imm);
                    push!(Word::from_big_endian(&buf));
                    next = pc + 1 + n;
                }
                op::DUP1..=op::DUP16 => {
                    let n = (opcode - op::DUP1) as usize + 1;
                    if stack.len() < n {
                        fail!();
                    }
                    push!(stack[stack.len() - n])
                }
                op::SWAP1..=op::SWAP16 => {
                    let n = (opcode - op::SWAP1) as usize + 1;
                    if stack.len() <= n {
                        fail!();
                    }
                    let last = stack.len() - 1;
                    stack.swap(last, last - n);
                }
                op::LOG0..=op::LOG4 => {
                    if f.is_static {
                        fail!();
                    }
                    let n = (opcode - op::LOG0) as usize;
                    let (o, l) = (pop!(), pop!());
                    let mut topics = Vec::with_capacity(n);
                    for _ in 0..n {
                        topics.push(pop!());
                    }
                    let (o, l) = mem_range!(o, l);
                    if self.tracing && self.trace.logs.len() < MAX_LOGGED {
                        self.trace.logs.push(LogRecord {
                            address: f.address,
                            topics,
                            data: mem[o..o + l].to_vec(),
                        });
                    }
                }
                op::CREATE => {
                    if f.is_static {
                        fail!();
                    }
                    let (v, o, l) = (pop!(), pop!(), pop!());
                    let (o, l) = mem_range!(o, l);
                    self.charge(self.cfg.gas.per_create)?;
                    let init = mem[o..o + l].to_vec();
                    let (end, addr) = self.do_create(f.address, v, init, f.depth + 1, record)?;
                    ret_data = if end.success { Vec::new() } else { end.output };
                    push!(addr.map(|a| a.to_word()).unwrap_or_default())
                }
                op::CALL | op::STATICCALL | op::DELEGATECALL => {
                    let _gas = pop!();
                    let to = Address::from_word(pop!());
                    let value = if opcode == op::CALL { pop!() } else { Word::zero() };
                    let (ao, al, ro, rl) = (pop!(), pop!(), pop!(), pop!());
                    if opcode == op::CALL && f.is_static && !value.is_zero() {
                        fail!();
                    }
                    let (ao, al) = mem_range!(ao, al);
                    let (ro, rl) = mem_range!(ro, rl);
                    self.charge(self.cfg.gas.per_call)?;
                    let input = mem[ao..ao + al].to_vec();
                    let end = match opcode {
                        op::CALL => self.do_call(
                            CallKind::Call, f.address, to, to, value, input, f.depth + 1, f.is_static, record,
                        )?,
                        op::STATICCALL => self.do_call(
                            CallKind::StaticCall, f.address, to, to, Word::zero(), input, f.depth + 1, true, record,
                        )?,
                        _ => self.do_call(
                            CallKind::DelegateCall, f.caller, to, f.address, f.value, input, f.depth + 1,
                            f.is_static, record,
                        )?,
                    };
                    let n = rl.min(end.output.len());
                    mem[ro..ro + n].copy_from_slice(&end.output[..n]);
                    ret_data = end.output;
                    push!(bool_word(end.success))
                }
                op::RETURN | op::REVERT => {
                    let (o, l) = (pop!(), pop!());
                    let (o, l) = mem_range!(o, l);
                    return Ok(FrameEnd {
                        success: opcode == op::RETURN,
                        output: mem[o..o + l].to_vec(),
                    });
                }
                op::SELFDESTRUCT => {
                    if f.is_static {
                        fail!();
                    }
                    let beneficiary = Address::from_word(pop!());
                    if beneficiary != f.address {
                        let bal = self.world.balance(&f.address);
                        self.transfer(f.address, beneficiary, bal);
                    }
                    let old = self.world.account(&f.address).cloned();
                    self.journal.push(Journal::Account {
                        addr: f.address,
                        old: old.clone(),
                    });
                    let acct = self.world.account_mut(f.address);
                    acct.code = Arc::new(Vec::new());
                    acct.storage.clear();
                    return Ok(FrameEnd {
                        success: true,
                        output: Vec::new(),
                    });
                }
                _ => fail!(),
            }
            pc = next;
        }
    }
}

impl Host for Machine<'_, '_> {
    fn storage(&self, addr: &Address, key: Word) -> Word {
        self.world.storage(addr, key)
    }

    fn balance(&self, addr: &Address) -> Word {
        self.world.balance(addr)
    }

    fn static_call(&mut self, caller: Address, target: Address, input: Vec<u8>) -> Option<Vec<u8>> {
        let saved = (self.tracing, self.gas_used, self.steps);
        self.tracing = false;
        let checkpoint = self.journal.len();
        let res = self.do_call(CallKind::StaticCall, caller, target, target, Word::zero(), input, 1, true, None);
        self.revert_to(checkpoint);
        (self.tracing, self.gas_used, self.steps) = saved;
        match res {
            Ok(end) if end.success => Some(end.output),
            _ => None,
        }
    }
}

fn valid_dest(dests: &[bool], d: Word) -> Option<usize> {
    if d.bits() > 32 {
        return None;
    }
    let d = d.low_u64() as usize;
    if d < dests.len() && dests[d] {
        Some(d)
    } else {
        None
    }
}

fn copy_padded(dst: &mut [u8], src: &[u8], offset: Word) {
    dst.fill(0);
    if offset.bits() > 32 {
        return;
    }
    let o = offset.low_u64() as usize;
    if o >= src.len() {
        return;
    }
    let n = dst.len().min(src.len() - o);
    dst[..n].copy_from_slice(&src[o..o + n]);
}

fn bool_word(b: bool) -> Word {
    if b {
        Word::one()
    } else {
        Word::zero()
    }
}

fn narrow(v: U512) -> Word {
    Word::try_from(v).expect("value reduced below a 256-bit modulus")
}

fn is_neg(x: Word) -> bool {
    x.bit(255)
}

fn neg(x: Word) -> Word {
    (!x).overflowing_add(Word::one()).0
}

fn abs(x: Word) -> Word {
    if is_neg(x) {
        neg(x)
    } else {
        x
    }
}

fn sdiv(a: Word, b: Word) -> Word {
    if b.is_zero() {
        return Word::zero();
    }
    let q = abs(a) / abs(b);
    if is_neg(a) != is_neg(b) {
        neg(q)
    } else {
        q
    }
}

fn smod(a: Word, b: Word) -> Word {
    if b.is_zero() {
        return Word::zero();
    }
    let r = abs(a) % abs(b);
    if is_neg(a) {
        neg(r)
    } else {
        r
    }
}

fn slt(a: Word, b: Word) -> bool {
    match (is_neg(a), is_neg(b)) {
        (true, false) => true,
        (false, true) => false,
        _ => a < b,
    }
}

fn sar(shift: Word, x: Word) -> Word {
    let negative = is_neg(x);
    if shift >= Word::from(256) {
        return if negative { Word::MAX } else { Word::zero() };
    }
    let s = shift.low_u64() as usize;
    if negative {
        !((!x) >> s)
    } else {
        x >> s
    }
}

fn signextend(b: Word, x: Word) -> Word {
    if b >= Word::from(31) {
        return x;
    }
    let bit = (b.low_u64() as usize) * 8 + 7;
    let low_mask = (Word::one() << bit) - 1;
    if x.bit(bit) {
        x | !low_mask
    } else {
        x & low_mask
    }
}
