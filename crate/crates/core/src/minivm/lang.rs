//! A tiny structured language that compiles to the opcode subset.
//!
//! Contracts in the scenario corpus are written with it. Locals live in memory
//! at fixed offsets, so expressions never need stack juggling. Every conditional
//! compiles to `PUSH2 <label> JUMPI`, which keeps branch sites patchable.

use std::cell::Cell;

use super::asm::Asm;
use super::opcode as op;
use crate::types::{address_mask, Address, Word};

/// Scratch area for hashing (two words).
pub const SCRATCH: u64 = 0x00;
/// Locals: 32 words.
pub const LOCALS: u64 = 0x400;
/// Return data of the most recent call (8 words).
pub const RETBUF: u64 = 0x800;
/// Outgoing calldata / return payload buffer; unbounded above.
pub const CALLBUF: u64 = 0x1000;

#[derive(Debug, Clone)]
pub enum E {
    C(Word),
    Local(usize),
    /// `calldataload(4 + 32k)`
    Arg(usize),
    /// Argument `k` masked to 160 bits.
    ArgAddr(usize),
    CdLoad(Box<E>),
    CdSize,
    Caller,
    Origin,
    SelfAddr,
    CallValue,
    Gas,
    Balance(Box<E>),
    SLoad(Box<E>),
    MLoad(Box<E>),
    /// Word `i` of the last call's return buffer.
    Ret(usize),
    RetSize,
    Bin(u8, Box<E>, Box<E>),
    Un(u8, Box<E>),
    /// `keccak256(a . b)`, the Solidity mapping slot of key `a` in slot `b`.
    MapSlot(Box<E>, Box<E>),
    /// `keccak256(a)` of a single word.
    Hash1(Box<E>),
    Min(Box<E>, Box<E>),
}

pub fn c(v: impl Into<Word>) -> E {
    E::C(v.into())
}
pub fn addr(a: Address) -> E {
    E::C(a.to_word())
}
pub fn local(i: usize) -> E {
    E::Local(i)
}
pub fn arg(k: usize) -> E {
    E::Arg(k)
}
pub fn arg_addr(k: usize) -> E {
    E::ArgAddr(k)
}
pub fn sload(k: E) -> E {
    E::SLoad(Box::new(k))
}
pub fn balance(a: E) -> E {
    E::Balance(Box::new(a))
}
pub fn ret(i: usize) -> E {
    E::Ret(i)
}
pub fn map_slot(key: E, slot: E) -> E {
    E::MapSlot(Box::new(key), Box::new(slot))
}
pub fn hash1(a: E) -> E {
    E::Hash1(Box::new(a))
}
pub fn cdload(off: E) -> E {
    E::CdLoad(Box::new(off))
}
pub fn mload(off: E) -> E {
    E::MLoad(Box::new(off))
}
pub fn add(a: E, b: E) -> E {
    E::Bin(op::ADD, Box::new(a), Box::new(b))
}
pub fn sub(a: E, b: E) -> E {
    E::Bin(op::SUB, Box::new(a), Box::new(b))
}
pub fn mul(a: E, b: E) -> E {
    E::Bin(op::MUL, Box::new(a), Box::new(b))
}
pub fn div(a: E, b: E) -> E {
    E::Bin(op::DIV, Box::new(a), Box::new(b))
}
pub fn lt(a: E, b: E) -> E {
    E::Bin(op::LT, Box::new(a), Box::new(b))
}
pub fn gt(a: E, b: E) -> E {
    E::Bin(op::GT, Box::new(a), Box::new(b))
}
pub fn eq(a: E, b: E) -> E {
    E::Bin(op::EQ, Box::new(a), Box::new(b))
}
pub fn and(a: E, b: E) -> E {
    E::Bin(op::AND, Box::new(a), Box::new(b))
}
pub fn or(a: E, b: E) -> E {
    E::Bin(op::OR, Box::new(a), Box::new(b))
}
pub fn shl(bits: u64, a: E) -> E {
    E::Bin(op::SHL, Box::new(c(bits)), Box::new(a))
}
pub fn shr(bits: u64, a: E) -> E {
    E::Bin(op::SHR, Box::new(c(bits)), Box::new(a))
}
pub fn not(a: E) -> E {
    E::Un(op::ISZERO, Box::new(a))
}
pub fn ge(a: E, b: E) -> E {
    not(lt(a, b))
}
pub fn le(a: E, b: E) -> E {
    not(gt(a, b))
}
/// `min(a, b)` without branching.
pub fn min(a: E, b: E) -> E {
    E::Min(Box::new(a), Box::new(b))
}

/// A call target description for [`S::Call`].
#[derive(Debug, Clone)]
pub struct CallSpec {
    pub kind: u8,
    pub target: E,
    pub value: E,
    pub selector: Option<[u8; 4]>,
    pub args: Vec<E>,
    /// Extra raw bytes appended after the args: (calldata offset, length) copied from our own calldata.
    pub tail_from_calldata: Option<(E, E)>,
    /// Calldata already sits in CALLBUF with this length; selector and args are ignored.
    pub raw_len: Option<E>,
    pub ret_words: usize,
}

#[derive(Debug, Clone)]
pub enum S {
    Let(usize, E),
    SStore(E, E),
    MStore(E, E),
    Require(E),
    If(E, Vec<S>, Vec<S>),
    While(E, Vec<S>),
    /// Performs a call; the success flag goes to the local, or is required when `None`.
    Call(CallSpec, Option<usize>),
    /// `calldatacopy(dst, src, len)`
    CdCopy(E, E, E),
    /// `create(value, CALLBUF, len)` into the local.
    Create(E, E, usize),
    Return(Vec<E>),
    Stop,
    Revert,
    SelfDestruct(E),
    Log1(E, E),
}

pub fn call(target: E, selector: [u8; 4], args: Vec<E>) -> CallSpec {
    CallSpec {
        kind: op::CALL,
        target,
        value: c(0u64),
        selector: Some(selector),
        args,
        tail_from_calldata: None,
        raw_len: None,
        ret_words: 2,
    }
}

pub fn static_call(target: E, selector: [u8; 4], args: Vec<E>) -> CallSpec {
    CallSpec {
        kind: op::STATICCALL,
        ..call(target, selector, args)
    }
}

/// A plain value transfer (empty calldata).
pub fn send(target: E, value: E) -> CallSpec {
    CallSpec {
        kind: op::CALL,
        target,
        value,
        selector: None,
        args: vec![],
        tail_from_calldata: None,
        raw_len: None,
        ret_words: 0,
    }
}

/// A call whose calldata the caller already wrote to CALLBUF.
pub fn raw_call(target: E, value: E, len: E) -> CallSpec {
    CallSpec {
        raw_len: Some(len),
        ..send(target, value)
    }
}

impl CallSpec {
    pub fn with_value(mut self, v: E) -> CallSpec {
        self.value = v;
        self
    }
}

/// Compiler state: the assembler plus a fresh-label counter.
pub struct Compiler {
    pub asm: Asm,
    counter: Cell<usize>,
}

impl Default for Compiler {
    fn default() -> Self {
        Compiler::new()
    }
}

impl Compiler {
    pub fn new() -> Compiler {
        Compiler {
            asm: Asm::new(),
            counter: Cell::new(0),
        }
    }

    fn fresh(&self, stem: &str) -> String {
        let n = self.counter.get();
        self.counter.set(n + 1);
        format!("__{stem}{n}")
    }

    pub fn expr(&mut self, e: &E) {
        let a = &mut self.asm;
        match e {
            E::C(v) => {
                a.push(*v);
            }
            E::Local(i) => {
                a.push_u64(LOCALS + 32 * *i as u64).op(op::MLOAD);
            }
            E::Arg(k) => {
                a.arg(*k);
            }
            E::ArgAddr(k) => {
                a.arg_addr(*k);
            }
            E::CdLoad(o) => {
                self.expr(o);
                self.asm.op(op::CALLDATALOAD);
            }
            E::CdSize => {
                a.op(op::CALLDATASIZE);
            }
            E::Caller => {
                a.op(op::CALLER);
            }
            E::Origin => {
                a.op(op::ORIGIN);
            }
            E::SelfAddr => {
                a.op(op::ADDRESS);
            }
            E::CallValue => {
                a.op(op::CALLVALUE);
            }
            E::Gas => {
                a.op(op::GAS);
            }
            E::Balance(x) => {
                self.expr(x);
                self.asm.op(op::BALANCE);
            }
            E::SLoad(k) => {
                self.expr(k);
                self.asm.op(op::SLOAD);
            }
            E::MLoad(o) => {
                self.expr(o);
                self.asm.op(op::MLOAD);
            }
            E::Ret(i) => {
                a.push_u64(RETBUF + 32 * *i as u64).op(op::MLOAD);
            }
            E::RetSize => {
                a.op(op::RETURNDATASIZE);
            }
            E::Bin(o, x, y) => {
                self.expr(y);
                self.expr(x);
                self.asm.op(*o);
            }
            E::Un(o, x) => {
                self.expr(x);
                self.asm.op(*o);
            }
            E::MapSlot(k, s) => {
                self.expr(s);
                self.asm.push_u64(SCRATCH + 32).op(op::MSTORE);
                self.expr(k);
                self.asm
                    .push_u64(SCRATCH)
                    .op(op::MSTORE)
                    .push_u64(64)
                    .push_u64(SCRATCH)
                    .op(op::SHA3);
            }
            E::Min(x, y) => {
                // [b, a] -> [b, a, a<b] -> b + (a - b) * (a < b)
                self.expr(y);
                self.expr(x);
                self.asm
                    .op(op::DUP1 + 1)
                    .op(op::DUP1 + 1)
                    .op(op::LT)
                    .op(op::SWAP1)
                    .op(op::DUP1 + 2)
                    .op(op::SWAP1)
                    .op(op::SUB)
                    .op(op::MUL)
                    .op(op::ADD);
            }
            E::Hash1(x) => {
                self.expr(x);
                self.asm
                    .push_u64(SCRATCH)
                    .op(op::MSTORE)
                    .push_u64(32)
                    .push_u64(SCRATCH)
                    .op(op::SHA3);
            }
        }
    }

    pub fn stmt(&mut self, s: &S) {
        match s {
            S::Let(i, e) => {
                self.expr(e);
                self.asm.push_u64(LOCALS + 32 * *i as u64).op(op::MSTORE);
            }
            S::SStore(k, v) => {
                self.expr(v);
                self.expr(k);
                self.asm.op(op::SSTORE);
            }
            S::MStore(o, v) => {
                self.expr(v);
                self.expr(o);
                self.asm.op(op::MSTORE);
            }
            S::Require(cond) => {
                let ok = self.fresh("ok");
                self.expr(cond);
                self.asm.jumpi(&ok).revert0().label(&ok);
            }
            S::If(cond, then, els) => {
                let else_l = self.fresh("else");
                let end_l = self.fresh("endif");
                self.expr(&not(cond.clone()));
                self.asm.jumpi(&else_l);
                self.block(then);
                self.asm.jump(&end_l).label(&else_l);
                self.block(els);
                self.asm.label(&end_l);
            }
            S::While(cond, body) => {
                let top = self.fresh("loop");
                let end = self.fresh("endloop");
                self.asm.label(&top);
                self.expr(&not(cond.clone()));
                self.asm.jumpi(&end);
                self.block(body);
                self.asm.jump(&top).label(&end);
            }
            S::Call(spec, ok_local) => {
                self.call(spec);
                match ok_local {
                    Some(i) => {
                        self.asm.push_u64(LOCALS + 32 * *i as u64).op(op::MSTORE);
                    }
                    None => {
                        let ok = self.fresh("callok");
                        self.asm.jumpi(&ok).revert0().label(&ok);
                    }
                }
            }
            S::CdCopy(dst, src, len) => {
                self.expr(len);
                self.expr(src);
                self.expr(dst);
                self.asm.op(op::CALLDATACOPY);
            }
            S::Create(value, len, out) => {
                self.expr(len);
                self.asm.push_u64(CALLBUF);
                self.expr(value);
                self.asm.op(op::CREATE).push_u64(LOCALS + 32 * *out as u64).op(op::MSTORE);
            }
            S::Return(words) => {
                for (i, w) in words.iter().enumerate() {
                    self.expr(w);
                    self.asm.push_u64(CALLBUF + 32 * i as u64).op(op::MSTORE);
                }
                self.asm
                    .push_u64(32 * words.len() as u64)
                    .push_u64(CALLBUF)
                    .op(op::RETURN);
            }
            S::Stop => {
                self.asm.op(op::STOP);
            }
            S::Revert => {
                self.asm.revert0();
            }
            S::SelfDestruct(to) => {
                self.expr(to);
                self.asm.op(op::SELFDESTRUCT);
            }
            S::Log1(topic, data) => {
                self.expr(data);
                self.asm.push_u64(SCRATCH).op(op::MSTORE);
                self.expr(topic);
                self.asm.push_u64(32).push_u64(SCRATCH).op(op::LOG0 + 1);
            }
        }
    }

    pub fn block(&mut self, body: &[S]) {
        for s in body {
            self.stmt(s);
        }
    }

    /// Emits a call and leaves the success flag on the stack. Return words land in RETBUF.
    fn call(&mut self, spec: &CallSpec) {
        if let Some(len) = &spec.raw_len {
            self.asm.push_u64(32 * spec.ret_words as u64).push_u64(RETBUF);
            self.expr(len);
            self.asm.push_u64(CALLBUF);
            if spec.kind == op::CALL {
                self.expr(&spec.value);
            }
            self.expr(&spec.target);
            self.asm.op(op::GAS).op(spec.kind);
            return;
        }
        let mut len_static = 0u64;
        if let Some(sel) = spec.selector {
            let w = Word::from_big_endian(&sel) << 224;
            self.asm.push(w).push_u64(CALLBUF).op(op::MSTORE);
            len_static = 4;
        }
        for (k, a) in spec.args.iter().enumerate() {
            self.expr(a);
            self.asm.push_u64(CALLBUF + len_static + 32 * k as u64).op(op::MSTORE);
        }
        len_static += 32 * spec.args.len() as u64;
        // retLen, retOff
        self.asm.push_u64(32 * spec.ret_words as u64).push_u64(RETBUF);
        match &spec.tail_from_calldata {
            Some((off, len)) => {
                // calldatacopy(CALLBUF + static, off, len); argsLen = static + len
                self.expr(len);
                self.expr(off);
                self.asm.push_u64(CALLBUF + len_static).op(op::CALLDATACOPY);
                self.expr(len);
                self.asm.push_u64(len_static).op(op::ADD);
            }
            None => {
                self.asm.push_u64(len_static);
            }
        }
        self.asm.push_u64(CALLBUF);
        if spec.kind == op::CALL {
            self.expr(&spec.value);
        }
        self.expr(&spec.target);
        self.asm.op(op::GAS).op(spec.kind);
    }
}

/// One externally callable function of a [`Contract`].
pub struct Func {
    pub selector: [u8; 4],
    pub body: Vec<S>,
}

pub fn func(signature: &str, body: Vec<S>) -> Func {
    Func {
        selector: crate::types::selector(signature),
        body,
    }
}

/// Compiles a dispatcher over `funcs` with `fallback` as the default path.
/// An empty `fallback` reverts, which hides it from function extraction.
pub fn contract(funcs: &[Func], fallback: &[S]) -> Vec<u8> {
    contract_with_labels(funcs, fallback).0
}

/// Like [`contract`], also returning the entry pc of each function.
pub fn contract_with_labels(funcs: &[Func], fallback: &[S]) -> (Vec<u8>, Vec<usize>) {
    let mut cc = Compiler::new();
    let labels: Vec<String> = (0..funcs.len()).map(|i| format!("fn{i}")).collect();
    let arms: Vec<([u8; 4], &str)> = funcs
        .iter()
        .zip(&labels)
        .map(|(f, l)| (f.selector, l.as_str()))
        .collect();
    cc.asm.dispatcher(&arms, "fallback");
    cc.asm.label("fallback");
    if fallback.is_empty() {
        cc.asm.revert0();
    } else {
        cc.block(fallback);
        cc.asm.op(op::STOP);
    }
    for (f, l) in funcs.iter().zip(&labels) {
        cc.asm.label(l);
        cc.block(&f.body);
        cc.asm.op(op::STOP);
    }
    let entries = labels.iter().map(|l| cc.asm.offset_of(l).unwrap()).collect();
    (cc.asm.build(), entries)
}

/// Straight-line code (constructors and init programs).
pub fn program(body: &[S]) -> Vec<u8> {
    let mut cc = Compiler::new();
    cc.block(body);
    cc.asm.op(op::STOP);
    cc.asm.build()
}

/// Init code that writes `storage`, then returns `runtime` as the deployed code.
pub fn deployer(runtime: &[u8], storage: &[(Word, Word)]) -> Vec<u8> {
    deployer_with(runtime, storage, &[])
}

/// Like [`deployer`] but runs `ctor` (constructor statements) before returning the runtime.
pub fn deployer_with(runtime: &[u8], storage: &[(Word, Word)], ctor: &[S]) -> Vec<u8> {
    let mut cc = Compiler::new();
    for (k, v) in storage {
        cc.asm.push(*v).push(*k).op(op::SSTORE);
    }
    cc.block(ctor);
    for (i, chunk) in runtime.chunks(32).enumerate() {
        let mut buf = [0u8; 32];
        buf[..chunk.len()].copy_from_slice(chunk);
        cc.asm
            .push_n(32, Word::from_big_endian(&buf))
            .push_u64(CALLBUF + 32 * i as u64)
            .op(op::MSTORE);
    }
    cc.asm
        .push_u64(runtime.len() as u64)
        .push_u64(CALLBUF)
        .op(op::RETURN);
    cc.asm.build()
}

/// `2^160 - 1` as an expression.
pub fn addr_mask() -> E {
    E::C(address_mask())
}
