//! Running a backrun program through our executor.
//!
//! The program is encoded once with best-guess values. An inspector then
//! patches each call the executor issues (in program order) with values
//! computed from live state: pool quotes, balances, allowances, loan plans.
//! The patched calls are re-encoded into a static program for submission.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{pool_quote, token_balance_of, ActionKind, ArgValue};
use crate::contracts::{
    encode_words, execute_calldata, flashloan_calldata, sig, swap_calldata, Record, PROVIDER_FEE,
};
use crate::minivm::{execute_with, BranchOverrides, CallSite, ExecResult, Host, Inspector, Message, VmConfig, WorldState};
use crate::program::{Operator, ProgramWithHoles, RuleFill};
use crate::rewrite::{plan_flashloans, FlashloanProvider};
use crate::types::{read_word, selector, word_to_u64_sat, Address, Word};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("program is not a backrun program")]
    NotBackrun,
    #[error("flashloan need cannot be covered by the providers in the program")]
    Unfundable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Main,
    SwapIn,
    Repay,
}

#[derive(Debug, Clone)]
enum Data {
    Empty,
    Raw(Vec<u8>),
    Words { selector: [u8; 4], words: Vec<ArgValue>, tail: Vec<u8> },
    Flashloan { receiver: Address, amount: ArgValue },
    Swap { outs: [ArgValue; 2], to: Address },
}

#[derive(Debug, Clone)]
struct Node {
    action: usize,
    role: Role,
    target: Option<Address>,
    value: ArgValue,
    data: Data,
    children: Vec<usize>,
}

fn zero() -> ArgValue {
    ArgValue::Constant(Word::zero())
}

fn build(actions: &[super::Action], our: Address) -> (Vec<Node>, Vec<usize>) {
    let mut nodes = Vec::new();
    let mut open: Vec<(u32, usize, Address)> = Vec::new();
    let mut roots = Vec::new();
    for (ai, a) in actions.iter().enumerate() {
        while open.len() as u32 > a.depth {
            open.pop();
        }
        let mut push = |n: Node, nodes: &mut Vec<Node>, open: &Vec<(u32, usize, Address)>| {
            let id = nodes.len();
            nodes.push(n);
            match open.last() {
                Some((_, parent, _)) => nodes[*parent].children.push(id),
                None => roots.push(id),
            }
            id
        };
        match &a.kind {
            ActionKind::Call { target, selector, args, tail, value } => {
                let data = match selector.as_deref().and_then(|s| hex::decode(s).ok()) {
                    Some(s) if s.len() == 4 => Data::Words {
                        selector: [s[0], s[1], s[2], s[3]],
                        words: args.clone(),
                        tail: tail.clone(),
                    },
                    _ => Data::Empty,
                };
                push(
                    Node { action: ai, role: Role::Main, target: Some(*target), value: value.clone(), data, children: vec![] },
                    &mut nodes,
                    &open,
                );
            }
            ActionKind::Flashloan { provider, amount, receiver, .. } => {
                let id = push(
                    Node {
                        action: ai,
                        role: Role::Main,
                        target: Some(*provider),
                        value: zero(),
                        data: Data::Flashloan { receiver: *receiver, amount: amount.clone() },
                        children: vec![],
                    },
                    &mut nodes,
                    &open,
                );
                open.push((a.depth + 1, id, *provider));
            }
            ActionKind::Swap { pool, token_in, amount_in, amount_out, to, .. } => {
                if let Some(amt) = amount_in {
                    let n = if token_in.is_zero() {
                        Node { action: ai, role: Role::SwapIn, target: Some(*pool), value: amt.clone(), data: Data::Empty, children: vec![] }
                    } else {
                        Node {
                            action: ai,
                            role: Role::SwapIn,
                            target: Some(*token_in),
                            value: zero(),
                            data: Data::Words {
                                selector: selector(sig::TRANSFER),
                                words: vec![ArgValue::Address(*pool), amt.clone()],
                                tail: vec![],
                            },
                            children: vec![],
                        }
                    };
                    push(n, &mut nodes, &open);
                }
                push(
                    Node {
                        action: ai,
                        role: Role::Main,
                        target: Some(*pool),
                        value: zero(),
                        data: Data::Swap { outs: amount_out.clone(), to: *to },
                        children: vec![],
                    },
                    &mut nodes,
                    &open,
                );
            }
            ActionKind::Transfer { token, from, to, amount, .. } => {
                let role = if open.iter().any(|(_, _, p)| p == to) { Role::Repay } else { Role::Main };
                let n = if token.is_zero() {
                    Node { action: ai, role, target: Some(*to), value: amount.clone(), data: Data::Empty, children: vec![] }
                } else if *from == our {
                    Node {
                        action: ai,
                        role,
                        target: Some(*token),
                        value: zero(),
                        data: Data::Words {
                            selector: selector(sig::TRANSFER),
                            words: vec![ArgValue::Address(*to), amount.clone()],
                            tail: vec![],
                        },
                        children: vec![],
                    }
                } else {
                    Node {
                        action: ai,
                        role,
                        target: Some(*token),
                        value: zero(),
                        data: Data::Words {
                            selector: selector(sig::TRANSFER_FROM),
                            words: vec![ArgValue::Address(*from), ArgValue::Address(*to), amount.clone()],
                            tail: vec![],
                        },
                        children: vec![],
                    }
                };
                push(n, &mut nodes, &open);
            }
            ActionKind::Create { initcode, value } => {
                push(
                    Node {
                        action: ai,
                        role: Role::Main,
                        target: None,
                        value: ArgValue::Constant(*value),
                        data: Data::Raw(initcode.clone()),
                        children: vec![],
                    },
                    &mut nodes,
                    &open,
                );
            }
        }
    }
    (nodes, roots)
}

/// Values resolved for one node: (value, words in data order).
#[derive(Debug, Clone, Default)]
struct Resolved {
    value: Word,
    words: Vec<Word>,
}

fn encode(nodes: &[Node], id: usize, resolved: &[Option<Resolved>], guess: &dyn Fn(&ArgValue) -> Word) -> Record {
    let n = &nodes[id];
    let r = resolved[id].clone();
    let word_at = |i: usize, v: &ArgValue| r.as_ref().map(|r| r.words[i]).unwrap_or_else(|| guess(v));
    let value = r.as_ref().map(|r| r.value).unwrap_or_else(|| guess(&n.value));
    let data = match &n.data {
        Data::Empty => Vec::new(),
        Data::Raw(b) => b.clone(),
        Data::Words { selector, words, tail } => {
            let ws: Vec<Word> = words.iter().enumerate().map(|(i, v)| word_at(i, v)).collect();
            let mut d = encode_words(*selector, &ws);
            d.extend_from_slice(tail);
            d
        }
        Data::Flashloan { receiver, amount } => {
            let inner: Vec<Record> = n.children.iter().map(|c| encode(nodes, *c, resolved, guess)).collect();
            flashloan_calldata(*receiver, word_at(0, amount), &inner)
        }
        Data::Swap { outs, to } => swap_calldata(word_at(0, &outs[0]), word_at(1, &outs[1]), *to),
    };
    Record {
        target: n.target,
        value,
        data,
    }
}

struct Resolver<'a> {
    nodes: &'a [Node],
    program: &'a ProgramWithHoles,
    fills: &'a [Word],
    executor: Address,
    next: usize,
    by_record: BTreeMap<usize, usize>,
    outputs: Vec<Option<Vec<u8>>>,
    action_node: BTreeMap<usize, usize>,
    resolved: Vec<Option<Resolved>>,
    /// Forced flashloan amounts by node.
    loan_override: BTreeMap<usize, Word>,
    /// Resolved loan per provider, for repayment.
    loans: BTreeMap<Address, Word>,
    // Need measurement: loan token -> (start balance, max net outflow).
    measure: Option<BTreeMap<Address, (Word, Word)>>,
    stopped: bool,
}

impl Resolver<'_> {
    fn rule(&self, host: &mut dyn Host, r: &RuleFill, node: usize) -> Word {
        match r {
            RuleFill::Approval { token, owner, spender } => {
                let data = encode_words(selector(sig::ALLOWANCE), &[owner.to_word(), spender.to_word()]);
                host.static_call(self.executor, *token, data)
                    .map(|o| read_word(&o, 0))
                    .unwrap_or_default()
            }
            RuleFill::Flashloan { amount, .. } => self.loan_override.get(&node).copied().unwrap_or(*amount),
            RuleFill::Repay { provider } => {
                let loan = self.loans.get(provider).copied().unwrap_or_default();
                let fee = word_to_u64_sat(host.storage(provider, Word::from(PROVIDER_FEE)));
                loan + loan * Word::from(fee) / Word::from(10_000u64)
            }
            RuleFill::SwapOut { .. } => Word::zero(),
            RuleFill::SwapInAll { token } => token_balance_of(host, *token, self.executor),
        }
    }

    fn arg(&self, host: &mut dyn Host, v: &ArgValue, node: usize) -> Word {
        match v {
            ArgValue::Constant(w) => *w,
            ArgValue::Address(a) => a.to_word(),
            ArgValue::PriorReturn { action, word } => self
                .action_node
                .get(action)
                .and_then(|n| self.outputs[*n].as_ref())
                .map(|o| read_word(o, 32 * word))
                .unwrap_or_default(),
            ArgValue::Hole(i) => match self.program.holes.get(*i).and_then(|h| h.rule.as_ref()) {
                Some(r) => {
                    let r = r.clone();
                    self.rule(host, &r, node)
                }
                None => self.fills.get(*i).copied().unwrap_or_default(),
            },
            ArgValue::Dynamic(r) => self.rule(host, r, node),
        }
    }

    fn is_swap_out(&self, v: &ArgValue) -> bool {
        match v {
            ArgValue::Dynamic(RuleFill::SwapOut { .. }) => true,
            ArgValue::Hole(i) => matches!(
                self.program.holes.get(*i).and_then(|h| h.rule.as_ref()),
                Some(RuleFill::SwapOut { .. })
            ),
            _ => false,
        }
    }

    fn snapshot(&mut self, host: &mut dyn Host, id: usize) {
        let Some(m) = self.measure.as_mut() else { return };
        if self.stopped {
            return;
        }
        if self.nodes[id].role == Role::Repay {
            self.stopped = true;
        }
        if matches!(self.nodes[id].data, Data::Flashloan { .. }) {
            return;
        }
        let borrowed: BTreeMap<Address, Word> = self.loans.iter().fold(BTreeMap::new(), |mut acc, (p, amt)| {
            let tok = Address::from_word(host.storage(p, Word::from(crate::contracts::PROVIDER_TOKEN)));
            *acc.entry(tok).or_default() += *amt;
            acc
        });
        let executor = self.executor;
        for (tok, (start, peak)) in m.iter_mut() {
            let b = token_balance_of(host, *tok, executor);
            let have = *start + borrowed.get(tok).copied().unwrap_or_default();
            let net = have.saturating_sub(b);
            if net > *peak {
                *peak = net;
            }
        }
    }
}

impl Inspector for Resolver<'_> {
    fn before_call(&mut self, host: &mut dyn Host, site: &CallSite, input: &mut Vec<u8>, value: &mut Word) {
        if site.caller != self.executor || self.next >= self.nodes.len() {
            return;
        }
        let id = self.next;
        self.next += 1;
        self.by_record.insert(site.record, id);
        self.snapshot(host, id);
        let node = self.nodes[id].clone();
        let v = self.arg(host, &node.value, id);
        *value = v;
        let mut words = Vec::new();
        match &node.data {
            Data::Empty | Data::Raw(_) => {}
            Data::Words { words: ws, .. } => {
                for (i, a) in ws.iter().enumerate() {
                    let w = self.arg(host, a, id);
                    patch_word(input, 4 + 32 * i, w);
                    words.push(w);
                }
            }
            Data::Flashloan { amount, .. } => {
                let w = self.arg(host, amount, id);
                patch_word(input, 4 + 32, w);
                if let Some(p) = node.target {
                    *self.loans.entry(p).or_default() = w;
                }
                words.push(w);
            }
            Data::Swap { outs, .. } => {
                let quote = if outs.iter().any(|o| self.is_swap_out(o)) {
                    node.target.and_then(|p| pool_quote(host, p))
                } else {
                    None
                };
                for (i, o) in outs.iter().enumerate() {
                    let w = if self.is_swap_out(o) {
                        quote.map(|q| q[i]).unwrap_or_default()
                    } else {
                        self.arg(host, o, id)
                    };
                    patch_word(input, 4 + 32 * i, w);
                    words.push(w);
                }
            }
        }
        self.resolved[id] = Some(Resolved { value: v, words });
    }

    fn after_call(&mut self, _host: &mut dyn Host, site: &CallSite, _success: bool, output: &[u8]) {
        if let Some(id) = self.by_record.get(&site.record) {
            self.outputs[*id] = Some(output.to_vec());
        }
    }
}

fn patch_word(input: &mut [u8], off: usize, w: Word) {
    if input.len() >= off + 32 {
        input[off..off + 32].copy_from_slice(&w.to_big_endian());
    }
}

/// Result of running a backrun program once.
#[derive(Debug, Clone)]
pub struct BackrunRun {
    /// Static transaction reproducing the run.
    pub msg: Message,
    pub result: ExecResult,
    /// Planned flashloan amounts by provider.
    pub loans: Vec<(Address, Word)>,
}

/// Runs `program` with the open holes set to `fills` from the operator's EOA.
pub fn run_program(
    world: &WorldState,
    program: &ProgramWithHoles,
    fills: &[Word],
    operator: &Operator,
    cfg: &VmConfig,
) -> Result<BackrunRun, ExecError> {
    let body = program.backrun_body().ok_or(ExecError::NotBackrun)?;
    let (nodes, roots) = build(&body.actions, operator.executor);
    let mut action_node = BTreeMap::new();
    for (i, n) in nodes.iter().enumerate() {
        if n.role != Role::SwapIn {
            action_node.insert(n.action, i);
        }
    }
    let guess = |v: &ArgValue| -> Word {
        match v {
            ArgValue::Constant(w) => *w,
            ArgValue::Address(a) => a.to_word(),
            ArgValue::Hole(i) => match program.holes.get(*i) {
                Some(h) if h.rule.is_some() => h.filled.unwrap_or_default(),
                _ => fills.get(*i).copied().unwrap_or_default(),
            },
            _ => Word::zero(),
        }
    };
    let none: Vec<Option<Resolved>> = vec![None; nodes.len()];
    let initial: Vec<Record> = roots.iter().map(|r| encode(&nodes, *r, &none, &guess)).collect();
    let msg = Message::call(operator.eoa, operator.executor, execute_calldata(&initial));

    let new_resolver = |loan_override: BTreeMap<usize, Word>, measure| Resolver {
        nodes: &nodes,
        program,
        fills,
        executor: operator.executor,
        next: 0,
        by_record: BTreeMap::new(),
        outputs: vec![None; nodes.len()],
        action_node: action_node.clone(),
        resolved: vec![None; nodes.len()],
        loan_override,
        loans: BTreeMap::new(),
        measure,
        stopped: false,
    };

    // Flashloans sized by rule: measure the need with loans at capacity, then plan.
    let planned: Vec<(usize, Address, Address)> = nodes
        .iter()
        .enumerate()
        .filter_map(|(i, n)| match &n.data {
            Data::Flashloan { amount, .. } if is_flash_rule(program, amount) => {
                let p = n.target?;
                let tok = Address::from_word(world.storage(&p, Word::from(crate::contracts::PROVIDER_TOKEN)));
                Some((i, p, tok))
            }
            _ => None,
        })
        .collect();
    let mut loan_override = BTreeMap::new();
    let mut loans = Vec::new();
    if !planned.is_empty() {
        let capacity = |p: &Address, tok: &Address| -> Word {
            if tok.is_zero() {
                world.balance(p)
            } else {
                crate::contracts::token_balance(world, *tok, *p)
            }
        };
        let at_cap: BTreeMap<usize, Word> = planned.iter().map(|(i, p, t)| (*i, capacity(p, t))).collect();
        let tokens: BTreeMap<Address, (Word, Word)> = planned
            .iter()
            .map(|(_, _, t)| {
                let start = if t.is_zero() {
                    world.balance(&operator.executor)
                } else {
                    crate::contracts::token_balance(world, *t, operator.executor)
                };
                (*t, (start, Word::zero()))
            })
            .collect();
        let mut probe = new_resolver(at_cap, Some(tokens));
        let _ = execute_with(world, &msg, &BranchOverrides::none(), cfg, Some(&mut probe));
        let needs = probe.measure.unwrap_or_default();
        for (tok, (_, need)) in needs {
            let providers: Vec<FlashloanProvider> = planned
                .iter()
                .filter(|(_, _, t)| *t == tok)
                .map(|(_, p, t)| FlashloanProvider {
                    address: *p,
                    token: *t,
                    fee_bps: word_to_u64_sat(world.storage(p, Word::from(PROVIDER_FEE))),
                    capacity: capacity(p, t),
                })
                .collect();
            let plan = plan_flashloans(tok, need, &providers).map_err(|_| ExecError::Unfundable)?;
            for (i, p, t) in &planned {
                if *t != tok {
                    continue;
                }
                let amt = plan.iter().find(|(a, _)| a == p).map(|(_, w)| *w).unwrap_or_default();
                // A provider listed twice lends once.
                if loans.iter().any(|(q, _)| q == p) {
                    loan_override.insert(*i, Word::zero());
                } else {
                    loan_override.insert(*i, amt);
                    loans.push((*p, amt));
                }
            }
        }
    }

    let mut res = new_resolver(loan_override, None);
    let result = execute_with(world, &msg, &BranchOverrides::none(), cfg, Some(&mut res));
    let finals: Vec<Record> = roots.iter().map(|r| encode(&nodes, *r, &res.resolved, &guess)).collect();
    let msg = Message::call(operator.eoa, operator.executor, execute_calldata(&finals));
    Ok(BackrunRun { msg, result, loans })
}

fn is_flash_rule(program: &ProgramWithHoles, v: &ArgValue) -> bool {
    match v {
        ArgValue::Dynamic(RuleFill::Flashloan { .. }) => true,
        ArgValue::Hole(i) => matches!(
            program.holes.get(*i).and_then(|h| h.rule.as_ref()),
            Some(RuleFill::Flashloan { .. })
        ),
        _ => false,
    }
}
