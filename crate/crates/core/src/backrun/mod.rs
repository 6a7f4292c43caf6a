//! Attack backrunning: rebuild a confirmed attack as semantic actions, point its
//! profit at us, and retarget it at similar contracts that are still exposed.

mod exec;
mod replacers;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contracts::{sig, LP_FEE, LP_RESERVE0, LP_RESERVE1, LP_TOKEN0, LP_TOKEN1, PROVIDER_TOKEN};
use crate::funcx::{ArgType, FunctionDesc};
use crate::minivm::{
    execute_with, BranchOverrides, CallKind, CallSite, Host, Inspector, Message, Outcome, VmConfig, WorldState,
};
use crate::program::{BackrunBody, Hole, HoleSlot, ProgramBody, ProgramWithHoles, Provenance, RuleFill};
use crate::rewrite::{quote_v2_swap, PoolReserves};
use crate::types::{read_word, selector, Address, Word};

pub use exec::{run_program, BackrunRun, ExecError};
pub use replacers::{apply_replacer, find_replacers, ReplacerCaps, ReplacerSearch};

/// An argument of an action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgValue {
    Constant(Word),
    /// An address; these are rewritten by redirection and replacers, never fuzzed.
    Address(Address),
    /// Word `word` of the return data of action `action`.
    PriorReturn { action: usize, word: usize },
    Hole(usize),
    /// Computed when the action runs.
    Dynamic(RuleFill),
}

impl ArgValue {
    pub fn constant(&self) -> Option<Word> {
        match self {
            ArgValue::Constant(w) => Some(*w),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionKind {
    Call {
        target: Address,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        selector: Option<String>,
        args: Vec<ArgValue>,
        /// Trailing calldata bytes that do not form a whole word.
        #[serde(with = "crate::types::hex_bytes", default)]
        tail: Vec<u8>,
        value: ArgValue,
    },
    Flashloan {
        provider: Address,
        token: Address,
        amount: ArgValue,
        receiver: Address,
    },
    Swap {
        pool: Address,
        token_in: Address,
        token_out: Address,
        /// Transfer into the pool right before the swap, if the attack made one.
        amount_in: Option<ArgValue>,
        amount_out: [ArgValue; 2],
        to: Address,
        /// The input equalled the sender's whole balance of `token_in`.
        in_was_balance: bool,
    },
    Transfer {
        /// The zero address is the native coin.
        token: Address,
        from: Address,
        to: Address,
        amount: ArgValue,
        was_balance: bool,
    },
    Create {
        #[serde(with = "crate::types::hex_bytes")]
        initcode: Vec<u8>,
        value: Word,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    /// Number of enclosing flashloans.
    pub depth: u32,
    #[serde(flatten)]
    pub kind: ActionKind,
    /// Return data observed in the original attack.
    #[serde(with = "crate::types::hex_bytes", default)]
    pub output: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ActionTrace {
    pub actions: Vec<Action>,
    pub attacker_addresses: Vec<Address>,
    /// Contracts created during the attack, in creation order.
    pub created: Vec<Address>,
    pub victim_set: Vec<Address>,
}

/// Victim address to substitute, in victim order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Replacer {
    pub map: Vec<(Address, Address)>,
}

impl Replacer {
    pub fn identity(victims: &[Address]) -> Replacer {
        Replacer {
            map: victims.iter().map(|v| (*v, *v)).collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().all(|(a, b)| a == b)
    }

    pub fn get(&self, a: &Address) -> Option<Address> {
        self.map.iter().find(|(k, _)| k == a).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackrunError {
    #[error("transaction did not succeed, not an attack")]
    NotAnAttack,
}

/// Sender balances observed right before each transfer of the attack.
#[derive(Default)]
struct Observer {
    /// Sender-side balance of the moved token, for transfers.
    from_balance: BTreeMap<usize, Word>,
}

pub(crate) fn token_balance_of(host: &mut dyn Host, token: Address, holder: Address) -> Word {
    if token.is_zero() {
        return host.balance(&holder);
    }
    let mut data = selector(sig::BALANCE_OF).to_vec();
    data.extend_from_slice(&holder.to_word().to_big_endian());
    host.static_call(holder, token, data)
        .map(|o| read_word(&o, 0))
        .unwrap_or_default()
}

/// Outputs `[out0, out1]` the pool would pay for the input already sitting in it.
pub(crate) fn pool_quote(host: &mut dyn Host, pool: Address) -> Option<[Word; 2]> {
    let t0 = Address::from_word(host.storage(&pool, Word::from(LP_TOKEN0)));
    let t1 = Address::from_word(host.storage(&pool, Word::from(LP_TOKEN1)));
    let r0 = host.storage(&pool, Word::from(LP_RESERVE0));
    let r1 = host.storage(&pool, Word::from(LP_RESERVE1));
    let fee = crate::types::word_to_u64_sat(host.storage(&pool, Word::from(LP_FEE)));
    let b0 = token_balance_of(host, t0, pool);
    let b1 = token_balance_of(host, t1, pool);
    let in0 = b0.saturating_sub(r0);
    let in1 = b1.saturating_sub(r1);
    let q = |r_in, r_out, amount| {
        quote_v2_swap(
            &PoolReserves {
                reserve_in: r_in,
                reserve_out: r_out,
                fee_bps: fee,
            },
            amount,
        )
        .ok()
    };
    match (in0.is_zero(), in1.is_zero()) {
        (true, false) => Some([q(r1, r0, in1)?, Word::zero()]),
        (false, true) => Some([Word::zero(), q(r0, r1, in0)?]),
        _ => None,
    }
}

impl Inspector for Observer {
    fn before_call(&mut self, host: &mut dyn Host, site: &CallSite, input: &mut Vec<u8>, value: &mut Word) {
        if site.kind != CallKind::Call {
            return;
        }
        let sel = (input.len() >= 4).then(|| [input[0], input[1], input[2], input[3]]);
        if sel == Some(selector(sig::TRANSFER)) {
            let b = token_balance_of(host, site.target, site.caller);
            self.from_balance.insert(site.record, b);
        } else if sel == Some(selector(sig::TRANSFER_FROM)) {
            let from = Address::from_word(read_word(input, 4));
            let b = token_balance_of(host, site.target, from);
            self.from_balance.insert(site.record, b);
        } else if input.is_empty() && !value.is_zero() {
            self.from_balance.insert(site.record, host.balance(&site.caller));
        }
    }
}

fn deployed_by(world: &WorldState, eoa: Address, target: Address) -> bool {
    (0..world.nonce(&eoa)).any(|n| Address::create(eoa, n) == target)
}

/// Rebuilds `tx` (executed against `world`, the pre-attack state) as actions.
///
/// The attacker set is the origin, a top-level target the origin deployed, and
/// every contract created in the transaction. Calls from the origin or its
/// exploit to outside addresses become actions; calls made by helper contracts
/// created during the attack are covered by their `Create` and the calls into them.
pub fn reconstruct(world: &WorldState, tx: &Message) -> Result<ActionTrace, BackrunError> {
    let mut obs = Observer::default();
    let r = execute_with(world, tx, &BranchOverrides::none(), &VmConfig::default(), Some(&mut obs));
    if r.outcome != Outcome::Success {
        return Err(BackrunError::NotAnAttack);
    }
    let trace = &r.trace;
    let origin = tx.origin;
    let mut primary: BTreeSet<Address> = BTreeSet::from([origin]);
    match tx.target {
        Some(t) if world.account(&t).is_some_and(|a| a.has_code()) && deployed_by(world, origin, t) => {
            primary.insert(t);
        }
        None => {
            if let Some(c) = r.created {
                primary.insert(c);
            }
        }
        _ => {}
    }
    let created: Vec<Address> = trace
        .created
        .iter()
        .filter(|c| !primary.contains(c))
        .copied()
        .collect();
    let mut attackers = primary.clone();
    attackers.extend(created.iter().copied());

    // A record counts only if it and all its ancestors succeeded.
    let ok: Vec<bool> = {
        let mut ok = vec![false; trace.calls.len()];
        for (i, c) in trace.calls.iter().enumerate() {
            ok[i] = c.success && c.parent.is_none_or(|p| ok[p]);
        }
        ok
    };
    let is_address = |w: Word| -> Option<Address> {
        if w.is_zero() || !Address::fits(w) {
            return None;
        }
        let a = Address::from_word(w);
        (world.exists(&a) || attackers.contains(&a)).then_some(a)
    };

    let mut actions: Vec<Action> = Vec::new();
    let mut flash_records: BTreeSet<usize> = BTreeSet::new();
    for (i, c) in trace.calls.iter().enumerate() {
        if !ok[i] || !primary.contains(&c.caller) || primary.contains(&c.target) {
            continue;
        }
        if c.kind == CallKind::DelegateCall {
            continue;
        }
        let mut depth = 0u32;
        let mut p = c.parent;
        while let Some(pi) = p {
            if flash_records.contains(&pi) {
                depth += 1;
            }
            p = trace.calls[pi].parent;
        }
        let classify = |w: Word, actions: &[Action]| -> ArgValue {
            if let Some(a) = is_address(w) {
                return ArgValue::Address(a);
            }
            if w > Word::one() {
                for (ai, act) in actions.iter().enumerate().rev() {
                    for k in 0..act.output.len() / 32 {
                        if read_word(&act.output, 32 * k) == w {
                            return ArgValue::PriorReturn { action: ai, word: k };
                        }
                    }
                }
            }
            ArgValue::Constant(w)
        };
        let sel = c.selector();
        let word = |k: usize| read_word(&c.input, 4 + 32 * k);
        let kind = if c.kind == CallKind::Create {
            ActionKind::Create {
                initcode: c.input.clone(),
                value: c.value,
            }
        } else if sel == Some(selector(sig::FLASH_LOAN)) {
            flash_records.insert(i);
            ActionKind::Flashloan {
                provider: c.target,
                token: Address::from_word(world.storage(&c.target, Word::from(PROVIDER_TOKEN))),
                amount: classify(word(1), &actions),
                receiver: Address::from_word(word(0)),
            }
        } else if sel == Some(selector(sig::SWAP)) && world.storage(&c.target, Word::from(LP_RESERVE0)) > Word::zero() {
            let (o0, o1) = (word(0), word(1));
            let t0 = Address::from_word(world.storage(&c.target, Word::from(LP_TOKEN0)));
            let t1 = Address::from_word(world.storage(&c.target, Word::from(LP_TOKEN1)));
            let (token_in, token_out) = if o0 > o1 { (t1, t0) } else { (t0, t1) };
            let amount_out = [classify(o0, &actions), classify(o1, &actions)];
            let mut amount_in = None;
            let mut in_was_balance = false;
            if let Some(last) = actions.last() {
                if let ActionKind::Transfer { token, to, amount, was_balance, .. } = &last.kind {
                    if *to == c.target && *token == token_in && last.depth == depth {
                        amount_in = Some(amount.clone());
                        in_was_balance = *was_balance;
                    }
                }
            }
            if amount_in.is_some() {
                actions.pop();
            }
            ActionKind::Swap {
                pool: c.target,
                token_in,
                token_out,
                amount_in,
                amount_out,
                to: Address::from_word(word(2)),
                in_was_balance,
            }
        } else if sel == Some(selector(sig::TRANSFER)) || sel == Some(selector(sig::TRANSFER_FROM)) {
            let (from, to, amount) = if sel == Some(selector(sig::TRANSFER)) {
                (c.caller, Address::from_word(word(0)), word(1))
            } else {
                (Address::from_word(word(0)), Address::from_word(word(1)), word(2))
            };
            if attackers.contains(&from) && attackers.contains(&to) {
                continue;
            }
            ActionKind::Transfer {
                token: c.target,
                from,
                to,
                amount: classify(amount, &actions),
                was_balance: obs.from_balance.get(&i) == Some(&amount),
            }
        } else if c.input.is_empty() && !c.value.is_zero() {
            if attackers.contains(&c.target) {
                continue;
            }
            ActionKind::Transfer {
                token: Address::ZERO,
                from: c.caller,
                to: c.target,
                amount: classify(c.value, &actions),
                was_balance: obs.from_balance.get(&i) == Some(&c.value),
            }
        } else {
            let body = c.input.get(4..).unwrap_or(&[]);
            let args = (0..body.len() / 32)
                .map(|k| classify(read_word(body, 32 * k), &actions))
                .collect();
            ActionKind::Call {
                target: c.target,
                selector: sel.map(hex::encode),
                args,
                tail: body[body.len() / 32 * 32..].to_vec(),
                value: ArgValue::Constant(c.value),
            }
        };
        actions.push(Action {
            depth,
            kind,
            output: c.output.clone(),
        });
    }

    let providers: BTreeSet<Address> = actions
        .iter()
        .filter_map(|a| match a.kind {
            ActionKind::Flashloan { provider, .. } => Some(provider),
            _ => None,
        })
        .collect();
    let mut victims = Vec::new();
    let mut seen = BTreeSet::new();
    for a in &actions {
        for addr in referenced(&a.kind) {
            if !addr.is_zero() && !attackers.contains(&addr) && !providers.contains(&addr) && seen.insert(addr) {
                victims.push(addr);
            }
        }
    }
    Ok(ActionTrace {
        actions,
        attacker_addresses: primary.into_iter().collect(),
        created,
        victim_set: victims,
    })
}

/// Addresses an action refers to, in a fixed order.
pub fn referenced(kind: &ActionKind) -> Vec<Address> {
    let args = |v: &[&ArgValue]| -> Vec<Address> {
        v.iter()
            .filter_map(|a| match a {
                ArgValue::Address(x) => Some(*x),
                _ => None,
            })
            .collect()
    };
    match kind {
        ActionKind::Call { target, args: a, .. } => {
            let mut out = vec![*target];
            out.extend(args(&a.iter().collect::<Vec<_>>()));
            out
        }
        ActionKind::Flashloan { provider, token, receiver, .. } => vec![*provider, *token, *receiver],
        ActionKind::Swap { pool, token_in, token_out, to, .. } => vec![*pool, *token_in, *token_out, *to],
        ActionKind::Transfer { token, from, to, .. } => vec![*token, *from, *to],
        ActionKind::Create { .. } => vec![],
    }
}

/// Applies `f` to every address in the action, including address-valued args.
pub(crate) fn map_addresses(kind: &mut ActionKind, f: &dyn Fn(Address) -> Address) {
    let map_arg = |v: &mut ArgValue| {
        if let ArgValue::Address(a) = v {
            *a = f(*a);
        }
        match v {
            ArgValue::Dynamic(RuleFill::SwapOut { pool }) => *pool = f(*pool),
            ArgValue::Dynamic(RuleFill::SwapInAll { token }) => *token = f(*token),
            ArgValue::Dynamic(RuleFill::Approval { token, owner, spender }) => {
                *token = f(*token);
                *owner = f(*owner);
                *spender = f(*spender);
            }
            ArgValue::Dynamic(RuleFill::Repay { provider }) | ArgValue::Dynamic(RuleFill::Flashloan { provider, .. }) => {
                *provider = f(*provider)
            }
            _ => {}
        }
    };
    match kind {
        ActionKind::Call { target, args, value, .. } => {
            *target = f(*target);
            args.iter_mut().for_each(map_arg);
            map_arg(value);
        }
        ActionKind::Flashloan { provider, token, receiver, amount } => {
            *provider = f(*provider);
            *token = f(*token);
            *receiver = f(*receiver);
            map_arg(amount);
        }
        ActionKind::Swap { pool, token_in, token_out, to, amount_in, amount_out, .. } => {
            *pool = f(*pool);
            *token_in = f(*token_in);
            *token_out = f(*token_out);
            *to = f(*to);
            if let Some(a) = amount_in {
                map_arg(a);
            }
            amount_out.iter_mut().for_each(map_arg);
        }
        ActionKind::Transfer { token, from, to, amount, .. } => {
            *token = f(*token);
            *from = f(*from);
            *to = f(*to);
            map_arg(amount);
        }
        ActionKind::Create { .. } => {}
    }
}

fn replace_bytes(data: &mut [u8], from: &[u8; 20], to: &[u8; 20]) {
    if data.len() < 20 {
        return;
    }
    let mut i = 0;
    while i + 20 <= data.len() {
        if &data[i..i + 20] == from {
            data[i..i + 20].copy_from_slice(to);
            i += 20;
        } else {
            i += 1;
        }
    }
}

/// Rewrites every attacker address to `our`, and every contract the attack
/// created to the address our executor's k-th creation will get.
pub fn redirect_profit(trace: &ActionTrace, our: Address) -> ActionTrace {
    let mut map: BTreeMap<Address, Address> = trace.attacker_addresses.iter().map(|a| (*a, our)).collect();
    let fresh: Vec<Address> = (0..trace.created.len() as u64).map(|k| Address::create(our, k)).collect();
    for (c, n) in trace.created.iter().zip(&fresh) {
        map.insert(*c, *n);
    }
    let f = |a: Address| map.get(&a).copied().unwrap_or(a);
    let mut out = trace.clone();
    for a in &mut out.actions {
        map_addresses(&mut a.kind, &f);
        match &mut a.kind {
            ActionKind::Create { initcode, .. } => {
                for (from, to) in &map {
                    replace_bytes(initcode, &from.0, &to.0);
                }
            }
            ActionKind::Call { tail, .. } => {
                for (from, to) in &map {
                    replace_bytes(tail, &from.0, &to.0);
                }
            }
            _ => {}
        }
        for (from, to) in &map {
            replace_bytes(&mut a.output, &from.0, &to.0);
        }
    }
    out.attacker_addresses = vec![our];
    out.created = fresh;
    out.victim_set = trace.victim_set.iter().map(|v| f(*v)).collect();
    out
}

/// The selector-level descriptor of the executor's entry point.
pub fn executor_function() -> FunctionDesc {
    FunctionDesc {
        selector: selector(sig::EXECUTE),
        entry_pc: 0,
        args: vec![ArgType::Bytes],
        is_fallback: false,
    }
}

/// Turns every non-address constant into a hole that starts at its original value.
pub fn extract_holes(trace: &ActionTrace) -> ProgramWithHoles {
    let mut holes: Vec<Hole> = Vec::new();
    let mut actions = trace.actions.clone();
    for (ai, a) in actions.iter_mut().enumerate() {
        let mut slot = 0usize;
        let mut visit = |v: &mut ArgValue, holes: &mut Vec<Hole>, skip_zero: bool| {
            if let ArgValue::Constant(w) = v {
                if !(skip_zero && w.is_zero()) {
                    holes.push(Hole::new(
                        HoleSlot::Action { action: ai, arg: slot },
                        ArgType::Uint(256),
                        *w,
                    ));
                    *v = ArgValue::Hole(holes.len() - 1);
                }
            }
            slot += 1;
        };
        match &mut a.kind {
            ActionKind::Call { args, value, .. } => {
                for v in args.iter_mut() {
                    visit(v, &mut holes, false);
                }
                visit(value, &mut holes, true);
            }
            ActionKind::Flashloan { amount, .. } => visit(amount, &mut holes, false),
            ActionKind::Swap { amount_in, amount_out, .. } => {
                if let Some(v) = amount_in {
                    visit(v, &mut holes, false);
                }
                for v in amount_out.iter_mut() {
                    visit(v, &mut holes, false);
                }
            }
            ActionKind::Transfer { amount, .. } => visit(amount, &mut holes, false),
            ActionKind::Create { .. } => {}
        }
    }
    let our = trace.attacker_addresses.first().copied().unwrap_or(Address::ZERO);
    ProgramWithHoles {
        target: our,
        function: executor_function(),
        decisions: BranchOverrides::none(),
        holes,
        provenance: Provenance::Backrun,
        sender_candidates: Vec::new(),
        body: ProgramBody::Backrun(BackrunBody {
            actions,
            victims: trace.victim_set.clone(),
            replacer: Replacer::identity(&trace.victim_set),
        }),
    }
}
