//! Rule-based hole elimination: flashloan sizing, approval amounts and
//! constant-product swap outputs.

use primitive_types::U512;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backrun::{run_program, ActionKind, ArgValue};
use crate::contracts::{encode_words, sig, EXECUTOR_OWNER};
use crate::hijack::realize;
use crate::minivm::{execute_in_place, BranchOverrides, CallRecord, Outcome, VmConfig, WorldState};
use crate::program::{FillSource, Operator, ProgramBody, ProgramWithHoles, RuleFill};
use crate::types::{read_word, selector, Address, Word};

pub const DEFAULT_FEE_BPS: u64 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlashloanProvider {
    pub address: Address,
    pub token: Address,
    pub fee_bps: u64,
    pub capacity: Word,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolReserves {
    pub reserve_in: Word,
    pub reserve_out: Word,
    pub fee_bps: u64,
}

impl PoolReserves {
    pub fn new(reserve_in: Word, reserve_out: Word) -> PoolReserves {
        PoolReserves {
            reserve_in,
            reserve_out,
            fee_bps: DEFAULT_FEE_BPS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("pool has an empty reserve")]
pub struct EmptyPool;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("providers cannot cover a need of {need}")]
pub struct Unfundable {
    pub need: Word,
}

/// Output amount of a constant-product swap, rounded down.
pub fn quote_v2_swap(r: &PoolReserves, amount_in: Word) -> Result<Word, EmptyPool> {
    if r.reserve_in.is_zero() || r.reserve_out.is_zero() {
        return Err(EmptyPool);
    }
    let keep = U512::from(10_000u64.saturating_sub(r.fee_bps));
    let in_fee = U512::from(amount_in) * keep;
    let num = in_fee * U512::from(r.reserve_out);
    let den = U512::from(r.reserve_in) * U512::from(10_000u64) + in_fee;
    let out = num / den;
    // out < reserve_out, so it always fits.
    Ok(Word::try_from(out).expect("quote below reserve"))
}

/// Borrows from the cheapest providers first until `need` is covered.
pub fn plan_flashloans(
    token: Address,
    need: Word,
    providers: &[FlashloanProvider],
) -> Result<Vec<(Address, Word)>, Unfundable> {
    let mut ps: Vec<&FlashloanProvider> = providers.iter().filter(|p| p.token == token).collect();
    ps.sort_by_key(|p| (p.fee_bps, p.address));
    let mut left = need;
    let mut out = Vec::new();
    for p in ps {
        if left.is_zero() {
            break;
        }
        let take = p.capacity.min(left);
        if !take.is_zero() {
            out.push((p.address, take));
            left -= take;
        }
    }
    if !left.is_zero() {
        return Err(Unfundable { need });
    }
    Ok(out)
}

/// `token.allowance(owner, spender)` against `world`; 0 if the call fails.
pub fn fill_approval(world: &WorldState, token: Address, owner: Address, spender: Address) -> Word {
    let data = encode_words(selector(sig::ALLOWANCE), &[owner.to_word(), spender.to_word()]);
    let msg = crate::minivm::Message::call(spender, token, data);
    let r = crate::minivm::execute(world, &msg, &BranchOverrides::none());
    if r.outcome == Outcome::Success {
        read_word(&r.trace.calls[0].output, 0)
    } else {
        Word::zero()
    }
}

fn canary(i: usize) -> Word {
    (Word::from(0xca7a_5eedu64) << 96) + Word::from(i as u64 + 1)
}

/// `(token, owner, spender, amount)` of every transferFrom in a trace.
fn transfer_froms(calls: &[CallRecord]) -> Vec<(Address, Address, Address, Word)> {
    calls
        .iter()
        .filter(|c| c.selector() == Some(selector(sig::TRANSFER_FROM)))
        .map(|c| {
            (
                c.target,
                Address::from_word(read_word(&c.input, 4)),
                c.caller,
                read_word(&c.input, 68),
            )
        })
        .collect()
}

fn set_rule(p: &mut ProgramWithHoles, i: usize, rule: RuleFill, fill: Option<Word>) {
    let h = &mut p.holes[i];
    log::info!(target: "rewrite", "rule={} hole={} fill={}", rule_name(&rule), i, fill.or(h.filled).unwrap_or_default());
    if let Some(f) = fill {
        h.filled = Some(f);
    }
    h.rule = Some(rule);
    h.fill_source = FillSource::Rule;
}

fn rule_name(r: &RuleFill) -> &'static str {
    match r {
        RuleFill::Approval { .. } => "approval",
        RuleFill::Flashloan { .. } => "flashloan",
        RuleFill::Repay { .. } => "repay",
        RuleFill::SwapOut { .. } => "swap_out",
        RuleFill::SwapInAll { .. } => "swap_in_all",
    }
}

/// Applies the approval, flashloan and swap rules, in that order, to every
/// open hole whose context matches. Only hole fill state changes.
pub fn rewrite_program(program: &ProgramWithHoles, world: &WorldState) -> ProgramWithHoles {
    let mut p = program.clone();
    match &program.body {
        ProgramBody::Hijack(_) => rewrite_hijack(&mut p, world),
        ProgramBody::Backrun(_) => rewrite_backrun(&mut p, world),
    }
    p
}

fn rewrite_hijack(p: &mut ProgramWithHoles, world: &WorldState) {
    let open: Vec<usize> = (0..p.holes.len()).filter(|i| p.holes[*i].is_open()).collect();
    if open.is_empty() {
        return;
    }
    let operator = Operator::default();
    let words: Vec<Word> = (0..p.holes.len())
        .map(|i| if open.contains(&i) { canary(i) } else { p.holes[i].filled.unwrap_or_default() })
        .collect();
    let bytes: Vec<Vec<u8>> = p.holes.iter().filter_map(|h| h.filled_bytes.clone()).collect();
    let Ok(msgs) = realize(world, p, &words, &bytes, &operator) else {
        return;
    };
    let mut w = world.clone();
    let cfg = VmConfig::default();
    let mut calls = Vec::new();
    for m in &msgs {
        let (_, trace, _) = execute_in_place(&mut w, m, &BranchOverrides::none(), &cfg, None);
        calls.extend(trace.calls);
    }
    for (token, owner, spender, amount) in transfer_froms(&calls) {
        if let Some(&i) = open.iter().find(|i| canary(**i) == amount) {
            if p.holes[i].is_open() {
                let fill = fill_approval(world, token, owner, spender);
                set_rule(p, i, RuleFill::Approval { token, owner, spender }, Some(fill));
            }
        }
    }
}

/// Where each hole of a backrun program sits.
#[derive(Debug, Clone)]
enum Ctx {
    CallArg,
    FlashAmount { provider: Address },
    Repay { provider: Address },
    PullFrom { token: Address, from: Address },
    SwapIn { token: Address, all: bool },
    SwapOut { pool: Address },
    Other,
}

fn contexts(p: &ProgramWithHoles, executor: Address) -> Vec<Ctx> {
    let mut ctx = vec![Ctx::Other; p.holes.len()];
    let Some(body) = p.backrun_body() else { return ctx };
    let mut open: Vec<(u32, Address)> = Vec::new();
    for a in &body.actions {
        while open.last().is_some_and(|(d, _)| *d >= a.depth + 1) {
            open.pop();
        }
        let mut put = |v: &ArgValue, c: Ctx| {
            if let ArgValue::Hole(i) = v {
                if let Some(slot) = ctx.get_mut(*i) {
                    *slot = c;
                }
            }
        };
        match &a.kind {
            ActionKind::Call { args, .. } => args.iter().for_each(|v| put(v, Ctx::CallArg)),
            ActionKind::Flashloan { provider, amount, .. } => {
                put(amount, Ctx::FlashAmount { provider: *provider });
            }
            ActionKind::Swap { pool, token_in, amount_in, amount_out, in_was_balance, .. } => {
                if let Some(v) = amount_in {
                    put(v, Ctx::SwapIn { token: *token_in, all: *in_was_balance });
                }
                amount_out.iter().for_each(|v| put(v, Ctx::SwapOut { pool: *pool }));
            }
            ActionKind::Transfer { token, from, to, amount, .. } => {
                if open.iter().any(|(_, p)| p == to) {
                    put(amount, Ctx::Repay { provider: *to });
                } else if *from != executor && !token.is_zero() {
                    put(amount, Ctx::PullFrom { token: *token, from: *from });
                }
            }
            ActionKind::Create { .. } => {}
        }
        if let ActionKind::Flashloan { provider, .. } = &a.kind {
            open.push((a.depth + 1, *provider));
        }
    }
    ctx
}

fn rewrite_backrun(p: &mut ProgramWithHoles, world: &WorldState) {
    let executor = p.target;
    let operator = Operator {
        eoa: Address::from_word(world.storage(&executor, Word::from(EXECUTOR_OWNER))),
        executor,
    };
    let ctx = contexts(p, executor);

    // Approval: direct pulls, then call arguments that end up as a pull amount.
    for (i, c) in ctx.iter().enumerate() {
        if let Ctx::PullFrom { token, from } = c {
            if p.holes[i].is_open() {
                let fill = fill_approval(world, *token, *from, executor);
                let rule = RuleFill::Approval { token: *token, owner: *from, spender: executor };
                set_rule(p, i, rule, Some(fill));
            }
        }
    }
    let probe: Vec<usize> = ctx
        .iter()
        .enumerate()
        .filter(|(i, c)| matches!(c, Ctx::CallArg) && p.holes[*i].is_open())
        .map(|(i, _)| i)
        .collect();
    if !probe.is_empty() {
        let fills: Vec<Word> = (0..p.holes.len())
            .map(|i| if probe.contains(&i) { canary(i) } else { p.holes[i].filled.unwrap_or_default() })
            .collect();
        if let Ok(run) = run_program(world, p, &fills, &operator, &VmConfig::default()) {
            for (token, owner, spender, amount) in transfer_froms(&run.result.trace.calls) {
                if let Some(&i) = probe.iter().find(|i| canary(**i) == amount) {
                    if p.holes[i].is_open() {
                        let fill = fill_approval(world, token, owner, spender);
                        set_rule(p, i, RuleFill::Approval { token, owner, spender }, Some(fill));
                    }
                }
            }
        }
    }

    // Flashloan: amounts are planned from the measured need at run time.
    for (i, c) in ctx.iter().enumerate() {
        if !p.holes[i].is_open() {
            continue;
        }
        match c {
            Ctx::FlashAmount { provider } => {
                let amount = p.holes[i].filled.unwrap_or_default();
                set_rule(p, i, RuleFill::Flashloan { provider: *provider, amount }, None);
            }
            Ctx::Repay { provider } => set_rule(p, i, RuleFill::Repay { provider: *provider }, None),
            _ => {}
        }
    }

    // Swap: outputs follow the pool's curve; whole-balance inputs stay whole-balance.
    for (i, c) in ctx.iter().enumerate() {
        if !p.holes[i].is_open() {
            continue;
        }
        match c {
            Ctx::SwapOut { pool } => set_rule(p, i, RuleFill::SwapOut { pool: *pool }, None),
            Ctx::SwapIn { token, all: true } => set_rule(p, i, RuleFill::SwapInAll { token: *token }, None),
            _ => {}
        }
    }
}
