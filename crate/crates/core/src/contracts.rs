//! Reusable contract bytecode: tokens, constant-product pools, flashloan
//! providers and the executor that runs synthesized programs.
//!
//! Storage layouts are fixed so that analysis code can read them directly.

use crate::minivm::lang::*;
use crate::minivm::WorldState;
use crate::types::{selector, Address, Word};

/// Token storage: `balances` mapping root.
pub const TOKEN_BALANCES: u64 = 0;
/// Token storage: `allowances` mapping root (nested owner then spender).
pub const TOKEN_ALLOWANCES: u64 = 1;
pub const TOKEN_SUPPLY: u64 = 2;
/// Deflationary token storage: its main pool.
pub const TOKEN_PAIR: u64 = 5;

pub const LP_TOKEN0: u64 = 0;
pub const LP_TOKEN1: u64 = 1;
pub const LP_RESERVE0: u64 = 2;
pub const LP_RESERVE1: u64 = 3;
pub const LP_FEE: u64 = 4;

pub const PROVIDER_TOKEN: u64 = 0;
pub const PROVIDER_FEE: u64 = 1;

/// Conventional owner slot for the ownership relation.
pub const OWNER_SLOT: u64 = 10;

pub const EXECUTOR_OWNER: u64 = 0;
/// Calldata offset of the program in `execute(bytes)`.
pub const EXECUTE_PROGRAM_OFFSET: usize = 68;
/// Calldata offset of the program in `onFlashLoan(uint256,uint256,bytes)`.
pub const CALLBACK_PROGRAM_OFFSET: usize = 132;

pub mod sig {
    pub const BALANCE_OF: &str = "balanceOf(address)";
    pub const TRANSFER: &str = "transfer(address,uint256)";
    pub const TRANSFER_FROM: &str = "transferFrom(address,address,uint256)";
    pub const APPROVE: &str = "approve(address,uint256)";
    pub const ALLOWANCE: &str = "allowance(address,address)";
    pub const TOTAL_SUPPLY: &str = "totalSupply()";
    pub const GET_RESERVES: &str = "getReserves()";
    pub const TOKEN0: &str = "token0()";
    pub const TOKEN1: &str = "token1()";
    pub const SWAP: &str = "swap(uint256,uint256,address,bytes)";
    pub const SYNC: &str = "sync()";
    pub const FLASH_LOAN: &str = "flashLoan(address,uint256,bytes)";
    pub const ON_FLASH_LOAN: &str = "onFlashLoan(uint256,uint256,bytes)";
    pub const EXECUTE: &str = "execute(bytes)";
}

fn bal_slot(who: E) -> E {
    map_slot(who, c(TOKEN_BALANCES))
}

fn allowance_slot(owner: E, spender: E) -> E {
    map_slot(spender, map_slot(owner, c(TOKEN_ALLOWANCES)))
}

// Locals: 0 from, 1 to, 2 amount, 3.. scratch.
fn move_tokens() -> Vec<S> {
    vec![
        S::Let(5, bal_slot(local(0))),
        S::Let(6, sload(local(5))),
        S::Require(ge(local(6), local(2))),
        S::SStore(local(5), sub(local(6), local(2))),
        S::Let(7, bal_slot(local(1))),
        S::SStore(local(7), add(sload(local(7)), local(2))),
    ]
}

fn spend_allowance() -> Vec<S> {
    vec![S::If(
        not(eq(E::Caller, local(0))),
        vec![
            S::Let(3, allowance_slot(local(0), E::Caller)),
            S::Let(4, sload(local(3))),
            S::Require(ge(local(4), local(2))),
            S::If(
                not(eq(local(4), c(Word::MAX))),
                vec![S::SStore(local(3), sub(local(4), local(2)))],
                vec![],
            ),
        ],
        vec![],
    )]
}

// A transfer addressed to the token itself burns from the pool instead of the sender.
fn pair_burn_hook() -> Vec<S> {
    vec![S::If(
        eq(local(1), E::SelfAddr),
        vec![
            S::Let(8, sload(c(TOKEN_PAIR))),
            S::Let(9, bal_slot(local(8))),
            S::Let(10, sload(local(9))),
            S::If(
                gt(local(10), c(1u64)),
                vec![
                    S::Let(11, min(local(2), sub(local(10), c(1u64)))),
                    S::SStore(local(9), sub(local(10), local(11))),
                    S::SStore(c(TOKEN_SUPPLY), sub(sload(c(TOKEN_SUPPLY)), local(11))),
                    S::Call(call(local(8), selector(sig::SYNC), vec![]), None),
                ],
                vec![],
            ),
            S::Return(vec![c(1u64)]),
        ],
        vec![],
    )]
}

fn token_funcs(deflationary: bool) -> Vec<Func> {
    let hook = if deflationary { pair_burn_hook() } else { vec![] };
    let mut transfer = vec![
        S::Let(1, arg_addr(0)),
        S::Let(2, arg(1)),
        S::Let(0, E::Caller),
    ];
    transfer.extend(hook.clone());
    transfer.extend(move_tokens());
    transfer.push(S::Return(vec![c(1u64)]));

    let mut transfer_from = vec![S::Let(0, arg_addr(0)), S::Let(1, arg_addr(1)), S::Let(2, arg(2))];
    transfer_from.extend(spend_allowance());
    transfer_from.extend(hook);
    transfer_from.extend(move_tokens());
    transfer_from.push(S::Return(vec![c(1u64)]));

    vec![
        func(sig::BALANCE_OF, vec![S::Return(vec![sload(bal_slot(arg_addr(0)))])]),
        func(sig::TRANSFER, transfer),
        func(sig::TRANSFER_FROM, transfer_from),
        func(
            sig::APPROVE,
            vec![
                S::SStore(allowance_slot(E::Caller, arg_addr(0)), arg(1)),
                S::Return(vec![c(1u64)]),
            ],
        ),
        func(
            sig::ALLOWANCE,
            vec![S::Return(vec![sload(allowance_slot(arg_addr(0), arg_addr(1)))])],
        ),
        func(sig::TOTAL_SUPPLY, vec![S::Return(vec![sload(c(TOKEN_SUPPLY))])]),
    ]
}

/// A plain ERC20-style token.
pub fn token_code() -> Vec<u8> {
    contract(&token_funcs(false), &[])
}

/// A token whose transfers to its own address burn from its pool and resync it.
pub fn deflationary_token_code() -> Vec<u8> {
    contract(&token_funcs(true), &[])
}

// Balance of this contract in the token stored at `slot` (zero address = native) into `dst`.
fn own_balance(slot: u64, dst: usize) -> S {
    S::If(
        eq(sload(c(slot)), c(0u64)),
        vec![S::Let(dst, balance(E::SelfAddr))],
        vec![
            S::Call(
                static_call(sload(c(slot)), selector(sig::BALANCE_OF), vec![E::SelfAddr]),
                None,
            ),
            S::Let(dst, ret(0)),
        ],
    )
}

// Pays `amount` of the token stored at `slot` to `to`.
fn pay_out(slot: u64, to: E, amount: E) -> S {
    S::If(
        eq(sload(c(slot)), c(0u64)),
        vec![S::Call(send(to.clone(), amount.clone()), None)],
        vec![S::Call(call(sload(c(slot)), selector(sig::TRANSFER), vec![to, amount]), None)],
    )
}

/// A constant-product pool. The zero address as a token means the native coin.
pub fn lp_code() -> Vec<u8> {
    let swap = vec![
        S::Let(0, arg(0)),
        S::Let(1, arg(1)),
        S::Let(2, arg_addr(2)),
        S::Let(3, sload(c(LP_RESERVE0))),
        S::Let(4, sload(c(LP_RESERVE1))),
        S::Require(and(lt(local(0), local(3)), lt(local(1), local(4)))),
        S::If(gt(local(0), c(0u64)), vec![pay_out(LP_TOKEN0, local(2), local(0))], vec![]),
        S::If(gt(local(1), c(0u64)), vec![pay_out(LP_TOKEN1, local(2), local(1))], vec![]),
        own_balance(LP_TOKEN0, 5),
        own_balance(LP_TOKEN1, 6),
        S::Let(7, sub(local(3), local(0))),
        S::Let(8, sub(local(4), local(1))),
        S::Let(9, mul(gt(local(5), local(7)), sub(local(5), local(7)))),
        S::Let(10, mul(gt(local(6), local(8)), sub(local(6), local(8)))),
        S::Require(or(gt(local(9), c(0u64)), gt(local(10), c(0u64)))),
        S::Let(11, sload(c(LP_FEE))),
        S::Require(ge(
            mul(
                sub(mul(local(5), c(10_000u64)), mul(local(9), local(11))),
                sub(mul(local(6), c(10_000u64)), mul(local(10), local(11))),
            ),
            mul(mul(local(3), local(4)), c(100_000_000u64)),
        )),
        S::SStore(c(LP_RESERVE0), local(5)),
        S::SStore(c(LP_RESERVE1), local(6)),
    ];
    let sync = vec![
        own_balance(LP_TOKEN0, 5),
        own_balance(LP_TOKEN1, 6),
        S::SStore(c(LP_RESERVE0), local(5)),
        S::SStore(c(LP_RESERVE1), local(6)),
    ];
    contract(
        &[
            func(
                sig::GET_RESERVES,
                vec![S::Return(vec![sload(c(LP_RESERVE0)), sload(c(LP_RESERVE1))])],
            ),
            func(sig::TOKEN0, vec![S::Return(vec![sload(c(LP_TOKEN0))])]),
            func(sig::TOKEN1, vec![S::Return(vec![sload(c(LP_TOKEN1))])]),
            func(sig::SWAP, swap),
            func(sig::SYNC, sync),
        ],
        &[S::Stop],
    )
}

/// A flashloan provider lending its whole balance of one token (zero = native).
pub fn provider_code() -> Vec<u8> {
    let body = vec![
        S::Let(0, arg_addr(0)),
        S::Let(1, arg(1)),
        own_balance(PROVIDER_TOKEN, 2),
        S::Require(le(local(1), local(2))),
        S::Let(3, div(mul(local(1), sload(c(PROVIDER_FEE))), c(10_000u64))),
        pay_out(PROVIDER_TOKEN, local(0), local(1)),
        // data = calldata[4 + off + 32 .. + len]
        S::Let(4, add(arg(2), c(4u64))),
        S::Let(5, cdload(local(4))),
        S::Call(
            CallSpec {
                tail_from_calldata: Some((add(local(4), c(32u64)), local(5))),
                ..call(
                    local(0),
                    selector(sig::ON_FLASH_LOAN),
                    vec![local(1), local(3), c(0x60u64), local(5)],
                )
            },
            None,
        ),
        own_balance(PROVIDER_TOKEN, 6),
        S::Require(ge(local(6), add(local(2), local(3)))),
    ];
    contract(&[func(sig::FLASH_LOAN, body)], &[S::Stop])
}

/// The executor that runs encoded programs for the whitehat.
///
/// Program: `[n] record*`, record = `[target][value][len][data padded to 32]`.
/// A zero target creates a contract from `data`. Any failing step reverts.
pub fn executor_code() -> Vec<u8> {
    let run = |start: usize| {
        vec![
            S::Require(eq(E::Origin, sload(c(EXECUTOR_OWNER)))),
            S::Let(0, c(start as u64)),
            S::Let(1, cdload(local(0))),
            S::Let(0, add(local(0), c(32u64))),
            S::While(
                gt(local(1), c(0u64)),
                vec![
                    S::Let(2, cdload(local(0))),
                    S::Let(3, cdload(add(local(0), c(32u64)))),
                    S::Let(4, cdload(add(local(0), c(64u64)))),
                    S::CdCopy(c(CALLBUF), add(local(0), c(96u64)), local(4)),
                    S::If(
                        eq(local(2), c(0u64)),
                        vec![S::Create(local(3), local(4), 5), S::Require(gt(local(5), c(0u64)))],
                        vec![S::Call(raw_call(local(2), local(3), local(4)), None)],
                    ),
                    S::Let(
                        0,
                        add(
                            local(0),
                            add(c(96u64), mul(div(add(local(4), c(31u64)), c(32u64)), c(32u64))),
                        ),
                    ),
                    S::Let(1, sub(local(1), c(1u64))),
                ],
            ),
        ]
    };
    contract(
        &[
            func(sig::EXECUTE, run(EXECUTE_PROGRAM_OFFSET)),
            func(sig::ON_FLASH_LOAN, run(CALLBACK_PROGRAM_OFFSET)),
        ],
        &[S::Stop],
    )
}

/// One step of an executor program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    /// `None` creates a contract with `data` as init code.
    pub target: Option<Address>,
    pub value: Word,
    pub data: Vec<u8>,
}

pub fn encode_program(records: &[Record]) -> Vec<u8> {
    let mut out = crate::types::word_to_be(Word::from(records.len())).to_vec();
    for r in records {
        out.extend_from_slice(&crate::types::word_to_be(
            r.target.map(|a| a.to_word()).unwrap_or_default(),
        ));
        out.extend_from_slice(&crate::types::word_to_be(r.value));
        out.extend_from_slice(&crate::types::word_to_be(Word::from(r.data.len())));
        out.extend_from_slice(&r.data);
        out.resize(out.len() + (32 - r.data.len() % 32) % 32, 0);
    }
    out
}

/// ABI encoding of `sel(words..., bytes)` with the dynamic argument last.
pub fn encode_with_bytes(sel: [u8; 4], words: &[Word], bytes: &[u8]) -> Vec<u8> {
    let mut out = sel.to_vec();
    for w in words {
        out.extend_from_slice(&crate::types::word_to_be(*w));
    }
    let offset = 32 * (words.len() + 1);
    out.extend_from_slice(&crate::types::word_to_be(Word::from(offset)));
    out.extend_from_slice(&crate::types::word_to_be(Word::from(bytes.len())));
    out.extend_from_slice(bytes);
    out.resize(out.len() + (32 - bytes.len() % 32) % 32, 0);
    out
}

/// ABI encoding of a call with only static word arguments.
pub fn encode_words(sel: [u8; 4], words: &[Word]) -> Vec<u8> {
    let mut out = sel.to_vec();
    for w in words {
        out.extend_from_slice(&crate::types::word_to_be(*w));
    }
    out
}

pub fn execute_calldata(records: &[Record]) -> Vec<u8> {
    encode_with_bytes(selector(sig::EXECUTE), &[], &encode_program(records))
}

pub fn flashloan_calldata(receiver: Address, amount: Word, inner: &[Record]) -> Vec<u8> {
    encode_with_bytes(
        selector(sig::FLASH_LOAN),
        &[receiver.to_word(), amount],
        &encode_program(inner),
    )
}

pub fn swap_calldata(out0: Word, out1: Word, to: Address) -> Vec<u8> {
    encode_with_bytes(selector(sig::SWAP), &[out0, out1, to.to_word()], &[])
}

/// Token state helpers for building worlds.
pub fn token_balance(world: &WorldState, token: Address, holder: Address) -> Word {
    world.storage(&token, balance_key(holder))
}

pub fn balance_key(holder: Address) -> Word {
    let mut buf = [0u8; 64];
    buf[..32].copy_from_slice(&crate::types::word_to_be(holder.to_word()));
    buf[32..].copy_from_slice(&crate::types::word_to_be(Word::from(TOKEN_BALANCES)));
    crate::types::word_from_be(&crate::types::keccak256(&buf))
}

pub fn allowance_key(owner: Address, spender: Address) -> Word {
    let mut buf = [0u8; 64];
    buf[..32].copy_from_slice(&crate::types::word_to_be(owner.to_word()));
    buf[32..].copy_from_slice(&crate::types::word_to_be(Word::from(TOKEN_ALLOWANCES)));
    let inner = crate::types::keccak256(&buf);
    buf[..32].copy_from_slice(&crate::types::word_to_be(spender.to_word()));
    buf[32..].copy_from_slice(&inner);
    crate::types::word_from_be(&crate::types::keccak256(&buf))
}

/// Sets a token balance and adjusts the recorded supply.
pub fn mint(world: &mut WorldState, token: Address, holder: Address, amount: Word) {
    let key = balance_key(holder);
    let old = world.storage(&token, key);
    world.set_storage(token, key, old + amount);
    let supply = world.storage(&token, Word::from(TOKEN_SUPPLY));
    world.set_storage(token, Word::from(TOKEN_SUPPLY), supply + amount);
}

pub fn set_allowance(world: &mut WorldState, token: Address, owner: Address, spender: Address, amount: Word) {
    world.set_storage(token, allowance_key(owner, spender), amount);
}

/// Deploys a pool and funds it; the zero address stands for the native coin.
#[allow(clippy::too_many_arguments)]
pub fn deploy_lp(
    world: &mut WorldState,
    lp: Address,
    token0: Address,
    token1: Address,
    reserve0: Word,
    reserve1: Word,
    fee_bps: u64,
) {
    world.deploy(lp, lp_code());
    world.set_storage(lp, Word::from(LP_TOKEN0), token0.to_word());
    world.set_storage(lp, Word::from(LP_TOKEN1), token1.to_word());
    world.set_storage(lp, Word::from(LP_FEE), Word::from(fee_bps));
    for (t, r) in [(token0, reserve0), (token1, reserve1)] {
        if t.is_zero() {
            let b = world.balance(&lp);
            world.set_balance(lp, b + r);
        } else {
            mint(world, t, lp, r);
        }
    }
    world.set_storage(lp, Word::from(LP_RESERVE0), reserve0);
    world.set_storage(lp, Word::from(LP_RESERVE1), reserve1);
}

pub fn deploy_provider(world: &mut WorldState, at: Address, token: Address, fee_bps: u64, capacity: Word) {
    world.deploy(at, provider_code());
    world.set_storage(at, Word::from(PROVIDER_TOKEN), token.to_word());
    world.set_storage(at, Word::from(PROVIDER_FEE), Word::from(fee_bps));
    if token.is_zero() {
        world.set_balance(at, capacity);
    } else {
        mint(world, token, at, capacity);
    }
}

pub fn deploy_executor(world: &mut WorldState, at: Address, owner: Address) {
    world.deploy(at, executor_code());
    world.set_storage(at, Word::from(EXECUTOR_OWNER), owner.to_word());
}

/// Reads the reserves and fee of a pool.
pub fn lp_state(world: &WorldState, lp: Address) -> (Address, Address, Word, Word, u64) {
    let s = |k: u64| world.storage(&lp, Word::from(k));
    (
        Address::from_word(s(LP_TOKEN0)),
        Address::from_word(s(LP_TOKEN1)),
        s(LP_RESERVE0),
        s(LP_RESERVE1),
        crate::types::word_to_u64_sat(s(LP_FEE)),
    )
}
