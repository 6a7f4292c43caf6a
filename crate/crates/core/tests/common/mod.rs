#![allow(dead_code)]

use std::collections::BTreeSet;

use num_bigint::BigUint;
use proptest::prelude::{any, prop_oneof, Just, Strategy};
use rand::Rng;
use whitehat_core::backrun::{Action, ActionKind, ArgValue};
use whitehat_core::funcx::{extract_funcs, infer_args, FunctionDesc};
use whitehat_core::hijack::{clone_exploit, PathCaps};
use whitehat_core::minivm::asm::Asm;
use whitehat_core::minivm::opcode as op;
use whitehat_core::minivm::{execute_with, BranchOverrides, Direction, Message, VmConfig, WorldState};
use whitehat_core::types::{word_to_be, Address, Word};

pub const SUBJECT: Address = Address::from_low_u64(0xc0de);

pub fn big(w: Word) -> BigUint {
    BigUint::from_bytes_be(&word_to_be(w))
}

/// Constant-product output with the fee in basis points, in arbitrary precision.
pub fn oracle_quote(r_in: Word, r_out: Word, fee_bps: u32, amount_in: Word) -> Word {
    let g = BigUint::from(10_000 - fee_bps);
    let num = big(amount_in) * &g * big(r_out);
    let den = big(r_in) * BigUint::from(10_000u32) + big(amount_in) * g;
    let q = (num / den).to_bytes_be();
    Word::from_big_endian(&q)
}

/// One function whose body is a chain of `k` forward-only JUMPIs on the first
/// argument. Some blocks end in REVERT or STOP so that paths differ in length.
pub fn branchy_contract(k: usize, rng: &mut impl Rng) -> Vec<u8> {
    let sel = [0x12, 0x34, 0x56, 0x78];
    let mut a = Asm::new();
    a.dispatcher(&[(sel, "f")], "end").label("f");
    for i in 0..k {
        a.label(&format!("b{i}"));
        match rng.gen_range(0..3) {
            0 => a.arg(0).push_u64(rng.gen_range(1..100)).op(op::LT),
            1 => a.arg(0).push_u64(rng.gen_range(0..100)).op(op::EQ),
            _ => a.op(op::CALLVALUE).op(op::ISZERO),
        };
        let target = rng.gen_range(i + 1..=k);
        a.jumpi(&format!("b{target}"));
        match rng.gen_range(0..5) {
            0 => {
                a.revert0();
            }
            1 => {
                a.push_u64(i as u64 + 1).push_u64(0).op(op::SSTORE).op(op::STOP);
            }
            _ => {
                a.push_u64(i as u64 + 1).push_u64(1).op(op::SSTORE);
            }
        }
    }
    a.label(&format!("b{k}")).label("end").op(op::STOP);
    a.build()
}

pub fn world_with(code: Vec<u8>) -> WorldState {
    let mut w = WorldState::new();
    w.deploy(SUBJECT, code);
    w
}

fn forced_pcs(world: &WorldState, f: &FunctionDesc, decisions: BranchOverrides, caps: &PathCaps) -> Vec<u32> {
    let data = f.encode_call(&vec![Word::zero(); f.args.len()], &[]);
    let msg = Message::call(caps.sender, SUBJECT, data);
    let cfg = VmConfig {
        step_budget: caps.step_budget,
        ..VmConfig::default()
    };
    execute_with(world, &msg, &decisions, &cfg, None).trace.top_pcs().to_vec()
}

/// Every full assignment of directions to the first `k` eligible JUMPIs of each
/// function, deduplicated by the realized top-frame pc trace.
pub fn brute_force_paths(world: &WorldState, k: usize) -> BTreeSet<([u8; 4], Vec<u32>)> {
    let caps = PathCaps::default();
    let mut out = BTreeSet::new();
    for mut f in extract_funcs(world.code(&SUBJECT)) {
        f.args = infer_args(world, SUBJECT, &f);
        for mask in 0u32..(1 << k) {
            let mut d = BranchOverrides::from_pc(f.entry_pc);
            for i in 0..k {
                let dir = if mask >> i & 1 == 1 { Direction::Taken } else { Direction::Fallthrough };
                d = d.with(i as u32, dir);
            }
            out.insert((f.selector, forced_pcs(world, &f, d, &caps)));
        }
    }
    out
}

pub fn cloned_paths(world: &WorldState) -> BTreeSet<([u8; 4], Vec<u32>)> {
    clone_exploit(world, SUBJECT, &PathCaps::default())
        .programs
        .iter()
        .map(|p| (p.function.selector, p.hijack_path().expect("hijack").pcs.clone()))
        .collect()
}

fn a(n: u64) -> Address {
    Address::from_low_u64(n)
}

fn w(n: u64) -> Word {
    Word::from(n)
}

/// A random backrun action over one pool, one provider and one token.
pub fn arb_action(lp: Address, provider: Address, token: Address) -> impl Strategy<Value = Action> {
    let word = prop_oneof![Just(w(0)), (1u64..10_000).prop_map(w), any::<u128>().prop_map(Word::from)];
    let arg = prop_oneof![
        word.clone().prop_map(ArgValue::Constant),
        Just(ArgValue::Address(a(0x77))),
        (0usize..3).prop_map(|i| ArgValue::PriorReturn { action: i, word: 0 }),
    ];
    let kind = prop_oneof![
        (proptest::collection::vec(arg, 0..3), word.clone()).prop_map(move |(args, v)| ActionKind::Call {
            target: lp,
            selector: Some("12345678".into()),
            args,
            tail: vec![],
            value: ArgValue::Constant(v),
        }),
        word.clone().prop_map(move |x| ActionKind::Flashloan {
            provider,
            token: Address::ZERO,
            amount: ArgValue::Constant(x),
            receiver: a(0xe0),
        }),
        (word.clone(), word.clone(), word.clone(), any::<bool>()).prop_map(move |(i, o0, o1, all)| ActionKind::Swap {
            pool: lp,
            token_in: token,
            token_out: Address::ZERO,
            amount_in: Some(ArgValue::Constant(i)),
            amount_out: [ArgValue::Constant(o0), ArgValue::Constant(o1)],
            to: a(0xe0),
            in_was_balance: all,
        }),
        (word, any::<bool>()).prop_map(move |(x, to_provider)| ActionKind::Transfer {
            token,
            from: a(0x99),
            to: if to_provider { provider } else { a(0x98) },
            amount: ArgValue::Constant(x),
            was_balance: false,
        }),
    ];
    (0u32..3, kind).prop_map(|(depth, kind)| Action {
        depth,
        kind,
        output: vec![0; 32],
    })
}
