mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use whitehat_core::chainsim::TxRole;
use whitehat_core::contracts::sig;
use whitehat_core::corpus;
use whitehat_core::hijack::*;
use whitehat_core::minivm::asm::Asm;
use whitehat_core::minivm::opcode as op;
use whitehat_core::minivm::{execute, BranchOverrides, Direction, Message, WorldState};
use whitehat_core::program::Operator;
use whitehat_core::types::{keccak256, selector, word_from_be, word_to_be, Address, Word};

fn single_function(body: impl FnOnce(&mut Asm)) -> Vec<u8> {
    let mut a = Asm::new();
    a.dispatcher(&[([0xaa, 0xbb, 0xcc, 0xdd], "f")], "end").label("f");
    body(&mut a);
    a.label("end").op(op::STOP);
    a.build()
}

#[test]
fn straight_line_function_gives_one_program() {
    let code = single_function(|a| {
        a.arg(0).push_u64(0).op(op::SSTORE);
    });
    let w = world_with(code);
    let r = clone_exploit(&w, SUBJECT, &PathCaps::default());
    let named: Vec<_> = r.programs.iter().filter(|p| !p.function.is_fallback).collect();
    assert_eq!(named.len(), 1);
    assert!(named[0].decisions.decisions.is_empty());
    assert_eq!(named[0].holes.len(), 1);
    assert!(!r.truncated);
}

#[test]
fn two_independent_branches_give_four_programs() {
    let code = single_function(|a| {
        a.arg(0).push_u64(7).op(op::EQ).jumpi("x");
        a.push_u64(1).push_u64(1).op(op::SSTORE);
        a.label("x");
        a.arg(1).push_u64(9).op(op::LT).jumpi("y");
        a.push_u64(2).push_u64(2).op(op::SSTORE);
        a.label("y");
        a.op(op::STOP);
    });
    let w = world_with(code);
    let r = clone_exploit(&w, SUBJECT, &PathCaps::default());
    let named: Vec<_> = r.programs.iter().filter(|p| !p.function.is_fallback).collect();
    assert_eq!(named.len(), 4);
    let mut combos: Vec<Vec<(u32, Direction)>> = named
        .iter()
        .map(|p| p.hijack_path().unwrap().signature.clone())
        .collect();
    combos.sort();
    combos.dedup();
    assert_eq!(combos.len(), 4, "{combos:?}");
    assert!(named.iter().any(|p| p.decisions.decisions.is_empty()));
    assert_eq!(cloned_paths(&w), brute_force_paths(&w, 2));
}

#[test]
fn contract_without_code_gives_nothing() {
    let w = WorldState::new();
    let r = clone_exploit(&w, SUBJECT, &PathCaps::default());
    assert!(r.programs.is_empty());
    assert!(!r.truncated);
}

#[test]
fn path_cap_truncates() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = world_with(branchy_contract(6, &mut rng));
    let caps = PathCaps {
        max_paths: 2,
        ..PathCaps::default()
    };
    let r = clone_exploit(&w, SUBJECT, &caps);
    assert!(r.truncated);
    assert_eq!(r.programs.len(), 2);
}

#[test]
fn programs_replay_to_their_recorded_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w = world_with(branchy_contract(5, &mut rng));
    let caps = PathCaps::default();
    for p in clone_exploit(&w, SUBJECT, &caps).programs {
        let t = replay(&w, &p, &caps);
        assert_eq!(t.top_pcs(), p.hijack_path().unwrap().pcs.as_slice());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn enumeration_matches_brute_force(seed in any::<u64>(), k in 0usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = world_with(branchy_contract(k, &mut rng));
        prop_assert_eq!(cloned_paths(&w), brute_force_paths(&w, k));
    }
}

#[test]
fn senders_from_storage_then_code_then_default() {
    let a = Address::from_low_u64(0xaaaa);
    let b = Address([0x42; 20]);
    let code = single_function(|asm| {
        asm.push_addr(b).op(op::POP);
    });
    let mut w = world_with(code);
    w.set_storage(SUBJECT, Word::zero(), a.to_word());
    let def = Operator::default().eoa;
    assert_eq!(enumerate_senders(&w, SUBJECT, def), vec![a, b, def]);

    let bare = world_with(vec![op::STOP]);
    assert_eq!(enumerate_senders(&bare, SUBJECT, def), vec![def]);
}

fn honeypot_world() -> (WorldState, Address, Address) {
    let scn = corpus::build("honeypot-gated").unwrap();
    let deploy = scn.scripted(TxRole::AttackerDeploy).next().unwrap();
    let r = execute(&scn.world, &deploy.tx.msg, &BranchOverrides::none());
    (r.world, scn.exploit.unwrap(), deploy.tx.msg.caller)
}

#[test]
fn gated_exploit_yields_a_path_to_the_flashloan() {
    let (w, exploit, _) = honeypot_world();
    let caps = PathCaps::default();
    let r = clone_exploit(&w, exploit, &caps);
    let flash = selector(sig::FLASH_LOAN);
    let hit = r.programs.iter().find(|p| {
        p.function.selector == selector("attack(uint256)")
            && replay(&w, p, &caps).calls.iter().any(|c| c.selector() == Some(flash))
    });
    let p = hit.expect("a forced path reaches the flashloan call");
    assert_eq!(p.holes.len(), 1, "the flashloan amount is the only hole");
}

#[test]
fn hash_gate_candidate_passes() {
    let (w, exploit, attacker) = honeypot_world();
    let senders = enumerate_senders(&w, exploit, Operator::default().eoa);
    assert!(senders.contains(&attacker));
    let want = keccak256(&word_to_be(attacker.to_word()));
    let code = w.code(&exploit);
    assert!(code.windows(32).any(|win| win == want), "gate hash is a code constant");

    let data = whitehat_core::contracts::encode_words(selector("attack(uint256)"), &[Word::zero()]);
    let t = execute(&w, &Message::call(attacker, exploit, data), &BranchOverrides::none()).trace;
    let h = word_from_be(&want);
    assert!(t.comparisons.iter().any(|c| c.lhs == h && c.rhs == h));
    assert!(t.calls.iter().any(|c| c.selector() == Some(selector(sig::FLASH_LOAN))));
}
