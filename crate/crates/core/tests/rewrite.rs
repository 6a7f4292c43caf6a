mod common;

use common::{arb_action, oracle_quote};
use proptest::prelude::*;
use whitehat_core::backrun::*;
use whitehat_core::chainsim::TxRole;
use whitehat_core::contracts::*;
use whitehat_core::corpus;
use whitehat_core::hijack::{clone_exploit, PathCaps};
use whitehat_core::minivm::{execute, BranchOverrides, Message, Outcome, VmConfig, WorldState};
use whitehat_core::program::{FillSource, ProgramWithHoles, RuleFill};
use whitehat_core::rewrite::*;
use whitehat_core::types::{ether, selector, Address, Word};

fn a(n: u64) -> Address {
    Address::from_low_u64(n)
}

fn w(n: u64) -> Word {
    Word::from(n)
}

#[test]
fn worked_quotes() {
    assert_eq!(quote_v2_swap(&PoolReserves::new(w(1000), w(1000)), w(100)), Ok(w(90)));
    assert_eq!(quote_v2_swap(&PoolReserves::new(w(1000), w(2000)), w(10)), Ok(w(19)));
    assert_eq!(quote_v2_swap(&PoolReserves::new(w(1000), w(2000)), w(0)), Ok(w(0)));
    assert_eq!(quote_v2_swap(&PoolReserves::new(w(0), w(2000)), w(10)), Err(EmptyPool));
    assert_eq!(oracle_quote(w(1000), w(1000), 30, w(100)), w(90));
    assert_eq!(oracle_quote(w(1000), w(2000), 30, w(10)), w(19));
}

proptest! {
    #[test]
    fn quote_matches_big_integer_formula(r_in in 1u128.., r_out in 1u128.., amount in any::<u128>(), fee in 0u64..1000) {
        let r = PoolReserves { reserve_in: Word::from(r_in), reserve_out: Word::from(r_out), fee_bps: fee };
        prop_assert_eq!(quote_v2_swap(&r, Word::from(amount)).unwrap(), oracle_quote(r.reserve_in, r.reserve_out, fee as u32, Word::from(amount)));
    }
}

fn provider(n: u64, fee: u64, cap: u64) -> FlashloanProvider {
    FlashloanProvider {
        address: a(n),
        token: Address::ZERO,
        fee_bps: fee,
        capacity: w(cap),
    }
}

#[test]
fn greedy_flashloan_plans() {
    let ps = [provider(2, 9, 1000), provider(1, 5, 1000)];
    assert_eq!(plan_flashloans(Address::ZERO, w(1500), &ps), Ok(vec![(a(1), w(1000)), (a(2), w(500))]));
    assert_eq!(plan_flashloans(Address::ZERO, w(0), &ps), Ok(vec![]));
    assert_eq!(plan_flashloans(Address::ZERO, w(500 + 200), &ps), Ok(vec![(a(1), w(700))]));
    assert_eq!(plan_flashloans(Address::ZERO, w(2001), &ps), Err(Unfundable { need: w(2001) }));
    assert_eq!(plan_flashloans(a(99), w(1), &ps), Err(Unfundable { need: w(1) }));
}

fn min_fee(need: u64, ps: &[FlashloanProvider]) -> Option<u64> {
    fn go(need: u64, ps: &[FlashloanProvider]) -> Option<u64> {
        let Some((p, rest)) = ps.split_first() else {
            return (need == 0).then_some(0);
        };
        (0..=need.min(p.capacity.as_u64()))
            .filter_map(|take| go(need - take, rest).map(|f| f + take * p.fee_bps))
            .min()
    }
    go(need, ps)
}

proptest! {
    #[test]
    fn greedy_plan_is_fee_minimal(
        caps in proptest::collection::vec((0u64..20, 0u64..12), 1..=4),
        need in 0u64..40,
    ) {
        let ps: Vec<FlashloanProvider> =
            caps.iter().enumerate().map(|(i, (fee, cap))| provider(i as u64 + 1, *fee, *cap)).collect();
        match (plan_flashloans(Address::ZERO, w(need), &ps), min_fee(need, &ps)) {
            (Ok(plan), Some(best)) => {
                let total: u64 = plan.iter().map(|(_, x)| x.as_u64()).sum();
                prop_assert_eq!(total, need);
                let fee: u64 = plan
                    .iter()
                    .map(|(p, x)| ps.iter().find(|q| q.address == *p).unwrap().fee_bps * x.as_u64())
                    .sum();
                prop_assert_eq!(fee, best);
            }
            (Err(_), None) => {}
            (plan, best) => prop_assert!(false, "plan {:?} vs exhaustive {:?}", plan, best),
        }
    }
}

#[test]
fn approval_fills_follow_state() {
    let (t, owner, spender) = (a(7), a(1), a(2));
    let mut world = WorldState::new();
    world.deploy(t, token_code());
    mint(&mut world, t, owner, w(1000));
    assert_eq!(fill_approval(&world, t, owner, spender), w(0));
    set_allowance(&mut world, t, owner, spender, w(777));
    assert_eq!(fill_approval(&world, t, owner, spender), w(777));
    let pull = encode_words(selector(sig::TRANSFER_FROM), &[owner.to_word(), spender.to_word(), w(700)]);
    let r = execute(&world, &Message::call(spender, t, pull), &BranchOverrides::none());
    assert_eq!(r.outcome, Outcome::Success);
    assert_eq!(fill_approval(&r.world, t, owner, spender), w(77));
}

#[test]
fn drain_amount_comes_from_the_allowance() {
    let scn = corpus::build("approval-drain").unwrap();
    let deploy = scn.scripted(TxRole::AttackerDeploy).next().unwrap();
    let world = execute(&scn.world, &deploy.tx.msg, &BranchOverrides::none()).world;
    let progs = clone_exploit(&world, scn.exploit.unwrap(), &PathCaps::default()).programs;
    let filled: Vec<ProgramWithHoles> = progs
        .iter()
        .map(|p| rewrite_program(p, &world))
        .filter(|p| p.holes.iter().any(|h| matches!(h.rule, Some(RuleFill::Approval { .. }))))
        .collect();
    assert!(!filled.is_empty());
    for p in &filled {
        assert_eq!(p.open_holes(), 0);
        assert_eq!(p.holes[0].filled, Some(ether(777)));
        assert_eq!(p.holes[0].fill_source, FillSource::Rule);
    }
}

fn bearndao_program() -> (WorldState, ProgramWithHoles) {
    let scn = corpus::build("bearndao").unwrap();
    let mut world = scn.world.clone();
    for s in scn.scripted(TxRole::AttackerDeploy) {
        world = execute(&world, &s.tx.msg, &BranchOverrides::none()).world;
    }
    let trigger = &scn.scripted(TxRole::AttackerTrigger).next().unwrap().tx.msg;
    let t = redirect_profit(&reconstruct(&world, trigger).unwrap(), scn.operator.executor);
    (world, extract_holes(&t))
}

#[test]
fn sandwich_program_goes_from_ten_holes_to_one() {
    let (world, p) = bearndao_program();
    assert_eq!(p.open_holes(), 10);
    let r = rewrite_program(&p, &world);
    assert_eq!(r.open_holes(), 1);
    assert_eq!(r.body, p.body);
}

#[test]
fn flashloans_are_replanned_at_run_time() {
    let (world, p) = bearndao_program();
    let r = rewrite_program(&p, &world);
    let op = whitehat_core::program::Operator::default();
    let run = run_program(&world, &r, &r.fills(), &op, &VmConfig::default()).unwrap();
    assert_eq!(run.result.outcome, Outcome::Success);
    let scn = corpus::build("bearndao").unwrap();
    let (p1, p2) = (scn.registry.providers[0], scn.registry.providers[1]);
    assert_eq!(run.loans, vec![(p1, ether(1000)), (p2, ether(500))]);
}

#[test]
fn no_matching_context_leaves_program_unchanged() {
    let t = ActionTrace {
        actions: (1..=3u64)
            .map(|k| Action {
                depth: 0,
                kind: ActionKind::Call {
                    target: a(0x55),
                    selector: Some("deadbeef".into()),
                    args: vec![ArgValue::Constant(w(k))],
                    tail: vec![],
                    value: ArgValue::Constant(w(0)),
                },
                output: vec![],
            })
            .collect(),
        attacker_addresses: vec![a(1)],
        created: vec![],
        victim_set: vec![a(0x55)],
    };
    let p = extract_holes(&t);
    assert_eq!(rewrite_program(&p, &WorldState::new()), p);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn rewrite_is_monotone_and_touches_only_fills(
        actions in proptest::collection::vec(arb_action(a(0x1b), a(0xf1), a(0x70)), 0..8)
    ) {
        let mut world = WorldState::new();
        world.deploy(a(0x70), token_code());
        deploy_lp(&mut world, a(0x1b), a(0x70), Address::ZERO, w(1_000_000), w(1_000_000), 30);
        deploy_provider(&mut world, a(0xf1), Address::ZERO, 5, w(1_000_000));
        let t = ActionTrace { actions, attacker_addresses: vec![a(0xe0)], created: vec![], victim_set: vec![a(0x1b)] };
        let p = extract_holes(&t);
        let r = rewrite_program(&p, &world);
        prop_assert!(r.open_holes() <= p.open_holes());
        prop_assert_eq!(r.holes.len(), p.holes.len());
        prop_assert_eq!(&r.body, &p.body);
        for (x, y) in p.holes.iter().zip(&r.holes) {
            prop_assert_eq!(x.slot, y.slot);
            prop_assert_eq!(x.ty, y.ty);
        }
    }
}
