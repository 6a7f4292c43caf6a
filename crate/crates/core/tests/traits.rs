use std::collections::BTreeSet;

use proptest::prelude::*;
use whitehat_core::contracts::*;
use whitehat_core::minivm::lang::{c, contract, func, S};
use whitehat_core::minivm::WorldState;
use whitehat_core::traits::*;
use whitehat_core::types::{Address, Word};

fn a(n: u64) -> Address {
    Address::from_low_u64(n)
}

#[test]
fn identical_deployments_share_traits() {
    let mut w = WorldState::new();
    w.deploy(a(1), token_code());
    w.deploy(a(2), token_code());
    let (r1, r2) = (compute_traits(&w, a(1)), compute_traits(&w, a(2)));
    assert_eq!(r1.codehash, r2.codehash);
    assert_eq!(r1.selectors, r2.selectors);
    assert!(r1.kind.token && !r1.kind.lp);
}

#[test]
fn same_selectors_different_code() {
    let f = |k: u64| {
        contract(
            &[
                func("ping()", vec![S::SStore(c(0u64), c(k)), S::Stop]),
                func("pong(uint256)", vec![S::Stop]),
            ],
            &[],
        )
    };
    let mut w = WorldState::new();
    w.deploy(a(1), f(1));
    w.deploy(a(2), f(2));
    let idx = TraitIndex::build(&w);
    assert_eq!(idx.query_similar(a(1), TraitMode::Selectors), BTreeSet::from([a(1), a(2)]));
    assert_eq!(idx.query_similar(a(1), TraitMode::Codehash), BTreeSet::from([a(1)]));
}

#[test]
fn empty_code_record() {
    let mut w = WorldState::new();
    w.set_balance(a(5), Word::one());
    let r = compute_traits(&w, a(5));
    assert_eq!(r.codehash, whitehat_core::types::keccak256(&[]));
    assert!(r.selectors.is_empty());
    assert!(r.kind.other);
}

#[test]
fn lp_and_approval_relations() {
    let mut w = WorldState::new();
    let (t, u, lp, victim, spender) = (a(1), a(2), a(3), a(4), a(5));
    w.deploy(t, token_code());
    w.deploy(u, token_code());
    deploy_lp(&mut w, lp, t, u, Word::from(1000u64), Word::from(1000u64), 30);
    let r = relation(&w, lp, t);
    assert!(r.contains(Relation::LpOf) && r.contains(Relation::Token0Of));
    assert!(!r.contains(Relation::Token1Of));
    assert!(relation(&w, lp, u).contains(Relation::Token1Of));
    assert!(relation(&w, t, lp).is_empty(), "relations are directional");
    assert!(relation(&w, victim, spender).is_empty());

    set_allowance(&mut w, t, victim, spender, Word::from(777u64));
    assert!(relation(&w, victim, spender).contains(Relation::Approval));
    let idx = TraitIndex::build(&w);
    assert!(idx.relation(&w, victim, spender).contains(Relation::Approval));

    set_allowance(&mut w, t, victim, spender, Word::zero());
    assert!(!relation(&w, victim, spender).contains(Relation::Approval));
}

#[test]
fn owner_relation() {
    let mut w = WorldState::new();
    w.deploy(a(1), vec![0x00]);
    w.set_storage(a(1), Word::from(OWNER_SLOT), a(9).to_word());
    assert!(relation(&w, a(1), a(9)).contains(Relation::OwnerOf));
    assert!(!relation(&w, a(9), a(1)).contains(Relation::OwnerOf));
}

#[test]
fn clones_and_singletons() {
    let mut w = WorldState::new();
    for i in 0..4 {
        w.deploy(a(100 + i), token_code());
    }
    w.deploy(a(7), deflationary_token_code());
    let idx = TraitIndex::build(&w);
    assert_eq!(idx.query_similar(a(100), TraitMode::Codehash).len(), 4);
    assert_eq!(idx.query_similar(a(7), TraitMode::Codehash), BTreeSet::from([a(7)]));
    assert_eq!(idx.query_similar(a(999), TraitMode::Codehash), BTreeSet::from([a(999)]));
}

#[test]
fn hundred_lp_clones_match_a_linear_scan() {
    let mut w = WorldState::new();
    w.deploy(a(1), token_code());
    for i in 0..101 {
        deploy_lp(&mut w, a(1000 + i), a(1), Address::ZERO, Word::from(10u64), Word::from(10u64), 30);
    }
    w.deploy(a(2), token_code());
    let idx = TraitIndex::build(&w);
    let got = idx.query_similar(a(1000), TraitMode::Codehash);
    let hash = compute_traits(&w, a(1000)).codehash;
    let scan: BTreeSet<Address> = w
        .accounts
        .keys()
        .filter(|x| compute_traits(&w, **x).codehash == hash)
        .copied()
        .collect();
    assert_eq!(got.len(), 101);
    assert_eq!(got, scan);
}

#[test]
fn snapshot_round_trip() {
    let mut w = WorldState::new();
    w.deploy(a(1), token_code());
    w.deploy(a(2), token_code());
    deploy_lp(&mut w, a(3), a(1), Address::ZERO, Word::from(5u64), Word::from(5u64), 30);
    let idx = TraitIndex::build(&w);
    let mut buf = Vec::new();
    idx.save(&mut buf).unwrap();
    let back = TraitIndex::load(buf.as_slice()).unwrap();
    assert_eq!(back, idx);
    let mut again = Vec::new();
    back.save(&mut again).unwrap();
    assert_eq!(buf, again);
    assert!(TraitIndex::load(&buf[..buf.len() - 3]).is_err());
}

proptest! {
    #[test]
    fn similarity_is_symmetric(kinds in proptest::collection::vec(0u8..3, 1..12), mode in prop_oneof![Just(TraitMode::Codehash), Just(TraitMode::Selectors)]) {
        let mut w = WorldState::new();
        for (i, k) in kinds.iter().enumerate() {
            let code = match k {
                0 => token_code(),
                1 => deflationary_token_code(),
                _ => vec![0x00],
            };
            w.deploy(a(10 + i as u64), code);
        }
        let idx = TraitIndex::build(&w);
        for x in idx.records.keys() {
            for y in idx.records.keys() {
                prop_assert_eq!(idx.query_similar(*x, mode).contains(y), idx.query_similar(*y, mode).contains(x));
            }
        }
    }
}
