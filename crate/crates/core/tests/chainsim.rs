use proptest::prelude::*;
use whitehat_core::chainsim::*;
use whitehat_core::contracts::*;
use whitehat_core::minivm::lang::{contract, func, S};
use whitehat_core::minivm::{Message, Outcome, WorldState};
use whitehat_core::types::{ether, selector, Address, Word};

const TKN: Address = Address::from_low_u64(0x70);
const ODD: Address = Address::from_low_u64(0x71);
const LP: Address = Address::from_low_u64(0x1b);
const BOX: Address = Address::from_low_u64(0xb0);

fn user(i: u64) -> Address {
    Address::from_low_u64(0x1000 + i)
}

fn w(n: u64) -> Word {
    Word::from(n)
}

fn world() -> WorldState {
    let mut world = WorldState::new();
    for i in 0..8 {
        world.set_balance(user(i), ether(10));
    }
    world.deploy(
        BOX,
        contract(
            &[func("ok()", vec![S::Stop]), func("fail()", vec![S::Revert])],
            &[S::Stop],
        ),
    );
    world
}

fn call(from: u64, f: &str) -> Message {
    Message::call(user(from), BOX, selector(f).to_vec())
}

fn chain() -> Chain {
    Chain::new(world(), Registry::default())
}

#[test]
fn inclusion_follows_gas_price() {
    let mut ch = chain();
    for (i, p) in [5u64, 10, 7].into_iter().enumerate() {
        ch.submit(SimTx::public(call(i as u64, "ok()"), w(p))).unwrap();
    }
    let b = ch.build_block(&BuilderPolicy::default());
    let prices: Vec<Word> = b.txs.iter().map(|t| t.tx.gas_price).collect();
    assert_eq!(prices, vec![w(10), w(7), w(5)]);
}

#[test]
fn failing_bundle_is_dropped_whole() {
    let mut ch = chain();
    let before = state_root(ch.world());
    ch.submit_bundle(vec![
        SimTx::private(call(0, "ok()"), w(3)),
        SimTx::private(call(1, "fail()"), w(3)),
    ])
    .unwrap();
    let b = ch.build_block(&BuilderPolicy::default());
    assert!(b.txs.is_empty());
    assert_eq!(state_root(ch.world()), before);

    ch.submit_bundle(vec![
        SimTx::private(call(0, "ok()"), w(3)),
        SimTx::private(call(1, "ok()"), w(3)),
    ])
    .unwrap();
    ch.submit(SimTx::public(call(2, "ok()"), w(9))).unwrap();
    let b = ch.build_block(&BuilderPolicy::default());
    assert_eq!(b.txs.len(), 3);
    assert_eq!(b.txs[0].tx.visibility, Visibility::Public);
    assert_eq!(b.txs[1].tx.bundle_id, b.txs[2].tx.bundle_id);
}

#[test]
fn reverting_single_is_included_and_charged() {
    let mut ch = chain();
    ch.submit(SimTx::public(call(0, "fail()"), w(2))).unwrap();
    let b = ch.build_block(&BuilderPolicy::default());
    assert_eq!(b.txs.len(), 1);
    assert_ne!(b.txs[0].outcome, Outcome::Success);
    let paid = Word::from(b.txs[0].gas_used) * w(2);
    assert_eq!(ch.world().balance(&user(0)), ether(10) - paid);
}

#[test]
fn private_tx_revealed_at_broadcast() {
    let mut ch = chain();
    ch.submit(SimTx::private(call(0, "ok()"), w(4)).labeled("attack")).unwrap();
    ch.submit(SimTx::public(call(1, "ok()"), w(4)).labeled("decoy")).unwrap();
    let seen = ch.observe();
    assert_eq!(seen.pending_public.len(), 1);
    assert_eq!(seen.pending_public[0].label, "decoy");
    ch.build_block(&BuilderPolicy::default());
    let labels: Vec<&str> = ch.latest_block().unwrap().txs.iter().map(|t| t.tx.label.as_str()).collect();
    assert_eq!(labels, vec!["attack", "decoy"]);
    assert!(ch.observe().pending_public.is_empty());
}

#[test]
fn underfunded_tx_is_rejected() {
    let mut ch = chain();
    let poor = Address::from_low_u64(0xdead);
    let m = Message::call(poor, BOX, selector("ok()").to_vec());
    assert_eq!(ch.submit(SimTx::public(m.clone(), w(1))), Err(SubmitError::InsufficientBalance(poor)));
    ch.world_mut().set_balance(poor, Word::from(m.gas_limit));
    assert!(ch.submit(SimTx::public(m.clone(), w(1))).is_ok());
    assert!(ch.submit(SimTx::public(m.with_value(w(1)), w(1))).is_err());
    assert!(ch.observe().pending_public.len() == 1);
}

#[test]
fn bundle_funds_are_checked_together() {
    let mut ch = chain();
    let gas = Word::from(call(0, "ok()").gas_limit);
    let rich = ether(10);
    let spend = rich - gas - w(1);
    let r = ch.submit_bundle(vec![
        SimTx::private(call(0, "ok()").with_value(spend), w(1)),
        SimTx::private(call(0, "ok()").with_value(w(2)), w(1)),
    ]);
    assert_eq!(r, Err(SubmitError::InsufficientBalance(user(0))));
    assert!(ch.submit(SimTx { bundle_id: Some(99), ..SimTx::public(call(0, "ok()"), w(1)) }).is_err());
}

#[test]
fn valuation_cases() {
    let mut world = WorldState::new();
    world.deploy(TKN, token_code());
    world.deploy(ODD, token_code());
    deploy_lp(&mut world, LP, TKN, Address::ZERO, w(1000), w(2000), 30);
    let reg = Registry {
        lps: vec![LP],
        providers: vec![],
    };
    let (a, b, c) = (user(0), user(1), user(2));
    world.set_balance(a, w(100));
    mint(&mut world, TKN, b, w(10));
    mint(&mut world, ODD, c, w(10));
    assert_eq!(value_of(&world, &reg, a), w(100));
    assert_eq!(value_of(&world, &reg, b), w(19));
    assert_eq!(value_of(&world, &reg, c), w(0));
}

#[test]
fn identical_pools_give_identical_blocks() {
    let mut a = chain();
    for i in 0..6u64 {
        let f = if i % 3 == 0 { "fail()" } else { "ok()" };
        let tx = if i % 2 == 0 {
            SimTx::public(call(i, f), w(1 + i % 4))
        } else {
            SimTx::private(call(i, f), w(1 + i % 4))
        };
        a.submit(tx).unwrap();
    }
    let mut b = a.clone();
    let (x, y) = (a.build_block(&BuilderPolicy::default()), b.build_block(&BuilderPolicy::default()));
    assert_eq!(serde_json::to_string(&x).unwrap(), serde_json::to_string(&y).unwrap());
    assert_eq!(state_root(a.world()), state_root(b.world()));
}

#[derive(Debug, Clone)]
enum Step {
    Public(u64, u64),
    Private(u64, u64),
    Bundle(u64, u64),
    Tick,
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        (0u64..8, 1u64..20).prop_map(|(u, p)| Step::Public(u, p)),
        (0u64..8, 1u64..20).prop_map(|(u, p)| Step::Private(u, p)),
        (0u64..8, 1u64..20).prop_map(|(u, p)| Step::Bundle(u, p)),
        Just(Step::Tick),
    ]
}

proptest! {
    #[test]
    fn private_txs_are_invisible_before_broadcast(steps in proptest::collection::vec(step(), 0..24)) {
        let (mut with, mut without) = (chain(), chain());
        for s in &steps {
            match *s {
                Step::Public(u, p) => {
                    with.submit(SimTx::public(call(u, "ok()"), w(p))).unwrap();
                    without.submit(SimTx::public(call(u, "ok()"), w(p))).unwrap();
                }
                Step::Private(u, p) => {
                    with.submit(SimTx::private(call(u, "ok()"), w(p))).unwrap();
                }
                Step::Bundle(u, p) => {
                    with.submit_bundle(vec![
                        SimTx::private(call(u, "ok()"), w(p)),
                        SimTx::private(call((u + 1) % 8, "fail()"), w(p)),
                    ]).unwrap();
                }
                Step::Tick => {
                    with.tick += 1;
                    without.tick += 1;
                }
            }
            prop_assert_eq!(with.observe(), without.observe());
            prop_assert_eq!(with.latest_block(), without.latest_block());
            prop_assert_eq!(with.blocks().len(), without.blocks().len());
        }
    }
}

#[test]
fn six_bot_war_burns_most_of_the_prize() {
    let out = simulate_bidding(&BiddingSetup::calibrated(), &BotConfig::six_bots());
    let n = out.log.entries.len();
    assert!((150..=250).contains(&n), "{n} bids");
    assert!((out.rescued_fraction - 0.20).abs() <= 0.05, "{}", out.rescued_fraction);
    assert!(out.winner.is_some());
    for bot in 1..=6 {
        let prices: Vec<f64> = out.log.entries.iter().filter(|e| e.bot == bot).map(|e| e.gas_price).collect();
        assert!(prices.windows(2).all(|p| p[0] <= p[1]), "bot {bot} lowered its bid");
    }
    let times: Vec<u64> = out.log.entries.iter().map(|e| e.time_ms).collect();
    assert!(times.windows(2).all(|t| t[0] <= t[1]));
    let last = out.log.entries.last().unwrap();
    assert_eq!(last.gas_price, out.winning_gas_price);
}

#[test]
fn rescued_fraction_falls_with_gas_price() {
    let s = BiddingSetup::calibrated();
    let prices: Vec<f64> = (0..2000).map(|i| s.floor_gwei * 1.01f64.powi(i)).collect();
    let fr: Vec<f64> = prices.iter().map(|p| s.rescued_fraction(*p)).collect();
    assert!(fr.windows(2).all(|f| f[1] <= f[0]));
    for (p, f) in prices.iter().zip(&fr) {
        let oracle = ((s.rescuable - s.gas_used as f64 * p / s.gwei_per_unit) / s.rescuable).max(0.0);
        assert!((f - oracle).abs() < 1e-12);
    }
    assert_eq!(*fr.last().unwrap(), 0.0);
}

#[test]
fn lone_bot_pays_only_the_floor() {
    let s = BiddingSetup::calibrated();
    let out = simulate_bidding(&s, &BotConfig::six_bots()[..1]);
    assert_eq!(out.log.entries.len(), 1);
    assert_eq!(out.winning_gas_price, s.floor_gwei);
    assert!((out.rescued_fraction - (1.0 - s.cost(s.floor_gwei) / s.rescuable)).abs() < 1e-12);
    assert!(out.rescued_fraction > 0.99);
}

#[test]
fn no_bots_means_the_attacker_wins() {
    let out = simulate_bidding(&BiddingSetup::calibrated(), &[]);
    assert!(out.winner.is_none());
    assert!(out.log.entries.is_empty());
    assert_eq!(out.rescued_fraction, 0.0);
}

#[test]
fn bid_log_csv() {
    let out = simulate_bidding(&BiddingSetup::calibrated(), &BotConfig::six_bots());
    let csv = out.log.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("time_ms,bot,gas_price"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), out.log.entries.len());
    let first: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(first[1].parse::<u32>().unwrap(), out.log.entries[0].bot);
    assert_eq!(first[2], "10.000");
}
