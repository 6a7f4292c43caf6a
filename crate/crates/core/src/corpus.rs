//! Synthetic scenario suite: hand-built worlds with scripted attackers.

use thiserror::Error;

use crate::chainsim::{Expectation, Registry, Scenario, ScriptedTx, SimTx, TxRole, Visibility};
use crate::contracts::{
    deflationary_token_code, deploy_executor, deploy_lp, deploy_provider, encode_program, encode_with_bytes,
    encode_words, mint, set_allowance, sig, token_code, Record, TOKEN_PAIR,
};
use crate::minivm::lang::*;
use crate::minivm::{Message, WorldState};
use crate::program::Operator;
use crate::rewrite::{quote_v2_swap, PoolReserves};
use crate::types::{ether, gwei, keccak256, selector, word_from_be, word_to_be, Address, Word};

pub const NAMES: [&str; 6] = [
    "honeypot-gated",
    "fork-pair",
    "approval-drain",
    "bearndao",
    "launchpad",
    "constructor-attack",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown scenario {0:?}")]
pub struct UnknownScenario(pub String);

/// Builds a scenario by name.
pub fn build(name: &str) -> Result<Scenario, UnknownScenario> {
    Ok(match name {
        "honeypot-gated" => honeypot_gated(),
        "fork-pair" => fork_pair(),
        "approval-drain" => approval_drain(),
        "bearndao" => bearndao(),
        "launchpad" => launchpad(),
        "constructor-attack" => constructor_attack(),
        _ => return Err(UnknownScenario(name.to_string())),
    })
}

pub fn all() -> Vec<Scenario> {
    NAMES.iter().map(|n| build(n).expect("registered")).collect()
}

/// A stable address derived from a label. The top byte is never zero, so
/// these compile to full PUSH20s when hardcoded.
pub fn named(label: &str) -> Address {
    let h = keccak256(label.as_bytes());
    let mut a = [0u8; 20];
    a.copy_from_slice(&h[12..]);
    a[0] |= 0x10;
    Address(a)
}

const SCRIPT_GAS: u64 = 3_000_000;

fn script_price() -> Word {
    gwei(10)
}

fn eoa(world: &mut WorldState, a: Address, balance: Word, nonce: u64) {
    let acct = world.account_mut(a);
    acct.balance = balance;
    acct.nonce = nonce;
}

/// World with our operator in place.
fn base_world() -> (WorldState, Operator) {
    let op = Operator::default();
    let mut w = WorldState::new();
    eoa(&mut w, op.eoa, ether(100), 0);
    deploy_executor(&mut w, op.executor, op.eoa);
    w.set_balance(op.executor, ether(10));
    (w, op)
}

fn tx(msg: Message, visibility: Visibility, label: &str) -> SimTx {
    let mut msg = msg;
    msg.gas_limit = SCRIPT_GAS;
    SimTx {
        msg,
        gas_price: script_price(),
        visibility,
        bundle_id: None,
        label: label.to_string(),
    }
}

fn scripted(tick: u64, role: TxRole, tx: SimTx) -> ScriptedTx {
    ScriptedTx {
        tick,
        role,
        tx,
        group: None,
    }
}

/// Transactions sent together as one private bundle.
fn private_bundle(tick: u64, txs: Vec<(TxRole, Message, &str)>) -> Vec<ScriptedTx> {
    txs.into_iter()
        .map(|(role, m, label)| ScriptedTx {
            group: Some("attack".into()),
            ..scripted(tick, role, tx(m, Visibility::Private, label))
        })
        .collect()
}

fn min_value(label: &str, account: Address, min: Word) -> Expectation {
    Expectation {
        label: label.to_string(),
        account,
        min: Some(min),
        max: None,
    }
}

fn max_value(label: &str, account: Address, max: Word) -> Expectation {
    Expectation {
        label: label.to_string(),
        account,
        min: None,
        max: Some(max),
    }
}

fn sel(s: &str) -> [u8; 4] {
    selector(s)
}

// flashLoan(receiver, amount, "")
fn flash_loan(provider: E, amount: E) -> S {
    S::Call(
        call(provider, sel(sig::FLASH_LOAN), vec![E::SelfAddr, amount, c(0x60u64), c(0u64)]),
        None,
    )
}

// swap(out0, out1, self, "")
fn swap(pool: E, out0: E, out1: E) -> S {
    S::Call(
        call(pool, sel(sig::SWAP), vec![out0, out1, E::SelfAddr, c(0x80u64), c(0u64)]),
        None,
    )
}

fn token_balance_into(token: E, dst: usize) -> [S; 2] {
    [
        S::Call(static_call(token, sel(sig::BALANCE_OF), vec![E::SelfAddr]), None),
        S::Let(dst, ret(0)),
    ]
}

fn quote(reserve_in: Word, reserve_out: Word, amount_in: Word) -> Word {
    quote_v2_swap(&PoolReserves::new(reserve_in, reserve_out), amount_in).expect("funded pool")
}

/// An exploit gated on its owner and on the hash of the transaction origin,
/// which borrows the caller-chosen amount and redeems it at a vault paying double.
fn honeypot_gated() -> Scenario {
    let (mut w, operator) = base_world();
    let attacker = named("honeypot/attacker");
    let vault = named("honeypot/vault");
    let provider = named("honeypot/provider");
    let bystander = named("honeypot/bystander");
    eoa(&mut w, attacker, ether(100), 1);
    eoa(&mut w, bystander, ether(50), 4);

    let redeem = func(
        "redeem(uint256)",
        vec![
            S::Require(eq(E::CallValue, arg(0))),
            S::Require(eq(arg(0), sload(c(0u64)))),
            S::Call(send(E::Caller, min(mul(arg(0), c(2u64)), balance(E::SelfAddr))), None),
        ],
    );
    w.deploy(vault, contract(&[redeem], &[]));
    w.set_storage(vault, Word::zero(), ether(1000));
    w.set_balance(vault, ether(1000));
    deploy_provider(&mut w, provider, Address::ZERO, 5, ether(5000));

    let origin_hash = word_from_be(&keccak256(&word_to_be(attacker.to_word())));
    let runtime = contract(
        &[
            func(
                "attack(uint256)",
                vec![
                    S::Require(eq(E::Caller, sload(c(0u64)))),
                    S::Require(eq(hash1(E::Origin), c(origin_hash))),
                    flash_loan(sload(c(1u64)), arg(0)),
                    S::Call(send(sload(c(0u64)), balance(E::SelfAddr)), None),
                ],
            ),
            func(
                sig::ON_FLASH_LOAN,
                vec![
                    S::Require(eq(E::Caller, sload(c(1u64)))),
                    S::Call(
                        call(sload(c(2u64)), sel("redeem(uint256)"), vec![arg(0)]).with_value(arg(0)),
                        None,
                    ),
                    S::Call(send(E::Caller, add(arg(0), arg(1))), None),
                ],
            ),
        ],
        &[S::Stop],
    );
    let init = deployer(
        &runtime,
        &[
            (Word::zero(), attacker.to_word()),
            (Word::one(), provider.to_word()),
            (Word::from(2u64), vault.to_word()),
        ],
    );
    let exploit = Address::create(attacker, 1);
    let trigger = Message::call(attacker, exploit, encode_words(sel("attack(uint256)"), &[ether(1000)]));
    let decoy = Message::call(bystander, named("honeypot/shop"), Vec::new()).with_value(ether(1));

    Scenario {
        name: "honeypot-gated".into(),
        description: "owner- and origin-gated flashloan exploit against a double-paying vault".into(),
        world: w,
        registry: Registry {
            lps: vec![],
            providers: vec![provider],
        },
        operator,
        block_interval: 10,
        end_tick: 120,
        timeline: vec![
            scripted(0, TxRole::AttackerDeploy, tx(Message::create(attacker, init), Visibility::Public, "deploy exploit")),
            scripted(5, TxRole::Decoy, tx(decoy, Visibility::Public, "payment")),
            scripted(100, TxRole::AttackerTrigger, tx(trigger, Visibility::Public, "trigger")),
        ],
        victims: vec![vault],
        exploit: Some(exploit),
        expected: vec![
            max_value("vault drained", vault, ether(10)),
            min_value("rescued by operator", operator.eoa, ether(1089)),
            max_value("attacker gains nothing", attacker, ether(100)),
        ],
    }
}

/// Reserves of a deflationary-token pool with the native coin as token1.
struct ForkPool {
    lp: Address,
    token: Address,
    tokens: Word,
    native: Word,
}

/// The four constants of a burn-and-sell attack on one pool: native in,
/// tokens bought, tokens burnt from the pool, native out.
fn fork_constants(p: &ForkPool, spend: Word) -> [Word; 4] {
    let bought = quote(p.native, p.tokens, spend);
    let burn = ether(1_000_000_000);
    // The burn leaves one unit in the pool, then the pool resyncs.
    let out = quote(Word::one(), p.native + spend, bought);
    [spend, bought, burn, out]
}

fn fork_attack_body(p: &ForkPool, k: [Word; 4]) -> Vec<S> {
    let mut body = vec![
        S::Call(send(addr(p.lp), c(k[0])), None),
        swap(addr(p.lp), c(k[1]), c(0u64)),
        S::Call(call(addr(p.token), sel(sig::TRANSFER), vec![addr(p.token), c(k[2])]), None),
    ];
    body.extend(token_balance_into(addr(p.token), 0));
    body.push(S::Call(call(addr(p.token), sel(sig::TRANSFER), vec![addr(p.lp), local(0)]), None));
    body.push(swap(addr(p.lp), c(0u64), c(k[3])));
    body
}

/// Two pools of the same deflationary token code. The attacker hits the first
/// with hardcoded constants in a private bundle; a copycat later targets the second.
fn fork_pair() -> Scenario {
    let (mut w, operator) = base_world();
    let attacker = named("fork/attacker");
    let copycat = named("fork/copycat");
    eoa(&mut w, attacker, ether(100), 1);
    eoa(&mut w, copycat, ether(100), 1);
    let pools = [
        ForkPool {
            lp: named("fork/lp1"),
            token: named("fork/g1"),
            tokens: ether(1_000_000),
            native: ether(100),
        },
        ForkPool {
            lp: named("fork/lp2"),
            token: named("fork/g2"),
            tokens: ether(800_000),
            native: ether(80),
        },
    ];
    for p in &pools {
        w.deploy(p.token, deflationary_token_code());
        w.set_storage(p.token, Word::from(TOKEN_PAIR), p.lp.to_word());
        deploy_lp(&mut w, p.lp, p.token, Address::ZERO, p.tokens, p.native, 30);
    }

    let k1 = fork_constants(&pools[0], ether(5));
    let mut attack = vec![S::Require(eq(E::Caller, sload(c(0u64))))];
    attack.extend(fork_attack_body(&pools[0], k1));
    attack.push(S::Call(send(sload(c(0u64)), balance(E::SelfAddr)), None));
    let runtime = contract(&[func("attack()", attack)], &[S::Stop]);
    let init = deployer(&runtime, &[(Word::zero(), attacker.to_word())]);
    let exploit = Address::create(attacker, 1);
    let deploy = Message::create(attacker, init).with_value(ether(1));
    let trigger = Message::call(attacker, exploit, sel("attack()").to_vec()).with_value(ether(5));

    // The copycat attacks from a constructor and keeps the loot only if it beats its stake.
    let k2 = fork_constants(&pools[1], ether(4));
    let mut ctor = fork_attack_body(&pools[1], k2);
    ctor.push(S::Require(gt(balance(E::SelfAddr), c(k2[0]))));
    ctor.push(S::Call(send(E::Origin, balance(E::SelfAddr)), None));
    let copy_init = deployer_with(&program(&[S::Stop]), &[], &ctor);
    let copy = Message::create(copycat, copy_init).with_value(k2[0]);

    let mut timeline = private_bundle(
        20,
        vec![
            (TxRole::AttackerDeploy, deploy, "deploy exploit"),
            (TxRole::AttackerTrigger, trigger, "attack"),
        ],
    );
    timeline.push(scripted(40, TxRole::Copycat, tx(copy, Visibility::Public, "copycat")));
    Scenario {
        name: "fork-pair".into(),
        description: "hardcoded-constant burn attack on one pool of a forked deflationary token".into(),
        world: w,
        registry: Registry {
            lps: pools.iter().map(|p| p.lp).collect(),
            providers: vec![],
        },
        operator,
        block_interval: 10,
        end_tick: 60,
        timeline,
        victims: pools.iter().map(|p| p.lp).collect(),
        exploit: Some(exploit),
        expected: vec![
            max_value("second pool drained", pools[1].lp, ether(8)),
            max_value("copycat gains nothing", copycat, ether(100)),
            min_value("rescued into the executor", operator.executor, ether(85)),
        ],
    }
}

/// A router that moves approved tokens for anyone, and an exploit that uses
/// it to pull a victim's approved balance.
fn approval_drain() -> Scenario {
    let (mut w, operator) = base_world();
    let attacker = named("approval/attacker");
    let victim = named("approval/victim");
    let token = named("approval/token");
    let router = named("approval/router");
    let lp = named("approval/lp");
    eoa(&mut w, attacker, ether(100), 1);
    eoa(&mut w, victim, ether(1), 3);
    w.deploy(token, token_code());
    deploy_lp(&mut w, lp, token, Address::ZERO, ether(10_000), ether(100), 30);
    mint(&mut w, token, victim, ether(1000));
    set_allowance(&mut w, token, victim, router, ether(777));
    let move_from = "moveFrom(address,address,address,uint256)";
    w.deploy(
        router,
        contract(
            &[func(
                move_from,
                vec![S::Call(
                    call(
                        arg_addr(0),
                        sel(sig::TRANSFER_FROM),
                        vec![arg_addr(1), arg_addr(2), arg(3)],
                    ),
                    None,
                )],
            )],
            &[],
        ),
    );

    let runtime = contract(
        &[func(
            "drain(uint256)",
            vec![
                S::Require(eq(E::Caller, sload(c(0u64)))),
                S::Call(
                    call(
                        addr(router),
                        sel(move_from),
                        vec![addr(token), addr(victim), sload(c(0u64)), arg(0)],
                    ),
                    None,
                ),
            ],
        )],
        &[],
    );
    let init = deployer(&runtime, &[(Word::zero(), attacker.to_word())]);
    let exploit = Address::create(attacker, 1);
    let trigger = Message::call(attacker, exploit, encode_words(sel("drain(uint256)"), &[ether(777)]));
    Scenario {
        name: "approval-drain".into(),
        description: "exploit pulling a victim's approved tokens through an open router".into(),
        world: w,
        registry: Registry {
            lps: vec![lp],
            providers: vec![],
        },
        operator,
        block_interval: 10,
        end_tick: 70,
        timeline: vec![
            scripted(0, TxRole::AttackerDeploy, tx(Message::create(attacker, init), Visibility::Public, "deploy exploit")),
            scripted(50, TxRole::AttackerTrigger, tx(trigger, Visibility::Public, "trigger")),
        ],
        victims: vec![victim],
        exploit: Some(exploit),
        expected: vec![
            min_value("rescued by operator", operator.eoa, ether(105)),
            max_value("attacker gains nothing", attacker, ether(100)),
        ],
    }
}

fn dust_vault_code() -> Vec<u8> {
    let lp = || sload(c(0u64));
    let body = vec![
        S::Let(0, balance(E::SelfAddr)),
        S::Require(gt(local(0), c(0u64))),
        S::Call(static_call(lp(), sel(sig::GET_RESERVES), vec![]), None),
        S::Let(1, ret(0)),
        S::Let(2, ret(1)),
        S::Let(3, mul(local(0), c(9970u64))),
        S::Let(4, div(mul(local(3), local(1)), add(mul(local(2), c(10_000u64)), local(3)))),
        S::Call(send(lp(), local(0)), None),
        swap(lp(), local(4), c(0u64)),
    ];
    contract(&[func("convertDustToEarned()", body)], &[S::Stop])
}

/// Dust-converting vaults that buy a token at whatever the pool quotes,
/// sandwiched with two nested flashloans.
fn bearndao() -> Scenario {
    let (mut w, operator) = base_world();
    let attacker = named("bearn/attacker");
    let token = named("bearn/token");
    let lp = named("bearn/lp");
    let p1 = named("bearn/provider1");
    let p2 = named("bearn/provider2");
    let vaults: Vec<Address> = (1..=4).map(|i| named(&format!("bearn/vault{i}"))).collect();
    eoa(&mut w, attacker, ether(100), 1);
    w.deploy(token, token_code());
    deploy_lp(&mut w, lp, token, Address::ZERO, ether(1000), ether(1000), 30);
    deploy_provider(&mut w, p1, Address::ZERO, 5, ether(1000));
    deploy_provider(&mut w, p2, Address::ZERO, 9, ether(1000));
    for v in &vaults {
        w.deploy(*v, dust_vault_code());
        w.set_storage(*v, Word::zero(), lp.to_word());
        w.set_balance(*v, ether(500));
    }

    // Pool is (token, native); replay the sandwich to get the attacker's constants.
    let spend = ether(1500);
    let (mut rt, mut rn) = (ether(1000), ether(1000));
    let bought = quote(rn, rt, spend);
    rt -= bought;
    rn += spend;
    for _ in 0..2 {
        let dust = ether(500);
        let out = quote(rn, rt, dust);
        rt -= out;
        rn += dust;
    }
    let sold = quote(rt, rn, bought);

    let mut inner = vec![
        S::Require(eq(E::Caller, addr(p2))),
        S::Call(send(addr(lp), c(spend)), None),
        swap(addr(lp), c(bought), c(0u64)),
        S::Call(call(addr(vaults[0]), sel("convertDustToEarned()"), vec![]), None),
        S::Call(call(addr(vaults[1]), sel("convertDustToEarned()"), vec![]), None),
    ];
    inner.push(S::Call(call(addr(token), sel(sig::TRANSFER), vec![addr(lp), c(bought)]), None));
    inner.push(swap(addr(lp), c(0u64), c(sold)));
    inner.push(S::Call(send(addr(p2), add(arg(0), arg(1))), None));
    let callback = vec![S::If(
        eq(E::Caller, addr(p1)),
        vec![
            flash_loan(addr(p2), c(ether(500))),
            S::Call(send(addr(p1), add(arg(0), arg(1))), None),
        ],
        inner,
    )];
    let runtime = contract(
        &[
            func(
                "attack()",
                vec![
                    S::Require(eq(E::Caller, sload(c(0u64)))),
                    flash_loan(addr(p1), c(ether(1000))),
                    S::Call(send(sload(c(0u64)), balance(E::SelfAddr)), None),
                ],
            ),
            func(sig::ON_FLASH_LOAN, callback),
        ],
        &[S::Stop],
    );
    let init = deployer(&runtime, &[(Word::zero(), attacker.to_word())]);
    let exploit = Address::create(attacker, 1);
    let deploy = Message::create(attacker, init).with_value(ether(50));
    let trigger = Message::call(attacker, exploit, sel("attack()").to_vec());
    Scenario {
        name: "bearndao".into(),
        description: "sandwich of dust-converting vaults funded by two nested flashloans".into(),
        world: w,
        registry: Registry {
            lps: vec![lp],
            providers: vec![p1, p2],
        },
        operator,
        block_interval: 10,
        end_tick: 70,
        timeline: private_bundle(
            20,
            vec![
                (TxRole::AttackerDeploy, deploy, "deploy exploit"),
                (TxRole::AttackerTrigger, trigger, "attack"),
            ],
        ),
        victims: vaults.clone(),
        exploit: Some(exploit),
        expected: vec![
            max_value("third vault converted by us", vaults[2], ether(100)),
            max_value("fourth vault converted by us", vaults[3], ether(100)),
            min_value("rescued into the executor", operator.executor, ether(300)),
        ],
    }
}

/// A generic call-list runner used as the exploit; the key that opens the
/// victim only ever appears in the trigger's calldata.
fn launchpad() -> Scenario {
    let (mut w, operator) = base_world();
    let attacker = named("launchpad/attacker");
    let vault = named("launchpad/vault");
    eoa(&mut w, attacker, ether(100), 1);
    let key = word_from_be(&keccak256(b"launchpad/key"));
    let withdraw = func(
        "withdraw(bytes32)",
        vec![
            S::Require(eq(hash1(arg(0)), sload(c(0u64)))),
            S::Call(send(E::Caller, balance(E::SelfAddr)), None),
        ],
    );
    w.deploy(vault, contract(&[withdraw], &[S::Stop]));
    w.set_storage(vault, Word::zero(), word_from_be(&keccak256(&word_to_be(key))));
    w.set_balance(vault, ether(200));

    // calls = [n] record*, record = [target][value][len][data padded]
    let run = vec![
        S::Let(0, c(68u64)),
        S::Let(1, cdload(local(0))),
        S::Let(0, add(local(0), c(32u64))),
        S::While(
            gt(local(1), c(0u64)),
            vec![
                S::Let(2, cdload(local(0))),
                S::Let(3, cdload(add(local(0), c(32u64)))),
                S::Let(4, cdload(add(local(0), c(64u64)))),
                S::CdCopy(c(crate::minivm::lang::CALLBUF), add(local(0), c(96u64)), local(4)),
                S::Call(raw_call(local(2), local(3), local(4)), None),
                S::Let(
                    0,
                    add(local(0), add(c(96u64), mul(div(add(local(4), c(31u64)), c(32u64)), c(32u64)))),
                ),
                S::Let(1, sub(local(1), c(1u64))),
            ],
        ),
        S::Call(send(E::Origin, balance(E::SelfAddr)), None),
    ];
    let runtime = contract(&[func("run(bytes)", run)], &[S::Stop]);
    let exploit = Address::create(attacker, 1);
    let calls = encode_program(&[Record {
        target: Some(vault),
        value: Word::zero(),
        data: encode_words(sel("withdraw(bytes32)"), &[key]),
    }]);
    let trigger = Message::call(attacker, exploit, encode_with_bytes(sel("run(bytes)"), &[], &calls));
    Scenario {
        name: "launchpad".into(),
        description: "arbitrary call-list exploit whose payload arrives only with the trigger".into(),
        world: w,
        registry: Registry::default(),
        operator,
        block_interval: 10,
        end_tick: 70,
        timeline: vec![
            scripted(0, TxRole::AttackerDeploy, tx(Message::create(attacker, deployer(&runtime, &[])), Visibility::Public, "deploy exploit")),
            scripted(50, TxRole::AttackerTrigger, tx(trigger, Visibility::Public, "trigger")),
        ],
        victims: vec![vault],
        exploit: Some(exploit),
        expected: vec![
            min_value("attacker keeps the loot", attacker, ether(299)),
            max_value("operator gains nothing", operator.eoa, ether(100)),
        ],
    }
}

/// The attack runs inside the exploit's constructor against a one-of-a-kind vault.
fn constructor_attack() -> Scenario {
    let (mut w, operator) = base_world();
    let attacker = named("ctor/attacker");
    let vault = named("ctor/vault");
    eoa(&mut w, attacker, ether(100), 1);
    let withdraw_all = func(
        "withdrawAll()",
        vec![S::Call(send(E::Caller, balance(E::SelfAddr)), None)],
    );
    w.deploy(vault, contract(&[withdraw_all], &[S::Stop]));
    w.set_balance(vault, ether(300));

    let runtime = contract(
        &[func(
            "withdraw()",
            vec![
                S::Require(eq(E::Caller, sload(c(0u64)))),
                S::Call(send(sload(c(0u64)), balance(E::SelfAddr)), None),
            ],
        )],
        &[S::Stop],
    );
    let ctor = vec![
        S::Call(call(addr(vault), sel("withdrawAll()"), vec![]), None),
        S::Call(send(E::Origin, balance(E::SelfAddr)), None),
    ];
    let init = deployer_with(&runtime, &[(Word::zero(), attacker.to_word())], &ctor);
    Scenario {
        name: "constructor-attack".into(),
        description: "attack carried out by the exploit's constructor".into(),
        world: w,
        registry: Registry::default(),
        operator,
        block_interval: 10,
        end_tick: 50,
        timeline: vec![scripted(
            30,
            TxRole::AttackerDeploy,
            tx(Message::create(attacker, init), Visibility::Public, "constructor attack"),
        )],
        victims: vec![vault],
        exploit: Some(Address::create(attacker, 1)),
        expected: vec![
            min_value("attacker keeps the loot", attacker, ether(399)),
            max_value("operator gains nothing", operator.eoa, ether(100)),
        ],
    }
}
