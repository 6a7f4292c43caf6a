use std::collections::BTreeSet;
use std::sync::OnceLock;

use whitehat_core::chainsim::{value_of, Chain, TxRole};
use whitehat_core::corpus::{self, NAMES};
use whitehat_core::minivm::{Message, Outcome};
use whitehat_core::pipeline::*;
use whitehat_core::types::{ether, Address};

fn defended() -> &'static Vec<ScenarioReport> {
    static RUNS: OnceLock<Vec<ScenarioReport>> = OnceLock::new();
    RUNS.get_or_init(|| {
        NAMES
            .iter()
            .map(|n| run_scenario(&corpus::build(n).unwrap(), &PipelineConfig::default(), true))
            .collect()
    })
}

fn report(name: &str) -> &'static ScenarioReport {
    defended().iter().find(|r| r.scenario == name).unwrap()
}

#[test]
fn every_expectation_holds() {
    for r in defended() {
        for e in &r.expectations {
            assert!(e.holds, "{}: {} ended at {}", r.scenario, e.label, e.value);
        }
    }
}

#[test]
fn honeypot_is_hijacked_before_the_trigger() {
    let r = report("honeypot-gated");
    let rescue = r.reports.iter().find(|x| !x.submitted.is_empty()).unwrap();
    assert_eq!(rescue.strategy, Strategy::Hijack);
    assert!(rescue.profit.unwrap() >= 990 * 10i128.pow(18));
    let trig = r.scripted_outcome(TxRole::AttackerTrigger).next().unwrap();
    let ours = r.blocks.iter().find(|b| b.txs.iter().any(|t| t.tx.label.starts_with("rescue"))).unwrap();
    assert!(ours.tick < trig.tick);
    assert_ne!(trig.outcome, Some(Outcome::Success));
}

#[test]
fn fork_pair_is_backrun_and_the_copycat_gets_nothing() {
    let scn = corpus::build("fork-pair").unwrap();
    let r = report("fork-pair");
    let rescue = r.reports.iter().find(|x| !x.submitted.is_empty()).unwrap();
    assert_eq!(rescue.strategy, Strategy::Backrun);
    assert!(r.final_values[&scn.victims[1]] < ether(1));
    let copy = r.scripted_outcome(TxRole::Copycat).next().unwrap();
    assert_ne!(copy.outcome, Some(Outcome::Success));
    let copier = scn.scripted(TxRole::Copycat).next().unwrap().tx.msg.origin;
    assert!(r.final_values[&copier] <= value_of(&scn.world, &scn.registry, copier));
}

#[test]
fn negative_scenarios_report_their_failure() {
    for name in ["launchpad", "constructor-attack"] {
        let r = report(name);
        assert!(!r.reports.is_empty());
        for rep in &r.reports {
            assert!(rep.submitted.is_empty(), "{name}");
            assert!(rep.profit.is_none());
            assert!(matches!(
                rep.failure,
                Some(FailureClass::Unprofitable | FailureClass::NoSimilarVictims | FailureClass::NoPrograms)
            ));
        }
    }
}

#[test]
fn nothing_is_submitted_without_profit() {
    for r in defended() {
        for rep in &r.reports {
            if !rep.submitted.is_empty() {
                assert!(rep.profit.is_some_and(|p| p > 0), "{}", r.scenario);
                assert!(rep.failure.is_none());
            }
        }
    }
}

#[test]
fn rewrite_never_adds_holes() {
    for r in defended() {
        for rep in &r.reports {
            if let (Some(b), Some(a)) = (rep.holes_before, rep.holes_after) {
                assert!(a <= b, "{}: {b} -> {a}", r.scenario);
            }
        }
    }
}

#[test]
fn rescues_only_take_from_victims() {
    for r in defended() {
        let scn = corpus::build(&r.scenario).unwrap();
        let mut allowed: BTreeSet<Address> = scn.victims.iter().copied().collect();
        allowed.extend([scn.operator.eoa, scn.operator.executor]);
        for b in &r.blocks {
            let ours: Vec<_> = b.txs.iter().filter(|t| t.tx.label.starts_with("rescue")).collect();
            let Some(first) = ours.first() else { continue };
            let pre = first.pre_state.as_deref().unwrap().clone();
            let mut chain = Chain::new(pre.clone(), scn.registry.clone());
            for t in &ours {
                let m: &Message = &t.tx.msg;
                let res = whitehat_core::minivm::execute(chain.world(), m, &Default::default());
                assert_eq!(res.outcome, Outcome::Success);
                allowed.extend(res.trace.created.iter().copied());
                *chain.world_mut() = res.world;
            }
            let post = chain.world();
            let accounts: BTreeSet<Address> = pre.accounts.keys().chain(post.accounts.keys()).copied().collect();
            for a in accounts {
                let (v0, v1) = (value_of(&pre, &scn.registry, a), value_of(post, &scn.registry, a));
                if scn.registry.providers.contains(&a) {
                    assert!(v1 >= v0, "{}: provider {a:?} lost value", r.scenario);
                } else if !allowed.contains(&a) {
                    assert!(v1 >= v0, "{}: bystander {a:?} lost {}", r.scenario, v0 - v1);
                }
            }
        }
    }
}

#[test]
fn runs_are_deterministic() {
    for name in NAMES {
        let scn = corpus::build(name).unwrap();
        let cfg = PipelineConfig::default();
        let again = run_scenario(&scn, &cfg, true);
        assert_eq!(again.to_json(), report(name).to_json(), "{name}");
    }
}

#[test]
fn reports_skip_wall_clock() {
    let json = report("honeypot-gated").to_json();
    assert!(json.contains("\"stage\""));
    assert!(!json.contains("wall"));
}
