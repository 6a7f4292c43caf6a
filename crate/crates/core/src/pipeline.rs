//! Orchestration: watch the chain, turn creations into hijack attempts and
//! confirmed attacks into backrun attempts, then rewrite, fuzz and submit.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::backrun::{apply_replacer, extract_holes, find_replacers, reconstruct, redirect_profit, ReplacerCaps};
use crate::chainsim::{value_of, Block, BuilderPolicy, Chain, Registry, Scenario, SimTx, TxRole};
use crate::fuzz::{evaluate, run_campaign, CampaignConfig, EvalContext, EnergyParams, FuzzBudget};
use crate::hijack::{clone_exploit, PathCaps};
use crate::minivm::{Message, Outcome, VmConfig, WorldState};
use crate::program::{Operator, ProgramWithHoles};
use crate::rewrite::rewrite_program;
use crate::traits::TraitIndex;
use crate::types::{gwei, Address, Word};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub operator: Operator,
    pub workers: usize,
    pub budget: FuzzBudget,
    pub path_caps: PathCaps,
    pub replacer_caps: ReplacerCaps,
    pub builder: BuilderPolicy,
    pub seed: u64,
    /// Gas price of our submissions; also charged against profit while fuzzing.
    pub gas_price: Word,
    /// Gas limit put on each submitted transaction.
    pub gas_limit: u64,
    /// A transaction that cuts some account's value by more than this is treated as an attack.
    pub value_drop_threshold_bps: u64,
    /// Analyze only creations whose origin is not in `known_senders`.
    pub hijack_unknown_only: bool,
    pub known_senders: Vec<Address>,
    pub energy: EnergyParams,
    pub max_hint_seeds: usize,
    /// Step cap per fuzz execution; runaway loops on mutated inputs end here.
    pub fuzz_step_budget: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let operator = Operator::default();
        PipelineConfig {
            operator,
            workers: 1,
            budget: FuzzBudget {
                max_execs: 4_000,
                max_secs: 60.0,
                stall_execs: Some(1_000),
            },
            path_caps: PathCaps {
                sender: operator.eoa,
                ..PathCaps::default()
            },
            replacer_caps: ReplacerCaps::default(),
            builder: BuilderPolicy::default(),
            seed: 1,
            gas_price: gwei(20),
            gas_limit: 10_000_000,
            value_drop_threshold_bps: 500,
            hijack_unknown_only: false,
            known_senders: Vec::new(),
            energy: EnergyParams::default(),
            max_hint_seeds: 256,
            fuzz_step_budget: 50_000,
        }
    }
}

impl PipelineConfig {
    pub fn campaign(&self) -> CampaignConfig {
        CampaignConfig {
            budget: self.budget,
            workers: self.workers.max(1),
            seed: self.seed,
            energy: self.energy,
            max_hint_seeds: self.max_hint_seeds,
            ..CampaignConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    ContractCreated { address: Address, tx_id: u64 },
    AttackConfirmed { tx: Message, pre_state: Box<WorldState>, tx_id: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Hijack,
    Backrun,
}

/// Why an opportunity produced no submission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureClass {
    /// Cloning yielded no program (no callable function, or no attack actions).
    NoPrograms,
    /// The transaction could not be rebuilt as an attack.
    NotAnAttack,
    /// No similar, relation-preserving victims exist.
    NoSimilarVictims,
    /// Fuzzing found no input with positive profit.
    Unprofitable,
    /// The winning input stopped being profitable on re-execution.
    VerificationFailed,
    /// The chain refused the bundle.
    SubmitRejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: String,
    /// Units of work: programs, rewritten holes, executions or transactions.
    pub count: u64,
    #[serde(skip)]
    pub wall: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmittedTx {
    pub id: u64,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Address>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescueReport {
    pub opportunity: u64,
    pub strategy: Strategy,
    /// The suspect contract, or the attack's origin.
    pub subject: Address,
    pub tick: u64,
    pub programs: usize,
    /// Minimum open holes over all programs.
    pub holes_before: Option<usize>,
    pub holes_after: Option<usize>,
    /// Net base-token profit of the submitted bundle, after gas.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profit: Option<i128>,
    pub submitted: Vec<SubmittedTx>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureClass>,
    pub stages: Vec<StageStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best: Option<ProgramWithHoles>,
}

impl RescueReport {
    fn new(opportunity: u64, strategy: Strategy, subject: Address, tick: u64) -> RescueReport {
        RescueReport {
            opportunity,
            strategy,
            subject,
            tick,
            programs: 0,
            holes_before: None,
            holes_after: None,
            profit: None,
            submitted: Vec::new(),
            failure: None,
            stages: Vec::new(),
            best: None,
        }
    }

    fn stage(&mut self, stage: &str, count: u64, started: Instant) {
        self.stages.push(StageStats {
            stage: stage.to_string(),
            count,
            wall: started.elapsed(),
        });
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Minimum open holes, ignoring fallback programs when real functions exist.
fn min_holes(programs: &[ProgramWithHoles]) -> Option<usize> {
    let named: Vec<&ProgramWithHoles> = programs.iter().filter(|p| !p.function.is_fallback).collect();
    if named.is_empty() {
        programs.iter().map(|p| p.open_holes()).min()
    } else {
        named.iter().map(|p| p.open_holes()).min()
    }
}

/// Programs for a creation: forced-path clones, rewritten.
fn hijack_programs(world: &WorldState, address: Address, cfg: &PipelineConfig, report: &mut RescueReport) -> Vec<ProgramWithHoles> {
    let t = Instant::now();
    let cloned = clone_exploit(world, address, &cfg.path_caps);
    report.programs = cloned.programs.len();
    report.holes_before = min_holes(&cloned.programs);
    report.stage("clone", cloned.programs.len() as u64, t);
    cloned.programs
}

/// Programs for a confirmed attack: rebuilt actions, redirected to us, moved onto similar victims.
fn backrun_programs(
    world: &WorldState,
    tx: &Message,
    pre_state: &WorldState,
    cfg: &PipelineConfig,
    report: &mut RescueReport,
) -> Result<Vec<ProgramWithHoles>, FailureClass> {
    let t = Instant::now();
    let trace = reconstruct(pre_state, tx).map_err(|_| FailureClass::NotAnAttack)?;
    if trace.actions.is_empty() {
        return Err(FailureClass::NoPrograms);
    }
    let program = extract_holes(&redirect_profit(&trace, cfg.operator.executor));
    report.holes_before = Some(program.open_holes());
    report.stage("reconstruct", trace.actions.len() as u64, t);

    let t = Instant::now();
    let index = TraitIndex::build(world);
    let victims = program.backrun_body().map(|b| b.victims.clone()).unwrap_or_default();
    let search = find_replacers(world, &victims, &index, &cfg.replacer_caps);
    report.stage("replacers", search.replacers.len() as u64, t);
    if search.replacers.is_empty() {
        return Err(FailureClass::NoSimilarVictims);
    }
    let programs: Vec<ProgramWithHoles> = search.replacers.iter().map(|r| apply_replacer(&program, r)).collect();
    report.programs = programs.len();
    Ok(programs)
}

/// Runs one opportunity end to end and submits a profitable bundle to `chain`.
pub fn run_pipeline(chain: &mut Chain, event: &Event, opportunity: u64, cfg: &PipelineConfig) -> RescueReport {
    let world = chain.world().clone();
    let (strategy, subject) = match event {
        Event::ContractCreated { address, .. } => (Strategy::Hijack, *address),
        Event::AttackConfirmed { tx, .. } => (Strategy::Backrun, tx.origin),
    };
    let mut report = RescueReport::new(opportunity, strategy, subject, chain.tick);
    let programs = match event {
        Event::ContractCreated { address, .. } => hijack_programs(&world, *address, cfg, &mut report),
        Event::AttackConfirmed { tx, pre_state, .. } => match backrun_programs(&world, tx, pre_state, cfg, &mut report) {
            Ok(p) => p,
            Err(f) => {
                report.failure = Some(f);
                return report;
            }
        },
    };
    if programs.is_empty() {
        report.failure = Some(FailureClass::NoPrograms);
        return report;
    }

    let t = Instant::now();
    let rewritten: Vec<ProgramWithHoles> = programs.iter().map(|p| rewrite_program(p, &world)).collect();
    let before: usize = programs.iter().map(|p| p.open_holes()).sum();
    let after: usize = rewritten.iter().map(|p| p.open_holes()).sum();
    report.holes_after = min_holes(&rewritten);
    report.stage("rewrite", (before - after) as u64, t);

    let t = Instant::now();
    let ctx = EvalContext {
        world: &world,
        registry: &chain.registry,
        operator: cfg.operator,
        gas_price: cfg.gas_price,
        cfg: VmConfig {
            step_budget: cfg.fuzz_step_budget,
            ..VmConfig::default()
        },
    };
    let result = run_campaign(&ctx, &rewritten, &cfg.campaign());
    report.stage("fuzz", result.executions, t);
    let Some(best) = result.best else {
        report.failure = Some(FailureClass::Unprofitable);
        return report;
    };

    let t = Instant::now();
    let ev = evaluate(&ctx, &best);
    if ev.reverted || ev.profit <= 0 {
        report.failure = Some(FailureClass::VerificationFailed);
        return report;
    }
    let txs: Vec<SimTx> = ev
        .messages
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut m = m.clone();
            m.gas_limit = cfg.gas_limit;
            SimTx::private(m, cfg.gas_price).labeled(&format!("rescue {opportunity}.{i}"))
        })
        .collect();
    let targets: Vec<Option<Address>> = txs.iter().map(|t| t.msg.target).collect();
    match chain.submit_bundle(txs) {
        Ok(ids) => {
            report.submitted = ids
                .iter()
                .zip(targets)
                .enumerate()
                .map(|(i, (id, target))| SubmittedTx {
                    id: *id,
                    label: format!("rescue {opportunity}.{i}"),
                    target,
                })
                .collect();
            report.profit = Some(ev.profit);
            report.best = Some(best.program);
        }
        Err(_) => report.failure = Some(FailureClass::SubmitRejected),
    }
    report.stage("submit", report.submitted.len() as u64, t);
    report
}

/// Accounts whose value fell by more than `threshold_bps` between two states.
pub fn value_drops(pre: &WorldState, post: &WorldState, registry: &Registry, threshold_bps: u64) -> Vec<Address> {
    pre.accounts
        .keys()
        .filter_map(|a| {
            let before = value_of(pre, registry, *a);
            let after = value_of(post, registry, *a);
            if before.is_zero() || after >= before {
                return None;
            }
            let drop = (before - after).full_mul(Word::from(10_000u64));
            (drop > before.full_mul(Word::from(threshold_bps))).then_some(*a)
        })
        .collect()
}

/// Opportunities raised by one broadcast block, in inclusion order.
pub fn detect(block: &Block, end_state: &WorldState, registry: &Registry, cfg: &PipelineConfig) -> Vec<Event> {
    let ours = [cfg.operator.eoa, cfg.operator.executor];
    let mut events = Vec::new();
    for (i, inc) in block.txs.iter().enumerate() {
        let origin = inc.tx.msg.origin;
        if ours.contains(&origin) || inc.outcome != Outcome::Success {
            continue;
        }
        let skip_creations = cfg.hijack_unknown_only && cfg.known_senders.contains(&origin);
        if !skip_creations {
            if let Some(trace) = &inc.trace {
                for c in &trace.created {
                    events.push(Event::ContractCreated {
                        address: *c,
                        tx_id: inc.id,
                    });
                }
            }
        }
        let (Some(pre), post) = (
            &inc.pre_state,
            block.txs.get(i + 1).and_then(|n| n.pre_state.as_deref()).unwrap_or(end_state),
        ) else {
            continue;
        };
        let drops = value_drops(pre, post, registry, cfg.value_drop_threshold_bps);
        if drops.iter().any(|a| *a != origin) {
            events.push(Event::AttackConfirmed {
                tx: inc.tx.msg.clone(),
                pre_state: pre.clone(),
                tx_id: inc.id,
            });
        }
    }
    events
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedOutcome {
    pub tick: u64,
    pub role: TxRole,
    pub label: String,
    /// `None` if the transaction never made it into a block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectationResult {
    pub label: String,
    pub account: Address,
    pub value: Word,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub seed: u64,
    pub defended: bool,
    pub reports: Vec<RescueReport>,
    pub scripted: Vec<ScriptedOutcome>,
    pub expectations: Vec<ExpectationResult>,
    /// Base-token value per account at the end of the run.
    pub final_values: BTreeMap<Address, Word>,
    #[serde(skip)]
    pub blocks: Vec<Block>,
    #[serde(skip)]
    pub final_world: WorldState,
}

impl ScenarioReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn scripted_outcome(&self, role: TxRole) -> impl Iterator<Item = &ScriptedOutcome> {
        self.scripted.iter().filter(move |s| s.role == role)
    }
}

/// Submits the scripted transactions due at `tick` and builds a block if one is due.
fn play_tick(
    chain: &mut Chain,
    scn: &Scenario,
    tick: u64,
    policy: &BuilderPolicy,
    ids: &mut Vec<(usize, Option<u64>)>,
) -> Option<Block> {
    chain.tick = tick;
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in scn.timeline.iter().enumerate().filter(|(_, s)| s.tick == tick) {
        match &s.group {
            Some(g) => groups.entry(g.clone()).or_default().push(i),
            None => ids.push((i, chain.submit(s.tx.clone()).ok())),
        }
    }
    for members in groups.values() {
        let txs = members.iter().map(|i| scn.timeline[*i].tx.clone()).collect();
        match chain.submit_bundle(txs) {
            Ok(got) => ids.extend(members.iter().zip(got).map(|(i, id)| (*i, Some(id)))),
            Err(_) => ids.extend(members.iter().map(|i| (*i, None))),
        }
    }
    (tick % scn.block_interval.max(1) == 0).then(|| chain.build_block(policy))
}

/// The chain after playing the timeline undefended through tick `last`.
pub fn replay_until(scn: &Scenario, last: u64, policy: &BuilderPolicy) -> Chain {
    let mut chain = Chain::new(scn.world.clone(), scn.registry.clone());
    let mut ids = Vec::new();
    for tick in 0..=last.min(scn.end_tick) {
        play_tick(&mut chain, scn, tick, policy, &mut ids);
    }
    chain
}

/// Plays the scenario's timeline on a fresh chain, with or without the pipeline watching.
pub fn run_scenario(scn: &Scenario, cfg: &PipelineConfig, defend: bool) -> ScenarioReport {
    let mut chain = Chain::new(scn.world.clone(), scn.registry.clone());
    let mut reports = Vec::new();
    let mut scripted_ids: Vec<(usize, Option<u64>)> = Vec::new();
    let mut next_opportunity = 0u64;
    for tick in 0..=scn.end_tick {
        let Some(block) = play_tick(&mut chain, scn, tick, &cfg.builder, &mut scripted_ids) else {
            continue;
        };
        if !defend {
            continue;
        }
        let end_state = chain.world().clone();
        for event in detect(&block, &end_state, &chain.registry, cfg) {
            let report = run_pipeline(&mut chain, &event, next_opportunity, cfg);
            log::info!(
                target: "pipeline",
                "opportunity={} strategy={:?} profit={:?} failure={:?}",
                report.opportunity,
                report.strategy,
                report.profit,
                report.failure
            );
            next_opportunity += 1;
            reports.push(report);
        }
    }

    let blocks = chain.blocks().to_vec();
    let mut scripted: Vec<ScriptedOutcome> = scripted_ids
        .iter()
        .map(|(i, id)| {
            let s = &scn.timeline[*i];
            let found = id.and_then(|id| {
                blocks
                    .iter()
                    .find_map(|b| b.txs.iter().find(|t| t.id == id).map(|t| (b.number, t.outcome)))
            });
            ScriptedOutcome {
                tick: s.tick,
                role: s.role,
                label: s.tx.label.clone(),
                outcome: found.map(|f| f.1),
                block: found.map(|f| f.0),
            }
        })
        .collect();
    scripted.sort_by_key(|s| s.tick);
    let world = chain.world().clone();
    let expectations = scn
        .expected
        .iter()
        .map(|e| {
            let value = value_of(&world, &scn.registry, e.account);
            ExpectationResult {
                label: e.label.clone(),
                account: e.account,
                value,
                holds: e.holds(value),
            }
        })
        .collect();
    let final_values = world
        .accounts
        .keys()
        .map(|a| (*a, value_of(&world, &scn.registry, *a)))
        .collect();
    ScenarioReport {
        scenario: scn.name.clone(),
        seed: cfg.seed,
        defended: defend,
        reports,
        scripted,
        expectations,
        final_values,
        blocks,
        final_world: world,
    }
}
