//! Profit-guided fuzzing of the holes left after rewriting.

mod hints;
mod mutate;

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeSet, HashSet};
use std::hash::{Hash, Hasher};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backrun::run_program;
use crate::chainsim::{value_of, Registry};
use crate::funcx::{describe, ArgType, FunctionDesc};
use crate::hijack::realize;
use crate::minivm::{execute_in_place, BranchOverrides, ExecTrace, Message, Outcome, VmConfig, WorldState};
use crate::program::{Operator, ProgramBody, ProgramWithHoles};
use crate::types::{word_to_i128_sat, Address, Word};

pub use hints::HintPool;
pub use mutate::{coerce, mutate, mutate_with, random_value, MutationArm};

/// Profit recorded for a test case that reverts anywhere.
pub const REVERT_PROFIT: i128 = i128::MIN;

/// Coefficients of the energy schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    pub base_scale: f64,
    pub profit_scale: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            base_scale: 32.0,
            profit_scale: 100.0,
        }
    }
}

/// `min(32 e, 100 log2(max(2, p)))`.
pub fn schedule_energy(e_t: f64, p: i128) -> f64 {
    schedule_energy_with(&EnergyParams::default(), e_t, p)
}

pub fn schedule_energy_with(params: &EnergyParams, e_t: f64, p: i128) -> f64 {
    let p = p.max(2) as f64;
    (params.base_scale * e_t).min(params.profit_scale * p.log2())
}

/// A call we add before or after the program, sent from our EOA.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExtraCall {
    pub target: Address,
    pub function: FunctionDesc,
    pub args: Vec<Word>,
    #[serde(default)]
    pub bytes: Vec<Vec<u8>>,
}

impl ExtraCall {
    pub fn message(&self, from: Address) -> Message {
        Message::call(from, self.target, self.function.encode_call(&self.args, &self.bytes))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageDigest {
    /// Hashed `(code address, from pc, to pc)` edges.
    pub edges: BTreeSet<u64>,
    /// Hashed `(address, key)` storage writes.
    pub writes: BTreeSet<u64>,
}

fn h64(v: impl Hash) -> u64 {
    let mut h = DefaultHasher::new();
    v.hash(&mut h);
    h.finish()
}

impl CoverageDigest {
    pub fn from_traces(traces: &[ExecTrace]) -> CoverageDigest {
        let mut d = CoverageDigest::default();
        for t in traces {
            d.edges.extend(t.edges().into_iter().map(h64));
            d.writes.extend(t.storage_writes.iter().map(|w| h64((w.address, w.key))));
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: u64,
    pub parent: Option<u64>,
    pub program_index: usize,
    /// The program with every hole filled.
    pub program: ProgramWithHoles,
    pub prefix: Vec<ExtraCall>,
    pub suffix: Vec<ExtraCall>,
    /// Base energy `e(t)`.
    pub base_energy: f64,
    pub energy: f64,
    pub profit: i128,
    #[serde(skip)]
    pub coverage: CoverageDigest,
}

impl TestCase {
    pub fn seed(program_index: usize, program: ProgramWithHoles) -> TestCase {
        TestCase {
            id: 0,
            parent: None,
            program_index,
            program,
            prefix: Vec::new(),
            suffix: Vec::new(),
            base_energy: 1.0,
            energy: 0.0,
            profit: REVERT_PROFIT,
            coverage: CoverageDigest::default(),
        }
    }

    /// Word and bytes arguments for realizing the program.
    pub fn fills(&self) -> (Vec<Word>, Vec<Vec<u8>>) {
        let words = self.program.fills();
        let bytes = self
            .program
            .holes
            .iter()
            .filter(|h| h.ty == ArgType::Bytes)
            .map(|h| h.filled_bytes.clone().unwrap_or_default())
            .collect();
        (words, bytes)
    }

    fn input_digest(&self) -> u64 {
        let (w, b) = self.fills();
        h64((self.program_index, w, b, &self.prefix, &self.suffix))
    }
}

/// Everything evaluation needs besides the test case.
#[derive(Debug, Clone)]
pub struct EvalContext<'a> {
    pub world: &'a WorldState,
    pub registry: &'a Registry,
    pub operator: Operator,
    /// Gas price charged against profit, in base units per gas.
    pub gas_price: Word,
    pub cfg: VmConfig,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub profit: i128,
    pub traces: Vec<ExecTrace>,
    /// The transactions to submit, in order.
    pub messages: Vec<Message>,
    pub gas_used: u64,
    pub reverted: bool,
}

fn our_value(world: &WorldState, registry: &Registry, op: &Operator) -> Word {
    value_of(world, registry, op.eoa).saturating_add(value_of(world, registry, op.executor))
}

/// Runs prefix, program and suffix atomically on a scratch world and prices the result.
pub fn evaluate(ctx: &EvalContext, tc: &TestCase) -> Evaluation {
    let mut w = ctx.world.clone();
    let eoa = ctx.operator.eoa;
    let mut traces = Vec::new();
    let mut messages = Vec::new();
    let mut ok = true;
    let run = |w: &mut WorldState, m: &Message, traces: &mut Vec<ExecTrace>, messages: &mut Vec<Message>| {
        let (outcome, trace, _) = execute_in_place(w, m, &BranchOverrides::none(), &ctx.cfg, None);
        traces.push(trace);
        messages.push(m.clone());
        outcome == Outcome::Success
    };
    for c in &tc.prefix {
        if !run(&mut w, &c.message(eoa), &mut traces, &mut messages) {
            ok = false;
            break;
        }
    }
    if ok {
        let (words, bytes) = tc.fills();
        match &tc.program.body {
            ProgramBody::Hijack(_) => match realize(&w, &tc.program, &words, &bytes, &ctx.operator) {
                Ok(msgs) => {
                    for m in &msgs {
                        if !run(&mut w, m, &mut traces, &mut messages) {
                            ok = false;
                            break;
                        }
                    }
                }
                Err(_) => ok = false,
            },
            ProgramBody::Backrun(_) => match run_program(&w, &tc.program, &words, &ctx.operator, &ctx.cfg) {
                Ok(r) => {
                    ok = r.result.outcome == Outcome::Success;
                    traces.push(r.result.trace);
                    messages.push(r.msg);
                    if ok {
                        w = r.result.world;
                    }
                }
                Err(_) => ok = false,
            },
        }
    }
    if ok {
        for c in &tc.suffix {
            if !run(&mut w, &c.message(eoa), &mut traces, &mut messages) {
                ok = false;
                break;
            }
        }
    }
    let gas: u64 = traces.iter().map(|t| t.gas_used).sum();
    let profit = if ok {
        let before = word_to_i128_sat(our_value(ctx.world, ctx.registry, &ctx.operator));
        let after = word_to_i128_sat(our_value(&w, ctx.registry, &ctx.operator));
        let fee = word_to_i128_sat(Word::from(gas).saturating_mul(ctx.gas_price));
        after.saturating_sub(before).saturating_sub(fee)
    } else {
        REVERT_PROFIT
    };
    Evaluation {
        profit,
        traces,
        messages,
        gas_used: gas,
        reverted: !ok,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuzzBudget {
    pub max_execs: u64,
    pub max_secs: f64,
    /// Stop after this many executions without progress: a profit gain once a
    /// profitable case exists, any corpus insertion before that.
    pub stall_execs: Option<u64>,
}

impl Default for FuzzBudget {
    fn default() -> Self {
        FuzzBudget {
            max_execs: 20_000,
            max_secs: 60.0,
            stall_execs: Some(2_000),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub budget: FuzzBudget,
    pub workers: usize,
    pub seed: u64,
    pub energy: EnergyParams,
    /// Hint pool capacity.
    pub max_hints: usize,
    /// Initial-corpus seeds per program drawn from harvested constants.
    pub max_hint_seeds: usize,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            budget: FuzzBudget::default(),
            workers: 1,
            seed: 1,
            energy: EnergyParams::default(),
            max_hints: 4096,
            max_hint_seeds: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub best: Option<TestCase>,
    pub executions: u64,
    pub corpus_size: usize,
    /// Cumulative edge count after each corpus insertion.
    pub coverage_history: Vec<usize>,
}

struct Shared {
    corpus: Vec<TestCase>,
    digests: HashSet<u64>,
    edges: HashSet<u64>,
    writes: HashSet<u64>,
    hints: HintPool,
    best: Option<TestCase>,
    best_profit: i128,
    execs: u64,
    last_improvement: u64,
    last_insertion: u64,
    next_id: u64,
    coverage_history: Vec<usize>,
}

impl Shared {
    /// Inserts `tc` if it adds coverage, a storage write key, or profit above the corpus max.
    fn offer(&mut self, mut tc: TestCase, params: &EnergyParams) -> bool {
        let digest = tc.input_digest();
        if self.digests.contains(&digest) {
            return false;
        }
        let new_edge = tc.coverage.edges.iter().any(|e| !self.edges.contains(e));
        let new_write = tc.coverage.writes.iter().any(|w| !self.writes.contains(w));
        let better = tc.profit > self.best_profit;
        if !(new_edge || new_write || better) {
            return false;
        }
        self.digests.insert(digest);
        self.edges.extend(tc.coverage.edges.iter().copied());
        self.writes.extend(tc.coverage.writes.iter().copied());
        tc.id = self.next_id;
        self.next_id += 1;
        tc.base_energy = 1.0;
        tc.energy = schedule_energy_with(params, tc.base_energy, tc.profit);
        if better {
            self.best_profit = tc.profit;
            self.last_improvement = self.execs;
            if tc.profit > 0 {
                self.best = Some(tc.clone());
            }
        }
        self.last_insertion = self.execs;
        self.coverage_history.push(self.edges.len());
        self.corpus.push(tc);
        true
    }
}

/// Contracts whose ABI and constants feed the mutators.
fn involved(world: &WorldState, programs: &[ProgramWithHoles], registry: &Registry) -> Vec<Address> {
    let mut set = BTreeSet::new();
    for p in programs {
        set.insert(p.target);
        match &p.body {
            ProgramBody::Hijack(_) => set.extend(p.sender_candidates.iter().copied()),
            ProgramBody::Backrun(b) => {
                for a in &b.actions {
                    set.extend(crate::backrun::referenced(&a.kind));
                }
            }
        }
    }
    set.extend(registry.providers.iter().copied());
    set.into_iter()
        .filter(|a| world.account(a).is_some_and(|x| x.has_code()))
        .collect()
}

fn interesting_children(
    ctx: &EvalContext,
    shared: &Mutex<Shared>,
    tc: TestCase,
    params: &EnergyParams,
) -> (bool, i128) {
    let ev = evaluate(ctx, &tc);
    let mut tc = tc;
    tc.profit = ev.profit;
    tc.coverage = CoverageDigest::from_traces(&ev.traces);
    let mut s = shared.lock().expect("fuzz state");
    s.execs += 1;
    for t in &ev.traces {
        s.hints.harvest_trace(t);
    }
    let profit = tc.profit;
    (s.offer(tc, params), profit)
}

/// Fills the open holes of `programs` to maximize profit within `budget`.
pub fn run_campaign(ctx: &EvalContext, programs: &[ProgramWithHoles], cfg: &CampaignConfig) -> CampaignResult {
    let start = Instant::now();
    let mut hints = HintPool::new(cfg.max_hints);
    let abi: Vec<(Address, FunctionDesc)> = {
        let inv = involved(ctx.world, programs, ctx.registry);
        for a in &inv {
            hints.harvest_contract(ctx.world, *a);
        }
        inv.iter()
            .flat_map(|a| describe(ctx.world, *a).into_iter().map(move |f| (*a, f)))
            .filter(|(_, f)| !f.is_fallback)
            .collect()
    };
    let shared = Mutex::new(Shared {
        corpus: Vec::new(),
        digests: HashSet::new(),
        edges: HashSet::new(),
        writes: HashSet::new(),
        hints,
        best: None,
        best_profit: REVERT_PROFIT,
        execs: 0,
        last_improvement: 0,
        last_insertion: 0,
        next_id: 0,
        coverage_history: Vec::new(),
    });
    let out_of_budget = |s: &Shared| {
        s.execs >= cfg.budget.max_execs
            || start.elapsed() >= Duration::from_secs_f64(cfg.budget.max_secs)
            || cfg
                .budget
                .stall_execs
                .is_some_and(|n| {
                    let since = if s.best.is_some() { s.last_improvement } else { s.last_insertion };
                    s.execs - since >= n
                })
    };

    // Initial corpus: current fills, then harvested constants in each open hole.
    let seed_hints: Vec<Word> = shared.lock().expect("fuzz state").hints.iter().take(cfg.max_hint_seeds).collect();
    'seeding: for (pi, p) in programs.iter().enumerate() {
        let base = TestCase::seed(pi, p.clone());
        interesting_children(ctx, &shared, base.clone(), &cfg.energy);
        for (hi, h) in p.holes.iter().enumerate() {
            if !h.is_open() || h.ty == ArgType::Bytes {
                continue;
            }
            for v in &seed_hints {
                if out_of_budget(&shared.lock().expect("fuzz state")) {
                    break 'seeding;
                }
                let Some(v) = mutate::coerce(h.ty, *v) else { continue };
                let mut tc = base.clone();
                tc.program.holes[hi].filled = Some(v);
                tc.program.holes[hi].fill_source = crate::program::FillSource::Fuzz;
                interesting_children(ctx, &shared, tc, &cfg.energy);
            }
        }
    }

    let workers = cfg.workers.max(1);
    std::thread::scope(|scope| {
        for wid in 0..workers {
            let shared = &shared;
            let abi = &abi;
            let out_of_budget = &out_of_budget;
            scope.spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(wid as u64 * 0x9e37_79b9));
                let mut last_stats = Instant::now();
                loop {
                    let (parent, hints) = {
                        let s = shared.lock().expect("fuzz state");
                        if out_of_budget(&s) || s.corpus.is_empty() {
                            break;
                        }
                        let weights: Vec<f64> = s.corpus.iter().map(|t| t.energy.max(1e-3)).collect();
                        let idx = WeightedIndex::new(&weights).map(|d| d.sample(&mut rng)).unwrap_or(0);
                        (s.corpus[idx].clone(), s.hints.clone())
                    };
                    let children = parent.energy.ceil().max(1.0) as usize;
                    let mut productive = false;
                    for _ in 0..children {
                        if out_of_budget(&shared.lock().expect("fuzz state")) {
                            break;
                        }
                        let mut child = mutate(&parent, &hints, abi, &mut rng);
                        child.parent = Some(parent.id);
                        let (inserted, _) = interesting_children(ctx, shared, child, &cfg.energy);
                        productive |= inserted;
                    }
                    let mut s = shared.lock().expect("fuzz state");
                    if !productive {
                        if let Some(t) = s.corpus.iter_mut().find(|t| t.id == parent.id) {
                            t.base_energy /= 2.0;
                            t.energy = schedule_energy_with(&cfg.energy, t.base_energy, t.profit);
                        }
                    }
                    if last_stats.elapsed() >= Duration::from_secs(1) {
                        last_stats = Instant::now();
                        log::info!(
                            target: "fuzz",
                            "worker={} executions={} corpus={} best_profit={}",
                            wid,
                            s.execs,
                            s.corpus.len(),
                            s.best.as_ref().map(|b| b.profit).unwrap_or(0)
                        );
                    }
                }
            });
        }
    });
    let s = shared.into_inner().expect("fuzz state");
    CampaignResult {
        best: s.best,
        executions: s.execs,
        corpus_size: s.corpus.len(),
        coverage_history: s.coverage_history,
    }
}
