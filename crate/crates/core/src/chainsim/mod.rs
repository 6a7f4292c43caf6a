//! A deterministic simulated chain: mempool with public and private
//! transactions, bundles, greedy block building and base-token valuation.

mod bidding;
mod scenario;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contracts::{lp_state, token_balance};
use crate::minivm::{execute_in_place, BranchOverrides, ExecTrace, Message, Outcome, VmConfig, WorldState};
use crate::rewrite::{quote_v2_swap, PoolReserves};
use crate::types::{Address, Word};

pub use bidding::{simulate_bidding, BidEntry, BidLog, BiddingOutcome, BiddingSetup, BotConfig};
pub use scenario::{Expectation, Scenario, ScriptedTx, TxRole};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    Public,
    Private,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimTx {
    pub msg: Message,
    pub gas_price: Word,
    pub visibility: Visibility,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle_id: Option<u64>,
    /// Free-form tag for reports and logs.
    #[serde(default)]
    pub label: String,
}

impl SimTx {
    pub fn public(msg: Message, gas_price: Word) -> SimTx {
        SimTx {
            msg,
            gas_price,
            visibility: Visibility::Public,
            bundle_id: None,
            label: String::new(),
        }
    }

    pub fn private(msg: Message, gas_price: Word) -> SimTx {
        SimTx {
            visibility: Visibility::Private,
            ..SimTx::public(msg, gas_price)
        }
    }

    pub fn labeled(mut self, label: &str) -> SimTx {
        self.label = label.to_string();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SubmitError {
    #[error("sender {0} cannot cover value plus gas")]
    InsufficientBalance(Address),
    #[error("unknown bundle {0}")]
    UnknownBundle(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuilderPolicy {
    /// Bundles are dropped whole if any member fails.
    pub atomic_bundles: bool,
}

impl Default for BuilderPolicy {
    fn default() -> Self {
        BuilderPolicy { atomic_bundles: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncludedTx {
    pub id: u64,
    pub tx: SimTx,
    pub outcome: Outcome,
    pub gas_used: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created: Option<Address>,
    /// World right before this transaction ran.
    #[serde(skip)]
    pub pre_state: Option<Box<WorldState>>,
    #[serde(skip)]
    pub trace: Option<Box<ExecTrace>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub number: u64,
    pub tick: u64,
    pub txs: Vec<IncludedTx>,
}

/// Registered liquidity pools and flashloan providers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    pub lps: Vec<Address>,
    pub providers: Vec<Address>,
}

/// Base-token value of `addr`: native balance plus every held token priced
/// by selling it into the first registered pool that pairs it with the base.
pub fn value_of(world: &WorldState, registry: &Registry, addr: Address) -> Word {
    let mut total = world.balance(&addr);
    let mut seen = Vec::new();
    for lp in &registry.lps {
        let (t0, t1, r0, r1, fee) = lp_state(world, *lp);
        let (token, r_tok, r_base) = match (t0.is_zero(), t1.is_zero()) {
            (false, true) => (t0, r0, r1),
            (true, false) => (t1, r1, r0),
            _ => continue,
        };
        if seen.contains(&token) {
            continue;
        }
        seen.push(token);
        let held = token_balance(world, token, addr);
        if held.is_zero() {
            continue;
        }
        let r = PoolReserves {
            reserve_in: r_tok,
            reserve_out: r_base,
            fee_bps: fee,
        };
        total = total.saturating_add(quote_v2_swap(&r, held).unwrap_or_default());
    }
    total
}

/// What an outside observer can see: public pending transactions and broadcast blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObserverView {
    pub tick: u64,
    pub pending_public: Vec<SimTx>,
    pub head: Option<u64>,
    pub state_root: [u8; 32],
}

#[derive(Debug, Clone)]
struct Pending {
    id: u64,
    tx: SimTx,
}

/// The simulated chain.
#[derive(Debug, Clone)]
pub struct Chain {
    world: WorldState,
    pub registry: Registry,
    pub tick: u64,
    pub cfg: VmConfig,
    pending: Vec<Pending>,
    bundles: BTreeMap<u64, Vec<u64>>,
    blocks: Vec<Block>,
    next_id: u64,
    next_bundle: u64,
}

impl Chain {
    pub fn new(world: WorldState, registry: Registry) -> Chain {
        Chain {
            world,
            registry,
            tick: 0,
            cfg: VmConfig::default(),
            pending: Vec::new(),
            bundles: BTreeMap::new(),
            blocks: Vec::new(),
            next_id: 0,
            next_bundle: 0,
        }
    }

    /// State as of the last broadcast block.
    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut WorldState {
        &mut self.world
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    fn check_funds(&self, tx: &SimTx, reserved: &BTreeMap<Address, Word>) -> Result<(), SubmitError> {
        let from = tx.msg.origin;
        let cost = tx
            .msg
            .value
            .saturating_add(Word::from(tx.msg.gas_limit).saturating_mul(tx.gas_price));
        let need = cost.saturating_add(reserved.get(&from).copied().unwrap_or_default());
        if self.world.balance(&from) < need {
            return Err(SubmitError::InsufficientBalance(from));
        }
        Ok(())
    }

    /// Queues a transaction. Public ones are visible to observers right away.
    pub fn submit(&mut self, tx: SimTx) -> Result<u64, SubmitError> {
        self.check_funds(&tx, &BTreeMap::new())?;
        if let Some(b) = tx.bundle_id {
            if !self.bundles.contains_key(&b) {
                return Err(SubmitError::UnknownBundle(b));
            }
        }
        let id = self.next_id;
        self.next_id += 1;
        if let Some(b) = tx.bundle_id {
            self.bundles.get_mut(&b).expect("checked").push(id);
        }
        self.pending.push(Pending { id, tx });
        Ok(id)
    }

    /// Queues an ordered bundle; all members share `visibility`.
    pub fn submit_bundle(&mut self, txs: Vec<SimTx>) -> Result<Vec<u64>, SubmitError> {
        let mut reserved = BTreeMap::new();
        for tx in &txs {
            self.check_funds(tx, &reserved)?;
            let e = reserved.entry(tx.msg.origin).or_insert_with(Word::zero);
            *e = e.saturating_add(tx.msg.value);
        }
        let b = self.next_bundle;
        self.next_bundle += 1;
        self.bundles.insert(b, Vec::new());
        txs.into_iter()
            .map(|mut t| {
                t.bundle_id = Some(b);
                self.submit(t)
            })
            .collect()
    }

    pub fn observe(&self) -> ObserverView {
        ObserverView {
            tick: self.tick,
            pending_public: self
                .pending
                .iter()
                .filter(|p| p.tx.visibility == Visibility::Public)
                .map(|p| p.tx.clone())
                .collect(),
            head: self.blocks.last().map(|b| b.number),
            state_root: state_root(&self.world),
        }
    }

    /// Latest broadcast block, as observers see it.
    pub fn latest_block(&self) -> Option<&Block> {
        self.blocks.last()
    }

    /// Runs one transaction on `world` and charges its gas to the origin.
    fn apply(world: &mut WorldState, cfg: &VmConfig, id: u64, tx: &SimTx) -> IncludedTx {
        let pre = world.clone();
        let (outcome, trace, created) = execute_in_place(world, &tx.msg, &BranchOverrides::none(), cfg, None);
        if outcome != Outcome::Success {
            let n = world.nonce(&tx.msg.origin);
            world.account_mut(tx.msg.origin).nonce = n + 1;
        }
        let fee = Word::from(trace.gas_used).saturating_mul(tx.gas_price);
        let bal = world.balance(&tx.msg.origin);
        let paid = fee.min(bal);
        world.set_balance(tx.msg.origin, bal - paid);
        world.burned = world.burned.saturating_add(paid);
        IncludedTx {
            id,
            tx: tx.clone(),
            outcome,
            gas_used: trace.gas_used,
            created,
            pre_state: Some(Box::new(pre)),
            trace: Some(Box::new(trace)),
        }
    }

    /// Orders pending work by gas price (bundles by their members' mean), runs
    /// it, and broadcasts the block. Reverting plain transactions are included;
    /// failing atomic bundles are dropped whole.
    pub fn build_block(&mut self, policy: &BuilderPolicy) -> Block {
        enum Unit {
            Single(Pending),
            Bundle(Vec<Pending>),
        }
        let mut singles = Vec::new();
        let mut grouped: BTreeMap<u64, Vec<Pending>> = BTreeMap::new();
        for p in std::mem::take(&mut self.pending) {
            match p.tx.bundle_id {
                Some(b) if policy.atomic_bundles => grouped.entry(b).or_default().push(p),
                _ => singles.push(p),
            }
        }
        let mut units: Vec<(Word, u64, Unit)> = singles
            .into_iter()
            .map(|p| (p.tx.gas_price, p.id, Unit::Single(p)))
            .collect();
        for (_, members) in grouped {
            let n = Word::from(members.len());
            let sum = members.iter().fold(Word::zero(), |a, p| a.saturating_add(p.tx.gas_price));
            let first = members[0].id;
            units.push((sum / n, first, Unit::Bundle(members)));
        }
        units.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

        let mut txs = Vec::new();
        for (_, _, unit) in units {
            match unit {
                Unit::Single(p) => txs.push(Chain::apply(&mut self.world, &self.cfg, p.id, &p.tx)),
                Unit::Bundle(members) => {
                    let mut scratch = self.world.clone();
                    let mut out = Vec::new();
                    let mut ok = true;
                    for p in &members {
                        let inc = Chain::apply(&mut scratch, &self.cfg, p.id, &p.tx);
                        ok &= inc.outcome == Outcome::Success;
                        out.push(inc);
                    }
                    if ok {
                        self.world = scratch;
                        txs.extend(out);
                    } else {
                        log::info!(target: "chainsim", "dropped bundle of {} txs", members.len());
                    }
                }
            }
        }
        let block = Block {
            number: self.blocks.len() as u64,
            tick: self.tick,
            txs,
        };
        self.bundles.clear();
        self.blocks.push(block.clone());
        block
    }
}

/// Hash of the full world state, for cheap equality checks.
pub fn state_root(world: &WorldState) -> [u8; 32] {
    let json = serde_json::to_vec(world).expect("world serializes");
    crate::types::keccak256(&json)
}
