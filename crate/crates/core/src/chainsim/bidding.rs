//! Gas-price bidding war between copy-frontrunning bots over one opportunity.

use serde::{Deserialize, Serialize};

use crate::chainsim::{value_of, Registry};
use crate::minivm::{execute, BranchOverrides, Message, WorldState};
use crate::types::{Address, Word};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BotConfig {
    pub id: u32,
    /// Delay between seeing a competing bid and answering it.
    pub reaction_ms: u64,
    /// Each answer outbids the current top by this much.
    pub increment_bps: u64,
    /// The bot keeps bidding while gas cost stays below this share of the prize.
    pub breakeven: f64,
}

impl BotConfig {
    /// Six bots calibrated to a long bidding war that burns about 80% of the prize.
    pub fn six_bots() -> Vec<BotConfig> {
        let table = [(1, 2, 440, 0.50), (2, 3, 470, 0.60), (3, 2, 450, 0.66), (4, 4, 480, 0.72), (5, 3, 460, 0.78), (6, 2, 450, 0.84)];
        table
            .iter()
            .map(|&(id, reaction_ms, increment_bps, breakeven)| BotConfig {
                id,
                reaction_ms,
                increment_bps,
                breakeven,
            })
            .collect()
    }
}

/// The prize and the cost model of one contested opportunity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiddingSetup {
    /// Value a winning copy rescues, in base units.
    pub rescuable: f64,
    pub gas_used: u64,
    /// Gas price of the public attack transaction, in gwei.
    pub floor_gwei: f64,
    /// Gwei per base unit.
    pub gwei_per_unit: f64,
    /// The auction closes at the next block.
    pub block_time_ms: u64,
}

impl BiddingSetup {
    /// A prize of 3000 units (1 unit = 0.01 base coin) with a 400k-gas clone and a 10 gwei floor.
    pub fn calibrated() -> BiddingSetup {
        BiddingSetup {
            rescuable: 3000.0,
            gas_used: 400_000,
            floor_gwei: 10.0,
            gwei_per_unit: 1e7,
            block_time_ms: 12_000,
        }
    }

    /// Prize and gas taken from the attack itself: the victim's value and the attack's gas.
    pub fn from_attack(
        world: &WorldState,
        registry: &Registry,
        victim: Address,
        attack: &Message,
        floor_gwei: f64,
    ) -> BiddingSetup {
        let unit = 1e16;
        let r = execute(world, attack, &BranchOverrides::none());
        BiddingSetup {
            rescuable: word_f64(value_of(world, registry, victim)) / unit,
            gas_used: r.trace.gas_used,
            floor_gwei,
            gwei_per_unit: unit / 1e9,
            block_time_ms: 12_000,
        }
    }

    /// Gas cost in base units at `price_gwei`.
    pub fn cost(&self, price_gwei: f64) -> f64 {
        self.gas_used as f64 * price_gwei / self.gwei_per_unit
    }

    /// Share of the prize left after paying for gas at `price_gwei`.
    pub fn rescued_fraction(&self, price_gwei: f64) -> f64 {
        if self.rescuable <= 0.0 {
            return 0.0;
        }
        ((self.rescuable - self.cost(price_gwei)) / self.rescuable).max(0.0)
    }
}

fn word_f64(w: Word) -> f64 {
    w.to_string().parse().unwrap_or(f64::MAX)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidEntry {
    pub time_ms: u64,
    pub bot: u32,
    pub gas_price: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BidLog {
    pub entries: Vec<BidEntry>,
}

impl BidLog {
    /// `time_ms,bot,gas_price` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["time_ms", "bot", "gas_price"]).expect("in-memory write");
        for e in &self.entries {
            w.write_record([e.time_ms.to_string(), e.bot.to_string(), format!("{:.3}", e.gas_price)])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiddingOutcome {
    pub log: BidLog,
    pub winner: Option<u32>,
    pub winning_gas_price: f64,
    pub rescued_fraction: f64,
}

/// Runs the bidding war on a millisecond event loop.
///
/// Every bot sees the public attack at time 0 and answers after its reaction
/// delay. An answer outbids the current top bid by the bot's increment; a bot
/// drops out once the next bid would cost more than its breakeven share.
pub fn simulate_bidding(setup: &BiddingSetup, bots: &[BotConfig]) -> BiddingOutcome {
    if bots.is_empty() {
        return BiddingOutcome {
            log: BidLog::default(),
            winner: None,
            winning_gas_price: setup.floor_gwei,
            rescued_fraction: 0.0,
        };
    }
    let mut log = BidLog::default();
    let mut top: Option<(usize, f64)> = None;
    let mut own = vec![0.0f64; bots.len()];
    let mut out = vec![false; bots.len()];
    let mut next: Vec<Option<u64>> = bots.iter().map(|b| Some(b.reaction_ms)).collect();
    let mut t = 0u64;
    while t <= setup.block_time_ms {
        let mut bid_now = false;
        for (i, b) in bots.iter().enumerate() {
            if next[i] != Some(t) || out[i] {
                continue;
            }
            next[i] = None;
            if top.is_some_and(|(w, _)| w == i) {
                continue;
            }
            let base = top.map(|(_, p)| p).unwrap_or(setup.floor_gwei);
            let price = if top.is_none() {
                base
            } else {
                (base * (1.0 + b.increment_bps as f64 / 1e4)).max(own[i])
            };
            if setup.cost(price) >= b.breakeven * setup.rescuable {
                out[i] = true;
                continue;
            }
            own[i] = price;
            top = Some((i, price));
            log.entries.push(BidEntry {
                time_ms: t,
                bot: b.id,
                gas_price: price,
            });
            bid_now = true;
        }
        if bid_now {
            let leader = top.map(|(w, _)| w);
            for (i, b) in bots.iter().enumerate() {
                if out[i] || Some(i) == leader {
                    continue;
                }
                let at = t + b.reaction_ms.max(1);
                next[i] = Some(next[i].map_or(at, |n| n.min(at)));
            }
        }
        if next.iter().all(|n| n.is_none()) {
            break;
        }
        t += 1;
    }
    let (winner, price) = match top {
        Some((i, p)) => (Some(bots[i].id), p),
        None => (None, setup.floor_gwei),
    };
    BiddingOutcome {
        log,
        winner,
        winning_gas_price: price,
        rescued_fraction: if winner.is_some() { setup.rescued_fraction(price) } else { 0.0 },
    }
}
