use serde::Serialize;
use wasm_bindgen::prelude::*;
use whitehat_core::chainsim::{simulate_bidding, BidEntry, BiddingSetup, BotConfig};
use whitehat_core::fuzz::schedule_energy;
use whitehat_core::rewrite::{quote_v2_swap, PoolReserves};
use whitehat_core::types::Word;

#[derive(Serialize)]
struct QuotePoint {
    amount_in: String,
    amount_out: String,
    /// Output per unit of input relative to the spot price.
    efficiency: f64,
}

#[derive(Serialize)]
struct War {
    bids: Vec<BidEntry>,
    winner: Option<u32>,
    winning_gas_price: f64,
    rescued_fraction: f64,
}

fn approx(w: Word) -> f64 {
    w.to_string().parse().expect("decimal digits parse as f64")
}

fn word(s: &str, what: &str) -> Result<Word, JsError> {
    Word::from_dec_str(s.trim()).map_err(|_| JsError::new(&format!("{what} must be a non-negative integer")))
}

/// Energy the fuzzer assigns a test case with base energy `e_t` and profit `profit`.
#[wasm_bindgen]
pub fn energy(e_t: f64, profit: &str) -> Result<f64, JsError> {
    let p: i128 = profit.trim().parse().map_err(|_| JsError::new("profit must be an integer"))?;
    Ok(schedule_energy(e_t, p))
}

/// `points` quotes for inputs evenly spaced up to `max_in`, as JSON.
#[wasm_bindgen]
pub fn quote_curve(reserve_in: &str, reserve_out: &str, fee_bps: u32, max_in: &str, points: u32) -> Result<String, JsError> {
    let r = PoolReserves {
        reserve_in: word(reserve_in, "reserve in")?,
        reserve_out: word(reserve_out, "reserve out")?,
        fee_bps: fee_bps.into(),
    };
    if fee_bps >= 10_000 {
        return Err(JsError::new("fee must be below 10000 bps"));
    }
    let max_in = word(max_in, "max input")?;
    let n = points.clamp(1, 500);
    let spot = approx(r.reserve_out) / approx(r.reserve_in);
    let mut curve = Vec::with_capacity(n as usize);
    for i in 1..=n {
        let amount_in = max_in * Word::from(i) / Word::from(n);
        let out = quote_v2_swap(&r, amount_in).map_err(|_| JsError::new("pool is empty"))?;
        let efficiency = if amount_in.is_zero() || !spot.is_normal() {
            0.0
        } else {
            approx(out) / (approx(amount_in) * spot)
        };
        curve.push(QuotePoint {
            amount_in: amount_in.to_string(),
            amount_out: out.to_string(),
            efficiency,
        });
    }
    Ok(serde_json::to_string(&curve).expect("curve serializes"))
}

/// A gas-price war between the first `bots` calibrated bots over `rescuable` units.
#[wasm_bindgen]
pub fn bidding_war(bots: u32, rescuable: f64) -> Result<String, JsError> {
    if !(rescuable.is_finite() && rescuable > 0.0) {
        return Err(JsError::new("rescuable value must be positive"));
    }
    let setup = BiddingSetup {
        rescuable,
        ..BiddingSetup::calibrated()
    };
    let all = BotConfig::six_bots();
    let out = simulate_bidding(&setup, &all[..(bots as usize).min(all.len())]);
    let war = War {
        bids: out.log.entries,
        winner: out.winner,
        winning_gas_price: out.winning_gas_price,
        rescued_fraction: out.rescued_fraction,
    };
    Ok(serde_json::to_string(&war).expect("war serializes"))
}
