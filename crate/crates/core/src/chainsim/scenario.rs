//! Scenario files: a world, its registry, and a timeline of scripted transactions.

use serde::{Deserialize, Serialize};

use super::{Registry, SimTx};
use crate::minivm::WorldState;
use crate::program::Operator;
use crate::types::{Address, Word};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxRole {
    /// Deploys the exploit contract.
    AttackerDeploy,
    /// Fires a deployed exploit.
    AttackerTrigger,
    /// Another attacker repeating a known attack on a similar victim.
    Copycat,
    /// Unrelated traffic.
    Decoy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedTx {
    pub tick: u64,
    pub role: TxRole,
    pub tx: SimTx,
    /// Transactions sharing a group at the same tick go in as one bundle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

/// Bounds on an account's base-token value at the end of a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expectation {
    pub label: String,
    pub account: Address,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<Word>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<Word>,
}

impl Expectation {
    pub fn holds(&self, value: Word) -> bool {
        self.min.is_none_or(|m| value >= m) && self.max.is_none_or(|m| value <= m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub world: WorldState,
    pub registry: Registry,
    pub operator: Operator,
    pub block_interval: u64,
    pub end_tick: u64,
    pub timeline: Vec<ScriptedTx>,
    /// Accounts at risk.
    pub victims: Vec<Address>,
    /// The exploit contract the attacker deploys, if the attack goes through one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exploit: Option<Address>,
    pub expected: Vec<Expectation>,
}

impl Scenario {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Scenario> {
        serde_json::from_str(s)
    }

    /// The timeline entries with a given role, in order.
    pub fn scripted(&self, role: TxRole) -> impl Iterator<Item = &ScriptedTx> {
        self.timeline.iter().filter(move |t| t.role == role)
    }
}
