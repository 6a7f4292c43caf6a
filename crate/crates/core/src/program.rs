//! Programs with holes: the unit that flows through rewriting and fuzzing.

use serde::{Deserialize, Serialize};

use crate::backrun::{Action, Replacer};
use crate::funcx::{ArgType, FunctionDesc};
use crate::minivm::{BranchOverrides, Direction};
use crate::types::{Address, Word};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Hijack,
    Backrun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillSource {
    Default,
    Rule,
    Fuzz,
}

/// Where a hole sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoleSlot {
    /// Calldata argument of the hijacked function.
    Arg(usize),
    /// Argument position inside an action of a backrun program.
    Action { action: usize, arg: usize },
}

/// A formula that fills a hole at execution time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum RuleFill {
    /// Current allowance of `owner` towards `spender` on `token`.
    Approval { token: Address, owner: Address, spender: Address },
    /// Borrow amount planned from the measured need.
    Flashloan { provider: Address, amount: Word },
    /// Loan plus fee.
    Repay { provider: Address },
    /// Constant-product output for the actual input.
    SwapOut { pool: Address },
    /// Whole balance of the input token at that point.
    SwapInAll { token: Address },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hole {
    pub slot: HoleSlot,
    pub ty: ArgType,
    /// Current fill. Rule fills keep the value observed when the rule fired.
    pub filled: Option<Word>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_hex")]
    pub filled_bytes: Option<Vec<u8>>,
    pub fill_source: FillSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<RuleFill>,
}

impl Hole {
    pub fn new(slot: HoleSlot, ty: ArgType, initial: Word) -> Hole {
        Hole {
            slot,
            ty,
            filled: Some(initial),
            filled_bytes: if ty == ArgType::Bytes { Some(Vec::new()) } else { None },
            fill_source: FillSource::Default,
            rule: None,
        }
    }

    /// Open holes still need a value from the fuzzer.
    pub fn is_open(&self) -> bool {
        self.fill_source != FillSource::Rule
    }
}

mod opt_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(b) => s.serialize_some(&format!("0x{}", hex::encode(b))),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        let s: Option<String> = Option::deserialize(d)?;
        s.map(|s| crate::types::parse_hex_bytes(&s).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// Path data of a hijack program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HijackPath {
    /// The JUMPI pc and forced direction of every decision, for patching a clone.
    pub forced: Vec<(u32, Direction)>,
    /// First-occurrence branch signature of the recorded run.
    pub signature: Vec<(u32, Direction)>,
    pub pcs: Vec<u32>,
    pub reverted: bool,
}

/// Action data of a backrun program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackrunBody {
    pub actions: Vec<Action>,
    pub victims: Vec<Address>,
    pub replacer: Replacer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgramBody {
    Hijack(HijackPath),
    Backrun(BackrunBody),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramWithHoles {
    pub target: Address,
    pub function: FunctionDesc,
    pub decisions: BranchOverrides,
    pub holes: Vec<Hole>,
    pub provenance: Provenance,
    pub sender_candidates: Vec<Address>,
    pub body: ProgramBody,
}

impl ProgramWithHoles {
    pub fn open_holes(&self) -> usize {
        self.holes.iter().filter(|h| h.is_open()).count()
    }

    pub fn hijack_path(&self) -> Option<&HijackPath> {
        match &self.body {
            ProgramBody::Hijack(p) => Some(p),
            ProgramBody::Backrun(_) => None,
        }
    }

    pub fn backrun_body(&self) -> Option<&BackrunBody> {
        match &self.body {
            ProgramBody::Backrun(b) => Some(b),
            ProgramBody::Hijack(_) => None,
        }
    }

    /// Current fill of every hole as a word (bytes holes contribute zero).
    pub fn fills(&self) -> Vec<Word> {
        self.holes.iter().map(|h| h.filled.unwrap_or_default()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("program serializes")
    }
}

/// Our own accounts: the signing EOA and the pre-deployed executor contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operator {
    pub eoa: Address,
    pub executor: Address,
}

impl Default for Operator {
    fn default() -> Self {
        Operator {
            eoa: Address::from_low_u64(0x5afe_0001),
            executor: Address::from_low_u64(0x5afe_e0e0),
        }
    }
}
