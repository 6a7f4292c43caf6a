//! Contract traits, pairwise relations and the similarity index.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::contracts::{allowance_key, sig, LP_TOKEN0, LP_TOKEN1, OWNER_SLOT};
use crate::funcx::extract_funcs;
use crate::minivm::WorldState;
use crate::types::{selector, Address, Word};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KindFlags {
    pub token: bool,
    pub lp: bool,
    pub other: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraitRecord {
    pub address: Address,
    #[serde(with = "hex_hash")]
    pub codehash: [u8; 32],
    pub selectors: BTreeSet<[u8; 4]>,
    pub kind: KindFlags,
}

mod hex_hash {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("0x{}", hex::encode(v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let b = crate::types::parse_hex_bytes(&s).map_err(serde::de::Error::custom)?;
        b.try_into().map_err(|_| serde::de::Error::custom("expected 32 bytes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraitMode {
    #[default]
    Codehash,
    Selectors,
}

impl FromStr for TraitMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "codehash" => Ok(TraitMode::Codehash),
            "selectors" => Ok(TraitMode::Selectors),
            other => Err(format!("unknown trait mode `{other}`")),
        }
    }
}

pub fn compute_traits(world: &WorldState, addr: Address) -> TraitRecord {
    let code = world.code(&addr);
    let codehash = crate::types::keccak256(code);
    let selectors: BTreeSet<[u8; 4]> = extract_funcs(code)
        .into_iter()
        .filter(|f| !f.is_fallback)
        .map(|f| f.selector)
        .collect();
    let has = |s: &str| selectors.contains(&selector(s));
    let token = has(sig::TRANSFER) && has(sig::BALANCE_OF);
    let lp = has(sig::SWAP) && has(sig::GET_RESERVES);
    TraitRecord {
        address: addr,
        codehash,
        kind: KindFlags {
            token,
            lp,
            other: !token && !lp,
        },
        selectors,
    }
}

/// The closed relation catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Relation {
    LpOf,
    Token0Of,
    Token1Of,
    Approval,
    OwnerOf,
}

impl Relation {
    pub const ALL: [Relation; 5] = [
        Relation::LpOf,
        Relation::Token0Of,
        Relation::Token1Of,
        Relation::Approval,
        Relation::OwnerOf,
    ];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

/// A set of relations, stored as a bitmask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationSet(u8);

impl RelationSet {
    pub fn empty() -> RelationSet {
        RelationSet(0)
    }
    pub fn insert(&mut self, r: Relation) {
        self.0 |= r.bit();
    }
    pub fn contains(&self, r: Relation) -> bool {
        self.0 & r.bit() != 0
    }
    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }
    pub fn iter(&self) -> impl Iterator<Item = Relation> + '_ {
        Relation::ALL.into_iter().filter(|r| self.contains(*r))
    }
}

impl Serialize for RelationSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for RelationSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v: Vec<Relation> = Vec::deserialize(d)?;
        let mut s = RelationSet::empty();
        for r in v {
            s.insert(r);
        }
        Ok(s)
    }
}

fn relation_with_tokens<'a>(
    world: &WorldState,
    tokens: impl Iterator<Item = &'a Address>,
    a_is_lp: bool,
    a: Address,
    b: Address,
) -> RelationSet {
    let mut out = RelationSet::empty();
    if b.is_zero() || a == b {
        return out;
    }
    let bw = b.to_word();
    if a_is_lp {
        if world.storage(&a, Word::from(LP_TOKEN0)) == bw {
            out.insert(Relation::LpOf);
            out.insert(Relation::Token0Of);
        }
        if world.storage(&a, Word::from(LP_TOKEN1)) == bw {
            out.insert(Relation::LpOf);
            out.insert(Relation::Token1Of);
        }
    }
    if world.storage(&a, Word::from(OWNER_SLOT)) == bw {
        out.insert(Relation::OwnerOf);
    }
    let key = allowance_key(a, b);
    if tokens.into_iter().any(|t| !world.storage(t, key).is_zero()) {
        out.insert(Relation::Approval);
    }
    out
}

/// `r(a, b)` evaluated against every token-like contract in `world`.
pub fn relation(world: &WorldState, a: Address, b: Address) -> RelationSet {
    let tokens: Vec<Address> = world
        .accounts
        .keys()
        .filter(|t| world.account(t).is_some_and(|x| x.has_code()) && compute_traits(world, **t).kind.token)
        .copied()
        .collect();
    let a_is_lp = world.account(&a).is_some_and(|x| x.has_code()) && compute_traits(world, a).kind.lp;
    relation_with_tokens(world, tokens.iter(), a_is_lp, a, b)
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"WHTRAITS";
const SNAPSHOT_VERSION: u32 = 1;

/// Trait records for every account plus lookup buckets for both modes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TraitIndex {
    pub records: BTreeMap<Address, TraitRecord>,
    by_codehash: HashMap<[u8; 32], BTreeSet<Address>>,
    by_selectors: HashMap<Vec<[u8; 4]>, BTreeSet<Address>>,
    tokens: BTreeSet<Address>,
}

impl TraitIndex {
    pub fn build(world: &WorldState) -> TraitIndex {
        let records = world
            .accounts
            .keys()
            .map(|a| (*a, compute_traits(world, *a)))
            .collect();
        TraitIndex::from_records(records)
    }

    fn from_records(records: BTreeMap<Address, TraitRecord>) -> TraitIndex {
        let mut idx = TraitIndex {
            records,
            ..TraitIndex::default()
        };
        for (a, r) in &idx.records {
            idx.by_codehash.entry(r.codehash).or_default().insert(*a);
            idx.by_selectors
                .entry(r.selectors.iter().copied().collect())
                .or_default()
                .insert(*a);
            if r.kind.token {
                idx.tokens.insert(*a);
            }
        }
        idx
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, a: &Address) -> Option<&TraitRecord> {
        self.records.get(a)
    }

    pub fn is_lp(&self, a: &Address) -> bool {
        self.records.get(a).is_some_and(|r| r.kind.lp)
    }

    pub fn is_token(&self, a: &Address) -> bool {
        self.tokens.contains(a)
    }

    /// `r(a, b)` with the index's token list for the approval relation.
    pub fn relation(&self, world: &WorldState, a: Address, b: Address) -> RelationSet {
        relation_with_tokens(world, self.tokens.iter(), self.is_lp(&a), a, b)
    }

    /// Addresses whose trait under `mode` equals that of `addr`, including `addr`.
    pub fn query_similar(&self, addr: Address, mode: TraitMode) -> BTreeSet<Address> {
        let Some(r) = self.records.get(&addr) else {
            return BTreeSet::from([addr]);
        };
        let bucket = match mode {
            TraitMode::Codehash => self.by_codehash.get(&r.codehash),
            TraitMode::Selectors => {
                let key: Vec<[u8; 4]> = r.selectors.iter().copied().collect();
                self.by_selectors.get(&key)
            }
        };
        bucket.cloned().unwrap_or_else(|| BTreeSet::from([addr]))
    }

    /// Writes the versioned snapshot: header, record count, then length-prefixed records.
    pub fn save(&self, mut out: impl Write) -> io::Result<()> {
        out.write_all(SNAPSHOT_MAGIC)?;
        out.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        out.write_all(&(self.records.len() as u64).to_le_bytes())?;
        for r in self.records.values() {
            let mut rec = Vec::with_capacity(60 + 4 * r.selectors.len());
            rec.extend_from_slice(&r.address.0);
            rec.extend_from_slice(&r.codehash);
            rec.push(r.kind.token as u8 | (r.kind.lp as u8) << 1 | (r.kind.other as u8) << 2);
            rec.extend_from_slice(&(r.selectors.len() as u32).to_le_bytes());
            for s in &r.selectors {
                rec.extend_from_slice(s);
            }
            out.write_all(&(rec.len() as u32).to_le_bytes())?;
            out.write_all(&rec)?;
        }
        Ok(())
    }

    pub fn load(mut input: impl Read) -> io::Result<TraitIndex> {
        let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(bad("not a trait index snapshot"));
        }
        let mut b4 = [0u8; 4];
        input.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != SNAPSHOT_VERSION {
            return Err(bad("unsupported snapshot version"));
        }
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8);
        let mut records = BTreeMap::new();
        for _ in 0..n {
            input.read_exact(&mut b4)?;
            let len = u32::from_le_bytes(b4) as usize;
            let mut rec = vec![0u8; len];
            input.read_exact(&mut rec)?;
            if len < 57 {
                return Err(bad("truncated record"));
            }
            let mut address = [0u8; 20];
            address.copy_from_slice(&rec[..20]);
            let mut codehash = [0u8; 32];
            codehash.copy_from_slice(&rec[20..52]);
            let k = rec[52];
            let count = u32::from_le_bytes(rec[53..57].try_into().unwrap()) as usize;
            if rec.len() != 57 + 4 * count {
                return Err(bad("record length mismatch"));
            }
            let selectors = rec[57..]
                .chunks(4)
                .map(|c| [c[0], c[1], c[2], c[3]])
                .collect();
            let address = Address(address);
            records.insert(
                address,
                TraitRecord {
                    address,
                    codehash,
                    selectors,
                    kind: KindFlags {
                        token: k & 1 != 0,
                        lp: k & 2 != 0,
                        other: k & 4 != 0,
                    },
                },
            );
        }
        Ok(TraitIndex::from_records(records))
    }
}
