//! Relation-preserving substitution of victim sets.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{map_addresses, replace_bytes, ActionKind, Replacer};
use crate::minivm::WorldState;
use crate::program::{ProgramBody, ProgramWithHoles};
use crate::traits::{RelationSet, TraitIndex, TraitMode};
use crate::types::Address;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacerCaps {
    pub max_replacers: usize,
    /// Keep the all-identity mapping (useful only for back-testing).
    pub include_original: bool,
    pub mode: TraitMode,
}

impl Default for ReplacerCaps {
    fn default() -> Self {
        ReplacerCaps {
            max_replacers: 10_000,
            include_original: false,
            mode: TraitMode::Codehash,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacerSearch {
    pub replacers: Vec<Replacer>,
    pub truncated: bool,
}

/// Extends partial mappings one victim at a time. A candidate for victim `v`
/// is kept only if, against every already-mapped `k -> s`, both `r(v, k) = r(c, s)`
/// and `r(k, v) = r(s, c)` hold, and `c` is not already used.
pub fn find_replacers(
    world: &WorldState,
    victims: &[Address],
    index: &TraitIndex,
    caps: &ReplacerCaps,
) -> ReplacerSearch {
    let mut out = ReplacerSearch::default();
    if victims.is_empty() {
        return out;
    }
    let mut cache: HashMap<(Address, Address), RelationSet> = HashMap::new();
    let mut rel = |a: Address, b: Address| -> RelationSet {
        *cache
            .entry((a, b))
            .or_insert_with(|| index.relation(world, a, b))
    };
    // One more than the cap so that dropping the identity still leaves a full set.
    let limit = caps.max_replacers.saturating_add(1);
    let mut partials: Vec<Vec<(Address, Address)>> = vec![Vec::new()];
    for (i, v) in victims.iter().enumerate() {
        let originals: Vec<(RelationSet, RelationSet)> =
            victims[..i].iter().map(|k| (rel(*v, *k), rel(*k, *v))).collect();
        let candidates = index.query_similar(*v, caps.mode);
        let mut next = Vec::new();
        'outer: for p in &partials {
            for c in &candidates {
                if p.iter().any(|(_, s)| s == c) {
                    continue;
                }
                let fits = p
                    .iter()
                    .zip(&originals)
                    .all(|((_, s), (fwd, back))| rel(*c, *s) == *fwd && rel(*s, *c) == *back);
                if fits {
                    let mut q = p.clone();
                    q.push((*v, *c));
                    next.push(q);
                    if next.len() >= limit {
                        out.truncated = true;
                        break 'outer;
                    }
                }
            }
        }
        partials = next;
        if partials.is_empty() {
            return out;
        }
    }
    out.replacers = partials
        .into_iter()
        .map(|map| Replacer { map })
        .filter(|r| caps.include_original || !r.is_identity())
        .collect();
    if out.replacers.len() > caps.max_replacers {
        out.replacers.truncate(caps.max_replacers);
        out.truncated = true;
    }
    out
}

/// The program with every victim address substituted.
pub fn apply_replacer(program: &ProgramWithHoles, replacer: &Replacer) -> ProgramWithHoles {
    let mut p = program.clone();
    if let ProgramBody::Backrun(body) = &mut p.body {
        let f = |a: Address| replacer.get(&a).unwrap_or(a);
        for a in &mut body.actions {
            map_addresses(&mut a.kind, &f);
            if let ActionKind::Create { initcode, .. } = &mut a.kind {
                for (from, to) in &replacer.map {
                    replace_bytes(initcode, &from.0, &to.0);
                }
            }
        }
        for h in &mut p.holes {
            if let Some(rule) = &mut h.rule {
                let mut tmp = ActionKind::Call {
                    target: Address::ZERO,
                    selector: None,
                    args: vec![],
                    tail: vec![],
                    value: super::ArgValue::Dynamic(rule.clone()),
                };
                map_addresses(&mut tmp, &f);
                if let ActionKind::Call { value: super::ArgValue::Dynamic(r), .. } = tmp {
                    *rule = r;
                }
            }
        }
        body.replacer = replacer.clone();
    }
    p
}
