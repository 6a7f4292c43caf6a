use rand::prelude::*;

use super::{ExtraCall, HintPool, TestCase};
use crate::funcx::{ArgType, FunctionDesc};
use crate::program::FillSource;
use crate::types::{word_to_be, Address, Word};

/// Most extra calls a test case may carry on each side of the program.
const MAX_EXTRA: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationArm {
    Random,
    Hint,
    BitHavoc,
    Arith,
    Prepend,
    Append,
    Drop,
}

const ARMS: [MutationArm; 7] = [
    MutationArm::Random,
    MutationArm::Hint,
    MutationArm::BitHavoc,
    MutationArm::Arith,
    MutationArm::Prepend,
    MutationArm::Append,
    MutationArm::Drop,
];

fn mask(ty: ArgType) -> Word {
    ty.max_value().unwrap_or(Word::MAX)
}

/// Fits `v` into `ty`, or `None` for bytes.
pub fn coerce(ty: ArgType, v: Word) -> Option<Word> {
    match ty {
        ArgType::Bytes => None,
        ArgType::Bool => Some(if v.is_zero() { Word::zero() } else { Word::one() }),
        _ => Some(v & mask(ty)),
    }
}

fn random_word<R: Rng>(rng: &mut R) -> Word {
    let mut b = [0u8; 32];
    rng.fill(&mut b);
    Word::from_big_endian(&b)
}

/// A uniformly random value of `ty`, biased towards small magnitudes half the time.
pub fn random_value<R: Rng>(ty: ArgType, rng: &mut R) -> Word {
    let w = random_word(rng);
    let w = if rng.gen_bool(0.5) {
        let bits = rng.gen_range(1..=ty.bit_width().max(1));
        if bits >= 256 {
            w
        } else {
            w & ((Word::one() << bits) - 1)
        }
    } else {
        w
    };
    coerce(ty, w).unwrap_or_default()
}

fn hint<R: Rng>(hints: &HintPool, rng: &mut R) -> Option<Word> {
    if hints.is_empty() {
        return None;
    }
    hints.get(rng.gen_range(0..hints.len()))
}

fn mutate_word<R: Rng>(arm: MutationArm, ty: ArgType, v: Word, hints: &HintPool, rng: &mut R) -> Word {
    let out = match arm {
        MutationArm::Hint => hint(hints, rng).unwrap_or_else(|| random_word(rng)),
        MutationArm::BitHavoc => {
            let width = ty.bit_width().max(1);
            let mut w = v;
            for _ in 0..rng.gen_range(1..=4) {
                w ^= Word::one() << rng.gen_range(0..width);
            }
            w
        }
        MutationArm::Arith => {
            let d = Word::from(rng.gen_range(1u64..=256));
            if rng.gen_bool(0.5) {
                v.overflowing_add(d).0
            } else {
                v.overflowing_sub(d).0
            }
        }
        _ => random_value(ty, rng),
    };
    coerce(ty, out).unwrap_or_default()
}

fn mutate_bytes<R: Rng>(mut b: Vec<u8>, hints: &HintPool, rng: &mut R) -> Vec<u8> {
    match rng.gen_range(0..4) {
        0 if !b.is_empty() => {
            let i = rng.gen_range(0..b.len());
            b[i] ^= 1 << rng.gen_range(0..8);
        }
        1 if b.len() >= 32 => {
            let k = b.len() / 32;
            let cut = 32 * rng.gen_range(0..k);
            b.truncate(cut);
        }
        2 if b.len() >= 32 => {
            let w = hint(hints, rng).unwrap_or_else(|| random_word(rng));
            let at = 32 * rng.gen_range(0..b.len() / 32);
            b[at..at + 32].copy_from_slice(&word_to_be(w));
        }
        _ => {
            let w = hint(hints, rng).unwrap_or_else(|| random_word(rng));
            b.extend_from_slice(&word_to_be(w));
        }
    }
    b
}

fn random_call<R: Rng>(abi: &[(Address, FunctionDesc)], hints: &HintPool, rng: &mut R) -> Option<ExtraCall> {
    let (target, f) = abi.choose(rng)?;
    let args = f
        .args
        .iter()
        .map(|ty| {
            if rng.gen_bool(0.5) {
                hint(hints, rng).and_then(|h| coerce(*ty, h)).unwrap_or_default()
            } else {
                random_value(*ty, rng)
            }
        })
        .collect();
    let nbytes = f.args.iter().filter(|t| **t == ArgType::Bytes).count();
    Some(ExtraCall {
        target: *target,
        function: f.clone(),
        args,
        bytes: vec![Vec::new(); nbytes],
    })
}

/// One child of `parent`: a single mutation arm applied to an open hole or to the call lists.
pub fn mutate<R: Rng>(parent: &TestCase, hints: &HintPool, abi: &[(Address, FunctionDesc)], rng: &mut R) -> TestCase {
    let any_open = parent.program.holes.iter().any(|h| h.is_open());
    let arm = if !any_open {
        *ARMS[4..].choose(rng).expect("non-empty")
    } else if rng.gen_bool(0.8) {
        *ARMS[..4].choose(rng).expect("non-empty")
    } else {
        *ARMS.choose(rng).expect("non-empty")
    };
    mutate_with(parent, arm, hints, abi, rng)
}

/// One child of `parent` produced by `arm`. Value arms leave the parent as is
/// when it has no open hole.
pub fn mutate_with<R: Rng>(
    parent: &TestCase,
    arm: MutationArm,
    hints: &HintPool,
    abi: &[(Address, FunctionDesc)],
    rng: &mut R,
) -> TestCase {
    let mut child = parent.clone();
    child.energy = 0.0;
    let open: Vec<usize> = (0..child.program.holes.len())
        .filter(|i| child.program.holes[*i].is_open())
        .collect();
    match arm {
        MutationArm::Prepend | MutationArm::Append => {
            let list = if arm == MutationArm::Prepend { &mut child.prefix } else { &mut child.suffix };
            if list.len() < MAX_EXTRA {
                if let Some(c) = random_call(abi, hints, rng) {
                    list.push(c);
                }
            }
        }
        MutationArm::Drop => {
            let total = child.prefix.len() + child.suffix.len();
            if total > 0 {
                let i = rng.gen_range(0..total);
                if i < child.prefix.len() {
                    child.prefix.remove(i);
                } else {
                    child.suffix.remove(i - child.prefix.len());
                }
            }
        }
        _ => {
            let Some(&i) = open.choose(rng) else { return child };
            let h = &mut child.program.holes[i];
            if h.ty == ArgType::Bytes {
                h.filled_bytes = Some(mutate_bytes(h.filled_bytes.take().unwrap_or_default(), hints, rng));
            } else {
                h.filled = Some(mutate_word(arm, h.ty, h.filled.unwrap_or_default(), hints, rng));
            }
            h.fill_source = FillSource::Fuzz;
        }
    }
    child
}
