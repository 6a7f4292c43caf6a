use std::collections::{HashSet, VecDeque};

use crate::minivm::opcode::decode;
use crate::minivm::{ExecTrace, WorldState};
use crate::types::{word_from_be, Address, Word};

/// Bounded FIFO of interesting constants: code immediates, storage values,
/// comparison operands and call data seen at run time.
#[derive(Debug, Clone, Default)]
pub struct HintPool {
    cap: usize,
    order: VecDeque<Word>,
    seen: HashSet<Word>,
}

impl HintPool {
    pub fn new(cap: usize) -> HintPool {
        HintPool {
            cap: cap.max(1),
            ..HintPool::default()
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Word> + '_ {
        self.order.iter().copied()
    }

    pub fn get(&self, i: usize) -> Option<Word> {
        self.order.get(i).copied()
    }

    pub fn insert(&mut self, w: Word) {
        if w.is_zero() || w == Word::one() || !self.seen.insert(w) {
            return;
        }
        self.order.push_back(w);
        if self.order.len() > self.cap {
            if let Some(old) = self.order.pop_front() {
                self.seen.remove(&old);
            }
        }
    }

    /// PUSH immediates in the code and every stored value of `addr`.
    pub fn harvest_contract(&mut self, world: &WorldState, addr: Address) {
        let Some(acct) = world.account(&addr) else { return };
        for v in acct.storage.values() {
            self.insert(*v);
        }
        if let Ok(instrs) = decode(&acct.code) {
            for i in instrs.iter().filter(|i| !i.imm.is_empty()) {
                self.insert(word_from_be(i.imm));
            }
        }
    }

    pub fn harvest_trace(&mut self, t: &ExecTrace) {
        for c in &t.comparisons {
            self.insert(c.lhs);
            self.insert(c.rhs);
        }
        for c in &t.calls {
            for chunk in c.input.get(4..).unwrap_or_default().chunks(32).take(8) {
                self.insert(word_from_be(chunk));
            }
            if c.depth > 0 && c.output.len() == 32 {
                self.insert(word_from_be(&c.output));
            }
        }
    }
}
