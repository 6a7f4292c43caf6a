//! Accounts and world state.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::types::{keccak256, Address, Word};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Account {
    #[serde(with = "crate::types::hex_code", default)]
    pub code: Arc<Vec<u8>>,
    #[serde(default)]
    pub storage: BTreeMap<Word, Word>,
    #[serde(default)]
    pub balance: Word,
    #[serde(default)]
    pub nonce: u64,
}

impl Account {
    pub fn with_code(code: Vec<u8>) -> Account {
        Account {
            code: Arc::new(code),
            ..Account::default()
        }
    }

    pub fn with_balance(balance: Word) -> Account {
        Account {
            balance,
            ..Account::default()
        }
    }

    pub fn has_code(&self) -> bool {
        !self.code.is_empty()
    }

    pub fn codehash(&self) -> [u8; 32] {
        keccak256(&self.code)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BlockContext {
    pub number: u64,
    pub timestamp: u64,
}

/// The full simulated chain state.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WorldState {
    pub accounts: BTreeMap<Address, Account>,
    #[serde(default)]
    pub block: BlockContext,
    /// Base token destroyed by fee payment; kept so supply + burned stays constant.
    #[serde(default)]
    pub burned: Word,
}

impl WorldState {
    pub fn new() -> WorldState {
        WorldState::default()
    }

    pub fn account(&self, addr: &Address) -> Option<&Account> {
        self.accounts.get(addr)
    }

    pub fn account_mut(&mut self, addr: Address) -> &mut Account {
        self.accounts.entry(addr).or_default()
    }

    pub fn exists(&self, addr: &Address) -> bool {
        self.accounts.contains_key(addr)
    }

    pub fn code(&self, addr: &Address) -> &[u8] {
        self.accounts
            .get(addr)
            .map(|a| a.code.as_slice())
            .unwrap_or(&[])
    }

    pub fn code_arc(&self, addr: &Address) -> Arc<Vec<u8>> {
        self.accounts
            .get(addr)
            .map(|a| a.code.clone())
            .unwrap_or_default()
    }

    pub fn balance(&self, addr: &Address) -> Word {
        self.accounts
            .get(addr)
            .map(|a| a.balance)
            .unwrap_or_default()
    }

    pub fn nonce(&self, addr: &Address) -> u64 {
        self.accounts.get(addr).map(|a| a.nonce).unwrap_or(0)
    }

    pub fn storage(&self, addr: &Address, key: Word) -> Word {
        self.accounts
            .get(addr)
            .and_then(|a| a.storage.get(&key).copied())
            .unwrap_or_default()
    }

    pub fn set_storage(&mut self, addr: Address, key: Word, value: Word) {
        let acct = self.account_mut(addr);
        if value.is_zero() {
            acct.storage.remove(&key);
        } else {
            acct.storage.insert(key, value);
        }
    }

    pub fn set_balance(&mut self, addr: Address, value: Word) {
        self.account_mut(addr).balance = value;
    }

    pub fn deploy(&mut self, addr: Address, code: Vec<u8>) {
        self.account_mut(addr).code = Arc::new(code);
    }

    /// Sum of all balances plus burned fees; constant across any execution.
    pub fn total_supply(&self) -> Word {
        self.accounts
            .values()
            .fold(self.burned, |acc, a| acc.saturating_add(a.balance))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unset_storage_reads_zero() {
        let mut w = WorldState::new();
        let a = Address::from_low_u64(1);
        assert_eq!(w.storage(&a, Word::from(5)), Word::zero());
        w.set_storage(a, Word::from(5), Word::from(9));
        assert_eq!(w.storage(&a, Word::from(5)), Word::from(9));
        w.set_storage(a, Word::from(5), Word::zero());
        assert!(w.account(&a).unwrap().storage.is_empty());
    }

    #[test]
    fn world_json_round_trip() {
        let mut w = WorldState::new();
        let a = Address::from_low_u64(7);
        w.deploy(a, vec![0x60, 0x01]);
        w.set_storage(a, Word::from(1), Word::from(2));
        w.set_balance(a, Word::from(100));
        let s = serde_json::to_string(&w).unwrap();
        let back: WorldState = serde_json::from_str(&s).unwrap();
        assert_eq!(back, w);
    }
}
