//! Shared primitive types: 256-bit words, 20-byte addresses, hashing helpers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha3::{Digest, Keccak256};

pub use primitive_types::U256 as Word;

/// 2^160 - 1, the mask Solidity applies to address-typed values.
pub fn address_mask() -> Word {
    (Word::one() << 160) - 1
}

/// Keccak-256 digest.
pub fn keccak256(data: &[u8]) -> [u8; 32] {
    let mut h = Keccak256::new();
    h.update(data);
    h.finalize().into()
}

/// First four bytes of `keccak256(signature)`.
pub fn selector(signature: &str) -> [u8; 4] {
    let h = keccak256(signature.as_bytes());
    [h[0], h[1], h[2], h[3]]
}

pub fn word_from_be(bytes: &[u8]) -> Word {
    if bytes.len() >= 32 {
        Word::from_big_endian(&bytes[bytes.len() - 32..])
    } else {
        Word::from_big_endian(bytes)
    }
}

pub fn word_to_be(w: Word) -> [u8; 32] {
    w.to_big_endian()
}

/// Reads a 32-byte word at `offset`, zero-padding past the end of `data`.
pub fn read_word(data: &[u8], offset: usize) -> Word {
    let mut buf = [0u8; 32];
    if offset < data.len() {
        let end = (offset + 32).min(data.len());
        buf[..end - offset].copy_from_slice(&data[offset..end]);
    }
    Word::from_big_endian(&buf)
}

/// Saturating conversion of a word into `u64`.
pub fn word_to_u64_sat(w: Word) -> u64 {
    if w.bits() > 64 {
        u64::MAX
    } else {
        w.low_u64()
    }
}

/// Saturating conversion of a word into `i128`.
pub fn word_to_i128_sat(w: Word) -> i128 {
    if w.bits() > 127 {
        i128::MAX
    } else {
        w.as_u128() as i128
    }
}

pub fn word_hex(w: &Word) -> String {
    format!("{:#066x}", w)
}

pub fn parse_word(s: &str) -> Result<Word, String> {
    let s = s.trim();
    if let Some(h) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Word::from_str_radix(h, 16).map_err(|e| format!("bad hex word {s:?}: {e}"))
    } else {
        Word::from_dec_str(s).map_err(|e| format!("bad decimal word {s:?}: {e:?}"))
    }
}

/// Parses lowercase (or mixed-case) hex with an optional `0x` prefix.
pub fn parse_hex_bytes(s: &str) -> Result<Vec<u8>, hex::FromHexError> {
    let s = s.trim();
    let s = s.strip_prefix("0x").unwrap_or(s);
    hex::decode(s)
}

/// A 20-byte account identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address(pub [u8; 20]);

impl Address {
    pub const ZERO: Address = Address([0u8; 20]);

    /// Builds a readable test/scenario address from a small integer tag.
    pub const fn from_low_u64(v: u64) -> Address {
        let b = v.to_be_bytes();
        let mut out = [0u8; 20];
        let mut i = 0;
        while i < 8 {
            out[12 + i] = b[i];
            i += 1;
        }
        Address(out)
    }

    pub fn from_word(w: Word) -> Address {
        let b = w.to_big_endian();
        let mut out = [0u8; 20];
        out.copy_from_slice(&b[12..]);
        Address(out)
    }

    pub fn to_word(self) -> Word {
        Word::from_big_endian(&self.0)
    }

    /// True when `w` has its top 12 bytes clear, i.e. could hold an address.
    pub fn fits(w: Word) -> bool {
        w.bits() <= 160
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0u8; 20]
    }

    /// Address of a contract created by `sender` at `nonce` (RLP-encoded pair, keccak, low 20 bytes).
    pub fn create(sender: Address, nonce: u64) -> Address {
        let mut rlp_nonce = Vec::new();
        if nonce == 0 {
            rlp_nonce.push(0x80);
        } else if nonce < 0x80 {
            rlp_nonce.push(nonce as u8);
        } else {
            let be = nonce.to_be_bytes();
            let skip = be.iter().take_while(|b| **b == 0).count();
            rlp_nonce.push(0x80 + (8 - skip) as u8);
            rlp_nonce.extend_from_slice(&be[skip..]);
        }
        let mut payload = Vec::with_capacity(22 + rlp_nonce.len());
        payload.push(0x94);
        payload.extend_from_slice(&sender.0);
        payload.extend_from_slice(&rlp_nonce);
        let mut enc = vec![0xc0 + payload.len() as u8];
        enc.extend_from_slice(&payload);
        let h = keccak256(&enc);
        let mut out = [0u8; 20];
        out.copy_from_slice(&h[12..]);
        Address(out)
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl FromStr for Address {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = parse_hex_bytes(s).map_err(|e| format!("bad address {s:?}: {e}"))?;
        if bytes.len() != 20 {
            return Err(format!("address {s:?} must be 20 bytes, got {}", bytes.len()));
        }
        let mut out = [0u8; 20];
        out.copy_from_slice(&bytes);
        Ok(Address(out))
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Serde helper: byte vectors as `0x`-prefixed lowercase hex.
pub mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("0x{}", hex::encode(v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        super::parse_hex_bytes(&s).map_err(serde::de::Error::custom)
    }
}

/// Serde helper for `Arc<Vec<u8>>` code blobs.
pub mod hex_code {
    use std::sync::Arc;

    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Arc<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        super::hex_bytes::serialize(v.as_slice(), s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Arc<Vec<u8>>, D::Error> {
        super::hex_bytes::deserialize(d).map(Arc::new)
    }
}

/// Serde helper: `[u8; 4]` selectors as hex.
pub mod hex_selector {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 4], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("0x{}", hex::encode(v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 4], D::Error> {
        let s = String::deserialize(d)?;
        let b = super::parse_hex_bytes(&s).map_err(serde::de::Error::custom)?;
        b.try_into()
            .map_err(|_| serde::de::Error::custom("selector must be 4 bytes"))
    }
}

/// One base token (10^18 wei).
pub fn ether(n: u64) -> Word {
    Word::from(n) * Word::exp10(18)
}

/// One gwei (10^9 wei).
pub fn gwei(n: u64) -> Word {
    Word::from(n) * Word::exp10(9)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selectors_match_known_constants() {
        assert_eq!(selector("transfer(address,uint256)"), [0xa9, 0x05, 0x9c, 0xbb]);
        assert_eq!(selector("balanceOf(address)"), [0x70, 0xa0, 0x82, 0x31]);
        assert_eq!(selector("allowance(address,address)"), [0xdd, 0x62, 0xed, 0x3e]);
    }

    #[test]
    fn create_address_matches_known_vector() {
        // sender 0x6ac7ea33f8831ea9dcc53393aaa88b25a785dbf0, nonce 0
        let sender: Address = "0x6ac7ea33f8831ea9dcc53393aaa88b25a785dbf0".parse().unwrap();
        assert_eq!(
            Address::create(sender, 0).to_string(),
            "0xcd234a471b72ba2f1ccf0a70fcaba648a5eecd8d"
        );
        assert_eq!(
            Address::create(sender, 1).to_string(),
            "0x343c43a37d37dff08ae8c4a11544c718abb4fcf8"
        );
    }

    #[test]
    fn read_word_pads_past_end() {
        let data = [0xffu8; 4];
        let w = read_word(&data, 2);
        assert_eq!(w, Word::from(0xffffu64) << 240);
        assert_eq!(read_word(&data, 10), Word::zero());
    }

    #[test]
    fn address_word_round_trip() {
        let a = Address::from_low_u64(0xdead_beef);
        assert_eq!(Address::from_word(a.to_word()), a);
        assert!(Address::fits(a.to_word()));
    }
}
