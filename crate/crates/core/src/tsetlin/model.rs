//! Binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "PSTM"
//!      4     2  format version (1)
//!      6     2  reserved, zero
//!      8     4  features F
//!     12     4  classes C
//!     16     4  clauses per class
//!     20     4  automaton states N
//!     24     4  threshold T
//!     28     8  specificity s (IEEE-754 bits)
//!     36     4  epochs
//!     40     8  seed
//!     48     *  C x clauses x 2F automaton states, u16 each
//! ```
//!
//! Include masks are not stored; they are rebuilt from the states on load.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::clause::ClauseBank;
use super::machine::{TmParams, TsetlinMachine};

pub const MAGIC: [u8; 4] = *b"PSTM";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 48;

impl TsetlinMachine {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = self.params();
        let features = self.features();
        let body = self.classes() * p.clauses_per_class * 2 * features * 2;
        let mut out = Vec::with_capacity(HEADER_LEN + body);
        out.extend(MAGIC);
        out.extend(FORMAT_VERSION.to_le_bytes());
        out.extend(0u16.to_le_bytes());
        out.extend((features as u32).to_le_bytes());
        out.extend((self.classes() as u32).to_le_bytes());
        out.extend((p.clauses_per_class as u32).to_le_bytes());
        out.extend(u32::from(p.states).to_le_bytes());
        out.extend(p.threshold.to_le_bytes());
        out.extend(p.specificity.to_bits().to_le_bytes());
        out.extend((p.epochs as u32).to_le_bytes());
        out.extend(p.seed.to_le_bytes());
        for c in 0..self.classes() {
            for &s in self.bank(c).all_automata() {
                out.extend(s.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if bytes[..4] != MAGIC {
            return Err(Error::Format("missing PSTM magic".into()));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u16_at(4);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let features = u32_at(8) as usize;
        let classes = u32_at(12) as usize;
        let states = u16::try_from(u32_at(20))
            .map_err(|_| Error::Format("state count does not fit in 16 bits".into()))?;
        let params = TmParams {
            clauses_per_class: u32_at(16) as usize,
            states,
            threshold: u32_at(24),
            specificity: f64::from_bits(u64_at(28)),
            epochs: u32_at(36) as usize,
            seed: u64_at(40),
        };
        let per_class = params.clauses_per_class * 2 * features;
        let expected = HEADER_LEN + classes * per_class * 2;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "expected {expected} bytes for this header, found {}",
                bytes.len()
            )));
        }
        let mut states_iter = bytes[HEADER_LEN..]
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]));
        let banks = (0..classes)
            .map(|_| {
                let automata: Vec<u16> = states_iter.by_ref().take(per_class).collect();
                ClauseBank::from_automata(params.clauses_per_class, features, states, automata)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Format(e.to_string()))?;
        TsetlinMachine::from_banks(params, banks)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// SHA-256 of the serialized model, hex encoded.
    pub fn digest(&self) -> String {
        digest(&self.to_bytes())
    }
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitdata::{BinaryDataset, BitVector};
    use proptest::prelude::*;

    fn trained(seed: u64) -> TsetlinMachine {
        let params = TmParams {
            clauses_per_class: 6,
            threshold: 4,
            specificity: 3.5,
            states: 20,
            epochs: 3,
            seed,
        };
        let points = (0..12u32)
            .map(|i| BitVector::from_bits((0..9).map(|b| (i * 7 + b) % 3 == 0)))
            .collect();
        let labels = (0..12).map(|i| i % 3).collect();
        let data = BinaryDataset::new(points, labels, 3).unwrap();
        let mut tm = TsetlinMachine::new(params, 9, 3).unwrap();
        tm.fit(&data, None).unwrap();
        tm
    }

    #[test]
    fn header_layout() {
        let bytes = trained(1).to_bytes();
        assert_eq!(&bytes[..4], b"PSTM");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(bytes.len(), 48 + 3 * 6 * 18 * 2);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = trained(2).to_bytes();
        assert!(TsetlinMachine::from_bytes(&bytes[..bytes.len() - 2]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(TsetlinMachine::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(TsetlinMachine::from_bytes(&bad).is_err());
        let mut bad = bytes;
        bad[48] = 0;
        bad[49] = 0;
        assert!(matches!(TsetlinMachine::from_bytes(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn file_round_trip() {
        let tm = trained(3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tm");
        tm.save(&path).unwrap();
        let back = TsetlinMachine::load(&path).unwrap();
        assert_eq!(back, tm);
        assert_eq!(back.digest(), tm.digest());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn bytes_round_trip(seed in any::<u64>()) {
            let tm = trained(seed);
            prop_assert_eq!(TsetlinMachine::from_bytes(&tm.to_bytes()).unwrap(), tm);
        }
    }
}
