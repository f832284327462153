//! Two-write WOM code storing 2 bits in 3 write-once cells.
//!
//! First-generation codewords have weight at most one, second-generation
//! codewords are their complements. Any first-generation codeword can be
//! raised to the second-generation codeword of any different symbol by only
//! setting cells; rewriting the same symbol keeps the first-generation
//! codeword unchanged.

use std::fmt;

use thiserror::Error;

pub const CELLS_PER_SYMBOL: usize = 3;
pub const BITS_PER_SYMBOL: usize = 2;

/// Three cells, leftmost first (`[1, 0, 0]` prints as `100`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Codeword(pub [u8; 3]);

impl Codeword {
    pub fn weight(self) -> u32 {
        self.0.iter().map(|&c| c as u32).sum()
    }

    /// Whether `self` can be programmed over `other` without clearing a cell.
    pub fn covers(self, other: Codeword) -> bool {
        self.0.iter().zip(other.0).all(|(&a, b)| a >= b)
    }
}

impl fmt::Display for Codeword {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.0[0], self.0[1], self.0[2])
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WomError {
    #[error("symbol {0} out of range")]
    BadSymbol(u8),
    #[error("codeword {0} is not a first-generation codeword")]
    NotFirstGeneration(Codeword),
    #[error("codeword {0} is not valid in generation {1}")]
    Undecodable(Codeword, u8),
    #[error("cannot reach {to} from {from} without clearing cells")]
    Unreachable { from: Codeword, to: Codeword },
    #[error("cell image length {0} is not a multiple of 3")]
    BadLength(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WomCode {
    enc1: [Codeword; 4],
    enc2: [Codeword; 4],
}

impl Default for WomCode {
    fn default() -> Self {
        Self::standard()
    }
}

impl WomCode {
    /// `00→000, 01→100, 10→010, 11→001`, second generation complemented.
    pub fn standard() -> Self {
        let enc1 = [Codeword([0, 0, 0]), Codeword([1, 0, 0]), Codeword([0, 1, 0]), Codeword([0, 0, 1])];
        let enc2 = enc1.map(|c| Codeword(c.0.map(|b| 1 - b)));
        WomCode { enc1, enc2 }
    }

    /// Code rate in bits per cell per generation.
    pub fn rate() -> f64 {
        BITS_PER_SYMBOL as f64 / CELLS_PER_SYMBOL as f64
    }

    pub fn encode(&self, symbol: u8, generation: u8) -> Result<Codeword, WomError> {
        let table = if generation == 1 { &self.enc1 } else { &self.enc2 };
        table.get(symbol as usize).copied().ok_or(WomError::BadSymbol(symbol))
    }

    pub fn decode(&self, cw: Codeword, generation: u8) -> Result<u8, WomError> {
        let find = |table: &[Codeword; 4]| table.iter().position(|&c| c == cw).map(|i| i as u8);
        let found = if generation == 1 || cw.weight() <= 1 { find(&self.enc1) } else { find(&self.enc2) };
        found.ok_or(WomError::Undecodable(cw, generation))
    }

    /// Second write of `symbol` over the first-generation codeword `current`.
    pub fn convert(&self, current: Codeword, symbol: u8) -> Result<Codeword, WomError> {
        let old = self.decode(current, 1).map_err(|_| WomError::NotFirstGeneration(current))?;
        if old == symbol {
            return Ok(current);
        }
        let target = self.encode(symbol, 2)?;
        if target.covers(current) {
            Ok(target)
        } else {
            Err(WomError::Unreachable { from: current, to: target })
        }
    }

    /// Exhaustively checks the code's structural properties.
    pub fn validate(&self) -> Result<(), String> {
        for s in 0..4u8 {
            for g in [1u8, 2] {
                let cw = self.encode(s, g).map_err(|e| e.to_string())?;
                if self.decode(cw, g) != Ok(s) {
                    return Err(format!("symbol {s} generation {g} does not decode back"));
                }
            }
            for t in 0..4u8 {
                let c1 = self.encode(s, 1).unwrap();
                let c2 = self.convert(c1, t).map_err(|e| e.to_string())?;
                if self.decode(c2, 2) != Ok(t) {
                    return Err(format!("rewrite {s}->{t} decodes wrongly"));
                }
            }
        }
        Ok(())
    }

    /// First-generation cell image of `bytes` (4 symbols per byte, most
    /// significant bits first).
    pub fn encode_bytes(&self, bytes: &[u8]) -> Vec<u8> {
        let mut cells = Vec::with_capacity(bytes.len() * 4 * CELLS_PER_SYMBOL);
        for s in symbols(bytes) {
            cells.extend_from_slice(&self.enc1[s as usize].0);
        }
        cells
    }

    /// Second-generation image of `bytes` programmed over the
    /// first-generation image `current`.
    pub fn rewrite_bytes(&self, current: &[u8], bytes: &[u8]) -> Result<Vec<u8>, WomError> {
        if current.len() != bytes.len() * 4 * CELLS_PER_SYMBOL {
            return Err(WomError::BadLength(current.len()));
        }
        let mut cells = Vec::with_capacity(current.len());
        for (chunk, s) in current.chunks_exact(CELLS_PER_SYMBOL).zip(symbols(bytes)) {
            let cw = self.convert(Codeword([chunk[0], chunk[1], chunk[2]]), s)?;
            cells.extend_from_slice(&cw.0);
        }
        Ok(cells)
    }

    pub fn decode_bytes(&self, cells: &[u8], generation: u8) -> Result<Vec<u8>, WomError> {
        if !cells.len().is_multiple_of(4 * CELLS_PER_SYMBOL) {
            return Err(WomError::BadLength(cells.len()));
        }
        let mut out = Vec::with_capacity(cells.len() / (4 * CELLS_PER_SYMBOL));
        for byte_cells in cells.chunks_exact(4 * CELLS_PER_SYMBOL) {
            let mut b = 0u8;
            for chunk in byte_cells.chunks_exact(CELLS_PER_SYMBOL) {
                b = (b << 2) | self.decode(Codeword([chunk[0], chunk[1], chunk[2]]), generation)?;
            }
            out.push(b);
        }
        Ok(out)
    }
}

fn symbols(bytes: &[u8]) -> impl Iterator<Item = u8> + '_ {
    bytes.iter().flat_map(|&b| [b >> 6, (b >> 4) & 3, (b >> 2) & 3, b & 3])
}

/// Bytes of data a page of `cells` cells can hold in one generation.
pub fn page_capacity_bytes(cells: usize) -> usize {
    cells / (4 * CELLS_PER_SYMBOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cw(s: &str) -> Codeword {
        let b: Vec<u8> = s.bytes().map(|c| c - b'0').collect();
        Codeword([b[0], b[1], b[2]])
    }

    #[test]
    fn tables() {
        let code = WomCode::standard();
        let g1: Vec<String> = (0..4).map(|s| code.encode(s, 1).unwrap().to_string()).collect();
        let g2: Vec<String> = (0..4).map(|s| code.encode(s, 2).unwrap().to_string()).collect();
        assert_eq!(g1, ["000", "100", "010", "001"]);
        assert_eq!(g2, ["111", "011", "101", "110"]);
        code.validate().unwrap();
        assert!((WomCode::rate() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rewrite_examples() {
        let code = WomCode::standard();
        // 01 then 10: 100 -> 101.
        assert_eq!(code.convert(cw("100"), 0b10).unwrap(), cw("101"));
        // 00 then 11: 000 -> 110.
        assert_eq!(code.convert(cw("000"), 0b11).unwrap(), cw("110"));
        // Same symbol keeps the first-generation codeword.
        assert_eq!(code.convert(cw("010"), 0b10).unwrap(), cw("010"));
        assert_eq!(code.decode(cw("010"), 2).unwrap(), 0b10);
        assert_eq!(code.convert(cw("110"), 0), Err(WomError::NotFirstGeneration(cw("110"))));
        assert_eq!(code.encode(4, 1), Err(WomError::BadSymbol(4)));
    }

    #[test]
    fn every_transition_is_monotone() {
        let code = WomCode::standard();
        for s in 0..4 {
            for t in 0..4 {
                let a = code.encode(s, 1).unwrap();
                let b = code.convert(a, t).unwrap();
                assert!(b.covers(a), "{a} -> {b}");
            }
        }
    }

    proptest! {
        #[test]
        fn byte_roundtrip(first in proptest::collection::vec(any::<u8>(), 1..64), second_seed in any::<u64>()) {
            let code = WomCode::standard();
            let second: Vec<u8> = first.iter().enumerate().map(|(i, b)| b ^ (second_seed >> (i % 8)) as u8).collect();
            let c1 = code.encode_bytes(&first);
            prop_assert_eq!(code.decode_bytes(&c1, 1).unwrap(), first.clone());
            let c2 = code.rewrite_bytes(&c1, &second).unwrap();
            prop_assert!(c2.iter().zip(&c1).all(|(a, b)| a >= b));
            prop_assert_eq!(code.decode_bytes(&c2, 2).unwrap(), second);
        }
    }
}
