use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A fixed-length string of at most 64 bits, index 0 first.
///
/// Used both for the joint channel state (0 = vacant, 1 = occupied) and for
/// the sensed segment of a single slot.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitString {
    word: u64,
    len: u8,
}

fn mask(len: usize) -> u64 {
    if len >= 64 {
        u64::MAX
    } else {
        (1u64 << len) - 1
    }
}

impl BitString {
    pub const MAX_LEN: usize = 64;

    /// Builds from the low `len` bits of `word`; higher bits are dropped.
    pub fn from_word(word: u64, len: usize) -> Self {
        assert!(len <= Self::MAX_LEN, "bit string longer than 64");
        BitString {
            word: word & mask(len),
            len: len as u8,
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self::from_word(0, len)
    }

    pub fn ones(len: usize) -> Self {
        Self::from_word(u64::MAX, len)
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        if bits.len() > Self::MAX_LEN {
            return Err(Error::InvalidArgument(format!(
                "{} bits exceed the 64-bit limit",
                bits.len()
            )));
        }
        let mut word = 0u64;
        for (i, &b) in bits.iter().enumerate() {
            match b {
                0 => {}
                1 => word |= 1 << i,
                other => {
                    return Err(Error::InvalidArgument(format!("bit value {other} at {i}")));
                }
            }
        }
        Ok(Self::from_word(word, bits.len()))
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn word(&self) -> u64 {
        self.word
    }

    pub fn get(&self, i: usize) -> u8 {
        debug_assert!(i < self.len());
        ((self.word >> i) & 1) as u8
    }

    pub fn set(&mut self, i: usize, bit: u8) {
        debug_assert!(i < self.len());
        if bit == 0 {
            self.word &= !(1 << i);
        } else {
            self.word |= 1 << i;
        }
    }

    /// Number of zero bits in `[start, start + len)`.
    pub fn count_zeros_in(&self, start: usize, len: usize) -> usize {
        debug_assert!(start + len <= self.len());
        let window = (self.word >> start) & mask(len);
        len - window.count_ones() as usize
    }

    pub fn count_zeros(&self) -> usize {
        self.count_zeros_in(0, self.len())
    }

    pub fn slice(&self, start: usize, len: usize) -> BitString {
        debug_assert!(start + len <= self.len());
        BitString::from_word(self.word >> start, len)
    }

    pub fn iter(&self) -> impl Iterator<Item = u8> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    pub fn to_vec(&self) -> Vec<u8> {
        self.iter().collect()
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b == 0 { "0" } else { "1" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString({self})")
    }
}

impl FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::InvalidArgument(format!(
                    "bad bit character {other:?}"
                ))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::from_bits(&bits)
    }
}
