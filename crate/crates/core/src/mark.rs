//! Binary word-presence marks, bit-packed.

use serde::de::{self, SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;

/// A length-W binary vector recording which dictionary words occur in an event.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mark {
    len: usize,
    blocks: Vec<u64>,
}

impl Mark {
    pub fn zeros(len: usize) -> Self {
        Mark {
            len,
            blocks: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut m = Mark::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                m.set(i, true);
            }
        }
        m
    }

    /// Builds a mark of length `len` with the listed positions switched on.
    pub fn from_indices(len: usize, on: impl IntoIterator<Item = usize>) -> Self {
        let mut m = Mark::zeros(len);
        for i in on {
            m.set(i, true);
        }
        m
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "mark index {i} out of range {}", self.len);
        self.blocks[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, on: bool) {
        assert!(i < self.len, "mark index {i} out of range {}", self.len);
        let bit = 1u64 << (i % 64);
        if on {
            self.blocks[i / 64] |= bit;
        } else {
            self.blocks[i / 64] &= !bit;
        }
    }

    /// Number of words switched on.
    pub fn count_ones(&self) -> usize {
        self.blocks.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn is_all_zero(&self) -> bool {
        self.blocks.iter().all(|&b| b == 0)
    }

    /// Number of positions on in both marks. Lengths must agree.
    pub fn count_common(&self, other: &Mark) -> usize {
        debug_assert_eq!(self.len, other.len);
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.get(i))
    }

    pub fn to_bits(&self) -> Vec<u8> {
        (0..self.len).map(|i| u8::from(self.get(i))).collect()
    }

    /// Applies a position permutation: bit `i` moves to `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Mark {
        assert_eq!(perm.len(), self.len);
        Mark::from_indices(self.len, self.ones().map(|i| perm[i]))
    }
}

impl fmt::Debug for Mark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mark[")?;
        for i in 0..self.len {
            write!(f, "{}", u8::from(self.get(i)))?;
        }
        write!(f, "]")
    }
}

impl Serialize for Mark {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.len))?;
        for i in 0..self.len {
            seq.serialize_element(&u8::from(self.get(i)))?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Mark {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct MarkVisitor;

        impl<'de> Visitor<'de> for MarkVisitor {
            type Value = Mark;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an array of 0/1 values")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Mark, A::Error> {
                let mut bits = Vec::with_capacity(seq.size_hint().unwrap_or(0));
                while let Some(v) = seq.next_element::<u8>()? {
                    match v {
                        0 => bits.push(false),
                        1 => bits.push(true),
                        other => {
                            return Err(de::Error::custom(format!(
                                "mark entries must be 0 or 1, got {other}"
                            )))
                        }
                    }
                }
                Ok(Mark::from_bits(&bits))
            }
        }

        deserializer.deserialize_seq(MarkVisitor)
    }
}
