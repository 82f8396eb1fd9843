//! Sparsity patterns on the hypercube `{0,1}^L` and group structures.

use std::fmt;

use crate::error::{Error, Result};

const WORD: usize = 64;

/// Binary vector marking active coordinates. Used both for column patterns
/// (length `M`) and for group index sets (length `K`).
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SparsityPattern {
    words: Vec<u64>,
    len: usize,
    count: usize,
}

impl SparsityPattern {
    pub fn zeros(len: usize) -> Self {
        SparsityPattern {
            words: vec![0; len.div_ceil(WORD)],
            len,
            count: 0,
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut p = Self::zeros(len);
        for i in 0..len {
            p.set(i, true);
        }
        p
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut p = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            p.set(i, b);
        }
        p
    }

    /// Pattern of length `len` with the given (0-based) indices active.
    pub fn from_indices(len: usize, indices: &[usize]) -> Result<Self> {
        let mut p = Self::zeros(len);
        for &i in indices {
            if i >= len {
                return Err(Error::Input(format!(
                    "index {i} out of range for pattern of length {len}"
                )));
            }
            p.set(i, true);
        }
        Ok(p)
    }

    /// Bit `i` of `mask` becomes coordinate `i`. Requires `len <= 64`.
    pub fn from_mask(len: usize, mask: u64) -> Self {
        assert!(len <= WORD, "mask patterns are limited to 64 coordinates");
        let mut p = Self::zeros(len);
        let masked = if len == WORD {
            mask
        } else {
            mask & ((1u64 << len) - 1)
        };
        if len > 0 {
            p.words[0] = masked;
        }
        p.count = masked.count_ones() as usize;
        p
    }

    /// Inverse of [`SparsityPattern::from_mask`]; `None` when longer than 64.
    pub fn to_mask(&self) -> Option<u64> {
        match self.words.len() {
            0 => Some(0),
            1 => Some(self.words[0]),
            _ => None,
        }
    }

    /// Parses a string of `0`/`1` characters, coordinate 0 first.
    pub fn parse_bitstring(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Input(format!("invalid pattern character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_bools(&bits))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of active coordinates `|p|`.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len);
        self.words[i / WORD] >> (i % WORD) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len);
        let bit = 1u64 << (i % WORD);
        let w = &mut self.words[i / WORD];
        let was = *w & bit != 0;
        if value && !was {
            *w |= bit;
            self.count += 1;
        } else if !value && was {
            *w &= !bit;
            self.count -= 1;
        }
    }

    pub fn flip(&mut self, i: usize) {
        let v = self.get(i);
        self.set(i, !v);
    }

    pub fn flipped(&self, i: usize) -> Self {
        let mut q = self.clone();
        q.flip(i);
        q
    }

    /// Active coordinates in increasing order.
    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut rest = w;
            std::iter::from_fn(move || {
                if rest == 0 {
                    None
                } else {
                    let b = rest.trailing_zeros() as usize;
                    rest &= rest - 1;
                    Some(wi * WORD + b)
                }
            })
        })
    }

    pub fn active_indices(&self) -> Vec<usize> {
        self.active().collect()
    }

    /// Coordinatewise `self <= other`.
    pub fn is_subset(&self, other: &SparsityPattern) -> bool {
        self.len == other.len
            && self
                .words
                .iter()
                .zip(&other.words)
                .all(|(a, b)| a & !b == 0)
    }

    pub fn union_with(&mut self, other: &SparsityPattern) {
        assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
        self.count = self.words.iter().map(|w| w.count_ones() as usize).sum();
    }

    pub fn hamming(&self, other: &SparsityPattern) -> usize {
        assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    /// The `L` patterns at Hamming distance one, in coordinate order.
    pub fn neighbors(&self) -> impl Iterator<Item = SparsityPattern> + '_ {
        (0..self.len).map(move |i| self.flipped(i))
    }

    pub fn to_bitstring(&self) -> String {
        (0..self.len)
            .map(|i| if self.get(i) { '1' } else { '0' })
            .collect()
    }
}

impl fmt::Debug for SparsityPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SparsityPattern({})", self.to_bitstring())
    }
}

impl fmt::Display for SparsityPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bitstring())
    }
}

/// `K` index groups `B_1..B_K` over the columns `0..M`. Groups may overlap
/// and need not cover every column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupStructure {
    m: usize,
    groups: Vec<Vec<usize>>,
    masks: Vec<SparsityPattern>,
}

impl GroupStructure {
    /// Builds a structure from 0-based column indices.
    pub fn new(m: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Input("group list is empty".into()));
        }
        let mut masks = Vec::with_capacity(groups.len());
        let mut cleaned = Vec::with_capacity(groups.len());
        for (k, g) in groups.into_iter().enumerate() {
            if g.is_empty() {
                return Err(Error::Input(format!("group {} is empty", k + 1)));
            }
            let mask = SparsityPattern::from_indices(m, &g).map_err(|_| {
                Error::Input(format!("group {} has a column outside 1..{m}", k + 1))
            })?;
            cleaned.push(mask.active_indices());
            masks.push(mask);
        }
        Ok(GroupStructure {
            m,
            groups: cleaned,
            masks,
        })
    }

    /// `K` disjoint consecutive groups of `size` columns each (`M = K * size`).
    pub fn contiguous(k: usize, size: usize) -> Result<Self> {
        let groups = (0..k)
            .map(|g| (g * size..(g + 1) * size).collect())
            .collect();
        Self::new(k * size, groups)
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn num_columns(&self) -> usize {
        self.m
    }

    pub fn group(&self, k: usize) -> &[usize] {
        &self.groups[k]
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Union of all groups.
    pub fn covered(&self) -> SparsityPattern {
        let mut p = SparsityPattern::zeros(self.m);
        for mask in &self.masks {
            p.union_with(mask);
        }
        p
    }

    /// Coordinate pattern of the union of the groups selected by `j`.
    pub fn expand(&self, j: &SparsityPattern) -> Result<SparsityPattern> {
        if j.len() != self.num_groups() {
            return Err(Error::Dimension(format!(
                "index set has length {}, expected K = {}",
                j.len(),
                self.num_groups()
            )));
        }
        let mut p = SparsityPattern::zeros(self.m);
        for k in j.active() {
            p.union_with(&self.masks[k]);
        }
        Ok(p)
    }

    /// Parses one group per non-empty line, whitespace-separated 1-based
    /// column indices. Lines starting with `#` are ignored.
    pub fn parse(text: &str, m: usize) -> Result<Self> {
        let mut groups = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut g = Vec::new();
            for tok in line.split_whitespace() {
                let idx: usize = tok.parse().map_err(|_| {
                    Error::Input(format!("groups line {}: bad index {tok:?}", lineno + 1))
                })?;
                if idx == 0 || idx > m {
                    return Err(Error::Input(format!(
                        "groups line {}: index {idx} outside 1..{m}",
                        lineno + 1
                    )));
                }
                g.push(idx - 1);
            }
            groups.push(g);
        }
        Self::new(m, groups)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> SparsityPattern {
        SparsityPattern::parse_bitstring(s).unwrap()
    }

    #[test]
    fn neighbors_of_origin() {
        let n: Vec<_> = p("00").neighbors().collect();
        assert_eq!(n, vec![p("10"), p("01")]);
    }

    #[test]
    fn neighbors_flip_one_bit() {
        let n: Vec<_> = p("101").neighbors().collect();
        assert_eq!(n, vec![p("001"), p("111"), p("100")]);
        for q in &n {
            assert_eq!(q.hamming(&p("101")), 1);
            assert!(q.neighbors().any(|r| r == p("101")));
        }
    }

    #[test]
    fn count_tracks_mutation() {
        let mut q = SparsityPattern::zeros(130);
        q.set(3, true);
        q.set(129, true);
        q.set(3, true);
        assert_eq!(q.count(), 2);
        q.flip(3);
        assert_eq!(q.count(), 1);
        assert_eq!(q.active_indices(), vec![129]);
    }

    #[test]
    fn mask_round_trip() {
        let q = SparsityPattern::from_mask(5, 0b10110);
        assert_eq!(q.to_bitstring(), "01101");
        assert_eq!(q.to_mask(), Some(0b10110));
        assert_eq!(q.count(), 3);
    }

    #[test]
    fn expand_empty_index_set() {
        let g = GroupStructure::new(3, vec![vec![0, 1], vec![1, 2]]).unwrap();
        assert_eq!(g.expand(&p("00")).unwrap(), p("000"));
    }

    #[test]
    fn expand_overlapping_union() {
        let g = GroupStructure::new(3, vec![vec![0, 1], vec![1, 2]]).unwrap();
        assert_eq!(g.expand(&p("11")).unwrap(), p("111"));
    }

    #[test]
    fn expand_single_group() {
        let g = GroupStructure::new(4, vec![vec![0], vec![1, 2]]).unwrap();
        assert_eq!(g.expand(&p("01")).unwrap(), p("0110"));
    }

    #[test]
    fn group_validation() {
        assert!(GroupStructure::new(3, vec![]).is_err());
        assert!(GroupStructure::new(3, vec![vec![]]).is_err());
        assert!(GroupStructure::new(3, vec![vec![3]]).is_err());
    }

    #[test]
    fn parse_groups_file() {
        let g = GroupStructure::parse("1 2\n# comment\n\n2 3 4\n", 4).unwrap();
        assert_eq!(g.num_groups(), 2);
        assert_eq!(g.group(1), &[1, 2, 3]);
        assert!(GroupStructure::parse("0 1\n", 4).is_err());
        assert!(GroupStructure::parse("1 x\n", 4).is_err());
        assert!(GroupStructure::parse("", 4).is_err());
    }
}
