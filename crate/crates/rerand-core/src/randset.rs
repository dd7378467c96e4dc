//! Candidate treatment assignments for two-arm designs: counting, lexicographic
//! enumeration with random access, and uniform sampling.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smallvec::{smallvec, SmallVec};

use crate::error::{Error, Result};

/// Binary treatment indicator over `n` units (1 = treated).
///
/// Stored as packed 64-bit words; designs with n <= 64 stay inline.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct AssignmentVector {
    words: SmallVec<[u64; 1]>,
    n: usize,
    n_treated: usize,
}

impl AssignmentVector {
    /// Build from the set of treated unit indices (0-based, any order).
    pub fn from_treated_indices(n: usize, treated: &[usize]) -> Result<Self> {
        let mut words: SmallVec<[u64; 1]> = smallvec![0u64; n.div_ceil(64)];
        for &i in treated {
            if i >= n {
                return Err(Error::InvalidDesign(format!(
                    "treated index {i} out of range for n={n}"
                )));
            }
            let (w, b) = (i / 64, i % 64);
            if words[w] >> b & 1 == 1 {
                return Err(Error::InvalidDesign(format!("duplicate treated index {i}")));
            }
            words[w] |= 1 << b;
        }
        let v = Self {
            words,
            n,
            n_treated: treated.len(),
        };
        v.validate()?;
        Ok(v)
    }

    /// Build from explicit per-unit indicators.
    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        let treated: Vec<usize> = bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect();
        Self::from_treated_indices(bits.len(), &treated)
    }

    fn validate(&self) -> Result<()> {
        if self.n_treated == 0 || self.n_treated >= self.n {
            return Err(Error::InvalidDesign(format!(
                "n_treated must be in (0, n); got n_treated={}, n={}",
                self.n_treated, self.n
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_treated(&self) -> usize {
        self.n_treated
    }

    pub fn is_treated(&self, unit: usize) -> bool {
        debug_assert!(unit < self.n);
        self.words[unit / 64] >> (unit % 64) & 1 == 1
    }

    /// Treated unit indices in increasing order.
    pub fn treated_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_treated);
        for (w, &word) in self.words.iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                out.push(w * 64 + bits.trailing_zeros() as usize);
                bits &= bits - 1;
            }
        }
        out
    }

    /// The group-swapped assignment: every bit flipped.
    pub fn complement(&self) -> AssignmentVector {
        let mut words = self.words.clone();
        for w in words.iter_mut() {
            *w = !*w;
        }
        let tail = self.n % 64;
        if tail != 0 {
            let last = words.len() - 1;
            words[last] &= (1u64 << tail) - 1;
        }
        AssignmentVector {
            words,
            n: self.n,
            n_treated: self.n - self.n_treated,
        }
    }
}

impl std::fmt::Debug for AssignmentVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for i in 0..self.n {
            write!(f, "{}", u8::from(self.is_treated(i)))?;
        }
        Ok(())
    }
}

/// Group-swap of an assignment; `n_treated` becomes `n - n_treated`.
pub fn assignment_complement(w: &AssignmentVector) -> AssignmentVector {
    w.complement()
}

/// How the candidate set is structured.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DesignStructure {
    /// All size-`n_treated` subsets of the units.
    Complete,
    /// Disjoint pairs partitioning the units; exactly one treated per pair.
    Paired(Vec<(usize, usize)>),
}

/// A validated candidate space of treatment assignments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DesignSpace {
    n: usize,
    n_treated: usize,
    structure: DesignStructure,
}

impl DesignSpace {
    /// Completely randomized design: `n` units, `n_treated` of them treated.
    pub fn complete(n: usize, n_treated: usize) -> Result<Self> {
        if n < 2 || n_treated == 0 || n_treated >= n {
            return Err(Error::InvalidDesign(format!(
                "complete design requires 0 < n_treated < n; got n={n}, n_treated={n_treated}"
            )));
        }
        Ok(Self {
            n,
            n_treated,
            structure: DesignStructure::Complete,
        })
    }

    /// Pair-matched design; pairs must partition `0..2*pairs.len()`.
    ///
    /// Pairs are normalized to (low, high) and sorted by their low unit, so
    /// enumeration order does not depend on the order pairs are supplied in.
    pub fn paired(pairs: &[(usize, usize)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidDesign("paired design needs at least one pair".into()));
        }
        let n = 2 * pairs.len();
        let mut seen = vec![false; n];
        let mut normalized: Vec<(usize, usize)> = Vec::with_capacity(pairs.len());
        for &(a, b) in pairs {
            if a == b || a >= n || b >= n {
                return Err(Error::InvalidDesign(format!(
                    "pair ({a},{b}) is not two distinct units in 0..{n}"
                )));
            }
            for i in [a, b] {
                if seen[i] {
                    return Err(Error::InvalidDesign(format!("unit {i} appears in two pairs")));
                }
                seen[i] = true;
            }
            normalized.push((a.min(b), a.max(b)));
        }
        normalized.sort_unstable();
        Ok(Self {
            n,
            n_treated: pairs.len(),
            structure: DesignStructure::Paired(normalized),
        })
    }

    /// Pairs (0,1), (2,3), ... over `2 * n_pairs` consecutive units.
    pub fn paired_adjacent(n_pairs: usize) -> Result<Self> {
        let pairs: Vec<(usize, usize)> = (0..n_pairs).map(|j| (2 * j, 2 * j + 1)).collect();
        Self::paired(&pairs)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_treated(&self) -> usize {
        self.n_treated
    }

    pub fn structure(&self) -> &DesignStructure {
        &self.structure
    }

    /// Exact number of candidate assignments.
    pub fn count(&self) -> BigUint {
        match &self.structure {
            DesignStructure::Complete => {
                num_integer::binomial(BigUint::from(self.n), BigUint::from(self.n_treated))
            }
            DesignStructure::Paired(pairs) => BigUint::one() << pairs.len(),
        }
    }

    /// Candidate count as an iteration bound, or an overflow error.
    pub fn count_u64(&self) -> Result<u64> {
        let c = self.count();
        c.to_u64().ok_or(Error::EnumerationOverflow { count: c })
    }

    /// The candidate at position `index` in enumeration order.
    pub fn assignment_at(&self, index: u64) -> Result<AssignmentVector> {
        let total = self.count_u64()?;
        if index >= total {
            return Err(Error::InvalidDesign(format!(
                "assignment index {index} out of range (candidate count {total})"
            )));
        }
        match &self.structure {
            DesignStructure::Complete => {
                let table = BinomTable::new(self.n);
                let treated = unrank_combination(self.n, self.n_treated, index, &table);
                AssignmentVector::from_treated_indices(self.n, &treated)
            }
            DesignStructure::Paired(pairs) => Ok(paired_assignment(pairs, index)),
        }
    }

    /// Position of `w` in enumeration order; errors if `w` is not a candidate.
    pub fn rank_of(&self, w: &AssignmentVector) -> Result<u64> {
        if w.n() != self.n || w.n_treated() != self.n_treated {
            return Err(Error::InvalidDesign(format!(
                "assignment shape ({}, {}) does not match design ({}, {})",
                w.n(),
                w.n_treated(),
                self.n,
                self.n_treated
            )));
        }
        match &self.structure {
            DesignStructure::Complete => {
                let table = BinomTable::new(self.n);
                Ok(rank_combination(self.n, &w.treated_indices(), &table))
            }
            DesignStructure::Paired(pairs) => {
                let m = pairs.len();
                let mut index = 0u64;
                for (j, &(lo, hi)) in pairs.iter().enumerate() {
                    match (w.is_treated(lo), w.is_treated(hi)) {
                        (true, false) => {}
                        (false, true) => index |= 1 << (m - 1 - j),
                        _ => {
                            return Err(Error::InvalidDesign(format!(
                                "assignment does not treat exactly one unit of pair ({lo},{hi})"
                            )))
                        }
                    }
                }
                Ok(index)
            }
        }
    }

    /// Stream candidates over `start..end` in enumeration order.
    ///
    /// Disjoint ranges partition the space, so workers can each own a slice.
    pub fn enumerate_range(&self, start: u64, end: u64) -> Result<AssignmentStream> {
        let total = self.count_u64()?;
        if start > end || end > total {
            return Err(Error::InvalidDesign(format!(
                "enumeration range {start}..{end} out of bounds (candidate count {total})"
            )));
        }
        Ok(match &self.structure {
            DesignStructure::Complete => {
                let table = BinomTable::new(self.n);
                let current = if start < end {
                    unrank_combination(self.n, self.n_treated, start, &table)
                } else {
                    Vec::new()
                };
                AssignmentStream::Complete {
                    n: self.n,
                    current,
                    next: start,
                    end,
                }
            }
            DesignStructure::Paired(pairs) => AssignmentStream::Paired {
                pairs: pairs.clone(),
                next: start,
                end,
            },
        })
    }

    /// Uniform draw from the candidate set.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> AssignmentVector {
        match &self.structure {
            DesignStructure::Complete => {
                // Partial Fisher-Yates: the first n_treated slots are a
                // uniform subset.
                let mut idx: Vec<usize> = (0..self.n).collect();
                for i in 0..self.n_treated {
                    let j = rng.random_range(i..self.n);
                    idx.swap(i, j);
                }
                AssignmentVector::from_treated_indices(self.n, &idx[..self.n_treated])
                    .expect("sampled subset is valid by construction")
            }
            DesignStructure::Paired(pairs) => {
                let treated: Vec<usize> = pairs
                    .iter()
                    .map(|&(lo, hi)| if rng.random::<bool>() { hi } else { lo })
                    .collect();
                AssignmentVector::from_treated_indices(self.n, &treated)
                    .expect("one unit per pair is valid by construction")
            }
        }
    }
}

/// Exact number of candidate assignments in the design space.
pub fn count_randomizations(space: &DesignSpace) -> BigUint {
    space.count()
}

/// Stream every candidate once, in lexicographic order over treated-index
/// sets (pairs ordered by their low unit for paired designs).
pub fn enumerate_assignments(space: &DesignSpace) -> Result<AssignmentStream> {
    let total = space.count_u64()?;
    space.enumerate_range(0, total)
}

/// Uniform draw over the candidate set; deterministic given the rng state.
pub fn sample_assignment<R: Rng>(space: &DesignSpace, rng: &mut R) -> AssignmentVector {
    space.sample(rng)
}

/// Per-worker rng derived from a root seed: ChaCha8 seeded with the root,
/// placed on stream `stream`. Distinct streams never overlap, so workers
/// seeded this way are independent and the assignment of work to threads
/// cannot change any draw.
pub fn worker_rng(root_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(stream);
    rng
}

/// Derive a child seed from a root seed and a label path (for example
/// cell index, then replication index) by SplitMix64 chaining. Children of
/// distinct paths are independent for practical purposes, and the mapping
/// never changes with worker count.
pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut acc = mix(root);
    for &t in tags {
        acc = mix(acc ^ mix(t));
    }
    acc
}

/// Restartable candidate stream over a contiguous index range.
pub enum AssignmentStream {
    Complete {
        n: usize,
        current: Vec<usize>,
        next: u64,
        end: u64,
    },
    Paired {
        pairs: Vec<(usize, usize)>,
        next: u64,
        end: u64,
    },
}

impl AssignmentStream {
    /// Index of the candidate the next call to `next()` will yield.
    pub fn position(&self) -> u64 {
        match self {
            AssignmentStream::Complete { next, .. } => *next,
            AssignmentStream::Paired { next, .. } => *next,
        }
    }
}

impl Iterator for AssignmentStream {
    type Item = AssignmentVector;

    fn next(&mut self) -> Option<AssignmentVector> {
        match self {
            AssignmentStream::Complete {
                n,
                current,
                next,
                end,
            } => {
                if *next >= *end {
                    return None;
                }
                let item = AssignmentVector::from_treated_indices(*n, current)
                    .expect("enumeration state is a valid combination");
                *next += 1;
                if *next < *end {
                    next_combination(*n, current);
                }
                Some(item)
            }
            AssignmentStream::Paired { pairs, next, end } => {
                if *next >= *end {
                    return None;
                }
                let item = paired_assignment(pairs, *next);
                *next += 1;
                Some(item)
            }
        }
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let remaining = match self {
            AssignmentStream::Complete { next, end, .. } => end - next,
            AssignmentStream::Paired { next, end, .. } => end - next,
        } as usize;
        (remaining, Some(remaining))
    }
}

fn paired_assignment(pairs: &[(usize, usize)], index: u64) -> AssignmentVector {
    let m = pairs.len();
    let treated: Vec<usize> = pairs
        .iter()
        .enumerate()
        .map(|(j, &(lo, hi))| {
            if index >> (m - 1 - j) & 1 == 1 {
                hi
            } else {
                lo
            }
        })
        .collect();
    AssignmentVector::from_treated_indices(2 * m, &treated)
        .expect("one unit per pair is valid by construction")
}

/// Pascal's triangle up to row `n`, saturating at u128::MAX.
pub(crate) struct BinomTable {
    n: usize,
    rows: Vec<u128>,
}

impl BinomTable {
    pub(crate) fn new(n: usize) -> Self {
        let mut rows = vec![0u128; (n + 1) * (n + 2) / 2];
        for i in 0..=n {
            let base = i * (i + 1) / 2;
            rows[base] = 1;
            for j in 1..=i {
                let prev = (i - 1) * i / 2;
                let left = if j < i { rows[prev + j] } else { 0 };
                rows[base + j] = rows[prev + j - 1].saturating_add(left);
            }
        }
        Self { n, rows }
    }

    pub(crate) fn choose(&self, n: usize, k: usize) -> u128 {
        if k > n || n > self.n {
            return 0;
        }
        self.rows[n * (n + 1) / 2 + k]
    }
}

/// Treated indices of the `index`-th size-`t` subset of `0..n`, lex order.
fn unrank_combination(n: usize, t: usize, index: u64, table: &BinomTable) -> Vec<usize> {
    let mut rem = index as u128;
    let mut out = Vec::with_capacity(t);
    let mut v = 0usize;
    for j in 0..t {
        loop {
            let c = table.choose(n - 1 - v, t - 1 - j);
            if rem < c {
                out.push(v);
                v += 1;
                break;
            }
            rem -= c;
            v += 1;
        }
    }
    out
}

/// Lexicographic rank of a sorted treated-index set.
fn rank_combination(n: usize, treated: &[usize], table: &BinomTable) -> u64 {
    let t = treated.len();
    let mut rank = 0u128;
    let mut prev: isize = -1;
    for (j, &a) in treated.iter().enumerate() {
        for v in (prev + 1) as usize..a {
            rank += table.choose(n - 1 - v, t - 1 - j);
        }
        prev = a as isize;
    }
    rank as u64
}

/// Advance a sorted combination to its lexicographic successor in place.
fn next_combination(n: usize, c: &mut [usize]) {
    let t = c.len();
    let mut j = t;
    while j > 0 {
        j -= 1;
        if c[j] != j + n - t {
            c[j] += 1;
            for l in j + 1..t {
                c[l] = c[l - 1] + 1;
            }
            return;
        }
    }
}
