//! Exact counting and enumeration primitives.
//!
//! All counts are `u64` and every operation that could exceed that range
//! reports [`CombinatError::Overflow`] instead of wrapping.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CombinatError {
    #[error("integer overflow while computing {0}")]
    Overflow(&'static str),
    #[error("cannot choose {size} elements from a ground set of {ground}")]
    SubsetTooLarge { ground: usize, size: usize },
}

/// `C(n, k)`, zero when `k > n`.
pub fn binomial(n: u64, k: u64) -> Result<u64, CombinatError> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc == C(n, i) here, and C(n, i) * (n - i) == C(n, i + 1) * (i + 1).
        acc = acc
            .checked_mul(u128::from(n - i))
            .ok_or(CombinatError::Overflow("binomial"))?
            / u128::from(i + 1);
        if acc > u128::from(u64::MAX) {
            return Err(CombinatError::Overflow("binomial"));
        }
    }
    Ok(acc as u64)
}

pub fn factorial(n: u64) -> Result<u64, CombinatError> {
    (1..=n).try_fold(1u64, |acc, i| {
        acc.checked_mul(i).ok_or(CombinatError::Overflow("factorial"))
    })
}

/// Multinomial coefficient `(sum parts)! / prod(parts!)`.
pub fn multinomial(parts: &[u64]) -> Result<u64, CombinatError> {
    let mut total = 0u64;
    let mut acc = 1u64;
    for &p in parts {
        total = total
            .checked_add(p)
            .ok_or(CombinatError::Overflow("multinomial"))?;
        acc = acc
            .checked_mul(binomial(total, p)?)
            .ok_or(CombinatError::Overflow("multinomial"))?;
    }
    Ok(acc)
}

/// A non-increasing list of positive parts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Partition(pub Vec<usize>);

impl Partition {
    pub fn parts(&self) -> &[usize] {
        &self.0
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Partitions of `n` with at most `max_parts` parts, each at most `max_part`,
/// in reverse-lexicographic order (largest first part first).
///
/// `n == 0` yields the single empty partition.
pub fn integer_partitions(n: usize, max_parts: usize, max_part: usize) -> Vec<Partition> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    partitions_rec(n, max_parts, max_part, &mut current, &mut out);
    out
}

/// All partitions of `n`, reverse-lexicographic.
pub fn partitions(n: usize) -> Vec<Partition> {
    integer_partitions(n, n, n)
}

fn partitions_rec(
    remaining: usize,
    parts_left: usize,
    cap: usize,
    current: &mut Vec<usize>,
    out: &mut Vec<Partition>,
) {
    if remaining == 0 {
        out.push(Partition(current.clone()));
        return;
    }
    if parts_left == 0 {
        return;
    }
    let top = remaining.min(cap);
    for first in (1..=top).rev() {
        // Prune when the remaining parts cannot absorb the rest.
        if first * parts_left < remaining {
            break;
        }
        current.push(first);
        partitions_rec(remaining - first, parts_left - 1, first, current, out);
        current.pop();
    }
}

/// Lexicographic iterator over `size`-subsets of `{1, ..., ground}`.
///
/// Elements are 1-based and each yielded subset is sorted ascending.
#[derive(Debug, Clone)]
pub struct SubsetIter {
    ground: usize,
    current: Vec<usize>,
    done: bool,
}

impl SubsetIter {
    pub fn new(ground: usize, size: usize) -> Result<Self, CombinatError> {
        if size > ground {
            return Err(CombinatError::SubsetTooLarge { ground, size });
        }
        Ok(Self {
            ground,
            current: (1..=size).collect(),
            done: false,
        })
    }
}

impl Iterator for SubsetIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.current.clone();
        let k = self.current.len();
        // Find the rightmost element that can still move right.
        let mut i = k;
        while i > 0 && self.current[i - 1] == self.ground - k + i {
            i -= 1;
        }
        if i == 0 {
            self.done = true;
        } else {
            self.current[i - 1] += 1;
            for j in i..k {
                self.current[j] = self.current[j - 1] + 1;
            }
        }
        Some(out)
    }
}

/// Convenience wrapper around [`SubsetIter::new`].
pub fn subsets(ground: usize, size: usize) -> Result<SubsetIter, CombinatError> {
    SubsetIter::new(ground, size)
}

/// Greatest common divisor, `gcd(0, 0) == 0`.
pub fn gcd(a: u64, b: u64) -> u64 {
    num_integer::gcd(a, b)
}
