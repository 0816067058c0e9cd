//! User groupings, type vectors of user sets, and multicast-group structure.
//!
//! Users are labelled `1..=K`. Groups are laid out contiguously in the order of
//! the grouping sizes, so group `0` holds users `1..=q_0`, and so on.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::combinat::{self, CombinatError};

/// Largest user count supported by [`UserSet`].
pub const MAX_USERS_CONCRETE: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypingError {
    #[error("grouping {sizes:?} does not partition {users} users into non-increasing positive sizes")]
    InvalidGrouping { users: usize, sizes: Vec<usize> },
    #[error("type {0} is not realizable under this grouping")]
    Unrealizable(String),
    #[error("cannot parse type vector {text:?}: {reason}")]
    Parse { text: String, reason: String },
    #[error("user {user} outside 1..={users}")]
    UserOutOfRange { user: usize, users: usize },
    #[error("q-block index {block} out of range ({blocks} blocks)")]
    BlockOutOfRange { block: usize, blocks: usize },
    #[error("concrete user sets need K <= {MAX_USERS_CONCRETE}, got {0}")]
    TooManyUsers(usize),
    #[error(transparent)]
    Combinat(#[from] CombinatError),
}

/// A set of users stored as a bitmask; user `k` is bit `k - 1`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct UserSet(u64);

impl UserSet {
    pub const EMPTY: UserSet = UserSet(0);

    pub fn from_users<I: IntoIterator<Item = usize>>(users: I) -> Self {
        let mut set = UserSet::EMPTY;
        for u in users {
            set.insert(u);
        }
        set
    }

    pub fn range(first: usize, last: usize) -> Self {
        Self::from_users(first..=last)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn insert(&mut self, user: usize) {
        assert!((1..=MAX_USERS_CONCRETE).contains(&user), "user {user} out of range");
        self.0 |= 1 << (user - 1);
    }

    pub fn contains(self, user: usize) -> bool {
        (1..=MAX_USERS_CONCRETE).contains(&user) && self.0 & (1 << (user - 1)) != 0
    }

    pub fn without(self, user: usize) -> Self {
        if self.contains(user) {
            UserSet(self.0 & !(1 << (user - 1)))
        } else {
            self
        }
    }

    pub fn intersection(self, other: UserSet) -> Self {
        UserSet(self.0 & other.0)
    }

    pub fn union(self, other: UserSet) -> Self {
        UserSet(self.0 | other.0)
    }

    pub fn difference(self, other: UserSet) -> Self {
        UserSet(self.0 & !other.0)
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset(self, other: UserSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Users in ascending order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let low = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(low + 1)
            }
        })
    }

    pub fn to_vec(self) -> Vec<usize> {
        self.iter().collect()
    }
}

/// Orders sets by their sorted user lists, lexicographically.
impl Ord for UserSet {
    fn cmp(&self, other: &Self) -> Ordering {
        self.iter().cmp(other.iter())
    }
}

impl PartialOrd for UserSet {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for UserSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl Serialize for UserSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

/// A maximal run of equal-sized groups in a grouping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    /// Users per group in this block.
    pub group_size: usize,
    /// Number of groups in this block.
    pub groups: usize,
    /// Index of the first group of this block.
    pub first_group: usize,
}

impl Block {
    pub fn users(&self) -> usize {
        self.group_size * self.groups
    }
}

/// A partition of the `K` users into disjoint groups of non-increasing size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grouping {
    users: usize,
    sizes: Vec<usize>,
    blocks: Vec<Block>,
    first_user: Vec<usize>,
}

impl Grouping {
    pub fn new(users: usize, sizes: Vec<usize>) -> Result<Self, TypingError> {
        let valid = users > 0
            && sizes.iter().sum::<usize>() == users
            && sizes.iter().all(|&s| s > 0)
            && sizes.windows(2).all(|w| w[0] >= w[1]);
        if !valid {
            return Err(TypingError::InvalidGrouping { users, sizes });
        }
        let mut blocks: Vec<Block> = Vec::new();
        for (i, &s) in sizes.iter().enumerate() {
            match blocks.last_mut() {
                Some(b) if b.group_size == s => b.groups += 1,
                _ => blocks.push(Block {
                    group_size: s,
                    groups: 1,
                    first_group: i,
                }),
            }
        }
        let mut first_user = Vec::with_capacity(sizes.len());
        let mut next = 1;
        for &s in &sizes {
            first_user.push(next);
            next += s;
        }
        Ok(Self {
            users,
            sizes,
            blocks,
            first_user,
        })
    }

    /// `m` groups of `q` users each.
    pub fn equal(groups: usize, size: usize) -> Result<Self, TypingError> {
        Self::new(groups * size, vec![size; groups])
    }

    /// The single-group grouping `(K)`.
    pub fn single(users: usize) -> Result<Self, TypingError> {
        Self::new(users, vec![users])
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn group_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn is_equal(&self) -> bool {
        self.blocks.len() == 1
    }

    pub fn block_of_group(&self, group: usize) -> usize {
        self.blocks
            .iter()
            .rposition(|b| b.first_group <= group)
            .expect("group index in range")
    }

    pub fn group_of(&self, user: usize) -> Result<usize, TypingError> {
        if user == 0 || user > self.users {
            return Err(TypingError::UserOutOfRange {
                user,
                users: self.users,
            });
        }
        Ok(self.first_user.partition_point(|&f| f <= user) - 1)
    }

    /// Users of a group as an inclusive range.
    pub fn members(&self, group: usize) -> std::ops::RangeInclusive<usize> {
        let first = self.first_user[group];
        first..=first + self.sizes[group] - 1
    }

    pub fn ensure_concrete(&self) -> Result<(), TypingError> {
        if self.users > MAX_USERS_CONCRETE {
            Err(TypingError::TooManyUsers(self.users))
        } else {
            Ok(())
        }
    }

    pub fn group_set(&self, group: usize) -> UserSet {
        let r = self.members(group);
        UserSet::range(*r.start(), *r.end())
    }

    /// Intersection sizes `|set ∩ Q_j|` per group.
    pub fn counts_of(&self, set: UserSet) -> Vec<usize> {
        (0..self.group_count())
            .map(|g| set.intersection(self.group_set(g)).len())
            .collect()
    }

    /// The type vector of a concrete user set.
    pub fn type_of(&self, set: UserSet) -> TypeVector {
        self.type_from_counts(&self.counts_of(set))
    }

    /// Type vector built from per-group intersection counts.
    pub fn type_from_counts(&self, counts: &[usize]) -> TypeVector {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let mut entries = counts[b.first_group..b.first_group + b.groups].to_vec();
                entries.sort_unstable_by(|a, b| b.cmp(a));
                entries
            })
            .collect();
        TypeVector { blocks }
    }

    /// Checks that `v` has this grouping's block shape and fits its group sizes.
    pub fn check_type(&self, v: &TypeVector) -> Result<(), TypingError> {
        let shape_ok = v.blocks.len() == self.blocks.len()
            && v.blocks.iter().zip(&self.blocks).all(|(entries, b)| {
                entries.len() == b.groups
                    && entries.iter().all(|&e| e <= b.group_size)
                    && entries.windows(2).all(|w| w[0] >= w[1])
            });
        if shape_ok {
            Ok(())
        } else {
            Err(TypingError::Unrealizable(v.to_string()))
        }
    }

    /// Users of one concrete set with type `v`: in each block the `j`-th
    /// largest entry is taken from the `j`-th group, lowest users first.
    pub fn representative(&self, v: &TypeVector) -> Result<UserSet, TypingError> {
        self.ensure_concrete()?;
        self.check_type(v)?;
        let mut set = UserSet::EMPTY;
        for (entries, b) in v.blocks.iter().zip(&self.blocks) {
            for (j, &e) in entries.iter().enumerate() {
                let first = self.first_user[b.first_group + j];
                for u in first..first + e {
                    set.insert(u);
                }
            }
        }
        Ok(set)
    }

    /// Number of user sets of type `v`.
    pub fn type_count(&self, v: &TypeVector) -> Result<u64, TypingError> {
        self.check_type(v)?;
        let mut acc = 1u64;
        for (entries, b) in v.blocks.iter().zip(&self.blocks) {
            acc = acc
                .checked_mul(block_count(entries, b.group_size)?)
                .ok_or(CombinatError::Overflow("type count"))?;
        }
        Ok(acc)
    }

    /// Number of sets of type `v` containing one fixed user whose group lies in
    /// q-block `block`. Counts by which slot of the block the user's group fills.
    pub fn per_user_count(&self, v: &TypeVector, block: usize) -> Result<u64, TypingError> {
        self.check_type(v)?;
        if block >= self.blocks.len() {
            return Err(TypingError::BlockOutOfRange {
                block,
                blocks: self.blocks.len(),
            });
        }
        let overflow = || CombinatError::Overflow("per-user count");
        let mut others = 1u64;
        for (i, (entries, b)) in v.blocks.iter().zip(&self.blocks).enumerate() {
            if i != block {
                others = others
                    .checked_mul(block_count(entries, b.group_size)?)
                    .ok_or_else(overflow)?;
            }
        }
        let entries = &v.blocks[block];
        let size = self.blocks[block].group_size as u64;
        let mut total = 0u64;
        for (value, _) in multiplicities(entries) {
            if value == 0 {
                continue;
            }
            // The user's group takes one copy of `value`; the rest of the block
            // is arranged over the remaining groups.
            let mut rest = entries.clone();
            let pos = rest.iter().position(|&e| e == value).expect("value present");
            rest.remove(pos);
            let within = combinat::binomial(size - 1, value as u64 - 1)?
                .checked_mul(block_count(&rest, size as usize)?)
                .ok_or_else(overflow)?;
            total = total
                .checked_add(within.checked_mul(others).ok_or_else(overflow)?)
                .ok_or_else(overflow)?;
        }
        Ok(total)
    }

    /// All realizable types of `total`-subsets with their counts, in
    /// descending (reverse-lexicographic) order.
    pub fn enumerate_types(&self, total: usize) -> Result<Vec<(TypeVector, u64)>, TypingError> {
        let mut out = Vec::new();
        let mut prefix = Vec::new();
        self.types_rec(0, total, &mut prefix, &mut out);
        out.sort_by(|a, b| b.cmp(a));
        out.into_iter()
            .map(|v| {
                let c = self.type_count(&v)?;
                Ok((v, c))
            })
            .collect()
    }

    fn types_rec(
        &self,
        block: usize,
        remaining: usize,
        prefix: &mut Vec<Vec<usize>>,
        out: &mut Vec<TypeVector>,
    ) {
        if block == self.blocks.len() {
            if remaining == 0 {
                out.push(TypeVector {
                    blocks: prefix.clone(),
                });
            }
            return;
        }
        let b = self.blocks[block];
        let cap_here = b.users();
        let cap_after: usize = self.blocks[block + 1..].iter().map(Block::users).sum();
        let lo = remaining.saturating_sub(cap_after);
        let hi = remaining.min(cap_here);
        for sum in (lo..=hi).rev() {
            for p in combinat::integer_partitions(sum, b.groups, b.group_size) {
                let mut entries = p.0;
                entries.resize(b.groups, 0);
                prefix.push(entries);
                self.types_rec(block + 1, remaining - sum, prefix, out);
                prefix.pop();
            }
        }
    }

    /// Multicast-group structure of group type `s`.
    pub fn mgroup_structure(&self, s: &TypeVector) -> Result<MGroupStructure, TypingError> {
        self.check_type(s)?;
        let mut unique_sets = Vec::new();
        let mut involved = Vec::new();
        for (block, entries) in s.blocks.iter().enumerate() {
            for (count, groups) in multiplicities(entries) {
                if count == 0 {
                    continue;
                }
                unique_sets.push(UniqueSet {
                    block,
                    count,
                    groups,
                });
                let mut v = s.clone();
                let pos = v.blocks[block]
                    .iter()
                    .position(|&e| e == count)
                    .expect("count present");
                v.blocks[block][pos] -= 1;
                v.blocks[block].sort_unstable_by(|a, b| b.cmp(a));
                involved.push(v);
            }
        }
        Ok(MGroupStructure {
            group_type: s.clone(),
            unique_sets,
            involved,
        })
    }
}

/// `(value, multiplicity)` pairs of a non-increasing slice, largest value first.
fn multiplicities(entries: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &e in entries {
        match out.last_mut() {
            Some((v, m)) if *v == e => *m += 1,
            _ => out.push((e, 1)),
        }
    }
    out
}

/// Ways to realize one block's entries: arrangements of the multiset of
/// entries over the block's groups, times the member choices per group.
fn block_count(entries: &[usize], group_size: usize) -> Result<u64, CombinatError> {
    let mults: Vec<u64> = multiplicities(entries)
        .into_iter()
        .map(|(_, m)| m as u64)
        .collect();
    let mut acc = combinat::multinomial(&mults)?;
    for &e in entries {
        acc = acc
            .checked_mul(combinat::binomial(group_size as u64, e as u64)?)
            .ok_or(CombinatError::Overflow("type count"))?;
    }
    Ok(acc)
}

/// Intersection profile of a user set against a grouping, one non-increasing
/// block per run of equal group sizes. Text form: `2|2,1|1,0,0`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypeVector {
    blocks: Vec<Vec<usize>>,
}

impl TypeVector {
    pub fn from_blocks(blocks: Vec<Vec<usize>>) -> Self {
        Self { blocks }
    }

    /// Single-block vector, for equal groupings.
    pub fn flat(entries: Vec<usize>) -> Self {
        Self {
            blocks: vec![entries],
        }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn entries(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocks.iter().flatten().copied()
    }

    pub fn total(&self) -> usize {
        self.entries().sum()
    }

    /// Text form with trailing zeros of each block dropped, e.g. `2,2,1` for
    /// `2,2,1,0`. Blocks that become empty keep a single `0`.
    pub fn shorthand(&self) -> String {
        self.blocks
            .iter()
            .map(|b| {
                let end = b.iter().rposition(|&e| e != 0).map_or(1, |p| p + 1);
                join(&b[..end.min(b.len())])
            })
            .collect::<Vec<_>>()
            .join("|")
    }
}

fn join(xs: &[usize]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl fmt::Display for TypeVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.blocks.iter().map(|b| join(b)).collect();
        f.write_str(&parts.join("|"))
    }
}

impl fmt::Debug for TypeVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TypeVector({self})")
    }
}

impl FromStr for TypeVector {
    type Err = TypingError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| TypingError::Parse {
            text: text.to_string(),
            reason: reason.to_string(),
        };
        let blocks = text
            .trim()
            .split('|')
            .map(|block| {
                block
                    .split(',')
                    .map(|e| e.trim().parse::<usize>().map_err(|_| err("bad entry")))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        if blocks
            .iter()
            .any(|b| b.windows(2).any(|w| w[0] < w[1]))
        {
            return Err(err("block entries must be non-increasing"));
        }
        Ok(Self { blocks })
    }
}

impl Serialize for TypeVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TypeVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Users of a multicast group that share the same q-block and the same
/// intersection count with their groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct UniqueSet {
    pub block: usize,
    pub count: usize,
    /// Number of groups in the block meeting the multicast group in `count` users.
    pub groups: usize,
}

impl UniqueSet {
    pub fn size(&self) -> usize {
        self.count * self.groups
    }
}

/// Unique sets of a multicast-group type and the subfile type each one
/// requests, both in canonical order (blocks in order, larger counts first).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MGroupStructure {
    pub group_type: TypeVector,
    pub unique_sets: Vec<UniqueSet>,
    /// `involved[i]` is the type of `S \ {k}` for any `k` in unique set `i`.
    pub involved: Vec<TypeVector>,
}

impl MGroupStructure {
    pub fn len(&self) -> usize {
        self.unique_sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unique_sets.is_empty()
    }

    /// Members of unique set `index` inside the concrete group `set`.
    pub fn members(&self, grouping: &Grouping, set: UserSet, index: usize) -> UserSet {
        let u = self.unique_sets[index];
        let b = grouping.blocks()[u.block];
        (b.first_group..b.first_group + b.groups)
            .map(|g| set.intersection(grouping.group_set(g)))
            .filter(|part| part.len() == u.count)
            .fold(UserSet::EMPTY, UserSet::union)
    }

    /// Index of the unique set containing `user` in the concrete group `set`.
    pub fn index_of(&self, grouping: &Grouping, set: UserSet, user: usize) -> Option<usize> {
        if !set.contains(user) {
            return None;
        }
        let g = grouping.group_of(user).ok()?;
        let block = grouping.block_of_group(g);
        let count = set.intersection(grouping.group_set(g)).len();
        self.unique_sets
            .iter()
            .position(|u| u.block == block && u.count == count)
    }
}

/// Brute-force type census of all `total`-subsets; exposed for oracle tests.
pub fn census_by_enumeration(
    grouping: &Grouping,
    total: usize,
) -> Result<BTreeMap<TypeVector, u64>, TypingError> {
    grouping.ensure_concrete()?;
    let mut census = BTreeMap::new();
    for s in combinat::subsets(grouping.users(), total)? {
        *census
            .entry(grouping.type_of(UserSet::from_users(s)))
            .or_insert(0) += 1;
    }
    Ok(census)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tv(s: &str) -> TypeVector {
        s.parse().unwrap()
    }

    #[test]
    fn user_set_basics() {
        let s = UserSet::from_users([3, 1, 7]);
        assert_eq!(s.to_vec(), vec![1, 3, 7]);
        assert_eq!(s.len(), 3);
        assert!(s.contains(7) && !s.contains(2) && !s.contains(0));
        assert_eq!(s.without(3).to_vec(), vec![1, 7]);
        assert!(UserSet::from_users([1, 2]) < UserSet::from_users([1, 3]));
        assert!(UserSet::from_users([1, 9]) < UserSet::from_users([2]));
    }

    #[test]
    fn grouping_layout() {
        let g = Grouping::new(8, vec![3, 2, 2, 1]).unwrap();
        assert_eq!(g.blocks().len(), 3);
        assert_eq!(g.members(1), 4..=5);
        assert_eq!(g.group_of(6).unwrap(), 2);
        assert_eq!(g.group_of(8).unwrap(), 3);
        assert_eq!(g.block_of_group(2), 1);
        assert!(Grouping::new(5, vec![2, 3]).is_err());
        assert!(Grouping::new(5, vec![3, 1]).is_err());
    }

    #[test]
    fn text_form_round_trips() {
        let v = tv("2|2,1|1,0,0");
        assert_eq!(v.to_string(), "2|2,1|1,0,0");
        assert_eq!(v.shorthand(), "2|2,1|1");
        assert_eq!(tv("3,0").shorthand(), "3");
        assert_eq!(tv("0,0").shorthand(), "0");
        assert!("1,2".parse::<TypeVector>().is_err());
        assert!("a".parse::<TypeVector>().is_err());
    }

    #[test]
    fn type_of_example_set() {
        // Grouping (2,2): users {1,2} and {3,4}.
        let g = Grouping::equal(2, 2).unwrap();
        assert_eq!(g.type_of(UserSet::from_users([1, 3, 4])), tv("2,1"));
        assert_eq!(g.type_of(UserSet::from_users([1, 2])), tv("2,0"));
    }

    #[test]
    fn counts_for_four_four_grouping() {
        // K = 8, q = (4,4), t = 3: types (3,0) and (2,1).
        let g = Grouping::equal(2, 4).unwrap();
        let types = g.enumerate_types(3).unwrap();
        assert_eq!(types, vec![(tv("3,0"), 8), (tv("2,1"), 48)]);
    }

    #[test]
    fn mgroup_structure_of_three_part_type() {
        // q = (3,3,3), s = (3,2,2): unique sets {Q1 part} and {Q2, Q3 parts}.
        let g = Grouping::equal(3, 3).unwrap();
        let st = g.mgroup_structure(&tv("3,2,2")).unwrap();
        assert_eq!(
            st.unique_sets,
            vec![
                UniqueSet { block: 0, count: 3, groups: 1 },
                UniqueSet { block: 0, count: 2, groups: 2 },
            ]
        );
        assert_eq!(st.involved, vec![tv("2,2,2"), tv("3,2,1")]);
        let set = UserSet::from_users([1, 2, 3, 4, 5, 7, 8]);
        assert_eq!(st.members(&g, set, 1).to_vec(), vec![4, 5, 7, 8]);
        assert_eq!(st.index_of(&g, set, 2), Some(0));
    }

    #[test]
    fn mixed_grouping_unique_sets_split_by_block() {
        // q = (3,2), s = (2|2): equal counts in different blocks stay apart.
        let g = Grouping::new(5, vec![3, 2]).unwrap();
        let st = g.mgroup_structure(&tv("2|2")).unwrap();
        assert_eq!(st.len(), 2);
        assert_eq!(st.involved, vec![tv("1|2"), tv("2|1")]);
    }

    #[test]
    fn unrealizable_types_rejected() {
        let g = Grouping::equal(2, 2).unwrap();
        assert!(g.mgroup_structure(&tv("3,0")).is_err());
        assert!(g.type_count(&tv("1,1,0")).is_err());
        assert!(g.type_count(&tv("1|1")).is_err());
    }

    fn oracle_per_user(
        g: &Grouping,
        v: &TypeVector,
        user: usize,
    ) -> u64 {
        combinat::subsets(g.users(), v.total())
            .unwrap()
            .map(UserSet::from_users)
            .filter(|s| s.contains(user) && &g.type_of(*s) == v)
            .count() as u64
    }

    fn small_groupings(max_users: usize) -> Vec<Grouping> {
        (1..=max_users)
            .flat_map(|k| {
                combinat::partitions(k)
                    .into_iter()
                    .map(move |p| Grouping::new(k, p.0).unwrap())
            })
            .collect()
    }

    #[test]
    fn enumerate_types_matches_brute_force() {
        for g in small_groupings(9) {
            for t in 0..=g.users() {
                let fast: BTreeMap<_, _> = g.enumerate_types(t).unwrap().into_iter().collect();
                assert_eq!(fast, census_by_enumeration(&g, t).unwrap(), "{:?} t={t}", g.sizes());
            }
        }
    }

    #[test]
    fn per_user_count_matches_brute_force() {
        for g in small_groupings(8) {
            for t in 1..=g.users() {
                for (v, _) in g.enumerate_types(t).unwrap() {
                    for (bi, b) in g.blocks().iter().enumerate() {
                        let user = *g.members(b.first_group).start();
                        assert_eq!(
                            g.per_user_count(&v, bi).unwrap(),
                            oracle_per_user(&g, &v, user),
                            "{:?} {v}",
                            g.sizes()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn involved_types_match_concrete_removal() {
        for g in small_groupings(8) {
            for t in 1..g.users() {
                for (s, _) in g.enumerate_types(t + 1).unwrap() {
                    let st = g.mgroup_structure(&s).unwrap();
                    let rep = g.representative(&s).unwrap();
                    assert_eq!(g.type_of(rep), s);
                    let mut seen = vec![false; st.len()];
                    for k in rep.iter() {
                        let i = st.index_of(&g, rep, k).unwrap();
                        seen[i] = true;
                        assert_eq!(g.type_of(rep.without(k)), st.involved[i]);
                        assert!(st.members(&g, rep, i).contains(k));
                    }
                    assert!(seen.iter().all(|&x| x));
                    let sizes: usize = st.unique_sets.iter().map(UniqueSet::size).sum();
                    assert_eq!(sizes, t + 1);
                    let mut distinct = st.involved.clone();
                    distinct.sort();
                    distinct.dedup();
                    assert_eq!(distinct.len(), st.len());
                }
            }
        }
    }

    proptest! {
        #[test]
        fn type_vector_text_round_trip(blocks in prop::collection::vec(prop::collection::vec(0usize..9, 1..5), 1..4)) {
            let blocks: Vec<Vec<usize>> = blocks
                .into_iter()
                .map(|mut b| { b.sort_unstable_by(|a, c| c.cmp(a)); b })
                .collect();
            let v = TypeVector::from_blocks(blocks);
            prop_assert_eq!(v.to_string().parse::<TypeVector>().unwrap(), v);
        }

        #[test]
        fn type_counts_sum_to_binomial(sizes in prop::collection::vec(1usize..6, 1..5), t in 0usize..20) {
            let mut sizes = sizes;
            sizes.sort_unstable_by(|a, b| b.cmp(a));
            let k: usize = sizes.iter().sum();
            let g = Grouping::new(k, sizes).unwrap();
            let types = g.enumerate_types(t).unwrap();
            let total: u64 = types.iter().map(|(_, c)| c).sum();
            prop_assert_eq!(total, combinat::binomial(k as u64, t as u64).unwrap());
            for w in types.windows(2) {
                prop_assert!(w[0].0 > w[1].0);
            }
        }

        #[test]
        fn type_is_invariant_under_in_group_relabeling(seed in any::<u64>(), t in 1usize..8) {
            // Swapping two users of the same group never changes a type.
            let g = Grouping::new(9, vec![4, 3, 2]).unwrap();
            let pick: Vec<usize> = (1..=9).filter(|u| (seed >> u) & 1 == 1).take(t).collect();
            let set = UserSet::from_users(pick.iter().copied());
            let swapped = UserSet::from_users(pick.iter().map(|&u| match u { 1 => 2, 2 => 1, 5 => 7, 7 => 5, x => x }));
            prop_assert_eq!(g.type_of(set), g.type_of(swapped));
        }

        #[test]
        fn per_user_counts_sum_consistently(sizes in prop::collection::vec(1usize..5, 1..5), t in 1usize..10) {
            // Summing over users of a block counts each set once per member there.
            let mut sizes = sizes;
            sizes.sort_unstable_by(|a, b| b.cmp(a));
            let k: usize = sizes.iter().sum();
            prop_assume!(t <= k);
            let g = Grouping::new(k, sizes).unwrap();
            for (v, count) in g.enumerate_types(t).unwrap() {
                for (bi, b) in g.blocks().iter().enumerate() {
                    let members: usize = v.blocks()[bi].iter().sum();
                    prop_assert_eq!(
                        g.per_user_count(&v, bi).unwrap() * b.users() as u64,
                        count * members as u64
                    );
                }
            }
        }
    }
}
