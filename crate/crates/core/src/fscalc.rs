//! Local and global file-splitting factors, the memory-constraint check and
//! subpacketization.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::{BigRational, Ratio};
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::combinat::{self, CombinatError};
use crate::typing::{Grouping, MGroupStructure, TypeVector, TypingError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FsError {
    #[error("transmitter set is empty")]
    EmptyTransmitterSet,
    #[error("unique-set index {index} out of range ({available} unique sets)")]
    TransmitterOutOfRange { index: usize, available: usize },
    #[error("unique-set index {0} listed twice")]
    DuplicateTransmitter(usize),
    #[error("no consistent vector LCM: column {column} couples rows {rows:?} inconsistently")]
    NoLcm { column: usize, rows: (usize, usize) },
    #[error("row {row} has {got} entries, expected {expected}")]
    RaggedRow { row: usize, got: usize, expected: usize },
    #[error("no transmitter rule for group type {0}")]
    MissingRule(String),
    #[error("rule given for group type {0}, which does not occur")]
    UnknownGroupType(String),
    #[error("integer overflow in {0}")]
    Overflow(&'static str),
    #[error("t = {t} outside 1..K-1 for K = {users}")]
    InvalidT { t: usize, users: usize },
    #[error(transparent)]
    Typing(#[from] TypingError),
    #[error(transparent)]
    Combinat(#[from] CombinatError),
}

/// One entry of an FS table: a factor, or `Absent` when the group does not
/// involve that subfile type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FsEntry {
    Absent,
    Value(u64),
}

impl Serialize for FsEntry {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            FsEntry::Absent => serializer.serialize_str("star"),
            FsEntry::Value(v) => serializer.serialize_u64(*v),
        }
    }
}

/// Transmitter selection for one group type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TxRule {
    /// Indices into the group type's unique sets (canonical order, 0-based).
    Transmit(Vec<usize>),
    /// The group type is never visited.
    #[serde(with = "skip_tag")]
    Skip,
}

mod skip_tag {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str("skip")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<(), D::Error> {
        let s = String::deserialize(deserializer)?;
        if s == "skip" {
            Ok(())
        } else {
            Err(serde::de::Error::custom(format!("expected \"skip\", got {s:?}")))
        }
    }
}

impl TxRule {
    pub fn all(structure: &MGroupStructure) -> Self {
        TxRule::Transmit((0..structure.len()).collect())
    }

    pub fn transmitters(&self) -> Option<&[usize]> {
        match self {
            TxRule::Transmit(ix) => Some(ix),
            TxRule::Skip => None,
        }
    }
}

/// Local FS factor per unique set of a group type: how many packets of the
/// owning involved type each of those users receives per transmission round.
pub fn local_fs(structure: &MGroupStructure, d_tx: &[usize]) -> Result<Vec<u64>, FsError> {
    if d_tx.is_empty() {
        return Err(FsError::EmptyTransmitterSet);
    }
    let mut is_tx = vec![false; structure.len()];
    for &i in d_tx {
        if i >= structure.len() {
            return Err(FsError::TransmitterOutOfRange {
                index: i,
                available: structure.len(),
            });
        }
        if is_tx[i] {
            return Err(FsError::DuplicateTransmitter(i));
        }
        is_tx[i] = true;
    }
    let tx_users: u64 = d_tx
        .iter()
        .map(|&i| structure.unique_sets[i].size() as u64)
        .sum();
    Ok(is_tx
        .iter()
        .map(|&tx| if tx { tx_users - 1 } else { tx_users })
        .collect())
}

/// How explicit zero entries are treated by [`vector_lcm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeroPolicy {
    /// A zero anywhere in a column excludes that subfile type.
    Exclude,
    /// Zeros behave like absent entries.
    Wildcard,
}

/// Result of the vector LCM: one global factor per column and the integer
/// scale `z` applied to each row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GlobalFs {
    pub factors: Vec<u64>,
    pub row_scales: Vec<u64>,
}

/// Weighted union-find; `ratio[r]` is `z_r / z_parent(r)`.
struct RatioForest {
    parent: Vec<usize>,
    ratio: Vec<BigRational>,
}

impl RatioForest {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            ratio: vec![BigRational::one(); n],
        }
    }

    /// Root of `r` and `z_r / z_root`.
    fn find(&mut self, r: usize) -> (usize, BigRational) {
        let p = self.parent[r];
        if p == r {
            return (r, BigRational::one());
        }
        let (root, to_root) = self.find(p);
        let ratio = &self.ratio[r] * to_root;
        self.parent[r] = root;
        self.ratio[r] = ratio.clone();
        (root, ratio)
    }
}

/// Smallest positive integer row scales `z` such that `z_i * a_ij` is the same
/// for every active entry of each column.
///
/// Rows are coupled through shared columns; propagation runs over columns in
/// ascending order and over rows in ascending order, and each connected
/// component is normalized to coprime integers. Rows with no active entry get
/// `z = 1`; columns with no active entry get factor `0`.
pub fn vector_lcm(rows: &[Vec<FsEntry>], policy: ZeroPolicy) -> Result<GlobalFs, FsError> {
    let width = rows.first().map_or(0, Vec::len);
    for (row, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(FsError::RaggedRow {
                row,
                got: r.len(),
                expected: width,
            });
        }
    }
    let excluded: Vec<bool> = (0..width)
        .map(|j| {
            policy == ZeroPolicy::Exclude && rows.iter().any(|r| r[j] == FsEntry::Value(0))
        })
        .collect();
    let active = |i: usize, j: usize| -> Option<u64> {
        match rows[i][j] {
            FsEntry::Value(v) if v > 0 && !excluded[j] => Some(v),
            _ => None,
        }
    };

    let mut forest = RatioForest::new(rows.len());
    for j in 0..width {
        let mut members = (0..rows.len()).filter_map(|i| active(i, j).map(|a| (i, a)));
        let Some((anchor, a_anchor)) = members.next() else {
            continue;
        };
        for (r, a_r) in members {
            let required = BigRational::new(BigInt::from(a_anchor), BigInt::from(a_r));
            let (root_a, pa) = forest.find(anchor);
            let (root_r, pr) = forest.find(r);
            if root_a == root_r {
                if pr != required * pa {
                    return Err(FsError::NoLcm {
                        column: j,
                        rows: (anchor, r),
                    });
                }
            } else {
                // z_rootR / z_rootA = (z_r / z_anchor) * (z_anchor / z_rootA) / (z_r / z_rootR)
                forest.ratio[root_r] = required * pa / pr;
                forest.parent[root_r] = root_a;
            }
        }
    }

    let mut components: BTreeMap<usize, Vec<(usize, BigRational)>> = BTreeMap::new();
    for i in 0..rows.len() {
        let (root, ratio) = forest.find(i);
        components.entry(root).or_default().push((i, ratio));
    }
    let mut row_scales = vec![0u64; rows.len()];
    for members in components.values() {
        let denom = members
            .iter()
            .fold(BigInt::one(), |acc, (_, q)| acc.lcm(q.denom()));
        let scaled: Vec<BigInt> = members
            .iter()
            .map(|(_, q)| (q * BigRational::from_integer(denom.clone())).to_integer())
            .collect();
        let common = scaled.iter().fold(BigInt::zero(), |acc, z| acc.gcd(z));
        for ((i, _), z) in members.iter().zip(scaled) {
            row_scales[*i] = (z / &common)
                .to_u64()
                .ok_or(FsError::Overflow("row scale"))?;
        }
    }

    let factors = (0..width)
        .map(|j| {
            (0..rows.len())
                .find_map(|i| active(i, j).map(|a| (i, a)))
                .map_or(Ok(0), |(i, a)| {
                    row_scales[i]
                        .checked_mul(a)
                        .ok_or(FsError::Overflow("global factor"))
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GlobalFs {
        factors,
        row_scales,
    })
}

/// One row of an FS table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FsRow {
    pub structure: MGroupStructure,
    pub rule: TxRule,
    /// Local factors laid out over the table columns.
    pub entries: Vec<FsEntry>,
}

impl FsRow {
    pub fn group_type(&self) -> &TypeVector {
        &self.structure.group_type
    }
}

/// Local FS factors of every group type, over the subfile-type columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FsTable {
    pub columns: Vec<TypeVector>,
    pub rows: Vec<FsRow>,
}

#[derive(Serialize)]
struct FsTableDoc<'a> {
    columns: &'a [TypeVector],
    rows: serde_json::Map<String, serde_json::Value>,
}

impl FsTable {
    /// Builds the table for `grouping` and `t` from one rule per group type.
    pub fn build(
        grouping: &Grouping,
        t: usize,
        rules: &BTreeMap<TypeVector, TxRule>,
    ) -> Result<Self, FsError> {
        if t == 0 || t >= grouping.users() {
            return Err(FsError::InvalidT {
                t,
                users: grouping.users(),
            });
        }
        let columns: Vec<TypeVector> = grouping
            .enumerate_types(t)?
            .into_iter()
            .map(|(v, _)| v)
            .collect();
        let group_types = grouping.enumerate_types(t + 1)?;
        for key in rules.keys() {
            if !group_types.iter().any(|(s, _)| s == key) {
                return Err(FsError::UnknownGroupType(key.to_string()));
            }
        }
        let rows = group_types
            .into_iter()
            .map(|(s, _)| {
                let rule = rules
                    .get(&s)
                    .cloned()
                    .ok_or_else(|| FsError::MissingRule(s.to_string()))?;
                let structure = grouping.mgroup_structure(&s)?;
                let mut entries = vec![FsEntry::Absent; columns.len()];
                if let TxRule::Transmit(d_tx) = &rule {
                    let local = local_fs(&structure, d_tx)?;
                    for (v, a) in structure.involved.iter().zip(local) {
                        let col = columns
                            .iter()
                            .position(|c| c == v)
                            .expect("involved type is a subfile type");
                        entries[col] = FsEntry::Value(a);
                    }
                }
                Ok(FsRow {
                    structure,
                    rule,
                    entries,
                })
            })
            .collect::<Result<Vec<_>, FsError>>()?;
        Ok(Self { columns, rows })
    }

    pub fn entry_rows(&self) -> Vec<Vec<FsEntry>> {
        self.rows.iter().map(|r| r.entries.clone()).collect()
    }

    pub fn column_of(&self, v: &TypeVector) -> Option<usize> {
        self.columns.iter().position(|c| c == v)
    }

    /// JSON document: `{"columns": [...], "rows": {"<group type>": [entries]}}`.
    pub fn to_json(&self) -> serde_json::Value {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                (
                    r.group_type().to_string(),
                    serde_json::to_value(&r.entries).expect("entries serialize"),
                )
            })
            .collect();
        serde_json::to_value(FsTableDoc {
            columns: &self.columns,
            rows,
        })
        .expect("table serializes")
    }
}

/// Per-user subfile counts, one row per q-block, and successive differences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct McTable {
    pub rows: Vec<Vec<u64>>,
    pub deltas: Vec<Vec<i128>>,
}

impl McTable {
    pub fn build(grouping: &Grouping, columns: &[TypeVector]) -> Result<Self, FsError> {
        let rows = (0..grouping.blocks().len())
            .map(|b| {
                columns
                    .iter()
                    .map(|v| grouping.per_user_count(v, b))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let deltas = rows
            .windows(2)
            .map(|w| {
                w[1].iter()
                    .zip(&w[0])
                    .map(|(&next, &cur)| i128::from(next) - i128::from(cur))
                    .collect()
            })
            .collect();
        Ok(Self { rows, deltas })
    }
}

/// Outcome of the memory-constraint check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "result", rename_all = "lowercase")]
pub enum McOutcome {
    Pass,
    /// Cached packets differ between q-blocks `index` and `index + 1`.
    Fail { index: usize, lhs: i128, rhs: i128 },
}

impl McOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, McOutcome::Pass)
    }
}

/// Every user must cache the same number of packets: `factors · delta == 0`.
pub fn mc_check(factors: &[u64], table: &McTable) -> McOutcome {
    let cached = |row: &[u64]| -> i128 {
        row.iter()
            .zip(factors)
            .map(|(&f, &a)| i128::from(f) * i128::from(a))
            .sum()
    };
    for (index, pair) in table.rows.windows(2).enumerate() {
        let lhs = cached(&pair[0]);
        let rhs = cached(&pair[1]);
        if lhs != rhs {
            return McOutcome::Fail { index, lhs, rhs };
        }
    }
    McOutcome::Pass
}

/// Total packets per file: `sum_j factors_j * counts_j`.
pub fn subpacketization(factors: &[u64], counts: &[u64]) -> Result<u64, FsError> {
    if factors.len() != counts.len() {
        return Err(FsError::RaggedRow {
            row: 0,
            got: counts.len(),
            expected: factors.len(),
        });
    }
    factors.iter().zip(counts).try_fold(0u64, |acc, (&a, &c)| {
        a.checked_mul(c)
            .and_then(|x| acc.checked_add(x))
            .ok_or(FsError::Overflow("subpacketization"))
    })
}

/// Subpacketization `t * C(K, t)` and rate `(K - t) / t` of the baseline scheme.
pub fn jcm_baseline(users: usize, t: usize) -> Result<(u64, Ratio<u64>), FsError> {
    if t == 0 || t >= users {
        return Err(FsError::InvalidT { t, users });
    }
    let f = combinat::binomial(users as u64, t as u64)?
        .checked_mul(t as u64)
        .ok_or(FsError::Overflow("baseline subpacketization"))?;
    Ok((f, Ratio::new((users - t) as u64, t as u64)))
}
