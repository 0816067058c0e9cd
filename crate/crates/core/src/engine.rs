//! Scheme assembly and bit-exact execution: file splitting, cache placement,
//! coded delivery, decoding, and rate/memory accounting.

use std::collections::{BTreeMap, HashMap};

use num_rational::Ratio;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::combinat;
use crate::fscalc::{self, FsError, FsTable, GlobalFs, McOutcome, McTable, TxRule, ZeroPolicy};
use crate::typing::{Grouping, TypeVector, TypingError, UserSet};

pub const PLAN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("K*M/N = {users}*{memory}/{files} is not an integer")]
    NonIntegerT { users: usize, files: usize, memory: usize },
    #[error("t = {t} outside 1..={max}")]
    TOutOfRange { t: usize, max: usize },
    #[error("invalid system parameters: {0}")]
    InvalidParams(String),
    #[error("types: {0}")]
    Types(#[from] TypingError),
    #[error("local FS: {0}")]
    LocalFs(FsError),
    #[error("vector LCM: {0}")]
    NoLcm(FsError),
    #[error("degrees of freedom: group type {group_type} sends useful data for excluded subfile type {subfile_type}")]
    DofLoss { group_type: String, subfile_type: String },
    #[error("skipped group type {group_type} involves non-excluded subfile type {subfile_type}")]
    SkippedTypeInUse { group_type: String, subfile_type: String },
    #[error("memory constraint: q-blocks {index} and {next} cache {lhs} vs {rhs} packets", next = .index + 1)]
    McViolation { index: usize, lhs: i128, rhs: i128 },
    #[error("no subfile type survives exclusion")]
    NothingCached,
    #[error("integer overflow in {0}")]
    Overflow(&'static str),
}

impl PlanError {
    /// Pipeline stage that rejected the plan.
    pub fn stage(&self) -> &'static str {
        match self {
            PlanError::NonIntegerT { .. }
            | PlanError::TOutOfRange { .. }
            | PlanError::InvalidParams(_) => "params",
            PlanError::Types(_) => "types",
            PlanError::LocalFs(_) => "local_fs",
            PlanError::NoLcm(_) => "vector_lcm",
            PlanError::DofLoss { .. } | PlanError::SkippedTypeInUse { .. } => "dof",
            PlanError::McViolation { .. } => "memory_constraint",
            PlanError::NothingCached => "exclusion",
            PlanError::Overflow(_) => "arithmetic",
        }
    }
}

impl From<FsError> for PlanError {
    fn from(e: FsError) -> Self {
        match e {
            FsError::NoLcm { .. } => PlanError::NoLcm(e),
            FsError::Typing(t) => PlanError::Types(t),
            FsError::Overflow(what) => PlanError::Overflow(what),
            other => PlanError::LocalFs(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Types(#[from] TypingError),
    #[error("file length {len} bytes is not a multiple of F_PT = {f_pt} packets")]
    FileSize { len: usize, f_pt: u64 },
    #[error("expected {expected} files, got {got}")]
    FileCount { expected: usize, got: usize },
    #[error("files must have equal, nonzero length")]
    RaggedFiles,
    #[error("demand vector must have {users} entries in 1..={files}")]
    BadDemand { users: usize, files: usize },
    #[error("counter for user {user} in group {group:?} exceeds {limit} chunks")]
    CounterOverflow { user: usize, group: UserSet, limit: u64 },
    #[error("placement must run before delivery")]
    NotPlaced,
    #[error("delivery must run before decoding")]
    NotDelivered,
}

/// `(K, N, M)`: users, files, and per-user cache size in files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SystemParams {
    #[serde(rename = "K")]
    pub users: usize,
    #[serde(rename = "N")]
    pub files: usize,
    #[serde(rename = "M")]
    pub memory: usize,
}

impl SystemParams {
    pub fn new(users: usize, files: usize, memory: usize) -> Result<Self, PlanError> {
        let p = Self {
            users,
            files,
            memory,
        };
        p.t()?;
        Ok(p)
    }

    /// Smallest `(N, M)` with `K*M/N == t`.
    pub fn from_t(users: usize, t: usize) -> Result<Self, PlanError> {
        if users == 0 || t == 0 || t >= users {
            return Err(PlanError::TOutOfRange {
                t,
                max: users.saturating_sub(1),
            });
        }
        let g = combinat::gcd(users as u64, t as u64) as usize;
        Self::new(users, users / g, t / g)
    }

    /// Aggregate memory `t = K*M/N`.
    pub fn t(&self) -> Result<usize, PlanError> {
        if self.users < 2 || self.files == 0 {
            return Err(PlanError::InvalidParams(format!(
                "need K >= 2 and N >= 1, got K={} N={}",
                self.users, self.files
            )));
        }
        let km = self.users * self.memory;
        if !km.is_multiple_of(self.files) {
            return Err(PlanError::NonIntegerT {
                users: self.users,
                files: self.files,
                memory: self.memory,
            });
        }
        let t = km / self.files;
        if t == 0 || t >= self.users {
            return Err(PlanError::TOutOfRange {
                t,
                max: self.users - 1,
            });
        }
        Ok(t)
    }
}

/// A validated packet-type scheme.
#[derive(Debug, Clone)]
pub struct SchemePlan {
    pub params: SystemParams,
    pub t: usize,
    pub grouping: Grouping,
    pub table: FsTable,
    pub global: GlobalFs,
    /// `F(v)` per subfile type, aligned with `table.columns`.
    pub subfile_counts: Vec<u64>,
    pub mc: McTable,
    pub f_pt: u64,
    pub rate: Ratio<u64>,
}

/// Runs the full design pipeline and rejects with the failing stage.
pub fn build_plan(
    params: SystemParams,
    grouping_sizes: &[usize],
    rules: &BTreeMap<TypeVector, TxRule>,
) -> Result<SchemePlan, PlanError> {
    let t = params.t()?;
    let grouping = Grouping::new(params.users, grouping_sizes.to_vec())?;
    let table = FsTable::build(&grouping, t, rules)?;
    let subfile_counts = table
        .columns
        .iter()
        .map(|v| grouping.type_count(v))
        .collect::<Result<Vec<_>, _>>()?;
    let mc = McTable::build(&grouping, &table.columns)?;
    assemble_plan(params, grouping, table, subfile_counts, mc)
}

/// The checks of [`build_plan`] after the FS table is known; the search reuses
/// per-grouping column data through this entry point.
pub(crate) fn assemble_plan(
    params: SystemParams,
    grouping: Grouping,
    table: FsTable,
    subfile_counts: Vec<u64>,
    mc: McTable,
) -> Result<SchemePlan, PlanError> {
    let t = params.t()?;
    let global = fscalc::vector_lcm(&table.entry_rows(), ZeroPolicy::Exclude)?;
    check_dof(&table, &global)?;
    if let McOutcome::Fail { index, lhs, rhs } = fscalc::mc_check(&global.factors, &mc) {
        return Err(PlanError::McViolation { index, lhs, rhs });
    }
    let f_pt = fscalc::subpacketization(&global.factors, &subfile_counts)?;
    if f_pt == 0 {
        return Err(PlanError::NothingCached);
    }
    let rate = Ratio::new((params.users - t) as u64, t as u64);
    Ok(SchemePlan {
        params,
        t,
        grouping,
        table,
        global,
        subfile_counts,
        mc,
        f_pt,
        rate,
    })
}

/// In a group that is visited, every involved type with a nonzero local factor
/// must survive exclusion, or some messages would reach fewer than `t` users.
/// A skipped group may only involve excluded types.
fn check_dof(table: &FsTable, global: &GlobalFs) -> Result<(), PlanError> {
    for row in &table.rows {
        let live: Vec<(usize, bool)> = row
            .structure
            .involved
            .iter()
            .map(|v| {
                let col = table.column_of(v).expect("involved type is a column");
                (col, global.factors[col] > 0)
            })
            .collect();
        match &row.rule {
            TxRule::Skip => {
                if let Some(&(col, _)) = live.iter().find(|(_, alive)| *alive) {
                    return Err(PlanError::SkippedTypeInUse {
                        group_type: row.group_type().to_string(),
                        subfile_type: table.columns[col].to_string(),
                    });
                }
            }
            TxRule::Transmit(_) => {
                if !live.iter().any(|(_, alive)| *alive) {
                    continue;
                }
                for &(col, alive) in &live {
                    let local = row.entries[col];
                    if !alive && local != fscalc::FsEntry::Value(0) {
                        return Err(PlanError::DofLoss {
                            group_type: row.group_type().to_string(),
                            subfile_type: table.columns[col].to_string(),
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct PlanDoc<'a> {
    schema_version: u32,
    #[serde(flatten)]
    params: SystemParams,
    t: usize,
    grouping: &'a [usize],
    tx_rules: serde_json::Map<String, serde_json::Value>,
    subfile_types: &'a [TypeVector],
    subfile_counts: &'a [u64],
    global_fs: &'a [u64],
    #[serde(rename = "F_PT")]
    f_pt: u64,
    #[serde(rename = "F_JCM")]
    f_jcm: u64,
    rate: String,
    excluded_types: Vec<&'a TypeVector>,
}

impl SchemePlan {
    pub fn users(&self) -> usize {
        self.params.users
    }

    pub fn columns(&self) -> &[TypeVector] {
        &self.table.columns
    }

    pub fn factor_of(&self, v: &TypeVector) -> Option<u64> {
        self.table.column_of(v).map(|c| self.global.factors[c])
    }

    pub fn excluded_types(&self) -> Vec<&TypeVector> {
        self.table
            .columns
            .iter()
            .zip(&self.global.factors)
            .filter(|(_, &a)| a == 0)
            .map(|(v, _)| v)
            .collect()
    }

    pub fn f_jcm(&self) -> u64 {
        fscalc::jcm_baseline(self.params.users, self.t)
            .map(|(f, _)| f)
            .expect("t validated")
    }

    /// Whether the delivery phase visits groups of table row `row`.
    pub fn is_visited(&self, row: usize) -> bool {
        let r = &self.table.rows[row];
        matches!(r.rule, TxRule::Transmit(_))
            && r.structure.involved.iter().any(|v| self.factor_of(v) > Some(0))
    }

    pub fn rules(&self) -> BTreeMap<TypeVector, TxRule> {
        self.table
            .rows
            .iter()
            .map(|r| (r.group_type().clone(), r.rule.clone()))
            .collect()
    }

    /// Packets each user caches: `sum_v factor(v) * F_i(v)` for its q-block.
    pub fn cached_packets_per_file(&self) -> Vec<u64> {
        self.mc
            .rows
            .iter()
            .map(|row| row.iter().zip(&self.global.factors).map(|(f, a)| f * a).sum())
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let tx_rules = self
            .table
            .rows
            .iter()
            .map(|r| {
                (
                    r.group_type().to_string(),
                    serde_json::to_value(&r.rule).expect("rule serializes"),
                )
            })
            .collect();
        serde_json::to_value(PlanDoc {
            schema_version: PLAN_SCHEMA_VERSION,
            params: self.params,
            t: self.t,
            grouping: self.grouping.sizes(),
            tx_rules,
            subfile_types: &self.table.columns,
            subfile_counts: &self.subfile_counts,
            global_fs: &self.global.factors,
            f_pt: self.f_pt,
            f_jcm: self.f_jcm(),
            rate: self.rate.to_string(),
            excluded_types: self.excluded_types(),
        })
        .expect("plan serializes")
    }

    /// Rebuilds a plan from its JSON form, re-running every check.
    pub fn from_json(doc: &serde_json::Value) -> Result<Self, PlanError> {
        let bad = |what: &str| PlanError::InvalidParams(format!("plan JSON: {what}"));
        let field = |name: &str| {
            doc.get(name)
                .and_then(serde_json::Value::as_u64)
                .map(|v| v as usize)
                .ok_or_else(|| bad(name))
        };
        let params = SystemParams::new(field("K")?, field("N")?, field("M")?)?;
        let grouping: Vec<usize> = doc
            .get("grouping")
            .cloned()
            .and_then(|g| serde_json::from_value(g).ok())
            .ok_or_else(|| bad("grouping"))?;
        let rules: BTreeMap<TypeVector, TxRule> = doc
            .get("tx_rules")
            .cloned()
            .and_then(|r| serde_json::from_value(r).ok())
            .ok_or_else(|| bad("tx_rules"))?;
        build_plan(params, &grouping, &rules)
    }

    /// Packet layout of one file; needs concrete user sets (K <= 64).
    pub fn packet_map(&self) -> Result<PacketMap, EngineError> {
        self.grouping.ensure_concrete()?;
        let mut ranges = Vec::new();
        let mut index = HashMap::new();
        let mut offset = 0u64;
        for users in combinat::subsets(self.users(), self.t).map_err(TypingError::from)? {
            let subset = UserSet::from_users(users);
            let width = self
                .factor_of(&self.grouping.type_of(subset))
                .expect("every t-subset has a column");
            if width == 0 {
                continue;
            }
            index.insert(subset, ranges.len());
            ranges.push(PacketRange {
                subset,
                offset,
                width,
            });
            offset += width;
        }
        debug_assert_eq!(offset, self.f_pt);
        Ok(PacketMap { ranges, index })
    }
}

/// Contiguous packet indices `[offset, offset + width)` of one subfile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PacketRange {
    pub subset: UserSet,
    pub offset: u64,
    pub width: u64,
}

/// Layout of every file: non-excluded `t`-subsets in lexicographic order.
#[derive(Debug, Clone)]
pub struct PacketMap {
    ranges: Vec<PacketRange>,
    index: HashMap<UserSet, usize>,
}

impl PacketMap {
    pub fn ranges(&self) -> &[PacketRange] {
        &self.ranges
    }

    pub fn get(&self, subset: UserSet) -> Option<PacketRange> {
        self.index.get(&subset).map(|&i| self.ranges[i])
    }

    pub fn total(&self) -> u64 {
        self.ranges.iter().map(|r| r.width).sum()
    }
}

/// Packet `split` (0-based) of subfile `W_{file, subset}`; files are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct PacketId {
    pub file: usize,
    pub subset: UserSet,
    pub split: u64,
}

/// One XOR term of a coded message: chunk `chunk` (1-based) of the subfile
/// `W_{file, subset}` intended for `receiver`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Term {
    pub receiver: usize,
    pub file: usize,
    pub subset: UserSet,
    pub chunk: u64,
}

impl Term {
    pub fn packets(&self, width: u64) -> impl Iterator<Item = PacketId> + '_ {
        let first = (self.chunk - 1) * width;
        (first..first + width).map(move |split| PacketId {
            file: self.file,
            subset: self.subset,
            split,
        })
    }
}

/// A coded message: `width` packet slots, each the XOR of one packet per term.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Message {
    pub transmitter: usize,
    pub group: UserSet,
    pub width: u64,
    pub terms: Vec<Term>,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn receivers(&self) -> Vec<usize> {
        self.terms.iter().map(|t| t.receiver).collect()
    }

    /// Transcript record `{tx, group, rx, counter_snapshot, payload_hex}`.
    pub fn to_record(&self) -> serde_json::Value {
        let snapshot: serde_json::Map<String, serde_json::Value> = self
            .terms
            .iter()
            .map(|t| (t.receiver.to_string(), json!(t.chunk)))
            .collect();
        json!({
            "tx": self.transmitter,
            "group": self.group.to_vec(),
            "rx": self.receivers(),
            "counter_snapshot": snapshot,
            "payload_hex": hex::encode(&self.payload),
        })
    }
}

/// Delivery visiting order of concrete groups within each group type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupOrder {
    Lexicographic,
    Shuffled(u64),
}

/// Per-user decoding result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UserReport {
    pub user: usize,
    pub ok: bool,
    pub decoded_packets: usize,
    /// Decoded packets that were already cached; nonzero means wasted airtime.
    pub redundant_packets: usize,
    /// Messages addressed to this user that it could not strip.
    pub undecodable_messages: usize,
    pub missing: Vec<PacketId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecodeReport {
    pub users: Vec<UserReport>,
}

impl DecodeReport {
    pub fn all_ok(&self) -> bool {
        self.users.iter().all(|u| u.ok)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Measurements {
    pub total_bits: u64,
    #[serde(serialize_with = "ratio_string")]
    pub rate: Ratio<u64>,
    pub per_user_cache_bits: Vec<u64>,
    pub messages: usize,
}

fn ratio_string<S: serde::Serializer>(r: &Ratio<u64>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(r)
}

type Cache = HashMap<PacketId, Vec<u8>>;

/// Files, caches, demand and transcript for one run of a plan.
pub struct DeliverySession<'p> {
    plan: &'p SchemePlan,
    map: PacketMap,
    packet_bytes: usize,
    files: Vec<Vec<u8>>,
    demand: Vec<usize>,
    caches: Option<Vec<Cache>>,
    transcript: Option<Vec<Message>>,
}

impl<'p> DeliverySession<'p> {
    /// Validates files (equal length, a multiple of `F_PT` bytes) and the demand.
    pub fn new(
        plan: &'p SchemePlan,
        files: Vec<Vec<u8>>,
        demand: Vec<usize>,
    ) -> Result<Self, EngineError> {
        let p = plan.params;
        if files.len() != p.files {
            return Err(EngineError::FileCount {
                expected: p.files,
                got: files.len(),
            });
        }
        let len = files[0].len();
        if len == 0 || files.iter().any(|f| f.len() != len) {
            return Err(EngineError::RaggedFiles);
        }
        if !(len as u64).is_multiple_of(plan.f_pt) {
            return Err(EngineError::FileSize {
                len,
                f_pt: plan.f_pt,
            });
        }
        check_demand(&demand, p)?;
        Ok(Self {
            plan,
            map: plan.packet_map()?,
            packet_bytes: (len as u64 / plan.f_pt) as usize,
            files,
            demand,
            caches: None,
            transcript: None,
        })
    }

    pub fn packet_map(&self) -> &PacketMap {
        &self.map
    }

    fn packet(&self, id: PacketId) -> &[u8] {
        let range = self.map.get(id.subset).expect("packet in map");
        let start = ((range.offset + id.split) as usize) * self.packet_bytes;
        &self.files[id.file - 1][start..start + self.packet_bytes]
    }

    /// User `k` stores every packet whose subset contains `k`.
    pub fn place(&mut self) -> &[Cache] {
        let k = self.plan.users();
        let mut caches: Vec<Cache> = vec![HashMap::new(); k];
        for range in self.map.ranges() {
            for file in 1..=self.plan.params.files {
                for split in 0..range.width {
                    let id = PacketId {
                        file,
                        subset: range.subset,
                        split,
                    };
                    let bytes = self.packet(id).to_vec();
                    for user in range.subset.iter() {
                        caches[user - 1].insert(id, bytes.clone());
                    }
                }
            }
        }
        self.caches.insert(caches)
    }

    pub fn caches(&self) -> Option<&[Cache]> {
        self.caches.as_deref()
    }

    pub fn deliver(&mut self) -> Result<&[Message], EngineError> {
        self.deliver_in_order(GroupOrder::Lexicographic)
    }

    /// Visits group types in table order; within a type, concrete groups in
    /// the given order. Transmitters speak in ascending user order.
    pub fn deliver_in_order(&mut self, order: GroupOrder) -> Result<&[Message], EngineError> {
        if self.caches.is_none() {
            return Err(EngineError::NotPlaced);
        }
        let plan = self.plan;
        let g = &plan.grouping;
        let mut by_row: Vec<Vec<UserSet>> = vec![Vec::new(); plan.table.rows.len()];
        let row_of: HashMap<&TypeVector, usize> = plan
            .table
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.group_type(), i))
            .collect();
        for users in combinat::subsets(plan.users(), plan.t + 1).map_err(TypingError::from)? {
            let set = UserSet::from_users(users);
            by_row[row_of[&g.type_of(set)]].push(set);
        }
        if let GroupOrder::Shuffled(seed) = order {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for groups in &mut by_row {
                for i in (1..groups.len()).rev() {
                    groups.swap(i, rng.random_range(0..=i));
                }
            }
        }

        let mut transcript = Vec::new();
        for (row_index, groups) in by_row.iter().enumerate() {
            if !plan.is_visited(row_index) {
                continue;
            }
            let row = &plan.table.rows[row_index];
            let d_tx = row.rule.transmitters().expect("visited rows transmit");
            let width = plan.global.row_scales[row_index];
            for &group in groups {
                let tx_users = d_tx
                    .iter()
                    .fold(UserSet::EMPTY, |acc, &i| {
                        acc.union(row.structure.members(g, group, i))
                    });
                let mut counters: HashMap<usize, u64> = HashMap::new();
                for tx in tx_users.iter() {
                    let mut terms = Vec::new();
                    for rx in group.without(tx).iter() {
                        let subset = group.without(rx);
                        let factor = plan.factor_of(&g.type_of(subset)).expect("column");
                        if factor == 0 {
                            continue;
                        }
                        let c = counters.entry(rx).or_insert(0);
                        *c += 1;
                        let limit = factor / width;
                        if *c > limit {
                            return Err(EngineError::CounterOverflow {
                                user: rx,
                                group,
                                limit,
                            });
                        }
                        terms.push(Term {
                            receiver: rx,
                            file: self.demand[rx - 1],
                            subset,
                            chunk: *c,
                        });
                    }
                    if terms.is_empty() {
                        continue;
                    }
                    let mut payload = vec![0u8; width as usize * self.packet_bytes];
                    for term in &terms {
                        for (slot, id) in term.packets(width).enumerate() {
                            let dst = &mut payload
                                [slot * self.packet_bytes..(slot + 1) * self.packet_bytes];
                            xor_into(dst, self.packet(id));
                        }
                    }
                    transcript.push(Message {
                        transmitter: tx,
                        group,
                        width,
                        terms,
                        payload,
                    });
                }
            }
        }
        Ok(self.transcript.insert(transcript))
    }

    pub fn transcript(&self) -> Option<&[Message]> {
        self.transcript.as_deref()
    }

    /// Each user strips cached terms from the messages addressed to it and
    /// rebuilds its demanded file from cache plus decoded packets.
    pub fn decode_and_verify(&self) -> Result<DecodeReport, EngineError> {
        let caches = self.caches.as_ref().ok_or(EngineError::NotPlaced)?;
        let transcript = self.transcript.as_ref().ok_or(EngineError::NotDelivered)?;
        let users = (1..=self.plan.users())
            .map(|user| {
                decode_user(
                    user,
                    &caches[user - 1],
                    transcript,
                    self.packet_bytes,
                    &self.map,
                    self.demand[user - 1],
                    &self.files[self.demand[user - 1] - 1],
                )
            })
            .collect();
        Ok(DecodeReport { users })
    }

    pub fn measure(&self) -> Result<Measurements, EngineError> {
        let caches = self.caches.as_ref().ok_or(EngineError::NotPlaced)?;
        let transcript = self.transcript.as_ref().ok_or(EngineError::NotDelivered)?;
        let file_bits = self.files[0].len() as u64 * 8;
        Ok(measurements(caches, transcript, file_bits))
    }
}

fn measurements(caches: &[Cache], transcript: &[Message], file_bits: u64) -> Measurements {
    let total_bits: u64 = transcript.iter().map(|m| m.payload.len() as u64 * 8).sum();
    Measurements {
        total_bits,
        rate: Ratio::new(total_bits, file_bits),
        per_user_cache_bits: caches
            .iter()
            .map(|c| c.values().map(|p| p.len() as u64 * 8).sum())
            .collect(),
        messages: transcript.len(),
    }
}

fn check_demand(demand: &[usize], p: SystemParams) -> Result<(), EngineError> {
    if demand.len() != p.users || demand.iter().any(|&d| d == 0 || d > p.files) {
        return Err(EngineError::BadDemand {
            users: p.users,
            files: p.files,
        });
    }
    Ok(())
}

fn xor_into(dst: &mut [u8], src: &[u8]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
}

/// Decoder for one user, using only its cache, the transcript, and the
/// packet layout (which is public scheme metadata).
fn decode_user(
    user: usize,
    cache: &Cache,
    transcript: &[Message],
    packet_bytes: usize,
    map: &PacketMap,
    wanted_file: usize,
    reference: &[u8],
) -> UserReport {
    let mut decoded: HashMap<PacketId, Vec<u8>> = HashMap::new();
    let mut redundant = 0;
    let mut undecodable = 0;
    for msg in transcript {
        let Some(mine) = msg.terms.iter().find(|t| t.receiver == user) else {
            continue;
        };
        let mut buf = msg.payload.clone();
        let mut ok = true;
        'strip: for other in msg.terms.iter().filter(|t| t.receiver != user) {
            for (slot, id) in other.packets(msg.width).enumerate() {
                match cache.get(&id) {
                    Some(p) => xor_into(&mut buf[slot * packet_bytes..(slot + 1) * packet_bytes], p),
                    None => {
                        ok = false;
                        break 'strip;
                    }
                }
            }
        }
        if !ok {
            undecodable += 1;
            continue;
        }
        for (slot, id) in mine.packets(msg.width).enumerate() {
            if cache.contains_key(&id) || decoded.contains_key(&id) {
                redundant += 1;
            }
            decoded.insert(id, buf[slot * packet_bytes..(slot + 1) * packet_bytes].to_vec());
        }
    }

    let mut missing = Vec::new();
    let mut rebuilt = vec![0u8; reference.len()];
    for range in map.ranges() {
        for split in 0..range.width {
            let id = PacketId {
                file: wanted_file,
                subset: range.subset,
                split,
            };
            match cache.get(&id).or_else(|| decoded.get(&id)) {
                Some(bytes) => {
                    let start = ((range.offset + split) as usize) * packet_bytes;
                    rebuilt[start..start + packet_bytes].copy_from_slice(bytes);
                }
                None => missing.push(id),
            }
        }
    }
    UserReport {
        user,
        ok: missing.is_empty() && undecodable == 0 && rebuilt == reference,
        decoded_packets: decoded.len(),
        redundant_packets: redundant,
        undecodable_messages: undecodable,
        missing,
    }
}

/// Output of the reference baseline run.
#[derive(Debug, Clone)]
pub struct JcmRun {
    pub transcript: Vec<Message>,
    pub measurements: Measurements,
    pub all_decoded: bool,
}

/// Reference implementation of the baseline scheme: every `t`-subset is one
/// subfile of `t` packets, and every user of every `(t+1)`-group transmits.
pub fn run_jcm(
    params: SystemParams,
    files: &[Vec<u8>],
    demand: &[usize],
) -> Result<JcmRun, EngineError> {
    let t = params.t()?;
    let k = params.users;
    if k > crate::typing::MAX_USERS_CONCRETE {
        return Err(TypingError::TooManyUsers(k).into());
    }
    check_demand(demand, params)?;
    if files.len() != params.files {
        return Err(EngineError::FileCount {
            expected: params.files,
            got: files.len(),
        });
    }
    let f = fscalc::jcm_baseline(k, t).map_err(PlanError::from)?.0;
    let len = files[0].len();
    if len == 0 || files.iter().any(|x| x.len() != len) {
        return Err(EngineError::RaggedFiles);
    }
    if !(len as u64).is_multiple_of(f) {
        return Err(EngineError::FileSize { len, f_pt: f });
    }
    let b = (len as u64 / f) as usize;
    let subsets: Vec<UserSet> = combinat::subsets(k, t)
        .map_err(TypingError::from)?
        .map(UserSet::from_users)
        .collect();
    let rank: HashMap<UserSet, usize> = subsets.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let packet = |file: usize, subset: UserSet, split: u64| -> &[u8] {
        let start = (rank[&subset] * t + split as usize) * b;
        &files[file - 1][start..start + b]
    };

    let mut caches: Vec<Cache> = vec![HashMap::new(); k];
    for &subset in &subsets {
        for file in 1..=params.files {
            for split in 0..t as u64 {
                for user in subset.iter() {
                    caches[user - 1].insert(
                        PacketId { file, subset, split },
                        packet(file, subset, split).to_vec(),
                    );
                }
            }
        }
    }

    let mut transcript = Vec::new();
    for users in combinat::subsets(k, t + 1).map_err(TypingError::from)? {
        let group = UserSet::from_users(users);
        let mut counters: HashMap<usize, u64> = HashMap::new();
        for tx in group.iter() {
            let mut payload = vec![0u8; b];
            let terms: Vec<Term> = group
                .without(tx)
                .iter()
                .map(|rx| {
                    let c = counters.entry(rx).or_insert(0);
                    *c += 1;
                    let subset = group.without(rx);
                    xor_into(&mut payload, packet(demand[rx - 1], subset, *c - 1));
                    Term {
                        receiver: rx,
                        file: demand[rx - 1],
                        subset,
                        chunk: *c,
                    }
                })
                .collect();
            transcript.push(Message {
                transmitter: tx,
                group,
                width: 1,
                terms,
                payload,
            });
        }
    }

    let mut all_decoded = true;
    for user in 1..=k {
        let cache = &caches[user - 1];
        let wanted = demand[user - 1];
        let mut have: HashMap<PacketId, Vec<u8>> = HashMap::new();
        for msg in &transcript {
            let Some(mine) = msg.terms.iter().find(|t| t.receiver == user) else {
                continue;
            };
            let mut buf = msg.payload.clone();
            for other in msg.terms.iter().filter(|t| t.receiver != user) {
                let id = PacketId {
                    file: other.file,
                    subset: other.subset,
                    split: other.chunk - 1,
                };
                match cache.get(&id) {
                    Some(p) => xor_into(&mut buf, p),
                    None => all_decoded = false,
                }
            }
            have.insert(
                PacketId {
                    file: wanted,
                    subset: mine.subset,
                    split: mine.chunk - 1,
                },
                buf,
            );
        }
        for &subset in &subsets {
            for split in 0..t as u64 {
                let id = PacketId {
                    file: wanted,
                    subset,
                    split,
                };
                let got = cache.get(&id).or_else(|| have.get(&id));
                if got.map(Vec::as_slice) != Some(packet(wanted, subset, split)) {
                    all_decoded = false;
                }
            }
        }
    }
    let measurements = measurements(&caches, &transcript, len as u64 * 8);
    Ok(JcmRun {
        transcript,
        measurements,
        all_decoded,
    })
}

/// Deterministic pseudorandom files of `F_PT * packet_bytes` bytes each.
pub fn random_files(plan: &SchemePlan, packet_bytes: usize, seed: u64) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = plan.f_pt as usize * packet_bytes;
    (0..plan.params.files)
        .map(|_| {
            let mut f = vec![0u8; len];
            rng.fill_bytes(&mut f);
            f
        })
        .collect()
}

/// Which demand vectors a simulation runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DemandSet {
    /// Every vector in `[N]^K`.
    All,
    /// `count` vectors drawn from the seed.
    Random(usize),
    Explicit(Vec<Vec<usize>>),
    /// `All` when `N^K <= 256`, otherwise 100 random vectors.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulationConfig {
    pub packet_bytes: usize,
    pub seed: u64,
    pub demands: DemandSet,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            packet_bytes: 2,
            seed: 1,
            demands: DemandSet::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DemandFailure {
    pub demand: Vec<usize>,
    pub users: Vec<usize>,
}

/// Aggregate outcome of running a plan over many demand vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SimulationReport {
    pub demands_tested: usize,
    pub failures: Vec<DemandFailure>,
    /// Every run achieved the plan's rate and every cache held exactly `M*L` bits.
    pub accounting_ok: bool,
    /// No decoded packet was already cached or decoded before.
    pub no_redundancy: bool,
    #[serde(serialize_with = "ratio_string")]
    pub rate: Ratio<u64>,
    pub messages: usize,
    pub cache_bits: u64,
}

impl SimulationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.accounting_ok && self.no_redundancy
    }
}

pub fn demand_vectors(params: SystemParams, set: &DemandSet, seed: u64) -> Vec<Vec<usize>> {
    let all = || -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new()];
        for _ in 0..params.users {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (1..=params.files).map(move |n| {
                        let mut d = prefix.clone();
                        d.push(n);
                        d
                    })
                })
                .collect();
        }
        out
    };
    let random = |count: usize| -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d3ad);
        (0..count)
            .map(|_| {
                (0..params.users)
                    .map(|_| rng.random_range(1..=params.files))
                    .collect()
            })
            .collect()
    };
    match set {
        DemandSet::All => all(),
        DemandSet::Random(n) => random(*n),
        DemandSet::Explicit(list) => list.clone(),
        DemandSet::Auto => {
            let space = (params.files as f64).powi(params.users as i32);
            if space <= 256.0 {
                all()
            } else {
                random(100)
            }
        }
    }
}

/// Runs place, deliver, decode and measure for every selected demand vector.
pub fn simulate(plan: &SchemePlan, config: &SimulationConfig) -> Result<SimulationReport, EngineError> {
    let files = random_files(plan, config.packet_bytes, config.seed);
    let demands = demand_vectors(plan.params, &config.demands, config.seed);
    for d in &demands {
        check_demand(d, plan.params)?;
    }
    let file_bits = files[0].len() as u64 * 8;
    let expected_cache = file_bits * plan.params.memory as u64;
    let outcomes: Vec<Result<(DecodeReport, Measurements), EngineError>> =
        crate::with_thread_pool(|| {
            demands
                .par_iter()
                .map(|d| {
                    let mut s = DeliverySession::new(plan, files.clone(), d.clone())?;
                    s.place();
                    s.deliver()?;
                    Ok((s.decode_and_verify()?, s.measure()?))
                })
                .collect()
        });
    let mut failures = Vec::new();
    let mut accounting_ok = true;
    let mut no_redundancy = true;
    let mut rate = plan.rate;
    let mut messages = 0;
    for (d, outcome) in demands.iter().zip(outcomes) {
        let (report, m) = outcome?;
        let bad: Vec<usize> = report.users.iter().filter(|u| !u.ok).map(|u| u.user).collect();
        if !bad.is_empty() {
            failures.push(DemandFailure {
                demand: d.clone(),
                users: bad,
            });
        }
        no_redundancy &= report.users.iter().all(|u| u.redundant_packets == 0);
        accounting_ok &= m.rate == plan.rate
            && m.per_user_cache_bits.iter().all(|&c| c == expected_cache);
        rate = m.rate;
        messages = m.messages;
    }
    Ok(SimulationReport {
        demands_tested: demands.len(),
        failures,
        accounting_ok,
        no_redundancy,
        rate,
        messages,
        cache_bits: expected_cache,
    })
}
