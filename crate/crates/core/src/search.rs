//! Exhaustive search over groupings and per-type transmitter selections, and
//! ratio sweeps over the closed-form design families.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;

use num_rational::Ratio;
use num_traits::ToPrimitive;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::combinat;
use crate::designs::{self, DesignError, DesignSpec, Theorem1Variant};
use crate::engine::{assemble_plan, PlanError, SchemePlan, SystemParams};
use crate::fscalc::{self, FsEntry, FsError, FsRow, FsTable, McTable, TxRule};
use crate::typing::{Grouping, MGroupStructure, TypeVector, TypingError};

pub const DEFAULT_MAX_USERS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SearchError {
    #[error("K = {users} exceeds the search bound {bound}")]
    TooManyUsers { users: usize, bound: usize },
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Fs(#[from] FsError),
    #[error(transparent)]
    Typing(#[from] TypingError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchConfig {
    pub max_users: usize,
    /// Leaf evaluations allowed per grouping; `None` is unbounded.
    pub max_candidates: Option<u64>,
    /// Skip subtrees whose partial lower bound exceeds the incumbent.
    pub prune: bool,
    /// Keep the rejected candidates with their reasons (for CSV output).
    pub record_infeasible: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            max_users: DEFAULT_MAX_USERS,
            max_candidates: None,
            prune: true,
            record_infeasible: false,
        }
    }
}

/// A grouping with one rule per multicast-group type; rules of groups that
/// end up delivering nothing are reported as `skip`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Candidate {
    pub grouping: Vec<usize>,
    pub tx_rules: BTreeMap<TypeVector, TxRule>,
}

impl Candidate {
    pub fn rules_text(&self) -> String {
        serde_json::to_string(&self.tx_rules).expect("rules serialize")
    }

    pub fn grouping_text(&self) -> String {
        self.grouping
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Feasible {
    #[serde(flatten)]
    pub candidate: Candidate,
    pub global_fs: Vec<u64>,
    #[serde(rename = "F_PT")]
    pub f_pt: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejected {
    #[serde(flatten)]
    pub candidate: Candidate,
    pub reason: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SearchResult {
    #[serde(rename = "K")]
    pub users: usize,
    pub t: usize,
    #[serde(rename = "F_JCM")]
    pub f_jcm: u64,
    /// Feasible candidates that were evaluated, ascending by `F_PT` and
    /// otherwise in discovery order. With pruning this omits candidates the
    /// bound ruled out.
    pub feasible: Vec<Feasible>,
    pub explored: u64,
    pub pruned_subtrees: u64,
    /// Rejection counts keyed by pipeline stage.
    pub infeasible: BTreeMap<&'static str, u64>,
    pub rejected: Vec<Rejected>,
    /// Some grouping ran out of budget before finishing.
    pub partial: bool,
}

impl SearchResult {
    pub fn best(&self) -> Option<&Feasible> {
        self.feasible.first()
    }

    pub fn best_spec(&self) -> Option<DesignSpec> {
        self.best().map(|b| DesignSpec {
            name: format!("search-best(K={},t={})", self.users, self.t),
            grouping_sizes: b.candidate.grouping.clone(),
            t: self.t,
            tx_rules: b.candidate.tx_rules.clone(),
            expected_global_fs: Some(b.global_fs.clone()),
            expected_f_pt: Some(b.f_pt),
        })
    }

    /// CSV with columns `K,t,grouping,tx_rules,F_PT,F_JCM,ratio,feasible,reason`.
    pub fn to_csv(&self) -> Result<String, SearchError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| SearchError::Csv(e.to_string());
        w.write_record(["K", "t", "grouping", "tx_rules", "F_PT", "F_JCM", "ratio", "feasible", "reason"])
            .map_err(csv_err)?;
        let (k, t, jcm) = (self.users.to_string(), self.t.to_string(), self.f_jcm.to_string());
        for f in &self.feasible {
            w.write_record([
                k.as_str(),
                &t,
                &f.candidate.grouping_text(),
                &f.candidate.rules_text(),
                &f.f_pt.to_string(),
                &jcm,
                &format!("{:.6}", f.f_pt as f64 / self.f_jcm as f64),
                "true",
                "",
            ])
            .map_err(csv_err)?;
        }
        for r in &self.rejected {
            w.write_record([
                k.as_str(),
                &t,
                &r.candidate.grouping_text(),
                &r.candidate.rules_text(),
                "",
                &jcm,
                "",
                "false",
                r.reason,
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| SearchError::Csv(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// Precomputed column data and per-row options for one grouping.
struct GroupingSpace {
    params: SystemParams,
    grouping: Grouping,
    columns: Vec<TypeVector>,
    counts: Vec<u64>,
    mc: McTable,
    structures: Vec<MGroupStructure>,
    /// Per row: every nonempty transmitter subset with its local FS entries.
    options: Vec<Vec<(Vec<usize>, Vec<FsEntry>)>>,
    /// Last row that has an entry in each column.
    last_row: Vec<usize>,
}

impl GroupingSpace {
    fn new(params: SystemParams, t: usize, sizes: &[usize]) -> Result<Self, SearchError> {
        let grouping = Grouping::new(params.users, sizes.to_vec())?;
        let (columns, counts): (Vec<_>, Vec<_>) = grouping.enumerate_types(t)?.into_iter().unzip();
        let mc = McTable::build(&grouping, &columns)?;
        let structures = grouping
            .enumerate_types(t + 1)?
            .into_iter()
            .map(|(s, _)| grouping.mgroup_structure(&s))
            .collect::<Result<Vec<_>, _>>()?;
        let col_of = |v: &TypeVector| columns.iter().position(|c| c == v).expect("column");
        let mut last_row = vec![0; columns.len()];
        let mut options = Vec::with_capacity(structures.len());
        for (r, st) in structures.iter().enumerate() {
            for v in &st.involved {
                last_row[col_of(v)] = r;
            }
            let n = st.len();
            let mut opts = Vec::with_capacity((1 << n) - 1);
            for mask in 1u32..(1 << n) {
                let d_tx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
                let local = fscalc::local_fs(st, &d_tx)?;
                let mut entries = vec![FsEntry::Absent; columns.len()];
                for (v, a) in st.involved.iter().zip(local) {
                    entries[col_of(v)] = FsEntry::Value(a);
                }
                opts.push((d_tx, entries));
            }
            options.push(opts);
        }
        Ok(Self {
            params,
            grouping,
            columns,
            counts,
            mc,
            structures,
            options,
            last_row,
        })
    }

    /// `sum F(v) * max a` over columns whose rows are all assigned and none
    /// of which excludes the column. Final factors are integer multiples of
    /// every local entry, so this never exceeds the final `F_PT`.
    fn lower_bound(&self, choice: &[usize]) -> u64 {
        let depth = choice.len();
        let mut total = 0u64;
        for (j, &count) in self.counts.iter().enumerate() {
            if self.last_row[j] >= depth {
                continue;
            }
            let mut top = 0u64;
            let mut excluded = false;
            for (r, &c) in choice.iter().enumerate() {
                if let FsEntry::Value(a) = self.options[r][c].1[j] {
                    excluded |= a == 0;
                    top = top.max(a);
                }
            }
            if !excluded {
                total = total.saturating_add(count.saturating_mul(top));
            }
        }
        total
    }

    fn evaluate(&self, choice: &[usize]) -> Result<SchemePlan, PlanError> {
        let rows = self
            .structures
            .iter()
            .zip(choice)
            .enumerate()
            .map(|(r, (st, &c))| {
                let (d_tx, entries) = &self.options[r][c];
                FsRow {
                    structure: st.clone(),
                    rule: TxRule::Transmit(d_tx.clone()),
                    entries: entries.clone(),
                }
            })
            .collect();
        let table = FsTable {
            columns: self.columns.clone(),
            rows,
        };
        assemble_plan(
            self.params,
            self.grouping.clone(),
            table,
            self.counts.clone(),
            self.mc.clone(),
        )
    }

    fn candidate(&self, choice: &[usize], plan: Option<&SchemePlan>) -> Candidate {
        let tx_rules = self
            .structures
            .iter()
            .zip(choice)
            .enumerate()
            .map(|(r, (st, &c))| {
                let rule = match plan {
                    Some(p) if !p.is_visited(r) => TxRule::Skip,
                    _ => TxRule::Transmit(self.options[r][c].0.clone()),
                };
                (st.group_type.clone(), rule)
            })
            .collect();
        Candidate {
            grouping: self.grouping.sizes().to_vec(),
            tx_rules,
        }
    }
}

#[derive(Default)]
struct GroupingOutcome {
    feasible: Vec<Feasible>,
    rejected: Vec<Rejected>,
    infeasible: BTreeMap<&'static str, u64>,
    explored: u64,
    pruned: u64,
    partial: bool,
}

struct Dfs<'a> {
    space: &'a GroupingSpace,
    config: &'a SearchConfig,
    incumbent: u64,
    seen: BTreeSet<Candidate>,
    out: GroupingOutcome,
}

impl Dfs<'_> {
    fn run(&mut self, choice: &mut Vec<usize>) {
        if self.out.partial {
            return;
        }
        if self.config.prune && self.space.lower_bound(choice) > self.incumbent {
            self.out.pruned += 1;
            return;
        }
        let depth = choice.len();
        if depth == self.space.structures.len() {
            self.leaf(choice);
            return;
        }
        for c in 0..self.space.options[depth].len() {
            choice.push(c);
            self.run(choice);
            choice.pop();
        }
    }

    fn leaf(&mut self, choice: &[usize]) {
        if let Some(cap) = self.config.max_candidates {
            if self.out.explored >= cap {
                self.out.partial = true;
                return;
            }
        }
        self.out.explored += 1;
        match self.space.evaluate(choice) {
            Ok(plan) => {
                let candidate = self.space.candidate(choice, Some(&plan));
                if self.seen.insert(candidate.clone()) {
                    self.incumbent = self.incumbent.min(plan.f_pt);
                    self.out.feasible.push(Feasible {
                        candidate,
                        global_fs: plan.global.factors,
                        f_pt: plan.f_pt,
                    });
                }
            }
            Err(e) => {
                *self.out.infeasible.entry(e.stage()).or_insert(0) += 1;
                if self.config.record_infeasible {
                    self.out.rejected.push(Rejected {
                        candidate: self.space.candidate(choice, None),
                        reason: e.stage(),
                    });
                }
            }
        }
    }
}

fn search_space(space: &GroupingSpace, config: &SearchConfig, incumbent: u64) -> GroupingOutcome {
    let mut dfs = Dfs {
        space,
        config,
        incumbent,
        seen: BTreeSet::new(),
        out: GroupingOutcome::default(),
    };
    dfs.run(&mut Vec::new());
    dfs.out
}

fn check_bounds(users: usize, t: usize, config: &SearchConfig) -> Result<SystemParams, SearchError> {
    if users > config.max_users {
        return Err(SearchError::TooManyUsers {
            users,
            bound: config.max_users,
        });
    }
    Ok(SystemParams::from_t(users, t)?)
}

fn merge(users: usize, t: usize, f_jcm: u64, outcomes: Vec<GroupingOutcome>) -> SearchResult {
    let mut result = SearchResult {
        users,
        t,
        f_jcm,
        feasible: Vec::new(),
        explored: 0,
        pruned_subtrees: 0,
        infeasible: BTreeMap::new(),
        rejected: Vec::new(),
        partial: false,
    };
    for o in outcomes {
        result.feasible.extend(o.feasible);
        result.rejected.extend(o.rejected);
        result.explored += o.explored;
        result.pruned_subtrees += o.pruned;
        result.partial |= o.partial;
        for (k, v) in o.infeasible {
            *result.infeasible.entry(k).or_insert(0) += v;
        }
    }
    result.feasible.sort_by_key(|f| f.f_pt);
    result
}

/// Searches every grouping of `K` users (partitions, largest groups first).
pub fn exhaustive_search(users: usize, t: usize, config: &SearchConfig) -> Result<SearchResult, SearchError> {
    let params = check_bounds(users, t, config)?;
    let groupings: Vec<Vec<usize>> = combinat::partitions(users).into_iter().map(|p| p.0).collect();
    search_groupings(params, t, &groupings, config)
}

/// Searches transmitter selections for the given groupings only.
pub fn search_groupings(
    params: SystemParams,
    t: usize,
    groupings: &[Vec<usize>],
    config: &SearchConfig,
) -> Result<SearchResult, SearchError> {
    let users = params.users;
    check_bounds(users, t, config)?;
    let f_jcm = fscalc::jcm_baseline(users, t)?.0;
    let spaces = groupings
        .iter()
        .map(|sizes| GroupingSpace::new(params, t, sizes))
        .collect::<Result<Vec<_>, _>>()?;
    // Every grouping starts from the baseline, which is always feasible, so
    // the outcome of each grouping does not depend on scheduling.
    let outcomes = crate::with_thread_pool(|| {
        spaces
            .par_iter()
            .map(|s| search_space(s, config, f_jcm))
            .collect::<Vec<_>>()
    });
    Ok(merge(users, t, f_jcm, outcomes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Pairing design, parameter `t_bar`.
    Thm1,
    /// Two halves, parameter `t`.
    Thm2,
    /// `m` equal groups, parameter `t`.
    Thm3 { m: usize },
    /// Two halves at `t = 3`; the parameter is ignored.
    T3HalfSplit,
}

impl Family {
    pub fn label(&self) -> String {
        match self {
            Family::Thm1 => "thm1".into(),
            Family::Thm2 => "thm2".into(),
            Family::Thm3 { m } => format!("thm3-m{m}"),
            Family::T3HalfSplit => "t3-halfsplit".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SweepRow {
    pub family: String,
    pub param: usize,
    #[serde(rename = "K")]
    pub users: usize,
    pub t: usize,
    pub variant: String,
    #[serde(rename = "F_PT")]
    pub f_pt: u64,
    #[serde(rename = "F_JCM")]
    pub f_jcm: u64,
    pub ratio: Ratio<u64>,
    /// Analytic bound (or large-`q` limit for the equal-groups family).
    pub bound: Option<Ratio<u64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    pub notes: Vec<String>,
}

impl Sweep {
    /// CSV with columns `family,param,K,t,variant,F_PT,F_JCM,ratio,bound`.
    pub fn to_csv(&self) -> Result<String, SearchError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| SearchError::Csv(e.to_string());
        w.write_record(["family", "param", "K", "t", "variant", "F_PT", "F_JCM", "ratio", "bound"])
            .map_err(csv_err)?;
        let f = |r: Ratio<u64>| format!("{:.6}", r.to_f64().unwrap_or(f64::NAN));
        for r in &self.rows {
            w.write_record([
                r.family.clone(),
                r.param.to_string(),
                r.users.to_string(),
                r.t.to_string(),
                r.variant.clone(),
                r.f_pt.to_string(),
                r.f_jcm.to_string(),
                f(r.ratio),
                r.bound.map(f).unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| SearchError::Csv(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// `min(prod_{i<=tbar/2} (2i-1) / t, 1)`.
pub fn theorem1_ratio_bound(users: usize, tbar: usize) -> Ratio<u64> {
    let odd: u64 = (1..=tbar as u64 / 2).map(|i| 2 * i - 1).product();
    Ratio::new(odd, (users - tbar) as u64).min(Ratio::from_integer(1))
}

fn row_from(family: &Family, param: usize, variant: &str, spec: &DesignSpec, bound: Option<Ratio<u64>>) -> Result<SweepRow, SearchError> {
    let plan = spec.plan()?;
    let f_jcm = plan.f_jcm();
    Ok(SweepRow {
        family: family.label(),
        param,
        users: plan.users(),
        t: plan.t,
        variant: variant.into(),
        f_pt: plan.f_pt,
        f_jcm,
        ratio: Ratio::new(plan.f_pt, f_jcm),
        bound,
    })
}

/// Subpacketization ratio of a design family over a range of `K`, one curve
/// per parameter. Out-of-range points are skipped with a note.
pub fn sweep_ratios(family: Family, users: RangeInclusive<usize>, params: &[usize]) -> Result<Sweep, SearchError> {
    let points: Vec<(usize, usize)> = params
        .iter()
        .flat_map(|&p| users.clone().map(move |k| (p, k)))
        .collect();
    let results: Vec<Result<Option<SweepRow>, SearchError>> = crate::with_thread_pool(|| {
        points
            .par_iter()
            .map(|&(param, k)| sweep_point(family, param, k))
            .collect()
    });
    let mut sweep = Sweep {
        rows: Vec::new(),
        notes: Vec::new(),
    };
    for ((param, k), r) in points.into_iter().zip(results) {
        match r {
            Ok(Some(row)) => sweep.rows.push(row),
            Ok(None) => {}
            Err(SearchError::Design(DesignError::Precondition { reason, .. })) => {
                sweep.notes.push(format!("{} param={param} K={k}: {reason}", family.label()))
            }
            Err(e) => return Err(e),
        }
    }
    Ok(sweep)
}

fn sweep_point(family: Family, param: usize, k: usize) -> Result<Option<SweepRow>, SearchError> {
    match family {
        Family::Thm1 => {
            let ow = designs::theorem1_design(k, param, Theorem1Variant::OrderWise)?;
            let fb = designs::theorem1_design(k, param, Theorem1Variant::Fallback)?;
            let bound = Some(theorem1_ratio_bound(k, param));
            let a = row_from(&family, param, "orderwise", &ow, bound)?;
            let b = row_from(&family, param, "fallback", &fb, bound)?;
            Ok(Some(if b.f_pt < a.f_pt { b } else { a }))
        }
        Family::Thm2 => {
            let spec = designs::theorem2_design(k, param)?;
            row_from(&family, param, "", &spec, Some(Ratio::new(1, 2))).map(Some)
        }
        Family::Thm3 { m } => {
            if m == 0 || !k.is_multiple_of(m) {
                return Ok(None);
            }
            let spec = designs::theorem3_design(m, k / m, param)?;
            row_from(&family, param, "", &spec, Some(designs::theorem3_limit(m, param))).map(Some)
        }
        Family::T3HalfSplit => {
            let spec = designs::special_design(designs::SpecialKind::T3HalfSplit, k)?;
            row_from(&family, 3, "", &spec, Some(Ratio::new(6, 7))).map(Some)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{simulate, DemandSet, SimulationConfig};

    fn unpruned() -> SearchConfig {
        SearchConfig {
            prune: false,
            ..SearchConfig::default()
        }
    }

    #[test]
    fn four_users_t2_best_is_four() {
        let r = exhaustive_search(4, 2, &SearchConfig::default()).unwrap();
        let best = r.best().unwrap();
        assert_eq!(best.f_pt, 4);
        assert_eq!(best.candidate.grouping, vec![2, 2]);
        assert!(!r.partial);
    }

    #[test]
    fn three_users_t2_only_baseline() {
        let r = exhaustive_search(3, 2, &unpruned()).unwrap();
        assert_eq!(r.best().unwrap().f_pt, 6);
        assert_eq!(r.f_jcm, 6);
    }

    #[test]
    fn pruning_preserves_best() {
        for k in 2..=6 {
            for t in 1..k {
                let a = exhaustive_search(k, t, &SearchConfig::default()).unwrap();
                let b = exhaustive_search(k, t, &unpruned()).unwrap();
                assert_eq!(a.best().map(|f| f.f_pt), b.best().map(|f| f.f_pt), "K={k} t={t}");
                assert!(a.explored <= b.explored);
                assert!(a.best().unwrap().f_pt <= a.f_jcm);
            }
        }
    }

    #[test]
    fn winners_revalidate_and_decode() {
        for (k, t) in [(4, 2), (5, 3), (6, 4), (6, 2)] {
            let r = exhaustive_search(k, t, &SearchConfig::default()).unwrap();
            let spec = r.best_spec().unwrap();
            let plan = spec.plan().unwrap();
            assert_eq!(Some(plan.f_pt), spec.expected_f_pt);
            let report = simulate(
                &plan,
                &SimulationConfig {
                    packet_bytes: 1,
                    seed: 2,
                    demands: DemandSet::Random(4),
                },
            )
            .unwrap();
            assert!(report.passed(), "K={k} t={t}");
        }
    }

    #[test]
    fn budget_marks_partial() {
        let cfg = SearchConfig {
            max_candidates: Some(1),
            prune: false,
            ..SearchConfig::default()
        };
        let r = exhaustive_search(5, 2, &cfg).unwrap();
        assert!(r.partial);
        assert!(exhaustive_search(9, 2, &SearchConfig::default()).is_err());
    }

    #[test]
    fn csv_has_expected_header() {
        let cfg = SearchConfig {
            record_infeasible: true,
            ..unpruned()
        };
        let r = exhaustive_search(4, 2, &cfg).unwrap();
        let csv = r.to_csv().unwrap();
        assert!(csv.starts_with("K,t,grouping,tx_rules,F_PT,F_JCM,ratio,feasible,reason\n"));
        assert!(csv.lines().any(|l| l.ends_with(",false,memory_constraint")));
    }

    #[test]
    fn sweep_thm1_tbar2_matches_closed_form() {
        let s = sweep_ratios(Family::Thm1, 4..=12, &[2]).unwrap();
        for row in &s.rows {
            assert_eq!(row.ratio, Ratio::new(1, row.users as u64 - 1));
            assert!(row.ratio <= row.bound.unwrap());
        }
        let eight = s.rows.iter().find(|r| r.users == 8).unwrap();
        assert_eq!((eight.f_pt, eight.f_jcm), (24, 168));
        assert!(s.notes.iter().any(|n| n.contains("K=5")));
    }

    #[test]
    fn sweep_other_families() {
        let s = sweep_ratios(Family::Thm2, 10..=10, &[4]).unwrap();
        assert_eq!(s.rows[0].ratio, Ratio::new(300, 840));
        let s = sweep_ratios(Family::T3HalfSplit, 8..=8, &[3]).unwrap();
        assert_eq!(s.rows[0].ratio, Ratio::new(6, 7));
        let s = sweep_ratios(Family::Thm3 { m: 3 }, 9..=12, &[2]).unwrap();
        assert_eq!(s.rows.len(), 2);
        assert!(s.to_csv().unwrap().starts_with("family,param,K,t,variant,F_PT,F_JCM,ratio,bound\n"));
    }
}
