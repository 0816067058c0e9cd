use std::fs;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use ptcache::designs::{self, DesignError, DesignSpec, DpdaMode, SpecialKind, Theorem1Variant};
use ptcache::engine::{
    random_files, simulate, DeliverySession, DemandSet, EngineError, PlanError, SchemePlan,
    SimulationConfig, SystemParams,
};
use ptcache::search::{self, Family, SearchConfig, SearchError};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "ptcache", version, about = "Design, check and simulate packet-type D2D coded caching schemes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a scheme plan and print it as JSON.
    Design(DesignCmd),
    /// Print the FS table, memory-constraint table and per-type accounting of a plan.
    Analyze(AnalyzeCmd),
    /// Place, deliver and decode random files over a set of demand vectors.
    Simulate(SimulateCmd),
    /// Exhaustive search over groupings and transmitter rules.
    Search(SearchCmd),
    /// Subpacketization ratios of a design family over a range of K.
    Sweep(SweepCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Orderwise,
    Fallback,
}

#[derive(Clone, Copy, ValueEnum)]
enum Special {
    Lemma2,
    OddK,
    Tbar3,
    T3Halves,
    #[value(name = "k5-t3")]
    K5T3,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dpda {
    T2,
    Tkm2,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
#[command(group(
    ArgGroup::new("family")
        .required(true)
        .args(["thm", "jcm", "special", "dpda", "plan"])
))]
struct DesignArgs {
    /// Theorem family: 1 (pairs), 2 (two halves), 3 (m groups of q).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    thm: Option<u8>,
    /// Single-group baseline.
    #[arg(long)]
    jcm: bool,
    #[arg(long, value_enum)]
    special: Option<Special>,
    #[arg(long, value_enum)]
    dpda: Option<Dpda>,
    /// Plan JSON written by `design`; rules are re-validated.
    #[arg(long, value_name = "PATH")]
    plan: Option<PathBuf>,
    #[arg(long = "K")]
    users: Option<usize>,
    /// Override the library size; requires --M.
    #[arg(long = "N", requires = "memory")]
    files: Option<usize>,
    #[arg(long = "M", requires = "files")]
    memory: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    tbar: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long, value_enum, default_value = "orderwise")]
    variant: Variant,
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, short, value_name = "PATH")]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct DesignCmd {
    #[command(flatten)]
    design: DesignArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct AnalyzeCmd {
    #[command(flatten)]
    design: DesignArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct SimulateCmd {
    #[command(flatten)]
    design: DesignArgs,
    #[command(flatten)]
    out: OutputArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long = "bytes-per-packet", default_value_t = 2)]
    bytes_per_packet: usize,
    /// Explicit demand vector such as 1,1,1,2; repeatable.
    #[arg(long, value_name = "D1,D2,...")]
    demand: Vec<String>,
    /// `all`, `auto` or a count of random demand vectors.
    #[arg(long, default_value = "auto", conflicts_with = "demand")]
    demands: String,
    /// Write the transcript of the first demand vector as JSON lines.
    #[arg(long, value_name = "PATH")]
    transcript: Option<PathBuf>,
}

#[derive(Args)]
struct SearchCmd {
    #[arg(long = "K")]
    users: usize,
    #[arg(long)]
    t: usize,
    /// Restrict to these groupings, e.g. 2,2; repeatable.
    #[arg(long, value_name = "Q1,Q2,...")]
    grouping: Vec<String>,
    /// Candidate budget per grouping.
    #[arg(long)]
    max_candidates: Option<u64>,
    #[arg(long)]
    no_prune: bool,
    #[arg(long, default_value_t = search::DEFAULT_MAX_USERS)]
    max_users: usize,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Thm1,
    Thm2,
    Thm3,
    T3Halves,
}

#[derive(Args)]
struct SweepCmd {
    #[arg(long, value_enum)]
    family: FamilyArg,
    /// Comma-separated t_bar values (thm1).
    #[arg(long, value_delimiter = ',')]
    tbar: Vec<usize>,
    /// Comma-separated t values (thm2, thm3).
    #[arg(long, value_delimiter = ',')]
    t: Vec<usize>,
    /// Number of groups (thm3).
    #[arg(long)]
    m: Option<usize>,
    /// Range of K as LO..HI (inclusive).
    #[arg(long = "K", default_value = "4..40", value_parser = parse_range)]
    users: RangeInclusive<usize>,
    #[command(flatten)]
    out: OutputArgs,
}

fn parse_range(s: &str) -> Result<RangeInclusive<usize>, String> {
    let (lo, hi) = s
        .split_once("..")
        .ok_or_else(|| format!("expected LO..HI, got {s:?}"))?;
    let hi = hi.strip_prefix('=').unwrap_or(hi);
    let lo: usize = lo.trim().parse().map_err(|e| format!("{lo:?}: {e}"))?;
    let hi: usize = hi.trim().parse().map_err(|e| format!("{hi:?}: {e}"))?;
    if lo > hi {
        return Err(format!("empty range {s}"));
    }
    Ok(lo..=hi)
}

/// A failure with its exit code and JSON description.
#[derive(Debug)]
struct Failure {
    code: u8,
    doc: Value,
}

impl Failure {
    fn args(message: impl Into<String>) -> Self {
        Self::new(4, "bad_arguments", None, message.into())
    }

    fn new(code: u8, kind: &str, stage: Option<&str>, message: String) -> Self {
        let mut error = json!({"kind": kind, "message": message});
        if let Some(stage) = stage {
            error["stage"] = json!(stage);
        }
        Self {
            code,
            doc: json!({"schema_version": SCHEMA_VERSION, "error": error}),
        }
    }
}

impl From<PlanError> for Failure {
    fn from(e: PlanError) -> Self {
        let stage = e.stage();
        if stage == "params" {
            Self::new(4, "bad_arguments", Some(stage), e.to_string())
        } else {
            Self::new(2, "infeasible_design", Some(stage), e.to_string())
        }
    }
}

impl From<DesignError> for Failure {
    fn from(e: DesignError) -> Self {
        match e {
            DesignError::Plan(p) => p.into(),
            other => Self::args(other.to_string()),
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Plan(p) => p.into(),
            other => Self::args(other.to_string()),
        }
    }
}

impl From<SearchError> for Failure {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Plan(p) => p.into(),
            SearchError::Design(d) => d.into(),
            other => Self::args(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::new(4, "io", None, e.to_string())
    }
}

fn need(value: Option<usize>, flag: &str, what: &str) -> Result<usize, Failure> {
    value.ok_or_else(|| Failure::args(format!("{what} needs {flag}")))
}

fn parse_list(text: &str, what: &str) -> Result<Vec<usize>, Failure> {
    text.split(',')
        .map(|x| x.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::args(format!("bad {what} {text:?}: {e}")))
}

fn design_spec(a: &DesignArgs) -> Result<DesignSpec, Failure> {
    let k = || need(a.users, "--K", "this family");
    let t = || need(a.t, "--t", "this family");
    let spec = if let Some(thm) = a.thm {
        match thm {
            1 => {
                let variant = match a.variant {
                    Variant::Orderwise => Theorem1Variant::OrderWise,
                    Variant::Fallback => Theorem1Variant::Fallback,
                };
                designs::theorem1_design(k()?, need(a.tbar, "--tbar", "--thm 1")?, variant)?
            }
            2 => designs::theorem2_design(k()?, t()?)?,
            _ => designs::theorem3_design(need(a.m, "--m", "--thm 3")?, need(a.q, "--q", "--thm 3")?, t()?)?,
        }
    } else if a.jcm {
        designs::jcm_design(k()?, t()?)?
    } else if let Some(kind) = a.special {
        let kind = match kind {
            Special::Lemma2 => SpecialKind::Lemma2 {
                q: need(a.q, "--q", "--special lemma2")?,
            },
            Special::OddK => SpecialKind::OddKTbar2,
            Special::Tbar3 => SpecialKind::Tbar3,
            Special::T3Halves => SpecialKind::T3HalfSplit,
            Special::K5T3 => SpecialKind::K5T3,
        };
        let users = if matches!(kind, SpecialKind::K5T3) { a.users.unwrap_or(5) } else { k()? };
        designs::special_design(kind, users)?
    } else if let Some(mode) = a.dpda {
        let mode = match mode {
            Dpda::T2 => DpdaMode::T2,
            Dpda::Tkm2 => DpdaMode::TKm2,
        };
        designs::dpda_design(mode, k()?)?
    } else {
        unreachable!("clap requires one family")
    };
    Ok(spec)
}

fn resolve_plan(a: &DesignArgs) -> Result<SchemePlan, Failure> {
    let plan = if let Some(path) = &a.plan {
        let text = fs::read_to_string(path)?;
        let doc: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::args(format!("{}: {e}", path.display())))?;
        SchemePlan::from_json(&doc)?
    } else {
        let spec = design_spec(a)?;
        match (a.files, a.memory) {
            (Some(n), Some(m)) => spec.plan_with(SystemParams::new(spec.users(), n, m)?)?,
            _ => spec.plan()?,
        }
    };
    if let (Some(n), Some(m), Some(_)) = (a.files, a.memory, &a.plan) {
        if (plan.params.files, plan.params.memory) != (n, m) {
            return Err(Failure::args("--N/--M cannot override a loaded plan"));
        }
    }
    Ok(plan)
}

fn emit(out: &OutputArgs, text: &str) -> Result<(), Failure> {
    match &out.output {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn pretty(doc: &Value) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("json serializes");
    s.push('\n');
    s
}

fn format_of(out: &OutputArgs, default: Format, allowed: &[Format]) -> Result<Format, Failure> {
    let f = out.format.unwrap_or(default);
    if allowed.contains(&f) {
        Ok(f)
    } else {
        Err(Failure::args("this command does not support that --format"))
    }
}

fn cmd_design(c: &DesignCmd) -> Result<(), Failure> {
    format_of(&c.out, Format::Json, &[Format::Json])?;
    let plan = resolve_plan(&c.design)?;
    emit(&c.out, &pretty(&plan.to_json()))
}

fn cmd_analyze(c: &AnalyzeCmd) -> Result<(), Failure> {
    let format = format_of(&c.out, Format::Json, &[Format::Json, Format::Csv])?;
    let plan = resolve_plan(&c.design)?;
    let per_type: Vec<Value> = plan
        .columns()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let a = plan.global.factors[i];
            json!({
                "subfile_type": v.to_string(),
                "count": plan.subfile_counts[i],
                "factor": a,
                "packets": plan.subfile_counts[i] * a,
                "excluded": a == 0,
            })
        })
        .collect();
    if format == Format::Csv {
        let mut w = String::from("subfile_type,count,factor,packets,excluded\n");
        for row in &per_type {
            w.push_str(&format!(
                "\"{}\",{},{},{},{}\n",
                row["subfile_type"].as_str().unwrap_or_default(),
                row["count"],
                row["factor"],
                row["packets"],
                row["excluded"]
            ));
        }
        return emit(&c.out, &w);
    }
    let visited: Vec<String> = (0..plan.table.rows.len())
        .filter(|&r| plan.is_visited(r))
        .map(|r| plan.table.rows[r].group_type().to_string())
        .collect();
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "plan": plan.to_json(),
        "fs_table": plan.table.to_json(),
        "row_scales": plan.global.row_scales,
        "visited_group_types": visited,
        "per_type": per_type,
        "memory_constraint": {
            "rows": plan.mc.rows,
            "deltas": plan.mc.deltas,
        },
        "cached_packets_per_file": plan.cached_packets_per_file(),
    });
    emit(&c.out, &pretty(&doc))
}

fn demand_set(c: &SimulateCmd, users: usize) -> Result<DemandSet, Failure> {
    if !c.demand.is_empty() {
        let list = c
            .demand
            .iter()
            .map(|d| parse_list(d, "demand"))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(bad) = list.iter().find(|d| d.len() != users) {
            return Err(Failure::args(format!("demand {bad:?} needs {users} entries")));
        }
        return Ok(DemandSet::Explicit(list));
    }
    match c.demands.as_str() {
        "all" => Ok(DemandSet::All),
        "auto" => Ok(DemandSet::Auto),
        n => n
            .parse()
            .map(DemandSet::Random)
            .map_err(|_| Failure::args(format!("--demands expects all, auto or a count, got {n:?}"))),
    }
}

fn cmd_simulate(c: &SimulateCmd) -> Result<(), Failure> {
    format_of(&c.out, Format::Json, &[Format::Json])?;
    if c.bytes_per_packet == 0 {
        return Err(Failure::args("--bytes-per-packet must be positive"));
    }
    let plan = resolve_plan(&c.design)?;
    let demands = demand_set(c, plan.users())?;
    let config = SimulationConfig {
        packet_bytes: c.bytes_per_packet,
        seed: c.seed,
        demands,
    };
    let report = simulate(&plan, &config)?;
    if let Some(path) = &c.transcript {
        let first = ptcache::engine::demand_vectors(plan.params, &config.demands, config.seed)
            .into_iter()
            .next()
            .ok_or_else(|| Failure::args("no demand vectors"))?;
        let files = random_files(&plan, c.bytes_per_packet, c.seed);
        let mut session = DeliverySession::new(&plan, files, first)?;
        session.place();
        let mut lines = String::new();
        for msg in session.deliver()? {
            lines.push_str(&serde_json::to_string(&msg.to_record()).expect("record serializes"));
            lines.push('\n');
        }
        fs::write(path, lines)?;
    }
    let all_decoded = report.failures.is_empty();
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "F_PT": plan.f_pt,
        "all_decoded": all_decoded,
        "rate": report.rate.to_string(),
        "expected_rate": plan.rate.to_string(),
        "cache_bits": report.cache_bits,
        "message_count": report.messages,
        "demands_tested": report.demands_tested,
        "accounting_ok": report.accounting_ok,
        "no_redundancy": report.no_redundancy,
        "failures": report.failures,
    });
    emit(&c.out, &pretty(&doc))?;
    if report.passed() && report.rate == plan.rate {
        Ok(())
    } else {
        Err(Failure::new(3, "decode_failure", None, "simulation did not verify".into()))
    }
}

fn cmd_search(c: &SearchCmd) -> Result<(), Failure> {
    let format = format_of(&c.out, Format::Csv, &[Format::Json, Format::Csv])?;
    let config = SearchConfig {
        max_users: c.max_users,
        max_candidates: c.max_candidates,
        prune: !c.no_prune,
        record_infeasible: format == Format::Csv,
    };
    let result = if c.grouping.is_empty() {
        search::exhaustive_search(c.users, c.t, &config)?
    } else {
        let groupings = c
            .grouping
            .iter()
            .map(|g| parse_list(g, "grouping"))
            .collect::<Result<Vec<_>, _>>()?;
        let params = SystemParams::from_t(c.users, c.t)?;
        search::search_groupings(params, c.t, &groupings, &config)?
    };
    if format == Format::Csv {
        return emit(&c.out, &result.to_csv()?);
    }
    let best = result.best().map(|b| {
        json!({
            "grouping": b.candidate.grouping,
            "tx_rules": b.candidate.tx_rules,
            "global_fs": b.global_fs,
            "F_PT": b.f_pt,
        })
    });
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "K": result.users,
        "t": result.t,
        "F_JCM": result.f_jcm,
        "best": best,
        "feasible": result.feasible.len(),
        "explored": result.explored,
        "pruned_subtrees": result.pruned_subtrees,
        "infeasible": result.infeasible,
        "partial": result.partial,
    });
    emit(&c.out, &pretty(&doc))
}

fn cmd_sweep(c: &SweepCmd) -> Result<(), Failure> {
    let format = format_of(&c.out, Format::Csv, &[Format::Json, Format::Csv])?;
    let (family, params) = match c.family {
        FamilyArg::Thm1 => (Family::Thm1, &c.tbar),
        FamilyArg::Thm2 => (Family::Thm2, &c.t),
        FamilyArg::Thm3 => (
            Family::Thm3 {
                m: need(c.m, "--m", "--family thm3")?,
            },
            &c.t,
        ),
        FamilyArg::T3Halves => (Family::T3HalfSplit, &vec![3]),
    };
    if params.is_empty() {
        let flag = if matches!(c.family, FamilyArg::Thm1) { "--tbar" } else { "--t" };
        return Err(Failure::args(format!("{} needs {flag}", family.label())));
    }
    let sweep = search::sweep_ratios(family, c.users.clone(), params)?;
    for note in &sweep.notes {
        eprintln!("note: {note}");
    }
    match format {
        Format::Csv => emit(&c.out, &sweep.to_csv()?),
        Format::Json => {
            let mut doc = serde_json::to_value(&sweep).expect("sweep serializes");
            doc["schema_version"] = json!(SCHEMA_VERSION);
            emit(&c.out, &pretty(&doc))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(4) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Design(c) => cmd_design(c),
        Command::Analyze(c) => cmd_analyze(c),
        Command::Simulate(c) => cmd_simulate(c),
        Command::Search(c) => cmd_search(c),
        Command::Sweep(c) => cmd_sweep(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", serde_json::to_string(&f.doc).expect("json serializes"));
            ExitCode::from(f.code)
        }
    }
}
