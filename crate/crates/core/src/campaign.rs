// SPDX-License-Identifier: Apache-2.0
//! Glitch-parameter sweeps, the risk assessment table and reduction
//! statistics.
//!
//! Runs are enumerated in a fixed order (target, stage, offset, width),
//! executed in parallel chunks and written to a JSON-lines file in
//! enumeration order, so any prefix of the file is a valid partial campaign
//! and `resume` simply continues after the last complete line.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asm::ProgramImage;
use crate::classifier::{classify, Category, FaultOutcome, TargetInfo};
use crate::error::CampaignError;
use crate::injector::ArmedGlitch;
use crate::isa::Mnemonic;
use crate::machine::{run_pipeline, MachineConfig, RunResult};
use crate::timing::{GlitchSpec, LatchEvent, Stage, TimingProfile, Trigger, ViolationPolicy};

/// Lower and upper bound of the default offset and width axes, in ns.
pub const DEFAULT_AXIS_NS: (f64, f64) = (0.278, 8.89);
/// Points per default axis.
pub const DEFAULT_AXIS_POINTS: usize = 17;

/// `n` evenly spaced values from `lo` to `hi`, both included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignTarget {
    pub mnemonic: Mnemonic,
    pub pc: u32,
    pub occurrence: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub offsets_ns: Vec<f64>,
    pub widths_ns: Vec<f64>,
    pub stages: Vec<Stage>,
    pub targets: Vec<CampaignTarget>,
}

impl SweepGrid {
    /// 17 × 17 offsets and widths over the default range, all four stages.
    pub fn default_for(targets: Vec<CampaignTarget>) -> Self {
        let axis = linspace(DEFAULT_AXIS_NS.0, DEFAULT_AXIS_NS.1, DEFAULT_AXIS_POINTS);
        Self {
            offsets_ns: axis.clone(),
            widths_ns: axis,
            stages: Stage::ALL.to_vec(),
            targets,
        }
    }

    pub fn run_count(&self) -> usize {
        self.offsets_ns.len() * self.widths_ns.len() * self.stages.len() * self.targets.len()
    }
}

/// One planned run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedRun {
    pub target: CampaignTarget,
    pub spec: GlitchSpec,
}

/// Every run of `grid` in (target, stage, offset, width) order.
pub fn enumerate(grid: &SweepGrid) -> Result<Vec<PlannedRun>, CampaignError> {
    for (name, empty) in [
        ("offsets", grid.offsets_ns.is_empty()),
        ("widths", grid.widths_ns.is_empty()),
        ("stages", grid.stages.is_empty()),
        ("targets", grid.targets.is_empty()),
    ] {
        if empty {
            return Err(CampaignError::EmptyDimension(name));
        }
    }
    let mut out = Vec::with_capacity(grid.run_count());
    for &target in &grid.targets {
        for &stage in &grid.stages {
            for &o in &grid.offsets_ns {
                for &w in &grid.widths_ns {
                    let trigger = Trigger {
                        target_pc: target.pc,
                        target_stage: stage,
                        occurrence: target.occurrence,
                    };
                    out.push(PlannedRun {
                        target,
                        spec: GlitchSpec::new(o, w, trigger)?,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// RAT column: the pair of stages sharing the violated pipeline register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StagePair {
    #[serde(rename = "IF/ID")]
    IfId,
    #[serde(rename = "ID/EX")]
    IdEx,
    #[serde(rename = "EX/WB")]
    ExWb,
}

impl StagePair {
    pub const ALL: [StagePair; 3] = [StagePair::IfId, StagePair::IdEx, StagePair::ExWb];

    pub fn name(self) -> &'static str {
        match self {
            StagePair::IfId => "IF/ID",
            StagePair::IdEx => "ID/EX",
            StagePair::ExWb => "EX/WB",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for StagePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn endpoint_pair(endpoint: &str, stage: Stage) -> StagePair {
    match endpoint {
        "decoder_in" | "if_id" => StagePair::IfId,
        "id_ex" | "pc_target" => StagePair::IdEx,
        "ex_wb" | "rf_wdata" => StagePair::ExWb,
        _ => match stage {
            Stage::IF => StagePair::IfId,
            Stage::ID => StagePair::IdEx,
            Stage::EX | Stage::WB => StagePair::ExWb,
        },
    }
}

/// Attributes a critical outcome to exactly one RAT column by the endpoint
/// responsible for it. Endpoints whose latched value actually changed take
/// precedence; a redirection is pinned on `pc_target` when that endpoint
/// changed.
pub fn rat_column(stage: Stage, events: &[LatchEvent], outcome: &FaultOutcome) -> Option<StagePair> {
    if !outcome.critical {
        return None;
    }
    let changed: Vec<&LatchEvent> = events.iter().filter(|e| e.value_latched != e.value_intended).collect();
    let pool: Vec<&LatchEvent> = if changed.is_empty() {
        events.iter().collect()
    } else {
        changed
    };
    let redirect = outcome.category == Category::PcRedirection || outcome.members.contains(&Category::PcRedirection);
    let chosen = pool
        .iter()
        .find(|e| redirect && e.endpoint == "pc_target")
        .or_else(|| pool.first())
        .map(|e| e.endpoint.as_str());
    Some(match chosen {
        Some(ep) => endpoint_pair(ep, stage),
        None => endpoint_pair("", stage),
    })
}

/// Short digest of a run's latch events.
pub fn events_digest(events: &[LatchEvent]) -> String {
    let bytes = serde_json::to_vec(events).expect("latch events serialize");
    let hash = Sha256::digest(bytes);
    hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// One line of the per-run output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub index: u64,
    pub target: String,
    pub spec: GlitchSpec,
    pub outcome: FaultOutcome,
    pub rat_column: Option<StagePair>,
    pub latch_event_count: usize,
    pub events_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CampaignConfig {
    pub policy: ViolationPolicy,
    pub seed: u64,
    /// Worker threads; `None` uses every core.
    pub parallelism: Option<usize>,
    pub machine: MachineConfig,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            policy: ViolationPolicy::Zero,
            seed: 0,
            parallelism: None,
            machine: MachineConfig::default(),
        }
    }
}

/// Simulates and classifies one planned run against `golden`.
pub fn run_one(
    image: &ProgramImage,
    entry_pc: u32,
    golden: &RunResult,
    profile: &TimingProfile,
    cfg: &CampaignConfig,
    index: u64,
    plan: &PlannedRun,
) -> Result<RunRecord, CampaignError> {
    let mut hook = ArmedGlitch::new(plan.spec, profile, cfg.policy, cfg.seed)?;
    let glitched = run_pipeline(image, entry_pc, cfg.machine, Some(&mut hook));
    let outcome =
        classify(golden, &glitched, TargetInfo::from(plan.spec.trigger)).map_err(|e| CampaignError::Record {
            line: index as usize + 1,
            message: e.to_string(),
        })?;
    Ok(RunRecord {
        index,
        target: plan.target.mnemonic.name().to_string(),
        spec: plan.spec,
        rat_column: rat_column(plan.spec.trigger.target_stage, &glitched.latch_events, &outcome),
        latch_event_count: glitched.latch_events.len(),
        events_digest: events_digest(&glitched.latch_events),
        outcome,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RATable {
    pub rows: Vec<String>,
    pub counts: Vec<[u64; 3]>,
    pub cells: Vec<[f64; 3]>,
    pub total_critical: u64,
}

impl RATable {
    pub fn row_sum(&self, row: usize) -> f64 {
        self.cells[row].iter().sum()
    }

    pub fn cell_sum(&self) -> f64 {
        self.cells.iter().flatten().sum()
    }

    /// CSV with one row per instruction and one column per stage pair;
    /// cells are percentages with two decimals.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("instruction,IF/ID,ID/EX,EX/WB\n");
        for (name, row) in self.rows.iter().zip(&self.cells) {
            s.push_str(&format!("{name},{:.2},{:.2},{:.2}\n", row[0], row[1], row[2]));
        }
        s
    }
}

/// Builds the table from (row label, column) pairs of critical runs. Rows
/// follow `row_order`; labels outside it are appended in first-seen order.
pub fn build_rat<'a>(row_order: &[String], critical: impl IntoIterator<Item = (&'a str, StagePair)>) -> RATable {
    let mut rows: Vec<String> = row_order.to_vec();
    let mut counts = vec![[0u64; 3]; rows.len()];
    let mut total = 0u64;
    for (label, pair) in critical {
        let i = match rows.iter().position(|r| r.eq_ignore_ascii_case(label)) {
            Some(i) => i,
            None => {
                rows.push(label.to_string());
                counts.push([0; 3]);
                rows.len() - 1
            }
        };
        counts[i][pair.index()] += 1;
        total += 1;
    }
    let cells = counts
        .iter()
        .map(|c| {
            c.map(|n| {
                if total == 0 {
                    0.0
                } else {
                    100.0 * n as f64 / total as f64
                }
            })
        })
        .collect();
    RATable {
        rows,
        counts,
        cells,
        total_critical: total,
    }
}

/// Search-space reduction from `total` runs to `critical` ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reduction {
    pub total: u64,
    pub critical: u64,
    /// Two decimals, round-half-even.
    pub percent: String,
    /// Two decimals, truncated.
    pub percent_truncated: String,
}

impl Reduction {
    pub fn percent_value(&self) -> f64 {
        self.percent.parse().expect("formatted by reduction_stats")
    }
}

/// `100 × (1 − critical/total)` to two decimals, computed in exact integer
/// arithmetic.
pub fn reduction_stats(total: u64, critical: u64) -> Result<Reduction, CampaignError> {
    if total == 0 {
        return Err(CampaignError::ZeroTotal);
    }
    if critical > total {
        return Err(CampaignError::CriticalExceedsTotal { critical, total });
    }
    let n = 10_000u128 * (total - critical) as u128;
    let d = total as u128;
    let (q, r) = (n / d, n % d);
    let even = match (2 * r).cmp(&d) {
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
        std::cmp::Ordering::Less => q,
    };
    let fmt = |v: u128| format!("{}.{:02}", v / 100, v % 100);
    Ok(Reduction {
        total,
        critical,
        percent: fmt(even),
        percent_truncated: fmt(q),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingTarget {
    pub target: CampaignTarget,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub records: Vec<RunRecord>,
    pub rat: RATable,
    pub reduction: Reduction,
    pub missing_targets: Vec<MissingTarget>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub tool_version: String,
    pub grid: SweepGrid,
    pub total_runs: u64,
    pub critical_runs: u64,
    pub reduction: Reduction,
    pub case_counts: [u64; 4],
    pub category_counts: Vec<(Category, u64)>,
    pub profile_hash: String,
    pub policy: ViolationPolicy,
    pub seed: u64,
    pub missing_targets: Vec<MissingTarget>,
}

impl CampaignResult {
    pub fn summary(&self, grid: &SweepGrid, profile: &TimingProfile, cfg: &CampaignConfig) -> CampaignSummary {
        let mut case_counts = [0u64; 4];
        let mut cats = std::collections::BTreeMap::new();
        for r in &self.records {
            if let Some(c) = r.outcome.case_id {
                case_counts[c as usize - 1] += 1;
            }
            *cats.entry(r.outcome.category).or_insert(0u64) += 1;
        }
        CampaignSummary {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            grid: grid.clone(),
            total_runs: self.reduction.total,
            critical_runs: self.reduction.critical,
            reduction: self.reduction.clone(),
            case_counts,
            category_counts: cats.into_iter().collect(),
            profile_hash: profile.content_hash(),
            policy: cfg.policy,
            seed: cfg.seed,
            missing_targets: self.missing_targets.clone(),
        }
    }
}

const CHUNK: usize = 512;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CampaignError + '_ {
    move |source| CampaignError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads the valid prefix of a run file and truncates anything after it.
fn load_prefix(path: &Path, plan: &[PlannedRun]) -> Result<Vec<RunRecord>, CampaignError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut valid_len = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(io_err(path))?;
        if n == 0 || !line.ends_with('\n') {
            break;
        }
        let Ok(rec) = serde_json::from_str::<RunRecord>(line.trim_end()) else {
            break;
        };
        let i = records.len();
        if rec.index != i as u64 || plan.get(i).map(|p| p.spec) != Some(rec.spec) {
            return Err(CampaignError::Record {
                line: i + 1,
                message: "record does not match the planned run; the grid or workload changed".into(),
            });
        }
        records.push(rec);
        valid_len += n as u64;
    }
    let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
    f.set_len(valid_len).map_err(io_err(path))?;
    Ok(records)
}

/// RAT and reduction over a finished record set. An empty set gives an
/// all-zero table and a 100% reduction.
pub fn aggregate(row_order: &[String], records: &[RunRecord]) -> Result<(RATable, Reduction), CampaignError> {
    let rat = build_rat(
        row_order,
        records
            .iter()
            .filter_map(|r| r.rat_column.map(|c| (r.target.as_str(), c))),
    );
    let critical = records.iter().filter(|r| r.outcome.critical).count() as u64;
    let total = records.len() as u64;
    let reduction = if total == 0 {
        Reduction {
            total: 0,
            critical: 0,
            percent: "100.00".into(),
            percent_truncated: "100.00".into(),
        }
    } else {
        reduction_stats(total, critical)?
    };
    Ok((rat, reduction))
}

/// Runs the sweep. With `out`, every record is appended to that JSON-lines
/// file in enumeration order; `resume` keeps the file's valid prefix and
/// only runs what is missing.
pub fn run_campaign(
    grid: &SweepGrid,
    image: &ProgramImage,
    entry_pc: u32,
    profile: &TimingProfile,
    cfg: &CampaignConfig,
    out: Option<(&Path, bool)>,
) -> Result<CampaignResult, CampaignError> {
    profile.validate()?;
    let golden = run_pipeline(image, entry_pc, cfg.machine, None);

    let mut missing = Vec::new();
    let mut present = Vec::new();
    for t in &grid.targets {
        let seen = golden.retire_trace.iter().filter(|r| r.pc == t.pc).count();
        if seen < t.occurrence as usize {
            missing.push(MissingTarget {
                target: *t,
                reason: format!("pc {:#x} retires {seen} time(s) in the golden run", t.pc),
            });
        } else {
            present.push(*t);
        }
    }
    let live = SweepGrid {
        targets: present,
        ..grid.clone()
    };
    let plan = if live.targets.is_empty() {
        Vec::new()
    } else {
        enumerate(&live)?
    };

    let mut records = match out {
        Some((path, true)) => load_prefix(path, &plan)?,
        _ => Vec::new(),
    };
    let mut writer = match out {
        Some((path, resume)) => {
            let f = OpenOptions::new()
                .create(true)
                .append(resume)
                .write(true)
                .truncate(!resume)
                .open(path)
                .map_err(io_err(path))?;
            Some((path, BufWriter::new(f)))
        }
        None => None,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism.unwrap_or(0))
        .build()
        .expect("thread pool");
    let start = records.len();
    for chunk_start in (start..plan.len()).step_by(CHUNK) {
        let chunk_end = (chunk_start + CHUNK).min(plan.len());
        let batch: Vec<Result<RunRecord, CampaignError>> = pool.install(|| {
            (chunk_start..chunk_end)
                .into_par_iter()
                .map(|i| run_one(image, entry_pc, &golden, profile, cfg, i as u64, &plan[i]))
                .collect()
        });
        for rec in batch {
            let rec = rec?;
            if let Some((path, w)) = writer.as_mut() {
                let line = serde_json::to_string(&rec).expect("records serialize");
                writeln!(w, "{line}").map_err(io_err(path))?;
            }
            records.push(rec);
        }
        if let Some((path, w)) = writer.as_mut() {
            w.flush().map_err(io_err(path))?;
        }
    }

    let row_order: Vec<String> = grid.targets.iter().map(|t| t.mnemonic.name().to_string()).collect();
    let (rat, reduction) = aggregate(&row_order, &records)?;
    Ok(CampaignResult {
        records,
        rat,
        reduction,
        missing_targets: missing,
    })
}
