// SPDX-License-Identifier: Apache-2.0
//! Campaign configuration file and the flag overrides layered on top of it.

use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use glitchsim::asm::{assemble, find_targets, ProgramImage};
use glitchsim::campaign::{linspace, CampaignConfig, CampaignTarget, SweepGrid, DEFAULT_AXIS_NS, DEFAULT_AXIS_POINTS};
use glitchsim::injector::check_profile_matches_machine;
use glitchsim::isa::{decode_word, Mnemonic};
use glitchsim::machine::{MachineConfig, Memory};
use glitchsim::timing::{Stage, TimingProfile, ViolationPolicy};
use glitchsim::workloads::{demo_image, DEMO_ENTRY, DEMO_TARGETS};
use serde::Deserialize;
use thiserror::Error;

/// A usage or configuration problem. Maps to exit status 2.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

macro_rules! usage {
    ($($arg:tt)*) => {
        anyhow::Error::new($crate::config::UsageError(format!($($arg)*)))
    };
}
pub(crate) use usage;

/// On-disk configuration. Every key is optional; relative paths are taken
/// relative to the file's directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub workload: Option<PathBuf>,
    pub entry_pc: Option<u32>,
    pub profile: Option<PathBuf>,
    pub grid: Option<GridConfig>,
    pub policy: Option<String>,
    pub seed: Option<u64>,
    pub watchdog: Option<u64>,
    pub illegal_handler: Option<u32>,
    pub output_dir: Option<PathBuf>,
    pub parallelism: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub offsets_ns: Option<Vec<f64>>,
    pub widths_ns: Option<Vec<f64>>,
    pub stages: Option<Vec<String>>,
    /// `name`, `name@pc` or `name@pc#occurrence`.
    pub targets: Option<Vec<String>>,
}

/// Flags shared by every simulation command; each overrides the config.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Workload: assembly source (.s) or a flat image (.bin with a .sym beside it).
    /// Defaults to the bundled demo.
    #[arg(long, short = 'w')]
    pub workload: Option<PathBuf>,
    /// Entry PC.
    #[arg(long, value_parser = parse_u32)]
    pub entry: Option<u32>,
    /// Timing profile. Defaults to the built-in profile.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Cycle budget before a run is declared hung.
    #[arg(long)]
    pub watchdog: Option<u64>,
    /// Redirect illegal instructions to this address instead of skipping them.
    #[arg(long, value_parser = parse_u32)]
    pub illegal_handler: Option<u32>,
    /// Violated-bit policy: zero, stale or seeded_random.
    #[arg(long)]
    pub policy: Option<String>,
    /// Seed for the seeded_random policy.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Everything a command needs once the config and flags are merged.
pub struct Resolved {
    pub image: ProgramImage,
    pub entry_pc: u32,
    pub profile: TimingProfile,
    pub machine: MachineConfig,
    pub policy: ViolationPolicy,
    pub seed: u64,
    pub file: FileConfig,
    base_dir: PathBuf,
}

pub fn parse_u32(s: &str) -> Result<u32, String> {
    let t = s.trim().replace('_', "");
    let parsed = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(hex) => u32::from_str_radix(hex, 16),
        None => t.parse(),
    };
    parsed.map_err(|e| format!("`{s}`: {e}"))
}

pub fn load_workload(path: &Path) -> Result<ProgramImage> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    if matches!(ext, "s" | "S" | "asm") {
        let src = std::fs::read_to_string(path).map_err(|e| usage!("{}: {e}", path.display()))?;
        assemble(&src).map_err(|e| usage!("{}: {e}", path.display()))
    } else {
        ProgramImage::read_files(path, &path.with_extension("sym")).map_err(|e| usage!("{}: {e}", path.display()))
    }
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<Resolved> {
        let (file, base_dir) = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| usage!("{}: {e}", path.display()))?;
                let file: FileConfig = toml::from_str(&text).map_err(|e| usage!("{}: {e}", path.display()))?;
                let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
                (file, dir)
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        let from_file = |p: &Option<PathBuf>| p.as_ref().map(|p| base_dir.join(p));

        let workload = self.workload.clone().or_else(|| from_file(&file.workload));
        let (image, default_entry) = match &workload {
            Some(path) => (load_workload(path)?, 0),
            None => (demo_image(), DEMO_ENTRY),
        };
        let entry_pc = self.entry.or(file.entry_pc).unwrap_or(default_entry);

        let profile = match self.profile.clone().or_else(|| from_file(&file.profile)) {
            Some(path) => TimingProfile::load(&path).map_err(|e| usage!("{}: {e}", path.display()))?,
            None => TimingProfile::default_profile(),
        };
        check_profile_matches_machine(&profile).map_err(|e| usage!("timing profile: {e}"))?;

        let policy_text = self.policy.clone().or_else(|| file.policy.clone());
        let policy: ViolationPolicy = match &policy_text {
            Some(p) => p.parse().map_err(|e| usage!("policy: {e}"))?,
            None => ViolationPolicy::default(),
        };
        let seed = self.seed.or(file.seed);
        if policy == ViolationPolicy::SeededRandom && seed.is_none() {
            return Err(usage!("the seeded_random policy needs a seed"));
        }

        let mut machine = MachineConfig::default();
        if let Some(n) = self.watchdog.or(file.watchdog) {
            if n == 0 {
                return Err(usage!("watchdog must be positive"));
            }
            machine.max_cycles = n;
        }
        machine.illegal_handler = self.illegal_handler.or(file.illegal_handler);

        Ok(Resolved {
            image,
            entry_pc,
            profile,
            machine,
            policy,
            seed: seed.unwrap_or(0),
            file,
            base_dir,
        })
    }
}

/// A parsed target string before it is placed in the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetRef {
    pub mnemonic: Option<Mnemonic>,
    pub pc: Option<u32>,
    pub occurrence: u32,
}

impl std::str::FromStr for TargetRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (rest, occurrence) = match s.split_once('#') {
            Some((r, n)) => (r, n.parse::<u32>().map_err(|e| format!("occurrence in `{s}`: {e}"))?),
            None => (s, 1),
        };
        if occurrence == 0 {
            return Err(format!("occurrence in `{s}` counts from 1"));
        }
        let (name, pc) = match rest.split_once('@') {
            Some((n, pc)) => (n, Some(parse_u32(pc)?)),
            None if rest.starts_with("0x") || rest.starts_with("0X") => ("", Some(parse_u32(rest)?)),
            None => (rest, None),
        };
        let mnemonic = if name.is_empty() {
            None
        } else {
            Some(name.parse::<Mnemonic>().map_err(|e| e.to_string())?)
        };
        Ok(Self {
            mnemonic,
            pc,
            occurrence,
        })
    }
}

impl Resolved {
    /// Places a target in the image: an explicit PC wins, then a
    /// `target_<name>` label, then the first static occurrence.
    pub fn place(&self, t: TargetRef) -> Result<CampaignTarget> {
        let at = |pc: u32| -> Result<Mnemonic> {
            if let Some(m) = t.mnemonic {
                return Ok(m);
            }
            let word = self.image_word(pc);
            let d = decode_word(word);
            if d.legal {
                Ok(d.mnemonic)
            } else {
                Err(usage!("no supported instruction at {pc:#x}"))
            }
        };
        if let Some(pc) = t.pc {
            return Ok(CampaignTarget {
                mnemonic: at(pc)?,
                pc,
                occurrence: t.occurrence,
            });
        }
        let m = t.mnemonic.ok_or_else(|| usage!("target needs a mnemonic or a pc"))?;
        let label = format!("target_{}", m.name().replace('.', "_"));
        let pc = match self.image.symbol(&label) {
            Some(pc) => pc,
            None => find_targets(&self.image, &[m])
                .targets
                .first()
                .map(|&(pc, _)| pc)
                .ok_or_else(|| usage!("workload has no `{m}` instruction"))?,
        };
        Ok(CampaignTarget {
            mnemonic: m,
            pc,
            occurrence: t.occurrence,
        })
    }

    fn image_word(&self, pc: u32) -> u32 {
        Memory::from_image(&self.image).read_u32(pc)
    }

    pub fn grid(&self) -> Result<SweepGrid> {
        let g = self.file.grid.as_ref();
        let axis = || linspace(DEFAULT_AXIS_NS.0, DEFAULT_AXIS_NS.1, DEFAULT_AXIS_POINTS);
        let offsets_ns = g.and_then(|g| g.offsets_ns.clone()).unwrap_or_else(axis);
        let widths_ns = g.and_then(|g| g.widths_ns.clone()).unwrap_or_else(axis);
        let stages = match g.and_then(|g| g.stages.as_ref()) {
            Some(list) => list
                .iter()
                .map(|s| s.parse::<Stage>().map_err(|e| usage!("grid stage `{s}`: {e}")))
                .collect::<Result<_>>()?,
            None => Stage::ALL.to_vec(),
        };
        let refs: Vec<TargetRef> = match g.and_then(|g| g.targets.as_ref()) {
            Some(list) => list
                .iter()
                .map(|s| s.parse().map_err(|e| usage!("grid target: {e}")))
                .collect::<Result<_>>()?,
            None => default_targets(),
        };
        let targets = refs.into_iter().map(|t| self.place(t)).collect::<Result<Vec<_>>>()?;
        let grid = SweepGrid {
            offsets_ns,
            widths_ns,
            stages,
            targets,
        };
        if grid.offsets_ns.is_empty() || grid.widths_ns.is_empty() || grid.stages.is_empty() || grid.targets.is_empty()
        {
            return Err(usage!("the sweep grid has an empty dimension"));
        }
        Ok(grid)
    }

    pub fn campaign_config(&self, parallelism: Option<usize>) -> CampaignConfig {
        CampaignConfig {
            policy: self.policy,
            seed: self.seed,
            parallelism: parallelism.or(self.file.parallelism),
            machine: self.machine,
        }
    }

    pub fn output_dir(&self, flag: Option<PathBuf>) -> PathBuf {
        flag.or_else(|| self.file.output_dir.as_ref().map(|p| self.base_dir.join(p)))
            .unwrap_or_else(|| PathBuf::from("glitchsim-out"))
    }
}

fn default_targets() -> Vec<TargetRef> {
    DEMO_TARGETS
        .iter()
        .map(|&m| TargetRef {
            mnemonic: Some(m),
            pc: None,
            occurrence: 1,
        })
        .collect()
}
