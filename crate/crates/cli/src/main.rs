// SPDX-License-Identifier: Apache-2.0
//! `glitchsim` command-line front end.
//!
//! Exit status: 0 on success, 1 on a runtime failure, 2 on a usage or
//! configuration error.

mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use glitchsim::asm::assemble;
use glitchsim::campaign::{aggregate, run_campaign, RunRecord};
use glitchsim::classifier::{classify, TargetInfo};
use glitchsim::injector::ArmedGlitch;
use glitchsim::machine::{run_pipeline, run_pipeline_with, RunOptions};
use glitchsim::rootcause::{render_chain, trace_root_cause, Replay, ReportFormat};
use glitchsim::timing::{GlitchSpec, Stage, Trigger};

use config::{usage, CommonArgs, Resolved, TargetRef, UsageError};

pub const TOOL_VERSION: &str = concat!("glitchsim ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(
    name = "glitchsim",
    version,
    about = "Clock-glitch fault injection on a cycle-accurate RV32IC pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Assemble a source file into a flat image and symbol file.
    Assemble {
        source: PathBuf,
        /// Output image; the symbol file is written next to it with a .sym extension.
        #[arg(long, short = 'o')]
        out: Option<PathBuf>,
    },
    /// Fault-free run of the workload.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Print the per-cycle pipeline dump.
        #[arg(long)]
        trace: bool,
        /// Emit JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// One glitched run, classified against the golden run.
    Glitch {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        glitch: GlitchArgs,
        /// Print the per-cycle pipeline dump of the glitched run.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        json: bool,
    },
    /// Full parameter sweep: run records, RAT and summary.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory (overrides the config).
        #[arg(long, short = 'o')]
        out: Option<PathBuf>,
        /// Continue an interrupted sweep from its run records.
        #[arg(long)]
        resume: bool,
        /// Worker threads (default: all cores).
        #[arg(long, short = 'j')]
        parallelism: Option<usize>,
    },
    /// Rebuild the risk assessment table from run records.
    Rat {
        /// JSON-lines run records written by `sweep`.
        records: PathBuf,
        /// CSV output (default: rat.csv next to the records).
        #[arg(long, short = 'o')]
        out: Option<PathBuf>,
    },
    /// Root-cause chain for one glitch.
    Trace {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        glitch: GlitchArgs,
        /// text or json.
        #[arg(long, default_value = "text")]
        format: ReportFormat,
    },
}

#[derive(Debug, Clone, Args)]
struct GlitchArgs {
    /// Glitch offset within the cycle, ns.
    #[arg(long, allow_negative_numbers = true)]
    offset: f64,
    /// Glitch width, ns.
    #[arg(long, allow_negative_numbers = true)]
    width: f64,
    /// Target instruction: `lw`, `lw@0x386`, `lw@0x386#2` or a bare `0x386`.
    #[arg(long, short = 't')]
    target: TargetRef,
    /// Stage whose input latches are glitched.
    #[arg(long, default_value = "IF")]
    stage: Stage,
}

impl GlitchArgs {
    fn spec(&self, r: &Resolved) -> Result<GlitchSpec> {
        // An unplaceable PC is still a valid trigger; it just never fires.
        let (pc, occurrence) = match self.target.pc {
            Some(pc) => (pc, self.target.occurrence),
            None => {
                let t = r.place(self.target)?;
                (t.pc, t.occurrence)
            }
        };
        let trigger = Trigger {
            target_pc: pc,
            target_stage: self.stage,
            occurrence,
        };
        let spec = GlitchSpec::new(self.offset, self.width, trigger).map_err(|e| usage!("{e}"))?;
        spec.check_against(&r.profile).map_err(|e| usage!("{e}"))?;
        Ok(spec)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Assemble { source, out } => cmd_assemble(&source, out),
        Command::Run { common, trace, json } => cmd_run(&common.resolve()?, trace, json),
        Command::Glitch {
            common,
            glitch,
            trace,
            json,
        } => cmd_glitch(&common.resolve()?, &glitch, trace, json),
        Command::Sweep {
            common,
            out,
            resume,
            parallelism,
        } => cmd_sweep(&common.resolve()?, out, resume, parallelism),
        Command::Rat { records, out } => cmd_rat(&records, out),
        Command::Trace { common, glitch, format } => cmd_trace(&common.resolve()?, &glitch, format),
    }
}

fn cmd_assemble(source: &Path, out: Option<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(source).map_err(|e| usage!("{}: {e}", source.display()))?;
    let image = assemble(&text).map_err(|e| usage!("{}:{e}", source.display()))?;
    let bin = out.unwrap_or_else(|| source.with_extension("bin"));
    let sym = bin.with_extension("sym");
    image
        .write_files(&bin, &sym)
        .with_context(|| format!("writing {}", bin.display()))?;
    let (base, bytes) = image.to_flat();
    println!(
        "{}: {} bytes at {base:#x}, {} symbols",
        bin.display(),
        bytes.len(),
        image.symbols.len()
    );
    Ok(())
}

fn cmd_run(r: &Resolved, trace: bool, json: bool) -> Result<()> {
    let d = run_pipeline_with(
        &r.image,
        r.entry_pc,
        r.machine,
        RunOptions {
            trace,
            ..RunOptions::default()
        },
    );
    if json {
        let doc = serde_json::json!({
            "tool_version": TOOL_VERSION,
            "entry_pc": r.entry_pc,
            "result": d.result,
        });
        println!("{}", serde_json::to_string_pretty(&doc)?);
    } else {
        print!("{}", report::run_text(&d.result, r.entry_pc));
    }
    if trace {
        print!("{}", d.trace);
    }
    Ok(())
}

fn cmd_glitch(r: &Resolved, g: &GlitchArgs, trace: bool, json: bool) -> Result<()> {
    let spec = g.spec(r)?;
    let golden = run_pipeline(&r.image, r.entry_pc, r.machine, None);
    let mut hook = ArmedGlitch::new(spec, &r.profile, r.policy, r.seed).map_err(|e| usage!("{e}"))?;
    let d = run_pipeline_with(
        &r.image,
        r.entry_pc,
        r.machine,
        RunOptions {
            hook: Some(&mut hook),
            trace,
            ..RunOptions::default()
        },
    );
    if !hook.has_fired() {
        eprintln!("warning: trigger never fired");
    }
    let outcome = classify(&golden, &d.result, TargetInfo::from(spec.trigger))?;
    if json {
        let doc = serde_json::json!({
            "tool_version": TOOL_VERSION,
            "profile_hash": r.profile.content_hash(),
            "spec": spec,
            "policy": r.policy,
            "seed": r.seed,
            "fired": hook.has_fired(),
            "outcome": outcome,
            "result": d.result,
        });
        println!("{}", serde_json::to_string_pretty(&doc)?);
    } else {
        print!("{}", report::glitch_text(r, &spec, &outcome, &golden, &d.result));
    }
    if trace {
        print!("{}", d.trace);
    }
    Ok(())
}

fn cmd_sweep(r: &Resolved, out: Option<PathBuf>, resume: bool, parallelism: Option<usize>) -> Result<()> {
    let grid = r.grid()?;
    let cfg = r.campaign_config(parallelism);
    let dir = r.output_dir(out);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let runs = dir.join("runs.jsonl");
    if resume && !runs.exists() {
        return Err(usage!("nothing to resume: {} does not exist", runs.display()));
    }
    let res = run_campaign(&grid, &r.image, r.entry_pc, &r.profile, &cfg, Some((&runs, resume)))?;
    let summary = res.summary(&grid, &r.profile, &cfg);
    let rat_path = dir.join("rat.csv");
    std::fs::write(&rat_path, res.rat.to_csv()).with_context(|| format!("writing {}", rat_path.display()))?;
    let summary_path = dir.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n")
        .with_context(|| format!("writing {}", summary_path.display()))?;
    for m in &res.missing_targets {
        eprintln!(
            "warning: target {} at {:#x} skipped: {}",
            m.target.mnemonic, m.target.pc, m.reason
        );
    }
    print!("{}", report::sweep_text(&summary, &res.rat));
    println!("artifacts: {}", dir.display());
    Ok(())
}

fn cmd_rat(records_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(records_path).map_err(|e| usage!("{}: {e}", records_path.display()))?;
    let mut records: Vec<RunRecord> = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec = serde_json::from_str(line).map_err(|e| usage!("{}:{}: {e}", records_path.display(), i + 1))?;
        records.push(rec);
    }
    let mut rows: Vec<String> = Vec::new();
    for rec in &records {
        if !rows.contains(&rec.target) {
            rows.push(rec.target.clone());
        }
    }
    let (rat, reduction) = aggregate(&rows, &records)?;
    if rat.total_critical == 0 {
        eprintln!(
            "warning: no critical faults in {} record(s); the table is empty",
            records.len()
        );
    }
    let out = out.unwrap_or_else(|| records_path.with_file_name("rat.csv"));
    std::fs::write(&out, rat.to_csv()).with_context(|| format!("writing {}", out.display()))?;
    print!("{}", report::rat_text(&rat));
    println!(
        "reduction: {}% ({} of {} runs critical)",
        reduction.percent, reduction.critical, reduction.total
    );
    println!("csv: {}", out.display());
    Ok(())
}

fn cmd_trace(r: &Resolved, g: &GlitchArgs, format: ReportFormat) -> Result<()> {
    let spec = g.spec(r)?;
    let golden = run_pipeline(&r.image, r.entry_pc, r.machine, None);
    let mut hook = ArmedGlitch::new(spec, &r.profile, r.policy, r.seed).map_err(|e| usage!("{e}"))?;
    let glitched = run_pipeline(&r.image, r.entry_pc, r.machine, Some(&mut hook));
    if !hook.has_fired() {
        eprintln!("warning: trigger never fired");
    }
    let outcome = classify(&golden, &glitched, TargetInfo::from(spec.trigger))?;
    let replay = Replay {
        image: &r.image,
        entry_pc: r.entry_pc,
        machine: r.machine,
        profile: &r.profile,
        spec,
        policy: r.policy,
        seed: r.seed,
    };
    let chain = trace_root_cause(&replay, &golden, &glitched, &outcome)?;
    match format {
        ReportFormat::Json => {
            let doc = serde_json::json!({
                "tool_version": TOOL_VERSION,
                "profile_hash": r.profile.content_hash(),
                "spec": spec,
                "chain": chain,
            });
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
        ReportFormat::Text => {
            println!("# {TOOL_VERSION}, profile {}", r.profile.content_hash());
            print!("{}", render_chain(&chain, format));
        }
    }
    Ok(())
}
