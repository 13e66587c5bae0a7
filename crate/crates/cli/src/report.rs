// SPDX-License-Identifier: Apache-2.0
//! Plain-text renderings of run, glitch, sweep and RAT results.

use std::fmt::Write;

use glitchsim::campaign::{CampaignSummary, RATable, StagePair};
use glitchsim::classifier::FaultOutcome;
use glitchsim::isa::disassemble;
use glitchsim::machine::{HaltReason, RunResult};
use glitchsim::timing::{glitch_period, GlitchSpec};

use crate::config::Resolved;
use crate::TOOL_VERSION;

fn halt_name(h: HaltReason) -> &'static str {
    match h {
        HaltReason::CleanHalt => "clean_halt",
        HaltReason::WatchdogTimeout => "watchdog_timeout",
        HaltReason::PcOutOfRange => "pc_out_of_range",
    }
}

fn state_lines(out: &mut String, r: &RunResult) {
    let st = &r.final_state;
    let _ = writeln!(out, "final state:");
    let _ = writeln!(out, "  pc = 0x{:08x}", st.pc);
    for (i, v) in st.regs.iter().enumerate().filter(|(_, v)| **v != 0) {
        let _ = writeln!(out, "  x{i} = 0x{v:08x}");
    }
    let _ = writeln!(out, "  illegal_count = {}", st.illegal_count);
}

pub fn run_text(r: &RunResult, entry_pc: u32) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {TOOL_VERSION}");
    let _ = writeln!(out, "entry: 0x{entry_pc:08x}");
    let _ = writeln!(
        out,
        "halt: {} after {} cycles, {} retired",
        halt_name(r.halt),
        r.final_state.cycle,
        r.retire_trace.len()
    );
    let _ = writeln!(out, "retire trace:");
    for rec in &r.retire_trace {
        let write = match rec.rd_written {
            Some((rd, v)) => format!("  x{rd} <= 0x{v:08x}"),
            None => String::new(),
        };
        let flag = if rec.illegal { "  [illegal]" } else { "" };
        let line = format!(
            "  {:06} 0x{:08x} {:<24}{write}{flag}",
            rec.cycle_retired,
            rec.pc,
            disassemble(&rec.instr)
        );
        let _ = writeln!(out, "{}", line.trim_end());
    }
    state_lines(&mut out, r);
    out
}

pub fn glitch_text(
    r: &Resolved,
    spec: &GlitchSpec,
    o: &FaultOutcome,
    golden: &RunResult,
    glitched: &RunResult,
) -> String {
    let mut out = String::new();
    let t = &spec.trigger;
    let _ = writeln!(out, "# {TOOL_VERSION}, profile {}", r.profile.content_hash());
    let _ = writeln!(
        out,
        "glitch: offset {:.3} ns, width {:.3} ns, t_glitch {:.3} ns at {} of 0x{:08x} (occurrence {})",
        spec.t_offset_ns,
        spec.t_width_ns,
        glitch_period(spec),
        t.target_stage,
        t.target_pc,
        t.occurrence
    );
    let _ = writeln!(out, "policy: {} (seed {})", r.policy, r.seed);
    let _ = writeln!(out, "latch events: {}", glitched.latch_events.len());
    for e in &glitched.latch_events {
        let _ = writeln!(
            out,
            "  cycle {} {}.{} mask 0x{:08x}: 0x{:08x} -> 0x{:08x}",
            e.cycle, e.endpoint, e.field, e.violated_mask, e.value_intended, e.value_latched
        );
    }
    let case = o.case_id.map_or("-".to_string(), |c| format!("#{c}"));
    let _ = writeln!(out, "outcome: {}", o.category);
    if !o.members.is_empty() {
        let names: Vec<String> = o.members.iter().map(|m| m.to_string()).collect();
        let _ = writeln!(out, "  members: {}", names.join(", "));
    }
    let _ = writeln!(out, "case: {case}");
    let _ = writeln!(
        out,
        "illegal flag: {}",
        if o.illegal_raised { "raised" } else { "not raised" }
    );
    let _ = writeln!(out, "critical: {}", o.critical);
    if let Some(d) = &o.first_divergence {
        let _ = writeln!(out, "first divergence: cycle {} {}", d.cycle, d.element);
    }
    let _ = writeln!(
        out,
        "halt: {} (golden {})",
        halt_name(glitched.halt),
        halt_name(golden.halt)
    );
    for (i, (g, x)) in golden
        .final_state
        .regs
        .iter()
        .zip(&glitched.final_state.regs)
        .enumerate()
    {
        if g != x {
            let _ = writeln!(out, "  x{i}: 0x{g:08x} -> 0x{x:08x}");
        }
    }
    state_lines(&mut out, glitched);
    out
}

pub fn rat_text(rat: &RATable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "critical faults: {}", rat.total_critical);
    let mut order: Vec<usize> = (0..rat.rows.len()).collect();
    order.sort_by(|&a, &b| rat.row_sum(b).total_cmp(&rat.row_sum(a)).then(a.cmp(&b)));
    let _ = writeln!(
        out,
        "{:>4}  {:<8} {:>8} {:>8} {:>8} {:>8}",
        "rank",
        "instr",
        StagePair::IfId.name(),
        StagePair::IdEx.name(),
        StagePair::ExWb.name(),
        "total"
    );
    for (rank, &i) in order.iter().enumerate() {
        let c = rat.cells[i];
        let _ = writeln!(
            out,
            "{:>4}  {:<8} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
            rank + 1,
            rat.rows[i],
            c[0],
            c[1],
            c[2],
            rat.row_sum(i)
        );
    }
    out
}

pub fn sweep_text(s: &CampaignSummary, rat: &RATable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# glitchsim {}, profile {}", s.tool_version, s.profile_hash);
    let _ = writeln!(out, "runs: {}", s.total_runs);
    let _ = writeln!(out, "critical: {}", s.critical_runs);
    let _ = writeln!(
        out,
        "reduction: {}% (truncated {}%)",
        s.reduction.percent, s.reduction.percent_truncated
    );
    let cases: Vec<String> = s
        .case_counts
        .iter()
        .enumerate()
        .map(|(i, n)| format!("#{}={n}", i + 1))
        .collect();
    let _ = writeln!(out, "cases: {}", cases.join(" "));
    out.push_str(&rat_text(rat));
    out
}
