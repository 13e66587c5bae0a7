// SPDX-License-Identifier: Apache-2.0
//! Causal chains from a glitched latch to its architectural effect.
//!
//! Both runs are simulated again with per-cycle snapshots. The first
//! divergence is the earliest snapshot in which any compared element
//! differs, scanning elements in a fixed order: IF/ID fields, ID/EX fields,
//! EX/WB fields, the fetch PC, the register file, the memory write of that
//! cycle, then the illegal counter.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::asm::ProgramImage;
use crate::classifier::{attribute_fields, Category, Divergence, FaultOutcome};
use crate::error::ClassifyError;
use crate::injector::ArmedGlitch;
use crate::isa::FieldDiff;
use crate::machine::{run_pipeline_with, CycleSnapshot, MachineConfig, RunOptions, RunResult};
use crate::timing::{GlitchSpec, TimingProfile, ViolationPolicy};

/// Everything needed to replay one glitched run.
#[derive(Debug, Clone, Copy)]
pub struct Replay<'a> {
    pub image: &'a ProgramImage,
    pub entry_pc: u32,
    pub machine: MachineConfig,
    pub profile: &'a TimingProfile,
    pub spec: GlitchSpec,
    pub policy: ViolationPolicy,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "link", rename_all = "snake_case")]
pub enum Link {
    /// The glitch itself and the target-stage endpoints that met timing.
    Glitch {
        cycle: u64,
        t_glitch_ps: u64,
        stage: String,
        clean_endpoints: Vec<String>,
    },
    /// A field that latched before its data arrived.
    LatchEvent {
        cycle: u64,
        endpoint: String,
        field: String,
        violated_mask: u32,
        intended: u32,
        latched: u32,
    },
    /// First pipeline or architectural element that differs from golden.
    FirstDivergence {
        cycle: u64,
        element: String,
        golden: u64,
        glitched: u64,
    },
    /// Decoded-field comparison of the intended and latched instruction word.
    FieldDiff {
        cycle: u64,
        golden_word: u32,
        corrupted_word: u32,
        diff: FieldDiff,
    },
    /// A consequence visible in the retire trace or final state.
    Effect { cycle: u64, description: String },
}

impl Link {
    pub fn cycle(&self) -> u64 {
        match self {
            Link::Glitch { cycle, .. }
            | Link::LatchEvent { cycle, .. }
            | Link::FirstDivergence { cycle, .. }
            | Link::FieldDiff { cycle, .. }
            | Link::Effect { cycle, .. } => *cycle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalChain {
    pub category: Category,
    pub first_divergence: Option<Divergence>,
    pub links: Vec<Link>,
}

impl CausalChain {
    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }
}

fn compare(a: &CycleSnapshot, b: &CycleSnapshot) -> Option<(String, u64, u64)> {
    macro_rules! check {
        ($name:expr, $x:expr, $y:expr) => {
            if $x != $y {
                return Some(($name.to_string(), $x as u64, $y as u64));
            }
        };
    }
    let (p, q) = (&a.regs.if_id, &b.regs.if_id);
    check!("if_id.valid", p.valid, q.valid);
    check!("if_id.pc", p.pc_id, q.pc_id);
    check!("if_id.instr_raw", p.instr_raw, q.instr_raw);
    check!("if_id.decoder_out", p.decoder_out, q.decoder_out);
    let (p, q) = (&a.regs.id_ex, &b.regs.id_ex);
    check!("id_ex.valid", p.valid, q.valid);
    check!("id_ex.pc", p.pc, q.pc);
    check!("id_ex.illegal", p.illegal, q.illegal);
    check!("id_ex.operand_a", p.operand_a, q.operand_a);
    check!("id_ex.operand_b", p.operand_b, q.operand_b);
    check!("id_ex.imm_i_type", p.imm.imm_i_type, q.imm.imm_i_type);
    check!("id_ex.imm_s_type", p.imm.imm_s_type, q.imm.imm_s_type);
    check!("id_ex.imm_sb_type", p.imm.imm_sb_type, q.imm.imm_sb_type);
    check!("id_ex.imm_u_type", p.imm.imm_u_type, q.imm.imm_u_type);
    check!("id_ex.imm_uj_type", p.imm.imm_uj_type, q.imm.imm_uj_type);
    check!("id_ex.rd", p.rd, q.rd);
    let (p, q) = (&a.regs.ex_wb, &b.regs.ex_wb);
    check!("ex_wb.valid", p.valid, q.valid);
    check!("ex_wb.pc", p.pc, q.pc);
    check!("ex_wb.illegal", p.illegal, q.illegal);
    check!("ex_wb.rd", p.rd, q.rd);
    check!("ex_wb.alu_result", p.alu_result, q.alu_result);
    check!("ex_wb.lsu_addr", p.lsu_addr, q.lsu_addr);
    check!("ex_wb.lsu_wdata", p.lsu_wdata, q.lsu_wdata);
    check!("ex_wb.next_pc", p.next_pc, q.next_pc);
    check!("pc_if", a.pc_if, b.pc_if);
    for r in 0..32 {
        check!(format!("x{r}"), a.rf[r], b.rf[r]);
    }
    if a.mem_write != b.mem_write {
        let addr = |w: Option<(u32, u32)>| w.map_or(0, |(a, _)| a as u64);
        let data = |w: Option<(u32, u32)>| w.map_or(0, |(_, d)| d as u64);
        let same_addr = addr(a.mem_write) == addr(b.mem_write);
        return Some(if same_addr {
            ("mem_write.data".into(), data(a.mem_write), data(b.mem_write))
        } else {
            ("mem_write.addr".into(), addr(a.mem_write), addr(b.mem_write))
        });
    }
    check!("illegal_count", a.illegal_count, b.illegal_count);
    None
}

/// Earliest differing element between two snapshot streams.
pub fn first_divergence(golden: &[CycleSnapshot], glitched: &[CycleSnapshot]) -> Option<(u64, String, u64, u64)> {
    for (a, b) in golden.iter().zip(glitched) {
        if let Some((el, x, y)) = compare(a, b) {
            return Some((a.cycle, el, x, y));
        }
    }
    if golden.len() != glitched.len() {
        let n = golden.len().min(glitched.len());
        return Some((n as u64 + 1, "halt".into(), golden.len() as u64, glitched.len() as u64));
    }
    None
}

fn effects(
    golden: &RunResult,
    glitched: &RunResult,
    outcome: &FaultOutcome,
    target_pc: u32,
    occurrence: u32,
) -> Vec<Link> {
    let mut out = Vec::new();
    let nth = |r: &RunResult| {
        r.retire_trace
            .iter()
            .filter(|t| t.pc == target_pc)
            .nth(occurrence as usize - 1)
            .cloned()
    };
    let (g, x) = (nth(golden), nth(glitched));
    match (&g, &x) {
        (Some(g), None) => out.push(Link::Effect {
            cycle: glitched.final_state.cycle,
            description: format!(
                "target at {:#010x} never retired (golden retired at cycle {})",
                g.pc, g.cycle_retired
            ),
        }),
        (Some(g), Some(x)) => {
            if x.illegal && !g.illegal {
                out.push(Link::Effect {
                    cycle: x.cycle_retired,
                    description: format!("target at {:#010x} retired as illegal", x.pc),
                });
            }
            if g.rd_written != x.rd_written {
                let show =
                    |w: Option<(u8, u32)>| w.map_or("no write".to_string(), |(r, v)| format!("x{r} <= {v:#010x}"));
                out.push(Link::Effect {
                    cycle: x.cycle_retired,
                    description: format!("register write {} (golden {})", show(x.rd_written), show(g.rd_written)),
                });
            }
        }
        _ => {}
    }
    let diverge = golden
        .retire_trace
        .iter()
        .zip(&glitched.retire_trace)
        .find(|(a, b)| (a.pc, a.next_pc) != (b.pc, b.next_pc));
    if let Some((a, b)) = diverge {
        out.push(Link::Effect {
            cycle: b.cycle_retired,
            description: if a.pc == b.pc {
                format!(
                    "pc {:#010x} continues to {:#010x} instead of {:#010x}",
                    b.pc, b.next_pc, a.next_pc
                )
            } else {
                format!("retired pc {:#010x} instead of {:#010x}", b.pc, a.pc)
            },
        });
    }
    out.push(Link::Effect {
        cycle: glitched.final_state.cycle,
        description: if outcome.illegal_raised {
            "illegal flag raised".into()
        } else {
            "illegal flag not raised".into()
        },
    });
    if golden.halt != glitched.halt {
        out.push(Link::Effect {
            cycle: glitched.final_state.cycle,
            description: format!("run ended with {:?} (golden {:?})", glitched.halt, golden.halt),
        });
    }
    out.sort_by_key(Link::cycle);
    out
}

/// Builds the causal chain of a classified run by replaying both sides
/// with snapshots enabled.
pub fn trace_root_cause(
    replay: &Replay<'_>,
    golden: &RunResult,
    glitched: &RunResult,
    outcome: &FaultOutcome,
) -> Result<CausalChain, ClassifyError> {
    let diverges = golden.retire_trace != glitched.retire_trace
        || golden.final_state != glitched.final_state
        || golden.halt != glitched.halt;
    if glitched.latch_events.is_empty() {
        if diverges {
            return Err(ClassifyError::ModelInconsistency);
        }
        return Ok(CausalChain {
            category: outcome.category,
            first_divergence: None,
            links: Vec::new(),
        });
    }
    if outcome.category == Category::NoEffect {
        return Ok(CausalChain {
            category: outcome.category,
            first_divergence: None,
            links: Vec::new(),
        });
    }

    let opts = RunOptions {
        snapshots: true,
        ..RunOptions::default()
    };
    let g = run_pipeline_with(replay.image, replay.entry_pc, replay.machine, opts);
    let mut hook = ArmedGlitch::new(replay.spec, replay.profile, replay.policy, replay.seed)
        .map_err(|_| ClassifyError::ModelInconsistency)?;
    let x = run_pipeline_with(
        replay.image,
        replay.entry_pc,
        replay.machine,
        RunOptions {
            hook: Some(&mut hook),
            snapshots: true,
            trace: false,
        },
    );
    if &g.result != golden || &x.result != glitched {
        return Err(ClassifyError::ModelInconsistency);
    }
    let Some((cycle, element, gv, xv)) = first_divergence(&g.snapshots, &x.snapshots) else {
        return Err(ClassifyError::ModelInconsistency);
    };

    let glitch_cycle = glitched.latch_events[0].cycle;
    let stage = replay.spec.trigger.target_stage;
    let violated: std::collections::BTreeSet<&str> =
        glitched.latch_events.iter().map(|e| e.endpoint.as_str()).collect();
    let clean_endpoints = replay
        .profile
        .endpoints_for(stage)
        .map(|e| e.name.clone())
        .filter(|n| !violated.contains(n.as_str()))
        .collect();
    let mut links = vec![Link::Glitch {
        cycle: glitch_cycle,
        t_glitch_ps: crate::timing::ns_to_ps(replay.spec.t_offset_ns + replay.spec.t_width_ns),
        stage: stage.to_string(),
        clean_endpoints,
    }];
    links.extend(glitched.latch_events.iter().map(|e| Link::LatchEvent {
        cycle: e.cycle,
        endpoint: e.endpoint.clone(),
        field: e.field.clone(),
        violated_mask: e.violated_mask,
        intended: e.value_intended,
        latched: e.value_latched,
    }));
    links.push(Link::FirstDivergence {
        cycle,
        element: element.clone(),
        golden: gv,
        glitched: xv,
    });
    let word_event = glitched
        .latch_events
        .iter()
        .find(|e| e.endpoint == "if_id")
        .or_else(|| glitched.latch_events.iter().find(|e| e.endpoint == "decoder_in"));
    if let Some(e) = word_event {
        links.push(Link::FieldDiff {
            cycle: e.cycle + 1,
            golden_word: e.value_intended,
            corrupted_word: e.value_latched,
            diff: attribute_fields(e.value_intended, e.value_latched),
        });
    }
    links.extend(effects(
        golden,
        glitched,
        outcome,
        replay.spec.trigger.target_pc,
        replay.spec.trigger.occurrence,
    ));
    Ok(CausalChain {
        category: outcome.category,
        first_divergence: Some(Divergence { cycle, element }),
        links,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Text,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "human" => Ok(Self::Text),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

/// Deterministic rendering of a chain.
pub fn render_chain(chain: &CausalChain, format: ReportFormat) -> String {
    if format == ReportFormat::Json {
        let mut s = serde_json::to_string_pretty(chain).expect("chains serialize");
        s.push('\n');
        return s;
    }
    if chain.is_empty() {
        return format!("outcome: {}\nno divergence\n", chain.category);
    }
    let mut s = format!("outcome: {}\n", chain.category);
    if let Some(d) = &chain.first_divergence {
        let _ = writeln!(s, "first divergence: {} at cycle {}", d.element, d.cycle);
    }
    for (i, link) in chain.links.iter().enumerate() {
        let _ = write!(s, "{:>2}. [cycle {:>6}] ", i + 1, link.cycle());
        let _ = match link {
            Link::Glitch {
                t_glitch_ps,
                stage,
                clean_endpoints,
                ..
            } => writeln!(
                s,
                "glitch in {stage}: effective period {:.3} ns; endpoints meeting timing: {}",
                *t_glitch_ps as f64 / 1000.0,
                if clean_endpoints.is_empty() { "none".to_string() } else { clean_endpoints.join(", ") }
            ),
            Link::LatchEvent {
                endpoint,
                field,
                violated_mask,
                intended,
                latched,
                ..
            } => writeln!(
                s,
                "{endpoint}.{field} latched early: mask {violated_mask:#010x}, intended {intended:#010x}, latched {latched:#010x}"
            ),
            Link::FirstDivergence {
                element, golden, glitched, ..
            } => writeln!(s, "{element} differs: golden {golden:#x}, glitched {glitched:#x}"),
            Link::FieldDiff {
                golden_word,
                corrupted_word,
                diff,
                ..
            } => {
                let fields: Vec<String> = diff
                    .changed_fields
                    .iter()
                    .map(|f| serde_json::to_value(f).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
                    .collect();
                let class = serde_json::to_value(diff.outcome_class)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default();
                writeln!(
                    s,
                    "instruction word {golden_word:#010x} -> {corrupted_word:#010x}: {class} (fields: {})",
                    if fields.is_empty() { "none".to_string() } else { fields.join(", ") }
                )
            }
            Link::Effect { description, .. } => writeln!(s, "{description}"),
        };
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::classify;
    use crate::machine::run_pipeline;
    use crate::timing::{Stage, Trigger};
    use crate::workloads::{demo_image, DEMO_ENTRY, DEMO_LW_PC};

    fn chain_at(t_width: f64) -> (CausalChain, FaultOutcome) {
        let img = demo_image();
        let profile = TimingProfile::default_profile();
        let trigger = Trigger {
            target_pc: DEMO_LW_PC,
            target_stage: Stage::IF,
            occurrence: 1,
        };
        let spec = GlitchSpec::new(0.833, t_width, trigger).unwrap();
        let cfg = MachineConfig::default();
        let golden = run_pipeline(&img, DEMO_ENTRY, cfg, None);
        let mut hook = ArmedGlitch::new(spec, &profile, ViolationPolicy::Zero, 0).unwrap();
        let glitched = run_pipeline(&img, DEMO_ENTRY, cfg, Some(&mut hook));
        let outcome = classify(&golden, &glitched, trigger.into()).unwrap();
        let replay = Replay {
            image: &img,
            entry_pc: DEMO_ENTRY,
            machine: cfg,
            profile: &profile,
            spec,
            policy: ViolationPolicy::Zero,
            seed: 0,
        };
        (
            trace_root_cause(&replay, &golden, &glitched, &outcome).unwrap(),
            outcome,
        )
    }

    #[test]
    fn case_two_chain_names_if_id_and_zero_write() {
        let (chain, o) = chain_at(3.3);
        assert_eq!(o.case_id, Some(2));
        let d = chain.first_divergence.as_ref().unwrap();
        assert!(d.element.starts_with("if_id."), "{}", d.element);
        let text = render_chain(&chain, ReportFormat::Text);
        assert!(text.contains("if_id.instr"), "{text}");
        assert!(text.contains("became_illegal"), "{text}");
        assert!(text.contains("x11 <= 0x00000000"), "{text}");
    }

    #[test]
    fn case_three_chain_shows_clean_decoder_input() {
        let (chain, o) = chain_at(4.0);
        assert_eq!(o.case_id, Some(3));
        assert_eq!(chain.first_divergence.as_ref().unwrap().element, "if_id.decoder_out");
        match &chain.links[0] {
            Link::Glitch { clean_endpoints, .. } => assert_eq!(clean_endpoints, &vec!["decoder_in".to_string()]),
            other => panic!("{other:?}"),
        }
        assert!(render_chain(&chain, ReportFormat::Text).contains("illegal flag not raised"));
    }

    #[test]
    fn links_are_chronological() {
        for w in [2.0, 3.3, 4.0, 4.3] {
            let (chain, _) = chain_at(w);
            assert!(chain.links.windows(2).all(|p| p[0].cycle() <= p[1].cycle()), "{w}");
            let glitch = chain.links[0].cycle();
            assert!(chain.first_divergence.unwrap().cycle >= glitch);
        }
    }

    #[test]
    fn no_effect_chain_is_empty() {
        let (chain, o) = chain_at(6.0);
        assert_eq!(o.category, Category::NoEffect);
        assert!(chain.is_empty());
        assert_eq!(
            render_chain(&chain, ReportFormat::Text),
            "outcome: no_effect\nno divergence\n"
        );
    }

    #[test]
    fn rendering_is_deterministic() {
        let (chain, _) = chain_at(3.3);
        assert_eq!(
            render_chain(&chain, ReportFormat::Json),
            render_chain(&chain, ReportFormat::Json)
        );
        let back: CausalChain = serde_json::from_str(&render_chain(&chain, ReportFormat::Json)).unwrap();
        assert_eq!(back, chain);
    }

    #[test]
    fn divergence_without_events_is_inconsistent() {
        let img = demo_image();
        let profile = TimingProfile::default_profile();
        let cfg = MachineConfig::default();
        let golden = run_pipeline(&img, DEMO_ENTRY, cfg, None);
        let mut glitched = golden.clone();
        glitched.final_state.regs[11] ^= 1;
        let outcome = classify(
            &golden,
            &glitched,
            crate::classifier::TargetInfo {
                pc: DEMO_LW_PC,
                occurrence: 1,
            },
        )
        .unwrap();
        let trigger = Trigger {
            target_pc: DEMO_LW_PC,
            target_stage: Stage::IF,
            occurrence: 1,
        };
        let replay = Replay {
            image: &img,
            entry_pc: DEMO_ENTRY,
            machine: cfg,
            profile: &profile,
            spec: GlitchSpec::new(1.0, 1.0, trigger).unwrap(),
            policy: ViolationPolicy::Zero,
            seed: 0,
        };
        assert_eq!(
            trace_root_cause(&replay, &golden, &glitched, &outcome),
            Err(ClassifyError::ModelInconsistency)
        );
    }
}
