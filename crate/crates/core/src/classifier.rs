// SPDX-License-Identifier: Apache-2.0
//! Labels a glitched run against its golden run.
//!
//! Effects are read off the target instruction's retire record and the
//! whole-run traces:
//!
//! * **instruction_skip**: the target retired illegal, never retired, or its
//!   intended register write was lost.
//! * **data_zeroization**: the target wrote 0 where the golden run wrote a
//!   nonzero value.
//! * **partial_data_corruption**: the target wrote a different nonzero value.
//! * **pc_redirection**: the (pc, next_pc) retire streams diverge.
//! * **crash_or_hang**: the run ended on the watchdog or an out-of-image
//!   fetch without any of the above.
//! * **other_state_mismatch**: anything else that differs.
//! * **multi_effect**: a register-level effect together with a redirection.
//!
//! The serialized [`FaultOutcome`] uses snake_case names throughout and is
//! stable across releases.

use serde::{Deserialize, Serialize};

use crate::asm::ProgramImage;
use crate::error::{ClassifyError, TimingError};
use crate::injector::ArmedGlitch;
use crate::isa::{decode_word, diff_fields, FieldDiff};
use crate::machine::{run_pipeline, HaltReason, MachineConfig, RetireRecord, RunResult};
use crate::timing::{GlitchSpec, Stage, TimingProfile, Trigger, ViolationPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    NoEffect,
    InstructionSkip,
    DataZeroization,
    PartialDataCorruption,
    PcRedirection,
    CrashOrHang,
    OtherStateMismatch,
    MultiEffect,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::NoEffect => "no_effect",
            Category::InstructionSkip => "instruction_skip",
            Category::DataZeroization => "data_zeroization",
            Category::PartialDataCorruption => "partial_data_corruption",
            Category::PcRedirection => "pc_redirection",
            Category::CrashOrHang => "crash_or_hang",
            Category::OtherStateMismatch => "other_state_mismatch",
            Category::MultiEffect => "multi_effect",
        }
    }

    /// Critical on its own. A multi-effect outcome is only ever built from
    /// critical members.
    pub fn is_critical(self) -> bool {
        matches!(
            self,
            Category::InstructionSkip
                | Category::DataZeroization
                | Category::PartialDataCorruption
                | Category::PcRedirection
                | Category::MultiEffect
        )
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub cycle: u64,
    pub element: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultOutcome {
    pub category: Category,
    /// Critical members when `category` is `multi_effect`, otherwise empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<Category>,
    pub case_id: Option<u8>,
    pub illegal_raised: bool,
    pub critical: bool,
    pub field_diff: Option<FieldDiff>,
    pub first_divergence: Option<Divergence>,
}

/// The instruction a glitch was aimed at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetInfo {
    pub pc: u32,
    pub occurrence: u32,
}

impl From<Trigger> for TargetInfo {
    fn from(t: Trigger) -> Self {
        Self {
            pc: t.target_pc,
            occurrence: t.occurrence,
        }
    }
}

fn nth_retire(trace: &[RetireRecord], pc: u32, occurrence: u32) -> Option<&RetireRecord> {
    trace
        .iter()
        .filter(|r| r.pc == pc)
        .nth(occurrence.saturating_sub(1) as usize)
}

/// Case number of a (category, illegal flag) pair.
pub fn case_id(category: Category, illegal_raised: bool) -> Option<u8> {
    match (category, illegal_raised) {
        (Category::InstructionSkip, true) => Some(1),
        (Category::DataZeroization, true) => Some(2),
        (Category::DataZeroization, false) => Some(3),
        (Category::PartialDataCorruption, false) => Some(4),
        _ => None,
    }
}

/// Field-level comparison of a fetch slot's intended word with the word
/// actually latched.
pub fn attribute_fields(golden_word: u32, corrupted_word: u32) -> FieldDiff {
    diff_fields(&decode_word(golden_word), &decode_word(corrupted_word))
}

fn register_effect(
    golden: Option<&RetireRecord>,
    glitched: Option<&RetireRecord>,
    ended_cleanly: bool,
) -> Option<Category> {
    let g = golden?;
    let Some(x) = glitched else {
        // A run cut short before the target retired is a crash, not a skip.
        return ended_cleanly.then_some(Category::InstructionSkip);
    };
    match (g.rd_written, x.rd_written) {
        (Some((grd, gv)), Some((xrd, xv))) if grd == xrd => {
            if gv == xv {
                None
            } else if xv == 0 {
                Some(Category::DataZeroization)
            } else {
                Some(Category::PartialDataCorruption)
            }
        }
        (Some(_), _) => Some(Category::InstructionSkip),
        (None, _) if x.illegal && !g.illegal => Some(Category::InstructionSkip),
        _ => None,
    }
}

fn first_trace_divergence(golden: &RunResult, glitched: &RunResult) -> Option<Divergence> {
    let g = &golden.retire_trace;
    let x = &glitched.retire_trace;
    for (i, (a, b)) in g.iter().zip(x).enumerate() {
        if a != b {
            let element = if a.pc != b.pc || a.next_pc != b.next_pc {
                "pc"
            } else if a.illegal != b.illegal {
                "illegal_flag"
            } else if a.rd_written != b.rd_written {
                "rd_write"
            } else {
                "retire"
            };
            return Some(Divergence {
                cycle: b.cycle_retired.min(a.cycle_retired),
                element: format!("{element}@retire[{i}]"),
            });
        }
    }
    if g.len() != x.len() {
        let n = g.len().min(x.len());
        let cycle = g
            .get(n)
            .or(x.get(n))
            .map_or(glitched.final_state.cycle, |r| r.cycle_retired);
        return Some(Divergence {
            cycle,
            element: format!("retire_count@retire[{n}]"),
        });
    }
    if golden.halt != glitched.halt || !golden.final_state.same_architecture(&glitched.final_state) {
        return Some(Divergence {
            cycle: glitched.final_state.cycle,
            element: "final_state".into(),
        });
    }
    None
}

/// Classifies `glitched` against `golden` for the instruction `target`.
pub fn classify(golden: &RunResult, glitched: &RunResult, target: TargetInfo) -> Result<FaultOutcome, ClassifyError> {
    if !golden.latch_events.is_empty() {
        return Err(ClassifyError::GoldenNotFaultFree(format!(
            "{} latch events recorded",
            golden.latch_events.len()
        )));
    }
    let illegal_raised = glitched.final_state.illegal_count > golden.final_state.illegal_count;
    let field_diff = glitched
        .latch_events
        .iter()
        .find(|e| e.endpoint == "if_id")
        .or_else(|| glitched.latch_events.iter().find(|e| e.endpoint == "decoder_in"))
        .map(|e| attribute_fields(e.value_intended, e.value_latched));

    let identical = golden.retire_trace == glitched.retire_trace
        && golden.halt == glitched.halt
        && golden.final_state.same_architecture(&glitched.final_state);
    if identical {
        return Ok(FaultOutcome {
            category: Category::NoEffect,
            members: Vec::new(),
            case_id: None,
            illegal_raised: false,
            critical: false,
            field_diff,
            first_divergence: None,
        });
    }

    let g_rec = nth_retire(&golden.retire_trace, target.pc, target.occurrence);
    let x_rec = nth_retire(&glitched.retire_trace, target.pc, target.occurrence);
    let reg = register_effect(g_rec, x_rec, glitched.halt == HaltReason::CleanHalt);
    // A truncated but otherwise matching stream is not a redirection.
    let redirected = golden
        .retire_trace
        .iter()
        .zip(&glitched.retire_trace)
        .any(|(a, b)| (a.pc, a.next_pc) != (b.pc, b.next_pc))
        || (glitched.halt == HaltReason::CleanHalt && golden.retire_trace.len() != glitched.retire_trace.len());

    let mut members = Vec::new();
    if let Some(c) = reg {
        members.push(c);
    }
    if redirected {
        members.push(Category::PcRedirection);
    }
    let category = match members.len() {
        0 if glitched.halt != HaltReason::CleanHalt => Category::CrashOrHang,
        0 => Category::OtherStateMismatch,
        1 => members[0],
        _ => Category::MultiEffect,
    };
    if category != Category::MultiEffect {
        members.clear();
    }
    Ok(FaultOutcome {
        category,
        members,
        case_id: case_id(category, illegal_raised),
        illegal_raised,
        critical: category.is_critical(),
        field_diff,
        first_divergence: first_trace_divergence(golden, glitched),
    })
}

/// One point of a width sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub t_width_ns: f64,
    pub t_glitch_ns: f64,
    pub outcome: FaultOutcome,
}

/// Sweeps `widths` at a fixed offset on an IF-stage glitch of `target` and
/// classifies every point with the zero policy.
pub fn case_bands_check(
    image: &ProgramImage,
    entry_pc: u32,
    profile: &TimingProfile,
    target: TargetInfo,
    t_offset_ns: f64,
    widths: &[f64],
) -> Result<Vec<BandPoint>, TimingError> {
    let cfg = MachineConfig::default();
    let golden = run_pipeline(image, entry_pc, cfg, None);
    let trigger = Trigger {
        target_pc: target.pc,
        target_stage: Stage::IF,
        occurrence: target.occurrence,
    };
    widths
        .iter()
        .map(|&w| {
            let spec = GlitchSpec::new(t_offset_ns, w, trigger)?;
            let mut hook = ArmedGlitch::new(spec, profile, ViolationPolicy::Zero, 0)?;
            let glitched = run_pipeline(image, entry_pc, cfg, Some(&mut hook));
            let outcome = classify(&golden, &glitched, target).expect("golden run has no latch events");
            Ok(BandPoint {
                t_width_ns: w,
                t_glitch_ns: t_offset_ns + w,
                outcome,
            })
        })
        .collect()
}
