// SPDX-License-Identifier: Apache-2.0
//! Instruction-at-a-time interpreter with the same architectural semantics
//! as the pipeline, used as a differential oracle.

use crate::asm::ProgramImage;
use crate::isa::{decode, decoder_output, rd_of, RawInstr};
use crate::machine::{
    decode_expanded, execute, raise_illegal, ArchState, HaltReason, Immediates, MachineConfig, RetireRecord, RunResult,
};

/// Runs `image` from `entry_pc` one instruction per step. `cfg.max_cycles`
/// bounds the number of steps. `cycle_retired` in the trace is the step
/// count, not a pipeline cycle.
pub fn run_reference(image: &ProgramImage, entry_pc: u32, cfg: MachineConfig) -> RunResult {
    let (lo, hi) = image.span().unwrap_or((0, 0));
    let mut st = ArchState::new(image, entry_pc);
    let mut trace = Vec::new();
    let mut pc = entry_pc;
    let halt = loop {
        if st.cycle >= cfg.max_cycles {
            break HaltReason::WatchdogTimeout;
        }
        if pc < lo || pc >= hi {
            break HaltReason::PcOutOfRange;
        }
        st.cycle += 1;
        let half = st.mem.read_u16(pc) as u32;
        let word = if half & 0b11 == 0b11 {
            (st.mem.read_u16(pc.wrapping_add(2)) as u32) << 16 | half
        } else {
            half
        };
        let raw = RawInstr::from_word(word);
        let len = raw.size();
        let slot = decode(raw);
        let out_word = decoder_output(raw);

        if !slot.legal {
            let rd = rd_of(out_word);
            let write = (rd != 0).then_some((rd, 0));
            st.write_reg(rd, 0);
            let next = raise_illegal(&mut st, pc, len, cfg.illegal_handler);
            trace.push(RetireRecord {
                cycle_retired: st.cycle,
                pc,
                instr: slot,
                executed: slot,
                rd_written: write,
                illegal: true,
                next_pc: next,
            });
            pc = next;
            continue;
        }

        let exec = decode_expanded(out_word);
        let a = exec.rs1.map_or(0, |r| st.regs[r as usize]);
        let b = exec.rs2.map_or(0, |r| st.regs[r as usize]);
        let out = execute(&exec, pc, len, a, b, &Immediates::of(out_word));
        if out.misaligned {
            let next = raise_illegal(&mut st, pc, len, cfg.illegal_handler);
            trace.push(RetireRecord {
                cycle_retired: st.cycle,
                pc,
                instr: slot,
                executed: exec,
                rd_written: None,
                illegal: true,
                next_pc: next,
            });
            pc = next;
            continue;
        }
        if out.is_store {
            st.mem.write_u32(out.lsu_addr, out.lsu_wdata);
        }
        let value = if out.is_load {
            st.mem.read_u32(out.lsu_addr)
        } else {
            out.result
        };
        let write = exec.dest().filter(|_| out.writes).map(|rd| (rd, value));
        if let Some((rd, v)) = write {
            st.write_reg(rd, v);
        }
        let halts = exec.is_halt();
        let next = if halts {
            pc
        } else if out.taken {
            out.target
        } else {
            pc.wrapping_add(len)
        };
        trace.push(RetireRecord {
            cycle_retired: st.cycle,
            pc,
            instr: slot,
            executed: exec,
            rd_written: write,
            illegal: false,
            next_pc: next,
        });
        pc = next;
        if halts {
            break HaltReason::CleanHalt;
        }
    };
    st.pc = pc;
    RunResult {
        retire_trace: trace,
        final_state: st,
        latch_events: Vec::new(),
        halt,
    }
}

/// Architectural agreement check between two runs: halt reason, retired
/// (pc, rd write, illegal, next_pc) sequence and final state excluding the
/// cycle counter. Returns a description of the first mismatch.
pub fn compare_architectural(expected: &RunResult, actual: &RunResult) -> Result<(), String> {
    if expected.halt != actual.halt {
        return Err(format!("halt {:?} vs {:?}", expected.halt, actual.halt));
    }
    for (i, (a, b)) in expected.retire_trace.iter().zip(&actual.retire_trace).enumerate() {
        let ka = (a.pc, a.rd_written, a.illegal, a.next_pc);
        let kb = (b.pc, b.rd_written, b.illegal, b.next_pc);
        if ka != kb {
            return Err(format!("retire #{i}: {ka:x?} vs {kb:x?}"));
        }
    }
    if expected.retire_trace.len() != actual.retire_trace.len() {
        return Err(format!(
            "retired {} vs {} instructions",
            expected.retire_trace.len(),
            actual.retire_trace.len()
        ));
    }
    if !expected.final_state.same_architecture(&actual.final_state) {
        return Err("final architectural state differs".into());
    }
    Ok(())
}
