// SPDX-License-Identifier: Apache-2.0
//! Cycle-accurate 4-stage pipeline (IF, ID, EX, WB).
//!
//! * IF fetches 16/32-bit encodings and runs the compressed decoder; both the
//!   fetched bits and the decoder output are latched into IF/ID.
//! * ID judges legality on the fetched bits, decodes the decoder output,
//!   reads operands (with forwarding) and produces every per-format
//!   immediate.
//! * EX computes ALU results, load/store addresses and branch/jump targets.
//!   Taken control transfers flush IF/ID and the instruction leaving ID.
//!   Stores write memory at the end of EX.
//! * WB reads load data and writes the register file.
//!
//! A load followed by a dependent instruction stalls ID for one cycle.
//!
//! An [`EdgeHook`] sees every value about to be latched at a clock edge and
//! may override them once per run.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::asm::ProgramImage;
use crate::isa::{
    decode, decoder_output, imm_i_type, imm_s_type, imm_sb_type, imm_u_type, imm_uj_type, rd_of, DecodedInstr, Format,
    Mnemonic, RawInstr,
};
use crate::timing::{LatchEvent, Stage};

pub const DEFAULT_WATCHDOG: u64 = 100_000;

/// Sparse, zero-initialised, little-endian byte memory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Memory(BTreeMap<u32, u8>);

impl Memory {
    pub fn from_image(image: &ProgramImage) -> Self {
        Self(image.bytes().into_iter().collect())
    }

    pub fn read_u8(&self, addr: u32) -> u8 {
        self.0.get(&addr).copied().unwrap_or(0)
    }

    pub fn read_u16(&self, addr: u32) -> u16 {
        u16::from_le_bytes([self.read_u8(addr), self.read_u8(addr.wrapping_add(1))])
    }

    pub fn read_u32(&self, addr: u32) -> u32 {
        let b = |i| self.read_u8(addr.wrapping_add(i));
        u32::from_le_bytes([b(0), b(1), b(2), b(3)])
    }

    pub fn write_u32(&mut self, addr: u32, value: u32) {
        for (i, b) in value.to_le_bytes().into_iter().enumerate() {
            self.0.insert(addr.wrapping_add(i as u32), b);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&u32, &u8)> {
        self.0.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchState {
    pub pc: u32,
    pub regs: [u32; 32],
    pub mem: Memory,
    pub illegal_count: u64,
    pub cycle: u64,
}

impl ArchState {
    pub fn new(image: &ProgramImage, entry_pc: u32) -> Self {
        Self {
            pc: entry_pc,
            regs: [0; 32],
            mem: Memory::from_image(image),
            illegal_count: 0,
            cycle: 0,
        }
    }

    pub fn write_reg(&mut self, r: u8, value: u32) {
        if r != 0 {
            self.regs[r as usize] = value;
        }
    }

    /// Equality on everything except the cycle counter.
    pub fn same_architecture(&self, other: &Self) -> bool {
        self.pc == other.pc
            && self.regs == other.regs
            && self.mem == other.mem
            && self.illegal_count == other.illegal_count
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetireRecord {
    pub cycle_retired: u64,
    pub pc: u32,
    /// The fetch slot as decoded for legality.
    pub instr: DecodedInstr,
    /// What EX actually executed (the decoded compressed-decoder output).
    pub executed: DecodedInstr,
    pub rd_written: Option<(u8, u32)>,
    pub illegal: bool,
    /// Architectural successor PC.
    pub next_pc: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    CleanHalt,
    WatchdogTimeout,
    PcOutOfRange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunResult {
    pub retire_trace: Vec<RetireRecord>,
    pub final_state: ArchState,
    pub latch_events: Vec<LatchEvent>,
    pub halt: HaltReason,
}

impl RunResult {
    /// Retire PCs in program order.
    pub fn retired_pcs(&self) -> Vec<u32> {
        self.retire_trace.iter().map(|r| r.pc).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineConfig {
    pub max_cycles: u64,
    /// Illegal-instruction handler. Without one, the offending slot is
    /// skipped and execution continues sequentially.
    pub illegal_handler: Option<u32>,
}

impl Default for MachineConfig {
    fn default() -> Self {
        Self {
            max_cycles: DEFAULT_WATCHDOG,
            illegal_handler: None,
        }
    }
}

/// PC-relative jump target, wrapping mod 2^32.
pub fn jal_target(pc_id: u32, imm_uj: i32) -> u32 {
    assert!(imm_uj % 2 == 0, "jump immediates are always even");
    pc_id.wrapping_add(imm_uj as u32)
}

/// Successor of an illegal slot: the handler when configured, otherwise the
/// next sequential slot.
pub fn illegal_next_pc(pc: u32, slot_len: u32, handler: Option<u32>) -> u32 {
    handler.unwrap_or(pc.wrapping_add(slot_len))
}

/// Counts an illegal-instruction flag and returns where control goes next.
pub fn raise_illegal(state: &mut ArchState, pc: u32, slot_len: u32, handler: Option<u32>) -> u32 {
    state.illegal_count += 1;
    illegal_next_pc(pc, slot_len, handler)
}

/// Decodes the compressed-decoder output as a full-width instruction. A word
/// whose low bits are not `0b11` cannot be executed.
pub fn decode_expanded(word: u32) -> DecodedInstr {
    let d = decode(RawInstr::from_word(word | 0b11));
    if word & 0b11 == 0b11 {
        d
    } else {
        DecodedInstr {
            mnemonic: Mnemonic::Illegal,
            format: Format::R,
            raw: RawInstr::from_word(word),
            legal: false,
            ..d
        }
    }
}

/// Outcome of executing one instruction's EX-stage semantics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub(crate) struct ExecOut {
    pub result: u32,
    pub writes: bool,
    pub taken: bool,
    pub target: u32,
    pub lsu_addr: u32,
    pub lsu_wdata: u32,
    pub is_load: bool,
    pub is_store: bool,
    pub misaligned: bool,
}

/// Per-format immediates as produced by the decoder for any word.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Immediates {
    pub imm_i_type: u32,
    pub imm_s_type: u32,
    pub imm_sb_type: u32,
    pub imm_u_type: u32,
    pub imm_uj_type: u32,
}

impl Immediates {
    pub fn of(word: u32) -> Self {
        Self {
            imm_i_type: imm_i_type(word) as u32,
            imm_s_type: imm_s_type(word) as u32,
            imm_sb_type: imm_sb_type(word) as u32,
            imm_u_type: imm_u_type(word) as u32,
            imm_uj_type: imm_uj_type(word) as u32,
        }
    }
}

/// EX semantics shared by the pipeline and the reference interpreter.
pub(crate) fn execute(exec: &DecodedInstr, pc: u32, slot_len: u32, a: u32, b: u32, imm: &Immediates) -> ExecOut {
    let mut out = ExecOut::default();
    let link = pc.wrapping_add(slot_len);
    let alu = |out: &mut ExecOut, v: u32| {
        out.result = v;
        out.writes = true;
    };
    match exec.mnemonic {
        Mnemonic::Lui => alu(&mut out, imm.imm_u_type),
        Mnemonic::Auipc => alu(&mut out, pc.wrapping_add(imm.imm_u_type)),
        Mnemonic::Jal => {
            alu(&mut out, link);
            out.taken = true;
            out.target = pc.wrapping_add(imm.imm_uj_type);
        }
        Mnemonic::Jalr => {
            alu(&mut out, link);
            out.taken = true;
            out.target = a.wrapping_add(imm.imm_i_type) & !1;
        }
        Mnemonic::Beq | Mnemonic::Bne | Mnemonic::Blt | Mnemonic::Bge => {
            out.taken = match exec.mnemonic {
                Mnemonic::Beq => a == b,
                Mnemonic::Bne => a != b,
                Mnemonic::Blt => (a as i32) < (b as i32),
                _ => (a as i32) >= (b as i32),
            };
            out.target = pc.wrapping_add(imm.imm_sb_type);
        }
        Mnemonic::Lw => {
            out.lsu_addr = a.wrapping_add(imm.imm_i_type);
            out.misaligned = out.lsu_addr % 4 != 0;
            out.is_load = !out.misaligned;
            out.writes = out.is_load;
        }
        Mnemonic::Sw => {
            out.lsu_addr = a.wrapping_add(imm.imm_s_type);
            out.lsu_wdata = b;
            out.misaligned = out.lsu_addr % 4 != 0;
            out.is_store = !out.misaligned;
        }
        Mnemonic::Addi => alu(&mut out, a.wrapping_add(imm.imm_i_type)),
        Mnemonic::Slli => alu(&mut out, a << (imm.imm_i_type & 31)),
        Mnemonic::Srli => alu(&mut out, a >> (imm.imm_i_type & 31)),
        Mnemonic::Add => alu(&mut out, a.wrapping_add(b)),
        Mnemonic::Sub => alu(&mut out, a.wrapping_sub(b)),
        Mnemonic::Sltu => alu(&mut out, (a < b) as u32),
        Mnemonic::Xor => alu(&mut out, a ^ b),
        Mnemonic::Or => alu(&mut out, a | b),
        Mnemonic::And => alu(&mut out, a & b),
        // Halts and non-executable decoder outputs do nothing in EX.
        _ => {}
    }
    out
}

// ---------------------------------------------------------------------------
// Pipeline registers

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IfId {
    pub valid: bool,
    pub seq: u64,
    pub pc_id: u32,
    /// Fetched bits at the compressed decoder input.
    pub instr_raw: u32,
    /// Compressed decoder output.
    pub decoder_out: u32,
    pub len: u32,
    pub fetch_fault: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdEx {
    pub valid: bool,
    pub seq: u64,
    pub pc: u32,
    pub len: u32,
    pub slot: Option<DecodedInstr>,
    pub exec: Option<DecodedInstr>,
    pub illegal: bool,
    pub fetch_fault: bool,
    pub operand_a: u32,
    pub operand_b: u32,
    pub imm: Immediates,
    pub rd: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExWb {
    pub valid: bool,
    pub seq: u64,
    pub pc: u32,
    pub slot: Option<DecodedInstr>,
    pub exec: Option<DecodedInstr>,
    pub illegal: bool,
    pub fetch_fault: bool,
    pub rd: u32,
    pub writes: bool,
    pub alu_result: u32,
    pub is_load: bool,
    pub lsu_addr: u32,
    pub lsu_wdata: u32,
    pub next_pc: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineRegs {
    pub if_id: IfId,
    pub id_ex: IdEx,
    pub ex_wb: ExWb,
}

/// State after one clock edge, captured for root-cause comparison.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleSnapshot {
    pub cycle: u64,
    pub pc_if: u32,
    pub regs: PipelineRegs,
    pub rf: [u32; 32],
    pub illegal_count: u64,
    pub mem_write: Option<(u32, u32)>,
}

// ---------------------------------------------------------------------------
// Edge hook

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occupant {
    pub seq: u64,
    pub pc: u32,
}

/// Which dynamic instruction occupies each stage at a clock edge. For IF it
/// is the instruction being latched into IF/ID at this edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub cycle: u64,
    pub occupants: [Option<Occupant>; 4],
}

impl Observation {
    pub fn occupant(&self, stage: Stage) -> Option<Occupant> {
        self.occupants[stage.index()]
    }
}

/// One value about to be latched by an endpoint field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatchSlot {
    pub endpoint: &'static str,
    pub field: &'static str,
    pub stage: Stage,
    pub width: u32,
    pub intended: u32,
    pub previous: u32,
    pub value: u32,
}

/// Every endpoint value latched at one clock edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeLatches {
    pub cycle: u64,
    pub slots: Vec<LatchSlot>,
}

impl EdgeLatches {
    pub fn slot_mut(&mut self, endpoint: &str, field: &str) -> Option<&mut LatchSlot> {
        self.slots
            .iter_mut()
            .find(|s| s.endpoint == endpoint && s.field == field)
    }

    pub fn slot(&self, endpoint: &str, field: &str) -> Option<&LatchSlot> {
        self.slots.iter().find(|s| s.endpoint == endpoint && s.field == field)
    }

    fn value(&self, idx: usize) -> u32 {
        let s = &self.slots[idx];
        s.value & width_mask(s.width)
    }
}

pub(crate) fn width_mask(width: u32) -> u32 {
    if width >= 32 {
        u32::MAX
    } else {
        (1u32 << width) - 1
    }
}

/// Injection interface. Returning `Some` marks the hook as fired; it is not
/// consulted again during the run.
pub trait EdgeHook {
    fn on_edge(&mut self, obs: &Observation, latches: &mut EdgeLatches) -> Option<Vec<LatchEvent>>;
}

/// Every endpoint field the pipeline exposes: endpoint, field, latching
/// stage and width in bits.
pub const LATCH_FIELDS: [(&str, &str, Stage, u32); 18] = [
    ("decoder_in", "instr", Stage::IF, 32),
    ("if_id", "instr", Stage::IF, 32),
    ("id_ex", "operand_a", Stage::ID, 32),
    ("id_ex", "operand_b", Stage::ID, 32),
    ("id_ex", "imm_i_type", Stage::ID, 32),
    ("id_ex", "imm_s_type", Stage::ID, 32),
    ("id_ex", "imm_sb_type", Stage::ID, 32),
    ("id_ex", "imm_u_type", Stage::ID, 32),
    ("id_ex", "imm_uj_type", Stage::ID, 32),
    ("id_ex", "rd", Stage::ID, 5),
    ("ex_wb", "alu_result", Stage::EX, 32),
    ("ex_wb", "rd", Stage::EX, 5),
    ("ex_wb", "lsu_addr", Stage::EX, 32),
    ("ex_wb", "lsu_wdata", Stage::EX, 32),
    ("pc_target", "branch_taken", Stage::EX, 1),
    ("pc_target", "target", Stage::EX, 32),
    ("rf_wdata", "alu_result", Stage::WB, 32),
    ("rf_wdata", "lsu_rdata", Stage::WB, 32),
];

// Slot indices in `EdgeLatches::slots`.
const S_DEC_IN: usize = 0;
const S_IF_ID: usize = 1;
const S_OPA: usize = 2;
const S_OPB: usize = 3;
const S_IMM_I: usize = 4;
const S_IMM_S: usize = 5;
const S_IMM_SB: usize = 6;
const S_IMM_U: usize = 7;
const S_IMM_UJ: usize = 8;
const S_IDEX_RD: usize = 9;
const S_EX_ALU: usize = 10;
const S_EX_RD: usize = 11;
const S_LSU_ADDR: usize = 12;
const S_LSU_WDATA: usize = 13;
const S_TAKEN: usize = 14;
const S_TARGET: usize = 15;
const S_WB_ALU: usize = 16;
const S_WB_RDATA: usize = 17;

// ---------------------------------------------------------------------------
// Pipeline

struct Pipeline<'a> {
    cfg: MachineConfig,
    span: (u32, u32),
    state: ArchState,
    pc_if: u32,
    regs: PipelineRegs,
    next_seq: u64,
    halting: bool,
    fetch_blocked: bool,
    fault_pc: u32,
    retire: Vec<RetireRecord>,
    events: Vec<LatchEvent>,
    hook: Option<&'a mut dyn EdgeHook>,
    snapshots: Option<Vec<CycleSnapshot>>,
    trace: Option<String>,
}

/// Value a stage hands to a younger consumer through the bypass network.
#[derive(Clone, Copy)]
struct Bypass {
    rd: u32,
    value: u32,
    pending_load: bool,
}

/// Options for a detailed run.
#[derive(Default)]
pub struct RunOptions<'a> {
    pub hook: Option<&'a mut dyn EdgeHook>,
    pub snapshots: bool,
    pub trace: bool,
}

/// A run plus the optional per-cycle artifacts.
#[derive(Debug, Clone)]
pub struct DetailedRun {
    pub result: RunResult,
    pub snapshots: Vec<CycleSnapshot>,
    pub trace: String,
}

pub fn run_pipeline(
    image: &ProgramImage,
    entry_pc: u32,
    cfg: MachineConfig,
    hook: Option<&mut dyn EdgeHook>,
) -> RunResult {
    run_pipeline_with(
        image,
        entry_pc,
        cfg,
        RunOptions {
            hook,
            ..RunOptions::default()
        },
    )
    .result
}

pub fn run_pipeline_with(image: &ProgramImage, entry_pc: u32, cfg: MachineConfig, opts: RunOptions<'_>) -> DetailedRun {
    assert!(cfg.max_cycles > 0, "max_cycles must be positive");
    let mut p = Pipeline {
        cfg,
        span: image.span().unwrap_or((0, 0)),
        state: ArchState::new(image, entry_pc),
        pc_if: entry_pc,
        regs: PipelineRegs::default(),
        next_seq: 1,
        halting: false,
        fetch_blocked: false,
        fault_pc: 0,
        retire: Vec::new(),
        events: Vec::new(),
        hook: opts.hook,
        snapshots: opts.snapshots.then(Vec::new),
        trace: opts.trace.then(String::new),
    };
    let halt = loop {
        if p.state.cycle >= p.cfg.max_cycles {
            break HaltReason::WatchdogTimeout;
        }
        if let Some(h) = p.step() {
            break h;
        }
    };
    let pc = p.retire.last().map_or(entry_pc, |r| r.next_pc);
    p.state.pc = match halt {
        HaltReason::PcOutOfRange => p.fault_pc,
        _ => pc,
    };
    DetailedRun {
        result: RunResult {
            retire_trace: p.retire,
            final_state: p.state,
            latch_events: p.events,
            halt,
        },
        snapshots: p.snapshots.unwrap_or_default(),
        trace: p.trace.unwrap_or_default(),
    }
}

fn reads_of(d: &DecodedInstr) -> (Option<u8>, Option<u8>) {
    if !d.legal {
        return (None, None);
    }
    (d.rs1, d.rs2)
}

impl Pipeline<'_> {
    fn in_span(&self, pc: u32) -> bool {
        pc >= self.span.0 && pc < self.span.1
    }

    /// Advances one clock cycle. Returns the halt reason when the run ends.
    fn step(&mut self) -> Option<HaltReason> {
        let cycle = self.state.cycle;
        let cur = self.regs;

        // ---- WB ----
        let wb = cur.ex_wb;
        let mut wb_write: Option<(u8, u32)> = None;
        let mut wb_alu = 0u32;
        let mut wb_rdata = 0u32;
        let mut wb_halt = None;
        if wb.valid {
            if wb.fetch_fault {
                self.fault_pc = wb.pc;
                wb_halt = Some(HaltReason::PcOutOfRange);
            } else {
                if wb.is_load {
                    wb_rdata = self.state.mem.read_u32(wb.lsu_addr);
                } else {
                    wb_alu = wb.alu_result;
                }
                if wb.writes && wb.rd != 0 {
                    wb_write = Some((wb.rd as u8, if wb.is_load { wb_rdata } else { wb_alu }));
                }
            }
        }
        let wb_bypass = wb_write.map(|(rd, value)| Bypass {
            rd: rd as u32,
            value,
            pending_load: false,
        });

        // ---- EX ----
        let ex = cur.id_ex;
        let mut next_ex_wb = ExWb::default();
        let mut redirect: Option<u32> = None;
        let mut taken = false;
        let mut target = 0u32;
        let mut ex_bypass = None;
        if ex.valid {
            next_ex_wb = ExWb {
                valid: true,
                seq: ex.seq,
                pc: ex.pc,
                slot: ex.slot,
                exec: ex.exec,
                illegal: ex.illegal,
                fetch_fault: ex.fetch_fault,
                rd: ex.rd,
                next_pc: ex.pc.wrapping_add(ex.len),
                ..ExWb::default()
            };
            if ex.fetch_fault {
                // flows to WB and ends the run there
            } else if ex.illegal {
                next_ex_wb.writes = true;
                next_ex_wb.alu_result = 0;
                let next = illegal_next_pc(ex.pc, ex.len, self.cfg.illegal_handler);
                next_ex_wb.next_pc = next;
                if self.cfg.illegal_handler.is_some() {
                    redirect = Some(next);
                }
                ex_bypass = Some(Bypass {
                    rd: ex.rd,
                    value: 0,
                    pending_load: false,
                });
            } else if let Some(exec) = ex.exec {
                let out = execute(&exec, ex.pc, ex.len, ex.operand_a, ex.operand_b, &ex.imm);
                next_ex_wb.writes = out.writes;
                next_ex_wb.alu_result = out.result;
                next_ex_wb.is_load = out.is_load;
                next_ex_wb.lsu_addr = out.lsu_addr;
                next_ex_wb.lsu_wdata = out.lsu_wdata;
                if out.misaligned {
                    next_ex_wb.illegal = true;
                    next_ex_wb.writes = false;
                    let next = illegal_next_pc(ex.pc, ex.len, self.cfg.illegal_handler);
                    next_ex_wb.next_pc = next;
                    if self.cfg.illegal_handler.is_some() {
                        redirect = Some(next);
                    }
                }
                taken = out.taken;
                target = out.target;
                if out.writes && ex.rd != 0 {
                    ex_bypass = Some(Bypass {
                        rd: ex.rd,
                        value: out.result,
                        pending_load: out.is_load,
                    });
                }
            }
        }
        if taken {
            redirect = Some(target);
        }

        // ---- ID ----
        let id = cur.if_id;
        let mut next_id_ex = IdEx::default();
        let mut stall = false;
        let mut id_halts = false;
        if id.valid && !self.halting {
            next_id_ex = IdEx {
                valid: true,
                seq: id.seq,
                pc: id.pc_id,
                len: id.len,
                fetch_fault: id.fetch_fault,
                ..IdEx::default()
            };
            if id.fetch_fault {
                id_halts = true;
            } else {
                let slot = decode(RawInstr::from_word(id.instr_raw));
                next_id_ex.slot = Some(slot);
                next_id_ex.imm = Immediates::of(id.decoder_out);
                if !slot.legal {
                    next_id_ex.illegal = true;
                    next_id_ex.exec = Some(slot);
                    next_id_ex.rd = rd_of(id.decoder_out) as u32;
                } else {
                    let exec = decode_expanded(id.decoder_out);
                    next_id_ex.exec = Some(exec);
                    next_id_ex.rd = exec.dest().unwrap_or(0) as u32;
                    let (rs1, rs2) = reads_of(&exec);
                    let read = |r: Option<u8>, stall: &mut bool| -> u32 {
                        let Some(r) = r.map(u32::from) else { return 0 };
                        if r == 0 {
                            return 0;
                        }
                        if let Some(b) = ex_bypass.filter(|b| b.rd == r) {
                            if b.pending_load {
                                *stall = true;
                            }
                            return b.value;
                        }
                        if let Some(b) = wb_bypass.filter(|b| b.rd == r) {
                            return b.value;
                        }
                        self.state.regs[r as usize]
                    };
                    next_id_ex.operand_a = read(rs1, &mut stall);
                    next_id_ex.operand_b = read(rs2, &mut stall);
                    id_halts = exec.is_halt();
                }
            }
            if stall {
                next_id_ex = IdEx::default();
                id_halts = false;
            }
        }

        // ---- IF ----
        let mut next_if_id = if stall { cur.if_id } else { IfId::default() };
        let mut next_pc_if = self.pc_if;
        let mut fetched = None;
        let fetch_allowed = !stall && !self.halting && !id_halts && !self.fetch_blocked;
        if fetch_allowed {
            let pc = self.pc_if;
            let seq = self.next_seq;
            if !self.in_span(pc) {
                next_if_id = IfId {
                    valid: true,
                    seq,
                    pc_id: pc,
                    len: 2,
                    fetch_fault: true,
                    ..IfId::default()
                };
            } else {
                let lo = self.state.mem.read_u16(pc) as u32;
                let word = if lo & 0b11 == 0b11 {
                    (self.state.mem.read_u16(pc.wrapping_add(2)) as u32) << 16 | lo
                } else {
                    lo
                };
                let raw = RawInstr::from_word(word);
                next_if_id = IfId {
                    valid: true,
                    seq,
                    pc_id: pc,
                    instr_raw: raw.bits(),
                    decoder_out: decoder_output(raw),
                    len: raw.size(),
                    fetch_fault: false,
                };
                next_pc_if = pc.wrapping_add(raw.size());
            }
            fetched = Some(Occupant { seq, pc });
        }

        // ---- edge: hook ----
        let mut fired = None;
        if let Some(hook) = self.hook.as_deref_mut() {
            let if_occupant = if redirect.is_none() { fetched } else { None };
            let occ = |valid: bool, seq: u64, pc: u32| valid.then_some(Occupant { seq, pc });
            let obs = Observation {
                cycle,
                occupants: [
                    if_occupant,
                    occ(
                        cur.if_id.valid && !cur.if_id.fetch_fault,
                        cur.if_id.seq,
                        cur.if_id.pc_id,
                    ),
                    occ(cur.id_ex.valid && !cur.id_ex.fetch_fault, cur.id_ex.seq, cur.id_ex.pc),
                    occ(cur.ex_wb.valid && !cur.ex_wb.fetch_fault, cur.ex_wb.seq, cur.ex_wb.pc),
                ],
            };
            let wb_rd_prev = wb_write.map_or(0, |(rd, _)| self.state.regs[rd as usize]);
            let pairs: [(u32, u32); 18] = [
                (next_if_id.instr_raw, cur.if_id.instr_raw),
                (next_if_id.decoder_out, cur.if_id.decoder_out),
                (next_id_ex.operand_a, cur.id_ex.operand_a),
                (next_id_ex.operand_b, cur.id_ex.operand_b),
                (next_id_ex.imm.imm_i_type, cur.id_ex.imm.imm_i_type),
                (next_id_ex.imm.imm_s_type, cur.id_ex.imm.imm_s_type),
                (next_id_ex.imm.imm_sb_type, cur.id_ex.imm.imm_sb_type),
                (next_id_ex.imm.imm_u_type, cur.id_ex.imm.imm_u_type),
                (next_id_ex.imm.imm_uj_type, cur.id_ex.imm.imm_uj_type),
                (next_id_ex.rd, cur.id_ex.rd),
                (next_ex_wb.alu_result, cur.ex_wb.alu_result),
                (next_ex_wb.rd, cur.ex_wb.rd),
                (next_ex_wb.lsu_addr, cur.ex_wb.lsu_addr),
                (next_ex_wb.lsu_wdata, cur.ex_wb.lsu_wdata),
                (taken as u32, 0),
                (target, self.pc_if),
                (wb_alu, wb_rd_prev),
                (wb_rdata, wb_rd_prev),
            ];
            let mut latches = EdgeLatches {
                cycle,
                slots: LATCH_FIELDS
                    .iter()
                    .zip(pairs)
                    .map(|(&(endpoint, field, stage, width), (intended, previous))| LatchSlot {
                        endpoint,
                        field,
                        stage,
                        width,
                        intended,
                        previous,
                        value: intended,
                    })
                    .collect(),
            };
            if let Some(events) = hook.on_edge(&obs, &mut latches) {
                fired = Some((latches, events));
            }
        }
        if let Some((latches, events)) = fired {
            self.hook = None;
            self.events.extend(events);
            next_if_id.instr_raw = latches.value(S_DEC_IN);
            next_if_id.decoder_out = latches.value(S_IF_ID);
            next_id_ex.operand_a = latches.value(S_OPA);
            next_id_ex.operand_b = latches.value(S_OPB);
            next_id_ex.imm = Immediates {
                imm_i_type: latches.value(S_IMM_I),
                imm_s_type: latches.value(S_IMM_S),
                imm_sb_type: latches.value(S_IMM_SB),
                imm_u_type: latches.value(S_IMM_U),
                imm_uj_type: latches.value(S_IMM_UJ),
            };
            next_id_ex.rd = latches.value(S_IDEX_RD);
            next_ex_wb.alu_result = latches.value(S_EX_ALU);
            next_ex_wb.rd = latches.value(S_EX_RD);
            next_ex_wb.lsu_addr = latches.value(S_LSU_ADDR);
            next_ex_wb.lsu_wdata = latches.value(S_LSU_WDATA);
            let glitched_taken = latches.value(S_TAKEN) != 0;
            let glitched_target = latches.value(S_TARGET);
            if ex.valid && !ex.fetch_fault && !ex.illegal && !next_ex_wb.illegal {
                redirect = glitched_taken.then_some(glitched_target);
            }
            if let Some((rd, _)) = wb_write {
                let v = if wb.is_load {
                    latches.value(S_WB_RDATA)
                } else {
                    latches.value(S_WB_ALU)
                };
                wb_write = Some((rd, v));
            }
        }
        if ex.valid && !ex.fetch_fault && !ex.illegal && !next_ex_wb.illegal {
            if let Some(t) = redirect {
                next_ex_wb.next_pc = t;
            }
        }

        // ---- edge: commit ----
        let mut mem_write = None;
        if next_ex_wb.valid && !next_ex_wb.illegal {
            if let Some(exec) = next_ex_wb.exec {
                if exec.is_store() {
                    self.state.mem.write_u32(next_ex_wb.lsu_addr, next_ex_wb.lsu_wdata);
                    mem_write = Some((next_ex_wb.lsu_addr, next_ex_wb.lsu_wdata));
                }
            }
        }
        let mut halt = wb_halt;
        if wb.valid && !wb.fetch_fault {
            if let Some((rd, v)) = wb_write {
                self.state.write_reg(rd, v);
            }
            if wb.illegal {
                self.state.illegal_count += 1;
            }
            let slot = wb.slot.expect("retiring instruction has a slot");
            let exec = wb.exec.unwrap_or(slot);
            let is_halt = !wb.illegal && exec.is_halt();
            self.retire.push(RetireRecord {
                cycle_retired: cycle + 1,
                pc: wb.pc,
                instr: slot,
                executed: exec,
                rd_written: wb_write,
                illegal: wb.illegal,
                next_pc: if is_halt { wb.pc } else { wb.next_pc },
            });
            if is_halt {
                halt = Some(HaltReason::CleanHalt);
            }
        }

        if let Some(t) = redirect {
            next_if_id = IfId::default();
            next_id_ex = IdEx::default();
            next_pc_if = t;
            self.fetch_blocked = false;
        } else {
            if id_halts {
                self.halting = true;
            }
            if next_if_id.fetch_fault && fetch_allowed {
                self.fetch_blocked = true;
            }
        }
        if fetch_allowed {
            self.next_seq += 1;
        }

        self.regs = PipelineRegs {
            if_id: next_if_id,
            id_ex: next_id_ex,
            ex_wb: next_ex_wb,
        };
        self.pc_if = next_pc_if;
        self.state.cycle = cycle + 1;

        if let Some(trace) = self.trace.as_mut() {
            let stage = |valid: bool, pc: u32, d: Option<DecodedInstr>| -> String {
                if !valid {
                    return "--".to_string();
                }
                match d {
                    Some(d) => format!("{pc:08x}:{}", d.mnemonic),
                    None => format!("{pc:08x}"),
                }
            };
            let mut line = format!(
                "cycle={cycle:06} IF={} ID={} EX={} WB={}",
                fetched.map_or_else(|| "--".to_string(), |o| format!("{:08x}", o.pc)),
                stage(
                    cur.if_id.valid,
                    cur.if_id.pc_id,
                    (!cur.if_id.fetch_fault).then(|| decode(RawInstr::from_word(cur.if_id.instr_raw)))
                ),
                stage(cur.id_ex.valid, cur.id_ex.pc, cur.id_ex.slot),
                stage(cur.ex_wb.valid, cur.ex_wb.pc, cur.ex_wb.slot),
            );
            if stall {
                line.push_str(" stall");
            }
            if let Some((rd, v)) = wb_write.filter(|_| wb.valid && !wb.fetch_fault) {
                let _ = write!(line, " x{rd}<=0x{v:08x}");
            }
            if let Some(t) = redirect {
                let _ = write!(line, " redirect->0x{t:08x}");
            }
            if !self.events.is_empty() && self.events.iter().any(|e| e.cycle == cycle) {
                line.push_str(" GLITCH");
            }
            trace.push_str(&line);
            trace.push('\n');
        }
        if let Some(snaps) = self.snapshots.as_mut() {
            snaps.push(CycleSnapshot {
                cycle: cycle + 1,
                pc_if: self.pc_if,
                regs: self.regs,
                rf: self.state.regs,
                illegal_count: self.state.illegal_count,
                mem_write,
            });
        }
        halt
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;

    fn run(src: &str) -> RunResult {
        let img = assemble(src).unwrap();
        run_pipeline(&img, 0, MachineConfig::default(), None)
    }

    #[test]
    fn halt_only_program() {
        let r = run("ebreak");
        assert_eq!(r.halt, HaltReason::CleanHalt);
        assert_eq!(r.retire_trace.len(), 1);
        assert!(r.retire_trace[0].instr.is_halt());
        assert!(r.latch_events.is_empty());
    }

    #[test]
    fn infinite_loop_hits_watchdog() {
        let img = assemble("loop: c.j loop").unwrap();
        let cfg = MachineConfig {
            max_cycles: 1000,
            ..MachineConfig::default()
        };
        let r = run_pipeline(&img, 0, cfg, None);
        assert_eq!(r.halt, HaltReason::WatchdogTimeout);
        assert_eq!(r.final_state.cycle, 1000);
    }

    #[test]
    fn x0_stays_zero() {
        let r = run("addi x0, x0, 5\nadd x1, x0, x0\nebreak");
        assert_eq!(r.final_state.regs[0], 0);
        assert_eq!(r.final_state.regs[1], 0);
    }

    #[test]
    fn four_cycle_fetch_to_retire() {
        let r = run("addi x1, x0, 1\nebreak");
        // fetched at cycle 0, retired at the edge ending cycle 3
        assert_eq!(r.retire_trace[0].cycle_retired, 4);
        assert_eq!(r.retire_trace[1].cycle_retired, 5);
    }

    #[test]
    fn load_use_stalls_one_cycle() {
        let src = ".org 0\nlui x10, 1\nlw x1, 0(x10)\naddi x2, x1, 1\nebreak\n.org 0x1000\n.word 41";
        let r = run(src);
        assert_eq!(r.final_state.regs[2], 42);
        let cycles: Vec<u64> = r.retire_trace.iter().map(|t| t.cycle_retired).collect();
        assert_eq!(cycles, vec![4, 5, 7, 8]);
    }

    #[test]
    fn taken_branch_flushes_two_younger() {
        let r = run("beq x0, x0, 8\naddi x1, x0, 1\naddi x2, x0, 2\nebreak");
        assert_eq!(r.retired_pcs(), vec![0, 8, 12]);
        assert_eq!(r.final_state.regs[1], 0);
        assert_eq!(r.retire_trace[1].cycle_retired, r.retire_trace[0].cycle_retired + 3);
    }

    #[test]
    fn illegal_without_handler_skips_slot() {
        let r = run("c.nop\n.word 0xffffffff\naddi x1, x0, 1\nebreak");
        assert_eq!(r.final_state.illegal_count, 1);
        let rec = &r.retire_trace[1];
        assert!(rec.illegal);
        assert_eq!(rec.pc, 2);
        assert_eq!(rec.next_pc, 6);
        assert_eq!(r.retire_trace[2].pc, 6);
    }

    #[test]
    fn illegal_with_handler_redirects() {
        let img = assemble(".half 0x0000\naddi x1, x0, 1\n.org 0x40\nhandler: addi x2, x0, 2\nebreak").unwrap();
        let cfg = MachineConfig {
            illegal_handler: Some(0x40),
            ..MachineConfig::default()
        };
        let r = run_pipeline(&img, 0, cfg, None);
        assert_eq!(r.retired_pcs(), vec![0, 0x40, 0x44]);
        assert_eq!(r.final_state.regs[1], 0);
        assert_eq!(r.final_state.regs[2], 2);
    }

    #[test]
    fn two_illegals_counted() {
        let r = run(".half 0\n.half 0\nebreak");
        assert_eq!(r.final_state.illegal_count, 2);
    }

    #[test]
    fn jump_out_of_image_halts() {
        let r = run("jal x0, 0x1000\nebreak");
        assert_eq!(r.halt, HaltReason::PcOutOfRange);
        assert_eq!(r.final_state.pc, 0x1000);
    }

    #[test]
    fn jal_target_arithmetic() {
        assert_eq!(jal_target(0x1000, 0x20), 0x1020);
        assert_eq!(jal_target(0x1000, -4), 0x0FFC);
        assert_eq!(jal_target(0xFFFF_FFFE, 4), 2);
    }

    #[test]
    #[should_panic]
    fn jal_target_rejects_odd_immediates() {
        jal_target(0, 3);
    }

    #[test]
    fn trace_has_one_line_per_cycle() {
        let img = assemble("addi x1, x0, 1\nebreak").unwrap();
        let d = run_pipeline_with(
            &img,
            0,
            MachineConfig::default(),
            RunOptions {
                trace: true,
                snapshots: true,
                ..RunOptions::default()
            },
        );
        assert_eq!(d.trace.lines().count() as u64, d.result.final_state.cycle);
        assert_eq!(d.snapshots.len() as u64, d.result.final_state.cycle);
        assert!(d.trace.contains("x1<=0x00000001"));
    }
}
