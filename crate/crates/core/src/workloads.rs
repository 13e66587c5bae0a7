// SPDX-License-Identifier: Apache-2.0
//! Bundled workloads.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::asm::{assemble, ProgramImage};
use crate::isa::{encode, Mnemonic, Operands};

/// Source of the demo workload.
pub const DEMO_SOURCE: &str = include_str!("../workloads/demo.s");

/// Entry point of every bundled workload.
pub const DEMO_ENTRY: u32 = 0;

/// PC of the demo's attacked load.
pub const DEMO_LW_PC: u32 = 0x386;

/// PC of the demo's long jump.
pub const DEMO_JAL_PC: u32 = 0x38A;

/// Value the demo's attacked load brings into x11.
pub const DEMO_LW_VALUE: u32 = 0x4202_6ada;

/// Fetch PC reached when the demo jal latches [`jal_corruption_word`].
pub const DEMO_JAL_CORRUPT_TARGET: u32 = 0xF_3698;

/// The eight campaign targets, in row order.
pub const DEMO_TARGETS: [Mnemonic; 8] = [
    Mnemonic::CAddi,
    Mnemonic::Auipc,
    Mnemonic::Lw,
    Mnemonic::Jal,
    Mnemonic::Bne,
    Mnemonic::Bge,
    Mnemonic::CLwsp,
    Mnemonic::CMv,
];

pub fn demo_image() -> ProgramImage {
    assemble(DEMO_SOURCE).expect("bundled demo assembles")
}

/// (mnemonic, pc) of each campaign target, taken from the
/// `target_<mnemonic>` labels (dots written as underscores).
pub fn demo_targets(image: &ProgramImage) -> Vec<(Mnemonic, u32)> {
    DEMO_TARGETS
        .iter()
        .map(|&m| {
            let label = format!("target_{}", m.name().replace('.', "_"));
            let pc = image.symbol(&label).unwrap_or_else(|| panic!("demo lacks `{label}`"));
            (m, pc)
        })
        .collect()
}

/// IF/ID word of the demo jal after an immediate corruption that sends the
/// fetch stream to [`DEMO_JAL_CORRUPT_TARGET`].
pub fn jal_corruption_word() -> u32 {
    let imm = DEMO_JAL_CORRUPT_TARGET.wrapping_sub(DEMO_JAL_PC) as i32;
    encode(
        Mnemonic::Jal,
        Operands {
            rd: 1,
            rs1: 0,
            rs2: 0,
            imm,
        },
    )
    .expect("fixture immediate is encodable")
    .bits()
}

/// Base of the data window random programs load from and store to. x2
/// holds it throughout.
pub const RANDOM_DATA_BASE: u32 = 0x8000;

/// Generates a random straight-line-ish program over the supported subset.
///
/// Control flow only moves forward, so every program terminates at the
/// final `ebreak`. Register x2 is pinned to [`RANDOM_DATA_BASE`] so loads and
/// stores stay aligned and inside a 256-byte window. x5 is scratch for
/// indirect jumps. Returns the source and the number of instruction slots
/// emitted (multi-instruction idioms count every slot).
pub fn random_program(seed: u64, slots: usize) -> (String, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut src = String::new();
    let mut emitted = 0usize;
    let _ = writeln!(src, "    lui x2, {}", RANDOM_DATA_BASE >> 12);
    for r in [1u32, 3, 4, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15] {
        let _ = writeln!(src, "    addi x{r}, x0, {}", rng.gen_range(-2048..2048));
    }
    let regs = [1u32, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15];
    let mut i = 0usize;
    while emitted < slots {
        let rd = regs[rng.gen_range(0..regs.len())];
        let rs1 = regs[rng.gen_range(0..regs.len())];
        let rs2 = regs[rng.gen_range(0..regs.len())];
        let ahead = format!("L{}", i + rng.gen_range(1..=6));
        let _ = write!(src, "L{i}: ");
        let n = match rng.gen_range(0..26) {
            0 => format!("lui x{rd}, {}", rng.gen_range(0..0x10_0000)),
            1 => format!("auipc x{rd}, {}", rng.gen_range(0..0x10_0000)),
            2 | 3 => format!("addi x{rd}, x{rs1}, {}", rng.gen_range(-2048..2048)),
            4 => format!("slli x{rd}, x{rs1}, {}", rng.gen_range(0..32)),
            5 => format!("srli x{rd}, x{rs1}, {}", rng.gen_range(0..32)),
            6 => format!("add x{rd}, x{rs1}, x{rs2}"),
            7 => format!("sub x{rd}, x{rs1}, x{rs2}"),
            8 => format!("sltu x{rd}, x{rs1}, x{rs2}"),
            9 => format!("xor x{rd}, x{rs1}, x{rs2}"),
            10 => format!("or x{rd}, x{rs1}, x{rs2}"),
            11 => format!("and x{rd}, x{rs1}, x{rs2}"),
            12 | 13 => format!("lw x{rd}, {}(x2)", 4 * rng.gen_range(0..64)),
            14 => format!("sw x{rs2}, {}(x2)", 4 * rng.gen_range(0..64)),
            15 => {
                let b = ["beq", "bne", "blt", "bge"][rng.gen_range(0..4)];
                format!("{b} x{rs1}, x{rs2}, {ahead}")
            }
            16 => format!("jal x{rd}, {ahead}"),
            17 => {
                emitted += 2;
                format!("auipc x5, 0\n    addi x5, x5, {ahead}\n    jalr x{rd}, 4(x5)")
            }
            18 => {
                let imm = [-32, -7, -1, 1, 5, 31][rng.gen_range(0..6)];
                format!("c.addi x{rd}, {imm}")
            }
            19 => format!("c.li x{rd}, {}", rng.gen_range(-32..32)),
            20 => format!("c.mv x{rd}, x{rs2}"),
            21 => format!("c.lwsp x{rd}, {}(x2)", 4 * rng.gen_range(0..64)),
            22 => "c.nop".to_string(),
            23 => format!("c.j {ahead}"),
            24 => {
                emitted += 3;
                format!("auipc x5, 0\n    addi x5, x5, {ahead}\n    addi x5, x5, 4\n    c.jr x5")
            }
            _ => {
                // An illegal slot now and then exercises the skip path.
                if rng.gen_bool(0.5) {
                    ".half 0x0000".to_string()
                } else {
                    format!("addi x{rd}, x{rs1}, 1\n    lw x{rd}, 2(x2)")
                }
            }
        };
        if n.contains('\n') && n.starts_with("addi") {
            emitted += 1;
        }
        let _ = writeln!(src, "{n}");
        emitted += 1;
        i += 1;
    }
    for k in i..i + 7 {
        let _ = writeln!(src, "L{k}:");
    }
    let _ = writeln!(src, "    ebreak");
    let _ = writeln!(src, ".org {RANDOM_DATA_BASE:#x}");
    for _ in 0..64 {
        let _ = writeln!(src, "    .word {:#x}", rng.gen::<u32>());
    }
    (src, emitted)
}
