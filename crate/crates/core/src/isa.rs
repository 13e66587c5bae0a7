// SPDX-License-Identifier: Apache-2.0
//! Decoding, encoding and compressed expansion for the supported RV32I + C
//! subset.
//!
//! Illegality is a value, never an error: [`decode`] always returns a
//! [`DecodedInstr`], and words outside the supported subset come back with
//! `legal == false` and fields extracted positionally from the closest
//! matching format so that corruption can still be attributed field by field.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::IsaError;

/// A fetched instruction encoding, either 16 or 32 bits wide.
///
/// The width is fully determined by `bits[1:0]`: anything other than `0b11`
/// is a compressed encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RawInstr {
    bits: u32,
}

impl RawInstr {
    /// Interprets the low bits of a fetched word. A compressed encoding keeps
    /// only its low half.
    pub fn from_word(word: u32) -> Self {
        if word & 0b11 == 0b11 {
            Self { bits: word }
        } else {
            Self { bits: word & 0xFFFF }
        }
    }

    pub fn from_half(half: u16) -> Self {
        Self::from_word(half as u32)
    }

    pub fn bits(self) -> u32 {
        self.bits
    }

    pub fn is_compressed(self) -> bool {
        self.bits & 0b11 != 0b11
    }

    /// Encoding width in bits (16 or 32).
    pub fn width(self) -> u32 {
        if self.is_compressed() {
            16
        } else {
            32
        }
    }

    /// Encoding size in bytes (2 or 4).
    pub fn size(self) -> u32 {
        self.width() / 8
    }

    pub fn to_le_bytes(self) -> Vec<u8> {
        if self.is_compressed() {
            (self.bits as u16).to_le_bytes().to_vec()
        } else {
            self.bits.to_le_bytes().to_vec()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mnemonic {
    Lui,
    Auipc,
    Jal,
    Jalr,
    Beq,
    Bne,
    Blt,
    Bge,
    Lw,
    Sw,
    Addi,
    Slli,
    Srli,
    Add,
    Sub,
    Sltu,
    Xor,
    Or,
    And,
    Ecall,
    Ebreak,
    CAddi,
    CLi,
    CLwsp,
    CMv,
    CJr,
    CJ,
    CNop,
    Illegal,
}

impl Mnemonic {
    pub const SUPPORTED: [Mnemonic; 28] = [
        Mnemonic::Lui,
        Mnemonic::Auipc,
        Mnemonic::Jal,
        Mnemonic::Jalr,
        Mnemonic::Beq,
        Mnemonic::Bne,
        Mnemonic::Blt,
        Mnemonic::Bge,
        Mnemonic::Lw,
        Mnemonic::Sw,
        Mnemonic::Addi,
        Mnemonic::Slli,
        Mnemonic::Srli,
        Mnemonic::Add,
        Mnemonic::Sub,
        Mnemonic::Sltu,
        Mnemonic::Xor,
        Mnemonic::Or,
        Mnemonic::And,
        Mnemonic::Ecall,
        Mnemonic::Ebreak,
        Mnemonic::CAddi,
        Mnemonic::CLi,
        Mnemonic::CLwsp,
        Mnemonic::CMv,
        Mnemonic::CJr,
        Mnemonic::CJ,
        Mnemonic::CNop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mnemonic::Lui => "lui",
            Mnemonic::Auipc => "auipc",
            Mnemonic::Jal => "jal",
            Mnemonic::Jalr => "jalr",
            Mnemonic::Beq => "beq",
            Mnemonic::Bne => "bne",
            Mnemonic::Blt => "blt",
            Mnemonic::Bge => "bge",
            Mnemonic::Lw => "lw",
            Mnemonic::Sw => "sw",
            Mnemonic::Addi => "addi",
            Mnemonic::Slli => "slli",
            Mnemonic::Srli => "srli",
            Mnemonic::Add => "add",
            Mnemonic::Sub => "sub",
            Mnemonic::Sltu => "sltu",
            Mnemonic::Xor => "xor",
            Mnemonic::Or => "or",
            Mnemonic::And => "and",
            Mnemonic::Ecall => "ecall",
            Mnemonic::Ebreak => "ebreak",
            Mnemonic::CAddi => "c.addi",
            Mnemonic::CLi => "c.li",
            Mnemonic::CLwsp => "c.lwsp",
            Mnemonic::CMv => "c.mv",
            Mnemonic::CJr => "c.jr",
            Mnemonic::CJ => "c.j",
            Mnemonic::CNop => "c.nop",
            Mnemonic::Illegal => "illegal",
        }
    }

    pub fn is_compressed(self) -> bool {
        matches!(
            self,
            Mnemonic::CAddi
                | Mnemonic::CLi
                | Mnemonic::CLwsp
                | Mnemonic::CMv
                | Mnemonic::CJr
                | Mnemonic::CJ
                | Mnemonic::CNop
        )
    }
}

impl fmt::Display for Mnemonic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mnemonic {
    type Err = IsaError;

    /// Case-insensitive: `JAL` and `jal` name the same instruction.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Mnemonic::SUPPORTED
            .iter()
            .copied()
            .find(|m| m.name() == lower)
            .ok_or_else(|| IsaError::UnknownMnemonic(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Format {
    R,
    I,
    S,
    B,
    U,
    J,
    CI,
    CR,
    CL,
    CSS,
    CB,
    CJ,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecodedInstr {
    pub mnemonic: Mnemonic,
    pub format: Format,
    pub rd: Option<u8>,
    pub rs1: Option<u8>,
    pub rs2: Option<u8>,
    pub imm: Option<i32>,
    pub raw: RawInstr,
    pub expanded_from_compressed: bool,
    pub legal: bool,
}

impl DecodedInstr {
    /// Opcode bits as seen by the field model: `bits[6:0]` for 32-bit words,
    /// quadrant plus `funct3` for compressed ones.
    pub fn opcode_field(&self) -> u32 {
        let b = self.raw.bits();
        if self.raw.is_compressed() {
            ((b >> 13) & 0b111) << 2 | (b & 0b11)
        } else {
            b & 0x7F
        }
    }

    pub fn funct_field(&self) -> Option<u32> {
        let b = self.raw.bits();
        match self.format {
            Format::R => Some(funct3(b) | funct7(b) << 3),
            Format::I | Format::S | Format::B => Some(funct3(b)),
            Format::CR => Some((b >> 12) & 1),
            _ => None,
        }
    }

    pub fn is_halt(&self) -> bool {
        self.legal && matches!(self.mnemonic, Mnemonic::Ebreak | Mnemonic::Ecall)
    }

    pub fn is_load(&self) -> bool {
        self.legal && matches!(self.mnemonic, Mnemonic::Lw | Mnemonic::CLwsp)
    }

    pub fn is_store(&self) -> bool {
        self.legal && self.mnemonic == Mnemonic::Sw
    }

    /// Register written by this instruction, if any (x0 writes count as none).
    pub fn dest(&self) -> Option<u8> {
        if !self.legal {
            return None;
        }
        match self.mnemonic {
            Mnemonic::Sw
            | Mnemonic::Beq
            | Mnemonic::Bne
            | Mnemonic::Blt
            | Mnemonic::Bge
            | Mnemonic::Ecall
            | Mnemonic::Ebreak => None,
            _ => self.rd.filter(|&r| r != 0),
        }
    }
}

pub(crate) fn rd_of(w: u32) -> u8 {
    ((w >> 7) & 31) as u8
}
pub(crate) fn rs1_of(w: u32) -> u8 {
    ((w >> 15) & 31) as u8
}
pub(crate) fn rs2_of(w: u32) -> u8 {
    ((w >> 20) & 31) as u8
}
fn funct3(w: u32) -> u32 {
    (w >> 12) & 0b111
}
fn funct7(w: u32) -> u32 {
    w >> 25
}

/// Sign-extended I-type immediate of a 32-bit word.
pub fn imm_i_type(w: u32) -> i32 {
    (w as i32) >> 20
}

pub fn imm_s_type(w: u32) -> i32 {
    ((w as i32) >> 25) << 5 | ((w >> 7) & 0x1F) as i32
}

pub fn imm_sb_type(w: u32) -> i32 {
    ((w as i32) >> 31) << 12
        | (((w >> 7) & 1) << 11) as i32
        | (((w >> 25) & 0x3F) << 5) as i32
        | (((w >> 8) & 0xF) << 1) as i32
}

pub fn imm_u_type(w: u32) -> i32 {
    (w & 0xFFFF_F000) as i32
}

pub fn imm_uj_type(w: u32) -> i32 {
    ((w as i32) >> 31) << 20
        | (((w >> 12) & 0xFF) << 12) as i32
        | (((w >> 20) & 1) << 11) as i32
        | (((w >> 21) & 0x3FF) << 1) as i32
}

const OP_LUI: u32 = 0b011_0111;
const OP_AUIPC: u32 = 0b001_0111;
const OP_JAL: u32 = 0b110_1111;
const OP_JALR: u32 = 0b110_0111;
const OP_BRANCH: u32 = 0b110_0011;
const OP_LOAD: u32 = 0b000_0011;
const OP_STORE: u32 = 0b010_0011;
const OP_IMM: u32 = 0b001_0011;
const OP_REG: u32 = 0b011_0011;
const OP_SYSTEM: u32 = 0b111_0011;

fn fields_for(format: Format, w: u32) -> (Option<u8>, Option<u8>, Option<u8>, Option<i32>) {
    match format {
        Format::R => (Some(rd_of(w)), Some(rs1_of(w)), Some(rs2_of(w)), None),
        Format::I => (Some(rd_of(w)), Some(rs1_of(w)), None, Some(imm_i_type(w))),
        Format::S => (None, Some(rs1_of(w)), Some(rs2_of(w)), Some(imm_s_type(w))),
        Format::B => (None, Some(rs1_of(w)), Some(rs2_of(w)), Some(imm_sb_type(w))),
        Format::U => (Some(rd_of(w)), None, None, Some(imm_u_type(w))),
        Format::J => (Some(rd_of(w)), None, None, Some(imm_uj_type(w))),
        _ => (None, None, None, None),
    }
}

fn decode32(w: u32) -> DecodedInstr {
    let f3 = funct3(w);
    let f7 = funct7(w);
    let (format, mnemonic) = match w & 0x7F {
        OP_LUI => (Format::U, Some(Mnemonic::Lui)),
        OP_AUIPC => (Format::U, Some(Mnemonic::Auipc)),
        OP_JAL => (Format::J, Some(Mnemonic::Jal)),
        OP_JALR => (Format::I, (f3 == 0).then_some(Mnemonic::Jalr)),
        OP_BRANCH => (
            Format::B,
            match f3 {
                0b000 => Some(Mnemonic::Beq),
                0b001 => Some(Mnemonic::Bne),
                0b100 => Some(Mnemonic::Blt),
                0b101 => Some(Mnemonic::Bge),
                _ => None,
            },
        ),
        OP_LOAD => (Format::I, (f3 == 0b010).then_some(Mnemonic::Lw)),
        OP_STORE => (Format::S, (f3 == 0b010).then_some(Mnemonic::Sw)),
        OP_IMM => (
            Format::I,
            match (f3, f7) {
                (0b000, _) => Some(Mnemonic::Addi),
                (0b001, 0) => Some(Mnemonic::Slli),
                (0b101, 0) => Some(Mnemonic::Srli),
                _ => None,
            },
        ),
        OP_REG => (
            Format::R,
            match (f3, f7) {
                (0b000, 0) => Some(Mnemonic::Add),
                (0b000, 0b010_0000) => Some(Mnemonic::Sub),
                (0b011, 0) => Some(Mnemonic::Sltu),
                (0b100, 0) => Some(Mnemonic::Xor),
                (0b110, 0) => Some(Mnemonic::Or),
                (0b111, 0) => Some(Mnemonic::And),
                _ => None,
            },
        ),
        OP_SYSTEM => (
            Format::I,
            match w {
                0x0000_0073 => Some(Mnemonic::Ecall),
                0x0010_0073 => Some(Mnemonic::Ebreak),
                _ => None,
            },
        ),
        // Unknown opcode: positional extraction over every R-type slot.
        _ => (Format::R, None),
    };
    let (mut rd, mut rs1, rs2, mut imm) = fields_for(format, w);
    if let Some(Mnemonic::Slli | Mnemonic::Srli) = mnemonic {
        imm = Some(((w >> 20) & 0x1F) as i32);
    }
    if let Some(Mnemonic::Ecall | Mnemonic::Ebreak) = mnemonic {
        rd = None;
        rs1 = None;
        imm = None;
    }
    DecodedInstr {
        mnemonic: mnemonic.unwrap_or(Mnemonic::Illegal),
        format,
        rd,
        rs1,
        rs2,
        imm,
        raw: RawInstr { bits: w },
        expanded_from_compressed: false,
        legal: mnemonic.is_some(),
    }
}

fn sext(value: u32, bits: u32) -> i32 {
    let shift = 32 - bits;
    ((value << shift) as i32) >> shift
}

fn ci_imm(h: u32) -> i32 {
    sext(((h >> 12) & 1) << 5 | ((h >> 2) & 0x1F), 6)
}

fn cj_offset(h: u32) -> i32 {
    let b = |i: u32| (h >> i) & 1;
    let off = b(12) << 11
        | b(11) << 4
        | ((h >> 9) & 0b11) << 8
        | b(8) << 10
        | b(7) << 6
        | b(6) << 7
        | ((h >> 3) & 0b111) << 1
        | b(2) << 5;
    sext(off, 12)
}

fn clwsp_offset(h: u32) -> u32 {
    ((h >> 12) & 1) << 5 | ((h >> 4) & 0b111) << 2 | ((h >> 2) & 0b11) << 6
}

/// Compressed identity of a supported 16-bit encoding, with its 32-bit
/// equivalent.
fn classify_compressed(h: u32) -> Option<(Mnemonic, Format, u32)> {
    let rd = (h >> 7) & 0x1F;
    let rs2 = (h >> 2) & 0x1F;
    match (h & 0b11, (h >> 13) & 0b111) {
        (0b01, 0b000) => {
            let imm = ci_imm(h);
            match (rd, imm) {
                (0, 0) => Some((Mnemonic::CNop, Format::CI, encode_i(OP_IMM, 0, 0, 0, 0))),
                (0, _) | (_, 0) => None,
                _ => Some((Mnemonic::CAddi, Format::CI, encode_i(OP_IMM, rd, 0, rd, imm))),
            }
        }
        (0b01, 0b010) if rd != 0 => Some((Mnemonic::CLi, Format::CI, encode_i(OP_IMM, rd, 0, 0, ci_imm(h)))),
        (0b01, 0b101) => Some((Mnemonic::CJ, Format::CJ, encode_j(0, cj_offset(h)))),
        (0b10, 0b010) if rd != 0 => Some((
            Mnemonic::CLwsp,
            Format::CI,
            encode_i(OP_LOAD, rd, 0b010, 2, clwsp_offset(h) as i32),
        )),
        (0b10, 0b100) if (h >> 12) & 1 == 0 => match (rd, rs2) {
            (0, _) => None,
            (_, 0) => Some((Mnemonic::CJr, Format::CR, encode_i(OP_JALR, 0, 0, rd, 0))),
            _ => Some((Mnemonic::CMv, Format::CR, encode_r(rd, 0, 0, rs2, 0))),
        },
        _ => None,
    }
}

/// Expands a 16-bit encoding to its 32-bit equivalent. `Ok(None)` is the
/// illegal marker for reserved or unsupported encodings.
pub fn expand_compressed(raw16: u32) -> Result<Option<u32>, IsaError> {
    if raw16 > 0xFFFF || raw16 & 0b11 == 0b11 {
        return Err(IsaError::NotCompressed(raw16));
    }
    Ok(classify_compressed(raw16).map(|(_, _, w)| w))
}

/// Output of the compressed decoder stage for a fetched encoding: the
/// expansion for supported compressed forms, the word itself for 32-bit
/// encodings, and the zero-extended half for illegal compressed ones.
pub fn decoder_output(raw: RawInstr) -> u32 {
    if raw.is_compressed() {
        classify_compressed(raw.bits()).map_or(raw.bits(), |(_, _, w)| w)
    } else {
        raw.bits()
    }
}

pub fn decode(raw: RawInstr) -> DecodedInstr {
    if !raw.is_compressed() {
        return decode32(raw.bits());
    }
    let h = raw.bits();
    match classify_compressed(h) {
        Some((mnemonic, format, word)) => {
            let base = decode32(word);
            DecodedInstr {
                mnemonic,
                format,
                raw,
                expanded_from_compressed: true,
                ..base
            }
        }
        None => DecodedInstr {
            mnemonic: Mnemonic::Illegal,
            format: Format::CR,
            rd: Some(((h >> 7) & 0x1F) as u8),
            rs1: Some(((h >> 7) & 0x1F) as u8),
            rs2: Some(((h >> 2) & 0x1F) as u8),
            imm: Some(ci_imm(h)),
            raw,
            expanded_from_compressed: true,
            legal: false,
        },
    }
}

/// Decodes a latched 32-bit word (the output side of the compressed decoder).
pub fn decode_word(word: u32) -> DecodedInstr {
    decode(RawInstr::from_word(word))
}

// ---------------------------------------------------------------------------
// Encoding

fn encode_r(rd: u32, f3: u32, rs1: u32, rs2: u32, f7: u32) -> u32 {
    f7 << 25 | rs2 << 20 | rs1 << 15 | f3 << 12 | rd << 7 | OP_REG
}

fn encode_i(opcode: u32, rd: u32, f3: u32, rs1: u32, imm: i32) -> u32 {
    ((imm as u32) & 0xFFF) << 20 | rs1 << 15 | f3 << 12 | rd << 7 | opcode
}

fn encode_s(f3: u32, rs1: u32, rs2: u32, imm: i32) -> u32 {
    let v = imm as u32;
    ((v >> 5) & 0x7F) << 25 | rs2 << 20 | rs1 << 15 | f3 << 12 | (v & 0x1F) << 7 | OP_STORE
}

fn encode_b(f3: u32, rs1: u32, rs2: u32, imm: i32) -> u32 {
    let v = imm as u32;
    ((v >> 12) & 1) << 31
        | ((v >> 5) & 0x3F) << 25
        | rs2 << 20
        | rs1 << 15
        | f3 << 12
        | ((v >> 1) & 0xF) << 8
        | ((v >> 11) & 1) << 7
        | OP_BRANCH
}

fn encode_j(rd: u32, imm: i32) -> u32 {
    let v = imm as u32;
    ((v >> 20) & 1) << 31
        | ((v >> 1) & 0x3FF) << 21
        | ((v >> 11) & 1) << 20
        | ((v >> 12) & 0xFF) << 12
        | rd << 7
        | OP_JAL
}

/// Operand bundle for [`encode`]. Unused slots are ignored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Operands {
    pub rd: u8,
    pub rs1: u8,
    pub rs2: u8,
    pub imm: i32,
}

fn check_range(m: Mnemonic, imm: i32, lo: i32, hi: i32, align: i32) -> Result<(), IsaError> {
    if imm < lo || imm > hi || imm % align != 0 {
        return Err(IsaError::ImmediateOutOfRange {
            mnemonic: m.name(),
            value: imm as i64,
        });
    }
    Ok(())
}

fn check_reg(r: u8) -> Result<u32, IsaError> {
    if r < 32 {
        Ok(r as u32)
    } else {
        Err(IsaError::BadRegister(r))
    }
}

/// Encodes one instruction. For `lui`/`auipc` the immediate is the 20-bit
/// upper value; branch and jump immediates are byte offsets.
pub fn encode(m: Mnemonic, ops: Operands) -> Result<RawInstr, IsaError> {
    let rd = check_reg(ops.rd)?;
    let rs1 = check_reg(ops.rs1)?;
    let rs2 = check_reg(ops.rs2)?;
    let imm = ops.imm;
    let i12 = |m| check_range(m, imm, -2048, 2047, 1);
    let word = match m {
        Mnemonic::Lui | Mnemonic::Auipc => {
            check_range(m, imm, 0, 0xFFFFF, 1)?;
            let op = if m == Mnemonic::Lui { OP_LUI } else { OP_AUIPC };
            (imm as u32) << 12 | rd << 7 | op
        }
        Mnemonic::Jal => {
            check_range(m, imm, -(1 << 20), (1 << 20) - 2, 2)?;
            encode_j(rd, imm)
        }
        Mnemonic::Jalr => {
            i12(m)?;
            encode_i(OP_JALR, rd, 0, rs1, imm)
        }
        Mnemonic::Beq | Mnemonic::Bne | Mnemonic::Blt | Mnemonic::Bge => {
            check_range(m, imm, -4096, 4094, 2)?;
            let f3 = match m {
                Mnemonic::Beq => 0b000,
                Mnemonic::Bne => 0b001,
                Mnemonic::Blt => 0b100,
                _ => 0b101,
            };
            encode_b(f3, rs1, rs2, imm)
        }
        Mnemonic::Lw => {
            i12(m)?;
            encode_i(OP_LOAD, rd, 0b010, rs1, imm)
        }
        Mnemonic::Sw => {
            i12(m)?;
            encode_s(0b010, rs1, rs2, imm)
        }
        Mnemonic::Addi => {
            i12(m)?;
            encode_i(OP_IMM, rd, 0, rs1, imm)
        }
        Mnemonic::Slli | Mnemonic::Srli => {
            check_range(m, imm, 0, 31, 1)?;
            let f3 = if m == Mnemonic::Slli { 0b001 } else { 0b101 };
            encode_i(OP_IMM, rd, f3, rs1, imm)
        }
        Mnemonic::Add => encode_r(rd, 0b000, rs1, rs2, 0),
        Mnemonic::Sub => encode_r(rd, 0b000, rs1, rs2, 0b010_0000),
        Mnemonic::Sltu => encode_r(rd, 0b011, rs1, rs2, 0),
        Mnemonic::Xor => encode_r(rd, 0b100, rs1, rs2, 0),
        Mnemonic::Or => encode_r(rd, 0b110, rs1, rs2, 0),
        Mnemonic::And => encode_r(rd, 0b111, rs1, rs2, 0),
        Mnemonic::Ecall => 0x0000_0073,
        Mnemonic::Ebreak => 0x0010_0073,
        Mnemonic::CAddi => {
            if rd == 0 || imm == 0 {
                return Err(IsaError::InvalidOperands(
                    "c.addi needs rd != x0 and a nonzero immediate",
                ));
            }
            check_range(m, imm, -32, 31, 1)?;
            let v = imm as u32;
            ((v >> 5) & 1) << 12 | rd << 7 | (v & 0x1F) << 2 | 0b01
        }
        Mnemonic::CLi => {
            if rd == 0 {
                return Err(IsaError::InvalidOperands("c.li needs rd != x0"));
            }
            check_range(m, imm, -32, 31, 1)?;
            let v = imm as u32;
            0b010 << 13 | ((v >> 5) & 1) << 12 | rd << 7 | (v & 0x1F) << 2 | 0b01
        }
        Mnemonic::CNop => 0x0001,
        Mnemonic::CLwsp => {
            if rd == 0 {
                return Err(IsaError::InvalidOperands("c.lwsp needs rd != x0"));
            }
            if rs1 != 2 {
                return Err(IsaError::InvalidOperands("c.lwsp base must be x2"));
            }
            check_range(m, imm, 0, 252, 4)?;
            let v = imm as u32;
            0b010 << 13 | ((v >> 5) & 1) << 12 | rd << 7 | ((v >> 2) & 0b111) << 4 | ((v >> 6) & 0b11) << 2 | 0b10
        }
        Mnemonic::CMv => {
            if rd == 0 || rs2 == 0 {
                return Err(IsaError::InvalidOperands("c.mv needs rd != x0 and rs2 != x0"));
            }
            0b100 << 13 | rd << 7 | rs2 << 2 | 0b10
        }
        Mnemonic::CJr => {
            if rs1 == 0 {
                return Err(IsaError::InvalidOperands("c.jr needs rs1 != x0"));
            }
            0b100 << 13 | rs1 << 7 | 0b10
        }
        Mnemonic::CJ => {
            check_range(m, imm, -2048, 2046, 2)?;
            let v = imm as u32;
            let b = |i: u32| (v >> i) & 1;
            0b101 << 13
                | b(11) << 12
                | b(4) << 11
                | ((v >> 8) & 0b11) << 9
                | b(10) << 8
                | b(6) << 7
                | b(7) << 6
                | ((v >> 1) & 0b111) << 3
                | b(5) << 2
                | 0b01
        }
        Mnemonic::Illegal => return Err(IsaError::InvalidOperands("cannot encode an illegal instruction")),
    };
    Ok(RawInstr::from_word(word))
}

/// Assembler-syntax rendering. Branch and jump targets are printed as
/// pc-relative byte offsets; illegal encodings as `.word`/`.half`.
pub fn disassemble(d: &DecodedInstr) -> String {
    let x = |r: Option<u8>| format!("x{}", r.unwrap_or(0));
    let imm = d.imm.unwrap_or(0);
    match d.mnemonic {
        Mnemonic::Illegal => {
            if d.raw.is_compressed() {
                format!(".half 0x{:04x}", d.raw.bits())
            } else {
                format!(".word 0x{:08x}", d.raw.bits())
            }
        }
        Mnemonic::Lui | Mnemonic::Auipc => {
            format!("{} {}, 0x{:x}", d.mnemonic, x(d.rd), (imm as u32) >> 12)
        }
        Mnemonic::Jal => format!("jal {}, {}", x(d.rd), imm),
        Mnemonic::Jalr | Mnemonic::Lw => format!("{} {}, {}({})", d.mnemonic, x(d.rd), imm, x(d.rs1)),
        Mnemonic::Sw => format!("sw {}, {}({})", x(d.rs2), imm, x(d.rs1)),
        Mnemonic::Beq | Mnemonic::Bne | Mnemonic::Blt | Mnemonic::Bge => {
            format!("{} {}, {}, {}", d.mnemonic, x(d.rs1), x(d.rs2), imm)
        }
        Mnemonic::Addi | Mnemonic::Slli | Mnemonic::Srli => {
            format!("{} {}, {}, {}", d.mnemonic, x(d.rd), x(d.rs1), imm)
        }
        Mnemonic::Add | Mnemonic::Sub | Mnemonic::Sltu | Mnemonic::Xor | Mnemonic::Or | Mnemonic::And => {
            format!("{} {}, {}, {}", d.mnemonic, x(d.rd), x(d.rs1), x(d.rs2))
        }
        Mnemonic::Ecall | Mnemonic::Ebreak | Mnemonic::CNop => d.mnemonic.to_string(),
        Mnemonic::CAddi | Mnemonic::CLi => format!("{} {}, {}", d.mnemonic, x(d.rd), imm),
        Mnemonic::CLwsp => format!("c.lwsp {}, {}(x2)", x(d.rd), imm),
        Mnemonic::CMv => format!("c.mv {}, {}", x(d.rd), x(d.rs2)),
        Mnemonic::CJr => format!("c.jr {}", x(d.rs1)),
        Mnemonic::CJ => format!("c.j {}", imm),
    }
}

// ---------------------------------------------------------------------------
// Field-level corruption attribution

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Opcode,
    Rd,
    Rs1,
    Rs2,
    Funct,
    Imm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeClass {
    AOpcodeAltered,
    BDestCorrupted,
    CSourceCorrupted,
    DFunctOrImmCorrupted,
    BecameIllegal,
    Unchanged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDiff {
    pub changed_fields: BTreeSet<Field>,
    pub outcome_class: OutcomeClass,
}

/// Compares two decodes of the same fetch slot. The class is the most
/// severe applicable one: illegal > opcode > rd > rs1/rs2 > funct/imm.
pub fn diff_fields(golden: &DecodedInstr, corrupted: &DecodedInstr) -> FieldDiff {
    let mut changed = BTreeSet::new();
    if golden.raw.is_compressed() != corrupted.raw.is_compressed() || golden.opcode_field() != corrupted.opcode_field()
    {
        changed.insert(Field::Opcode);
    }
    if golden.rd != corrupted.rd {
        changed.insert(Field::Rd);
    }
    if golden.rs1 != corrupted.rs1 {
        changed.insert(Field::Rs1);
    }
    if golden.rs2 != corrupted.rs2 {
        changed.insert(Field::Rs2);
    }
    if golden.funct_field() != corrupted.funct_field() {
        changed.insert(Field::Funct);
    }
    if golden.imm != corrupted.imm {
        changed.insert(Field::Imm);
    }
    let outcome_class = if !corrupted.legal {
        OutcomeClass::BecameIllegal
    } else if changed.contains(&Field::Opcode) {
        OutcomeClass::AOpcodeAltered
    } else if changed.contains(&Field::Rd) {
        OutcomeClass::BDestCorrupted
    } else if changed.contains(&Field::Rs1) || changed.contains(&Field::Rs2) {
        OutcomeClass::CSourceCorrupted
    } else if !changed.is_empty() {
        OutcomeClass::DFunctOrImmCorrupted
    } else if golden.legal {
        OutcomeClass::Unchanged
    } else {
        // Golden itself illegal but the corrupted slot decodes legal with
        // identical fields: impossible for identical encodings, so treat as
        // an opcode-level change.
        OutcomeClass::AOpcodeAltered
    };
    FieldDiff {
        changed_fields: changed,
        outcome_class,
    }
}
