// SPDX-License-Identifier: Apache-2.0
//! Mini-assembler, program images and static target search.
//!
//! Grammar, one statement per line:
//!
//! ```text
//! line      := { label ":" } [ statement ] [ comment ]
//! comment   := ("#" | "//" | ";") any*
//! statement := ".org" number
//!            | ".word" value { "," value }
//!            | ".half" value { "," value }
//!            | mnemonic [ operand { "," operand } ]
//! operand   := register | value | number "(" register ")"
//! value     := number | label
//! number    := ["-"] ( decimal | "0x" hex )
//! register  := "x0".."x31" | ABI name (zero, ra, sp, gp, tp, t0-t6, s0-s11, fp, a0-a7)
//! ```
//!
//! Branch and jump targets may be labels or numeric pc-relative offsets.
//! A label as the `addi` immediate is also pc-relative (to the `addi`
//! itself), which makes `auipc t, 0` / `addi t, t, label` / `jalr x0, 4(t)`
//! reach `label`.
//! `lui`/`auipc` take the 20-bit upper immediate. The assembler is
//! single-pass: forward label references are back-patched at the end.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AsmError, ImageError, IsaError};
use crate::isa::{decode, encode, DecodedInstr, Mnemonic, Operands, RawInstr};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub addr: u32,
    pub bytes: Vec<u8>,
}

impl Segment {
    pub fn end(&self) -> u32 {
        self.addr + self.bytes.len() as u32
    }
}

/// A loadable program: byte segments plus a symbol table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramImage {
    pub segments: Vec<Segment>,
    pub symbols: Vec<(String, u32)>,
}

pub const IMAGE_BASE_SYMBOL: &str = "__image_base";

impl ProgramImage {
    pub fn is_empty(&self) -> bool {
        self.segments.iter().all(|s| s.bytes.is_empty())
    }

    pub fn symbol(&self, name: &str) -> Option<u32> {
        self.symbols.iter().find(|(n, _)| n == name).map(|&(_, a)| a)
    }

    /// Address range `[start, end)` covered by the image.
    pub fn span(&self) -> Option<(u32, u32)> {
        let nonempty = self.segments.iter().filter(|s| !s.bytes.is_empty());
        let start = nonempty.clone().map(|s| s.addr).min()?;
        let end = nonempty.map(Segment::end).max()?;
        Some((start, end))
    }

    /// Every (address, byte) pair in ascending address order.
    pub fn bytes(&self) -> Vec<(u32, u8)> {
        let mut out: Vec<(u32, u8)> = self
            .segments
            .iter()
            .flat_map(|s| s.bytes.iter().enumerate().map(move |(i, &b)| (s.addr + i as u32, b)))
            .collect();
        out.sort_by_key(|&(a, _)| a);
        out
    }

    /// Flat little-endian image from the lowest address, gaps zero-filled.
    pub fn to_flat(&self) -> (u32, Vec<u8>) {
        let Some((start, end)) = self.span() else {
            return (0, Vec::new());
        };
        let mut flat = vec![0u8; (end - start) as usize];
        for s in &self.segments {
            let off = (s.addr - start) as usize;
            flat[off..off + s.bytes.len()].copy_from_slice(&s.bytes);
        }
        (start, flat)
    }

    pub fn from_flat(base: u32, bytes: Vec<u8>, symbols: Vec<(String, u32)>) -> Self {
        let segments = if bytes.is_empty() {
            Vec::new()
        } else {
            vec![Segment { addr: base, bytes }]
        };
        Self { segments, symbols }
    }

    /// Sidecar symbol listing: `name 0xADDR` per line, image base first.
    pub fn symbol_text(&self) -> String {
        let (base, _) = self.to_flat();
        let mut out = format!("{IMAGE_BASE_SYMBOL} 0x{base:08x}\n");
        for (name, addr) in &self.symbols {
            out.push_str(&format!("{name} 0x{addr:08x}\n"));
        }
        out
    }

    pub fn write_files(&self, bin: &Path, sym: &Path) -> Result<(), ImageError> {
        let (_, flat) = self.to_flat();
        fs::write(bin, flat).map_err(|source| ImageError::Io {
            path: bin.display().to_string(),
            source,
        })?;
        fs::write(sym, self.symbol_text()).map_err(|source| ImageError::Io {
            path: sym.display().to_string(),
            source,
        })
    }

    pub fn read_files(bin: &Path, sym: &Path) -> Result<Self, ImageError> {
        let bytes = fs::read(bin).map_err(|source| ImageError::Io {
            path: bin.display().to_string(),
            source,
        })?;
        let text = fs::read_to_string(sym).map_err(|source| ImageError::Io {
            path: sym.display().to_string(),
            source,
        })?;
        let mut base = 0;
        let mut symbols = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(name), Some(addr), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(ImageError::Symbols {
                    line: i + 1,
                    message: "expected `name address`".into(),
                });
            };
            let addr = parse_number(addr).map_err(|message| ImageError::Symbols { line: i + 1, message })?;
            if name == IMAGE_BASE_SYMBOL {
                base = addr as u32;
            } else {
                symbols.push((name.to_string(), addr as u32));
            }
        }
        Ok(Self::from_flat(base, bytes, symbols))
    }
}

fn parse_number(tok: &str) -> Result<i64, String> {
    let t = tok.trim();
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t),
    };
    let v = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(&hex.replace('_', ""), 16)
    } else {
        body.replace('_', "").parse::<i64>()
    }
    .map_err(|_| format!("invalid number `{tok}`"))?;
    Ok(if neg { -v } else { v })
}

fn is_number(tok: &str) -> bool {
    let t = tok.trim_start_matches('-');
    t.chars().next().is_some_and(|c| c.is_ascii_digit())
}

pub fn parse_register(tok: &str) -> Option<u8> {
    let t = tok.trim().to_ascii_lowercase();
    if let Some(n) = t.strip_prefix('x') {
        return n.parse::<u8>().ok().filter(|&r| r < 32);
    }
    let abi = match t.as_str() {
        "zero" => 0,
        "ra" => 1,
        "sp" => 2,
        "gp" => 3,
        "tp" => 4,
        "t0" => 5,
        "t1" => 6,
        "t2" => 7,
        "s0" | "fp" => 8,
        "s1" => 9,
        "t3" => 28,
        "t4" => 29,
        "t5" => 30,
        "t6" => 31,
        _ => {
            if let Some(n) = t.strip_prefix('a').and_then(|n| n.parse::<u8>().ok()) {
                return (n < 8).then_some(10 + n);
            }
            if let Some(n) = t.strip_prefix('s').and_then(|n| n.parse::<u8>().ok()) {
                return match n {
                    2..=11 => Some(16 + n),
                    _ => None,
                };
            }
            return None;
        }
    };
    Some(abi)
}

fn is_label(tok: &str) -> bool {
    let mut chars = tok.chars();
    chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_' || c == '.')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

enum Value {
    Num(i64),
    Label(String),
}

struct Fixup {
    segment: usize,
    offset: usize,
    pc: u32,
    line: usize,
    kind: FixupKind,
    label: String,
}

enum FixupKind {
    Instr(Mnemonic, Operands),
    Word,
    Half,
}

struct Assembler {
    segments: Vec<Segment>,
    symbols: Vec<(String, u32)>,
    labels: HashMap<String, u32>,
    fixups: Vec<Fixup>,
}

impl Assembler {
    fn pc(&self) -> u32 {
        self.segments.last().map_or(0, Segment::end)
    }

    fn emit(&mut self, bytes: &[u8]) -> (usize, usize) {
        if self.segments.is_empty() {
            self.segments.push(Segment {
                addr: 0,
                bytes: Vec::new(),
            });
        }
        let idx = self.segments.len() - 1;
        let seg = &mut self.segments[idx];
        let off = seg.bytes.len();
        seg.bytes.extend_from_slice(bytes);
        (idx, off)
    }
}

fn syntax(line: usize, message: impl Into<String>) -> AsmError {
    AsmError::Syntax {
        line,
        message: message.into(),
    }
}

fn strip_comment(line: &str) -> &str {
    let mut end = line.len();
    for pat in ["#", "//", ";"] {
        if let Some(i) = line.find(pat) {
            end = end.min(i);
        }
    }
    &line[..end]
}

fn split_operands(text: &str) -> Vec<String> {
    if text.trim().is_empty() {
        return Vec::new();
    }
    text.split(',').map(|s| s.trim().to_string()).collect()
}

fn parse_value(tok: &str, line: usize) -> Result<Value, AsmError> {
    if is_number(tok) {
        parse_number(tok).map(Value::Num).map_err(|m| syntax(line, m))
    } else if is_label(tok) {
        Ok(Value::Label(tok.to_string()))
    } else {
        Err(syntax(line, format!("expected a number or label, found `{tok}`")))
    }
}

fn reg(tok: &str, line: usize) -> Result<u8, AsmError> {
    parse_register(tok).ok_or_else(|| syntax(line, format!("expected a register, found `{tok}`")))
}

fn imm(tok: &str, line: usize) -> Result<i32, AsmError> {
    let v = parse_number(tok).map_err(|m| syntax(line, m))?;
    i32::try_from(v).map_err(|_| AsmError::Encode {
        line,
        source: IsaError::ImmediateOutOfRange {
            mnemonic: "immediate",
            value: v,
        },
    })
}

/// `imm(reg)` memory operand.
fn mem_operand(tok: &str, line: usize) -> Result<(i32, u8), AsmError> {
    let open = tok
        .find('(')
        .ok_or_else(|| syntax(line, format!("expected `imm(reg)`, found `{tok}`")))?;
    let close = tok
        .rfind(')')
        .filter(|&c| c > open && c == tok.len() - 1)
        .ok_or_else(|| syntax(line, format!("unbalanced parentheses in `{tok}`")))?;
    let offset_text = tok[..open].trim();
    let offset = if offset_text.is_empty() {
        0
    } else {
        imm(offset_text, line)?
    };
    Ok((offset, reg(&tok[open + 1..close], line)?))
}

fn expect_count(ops: &[String], n: usize, m: Mnemonic, line: usize) -> Result<(), AsmError> {
    if ops.len() != n {
        return Err(syntax(line, format!("{m} takes {n} operand(s), found {}", ops.len())));
    }
    Ok(())
}

/// Parses one instruction. A label operand is returned for back-patching.
fn parse_instruction(m: Mnemonic, ops: &[String], line: usize) -> Result<(Operands, Option<String>), AsmError> {
    let mut o = Operands::default();
    let mut label = None;
    let mut target = |tok: &str, o: &mut Operands| -> Result<(), AsmError> {
        match parse_value(tok, line)? {
            Value::Num(v) => {
                o.imm = i32::try_from(v).map_err(|_| syntax(line, "offset out of range"))?;
            }
            Value::Label(l) => label = Some(l),
        }
        Ok(())
    };
    match m {
        Mnemonic::Lui | Mnemonic::Auipc => {
            expect_count(ops, 2, m, line)?;
            o.rd = reg(&ops[0], line)?;
            o.imm = imm(&ops[1], line)?;
        }
        Mnemonic::Jal => match ops.len() {
            1 => {
                o.rd = 1;
                target(&ops[0], &mut o)?;
            }
            _ => {
                expect_count(ops, 2, m, line)?;
                o.rd = reg(&ops[0], line)?;
                target(&ops[1], &mut o)?;
            }
        },
        Mnemonic::Jalr => {
            if ops.len() == 3 {
                o.rd = reg(&ops[0], line)?;
                o.rs1 = reg(&ops[1], line)?;
                o.imm = imm(&ops[2], line)?;
            } else {
                expect_count(ops, 2, m, line)?;
                o.rd = reg(&ops[0], line)?;
                (o.imm, o.rs1) = mem_operand(&ops[1], line)?;
            }
        }
        Mnemonic::Beq | Mnemonic::Bne | Mnemonic::Blt | Mnemonic::Bge => {
            expect_count(ops, 3, m, line)?;
            o.rs1 = reg(&ops[0], line)?;
            o.rs2 = reg(&ops[1], line)?;
            target(&ops[2], &mut o)?;
        }
        Mnemonic::Lw => {
            expect_count(ops, 2, m, line)?;
            o.rd = reg(&ops[0], line)?;
            (o.imm, o.rs1) = mem_operand(&ops[1], line)?;
        }
        Mnemonic::Sw => {
            expect_count(ops, 2, m, line)?;
            o.rs2 = reg(&ops[0], line)?;
            (o.imm, o.rs1) = mem_operand(&ops[1], line)?;
        }
        Mnemonic::Addi => {
            expect_count(ops, 3, m, line)?;
            o.rd = reg(&ops[0], line)?;
            o.rs1 = reg(&ops[1], line)?;
            target(&ops[2], &mut o)?;
        }
        Mnemonic::Slli | Mnemonic::Srli => {
            expect_count(ops, 3, m, line)?;
            o.rd = reg(&ops[0], line)?;
            o.rs1 = reg(&ops[1], line)?;
            o.imm = imm(&ops[2], line)?;
        }
        Mnemonic::Add | Mnemonic::Sub | Mnemonic::Sltu | Mnemonic::Xor | Mnemonic::Or | Mnemonic::And => {
            expect_count(ops, 3, m, line)?;
            o.rd = reg(&ops[0], line)?;
            o.rs1 = reg(&ops[1], line)?;
            o.rs2 = reg(&ops[2], line)?;
        }
        Mnemonic::Ecall | Mnemonic::Ebreak | Mnemonic::CNop => expect_count(ops, 0, m, line)?,
        Mnemonic::CAddi | Mnemonic::CLi => {
            expect_count(ops, 2, m, line)?;
            o.rd = reg(&ops[0], line)?;
            o.imm = imm(&ops[1], line)?;
        }
        Mnemonic::CLwsp => {
            expect_count(ops, 2, m, line)?;
            o.rd = reg(&ops[0], line)?;
            (o.imm, o.rs1) = mem_operand(&ops[1], line)?;
        }
        Mnemonic::CMv => {
            expect_count(ops, 2, m, line)?;
            o.rd = reg(&ops[0], line)?;
            o.rs2 = reg(&ops[1], line)?;
        }
        Mnemonic::CJr => {
            expect_count(ops, 1, m, line)?;
            o.rs1 = reg(&ops[0], line)?;
        }
        Mnemonic::CJ => {
            expect_count(ops, 1, m, line)?;
            target(&ops[0], &mut o)?;
        }
        Mnemonic::Illegal => return Err(syntax(line, "`illegal` is not an instruction")),
    }
    Ok((o, label))
}

/// Size in bytes an instruction will occupy, before its operands are known.
fn instr_size(m: Mnemonic) -> usize {
    if m.is_compressed() {
        2
    } else {
        4
    }
}

pub fn assemble(source: &str) -> Result<ProgramImage, AsmError> {
    let mut asm = Assembler {
        segments: Vec::new(),
        symbols: Vec::new(),
        labels: HashMap::new(),
        fixups: Vec::new(),
    };
    for (idx, raw_line) in source.lines().enumerate() {
        let line = idx + 1;
        let mut rest = strip_comment(raw_line).trim();
        while let Some(colon) = rest.find(':') {
            let name = rest[..colon].trim();
            if !is_label(name) || name.contains(' ') {
                break;
            }
            if asm.labels.contains_key(name) {
                return Err(AsmError::DuplicateLabel {
                    line,
                    label: name.to_string(),
                });
            }
            let pc = asm.pc();
            asm.labels.insert(name.to_string(), pc);
            asm.symbols.push((name.to_string(), pc));
            rest = rest[colon + 1..].trim();
        }
        if rest.is_empty() {
            continue;
        }
        let (head, tail) = match rest.find(char::is_whitespace) {
            Some(i) => (&rest[..i], rest[i..].trim()),
            None => (rest, ""),
        };
        let ops = split_operands(tail);
        match head.to_ascii_lowercase().as_str() {
            ".org" => {
                if ops.len() != 1 {
                    return Err(syntax(line, ".org takes one address"));
                }
                let addr = parse_number(&ops[0]).map_err(|m| syntax(line, m))?;
                let addr = u32::try_from(addr).map_err(|_| syntax(line, ".org address out of range"))?;
                if addr % 2 != 0 {
                    return Err(syntax(line, ".org address must be 2-byte aligned"));
                }
                if let Some(clash) = asm.segments.iter().find(|s| addr >= s.addr && addr < s.end()) {
                    return Err(syntax(
                        line,
                        format!(".org {addr:#x} overlaps segment at {:#x}", clash.addr),
                    ));
                }
                // Labels defined just before the directive belong to the new origin.
                let old_pc = asm.pc();
                for (name, a) in asm.symbols.iter_mut().rev() {
                    if *a != old_pc || asm.labels.get(name) != Some(&old_pc) {
                        break;
                    }
                    *a = addr;
                    asm.labels.insert(name.clone(), addr);
                }
                asm.segments.push(Segment {
                    addr,
                    bytes: Vec::new(),
                });
            }
            dir @ (".word" | ".half") => {
                if ops.is_empty() {
                    return Err(syntax(line, format!("{dir} needs at least one value")));
                }
                for tok in &ops {
                    let pc = asm.pc();
                    let (value, label) = match parse_value(tok, line)? {
                        Value::Num(v) => (v, None),
                        Value::Label(l) => (0, Some(l)),
                    };
                    let (seg, off) = if dir == ".word" {
                        if !(-(1i64 << 31)..(1i64 << 32)).contains(&value) {
                            return Err(syntax(line, format!("value `{tok}` does not fit in 32 bits")));
                        }
                        asm.emit(&(value as u32).to_le_bytes())
                    } else {
                        if !(-(1i64 << 15)..(1i64 << 16)).contains(&value) {
                            return Err(syntax(line, format!("value `{tok}` does not fit in 16 bits")));
                        }
                        asm.emit(&(value as u16).to_le_bytes())
                    };
                    if let Some(label) = label {
                        asm.fixups.push(Fixup {
                            segment: seg,
                            offset: off,
                            pc,
                            line,
                            kind: if dir == ".word" {
                                FixupKind::Word
                            } else {
                                FixupKind::Half
                            },
                            label,
                        });
                    }
                }
            }
            d if d.starts_with('.') => return Err(syntax(line, format!("unknown directive `{d}`"))),
            name => {
                let m: Mnemonic = name.parse().map_err(|e| AsmError::Encode { line, source: e })?;
                let (operands, label) = parse_instruction(m, &ops, line)?;
                let pc = asm.pc();
                match label {
                    None => {
                        let raw = encode(m, operands).map_err(|source| AsmError::Encode { line, source })?;
                        asm.emit(&raw.to_le_bytes());
                    }
                    Some(label) => {
                        let (seg, off) = asm.emit(&vec![0; instr_size(m)]);
                        asm.fixups.push(Fixup {
                            segment: seg,
                            offset: off,
                            pc,
                            line,
                            kind: FixupKind::Instr(m, operands),
                            label,
                        });
                    }
                }
            }
        }
    }
    for fix in std::mem::take(&mut asm.fixups) {
        let target = *asm.labels.get(&fix.label).ok_or_else(|| AsmError::UndefinedLabel {
            line: fix.line,
            label: fix.label.clone(),
        })?;
        let bytes = match fix.kind {
            FixupKind::Instr(m, mut ops) => {
                ops.imm = target.wrapping_sub(fix.pc) as i32;
                encode(m, ops)
                    .map_err(|source| AsmError::Encode { line: fix.line, source })?
                    .to_le_bytes()
            }
            FixupKind::Word => target.to_le_bytes().to_vec(),
            FixupKind::Half => {
                let half = u16::try_from(target)
                    .map_err(|_| syntax(fix.line, format!("label `{}` does not fit in 16 bits", fix.label)))?;
                half.to_le_bytes().to_vec()
            }
        };
        let seg = &mut asm.segments[fix.segment];
        seg.bytes[fix.offset..fix.offset + bytes.len()].copy_from_slice(&bytes);
    }
    asm.segments.retain(|s| !s.bytes.is_empty());
    asm.segments.sort_by_key(|s| s.addr);
    for pair in asm.segments.windows(2) {
        if pair[0].end() > pair[1].addr {
            return Err(syntax(
                0,
                format!("segments at {:#x} and {:#x} overlap", pair[0].addr, pair[1].addr),
            ));
        }
    }
    Ok(ProgramImage {
        segments: asm.segments,
        symbols: asm.symbols,
    })
}

/// Result of a static scan: matching instructions plus the addresses that
/// did not decode to a supported instruction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TargetScan {
    pub targets: Vec<(u32, DecodedInstr)>,
    pub undecodable: Vec<u32>,
}

/// Linear sweep over every segment, honouring 16/32-bit lengths.
pub fn decode_image(image: &ProgramImage) -> TargetScan {
    let mut scan = TargetScan::default();
    for seg in &image.segments {
        let mut off = 0usize;
        while off + 2 <= seg.bytes.len() {
            let pc = seg.addr + off as u32;
            let lo = u16::from_le_bytes([seg.bytes[off], seg.bytes[off + 1]]) as u32;
            let raw = if lo & 0b11 == 0b11 {
                if off + 4 > seg.bytes.len() {
                    scan.undecodable.push(pc);
                    break;
                }
                let hi = u16::from_le_bytes([seg.bytes[off + 2], seg.bytes[off + 3]]) as u32;
                RawInstr::from_word(hi << 16 | lo)
            } else {
                RawInstr::from_word(lo)
            };
            let d = decode(raw);
            if d.legal {
                scan.targets.push((pc, d));
            } else {
                scan.undecodable.push(pc);
            }
            off += raw.size() as usize;
        }
        if seg.bytes.len() % 2 == 1 {
            scan.undecodable.push(seg.end() - 1);
        }
    }
    scan
}

/// Every static occurrence of the requested mnemonics, ascending by PC.
pub fn find_targets(image: &ProgramImage, mnemonics: &[Mnemonic]) -> TargetScan {
    let mut scan = decode_image(image);
    scan.targets.retain(|(_, d)| mnemonics.contains(&d.mnemonic));
    scan.targets.sort_by_key(|&(pc, _)| pc);
    scan
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(image: &ProgramImage) -> Vec<u8> {
        image.to_flat().1
    }

    #[test]
    fn addi_bytes() {
        let img = assemble("addi x10,x10,1").unwrap();
        assert_eq!(words(&img), vec![0x13, 0x05, 0x15, 0x00]);
    }

    #[test]
    fn lw_word() {
        let img = assemble("lw x11, 0(x10)").unwrap();
        assert_eq!(words(&img), 0x0005_2583u32.to_le_bytes().to_vec());
    }

    #[test]
    fn empty_source_is_empty_image() {
        let img = assemble("").unwrap();
        assert!(img.is_empty());
        assert_eq!(img.span(), None);
        let img = assemble("# only a comment\n\n").unwrap();
        assert!(img.is_empty());
    }

    #[test]
    fn forward_and_backward_labels() {
        let src = "start: c.nop\n  beq x0, x0, done\n  c.j start\ndone: ebreak\n";
        let img = assemble(src).unwrap();
        let scan = decode_image(&img);
        assert!(scan.undecodable.is_empty());
        let (pc, beq) = scan.targets[1];
        assert_eq!(pc, 2);
        assert_eq!(beq.imm, Some(6));
        assert_eq!(scan.targets[2].1.imm, Some(-6));
        assert_eq!(img.symbol("done"), Some(8));
    }

    #[test]
    fn org_moves_location_and_labels() {
        let img = assemble("c.nop\n.org 0x100\nhere:\n  ebreak\n.org 0x200\n.word 0x42026ada, here").unwrap();
        assert_eq!(img.symbol("here"), Some(0x100));
        assert_eq!(img.segments.len(), 3);
        assert_eq!(img.segments[2].bytes, [0xda, 0x6a, 0x02, 0x42, 0x00, 0x01, 0x00, 0x00]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = assemble("c.nop\n  bogus x1, x2\n").unwrap_err();
        assert_eq!(err.line(), 2);
        let err = assemble("addi x1, x1, 5000").unwrap_err();
        assert!(matches!(
            err,
            AsmError::Encode {
                line: 1,
                source: IsaError::ImmediateOutOfRange { .. }
            }
        ));
        let err = assemble("\n\nbeq x0, x0, nowhere").unwrap_err();
        assert_eq!(
            err,
            AsmError::UndefinedLabel {
                line: 3,
                label: "nowhere".into()
            }
        );
        let err = assemble("lw x1, 4(x2").unwrap_err();
        assert_eq!(err.line(), 1);
    }

    #[test]
    fn abi_register_names() {
        assert_eq!(parse_register("a0"), Some(10));
        assert_eq!(parse_register("sp"), Some(2));
        assert_eq!(parse_register("s11"), Some(27));
        assert_eq!(parse_register("t6"), Some(31));
        assert_eq!(parse_register("x32"), None);
        assert_eq!(parse_register("a8"), None);
    }

    #[test]
    fn find_targets_empty_list() {
        let img = assemble("jal x1, 8\nc.nop\nebreak").unwrap();
        assert!(find_targets(&img, &[]).targets.is_empty());
        let jal = find_targets(&img, &["JAL".parse().unwrap()]);
        assert_eq!(jal.targets.len(), 1);
        assert_eq!(jal.targets[0].0, 0);
    }

    #[test]
    fn undecodable_regions_are_reported() {
        let img = assemble("c.nop\n.half 0x0000\nebreak").unwrap();
        let scan = decode_image(&img);
        assert_eq!(scan.undecodable, vec![2]);
        assert_eq!(scan.targets.len(), 2);
    }

    #[test]
    fn flat_files_round_trip() {
        let img = assemble("c.nop\n.org 0x10\nend: ebreak").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (bin, sym) = (dir.path().join("p.bin"), dir.path().join("p.sym"));
        img.write_files(&bin, &sym).unwrap();
        let back = ProgramImage::read_files(&bin, &sym).unwrap();
        assert_eq!(back.to_flat(), img.to_flat());
        assert_eq!(back.symbol("end"), Some(0x10));
    }
}
