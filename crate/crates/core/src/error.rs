// SPDX-License-Identifier: Apache-2.0
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IsaError {
    #[error("unknown or unsupported mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("{0:#x} is not a compressed encoding")]
    NotCompressed(u32),
    #[error("immediate {value} out of range for {mnemonic}")]
    ImmediateOutOfRange { mnemonic: &'static str, value: i64 },
    #[error("register index {0} out of range")]
    BadRegister(u8),
    #[error("{0}")]
    InvalidOperands(&'static str),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AsmError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {source}")]
    Encode { line: usize, source: IsaError },
    #[error("line {line}: undefined label `{label}`")]
    UndefinedLabel { line: usize, label: String },
    #[error("line {line}: duplicate label `{label}`")]
    DuplicateLabel { line: usize, label: String },
}

impl AsmError {
    pub fn line(&self) -> usize {
        match self {
            AsmError::Syntax { line, .. }
            | AsmError::Encode { line, .. }
            | AsmError::UndefinedLabel { line, .. }
            | AsmError::DuplicateLabel { line, .. } => *line,
        }
    }
}

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("symbol file line {line}: {message}")]
    Symbols { line: usize, message: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimingError {
    #[error("unknown endpoint `{0}`")]
    UnknownEndpoint(String),
    #[error("profile parse error: {0}")]
    Parse(String),
    #[error("profile failed validation: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("glitch offset and width must be positive (got {offset_ns} ns, {width_ns} ns)")]
    NonPositive { offset_ns: f64, width_ns: f64 },
    #[error("glitch of {t_glitch_ns} ns does not shorten the {period_ns} ns clock period")]
    NotShortening { t_glitch_ns: f64, period_ns: f64 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClassifyError {
    #[error("golden run is not fault-free: {0}")]
    GoldenNotFaultFree(String),
    #[error("runs diverge but the glitched run carries no latch events")]
    ModelInconsistency,
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("grid dimension `{0}` is empty")]
    EmptyDimension(&'static str),
    #[error("reduction statistics need a nonzero total")]
    ZeroTotal,
    #[error("critical count {critical} exceeds total {total}")]
    CriticalExceedsTotal { critical: u64, total: u64 },
    #[error(transparent)]
    Timing(#[from] TimingError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt run record at line {line}: {message}")]
    Record { line: usize, message: String },
}
