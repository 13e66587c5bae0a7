// SPDX-License-Identifier: Apache-2.0
//! Cycle-accurate clock-glitch fault-injection simulator for a small
//! RV32I+C subset.
//!
//! The pipeline model in [`machine`] exposes every inter-stage latch to an
//! edge hook. [`injector`] drives that hook from a static timing profile
//! ([`timing`]), [`classifier`] labels the outcome against a golden run,
//! [`campaign`] sweeps glitch parameters and [`rootcause`] explains a single
//! run cycle by cycle.

pub mod asm;
pub mod campaign;
pub mod classifier;
pub mod error;
pub mod injector;
pub mod isa;
pub mod machine;
pub mod reference;
pub mod rootcause;
pub mod timing;
pub mod workloads;

pub use asm::{assemble, ProgramImage};
pub use campaign::{run_campaign, CampaignConfig, CampaignResult, SweepGrid};
pub use classifier::{classify, Category, FaultOutcome};
pub use error::{AsmError, CampaignError, ClassifyError, ImageError, IsaError, TimingError};
pub use injector::ArmedGlitch;
pub use machine::{run_pipeline, HaltReason, MachineConfig, RunResult};
pub use timing::{GlitchSpec, Stage, TimingProfile, Trigger, ViolationPolicy};
