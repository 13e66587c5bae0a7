// SPDX-License-Identifier: Apache-2.0
//! Parametric timing model.
//!
//! A glitch shortens one clock period to `t_glitch = t_offset + t_width`.
//! Each latching endpoint carries per-bit arrival times; a bit whose data
//! arrives strictly after `t_glitch` misses the glitched edge. Times are
//! resolved to 1 ps internally so band boundaries are exact.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::TimingError;

/// Picoseconds.
pub type Picos = u64;

pub fn ns_to_ps(ns: f64) -> Picos {
    (ns * 1000.0).round().max(0.0) as Picos
}

pub fn ps_to_ns(ps: Picos) -> f64 {
    ps as f64 / 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    IF,
    ID,
    EX,
    WB,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::IF, Stage::ID, Stage::EX, Stage::WB];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::IF => "IF",
            Stage::ID => "ID",
            Stage::EX => "EX",
            Stage::WB => "WB",
        })
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "IF" => Ok(Stage::IF),
            "ID" => Ok(Stage::ID),
            "EX" => Ok(Stage::EX),
            "WB" => Ok(Stage::WB),
            other => Err(format!("unknown pipeline stage `{other}`")),
        }
    }
}

/// Which dynamic instance of which instruction, in which stage, is glitched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trigger {
    pub target_pc: u32,
    pub target_stage: Stage,
    pub occurrence: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlitchSpec {
    pub t_offset_ns: f64,
    pub t_width_ns: f64,
    pub trigger: Trigger,
}

impl GlitchSpec {
    pub fn new(t_offset_ns: f64, t_width_ns: f64, trigger: Trigger) -> Result<Self, TimingError> {
        if !(t_offset_ns > 0.0 && t_width_ns > 0.0) || trigger.occurrence == 0 {
            return Err(TimingError::NonPositive {
                offset_ns: t_offset_ns,
                width_ns: t_width_ns,
            });
        }
        Ok(Self {
            t_offset_ns,
            t_width_ns,
            trigger,
        })
    }

    /// Checks that the glitch shortens rather than stretches the cycle.
    pub fn check_against(&self, profile: &TimingProfile) -> Result<(), TimingError> {
        let t = glitch_period(self);
        if t >= profile.clock_period_ns() {
            return Err(TimingError::NotShortening {
                t_glitch_ns: t,
                period_ns: profile.clock_period_ns(),
            });
        }
        Ok(())
    }
}

/// Shortened effective period at the glitched edge, in ns.
pub fn glitch_period(spec: &GlitchSpec) -> f64 {
    spec.t_offset_ns + spec.t_width_ns
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldTiming {
    pub name: String,
    /// Arrival per bit, index 0 = LSB. Length is the field width.
    pub arrival_ps: Vec<Picos>,
}

impl FieldTiming {
    pub fn width(&self) -> u32 {
        self.arrival_ps.len() as u32
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub name: String,
    pub stage: Stage,
    pub fields: Vec<FieldTiming>,
}

impl Endpoint {
    pub fn field(&self, name: &str) -> Option<&FieldTiming> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn max_arrival_ps(&self) -> Picos {
        self.fields
            .iter()
            .flat_map(|f| f.arrival_ps.iter().copied())
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSegments {
    /// Endpoint at the end of the fetch-data to decoder-input segment.
    pub d1: String,
    /// Endpoint at the end of the decoder-input to IF/ID segment.
    pub d2: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingProfile {
    pub clock_period_ps: Picos,
    pub segments: PathSegments,
    pub endpoints: Vec<Endpoint>,
}

/// Violated bits of one field of an endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldMask {
    pub field: String,
    pub mask: u32,
}

/// Mask of every bit whose arrival is strictly later than the edge.
pub fn field_violation(field: &FieldTiming, t_glitch_ps: Picos) -> u32 {
    field
        .arrival_ps
        .iter()
        .enumerate()
        .filter(|&(_, &a)| a > t_glitch_ps)
        .fold(0u32, |m, (i, _)| m | 1 << i)
}

/// Per-field violation masks of `endpoint` at a glitched edge of
/// `t_glitch_ns`.
pub fn violated_bits(profile: &TimingProfile, endpoint: &str, t_glitch_ns: f64) -> Result<Vec<FieldMask>, TimingError> {
    let ep = profile
        .endpoint(endpoint)
        .ok_or_else(|| TimingError::UnknownEndpoint(endpoint.to_string()))?;
    let t = ns_to_ps(t_glitch_ns);
    Ok(ep
        .fields
        .iter()
        .map(|f| FieldMask {
            field: f.name.clone(),
            mask: field_violation(f, t),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ViolationPolicy {
    /// Violated bits latch 0.
    #[default]
    Zero,
    /// Violated bits keep the register's previous contents.
    Stale,
    /// Violated bits take seeded pseudo-random values.
    SeededRandom,
}

impl FromStr for ViolationPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "zero" => Ok(Self::Zero),
            "stale" => Ok(Self::Stale),
            "seeded_random" | "random" => Ok(Self::SeededRandom),
            other => Err(format!("unknown violation policy `{other}`")),
        }
    }
}

impl fmt::Display for ViolationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Zero => "zero",
            Self::Stale => "stale",
            Self::SeededRandom => "seeded_random",
        })
    }
}

pub fn apply_violation(intended: u32, previous: u32, mask: u32, policy: ViolationPolicy, seed: u64) -> u32 {
    let fill = match policy {
        ViolationPolicy::Zero => 0,
        ViolationPolicy::Stale => previous,
        ViolationPolicy::SeededRandom => ChaCha8Rng::seed_from_u64(seed).next_u32(),
    };
    (intended & !mask) | (fill & mask)
}

/// One latching endpoint field that missed the glitched edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatchEvent {
    pub cycle: u64,
    pub endpoint: String,
    pub field: String,
    pub violated_mask: u32,
    pub value_intended: u32,
    pub value_latched: u32,
}

impl TimingProfile {
    pub fn clock_period_ns(&self) -> f64 {
        ps_to_ns(self.clock_period_ps)
    }

    pub fn endpoint(&self, name: &str) -> Option<&Endpoint> {
        self.endpoints.iter().find(|e| e.name == name)
    }

    pub fn endpoints_for(&self, stage: Stage) -> impl Iterator<Item = &Endpoint> {
        self.endpoints.iter().filter(move |e| e.stage == stage)
    }

    pub fn max_arrival_ps(&self) -> Picos {
        self.endpoints.iter().map(Endpoint::max_arrival_ps).max().unwrap_or(0)
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("profile serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Checks every invariant, returning all violations found.
    pub fn validate(&self) -> Result<(), TimingError> {
        let mut problems = Vec::new();
        if self.clock_period_ps == 0 {
            problems.push("clock period must be positive".to_string());
        }
        let mut names = BTreeSet::new();
        for ep in &self.endpoints {
            if !names.insert(ep.name.as_str()) {
                problems.push(format!("duplicate endpoint `{}`", ep.name));
            }
            let mut fields = BTreeSet::new();
            for f in &ep.fields {
                if !fields.insert(f.name.as_str()) {
                    problems.push(format!("endpoint `{}`: duplicate field `{}`", ep.name, f.name));
                }
                if f.arrival_ps.is_empty() || f.arrival_ps.len() > 32 {
                    problems.push(format!(
                        "endpoint `{}` field `{}`: width {} outside 1..=32",
                        ep.name,
                        f.name,
                        f.arrival_ps.len()
                    ));
                }
                for (bit, &a) in f.arrival_ps.iter().enumerate() {
                    if a >= self.clock_period_ps {
                        problems.push(format!(
                            "endpoint `{}` field `{}` bit {bit}: arrival {} ns is not below the {} ns period",
                            ep.name,
                            f.name,
                            ps_to_ns(a),
                            self.clock_period_ns()
                        ));
                    }
                }
            }
        }
        match (self.endpoint(&self.segments.d1), self.endpoint(&self.segments.d2)) {
            (Some(d1), Some(d2)) => {
                for f1 in &d1.fields {
                    let Some(f2) = d2.field(&f1.name) else {
                        problems.push(format!("segment d2 `{}` lacks field `{}`", d2.name, f1.name));
                        continue;
                    };
                    if f1.width() != f2.width() {
                        problems.push(format!("field `{}` width differs between d1 and d2", f1.name));
                        continue;
                    }
                    for (bit, (a1, a2)) in f1.arrival_ps.iter().zip(&f2.arrival_ps).enumerate() {
                        if a1 > a2 {
                            problems.push(format!(
                                "ordering: d1 `{}` field `{}` bit {bit} arrives at {} ns, after d2 `{}` ({} ns)",
                                d1.name,
                                f1.name,
                                ps_to_ns(*a1),
                                d2.name,
                                ps_to_ns(*a2)
                            ));
                        }
                    }
                }
            }
            (a, b) => {
                if a.is_none() {
                    problems.push(format!("segment d1 names unknown endpoint `{}`", self.segments.d1));
                }
                if b.is_none() {
                    problems.push(format!("segment d2 names unknown endpoint `{}`", self.segments.d2));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(TimingError::Invalid(problems))
        }
    }

    /// Parses and validates the structured-text profile format.
    pub fn parse(text: &str) -> Result<Self, TimingError> {
        let file: ProfileFile = toml::from_str(text).map_err(|e| TimingError::Parse(e.to_string()))?;
        let profile = file.into_profile()?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: &Path) -> Result<Self, TimingError> {
        let text = std::fs::read_to_string(path).map_err(|e| TimingError::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// The shipped profile calibrated to the documented case bands.
    pub fn default_profile() -> Self {
        Self::parse(DEFAULT_PROFILE_TEXT).expect("shipped profile is valid")
    }
}

pub const DEFAULT_PROFILE_TEXT: &str = include_str!("../fixtures/default.profile");

// ---------------------------------------------------------------------------
// File schema

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    clock_period_ns: f64,
    segments: PathSegments,
    #[serde(rename = "endpoint")]
    endpoints: Vec<EndpointFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EndpointFile {
    name: String,
    stage: String,
    #[serde(rename = "field")]
    fields: Vec<FieldFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldFile {
    name: String,
    width: u32,
    /// Arrival for every bit not covered by a group.
    arrival_ns: Option<f64>,
    #[serde(default)]
    groups: Vec<GroupFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupFile {
    msb: u32,
    lsb: u32,
    arrival_ns: f64,
}

impl ProfileFile {
    fn into_profile(self) -> Result<TimingProfile, TimingError> {
        let mut problems = Vec::new();
        if !(self.clock_period_ns.is_finite() && self.clock_period_ns > 0.0) {
            problems.push(format!("clock_period_ns {} must be positive", self.clock_period_ns));
        }
        let mut endpoints = Vec::new();
        for ep in self.endpoints {
            let stage = match ep.stage.parse::<Stage>() {
                Ok(s) => s,
                Err(e) => {
                    problems.push(format!("endpoint `{}`: {e}", ep.name));
                    continue;
                }
            };
            let mut fields = Vec::new();
            for f in ep.fields {
                let mut bits: Vec<Option<f64>> = vec![f.arrival_ns; f.width.min(32) as usize];
                for g in &f.groups {
                    if g.lsb > g.msb || g.msb >= f.width {
                        problems.push(format!(
                            "endpoint `{}` field `{}`: bad bit group [{}:{}]",
                            ep.name, f.name, g.msb, g.lsb
                        ));
                        continue;
                    }
                    for slot in &mut bits[g.lsb as usize..=g.msb as usize] {
                        *slot = Some(g.arrival_ns);
                    }
                }
                let mut arrival_ps = Vec::with_capacity(bits.len());
                for (bit, a) in bits.into_iter().enumerate() {
                    match a {
                        None => problems.push(format!(
                            "endpoint `{}` field `{}` bit {bit}: no arrival time",
                            ep.name, f.name
                        )),
                        Some(a) if !a.is_finite() || a < 0.0 => problems.push(format!(
                            "endpoint `{}` field `{}` bit {bit}: arrival {a} ns is negative",
                            ep.name, f.name
                        )),
                        Some(a) => arrival_ps.push(ns_to_ps(a)),
                    }
                }
                if f.width == 0 || f.width > 32 {
                    problems.push(format!(
                        "endpoint `{}` field `{}`: width {} outside 1..=32",
                        ep.name, f.name, f.width
                    ));
                }
                fields.push(FieldTiming {
                    name: f.name,
                    arrival_ps,
                });
            }
            endpoints.push(Endpoint {
                name: ep.name,
                stage,
                fields,
            });
        }
        if !problems.is_empty() {
            return Err(TimingError::Invalid(problems));
        }
        Ok(TimingProfile {
            clock_period_ps: ns_to_ps(self.clock_period_ns),
            segments: self.segments,
            endpoints,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(o: f64, w: f64) -> GlitchSpec {
        GlitchSpec::new(
            o,
            w,
            Trigger {
                target_pc: 0,
                target_stage: Stage::IF,
                occurrence: 1,
            },
        )
        .unwrap()
    }

    fn mask(profile: &TimingProfile, ep: &str, t: f64) -> u32 {
        violated_bits(profile, ep, t).unwrap()[0].mask
    }

    #[test]
    fn glitch_period_sums() {
        assert!((glitch_period(&spec(0.833, 2.967)) - 3.8).abs() < 1e-9);
        assert!((glitch_period(&spec(0.833, 3.567)) - 4.4).abs() < 1e-9);
        assert!((glitch_period(&spec(1e-12, 2.5)) - 2.5).abs() < 1e-9);
    }

    #[test]
    fn nonpositive_glitch_rejected() {
        let trig = Trigger {
            target_pc: 0,
            target_stage: Stage::IF,
            occurrence: 1,
        };
        assert!(GlitchSpec::new(0.0, 1.0, trig).is_err());
        assert!(GlitchSpec::new(1.0, -1.0, trig).is_err());
    }

    #[test]
    fn stretching_glitch_rejected() {
        let p = TimingProfile::default_profile();
        assert!(spec(10.0, 10.0).check_against(&p).is_err());
        assert!(spec(10.0, 9.9).check_against(&p).is_ok());
    }

    #[test]
    fn default_profile_is_valid() {
        let p = TimingProfile::default_profile();
        p.validate().unwrap();
        assert_eq!(p.clock_period_ps, 20_000);
    }

    #[test]
    fn no_violation_past_max_arrival() {
        let p = TimingProfile::default_profile();
        let t = ps_to_ns(p.max_arrival_ps());
        for ep in &p.endpoints {
            for fm in violated_bits(&p, &ep.name, t).unwrap() {
                assert_eq!(fm.mask, 0, "{}.{}", ep.name, fm.field);
            }
        }
    }

    #[test]
    fn decoder_input_fully_stale_at_3_5() {
        let p = TimingProfile::default_profile();
        // brute force over bits: every arrival exceeds the edge
        let f = &p.endpoint("decoder_in").unwrap().fields[0];
        let expected = (0..f.width())
            .filter(|&i| f.arrival_ps[i as usize] > 3500)
            .fold(0u32, |m, i| m | 1 << i);
        assert_eq!(expected, u32::MAX);
        assert_eq!(mask(&p, "decoder_in", 3.5), u32::MAX);
    }

    #[test]
    fn if_id_msb_group_only_at_5_15() {
        let p = TimingProfile::default_profile();
        assert_eq!(mask(&p, "if_id", 5.15), 0xF000_0000);
        assert_eq!(mask(&p, "decoder_in", 5.15), 0);
    }

    #[test]
    fn unknown_endpoint_is_an_error() {
        let p = TimingProfile::default_profile();
        assert_eq!(
            violated_bits(&p, "nope", 1.0).unwrap_err(),
            TimingError::UnknownEndpoint("nope".into())
        );
    }

    #[test]
    fn apply_violation_policies() {
        assert_eq!(apply_violation(0x1234, 0, 0, ViolationPolicy::Zero, 0), 0x1234);
        assert_eq!(apply_violation(0x1234, 0xFFFF, u32::MAX, ViolationPolicy::Zero, 0), 0);
        assert_eq!(
            apply_violation(0, 0xFFFF_FFFF, 0xF000_0000, ViolationPolicy::Stale, 0),
            0xF000_0000
        );
        let a = apply_violation(0, 0, 0xFF, ViolationPolicy::SeededRandom, 7);
        assert_eq!(a, apply_violation(0, 0, 0xFF, ViolationPolicy::SeededRandom, 7));
        assert_eq!(a & !0xFF, 0);
    }

    const SMALL: &str = r#"
clock_period_ns = 20.0
segments = { d1 = "a", d2 = "b" }
[[endpoint]]
name = "a"
stage = "IF"
[[endpoint.field]]
name = "instr"
width = 4
arrival_ns = 1.0
[[endpoint]]
name = "b"
stage = "IF"
[[endpoint.field]]
name = "instr"
width = 4
arrival_ns = 2.0
groups = [ { msb = 3, lsb = 3, arrival_ns = ARR } ]
"#;

    #[test]
    fn arrival_beyond_period_names_the_bit() {
        let err = TimingProfile::parse(&SMALL.replace("ARR", "25.0")).unwrap_err();
        let TimingError::Invalid(list) = err else { panic!() };
        assert!(
            list.iter().any(|m| m.contains("bit 3") && m.contains("period")),
            "{list:?}"
        );
    }

    #[test]
    fn d1_after_d2_is_an_ordering_violation() {
        let err = TimingProfile::parse(&SMALL.replace("ARR", "0.5")).unwrap_err();
        let TimingError::Invalid(list) = err else { panic!() };
        assert!(
            list.iter().any(|m| m.starts_with("ordering") && m.contains("bit 3")),
            "{list:?}"
        );
        assert!(TimingProfile::parse(&SMALL.replace("ARR", "3.0")).is_ok());
    }

    #[test]
    fn schema_errors_are_reported() {
        assert!(matches!(
            TimingProfile::parse("clock_period_ns = 'x'"),
            Err(TimingError::Parse(_))
        ));
        let missing = SMALL.replace("arrival_ns = 1.0\n", "").replace("ARR", "3.0");
        let TimingError::Invalid(list) = TimingProfile::parse(&missing).unwrap_err() else {
            panic!()
        };
        assert!(list.iter().any(|m| m.contains("no arrival")));
    }

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        let a = TimingProfile::parse(&SMALL.replace("ARR", "3.0")).unwrap();
        let b = TimingProfile::parse(&SMALL.replace("ARR", "3.1")).unwrap();
        assert_eq!(a.content_hash(), a.clone().content_hash());
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
