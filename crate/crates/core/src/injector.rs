// SPDX-License-Identifier: Apache-2.0
//! Arms a single clock glitch and applies it at the matching edge.
//!
//! The trigger counts distinct dynamic instances of the target PC entering
//! the target stage (speculative fetches included for IF). On the first edge
//! at which the requested instance occupies that stage, every endpoint the
//! stage latches is checked against the shortened period and violated bits
//! are overwritten according to the policy.

use crate::error::TimingError;
use crate::machine::{EdgeHook, EdgeLatches, Observation, LATCH_FIELDS};
use crate::timing::{
    apply_violation, field_violation, ns_to_ps, GlitchSpec, LatchEvent, Picos, TimingProfile, Trigger, ViolationPolicy,
};

#[derive(Debug, Clone)]
pub struct ArmedGlitch {
    spec: GlitchSpec,
    policy: ViolationPolicy,
    seed: u64,
    /// (endpoint, field, violated mask) for the target stage.
    masks: Vec<(String, String, u32)>,
    seen: u32,
    last_seq: Option<u64>,
    fired: bool,
}

/// Per-field seed for the random policy, stable across runs and platforms.
pub fn field_seed(seed: u64, cycle: u64, endpoint: &str, field: &str) -> u64 {
    // FNV-1a over the identifying tuple, then a splitmix finaliser.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(&seed.to_le_bytes());
    eat(&cycle.to_le_bytes());
    eat(endpoint.as_bytes());
    eat(&[0]);
    eat(field.as_bytes());
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Rejects profiles that name endpoints or fields the pipeline does not
/// latch, or that disagree with it on stage or width.
pub fn check_profile_matches_machine(profile: &TimingProfile) -> Result<(), TimingError> {
    let mut problems = Vec::new();
    for ep in &profile.endpoints {
        for f in &ep.fields {
            match LATCH_FIELDS.iter().find(|(e, n, _, _)| *e == ep.name && *n == f.name) {
                None => problems.push(format!("{}.{}: not latched by the pipeline", ep.name, f.name)),
                Some(&(_, _, stage, width)) => {
                    if stage != ep.stage {
                        problems.push(format!(
                            "{}.{}: pipeline latches it in {stage}, profile says {}",
                            ep.name, f.name, ep.stage
                        ));
                    }
                    if width != f.width() {
                        problems.push(format!(
                            "{}.{}: width {} but the pipeline field is {width} bits",
                            ep.name,
                            f.name,
                            f.width()
                        ));
                    }
                }
            }
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(TimingError::Invalid(problems))
    }
}

impl ArmedGlitch {
    pub fn new(
        spec: GlitchSpec,
        profile: &TimingProfile,
        policy: ViolationPolicy,
        seed: u64,
    ) -> Result<Self, TimingError> {
        spec.check_against(profile)?;
        check_profile_matches_machine(profile)?;
        let t: Picos = ns_to_ps(spec.t_offset_ns + spec.t_width_ns);
        let masks = profile
            .endpoints_for(spec.trigger.target_stage)
            .flat_map(|ep| {
                ep.fields
                    .iter()
                    .map(move |f| (ep.name.clone(), f.name.clone(), field_violation(f, t)))
            })
            .collect();
        Ok(Self {
            spec,
            policy,
            seed,
            masks,
            seen: 0,
            last_seq: None,
            fired: false,
        })
    }

    pub fn spec(&self) -> &GlitchSpec {
        &self.spec
    }

    pub fn has_fired(&self) -> bool {
        self.fired
    }

    /// Advances the occurrence count and reports whether this edge is the
    /// glitched one.
    pub fn should_fire(&mut self, obs: &Observation) -> bool {
        if self.fired {
            return false;
        }
        let trig = self.spec.trigger;
        let Some(occ) = obs.occupant(trig.target_stage) else {
            return false;
        };
        if occ.pc != trig.target_pc || self.last_seq == Some(occ.seq) {
            return false;
        }
        self.last_seq = Some(occ.seq);
        self.seen += 1;
        self.seen == trig.occurrence
    }

    /// Corrupts the violated bits of the armed stage's endpoints.
    pub fn fire(&mut self, latches: &mut EdgeLatches) -> Vec<LatchEvent> {
        self.fired = true;
        let cycle = latches.cycle;
        let mut events = Vec::new();
        for (endpoint, field, mask) in &self.masks {
            if *mask == 0 {
                continue;
            }
            let Some(slot) = latches.slot_mut(endpoint, field) else {
                continue;
            };
            let seed = field_seed(self.seed, cycle, endpoint, field);
            let latched = apply_violation(slot.intended, slot.previous, *mask, self.policy, seed);
            slot.value = latched;
            events.push(LatchEvent {
                cycle,
                endpoint: endpoint.clone(),
                field: field.clone(),
                violated_mask: *mask,
                value_intended: slot.intended,
                value_latched: latched,
            });
        }
        events
    }
}

impl EdgeHook for ArmedGlitch {
    fn on_edge(&mut self, obs: &Observation, latches: &mut EdgeLatches) -> Option<Vec<LatchEvent>> {
        self.should_fire(obs).then(|| self.fire(latches))
    }
}

/// Overwrites one endpoint field with a fixed value on the first edge at
/// which the trigger's instance occupies its stage. Used to replay a known
/// corrupted word without a timing profile.
#[derive(Debug, Clone)]
pub struct ForcedLatch {
    pub trigger: Trigger,
    pub endpoint: String,
    pub field: String,
    pub value: u32,
    seen: u32,
    last_seq: Option<u64>,
    fired: bool,
}

impl ForcedLatch {
    pub fn new(trigger: Trigger, endpoint: &str, field: &str, value: u32) -> Self {
        Self {
            trigger,
            endpoint: endpoint.to_string(),
            field: field.to_string(),
            value,
            seen: 0,
            last_seq: None,
            fired: false,
        }
    }
}

impl EdgeHook for ForcedLatch {
    fn on_edge(&mut self, obs: &Observation, latches: &mut EdgeLatches) -> Option<Vec<LatchEvent>> {
        if self.fired {
            return None;
        }
        let occ = obs.occupant(self.trigger.target_stage)?;
        if occ.pc != self.trigger.target_pc || self.last_seq == Some(occ.seq) {
            return None;
        }
        self.last_seq = Some(occ.seq);
        self.seen += 1;
        if self.seen != self.trigger.occurrence {
            return None;
        }
        self.fired = true;
        let cycle = latches.cycle;
        let slot = latches.slot_mut(&self.endpoint, &self.field)?;
        slot.value = self.value;
        Some(vec![LatchEvent {
            cycle,
            endpoint: self.endpoint.clone(),
            field: self.field.clone(),
            violated_mask: slot.intended ^ self.value,
            value_intended: slot.intended,
            value_latched: self.value,
        }])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;
    use crate::machine::{run_pipeline, MachineConfig};
    use crate::timing::Stage;

    fn glitch(pc: u32, stage: Stage, occurrence: u32, t: f64) -> ArmedGlitch {
        let trig = Trigger {
            target_pc: pc,
            target_stage: stage,
            occurrence,
        };
        let spec = GlitchSpec::new(0.833, t - 0.833, trig).unwrap();
        ArmedGlitch::new(spec, &TimingProfile::default_profile(), ViolationPolicy::Zero, 0).unwrap()
    }

    #[test]
    fn default_profile_matches_pipeline() {
        check_profile_matches_machine(&TimingProfile::default_profile()).unwrap();
    }

    #[test]
    fn fires_once_on_requested_instance() {
        let img = assemble("addi x1, x0, 3\nloop: addi x1, x1, -1\nbne x1, x0, loop\nebreak").unwrap();
        let mut g = glitch(4, Stage::IF, 2, 3.5);
        let r = run_pipeline(&img, 0, MachineConfig::default(), Some(&mut g));
        assert!(g.has_fired());
        let cycles: std::collections::BTreeSet<u64> = r.latch_events.iter().map(|e| e.cycle).collect();
        assert_eq!(cycles.len(), 1);
        // second iteration's decrement became an illegal slot
        assert_eq!(r.final_state.illegal_count, 1);
    }

    #[test]
    fn unreached_occurrence_never_fires() {
        let img = assemble("addi x1, x0, 1\nebreak").unwrap();
        let mut g = glitch(0, Stage::EX, 2, 3.5);
        let r = run_pipeline(&img, 0, MachineConfig::default(), Some(&mut g));
        assert!(!g.has_fired());
        assert!(r.latch_events.is_empty());
    }

    #[test]
    fn only_target_stage_endpoints_are_touched() {
        let img = assemble("addi x1, x0, 1\naddi x2, x0, 2\nebreak").unwrap();
        let mut g = glitch(0, Stage::EX, 1, 2.6);
        let r = run_pipeline(&img, 0, MachineConfig::default(), Some(&mut g));
        assert!(!r.latch_events.is_empty());
        assert!(r
            .latch_events
            .iter()
            .all(|e| e.endpoint == "ex_wb" || e.endpoint == "pc_target"));
    }

    #[test]
    fn field_seed_separates_fields() {
        assert_ne!(field_seed(1, 5, "ex_wb", "rd"), field_seed(1, 5, "ex_wb", "alu_result"));
        assert_ne!(field_seed(1, 5, "ex_wb", "rd"), field_seed(1, 6, "ex_wb", "rd"));
        assert_eq!(field_seed(9, 5, "ex_wb", "rd"), field_seed(9, 5, "ex_wb", "rd"));
    }
}
