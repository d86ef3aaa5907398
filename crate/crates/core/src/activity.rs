//! Skill-activity gating `h(z) = min(b_glu * z / (C - 1), 1)` and the disease
//! presets built on it.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::skill::DiscreteSkill;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    SevereHd,
    MildHd,
    Normal,
    MildPd,
    SeverePd,
    Custom,
}

impl Preset {
    /// All named presets, from most to least active.
    pub const NAMED: [Preset; 5] = [Preset::SevereHd, Preset::MildHd, Preset::Normal, Preset::MildPd, Preset::SeverePd];

    /// `b_glu` for a named preset; `None` for `Custom`.
    pub fn b_glu(self) -> Option<f64> {
        match self {
            Preset::SevereHd => Some(10.0),
            Preset::MildHd => Some(3.0),
            Preset::Normal => Some(1.0),
            Preset::MildPd => Some(0.2),
            Preset::SeverePd => Some(0.0),
            Preset::Custom => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::SevereHd => "severe_hd",
            Preset::MildHd => "mild_hd",
            Preset::Normal => "normal",
            Preset::MildPd => "mild_pd",
            Preset::SeverePd => "severe_pd",
            Preset::Custom => "custom",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown activity preset `{0}`")]
pub struct UnknownPreset(pub alloc::string::String);

impl FromStr for Preset {
    type Err = UnknownPreset;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let p = match s {
            "severe_hd" => Preset::SevereHd,
            "mild_hd" => Preset::MildHd,
            "normal" => Preset::Normal,
            "mild_pd" => Preset::MildPd,
            "severe_pd" => Preset::SeverePd,
            "custom" => Preset::Custom,
            _ => return Err(UnknownPreset(s.into())),
        };
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivityConfig {
    pub preset: Preset,
    pub b_glu: f64,
    pub count: usize,
}

impl ActivityConfig {
    pub fn preset(preset: Preset, count: usize) -> Self {
        Self { preset, b_glu: preset.b_glu().unwrap_or(1.0), count }
    }

    pub fn custom(b_glu: f64, count: usize) -> Self {
        Self { preset: Preset::Custom, b_glu, count }
    }

    /// `h(z)` for every skill index.
    pub fn table(&self) -> Vec<f64> {
        (0..self.count).map(|z| self.h(z)).collect()
    }

    fn h(&self, z: usize) -> f64 {
        if self.preset == Preset::SevereHd {
            return 1.0;
        }
        if self.count <= 1 {
            // A single skill is the top skill.
            return if self.b_glu > 0.0 { 1.0 } else { 0.0 };
        }
        (self.b_glu * z as f64 / (self.count - 1) as f64).min(1.0)
    }
}

/// `h(z)` in `[0, 1]`. The severe-HD preset pins every skill at full activity.
pub fn activity(cfg: &ActivityConfig, z: DiscreteSkill) -> f64 {
    cfg.h(z.index())
}

/// One logged step of a rollout used for preset comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorSample {
    pub skill_index: usize,
    pub step: usize,
    pub r_e: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    pub preset: Preset,
    pub skill_index: usize,
    pub step: usize,
    pub r_e: f64,
    pub h: f64,
    pub weighted_r_e: f64,
}

/// Re-weights one shared reward stream under several presets
/// (analysis-only mode: a single policy, different gates).
pub fn reweight(presets: &[ActivityConfig], samples: &[MotorSample]) -> Vec<WeightedSample> {
    let mut out = Vec::with_capacity(presets.len() * samples.len());
    for cfg in presets {
        let table = cfg.table();
        for s in samples {
            let h = table[s.skill_index];
            out.push(WeightedSample {
                preset: cfg.preset,
                skill_index: s.skill_index,
                step: s.step,
                r_e: s.r_e,
                h,
                weighted_r_e: h * s.r_e,
            });
        }
    }
    out
}

/// Mean weighted reward per preset, in the order given.
pub fn preset_means(presets: &[ActivityConfig], samples: &[MotorSample]) -> Vec<(Preset, f64)> {
    presets
        .iter()
        .map(|cfg| {
            let table = cfg.table();
            let n = samples.len().max(1) as f64;
            (cfg.preset, samples.iter().map(|s| table[s.skill_index] * s.r_e).sum::<f64>() / n)
        })
        .collect()
}
