use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// How tasks share parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchMode {
    /// One task, one encoder, one decoder.
    #[serde(rename = "single")]
    Single,
    /// Shared encoder, one decoder per task.
    #[serde(rename = "one-to-n")]
    OneToN,
    /// Everything shared; the task is a marker token prefixed to the source.
    #[serde(rename = "one-to-one")]
    OneToOne,
}

impl ArchMode {
    pub fn name(self) -> &'static str {
        match self {
            ArchMode::Single => "single",
            ArchMode::OneToN => "one-to-n",
            ArchMode::OneToOne => "one-to-one",
        }
    }
}

impl fmt::Display for ArchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(ArchMode::Single),
            "one-to-n" | "1-to-n" => Ok(ArchMode::OneToN),
            "one-to-one" | "1-to-1" => Ok(ArchMode::OneToOne),
            other => Err(ModelError::Config(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: ArchMode,
    pub layers: usize,
    pub units: usize,
    pub heads: usize,
    pub dropout: f64,
    /// Longest source (excluding the task marker) and longest action sequence.
    pub max_len: usize,
    pub beam: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Preset::OneToOne.model_config()
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.layers == 0 {
            return bad("layers must be at least 1".into());
        }
        if self.units == 0 || self.heads == 0 || !self.units.is_multiple_of(self.heads) {
            return bad(format!(
                "units ({}) must be a positive multiple of heads ({})",
                self.units, self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.beam == 0 {
            return bad("beam must be at least 1".into());
        }
        if self.max_len == 0 {
            return bad("max_len must be at least 1".into());
        }
        Ok(())
    }

    pub fn ffn_units(&self) -> usize {
        4 * self.units
    }

    pub fn head_dim(&self) -> usize {
        self.units / self.heads
    }
}

/// Standard hyper-parameter settings: per-dataset baselines and the three
/// multi-task models.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Geoquery,
    Nlmaps,
    Top,
    Overnight,
    Amr,
    OneToN,
    OneToOne,
    OneToOneSmall,
}

impl Preset {
    pub const BASELINES: [Preset; 5] = [
        Preset::Geoquery,
        Preset::Nlmaps,
        Preset::Top,
        Preset::Overnight,
        Preset::Amr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Geoquery => "geoquery",
            Preset::Nlmaps => "nlmaps",
            Preset::Top => "top",
            Preset::Overnight => "overnight",
            Preset::Amr => "amr",
            Preset::OneToN => "1-to-n",
            Preset::OneToOne => "1-to-1",
            Preset::OneToOneSmall => "1-to-1-small",
        }
    }

    /// `(batch, layers, units, heads, dropout)`; the learning rate is 0.05 throughout.
    fn row(self) -> (usize, usize, usize, usize, f64) {
        match self {
            Preset::Geoquery => (100, 3, 512, 4, 0.1),
            Preset::Nlmaps => (50, 4, 512, 16, 0.05),
            Preset::Top => (200, 3, 512, 4, 0.04),
            Preset::Overnight => (10, 3, 700, 4, 0.03),
            Preset::Amr => (10, 4, 512, 4, 0.03),
            Preset::OneToN => (10, 3, 512, 4, 0.1),
            Preset::OneToOne => (10, 3, 1024, 4, 0.1),
            Preset::OneToOneSmall => (10, 3, 512, 4, 0.1),
        }
    }

    pub fn mode(self) -> ArchMode {
        match self {
            Preset::OneToN => ArchMode::OneToN,
            Preset::OneToOne | Preset::OneToOneSmall => ArchMode::OneToOne,
            _ => ArchMode::Single,
        }
    }

    pub fn batch_size(self) -> usize {
        self.row().0
    }

    pub fn learning_rate(self) -> f64 {
        0.05
    }

    pub fn model_config(self) -> ModelConfig {
        let (_, layers, units, heads, dropout) = self.row();
        ModelConfig {
            mode: self.mode(),
            layers,
            units,
            heads,
            dropout,
            max_len: 128,
            beam: 4,
        }
    }
}

impl FromStr for Preset {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let all = [
            Preset::Geoquery,
            Preset::Nlmaps,
            Preset::Top,
            Preset::Overnight,
            Preset::Amr,
            Preset::OneToN,
            Preset::OneToOne,
            Preset::OneToOneSmall,
        ];
        let key = s.to_ascii_lowercase();
        all.into_iter()
            .find(|p| p.name() == key)
            .ok_or_else(|| ModelError::Config(format!("unknown preset '{s}'")))
    }
}
