//! Architecture hyperparameters and the ablation variants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{LgfnError, Result};

/// How ESAM and ECAM are combined inside an LGFM branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// `(ESAM(x) + ECAM(x)) / 2`.
    Parallel,
    /// `ECAM(ESAM(x))`.
    Cascade,
}

impl FromStr for AttentionMode {
    type Err = LgfnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallel" => Ok(Self::Parallel),
            "cascade" => Ok(Self::Cascade),
            other => Err(LgfnError::Config(format!(
                "attention mode must be parallel or cascade, got {other:?}"
            ))),
        }
    }
}

/// Orientation of an LGFM branch: which spatial axis the angular axis is
/// folded into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `[U, C, H, V·W]`: views of one angular row side by side.
    Horizontal,
    /// `[V, C, U·H, W]`: views of one angular column stacked.
    Vertical,
}

impl Direction {
    pub fn tag(&self) -> &'static str {
        match self {
            Direction::Horizontal => "h",
            Direction::Vertical => "v",
        }
    }
}

/// Channel expansion of the DGCE entry convolution as a ratio `num/den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Expansion {
    pub num: usize,
    pub den: usize,
}

impl Expansion {
    pub const fn new(num: usize, den: usize) -> Self {
        Self { num, den }
    }
}

impl fmt::Display for Expansion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Expansion {
    type Err = LgfnError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || LgfnError::Config(format!("expansion {s:?} is not of the form N or N/D"));
        let (n, d) = match s.split_once('/') {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s.trim(), "1"),
        };
        let num = n.parse().map_err(|_| bad())?;
        let den = d.parse().map_err(|_| bad())?;
        if num == 0 || den == 0 {
            return Err(bad());
        }
        Ok(Self { num, den })
    }
}

impl Serialize for Expansion {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Expansion {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(n) => Ok(Expansion::new(n, 1)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Decomposed large-kernel attention: depthwise `k×k`, depthwise dilated
/// `k'×k'`, then a pointwise convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LkaSpec {
    pub dw_kernel: usize,
    pub dilated_kernel: usize,
    pub dilation: usize,
}

impl Default for LkaSpec {
    fn default() -> Self {
        Self {
            dw_kernel: 5,
            dilated_kernel: 7,
            dilation: 3,
        }
    }
}

impl LkaSpec {
    /// Receptive field of the two stacked depthwise convolutions.
    pub fn receptive_field(&self) -> usize {
        self.dw_kernel + (self.dilated_kernel - 1) * self.dilation
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LgfnConfig {
    pub channels: usize,
    pub num_lgfm: usize,
    pub scale: usize,
    pub angular: usize,
    pub dgce_expansion: Expansion,
    pub esam_reduction: usize,
    /// Total spatial reduction inside ESAM: a stride-2 depthwise convolution
    /// followed by 2×2 max pooling.
    pub esam_downscale: usize,
    pub lka: LkaSpec,
    pub attention_mode: AttentionMode,
    pub enable_dgce: bool,
    pub enable_esam: bool,
    pub enable_ecam: bool,
    /// Branch orientations run in sequence inside every LGFM.
    pub directions: Vec<Direction>,
}

impl Default for LgfnConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            num_lgfm: 7,
            scale: 4,
            angular: 5,
            dgce_expansion: Expansion::new(5, 2),
            esam_reduction: 4,
            esam_downscale: 4,
            lka: LkaSpec::default(),
            attention_mode: AttentionMode::Parallel,
            enable_dgce: true,
            enable_esam: true,
            enable_ecam: true,
            directions: vec![Direction::Horizontal, Direction::Vertical],
        }
    }
}

impl LgfnConfig {
    /// The small configuration used for gradient checks and smoke training.
    pub fn tiny() -> Self {
        Self {
            channels: 8,
            num_lgfm: 1,
            ..Self::default()
        }
    }

    pub fn with_scale(mut self, scale: usize) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_angular(mut self, angular: usize) -> Self {
        self.angular = angular;
        self
    }

    pub fn with_mode(mut self, mode: AttentionMode) -> Self {
        self.attention_mode = mode;
        self
    }

    pub fn with_modules(mut self, dgce: bool, esam: bool, ecam: bool) -> Self {
        self.enable_dgce = dgce;
        self.enable_esam = esam;
        self.enable_ecam = ecam;
        self
    }

    /// Width of each half of the DGCE split.
    pub fn dgce_half(&self) -> usize {
        self.channels * self.dgce_expansion.num / (2 * self.dgce_expansion.den)
    }

    pub fn esam_channels(&self) -> usize {
        self.channels / self.esam_reduction
    }

    /// `(lgfm index, branch index, direction)` for every branch in order.
    pub fn branches(&self) -> Vec<(usize, usize, Direction)> {
        (0..self.num_lgfm)
            .flat_map(|i| {
                self.directions
                    .iter()
                    .enumerate()
                    .map(move |(j, &d)| (i, j, d))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(LgfnError::Config(m));
        let c = self.channels;
        if c == 0 {
            return err("channels must be positive".into());
        }
        if self.num_lgfm == 0 {
            return err("num_lgfm must be at least 1".into());
        }
        if self.directions.is_empty() {
            return err("directions must name at least one branch".into());
        }
        if self.scale != 2 && self.scale != 4 {
            return err(format!("scale must be 2 or 4, got {}", self.scale));
        }
        if self.angular == 0 {
            return err("angular extent must be positive".into());
        }
        let e = self.dgce_expansion;
        if e.num == 0 || e.den == 0 || (c * e.num) % (2 * e.den) != 0 {
            return err(format!(
                "channels {c} with expansion {e} do not split into two integer halves"
            ));
        }
        if self.esam_reduction == 0 || c % self.esam_reduction != 0 {
            return err(format!(
                "channels {c} not divisible by esam_reduction {}",
                self.esam_reduction
            ));
        }
        if self.esam_downscale != 4 {
            return err(format!(
                "esam_downscale {} unsupported; the stride-2 conv + 2x2 pool stack reduces by 4",
                self.esam_downscale
            ));
        }
        let l = self.lka;
        if l.dw_kernel % 2 == 0 || l.dilated_kernel % 2 == 0 || l.dilation == 0 {
            return err(format!(
                "LKA kernels must be odd and dilation positive: {l:?}"
            ));
        }
        if self.enable_ecam && c < 3 {
            return err(format!("ECAM needs at least 3 channels, got {c}"));
        }
        Ok(())
    }
}

/// One row of the module ablation study.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationVariant {
    pub label: &'static str,
    pub config: LgfnConfig,
}

/// The six module/connection variants: parallel and cascade full models,
/// then removing ECAM, ESAM, both attentions, and DGCE.
pub fn ablation_variants(base: &LgfnConfig) -> Vec<AblationVariant> {
    let p = base.clone().with_mode(AttentionMode::Parallel);
    vec![
        AblationVariant {
            label: "parallel",
            config: p.clone().with_modules(true, true, true),
        },
        AblationVariant {
            label: "cascade",
            config: p
                .clone()
                .with_mode(AttentionMode::Cascade)
                .with_modules(true, true, true),
        },
        AblationVariant {
            label: "w/o ECAM",
            config: p.clone().with_modules(true, true, false),
        },
        AblationVariant {
            label: "w/o ESAM",
            config: p.clone().with_modules(true, false, true),
        },
        AblationVariant {
            label: "w/o ESAM+ECAM",
            config: p.clone().with_modules(true, false, false),
        },
        AblationVariant {
            label: "w/o DGCE",
            config: p.with_modules(false, true, true),
        },
    ]
}
