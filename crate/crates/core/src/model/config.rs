use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ssm::MambaDims;

/// How the ego vehicle's motion is encoded per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EgoKind {
    /// One real speed value per frame.
    Speed,
    /// Integer behavior label 0..=4, one-hot encoded.
    Behavior,
}

impl EgoKind {
    pub const NUM_BEHAVIORS: usize = 5;

    pub fn feature_dim(self) -> usize {
        match self {
            EgoKind::Speed => 1,
            EgoKind::Behavior => Self::NUM_BEHAVIORS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backbone {
    Mamba,
    Gru,
}

/// Decoder input construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoding {
    /// Observed pedestrian features followed by copies of the last ego feature.
    Emgd,
    /// Fused per-step features followed by future slots (see [`PfdSlots`]).
    Pfd,
}

/// Future-step inputs of the post-fusion decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfdSlots {
    /// The last fused observation repeated.
    RepeatLast,
    /// Zero vectors. A Mamba decoder without in-projection bias gates these
    /// steps to exactly zero output.
    Zeros,
}

macro_rules! str_enum {
    ($ty:ident, $what:literal, $($variant:ident => $s:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $s),+ })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($ty::$variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", $what, " `{}` (expected one of: ", $($s, " "),+, ")"),
                        other
                    ))),
                }
            }
        }
    };
}

str_enum!(EgoKind, "ego_kind", Speed => "speed", Behavior => "behavior");
str_enum!(Backbone, "backbone", Mamba => "mamba", Gru => "gru");
str_enum!(Decoding, "decoding", Emgd => "emgd", Pfd => "pfd");
str_enum!(PfdSlots, "pfd_slots", RepeatLast => "repeat_last", Zeros => "zeros");

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_state: usize,
    pub expand: usize,
    pub conv_width: usize,
    /// Blocks per encoder/decoder stack (Mamba backbone only).
    pub n_blocks: usize,
    pub m_obs: usize,
    pub n_pred: usize,
    pub ego_kind: EgoKind,
    pub backbone: Backbone,
    pub decoding: Decoding,
    pub pfd_slots: PfdSlots,
    pub seed: u64,
    /// Divide input box features by the image size.
    pub normalize: bool,
    pub image_width: f64,
    pub image_height: f64,
    /// Standardize speed inputs with `ego_mean` / `ego_std`.
    pub ego_zscore: bool,
    pub ego_mean: f64,
    pub ego_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            d_state: 16,
            expand: 2,
            conv_width: 4,
            n_blocks: 1,
            m_obs: 15,
            n_pred: 45,
            ego_kind: EgoKind::Speed,
            backbone: Backbone::Mamba,
            decoding: Decoding::Emgd,
            pfd_slots: PfdSlots::RepeatLast,
            seed: 0,
            normalize: false,
            image_width: 1920.0,
            image_height: 1080.0,
            ego_zscore: false,
            ego_mean: 0.0,
            ego_std: 1.0,
        }
    }
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl ModelConfig {
    pub fn mamba_dims(&self) -> MambaDims {
        MambaDims {
            d_model: self.d_model,
            d_state: self.d_state,
            expand: self.expand,
            conv_width: self.conv_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.m_obs < 2 {
            return fail("m_obs must be >= 2");
        }
        if self.n_pred < 1 {
            return fail("n_pred must be >= 1");
        }
        if self.d_model < 8 {
            return fail("d_model must be >= 8");
        }
        if self.d_state < 1 || self.expand < 1 || self.conv_width < 1 || self.n_blocks < 1 {
            return fail("d_state, expand, conv_width and n_blocks must be >= 1");
        }
        if !(self.image_width > 0.0 && self.image_height > 0.0) {
            return fail("image_width and image_height must be positive");
        }
        if !(self.ego_std > 0.0) || !self.ego_mean.is_finite() {
            return fail("ego_std must be positive and ego_mean finite");
        }
        Ok(())
    }

    /// Apply one `key = value` setting. Returns `false` for keys this
    /// config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "d_model" => self.d_model = parse_value(key, value)?,
            "d_state" => self.d_state = parse_value(key, value)?,
            "expand" => self.expand = parse_value(key, value)?,
            "conv_width" => self.conv_width = parse_value(key, value)?,
            "n_blocks" => self.n_blocks = parse_value(key, value)?,
            "m_obs" => self.m_obs = parse_value(key, value)?,
            "n_pred" => self.n_pred = parse_value(key, value)?,
            "ego_kind" => self.ego_kind = value.parse()?,
            "backbone" => self.backbone = value.parse()?,
            "decoding" => self.decoding = value.parse()?,
            "pfd_slots" => self.pfd_slots = value.parse()?,
            "seed" => self.seed = parse_value(key, value)?,
            "normalize" => self.normalize = parse_value(key, value)?,
            "image_width" => self.image_width = parse_value(key, value)?,
            "image_height" => self.image_height = parse_value(key, value)?,
            "ego_zscore" => self.ego_zscore = parse_value(key, value)?,
            "ego_mean" => self.ego_mean = parse_value(key, value)?,
            "ego_std" => self.ego_std = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Canonical `(key, value)` pairs; floats use shortest round-trip form.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("d_model", self.d_model.to_string()),
            ("d_state", self.d_state.to_string()),
            ("expand", self.expand.to_string()),
            ("conv_width", self.conv_width.to_string()),
            ("n_blocks", self.n_blocks.to_string()),
            ("m_obs", self.m_obs.to_string()),
            ("n_pred", self.n_pred.to_string()),
            ("ego_kind", self.ego_kind.to_string()),
            ("backbone", self.backbone.to_string()),
            ("decoding", self.decoding.to_string()),
            ("pfd_slots", self.pfd_slots.to_string()),
            ("seed", self.seed.to_string()),
            ("normalize", self.normalize.to_string()),
            ("image_width", format!("{:?}", self.image_width)),
            ("image_height", format!("{:?}", self.image_height)),
            ("ego_zscore", self.ego_zscore.to_string()),
            ("ego_mean", format!("{:?}", self.ego_mean)),
            ("ego_std", format!("{:?}", self.ego_std)),
        ]
    }
}
