//! Architecture hyperparameters and the named presets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{localization_flat_dim, BlockParams, DownsampleParams, Init, ParamSpec, SEParams, STNParams, StemParams};

/// Side length of the stem's non-overlapping patches.
pub const PATCH: usize = 4;
/// Total spatial reduction from input to the last stage.
pub const TOTAL_STRIDE: usize = PATCH * 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub channels: [usize; 4],
    pub blocks: [usize; 4],
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    #[serde(default = "default_se_reduction")]
    pub se_reduction: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_drop_path")]
    pub drop_path_max: f64,
    #[serde(default = "default_label_smoothing")]
    pub label_smoothing: f64,
    #[serde(default = "default_input_size")]
    pub input_size: usize,
}

fn default_classes() -> usize {
    crate::NUM_CLASSES
}
fn default_in_channels() -> usize {
    1
}
fn default_se_reduction() -> usize {
    16
}
fn default_lambda() -> f64 {
    0.01
}
fn default_drop_path() -> f64 {
    0.1
}
fn default_label_smoothing() -> f64 {
    0.1
}
fn default_input_size() -> usize {
    224
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    Micro,
    Tiny,
    Small,
    Base,
    Large,
    XLarge,
}

impl Preset {
    pub const ALL: [Preset; 6] = [Preset::Micro, Preset::Tiny, Preset::Small, Preset::Base, Preset::Large, Preset::XLarge];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Micro => "micro",
            Preset::Tiny => "tiny",
            Preset::Small => "small",
            Preset::Base => "base",
            Preset::Large => "large",
            Preset::XLarge => "xlarge",
        }
    }

    pub fn config(self) -> ModelConfig {
        let deep = [3, 3, 27, 3];
        let (channels, blocks) = match self {
            Preset::Micro => ([8, 16, 32, 64], [1, 1, 1, 1]),
            Preset::Tiny => ([96, 192, 384, 768], [3, 3, 9, 3]),
            Preset::Small => ([96, 192, 384, 768], deep),
            Preset::Base => ([128, 256, 512, 1024], deep),
            Preset::Large => ([192, 384, 768, 1536], deep),
            Preset::XLarge => ([256, 512, 1024, 2048], deep),
        };
        let mut c = ModelConfig {
            channels,
            blocks,
            num_classes: default_classes(),
            in_channels: default_in_channels(),
            se_reduction: default_se_reduction(),
            lambda: default_lambda(),
            drop_path_max: default_drop_path(),
            label_smoothing: default_label_smoothing(),
            input_size: default_input_size(),
        };
        if self == Preset::Micro {
            c.se_reduction = 4;
            c.input_size = 64;
        }
        c
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::Config(format!("unknown preset `{s}` (valid: {})", names.join(", ")))
            })
    }
}

impl ModelConfig {
    pub fn preset(name: &str) -> Result<Self> {
        Ok(name.parse::<Preset>()?.config())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels.contains(&0) {
            return bad(format!("channel widths must be positive, got {:?}", self.channels));
        }
        if self.num_classes == 0 || self.in_channels == 0 || self.se_reduction == 0 {
            return bad("num_classes, in_channels and se_reduction must be at least 1".into());
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(TOTAL_STRIDE) {
            return bad(format!("input_size {} must be a positive multiple of {TOTAL_STRIDE}", self.input_size));
        }
        if localization_flat_dim(self.input_size).is_none() {
            return bad(format!("input_size {} is too small for the spatial transformer", self.input_size));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be a finite value ≥ 0, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.drop_path_max) {
            return bad(format!("drop_path_max must lie in [0, 1), got {}", self.drop_path_max));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing must lie in [0, 1), got {}", self.label_smoothing));
        }
        Ok(())
    }

    /// `(channels, side)` of each stage's output for a square input.
    pub fn stage_shapes(&self) -> [(usize, usize); 4] {
        let mut side = self.input_size / PATCH;
        std::array::from_fn(|i| {
            if i > 0 {
                side /= 2;
            }
            (self.channels[i], side)
        })
    }

    /// Number of attention tokens at the last stage.
    pub fn num_tokens(&self) -> usize {
        let side = self.stage_shapes()[3].1;
        side * side
    }

    /// Stochastic-depth probability of every block in execution order,
    /// ramped linearly from 0 to `drop_path_max`.
    pub fn drop_rates(&self) -> Vec<f64> {
        let total: usize = self.blocks.iter().sum();
        (0..total)
            .map(|k| if total > 1 { self.drop_path_max * k as f64 / (total - 1) as f64 } else { 0.0 })
            .collect()
    }

    /// Every parameter tensor of the network, in a fixed order.
    pub fn param_specs(&self) -> Result<Vec<ParamSpec>> {
        self.validate()?;
        let c = self.channels;
        let mut specs = STNParams::<f32>::specs("stn", self.in_channels, self.input_size)?;
        specs.extend(StemParams::<f32>::specs("stem", self.in_channels, c[0], PATCH));
        for i in 0..4 {
            for j in 0..self.blocks[i] {
                specs.extend(BlockParams::<f32>::specs(&format!("stages.{i}.blocks.{j}"), c[i]));
            }
            specs.extend(SEParams::<f32>::specs(&format!("stages.{i}.se"), c[i], self.se_reduction));
            if i < 3 {
                specs.extend(DownsampleParams::<f32>::specs(&format!("downsample.{i}"), c[i], c[i + 1]));
            }
        }
        let d = c[3];
        let w = Init::TruncNormal(0.02);
        specs.push(ParamSpec::new("head.q.weight", &[d, d], w.clone()));
        specs.push(ParamSpec::new("head.k.weight", &[d, d], w.clone()));
        specs.push(ParamSpec::new("head.norm.weight", &[d], Init::Constant(1.0)));
        specs.push(ParamSpec::new("head.norm.bias", &[d], Init::Constant(0.0)));
        specs.push(ParamSpec::new("head.fc.weight", &[self.num_classes, d], w));
        specs.push(ParamSpec::new("head.fc.bias", &[self.num_classes], Init::Constant(0.0)));
        Ok(specs)
    }

    pub fn num_params(&self) -> Result<usize> {
        Ok(self.param_specs()?.iter().map(ParamSpec::numel).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_tables() {
        let t = Preset::Tiny.config();
        assert_eq!((t.channels, t.blocks), ([96, 192, 384, 768], [3, 3, 9, 3]));
        assert_eq!(Preset::Small.config().blocks, [3, 3, 27, 3]);
        assert_eq!(Preset::Base.config().channels, [128, 256, 512, 1024]);
        assert_eq!(Preset::Large.config().channels, [192, 384, 768, 1536]);
        assert_eq!(Preset::XLarge.config().channels, [256, 512, 1024, 2048]);
        let m = Preset::Micro.config();
        assert_eq!((m.channels, m.blocks, m.se_reduction, m.input_size), ([8, 16, 32, 64], [1, 1, 1, 1], 4, 64));
    }

    #[test]
    fn stage_geometry() {
        let sides: Vec<_> = Preset::Tiny.config().stage_shapes().iter().map(|s| s.1).collect();
        assert_eq!(sides, [56, 28, 14, 7]);
        assert_eq!(Preset::Tiny.config().num_tokens(), 49);
        assert_eq!(Preset::Micro.config().num_tokens(), 4);
    }

    #[test]
    fn unknown_preset_lists_names() {
        let err = ModelConfig::preset("huge").unwrap_err().to_string();
        assert!(err.contains("micro, tiny, small, base, large, xlarge"), "{err}");
        assert_eq!("XLarge".parse::<Preset>().unwrap(), Preset::XLarge);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = Preset::Micro.config();
        c.input_size = 48;
        assert!(c.validate().is_err());
        let mut c = Preset::Micro.config();
        c.drop_path_max = 1.0;
        assert!(c.validate().is_err());
        let mut c = Preset::Micro.config();
        c.lambda = -0.1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn drop_rates_ramp() {
        let r = Preset::Tiny.config().drop_rates();
        assert_eq!(r.len(), 18);
        assert_eq!(r[0], 0.0);
        assert!((r[17] - 0.1).abs() < 1e-15);
        assert!(r.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(Preset::Micro.config().drop_rates().len(), 4);
    }

    #[test]
    fn json_defaults() {
        let c: ModelConfig = serde_json::from_str(r#"{"channels":[8,16,32,64],"blocks":[1,1,1,1],"input_size":64,"se_reduction":4}"#).unwrap();
        assert_eq!(c, Preset::Micro.config());
        assert!(serde_json::from_str::<ModelConfig>(r#"{"channels":[8,16,32,64],"blocks":[1,1,1,1],"bogus":1}"#).is_err());
    }
}
