//! JSON configuration files and named presets.
//!
//! A config file may give only preset keys (`variant`, `mode`, `dr`), only
//! explicit fields, or a mix; expansion fills every explicit field from the
//! presets and explicit fields always win. Expanding an already-explicit
//! config is a no-op.

use std::path::Path;

use serde::{Deserialize, Serialize};
use swinfree::attention::{Activation, NormKind, WindowMode};
use swinfree::model::{ModelConfig, Variant, NUM_STAGES};
use swinfree::{Error, Result};

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub img_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depths: Option<[usize; NUM_STAGES]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heads: Option<[usize; NUM_STAGES]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_sizes: Option<[usize; NUM_STAGES]>,
    /// Per-stage switch for the alternating shift pattern ("1 means on").
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift: Option<[bool; NUM_STAGES]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub act: Option<String>,
    /// Stage-3 depth override (the DRx knob).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dr: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Resolves a preset name like `swin-B` or `swin-free-B-BR-DR14` into a
    /// config file with the preset keys set.
    pub fn from_preset(name: &str) -> Result<Self> {
        let spec = swinfree::model::parse_preset(name)?;
        let mut cfg = ConfigFile {
            variant: Some(spec.variant.letter().to_string()),
            mode: Some(
                match spec.mode {
                    WindowMode::Shifted => "swin",
                    WindowMode::SizeVarying => "swin-free",
                }
                .into(),
            ),
            ..ConfigFile::default()
        };
        if spec.batch_relu {
            cfg.norm = Some("batch".into());
            cfg.act = Some("relu".into());
        }
        cfg.dr = spec.stage3_depth;
        Ok(cfg)
    }

    /// Fills every explicit field. Preset keys provide defaults; explicit
    /// fields win; `dr` rewrites stage-3 depth unless `depths` was explicit.
    pub fn expand(&self) -> Result<ConfigFile> {
        let variant = match &self.variant {
            Some(v) => Some(
                Variant::parse(v)
                    .ok_or_else(|| Error::config(format!("unknown variant {v:?}")))?,
            ),
            None => None,
        };
        let mode = match self.mode.as_deref() {
            Some("swin") => WindowMode::Shifted,
            Some("swin-free") => WindowMode::SizeVarying,
            Some(other) => {
                return Err(Error::config(format!(
                    "unknown mode {other:?}: expected \"swin\" or \"swin-free\""
                )))
            }
            // Explicit-only configs default to the size-varying layout
            // unless shift flags are requested.
            None => {
                if self.shift.is_some_and(|s| s.iter().any(|&b| b)) {
                    WindowMode::Shifted
                } else {
                    WindowMode::SizeVarying
                }
            }
        };

        let mut depths = self
            .depths
            .or_else(|| variant.map(Variant::depths))
            .ok_or_else(|| Error::config("depths required (directly or via variant)"))?;
        if self.depths.is_none() {
            if let Some(x) = self.dr {
                depths[2] = x;
            }
        }
        let embed_dim = self
            .embed_dim
            .or_else(|| variant.map(Variant::embed_dim))
            .ok_or_else(|| Error::config("embed_dim required (directly or via variant)"))?;
        let heads = self
            .heads
            .or_else(|| variant.map(Variant::heads))
            .ok_or_else(|| Error::config("heads required (directly or via variant)"))?;
        let window_sizes = self.window_sizes.unwrap_or(match mode {
            WindowMode::Shifted => [7; NUM_STAGES],
            WindowMode::SizeVarying => [7, 14, 14, 7],
        });
        let shift = self.shift.unwrap_or(match mode {
            WindowMode::Shifted => [true; NUM_STAGES],
            WindowMode::SizeVarying => [false; NUM_STAGES],
        });

        Ok(ConfigFile {
            variant: self.variant.clone(),
            mode: Some(
                match mode {
                    WindowMode::Shifted => "swin",
                    WindowMode::SizeVarying => "swin-free",
                }
                .into(),
            ),
            img_size: Some(self.img_size.unwrap_or(224)),
            patch_size: Some(self.patch_size.unwrap_or(4)),
            embed_dim: Some(embed_dim),
            depths: Some(depths),
            heads: Some(heads),
            window_sizes: Some(window_sizes),
            shift: Some(shift),
            norm: Some(self.norm.clone().unwrap_or_else(|| "layer".into())),
            act: Some(self.act.clone().unwrap_or_else(|| "gelu".into())),
            dr: self.dr,
            num_classes: Some(self.num_classes.unwrap_or(1000)),
            seed: Some(self.seed.unwrap_or(0)),
        })
    }

    /// Expands and converts into a validated [`ModelConfig`].
    pub fn to_model_config(&self) -> Result<ModelConfig> {
        let full = self.expand()?;
        let norm = match full.norm.as_deref() {
            Some("layer") => NormKind::Layer,
            Some("batch") => NormKind::Batch,
            other => {
                return Err(Error::config(format!(
                    "unknown norm {other:?}: expected \"layer\" or \"batch\""
                )))
            }
        };
        let act = match full.act.as_deref() {
            Some("gelu") => Activation::Gelu,
            Some("relu") => Activation::Relu,
            other => {
                return Err(Error::config(format!(
                    "unknown act {other:?}: expected \"gelu\" or \"relu\""
                )))
            }
        };
        let mode = match full.mode.as_deref() {
            Some("swin") => WindowMode::Shifted,
            _ => WindowMode::SizeVarying,
        };
        let cfg = ModelConfig {
            name: full.display_name(),
            img_size: full.img_size.unwrap(),
            patch_size: full.patch_size.unwrap(),
            embed_dim: full.embed_dim.unwrap(),
            depths: full.depths.unwrap(),
            heads: full.heads.unwrap(),
            window_sizes: full.window_sizes.unwrap(),
            stage_shift: if mode == WindowMode::Shifted {
                full.shift.unwrap()
            } else {
                [false; NUM_STAGES]
            },
            mode,
            norm,
            act,
            num_classes: full.num_classes.unwrap(),
        };
        // Shift flags are rejected, not silently dropped, in swin-free mode.
        if mode == WindowMode::SizeVarying && full.shift.unwrap().iter().any(|&b| b) {
            return Err(Error::config(
                "shift flags are not available in swin-free mode",
            ));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Human-readable name in the preset style when recognizable.
    fn display_name(&self) -> String {
        let mut name = match (self.mode.as_deref(), self.variant.as_deref()) {
            (Some(mode), Some(v)) => format!("{mode}-{}", v.to_uppercase()),
            (Some(mode), None) => format!("{mode}-custom"),
            _ => "custom".into(),
        };
        if self.norm.as_deref() == Some("batch") && self.act.as_deref() == Some("relu") {
            name.push_str("-BR");
        }
        if let Some(x) = self.dr {
            name.push_str(&format!("-DR{x}"));
        }
        name
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_roundtrip_to_model_config() {
        let cfg = ConfigFile::from_preset("swin-free-B-BR-DR14")
            .unwrap()
            .to_model_config()
            .unwrap();
        assert_eq!(cfg.depths, [2, 2, 14, 2]);
        assert_eq!(cfg.window_sizes, [7, 14, 14, 7]);
        assert_eq!(cfg.norm, NormKind::Batch);
        assert_eq!(cfg.act, Activation::Relu);
        assert_eq!(cfg.name, "swin-free-B-BR-DR14");
    }

    #[test]
    fn unknown_presets_are_rejected() {
        assert!(ConfigFile::from_preset("resnet-50").is_err());
        assert!(ConfigFile::from_preset("swin-X").is_err());
        assert!(ConfigFile::from_preset("swin-free-B-DRx").is_err());
        assert!(ConfigFile::from_preset("swin-free-B-XL").is_err());
    }

    #[test]
    fn expansion_is_idempotent() {
        let once = ConfigFile::from_preset("swin-free-S").unwrap().expand().unwrap();
        let twice = once.expand().unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn explicit_fields_win_over_presets() {
        let mut file = ConfigFile::from_preset("swin-B").unwrap();
        file.window_sizes = Some([7, 7, 14, 7]);
        file.shift = Some([false; 4]);
        let cfg = file.to_model_config().unwrap();
        assert_eq!(cfg.window_sizes, [7, 7, 14, 7]);
        assert_eq!(cfg.stage_shift, [false; 4]);
        // Explicit depths beat dr.
        let mut file = ConfigFile::from_preset("swin-free-B-DR10").unwrap();
        file.depths = Some([2, 2, 16, 2]);
        assert_eq!(file.to_model_config().unwrap().depths, [2, 2, 16, 2]);
    }

    #[test]
    fn shift_flags_rejected_in_swin_free() {
        let mut file = ConfigFile::from_preset("swin-free-B").unwrap();
        file.shift = Some([true, false, false, false]);
        assert!(file.to_model_config().is_err());
    }

    #[test]
    fn every_shift_vector_is_expressible() {
        // All eight on/off rows over the four stages.
        for bits in 0..16u32 {
            let shift = [
                bits & 1 != 0,
                bits & 2 != 0,
                bits & 4 != 0,
                bits & 8 != 0,
            ];
            let mut file = ConfigFile::from_preset("swin-B").unwrap();
            file.shift = Some(shift);
            let cfg = file.to_model_config().unwrap();
            assert_eq!(cfg.stage_shift, shift);
        }
    }

    #[test]
    fn every_window_vector_at_224_is_expressible() {
        for w3 in [7usize, 14] {
            for w2 in [7usize, 14] {
                for w1 in [7usize, 14] {
                    let mut file = ConfigFile::from_preset("swin-free-B").unwrap();
                    file.window_sizes = Some([w1, w2, w3, 7]);
                    let cfg = file.to_model_config().unwrap();
                    assert_eq!(cfg.window_sizes, [w1, w2, w3, 7]);
                }
            }
        }
    }
}
