use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder hyper-parameters plus pixel normalization.
///
/// Defaults describe a pre-norm ViT-B/16 with a CLS token and ImageNet
/// normalization. Files are TOML key-value tables; any omitted key keeps its
/// default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViTConfig {
    pub patch_size: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub width: usize,
    pub mlp_ratio: usize,
    pub image_size: usize,
    pub uses_cls_token: bool,
    pub layer_norm_eps: f32,
    pub pixel_mean: [f32; 3],
    pub pixel_std: [f32; 3],
}

impl Default for ViTConfig {
    fn default() -> Self {
        Self::vit_b(16)
    }
}

impl ViTConfig {
    pub fn vit_b(patch_size: usize) -> Self {
        Self {
            patch_size,
            n_layers: 12,
            n_heads: 12,
            width: 768,
            mlp_ratio: 4,
            image_size: 224,
            uses_cls_token: true,
            layer_norm_eps: 1e-6,
            pixel_mean: [0.485, 0.456, 0.406],
            pixel_std: [0.229, 0.224, 0.225],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return bad(format!(
                "patch_size {} must divide image_size {}",
                self.patch_size, self.image_size
            ));
        }
        if self.n_layers == 0 || self.n_heads == 0 || self.width == 0 || self.mlp_ratio == 0 {
            return bad("n_layers, n_heads, width and mlp_ratio must be positive".into());
        }
        if self.width % self.n_heads != 0 {
            return bad(format!("width {} is not divisible by n_heads {}", self.width, self.n_heads));
        }
        if !(self.layer_norm_eps > 0.0) || !self.layer_norm_eps.is_finite() {
            return bad("layer_norm_eps must be positive and finite".into());
        }
        if self.pixel_std.iter().any(|s| !(*s > 0.0)) {
            return bad("pixel_std entries must be positive".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn n_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Index of the first patch token.
    pub fn patch_offset(&self) -> usize {
        usize::from(self.uses_cls_token)
    }

    pub fn tokens(&self) -> usize {
        self.n_patches() + self.patch_offset()
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.n_heads
    }

    pub fn hidden(&self) -> usize {
        self.width * self.mlp_ratio
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::InvalidParam(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_counts() {
        assert_eq!(ViTConfig::vit_b(16).tokens(), 197);
        assert_eq!(ViTConfig::vit_b(32).tokens(), 50);
        assert_eq!(ViTConfig::vit_b(14).tokens(), 257);
        let no_cls = ViTConfig {
            uses_cls_token: false,
            ..ViTConfig::vit_b(32)
        };
        assert_eq!(no_cls.tokens(), 49);
        assert_eq!(no_cls.head_dim(), 64);
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = ViTConfig::vit_b(32);
        assert_eq!(ViTConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
        let p = ViTConfig::from_toml_str("patch_size = 32\nuses_cls_token = false").unwrap();
        assert_eq!(p.patch_size, 32);
        assert_eq!(p.width, 768);
    }

    #[test]
    fn rejects_inconsistent_configs() {
        assert!(ViTConfig::from_toml_str("patch_size = 15").is_err());
        assert!(ViTConfig::from_toml_str("n_heads = 5").is_err());
        assert!(ViTConfig::from_toml_str("colour = 1").is_err());
    }
}
