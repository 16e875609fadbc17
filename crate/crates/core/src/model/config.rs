use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    /// Down-projection, GELU, up-projection.
    Standard,
    /// Standard plus a depthwise temporal convolution.
    St,
    /// Spatial conv + batch norm + depthwise temporal conv + mixing projection.
    Motion,
}

impl std::str::FromStr for AdapterKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(AdapterKind::Standard),
            "st" => Ok(AdapterKind::St),
            "motion" => Ok(AdapterKind::Motion),
            other => Err(ModelError::Config(format!("unknown adapter kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Transformer depth, shared by the visual and text encoders.
    pub layers: usize,
    pub heads: usize,
    pub patch_size: usize,
    pub image_size: usize,
    /// Frames on the low-rate path.
    pub frames: usize,
    /// High-rate path sees `upsample * frames` frames.
    pub upsample: usize,
    /// Adapter bottleneck width as a fraction of `embed_dim`.
    pub adapter_ratio: f64,
    pub spatial_kernel: usize,
    pub temporal_kernel: usize,
    pub vocab_size: usize,
    pub max_text_len: usize,
    pub adapter_kind: AdapterKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            layers: 2,
            heads: 2,
            patch_size: 8,
            image_size: 16,
            frames: 4,
            upsample: 4,
            adapter_ratio: 0.5,
            spatial_kernel: 3,
            temporal_kernel: 3,
            vocab_size: 128,
            max_text_len: 24,
            adapter_kind: AdapterKind::Motion,
        }
    }
}

impl ModelConfig {
    /// ViT-B sized visual side used for parameter accounting.
    pub fn vit_base(kind: AdapterKind) -> Self {
        Self {
            embed_dim: 768,
            layers: 12,
            heads: 12,
            patch_size: 16,
            image_size: 224,
            frames: 4,
            upsample: 4,
            adapter_ratio: 0.5,
            spatial_kernel: 3,
            temporal_kernel: 3,
            vocab_size: 49408,
            max_text_len: 77,
            adapter_kind: kind,
        }
    }

    pub fn bottleneck(&self) -> usize {
        (self.adapter_ratio * self.embed_dim as f64).round() as usize
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn patches_per_frame(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn high_frames(&self) -> usize {
        self.frames * self.upsample
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.embed_dim == 0 || self.layers == 0 || self.heads == 0 {
            return bad("embed_dim, layers and heads must be positive".into());
        }
        if self.embed_dim % self.heads != 0 {
            return bad(format!("embed_dim {} not divisible by heads {}", self.embed_dim, self.heads));
        }
        let c = self.adapter_ratio * self.embed_dim as f64;
        if !(self.adapter_ratio > 0.0) || (c - c.round()).abs() > 1e-9 || c.round() < 1.0 {
            return bad(format!(
                "adapter_ratio * embed_dim = {c} must be a positive integer"
            ));
        }
        if self.spatial_kernel % 2 == 0 || self.temporal_kernel % 2 == 0 {
            return bad("spatial and temporal kernels must be odd".into());
        }
        if self.upsample < 1 || self.frames < 1 {
            return bad("frames and upsample must be at least 1".into());
        }
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 || self.image_size == 0 {
            return bad(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.vocab_size < 5 || self.max_text_len < 2 {
            return bad("vocab_size must be at least 5 and max_text_len at least 2".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig::vit_base(AdapterKind::Motion).validate().is_ok());
        let mut c = ModelConfig::default();
        c.adapter_ratio = 0.3;
        c.embed_dim = 8;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.spatial_kernel = 2;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.image_size = 20;
        assert!(c.validate().is_err());
        assert!("bogus".parse::<AdapterKind>().is_err());
        assert_eq!("Motion".parse::<AdapterKind>().unwrap(), AdapterKind::Motion);
    }
}
