use serde::Serialize;

use super::config::{AdapterKind, ModelConfig};

/// Closed-form trainable parameter counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    pub visual_backbone: usize,
    pub adapters: usize,
    pub fusion: usize,
    pub text: usize,
    /// Batch-norm running statistics; not trainable, not in `total`.
    pub buffers: usize,
}

impl ParamCounts {
    /// What the high-rate pathway adds on top of a frozen backbone:
    /// every adapter plus the output projection.
    pub fn adapter_total(&self) -> usize {
        self.adapters + self.fusion
    }

    pub fn total(&self) -> usize {
        self.visual_backbone + self.adapters + self.fusion + self.text
    }
}

pub fn transformer_block(d: usize) -> usize {
    // two layer norms, qkv, attention output, 4x MLP
    2 * d + (3 * d * d + 3 * d) + (d * d + d) + 2 * d + (4 * d * d + 4 * d) + (4 * d * d + d)
}

/// Trainable scalars in one adapter.
pub fn adapter(cfg: &ModelConfig) -> usize {
    adapter_of(cfg.adapter_kind, cfg.embed_dim, cfg.bottleneck(), cfg.spatial_kernel, cfg.temporal_kernel)
}

pub fn adapter_of(kind: AdapterKind, d: usize, c: usize, k: usize, kt: usize) -> usize {
    let down = d * c + c;
    let up = c * d + d;
    match kind {
        AdapterKind::Standard => down + up,
        AdapterKind::St => down + c * kt + up,
        AdapterKind::Motion => down + (c * c * k * k + c) + 2 * c + c * kt + (c * c + c) + up,
    }
}

pub fn adapter_buffers(cfg: &ModelConfig) -> usize {
    match cfg.adapter_kind {
        AdapterKind::Motion => 2 * cfg.bottleneck(),
        _ => 0,
    }
}

pub fn count_params(cfg: &ModelConfig) -> ParamCounts {
    let d = cfg.embed_dim;
    let patch_in = 3 * cfg.patch_size * cfg.patch_size;
    let visual_backbone = (patch_in * d + d)
        + d
        + cfg.patches_per_frame() * d
        + cfg.frames * d
        + cfg.layers * transformer_block(d)
        + 2 * d;
    let text = cfg.vocab_size * d + cfg.max_text_len * d + cfg.layers * transformer_block(d) + 2 * d + d * d;
    ParamCounts {
        visual_backbone,
        adapters: cfg.layers * adapter(cfg),
        fusion: 2 * d * d,
        text,
        buffers: cfg.layers * adapter_buffers(cfg),
    }
}
