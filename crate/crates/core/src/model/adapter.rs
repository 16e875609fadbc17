use super::config::AdapterKind;
use super::ModelError;
use crate::num::Scalar;
use crate::tensor::{BatchStats, BnMode, Graph, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Graph handles of one adapter's parameters. Fields a kind does not use
/// stay `None`.
#[derive(Debug, Clone, Copy)]
pub struct AdapterVars {
    pub down_w: Var,
    pub down_b: Var,
    pub conv_w: Option<Var>,
    pub conv_b: Option<Var>,
    pub bn_gamma: Option<Var>,
    pub bn_beta: Option<Var>,
    pub tconv_w: Option<Var>,
    pub mix_w: Option<Var>,
    pub mix_b: Option<Var>,
    pub up_w: Var,
    pub up_b: Var,
}

fn need(v: Option<Var>, what: &str) -> Result<Var, ModelError> {
    v.ok_or_else(|| ModelError::Config(format!("adapter is missing {what}")))
}

/// Applies one adapter to `y: [1 + frames * grid^2, D]` (class row first)
/// and returns `y + delta`.
///
/// The convolutional kinds only see patch tokens; the class row enters the
/// final projections as a zero row, so with zero-initialised `up` weights
/// the adapter is the identity.
pub fn adapter_forward<S: Scalar>(
    g: &mut Graph<S>,
    kind: AdapterKind,
    y: Var,
    p: &AdapterVars,
    frames: usize,
    grid: usize,
    bn: BnMode<'_, S>,
) -> Result<(Var, Option<BatchStats<S>>), ModelError> {
    let shape = g.shape(y).to_vec();
    let tokens = frames * grid * grid;
    if shape.len() != 2 || shape[0] != tokens + 1 {
        return Err(ModelError::Input(format!(
            "adapter expects [{}, D] tokens, got {shape:?}",
            tokens + 1
        )));
    }
    let d = shape[1];
    let mut stats = None;
    let delta = match kind {
        AdapterKind::Standard => {
            let h = g.linear(y, p.down_w, p.down_b)?;
            let h = g.gelu(h);
            g.linear(h, p.up_w, p.up_b)?
        }
        AdapterKind::St | AdapterKind::Motion => {
            let patches = g.slice(y, 0, 1, tokens + 1)?;
            let h = g.linear(patches, p.down_w, p.down_b)?;
            let h = g.gelu(h);
            let c = g.shape(h)[1];
            let st = if kind == AdapterKind::Motion {
                // [T*HW, C] -> [T, C, H, W]
                let x = g.reshape(h, &[frames, grid, grid, c])?;
                let x = g.permute(x, &[0, 3, 1, 2])?;
                let x = g.conv2d(x, need(p.conv_w, "conv_w")?, need(p.conv_b, "conv_b")?)?;
                let (x, s) = g.batchnorm2d(x, need(p.bn_gamma, "bn_gamma")?, need(p.bn_beta, "bn_beta")?, bn, S::of(BN_EPS))?;
                stats = s;
                let x = g.relu(x);
                // [T, C, H, W] -> [HW, C, T]
                let x = g.permute(x, &[2, 3, 1, 0])?;
                let x = g.reshape(x, &[grid * grid, c, frames])?;
                let x = g.tconv1d_dw(x, need(p.tconv_w, "tconv_w")?)?;
                let x = g.permute(x, &[2, 0, 1])?;
                g.reshape(x, &[tokens, c])?
            } else {
                let x = g.reshape(h, &[frames, grid * grid, c])?;
                let x = g.permute(x, &[1, 2, 0])?;
                let x = g.tconv1d_dw(x, need(p.tconv_w, "tconv_w")?)?;
                let x = g.permute(x, &[2, 0, 1])?;
                g.reshape(x, &[tokens, c])?
            };
            let zero = g.constant(crate::tensor::Tensor::zeros(vec![1, c]));
            let st = g.concat(&[zero, st], 0)?;
            let st = if kind == AdapterKind::Motion {
                g.linear(st, need(p.mix_w, "mix_w")?, need(p.mix_b, "mix_b")?)?
            } else {
                st
            };
            g.linear(st, p.up_w, p.up_b)?
        }
    };
    debug_assert_eq!(g.shape(delta), [tokens + 1, d]);
    Ok((g.add(y, delta)?, stats))
}
