//! Dual-pathway video-text model with motion adapters.

pub mod adapter;
pub mod bpe;
pub mod config;
pub mod count;
pub mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::sample_frame_indices;
use crate::num::Scalar;
use crate::tensor::{BatchStats, BnMode, Graph, Tensor, TensorError, Var};

pub use adapter::{adapter_forward, AdapterVars, BN_EPS, BN_MOMENTUM};
pub use config::{AdapterKind, ModelConfig};
pub use count::{count_params, ParamCounts};
pub use params::{Group, Init, ParamEntry, ParamStore};

pub const LN_EPS: f64 = 1e-5;
const MASK_NEG: f64 = -1e9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("tokenizer: {0}")]
    Tokenizer(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Which pathways receive gradients.
///
/// `low` trains the backbone through the low-rate pathway; `high` trains
/// the adapters and the output projection. The high-rate pathway always
/// sees a detached copy of the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathMask {
    pub low: bool,
    pub high: bool,
}

impl PathMask {
    pub const TRAIN_LOW: PathMask = PathMask { low: true, high: false };
    pub const TRAIN_HIGH: PathMask = PathMask { low: false, high: true };
    pub const COTRAIN: PathMask = PathMask { low: true, high: true };
    pub const INFER: PathMask = PathMask { low: false, high: false };

    /// Whether parameters of `group` are updated under this mask.
    pub fn trains(self, group: Group) -> bool {
        match group {
            Group::Backbone => self.low,
            Group::Adapter | Group::Fusion => self.high,
            Group::Text => self.low || self.high,
            Group::Buffer => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Path {
    Low,
    High,
}

#[derive(Debug, Clone, Copy)]
struct Lin {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct BlockIds {
    ln1: Lin,
    qkv: Lin,
    proj: Lin,
    ln2: Lin,
    fc1: Lin,
    fc2: Lin,
}

#[derive(Debug, Clone)]
struct AdapterIds {
    down: Lin,
    conv: Option<Lin>,
    bn: Option<Lin>,
    running_mean: Option<usize>,
    running_var: Option<usize>,
    tconv: Option<usize>,
    mix: Option<Lin>,
    up: Lin,
}

#[derive(Debug, Clone)]
struct Layout {
    patch: Lin,
    cls: usize,
    pos_spatial: usize,
    pos_temporal: usize,
    vblocks: Vec<BlockIds>,
    vln: Lin,
    adapters: Vec<AdapterIds>,
    w_o: usize,
    tok: usize,
    tpos: usize,
    tblocks: Vec<BlockIds>,
    tln: Lin,
    tproj: usize,
}

struct Builder<'a, S> {
    store: &'a mut ParamStore<S>,
    rng: ChaCha8Rng,
}

impl<S: Scalar> Builder<'_, S> {
    fn p(&mut self, name: &str, shape: &[usize], group: Group, init: Init) -> usize {
        self.store.register(name, shape, group, init, &mut self.rng)
    }

    fn lin(&mut self, name: &str, i: usize, o: usize, group: Group) -> Lin {
        Lin {
            w: self.p(&format!("{name}.w"), &[i, o], group, Init::FanIn(i)),
            b: self.p(&format!("{name}.b"), &[o], group, Init::Zeros),
        }
    }

    fn ln(&mut self, name: &str, d: usize, group: Group) -> Lin {
        Lin {
            w: self.p(&format!("{name}.gamma"), &[d], group, Init::Ones),
            b: self.p(&format!("{name}.beta"), &[d], group, Init::Zeros),
        }
    }

    fn block(&mut self, prefix: &str, d: usize, group: Group) -> BlockIds {
        BlockIds {
            ln1: self.ln(&format!("{prefix}.ln1"), d, group),
            qkv: self.lin(&format!("{prefix}.qkv"), d, 3 * d, group),
            proj: self.lin(&format!("{prefix}.proj"), d, d, group),
            ln2: self.ln(&format!("{prefix}.ln2"), d, group),
            fc1: self.lin(&format!("{prefix}.fc1"), d, 4 * d, group),
            fc2: self.lin(&format!("{prefix}.fc2"), 4 * d, d, group),
        }
    }

    fn adapter(&mut self, i: usize, cfg: &ModelConfig) -> AdapterIds {
        let (d, c, k, kt) = (cfg.embed_dim, cfg.bottleneck(), cfg.spatial_kernel, cfg.temporal_kernel);
        let pre = format!("adapter.{i}");
        let a = Group::Adapter;
        let down = self.lin(&format!("{pre}.down"), d, c, a);
        let motion = cfg.adapter_kind == AdapterKind::Motion;
        let conv = motion.then(|| Lin {
            w: self.p(&format!("{pre}.conv.w"), &[c, c, k, k], a, Init::FanIn(c * k * k)),
            b: self.p(&format!("{pre}.conv.b"), &[c], a, Init::Zeros),
        });
        let bn = motion.then(|| self.ln(&format!("{pre}.bn"), c, a));
        let running_mean = motion.then(|| self.p(&format!("{pre}.bn.running_mean"), &[c], Group::Buffer, Init::Zeros));
        let running_var = motion.then(|| self.p(&format!("{pre}.bn.running_var"), &[c], Group::Buffer, Init::Ones));
        let tconv = (cfg.adapter_kind != AdapterKind::Standard)
            .then(|| self.p(&format!("{pre}.tconv.w"), &[c, kt], a, Init::FanIn(kt)));
        let mix = motion.then(|| self.lin(&format!("{pre}.mix"), c, c, a));
        let up = Lin {
            w: self.p(&format!("{pre}.up.w"), &[c, d], a, Init::Zeros),
            b: self.p(&format!("{pre}.up.b"), &[d], a, Init::Zeros),
        };
        AdapterIds {
            down,
            conv,
            bn,
            running_mean,
            running_var,
            tconv,
            mix,
            up,
        }
    }
}

fn build_layout<S: Scalar>(cfg: &ModelConfig, store: &mut ParamStore<S>, seed: u64) -> Layout {
    let d = cfg.embed_dim;
    let mut b = Builder {
        store,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let bb = Group::Backbone;
    let patch_in = 3 * cfg.patch_size * cfg.patch_size;
    let patch = b.lin("visual.patch", patch_in, d, bb);
    let cls = b.p("visual.cls", &[1, d], bb, Init::Normal(0.02));
    let pos_spatial = b.p("visual.pos_spatial", &[cfg.patches_per_frame(), d], bb, Init::Normal(0.02));
    let pos_temporal = b.p("visual.pos_temporal", &[cfg.frames, d], bb, Init::Normal(0.02));
    let vblocks = (0..cfg.layers).map(|i| b.block(&format!("visual.blocks.{i}"), d, bb)).collect();
    let vln = b.ln("visual.ln_final", d, bb);
    let adapters = (0..cfg.layers).map(|i| b.adapter(i, cfg)).collect();
    let w_o = b.p("fusion.w_o", &[2 * d, d], Group::Fusion, Init::HalfStackedEye);
    let t = Group::Text;
    let tok = b.p("text.token_embedding", &[cfg.vocab_size, d], t, Init::Normal(0.02));
    let tpos = b.p("text.pos", &[cfg.max_text_len, d], t, Init::Normal(0.01));
    let tblocks = (0..cfg.layers).map(|i| b.block(&format!("text.blocks.{i}"), d, t)).collect();
    let tln = b.ln("text.ln_final", d, t);
    let tproj = b.p("text.proj", &[d, d], t, Init::FanIn(d));
    Layout {
        patch,
        cls,
        pos_spatial,
        pos_temporal,
        vblocks,
        vln,
        adapters,
        w_o,
        tok,
        tpos,
        tblocks,
        tln,
        tproj,
    }
}

/// Graph leaves for every trainable parameter, created per forward.
#[derive(Debug, Clone)]
pub struct Bindings {
    vars: Vec<Option<Var>>,
    /// Detached backbone copies for the high-rate pathway, present only
    /// when the low-rate leaves carry gradients.
    detached: Vec<Option<Var>>,
}

impl Bindings {
    /// Bindings over caller-made leaves, one per store entry (`None` for
    /// buffers). No detached copies are made.
    pub fn from_vars(vars: Vec<Option<Var>>) -> Self {
        let n = vars.len();
        Self {
            vars,
            detached: vec![None; n],
        }
    }

    fn get(&self, id: usize, path: Path) -> Var {
        if path == Path::High {
            if let Some(v) = self.detached[id] {
                return v;
            }
        }
        self.vars[id].expect("buffers are never bound")
    }

    /// Leaf of parameter `id` that receives gradients, if any.
    pub fn trainable_leaf(&self, id: usize) -> Option<Var> {
        self.vars[id]
    }
}

/// Video and text embeddings of one clip, each `[1, D]`, unnormalised.
#[derive(Debug, Clone, Copy)]
pub struct DualEmbedding {
    pub e_v: Var,
    pub e_vl: Var,
    pub e_vh: Var,
}

/// Batch statistics recorded by adapter `layer` during a train-mode pass.
#[derive(Debug, Clone)]
pub struct BnRecord<S> {
    pub layer: usize,
    pub stats: BatchStats<S>,
}

#[derive(Debug, Clone)]
pub struct EgoVideo<S> {
    cfg: ModelConfig,
    store: ParamStore<S>,
    layout: Layout,
}

/// `[F, 3, H, W]` frames to `[F * (H/P) * (W/P), 3 * P * P]` patch rows,
/// frame-major then row-major over the patch grid.
pub fn patchify<S: Scalar>(frames: &Tensor<S>, patch: usize) -> Result<Tensor<S>, ModelError> {
    let s = frames.shape();
    if s.len() != 4 || s[1] != 3 || s[2] % patch != 0 || s[3] % patch != 0 {
        return Err(ModelError::Input(format!(
            "frames must be [F, 3, H, W] with H, W multiples of {patch}, got {s:?}"
        )));
    }
    let (f, h, w) = (s[0], s[2], s[3]);
    let (gh, gw) = (h / patch, w / patch);
    let cols = 3 * patch * patch;
    let src = frames.data();
    let mut out = Vec::with_capacity(f * gh * gw * cols);
    for fi in 0..f {
        for pi in 0..gh {
            for pj in 0..gw {
                for c in 0..3 {
                    for u in 0..patch {
                        let row = ((fi * 3 + c) * h + pi * patch + u) * w + pj * patch;
                        out.extend_from_slice(&src[row..row + patch]);
                    }
                }
            }
        }
    }
    Ok(Tensor::new(vec![f * gh * gw, cols], out)?)
}

/// Uniformly samples `n` frames from a `[N, 3, H, W]` video.
pub fn sample_frames<S: Scalar>(video: &Tensor<S>, n: usize) -> Result<Tensor<S>, ModelError> {
    let s = video.shape();
    if s.len() != 4 {
        return Err(ModelError::Input(format!("video must be [N, 3, H, W], got {s:?}")));
    }
    let idx = sample_frame_indices(s[0], n).map_err(|e| ModelError::Input(e.to_string()))?;
    let per: usize = s[1..].iter().product();
    let mut out = Vec::with_capacity(n * per);
    for i in idx {
        out.extend_from_slice(&video.data()[i * per..(i + 1) * per]);
    }
    let mut shape = s.to_vec();
    shape[0] = n;
    Ok(Tensor::new(shape, out)?)
}

fn one_hot<S: Scalar>(rows: usize, cols: usize, col_of: impl Fn(usize) -> usize) -> Tensor<S> {
    let mut t = Tensor::zeros(vec![rows, cols]);
    for r in 0..rows {
        t.data_mut()[r * cols + col_of(r)] = S::one();
    }
    t
}

impl<S: Scalar> EgoVideo<S> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let layout = build_layout(&cfg, &mut store, seed);
        Ok(Self { cfg, store, layout })
    }

    /// Rebuilds a model from stored tensors, checking names and shapes.
    pub fn from_store(cfg: ModelConfig, loaded: &ParamStore<S>) -> Result<Self, ModelError> {
        let mut m = Self::new(cfg, 0)?;
        m.store.load_from(loaded)?;
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    /// Creates graph leaves for all parameters under `mask`.
    pub fn bind(&self, g: &mut Graph<S>, mask: PathMask) -> Bindings {
        let n = self.store.len();
        let mut vars = vec![None; n];
        let mut detached = vec![None; n];
        for (i, e) in self.store.entries().iter().enumerate() {
            if !e.group.trainable() {
                continue;
            }
            let trains = mask.trains(e.group);
            vars[i] = Some(g.leaf(e.value.clone(), trains));
            if e.group == Group::Backbone && trains {
                detached[i] = Some(g.constant(e.value.clone()));
            }
        }
        Bindings { vars, detached }
    }

    fn block(&self, g: &mut Graph<S>, b: &Bindings, path: Path, ids: &BlockIds, x: Var, mask: Option<Var>) -> Result<Var, ModelError> {
        let d = self.cfg.embed_dim;
        let heads = self.cfg.heads;
        let dh = d / heads;
        let v = |id| b.get(id, path);
        let h = g.layernorm(x, v(ids.ln1.w), v(ids.ln1.b), S::of(LN_EPS))?;
        let qkv = g.linear(h, v(ids.qkv.w), v(ids.qkv.b))?;
        let scale = S::of(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let q = g.slice(qkv, 1, hd * dh, (hd + 1) * dh)?;
            let k = g.slice(qkv, 1, d + hd * dh, d + (hd + 1) * dh)?;
            let val = g.slice(qkv, 1, 2 * d + hd * dh, 2 * d + (hd + 1) * dh)?;
            let kt = g.transpose(k)?;
            let s = g.matmul(q, kt)?;
            let mut s = g.scale(s, scale);
            if let Some(m) = mask {
                s = g.add(s, m)?;
            }
            let a = g.softmax(s, 1)?;
            outs.push(g.matmul(a, val)?);
        }
        let att = if heads == 1 { outs[0] } else { g.concat(&outs, 1)? };
        let att = g.linear(att, v(ids.proj.w), v(ids.proj.b))?;
        let x = g.add(x, att)?;
        let h = g.layernorm(x, v(ids.ln2.w), v(ids.ln2.b), S::of(LN_EPS))?;
        let h = g.linear(h, v(ids.fc1.w), v(ids.fc1.b))?;
        let h = g.gelu(h);
        let h = g.linear(h, v(ids.fc2.w), v(ids.fc2.b))?;
        Ok(g.add(x, h)?)
    }

    fn adapter_vars(&self, b: &Bindings, ids: &AdapterIds) -> AdapterVars {
        let v = |id| b.get(id, Path::High);
        AdapterVars {
            down_w: v(ids.down.w),
            down_b: v(ids.down.b),
            conv_w: ids.conv.map(|l| v(l.w)),
            conv_b: ids.conv.map(|l| v(l.b)),
            bn_gamma: ids.bn.map(|l| v(l.w)),
            bn_beta: ids.bn.map(|l| v(l.b)),
            tconv_w: ids.tconv.map(v),
            mix_w: ids.mix.map(|l| v(l.w)),
            mix_b: ids.mix.map(|l| v(l.b)),
            up_w: v(ids.up.w),
            up_b: v(ids.up.b),
        }
    }

    /// Class-token embedding `[1, D]` of `frames: [F, 3, H, W]`.
    ///
    /// The low-rate pathway expects `frames` frames and skips adapters. The
    /// high-rate pathway expects `upsample * frames` frames, maps frame `f`
    /// to temporal position `f / upsample`, and applies an adapter after
    /// every block. `training` selects batch statistics for batch norm;
    /// their values are appended to `bn_out`.
    pub fn encode_visual(
        &self,
        g: &mut Graph<S>,
        b: &Bindings,
        path: Path,
        frames: &Tensor<S>,
        training: bool,
        bn_out: &mut Vec<BnRecord<S>>,
    ) -> Result<Var, ModelError> {
        self.visual(g, b, path, frames, training, bn_out, path == Path::High)
    }

    /// The high-rate pathway with every adapter skipped.
    pub fn encode_high_unadapted(
        &self,
        g: &mut Graph<S>,
        b: &Bindings,
        frames: &Tensor<S>,
    ) -> Result<Var, ModelError> {
        self.visual(g, b, Path::High, frames, false, &mut Vec::new(), false)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn visual(
        &self,
        g: &mut Graph<S>,
        b: &Bindings,
        path: Path,
        frames: &Tensor<S>,
        training: bool,
        bn_out: &mut Vec<BnRecord<S>>,
        with_adapters: bool,
    ) -> Result<Var, ModelError> {
        let cfg = &self.cfg;
        let (nf, stride) = match path {
            Path::Low => (cfg.frames, 1),
            Path::High => (cfg.high_frames(), cfg.upsample),
        };
        let s = frames.shape();
        if s.len() != 4 || s[0] != nf || s[1] != 3 || s[2] != cfg.image_size || s[3] != cfg.image_size {
            return Err(ModelError::Input(format!(
                "expected frames [{nf}, 3, {0}, {0}], got {s:?}",
                cfg.image_size
            )));
        }
        let l = &self.layout;
        let v = |id| b.get(id, path);
        let hw = cfg.patches_per_frame();
        let rows = nf * hw;
        let patches = g.constant(patchify(frames, cfg.patch_size)?);
        let x = g.linear(patches, v(l.patch.w), v(l.patch.b))?;
        let rs = g.constant(one_hot(rows, hw, |r| r % hw));
        let rt = g.constant(one_hot(rows, cfg.frames, |r| (r / hw) / stride));
        let ps = g.matmul(rs, v(l.pos_spatial))?;
        let pt = g.matmul(rt, v(l.pos_temporal))?;
        let x = g.add(x, ps)?;
        let x = g.add(x, pt)?;
        let mut x = g.concat(&[v(l.cls), x], 0)?;
        for (i, blk) in l.vblocks.iter().enumerate() {
            x = self.block(g, b, path, blk, x, None)?;
            if with_adapters {
                let ids = &l.adapters[i];
                let av = self.adapter_vars(b, ids);
                let running = ids.running_mean.zip(ids.running_var);
                let bn = match (training, running) {
                    (false, Some((m, rv))) => BnMode::Eval {
                        mean: self.store.value(m).data(),
                        var: self.store.value(rv).data(),
                    },
                    _ => BnMode::Train,
                };
                let (y, stats) = adapter_forward(g, cfg.adapter_kind, x, &av, nf, cfg.grid(), bn)?;
                if let Some(stats) = stats {
                    bn_out.push(BnRecord { layer: i, stats });
                }
                x = y;
            }
        }
        let x = g.layernorm(x, v(l.vln.w), v(l.vln.b), S::of(LN_EPS))?;
        Ok(g.slice(x, 0, 0, 1)?)
    }

    /// Both pathways and the fused embedding `[E_vl, E_vh] W_o`.
    pub fn encode_video(
        &self,
        g: &mut Graph<S>,
        b: &Bindings,
        low: &Tensor<S>,
        high: &Tensor<S>,
        training: bool,
        bn_out: &mut Vec<BnRecord<S>>,
    ) -> Result<DualEmbedding, ModelError> {
        let e_vl = self.encode_visual(g, b, Path::Low, low, training, bn_out)?;
        let e_vh = self.encode_visual(g, b, Path::High, high, training, bn_out)?;
        let cat = g.concat(&[e_vl, e_vh], 1)?;
        let e_v = g.matmul(cat, b.get(self.layout.w_o, Path::High))?;
        Ok(DualEmbedding { e_v, e_vl, e_vh })
    }

    /// Embedding `[1, D]` read at the first end-of-sequence token. Anything
    /// after it (padding) cannot reach that position through the causal mask.
    pub fn encode_text(&self, g: &mut Graph<S>, b: &Bindings, ids: &[u32]) -> Result<Var, ModelError> {
        let cfg = &self.cfg;
        let n = ids.len();
        if n == 0 || n > cfg.max_text_len {
            return Err(ModelError::Input(format!(
                "token sequence length {n} outside 1..={}",
                cfg.max_text_len
            )));
        }
        if let Some(bad) = ids.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(ModelError::Input(format!("token id {bad} >= vocab {}", cfg.vocab_size)));
        }
        let eos = ids
            .iter()
            .position(|&t| t == bpe::EOS)
            .ok_or_else(|| ModelError::Tokenizer("token sequence has no EOS".into()))?;
        let l = &self.layout;
        let v = |id| b.get(id, Path::Low);
        let oh = g.constant(one_hot(n, cfg.vocab_size, |r| ids[r] as usize));
        let x = g.matmul(oh, v(l.tok))?;
        let pos = g.slice(v(l.tpos), 0, 0, n)?;
        let mut x = g.add(x, pos)?;
        let mut mask = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            for j in i + 1..n {
                mask.data_mut()[i * n + j] = S::of(MASK_NEG);
            }
        }
        let mask = g.constant(mask);
        for blk in &l.tblocks {
            x = self.block(g, b, Path::Low, blk, x, Some(mask))?;
        }
        let x = g.layernorm(x, v(l.tln.w), v(l.tln.b), S::of(LN_EPS))?;
        let row = g.slice(x, 0, eos, eos + 1)?;
        Ok(g.matmul(row, v(l.tproj))?)
    }

    /// Low- and high-rate frame tensors sampled from a full video.
    pub fn sample_inputs(&self, video: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>), ModelError> {
        Ok((
            sample_frames(video, self.cfg.frames)?,
            sample_frames(video, self.cfg.high_frames())?,
        ))
    }

    /// Inference embedding `[D]` of a clip: eval-mode batch norm, no
    /// gradients.
    pub fn embed_video(&self, low: &Tensor<S>, high: &Tensor<S>) -> Result<Vec<S>, ModelError> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, PathMask::INFER);
        let e = self.encode_video(&mut g, &b, low, high, false, &mut Vec::new())?;
        Ok(g.value(e.e_v).data().to_vec())
    }

    pub fn embed_text(&self, ids: &[u32]) -> Result<Vec<S>, ModelError> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, PathMask::INFER);
        let e = self.encode_text(&mut g, &b, ids)?;
        Ok(g.value(e).data().to_vec())
    }

    /// Folds train-mode batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, records: &[BnRecord<S>]) {
        for r in records {
            let ids = &self.layout.adapters[r.layer];
            if let (Some(m), Some(v)) = (ids.running_mean, ids.running_var) {
                let mut mean = self.store.value(m).data().to_vec();
                let mut var = self.store.value(v).data().to_vec();
                r.stats.update_running(&mut mean, &mut var, S::of(BN_MOMENTUM));
                self.store.value_mut(m).data_mut().copy_from_slice(&mean);
                self.store.value_mut(v).data_mut().copy_from_slice(&var);
            }
        }
    }

    /// Trainable parameter count actually held, by group.
    pub fn instantiated_counts(&self) -> ParamCounts {
        let c = self.store.count_by_group();
        let get = |g| c.get(&g).copied().unwrap_or(0);
        ParamCounts {
            visual_backbone: get(Group::Backbone),
            adapters: get(Group::Adapter),
            fusion: get(Group::Fusion),
            text: get(Group::Text),
            buffers: get(Group::Buffer),
        }
    }
}

/// Adapter and fusion tensors alone, as a model of the given size would
/// hold them. Used to check parameter accounting at sizes where building
/// the full model is wasteful.
pub fn instantiate_adapters<S: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<S>, ModelError> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let mut b = Builder {
        store: &mut store,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    for i in 0..cfg.layers {
        b.adapter(i, cfg);
    }
    b.p("fusion.w_o", &[2 * cfg.embed_dim, cfg.embed_dim], Group::Fusion, Init::HalfStackedEye);
    Ok(store)
}
