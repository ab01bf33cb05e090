//! The denoiser: PointNet patch encoder, MLP positional embedding, time
//! token, token assembly, pre-norm transformer blocks with stochastic depth,
//! and a per-patch linear projection back to point coordinates.
//!
//! Token layout is `[time, image, patch_1 .. patch_s]`.

use crate::diffusion::Denoiser;
use crate::error::{contract, Result};
use crate::geometry::sampling::{build_patches, PatchSet};
use crate::{ParamStore, PointCloud, Scalar, SeededRng, Tape, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    /// Number of patches `s`.
    pub groups: usize,
    /// Points per patch `k`.
    pub group_size: usize,
    pub drop_path_rate: f64,
    pub use_positional_embedding: bool,
    /// Adds each patch center to its projected offsets.
    pub add_centers: bool,
    /// PointNet widths: first MLP `3 → h1 → h2`, second `2·h2 → h3 → embed_dim`.
    pub pointnet_dims: [usize; 3],
    pub pos_hidden: usize,
    pub mlp_ratio: usize,
}

impl BackboneConfig {
    pub fn n_points(&self) -> usize {
        self.groups * self.group_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(contract(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.groups == 0 || self.group_size == 0 {
            return Err(contract("groups and group_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.drop_path_rate) {
            return Err(contract(format!(
                "drop_path_rate {} outside [0, 1)",
                self.drop_path_rate
            )));
        }
        if self.pointnet_dims.contains(&0) || self.pos_hidden == 0 || self.mlp_ratio == 0 {
            return Err(contract("hidden widths must be positive"));
        }
        Ok(())
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.embed_dim;
        let [h1, h2, h3] = self.pointnet_dims;
        let mut v = Vec::new();
        linear_shapes(&mut v, "patch.l1", 3, h1);
        linear_shapes(&mut v, "patch.l2", h1, h2);
        linear_shapes(&mut v, "patch.l3", 2 * h2, h3);
        linear_shapes(&mut v, "patch.l4", h3, d);
        linear_shapes(&mut v, "pos.l1", 3, self.pos_hidden);
        linear_shapes(&mut v, "pos.l2", self.pos_hidden, d);
        v.push(("pos.time".into(), vec![1, d]));
        v.push(("pos.image".into(), vec![1, d]));
        linear_shapes(&mut v, "time.l1", d, d);
        linear_shapes(&mut v, "time.l2", d, d);
        transformer_shapes(&mut v, "blocks", d, self.depth, self.mlp_ratio);
        norm_shapes(&mut v, "head.norm", d);
        linear_shapes(&mut v, "head.proj", d, self.group_size * 3);
        v
    }

    fn transformer(&self) -> TransformerSpec<'static> {
        TransformerSpec {
            prefix: "blocks",
            depth: self.depth,
            heads: self.num_heads,
            drop_path_rate: self.drop_path_rate,
            norm_prefix: "head.norm",
        }
    }
}

pub(crate) fn linear_shapes(v: &mut Vec<(String, Vec<usize>)>, prefix: &str, input: usize, output: usize) {
    v.push((format!("{prefix}.w"), vec![input, output]));
    v.push((format!("{prefix}.b"), vec![output]));
}

pub(crate) fn norm_shapes(v: &mut Vec<(String, Vec<usize>)>, prefix: &str, d: usize) {
    v.push((format!("{prefix}.gamma"), vec![d]));
    v.push((format!("{prefix}.beta"), vec![d]));
}

pub(crate) fn transformer_shapes(
    v: &mut Vec<(String, Vec<usize>)>,
    prefix: &str,
    d: usize,
    depth: usize,
    ratio: usize,
) {
    for i in 0..depth {
        let p = format!("{prefix}.{i}");
        norm_shapes(v, &format!("{p}.ln1"), d);
        linear_shapes(v, &format!("{p}.attn.qkv"), d, 3 * d);
        linear_shapes(v, &format!("{p}.attn.proj"), d, d);
        norm_shapes(v, &format!("{p}.ln2"), d);
        linear_shapes(v, &format!("{p}.mlp.fc1"), d, ratio * d);
        linear_shapes(v, &format!("{p}.mlp.fc2"), ratio * d, d);
    }
}

/// Initializes parameters from their shapes. Linear weights (`*.w`) are
/// `N(0, 1/fan_in)`, biases and norm shifts zero, norm scales one, and free
/// embedding vectors `N(0, 0.02²)`.
pub fn init_params<T: Scalar>(shapes: &[(String, Vec<usize>)], rng: &mut SeededRng) -> Result<ParamStore<T>> {
    let mut store = ParamStore::new();
    for (name, shape) in shapes {
        let n: usize = shape.iter().product();
        let data: Vec<T> = if name.ends_with(".w") {
            let std = (1.0 / shape[0] as f64).sqrt();
            (0..n).map(|_| T::of(rng.normal() * std)).collect()
        } else if name.ends_with(".b") || name.ends_with(".beta") {
            vec![T::zero(); n]
        } else if name.ends_with(".gamma") {
            vec![T::one(); n]
        } else {
            (0..n).map(|_| T::of(rng.normal() * 0.02)).collect()
        };
        store.insert(name.clone(), Tensor::new(shape, data)?)?;
    }
    Ok(store)
}

/// One transformer stack: `depth` pre-norm blocks followed by a final norm.
#[derive(Clone, Copy, Debug)]
pub struct TransformerSpec<'a> {
    pub prefix: &'a str,
    pub depth: usize,
    pub heads: usize,
    pub drop_path_rate: f64,
    pub norm_prefix: &'a str,
}

fn layer_norm<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, prefix: &str) -> Result<Var> {
    let g = tape.param(store, &format!("{prefix}.gamma"))?;
    let b = tape.param(store, &format!("{prefix}.beta"))?;
    tape.layer_norm(x, g, b, T::of(LN_EPS))
}

/// Multi-head self-attention over all rows of `x` (no mask).
pub fn self_attention<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    prefix: &str,
    heads: usize,
) -> Result<Var> {
    let d = tape.shape(x)[1];
    if !d.is_multiple_of(heads) {
        return Err(contract(format!("width {d} not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let qkv = tape.linear(store, x, &format!("{prefix}.qkv"))?;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = tape.slice_cols(qkv, h * dh, dh)?;
        let k = tape.slice_cols(qkv, d + h * dh, dh)?;
        let v = tape.slice_cols(qkv, 2 * d + h * dh, dh)?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, scale);
        let attn = tape.softmax(scores, 1)?;
        outs.push(tape.matmul(attn, v)?);
    }
    let merged = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    tape.linear(store, merged, &format!("{prefix}.proj"))
}

/// Stochastic depth on a residual branch: in training the whole branch is
/// dropped with probability `rate`, otherwise rescaled by `1/(1−rate)`.
fn drop_path<T: Scalar>(tape: &mut Tape<T>, branch: Var, rate: f64, train: bool, rng: &mut SeededRng) -> Var {
    if !train || rate <= 0.0 {
        return branch;
    }
    if rng.uniform() < rate {
        tape.scale(branch, T::zero())
    } else {
        tape.scale(branch, T::of(1.0 / (1.0 - rate)))
    }
}

/// Runs `x ← x + DropPath(MHSA(LN(x)))`, `x ← x + DropPath(MLP(LN(x)))` for
/// each block, then the final norm. Drop rates rise linearly from 0 at the
/// first block to `drop_path_rate` at the last.
pub fn transformer_forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    mut x: Var,
    spec: TransformerSpec<'_>,
    train: bool,
    rng: &mut SeededRng,
) -> Result<Var> {
    for i in 0..spec.depth {
        let rate = if spec.depth > 1 {
            spec.drop_path_rate * i as f64 / (spec.depth - 1) as f64
        } else {
            0.0
        };
        let p = format!("{}.{i}", spec.prefix);
        let h = layer_norm(tape, store, x, &format!("{p}.ln1"))?;
        let h = self_attention(tape, store, h, &format!("{p}.attn"), spec.heads)?;
        let h = drop_path(tape, h, rate, train, rng);
        x = tape.add(x, h)?;

        let h = layer_norm(tape, store, x, &format!("{p}.ln2"))?;
        let h = tape.linear(store, h, &format!("{p}.mlp.fc1"))?;
        let h = tape.gelu(h);
        let h = tape.linear(store, h, &format!("{p}.mlp.fc2"))?;
        let h = drop_path(tape, h, rate, train, rng);
        x = tape.add(x, h)?;
    }
    layer_norm(tape, store, x, spec.norm_prefix)
}

/// Mini-PointNet over each patch: shared MLP, max-pool, concatenation of the
/// pooled feature with every point feature, second shared MLP, max-pool.
/// Returns `[s, embed_dim]`.
pub fn encode_patches<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, patches: &PatchSet<T>) -> Result<Var> {
    let (s, k) = (patches.s, patches.k);
    if patches.groups.len() != s * k {
        return Err(contract(format!(
            "patch set holds {} points, expected {s}×{k}",
            patches.groups.len()
        )));
    }
    let pts = tape.constant(Tensor::new(&[s * k, 3], patches.groups_flat())?);
    let h = tape.linear(store, pts, "patch.l1")?;
    let h = tape.gelu(h);
    let feat = tape.linear(store, h, "patch.l2")?;
    let pooled = tape.group_max(feat, k)?;
    let pooled = tape.repeat_rows(pooled, k)?;
    let h = tape.concat_cols(&[pooled, feat])?;
    let h = tape.linear(store, h, "patch.l3")?;
    let h = tape.gelu(h);
    let h = tape.linear(store, h, "patch.l4")?;
    tape.group_max(h, k)
}

/// MLP embedding of absolute patch centers, `[s, embed_dim]`; exact zeros
/// when positional embedding is disabled.
pub fn positional_embed<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cfg: &BackboneConfig,
    centers: &[[T; 3]],
) -> Result<Var> {
    if !cfg.use_positional_embedding {
        return Ok(tape.constant(Tensor::zeros(&[centers.len(), cfg.embed_dim])));
    }
    let c = tape.constant(Tensor::new(&[centers.len(), 3], centers.as_flattened().to_vec())?);
    let h = tape.linear(store, c, "pos.l1")?;
    let h = tape.gelu(h);
    tape.linear(store, h, "pos.l2")
}

/// Sinusoidal encoding of `t`: entry `i < d/2` is `sin(t·ω_i)`, entry
/// `d/2 + i` is `cos(t·ω_i)`, with `ω_i = 10000^(−2i/d)`.
pub fn sinusoidal<T: Scalar>(t: usize, d: usize) -> Vec<T> {
    let half = d / 2;
    let mut out = vec![T::zero(); d];
    for i in 0..half {
        let freq = 10000f64.powf(-2.0 * i as f64 / d as f64);
        let arg = t as f64 * freq;
        out[i] = T::of(arg.sin());
        out[half + i] = T::of(arg.cos());
    }
    out
}

/// Sinusoidal step encoding passed through a two-layer GELU MLP, `[1, d]`.
pub fn time_token<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, cfg: &BackboneConfig, t: usize) -> Result<Var> {
    if t == 0 {
        return Err(contract("diffusion step must be ≥ 1"));
    }
    let d = cfg.embed_dim;
    let x = tape.constant(Tensor::new(&[1, d], sinusoidal(t, d))?);
    let h = tape.linear(store, x, "time.l1")?;
    let h = tape.gelu(h);
    tape.linear(store, h, "time.l2")
}

/// Positional rows for the whole sequence: learned time and image vectors
/// followed by the patch-center embeddings. `None` when disabled.
pub fn sequence_positions<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cfg: &BackboneConfig,
    patch_pos: Var,
) -> Result<Option<Var>> {
    if !cfg.use_positional_embedding {
        return Ok(None);
    }
    let pt = tape.param(store, "pos.time")?;
    let pi = tape.param(store, "pos.image")?;
    Ok(Some(tape.concat_rows(&[pt, pi, patch_pos])?))
}

/// `[time, image, patches…]`, plus positional rows when given.
pub fn assemble_tokens<T: Scalar>(
    tape: &mut Tape<T>,
    time_tok: Var,
    image_emb: Var,
    patch_toks: Var,
    pos: Option<Var>,
) -> Result<Var> {
    let d = tape.shape(patch_toks)[1];
    for v in [time_tok, image_emb] {
        if tape.shape(v) != [1, d] {
            return Err(crate::Error::Shape {
                op: "assemble_tokens",
                lhs: tape.shape(v).to_vec(),
                rhs: vec![1, d],
            });
        }
    }
    let seq = tape.concat_rows(&[time_tok, image_emb, patch_toks])?;
    match pos {
        Some(p) => tape.add(seq, p),
        None => Ok(seq),
    }
}

/// Per-patch linear map `embed_dim → k·3`, reshaped to `[s·k, 3]`; the time
/// and image outputs are dropped.
pub fn project_output<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cfg: &BackboneConfig,
    seq_out: Var,
    centers: Option<&[[T; 3]]>,
) -> Result<Var> {
    let (s, k) = (cfg.groups, cfg.group_size);
    let patch_out = tape.slice_rows(seq_out, 2, s)?;
    let y = tape.linear(store, patch_out, "head.proj")?;
    let y = tape.reshape(y, &[s * k, 3])?;
    match centers {
        Some(c) if cfg.add_centers => {
            let mut offs = Vec::with_capacity(s * k * 3);
            for p in c {
                for _ in 0..k {
                    offs.extend_from_slice(p);
                }
            }
            let offs = tape.constant(Tensor::new(&[s * k, 3], offs)?);
            tape.add(y, offs)
        }
        _ => Ok(y),
    }
}

/// Denoiser bound to a configuration and a parameter store.
pub struct Backbone<'a, T> {
    pub cfg: &'a BackboneConfig,
    pub params: &'a ParamStore<T>,
}

impl<T: Scalar> Backbone<'_, T> {
    /// Encoder-to-projection pass for already-built patches.
    pub fn forward_patches(
        &self,
        tape: &mut Tape<T>,
        patches: &PatchSet<T>,
        t: usize,
        cond: Var,
        train: bool,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        let (cfg, store) = (self.cfg, self.params);
        let toks = encode_patches(tape, store, patches)?;
        let patch_pos = positional_embed(tape, store, cfg, &patches.centers)?;
        let pos = sequence_positions(tape, store, cfg, patch_pos)?;
        let time = time_token(tape, store, cfg, t)?;
        let seq = assemble_tokens(tape, time, cond, toks, pos)?;
        let out = transformer_forward(tape, store, seq, cfg.transformer(), train, rng)?;
        project_output(tape, store, cfg, out, Some(&patches.centers))
    }
}

impl<T: Scalar> Denoiser<T> for Backbone<'_, T> {
    /// Patches are built with a random FPS start in training and start 0 in
    /// evaluation.
    fn predict(
        &self,
        tape: &mut Tape<T>,
        xt: &PointCloud<T>,
        t: usize,
        cond: Var,
        train: bool,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        if xt.len() != self.cfg.n_points() {
            return Err(contract(format!(
                "backbone expects {} points, got {}",
                self.cfg.n_points(),
                xt.len()
            )));
        }
        let start = if train { rng.below(xt.len()) } else { 0 };
        let patches = build_patches(xt, self.cfg.groups, self.cfg.group_size, start)?;
        self.forward_patches(tape, &patches, t, cond, train, rng)
    }
}
