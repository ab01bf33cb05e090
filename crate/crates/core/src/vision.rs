//! Image conditioning: a small trainable ViT encoder and the multi-view
//! feature aggregation (learned-query attention pooling, or a plain average).

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::backbone::{linear_shapes, norm_shapes, transformer_forward, transformer_shapes, TransformerSpec};
use crate::error::{contract, Error, Result};
use crate::{ParamStore, Scalar, SeededRng, Tape, Tensor, Var};

/// Single- or multi-channel image with pixels in `[0, 1]`, stored row-major
/// with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor<T> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<T>,
}

impl<T: Scalar> ImageTensor<T> {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<T>) -> Result<Self> {
        if height * width * channels == 0 || pixels.len() != height * width * channels {
            return Err(contract(format!(
                "image {height}×{width}×{channels} cannot hold {} pixels",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(*p >= T::zero() && *p <= T::one())) {
            return Err(contract("pixel values must lie in [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn blank(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            channels: 1,
            pixels: vec![T::zero(); height * width],
        }
    }

    pub fn cast<U: Scalar>(&self) -> ImageTensor<U> {
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            pixels: self.pixels.iter().map(|&p| U::of(p.to_f64c())).collect(),
        }
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Non-overlapping `p×p` patches as rows of a `[n_patches, p·p·channels]`
    /// matrix, patches in raster order, each flattened as (row, col, channel).
    pub fn patchify(&self, p: usize) -> Result<Tensor<T>> {
        if p == 0 || !self.height.is_multiple_of(p) || !self.width.is_multiple_of(p) {
            return Err(contract(format!(
                "image {}×{} is not divisible into {p}×{p} patches",
                self.height, self.width
            )));
        }
        let (gh, gw) = (self.height / p, self.width / p);
        let row = p * p * self.channels;
        let mut data = Vec::with_capacity(gh * gw * row);
        for py in 0..gh {
            for px in 0..gw {
                for dy in 0..p {
                    for dx in 0..p {
                        for c in 0..self.channels {
                            data.push(self.get(py * p + dy, px * p + dx, c));
                        }
                    }
                }
            }
        }
        Tensor::new(&[gh * gw, row], data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    /// Learned-query attention pooling over views.
    Mfa,
    /// Arithmetic mean of view embeddings.
    Avg,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Mfa => "mfa",
            Aggregation::Avg => "avg",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mfa" => Ok(Aggregation::Mfa),
            "avg" => Ok(Aggregation::Avg),
            _ => Err(contract(format!("unknown aggregation `{s}` (expected mfa or avg)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisionConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    /// Output width; equals the backbone token width.
    pub embed_dim: usize,
    pub aggregation: Aggregation,
    pub mfa_heads: usize,
}

impl VisionConfig {
    pub fn num_patches(&self) -> usize {
        (self.image_size / self.patch_size).pow(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return Err(contract(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(contract(format!(
                "image width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.mfa_heads == 0 || !self.embed_dim.is_multiple_of(self.mfa_heads) {
            return Err(contract(format!(
                "embed_dim {} not divisible by {} aggregation heads",
                self.embed_dim, self.mfa_heads
            )));
        }
        if self.channels == 0 {
            return Err(contract("image channels must be positive"));
        }
        Ok(())
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (w, d) = (self.width, self.embed_dim);
        let mut v = Vec::new();
        linear_shapes(
            &mut v,
            "image.embed",
            self.patch_size * self.patch_size * self.channels,
            w,
        );
        v.push(("image.pos".into(), vec![self.num_patches(), w]));
        transformer_shapes(&mut v, "image.blocks", w, self.depth, 4);
        norm_shapes(&mut v, "image.norm", w);
        linear_shapes(&mut v, "image.out", w, d);
        v.push(("mfa.query".into(), vec![1, d]));
        // No key bias: it would shift every view's score equally and never
        // receive gradient.
        v.push(("mfa.key.w".into(), vec![d, d]));
        linear_shapes(&mut v, "mfa.value", d, d);
        linear_shapes(&mut v, "mfa.out", d, d);
        v
    }
}

/// Patchify, linear embed, learned 2-D positions, transformer blocks,
/// mean-pool, linear to `embed_dim`. Returns `[1, embed_dim]`.
pub fn encode_image<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cfg: &VisionConfig,
    img: &ImageTensor<T>,
    rng: &mut SeededRng,
) -> Result<Var> {
    if img.height != cfg.image_size || img.width != cfg.image_size || img.channels != cfg.channels {
        return Err(contract(format!(
            "image {}×{}×{} does not match encoder input {}×{}×{}",
            img.height, img.width, img.channels, cfg.image_size, cfg.image_size, cfg.channels
        )));
    }
    let patches = tape.constant(img.patchify(cfg.patch_size)?);
    let x = tape.linear(store, patches, "image.embed")?;
    let pos = tape.param(store, "image.pos")?;
    let x = tape.add(x, pos)?;
    let spec = TransformerSpec {
        prefix: "image.blocks",
        depth: cfg.depth,
        heads: cfg.heads,
        drop_path_rate: 0.0,
        norm_prefix: "image.norm",
    };
    let x = transformer_forward(tape, store, x, spec, false, rng)?;
    let pooled = tape.mean_rows(x)?;
    tape.linear(store, pooled, "image.out")
}

/// Row order sorting view embeddings lexicographically by value, so the
/// aggregation sums in the same order whatever order the views arrive in.
fn canonical_order<T: Scalar>(data: &[T], rows: usize, cols: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| {
        let ra = &data[a * cols..(a + 1) * cols];
        let rb = &data[b * cols..(b + 1) * cols];
        ra.iter()
            .zip(rb)
            .map(|(x, y)| x.partial_cmp(y).unwrap_or(Ordering::Equal))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

fn mfa_keys<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, e: Var) -> Result<Var> {
    let w = tape.param(store, "mfa.key.w")?;
    tape.matmul(e, w)
}

/// Pools `[V, d]` view embeddings into one `[1, d]` condition.
///
/// MFA: `softmax_v(q·K_vᵀ/√d_h)` per head over key projections, applied to
/// value projections, then the output projection. AVG: the mean.
pub fn aggregate_features<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cfg: &VisionConfig,
    embeddings: Var,
) -> Result<Var> {
    let (v, d) = tape.value(embeddings).dims2()?;
    if v == 0 {
        return Err(contract("aggregation needs at least one view"));
    }
    let order = canonical_order(tape.value(embeddings).data(), v, d);
    let e = tape.gather_rows(embeddings, &order)?;
    match cfg.aggregation {
        Aggregation::Avg => tape.mean_rows(e),
        Aggregation::Mfa => {
            let heads = cfg.mfa_heads;
            let dh = d / heads;
            let q = tape.param(store, "mfa.query")?;
            let keys = mfa_keys(tape, store, e)?;
            let values = tape.linear(store, e, "mfa.value")?;
            let scale = T::of(1.0 / (dh as f64).sqrt());
            let mut outs = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = tape.slice_cols(q, h * dh, dh)?;
                let kh = tape.slice_cols(keys, h * dh, dh)?;
                let vh = tape.slice_cols(values, h * dh, dh)?;
                let kt = tape.transpose(kh)?;
                let s = tape.matmul(qh, kt)?;
                let s = tape.scale(s, scale);
                let w = tape.softmax(s, 1)?;
                outs.push(tape.matmul(w, vh)?);
            }
            let pooled = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
            tape.linear(store, pooled, "mfa.out")
        }
    }
}

/// Attention weights MFA assigns to each view (in input order), for
/// inspection.
pub fn mfa_scores<T: Scalar>(store: &ParamStore<T>, cfg: &VisionConfig, embeddings: &Tensor<T>) -> Result<Vec<Vec<T>>> {
    let mut tape = Tape::new();
    let e = tape.constant(embeddings.clone());
    let (_, d) = embeddings.dims2()?;
    let dh = d / cfg.mfa_heads;
    let q = tape.param(store, "mfa.query")?;
    let keys = mfa_keys(&mut tape, store, e)?;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut out = Vec::new();
    for h in 0..cfg.mfa_heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(keys, h * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let s = tape.matmul(qh, kt)?;
        let s = tape.scale(s, scale);
        let w = tape.softmax(s, 1)?;
        out.push(tape.value(w).data().to_vec());
    }
    Ok(out)
}

/// Encodes each view with the shared encoder and aggregates them.
pub fn encode_views<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cfg: &VisionConfig,
    views: &[&ImageTensor<T>],
    rng: &mut SeededRng,
) -> Result<Var> {
    let first = views.first().ok_or_else(|| contract("view set is empty"))?;
    if views
        .iter()
        .any(|v| v.height != first.height || v.width != first.width || v.channels != first.channels)
    {
        return Err(contract("all views must share the same dimensions"));
    }
    let embs = views
        .iter()
        .map(|img| encode_image(tape, store, cfg, img, rng))
        .collect::<Result<Vec<_>>>()?;
    let stacked = tape.concat_rows(&embs)?;
    aggregate_features(tape, store, cfg, stacked)
}
