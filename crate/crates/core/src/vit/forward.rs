use std::collections::BTreeSet;

use image::RgbImage;

use super::{HeadMeanStore, ViTConfig, ViTModel};
use crate::error::{Error, Result};
use crate::tensor::{gemm_view, linear, Tensor};

/// What a forward pass records besides its final output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Capture {
    pub attention: bool,
    /// Residual stream after each block.
    pub residual: bool,
    /// Concatenated per-head outputs before each output projection.
    pub head_outputs: bool,
}

impl Capture {
    pub const NONE: Capture = Capture { attention: false, residual: false, head_outputs: false };
    pub const ATTENTION: Capture = Capture { attention: true, residual: false, head_outputs: false };
    pub const ACTIVATIONS: Capture = Capture { attention: false, residual: true, head_outputs: false };
    pub const BOTH: Capture = Capture { attention: true, residual: true, head_outputs: false };
    pub const HEAD_OUTPUTS: Capture = Capture { attention: false, residual: false, head_outputs: true };
}

/// Post-softmax attention for every `(layer, head)` that ran.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub layers: usize,
    pub heads: usize,
    pub tokens: usize,
    data: Vec<f32>,
}

impl AttentionRecord {
    /// Wraps raw `[layer][head][query][key]` weights.
    pub fn from_parts(layers: usize, heads: usize, tokens: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != layers * heads * tokens * tokens {
            return Err(Error::DimensionMismatch(format!(
                "{} attention weights for {layers}x{heads} heads over {tokens} tokens",
                data.len()
            )));
        }
        Ok(Self { layers, heads, tokens, data })
    }

    /// Row-major `tokens × tokens` matrix; row = query, column = key.
    pub fn get(&self, layer: usize, head: usize) -> &[f32] {
        let tt = self.tokens * self.tokens;
        let i = (layer * self.heads + head) * tt;
        &self.data[i..i + tt]
    }

    #[inline]
    pub fn at(&self, layer: usize, head: usize, query: usize, key: usize) -> f32 {
        self.get(layer, head)[query * self.tokens + key]
    }
}

/// A set of `(layer, head)` pairs whose outputs are replaced by stored means.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HeadAblationSpec {
    heads: BTreeSet<(usize, usize)>,
}

impl HeadAblationSpec {
    pub fn new(heads: impl IntoIterator<Item = (usize, usize)>, cfg: &ViTConfig) -> Result<Self> {
        let heads: BTreeSet<_> = heads.into_iter().collect();
        if let Some(&(l, h)) = heads.iter().find(|(l, h)| *l >= cfg.n_layers || *h >= cfg.n_heads) {
            return Err(Error::InvalidParam(format!(
                "head ({l}, {h}) is outside a {}x{} model",
                cfg.n_layers, cfg.n_heads
            )));
        }
        Ok(Self { heads })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn heads(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.heads.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    fn in_layer(&self, layer: usize) -> impl Iterator<Item = usize> + '_ {
        self.heads.range((layer, 0)..(layer + 1, 0)).map(|&(_, h)| h)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions<'a> {
    pub capture: Capture,
    pub ablate: Option<&'a HeadAblationSpec>,
    pub means: Option<&'a HeadMeanStore>,
    /// Run blocks `0..=L` only.
    pub stop_after_layer: Option<usize>,
}

impl<'a> ForwardOptions<'a> {
    pub fn capture(capture: Capture) -> Self {
        Self { capture, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub layers_run: usize,
    /// `[tokens, width]` per block, when captured.
    pub residual: Vec<Tensor>,
    /// `[tokens, width]` per block, when captured.
    pub head_outputs: Vec<Tensor>,
    pub attention: Option<AttentionRecord>,
    /// Final-norm output, present only when every block ran.
    pub output: Option<Tensor>,
}

/// Normalized patch matrix `[n_patches, 3·P·P]`, patches in row-major grid
/// order, pixels in `(channel, row, col)` order.
pub fn preprocess(cfg: &ViTConfig, image: &RgbImage) -> Result<Vec<f32>> {
    let s = cfg.image_size as u32;
    if image.dimensions() != (s, s) {
        return Err(Error::DimensionMismatch(format!(
            "model expects {s}x{s} images, got {:?}",
            image.dimensions()
        )));
    }
    let p = cfg.patch_size;
    let g = cfg.grid();
    let k = 3 * p * p;
    let mut out = vec![0.0f32; g * g * k];
    for (x, y, px) in image.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        let patch = (y / p) * g + x / p;
        let (py, pxl) = (y % p, x % p);
        for c in 0..3 {
            let v = (px.0[c] as f32 / 255.0 - cfg.pixel_mean[c]) / cfg.pixel_std[c];
            out[patch * k + c * p * p + py * p + pxl] = v;
        }
    }
    Ok(out)
}

fn layer_norm(x: &[f32], width: usize, gamma: &[f32], beta: &[f32], eps: f32) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for (row, o) in x.chunks_exact(width).zip(out.chunks_exact_mut(width)) {
        let mean = row.iter().map(|v| *v as f64).sum::<f64>() / width as f64;
        let var = row.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / width as f64;
        let inv = 1.0 / (var + eps as f64).sqrt();
        for j in 0..width {
            o[j] = ((row[j] as f64 - mean) * inv) as f32 * gamma[j] + beta[j];
        }
    }
    out
}

#[inline]
fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::erff(x * std::f32::consts::FRAC_1_SQRT_2))
}

/// Numerically stable in-place row softmax.
pub(crate) fn softmax_rows(m: &mut [f32], cols: usize) {
    for row in m.chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Embeds an image into the initial `[tokens, width]` residual stream.
pub fn embed(model: &ViTModel, image: &RgbImage) -> Result<Vec<f32>> {
    let cfg = model.config();
    let (w, p) = (cfg.width, cfg.patch_size);
    let patches = preprocess(cfg, image)?;
    let emb = linear(
        &patches,
        cfg.n_patches(),
        3 * p * p,
        model.w("patch_embed.proj.weight"),
        w,
        Some(model.w("patch_embed.proj.bias")),
    );
    let mut x = Vec::with_capacity(cfg.tokens() * w);
    if cfg.uses_cls_token {
        x.extend_from_slice(model.w("cls_token"));
    }
    x.extend_from_slice(&emb);
    for (v, pe) in x.iter_mut().zip(model.w("pos_embed")) {
        *v += pe;
    }
    Ok(x)
}

/// Standard pre-norm encoder forward with optional capture and head mean
/// ablation.
pub fn forward(model: &ViTModel, image: &RgbImage, opts: &ForwardOptions) -> Result<ForwardOutput> {
    let cfg = model.config();
    let ablate = opts.ablate.filter(|a| !a.is_empty());
    if let Some(spec) = ablate {
        let means = opts.means.ok_or(Error::MissingHeadMeans)?;
        means.check_compatible(cfg)?;
        if let Some((l, h)) = spec.heads().find(|(l, h)| *l >= cfg.n_layers || *h >= cfg.n_heads) {
            return Err(Error::InvalidParam(format!("head ({l}, {h}) is outside the model")));
        }
    }
    let last = match opts.stop_after_layer {
        Some(l) if l >= cfg.n_layers => {
            return Err(Error::InvalidParam(format!("stop_after_layer {l} >= {} layers", cfg.n_layers)))
        }
        Some(l) => l,
        None => cfg.n_layers - 1,
    };
    let layers_run = last + 1;
    let (t, w, nh, dh, hid) = (cfg.tokens(), cfg.width, cfg.n_heads, cfg.head_dim(), cfg.hidden());
    let eps = cfg.layer_norm_eps;
    let scale = 1.0 / (dh as f32).sqrt();

    let mut x = embed(model, image)?;
    let mut out = ForwardOutput {
        layers_run,
        residual: Vec::new(),
        head_outputs: Vec::new(),
        attention: None,
        output: None,
    };
    let mut attn_data = if opts.capture.attention {
        Vec::with_capacity(layers_run * nh * t * t)
    } else {
        Vec::new()
    };
    let mut scores = vec![0.0f32; t * t];

    for layer in 0..layers_run {
        let name = |s: &str| format!("blocks.{layer}.{s}");
        let h = layer_norm(&x, w, model.w(&name("norm1.weight")), model.w(&name("norm1.bias")), eps);
        let mut q = linear(&h, t, w, model.w(&name("attn.q.weight")), w, Some(model.w(&name("attn.q.bias"))));
        let k = linear(&h, t, w, model.w(&name("attn.k.weight")), w, Some(model.w(&name("attn.k.bias"))));
        let v = linear(&h, t, w, model.w(&name("attn.v.weight")), w, Some(model.w(&name("attn.v.bias"))));
        for qv in q.iter_mut() {
            *qv *= scale;
        }
        let mut heads_out = vec![0.0f32; t * w];
        for head in 0..nh {
            let off = head * dh;
            gemm_view(t, dh, t, &q[off..], (w, 1), &k[off..], (1, w), &mut scores, (t, 1));
            softmax_rows(&mut scores, t);
            if opts.capture.attention {
                attn_data.extend_from_slice(&scores);
            }
            gemm_view(t, t, dh, &scores, (t, 1), &v[off..], (w, 1), &mut heads_out[off..], (w, 1));
        }
        if let (Some(spec), Some(means)) = (ablate, opts.means) {
            for head in spec.in_layer(layer) {
                let off = head * dh;
                for tok in 0..t {
                    heads_out[tok * w + off..tok * w + off + dh].copy_from_slice(&means.row(layer, tok)[off..off + dh]);
                }
            }
        }
        let proj = linear(&heads_out, t, w, model.w(&name("attn.proj.weight")), w, Some(model.w(&name("attn.proj.bias"))));
        if opts.capture.head_outputs {
            out.head_outputs.push(Tensor::new(vec![t, w], heads_out).expect("sized"));
        }
        for (a, b) in x.iter_mut().zip(&proj) {
            *a += b;
        }
        let h2 = layer_norm(&x, w, model.w(&name("norm2.weight")), model.w(&name("norm2.bias")), eps);
        let mut m = linear(&h2, t, w, model.w(&name("mlp.fc1.weight")), hid, Some(model.w(&name("mlp.fc1.bias"))));
        for v in m.iter_mut() {
            *v = gelu(*v);
        }
        let m2 = linear(&m, t, hid, model.w(&name("mlp.fc2.weight")), w, Some(model.w(&name("mlp.fc2.bias"))));
        for (a, b) in x.iter_mut().zip(&m2) {
            *a += b;
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite residual after block {layer}")));
        }
        if opts.capture.residual {
            out.residual.push(Tensor::new(vec![t, w], x.clone()).expect("sized"));
        }
    }
    if opts.capture.attention {
        out.attention = Some(AttentionRecord {
            layers: layers_run,
            heads: nh,
            tokens: t,
            data: attn_data,
        });
    }
    if layers_run == cfg.n_layers {
        let y = layer_norm(&x, w, model.w("norm.weight"), model.w("norm.bias"), eps);
        out.output = Some(Tensor::new(vec![t, w], y).expect("sized"));
    }
    Ok(out)
}
