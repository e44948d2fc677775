use std::path::Path;

use super::{forward, Capture, ForwardOptions, ViTConfig, ViTModel};
use crate::archive::{self, Metadata, TensorMap};
use crate::error::{Error, Result};
use crate::seed;
use crate::stimulus::Stimulus;
use crate::tensor::Tensor;

const TENSOR: &str = "head_means";
/// Images summed per work unit; partial sums are merged in a fixed order so
/// the result does not depend on scheduling.
const CHUNK: usize = 4;

/// Mean per-head outputs (pre-projection) over a reference dataset, stored
/// as `[layer][token][width]` with head `h` in columns `h·d..(h+1)·d`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMeanStore {
    pub n_layers: usize,
    pub n_heads: usize,
    pub tokens: usize,
    pub width: usize,
    /// `false` means a single mean per head broadcast to every position.
    pub positional: bool,
    pub count: usize,
    /// SHA-256 over the sorted content hashes of the reference images.
    pub fingerprint: String,
    means: Vec<f32>,
}

impl HeadMeanStore {
    /// All-zero store shaped for `cfg`.
    pub fn zeros(cfg: &ViTConfig) -> Self {
        Self {
            n_layers: cfg.n_layers,
            n_heads: cfg.n_heads,
            tokens: cfg.tokens(),
            width: cfg.width,
            positional: true,
            count: 0,
            fingerprint: String::new(),
            means: vec![0.0; cfg.n_layers * cfg.tokens() * cfg.width],
        }
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.n_heads
    }

    /// Concatenated head means at one layer and token position.
    pub fn row(&self, layer: usize, token: usize) -> &[f32] {
        let i = (layer * self.tokens + token) * self.width;
        &self.means[i..i + self.width]
    }

    /// Mean output vector of one head at one position.
    pub fn head(&self, layer: usize, head: usize, token: usize) -> &[f32] {
        let d = self.head_dim();
        &self.row(layer, token)[head * d..(head + 1) * d]
    }

    pub fn check_compatible(&self, cfg: &ViTConfig) -> Result<()> {
        if self.n_layers != cfg.n_layers || self.n_heads != cfg.n_heads || self.tokens != cfg.tokens() || self.width != cfg.width
        {
            return Err(Error::DimensionMismatch(format!(
                "head-mean store is {}L/{}H/{}T/{}W but the model is {}L/{}H/{}T/{}W",
                self.n_layers,
                self.n_heads,
                self.tokens,
                self.width,
                cfg.n_layers,
                cfg.n_heads,
                cfg.tokens(),
                cfg.width
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut t = TensorMap::new();
        t.insert(
            TENSOR.into(),
            Tensor::new(vec![self.n_layers, self.tokens, self.width], self.means.clone())?,
        );
        let mut m = Metadata::new();
        m.insert("n_heads".into(), self.n_heads.to_string());
        m.insert("positional".into(), self.positional.to_string());
        m.insert("count".into(), self.count.to_string());
        m.insert("fingerprint".into(), self.fingerprint.clone());
        archive::write(path, &t, &m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mut t, m) = archive::read(path)?;
        let tensor = t.remove(TENSOR).ok_or_else(|| Error::MissingTensor(TENSOR.into()))?;
        let field = |k: &str| {
            m.get(k)
                .cloned()
                .ok_or_else(|| Error::Archive(format!("head-mean archive lacks `{k}` metadata")))
        };
        let parse_err = |k: &str| Error::Archive(format!("bad `{k}` metadata"));
        let shape = tensor.shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::ShapeMismatch {
                name: TENSOR.into(),
                expected: vec![0, 0, 0],
                found: shape,
            });
        }
        let n_heads: usize = field("n_heads")?.parse().map_err(|_| parse_err("n_heads"))?;
        if n_heads == 0 || shape[2] % n_heads != 0 {
            return Err(parse_err("n_heads"));
        }
        Ok(Self {
            n_layers: shape[0],
            n_heads,
            tokens: shape[1],
            width: shape[2],
            positional: field("positional")?.parse().map_err(|_| parse_err("positional"))?,
            count: field("count")?.parse().map_err(|_| parse_err("count"))?,
            fingerprint: field("fingerprint")?,
            means: tensor.into_data(),
        })
    }
}

/// SHA-256 over the sorted content hashes: independent of dataset order.
pub fn dataset_fingerprint(stimuli: &[Stimulus]) -> String {
    let mut hashes: Vec<String> = stimuli.iter().map(|s| s.content_hash()).collect();
    hashes.sort();
    seed::sha256_hex(hashes.join("\n").as_bytes())
}

/// Averages head outputs over `stimuli`. Images are visited in content-hash
/// order and accumulated in `f64`, so any permutation of the dataset yields
/// the identical store.
pub fn compute_head_means(model: &ViTModel, stimuli: &[Stimulus], positional: bool) -> Result<HeadMeanStore> {
    if stimuli.is_empty() {
        return Err(Error::Empty("head means need at least one image".into()));
    }
    let cfg = model.config();
    let mut order: Vec<(String, &Stimulus)> = stimuli.iter().map(|s| (s.content_hash(), s)).collect();
    order.sort_by(|a, b| a.0.cmp(&b.0));
    let chunks: Vec<&[(String, &Stimulus)]> = order.chunks(CHUNK).collect();
    let n = cfg.n_layers * cfg.tokens() * cfg.width;
    let partials = crate::par::try_map(&chunks, |chunk| -> Result<Vec<f64>> {
        let mut acc = vec![0.0f64; n];
        for (_, s) in chunk.iter() {
            let out = forward(model, &s.image, &ForwardOptions::capture(Capture::HEAD_OUTPUTS))?;
            let mut i = 0;
            for layer in &out.head_outputs {
                for v in layer.data() {
                    acc[i] += *v as f64;
                    i += 1;
                }
            }
        }
        Ok(acc)
    })?;
    let mut total = vec![0.0f64; n];
    for p in &partials {
        for (a, b) in total.iter_mut().zip(p) {
            *a += b;
        }
    }
    let count = stimuli.len();
    let (t, w) = (cfg.tokens(), cfg.width);
    let mut means: Vec<f32> = total.iter().map(|v| (v / count as f64) as f32).collect();
    if !positional {
        for layer in 0..cfg.n_layers {
            let block = &mut means[layer * t * w..(layer + 1) * t * w];
            let mut avg = vec![0.0f64; w];
            for tok in 0..t {
                for j in 0..w {
                    avg[j] += total[layer * t * w + tok * w + j];
                }
            }
            for tok in 0..t {
                for j in 0..w {
                    block[tok * w + j] = (avg[j] / (count * t) as f64) as f32;
                }
            }
        }
    }
    Ok(HeadMeanStore {
        n_layers: cfg.n_layers,
        n_heads: cfg.n_heads,
        tokens: t,
        width: w,
        positional,
        count,
        fingerprint: dataset_fingerprint(stimuli),
        means,
    })
}
