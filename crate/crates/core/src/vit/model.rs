//! Named-tensor weights and their archive contract.
//!
//! | name                          | shape                 |
//! |-------------------------------|-----------------------|
//! | `patch_embed.proj.weight`     | `[width, 3, P, P]`    |
//! | `patch_embed.proj.bias`       | `[width]`             |
//! | `cls_token` (if enabled)      | `[1, 1, width]`       |
//! | `pos_embed`                   | `[1, tokens, width]`  |
//! | `blocks.{i}.norm1.{weight,bias}` | `[width]`          |
//! | `blocks.{i}.attn.{q,k,v}.weight` | `[width, width]`   |
//! | `blocks.{i}.attn.{q,k,v}.bias`   | `[width]`          |
//! | `blocks.{i}.attn.proj.weight` | `[width, width]`      |
//! | `blocks.{i}.attn.proj.bias`   | `[width]`             |
//! | `blocks.{i}.norm2.{weight,bias}` | `[width]`          |
//! | `blocks.{i}.mlp.fc1.weight`   | `[hidden, width]`     |
//! | `blocks.{i}.mlp.fc1.bias`     | `[hidden]`            |
//! | `blocks.{i}.mlp.fc2.weight`   | `[width, hidden]`     |
//! | `blocks.{i}.mlp.fc2.bias`     | `[width]`             |
//! | `norm.{weight,bias}`          | `[width]`             |
//!
//! Linear weights use the `(out, in)` layout. Patch pixels are flattened in
//! `(channel, row, col)` order, matching a stride-`P` convolution kernel.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ViTConfig;
use crate::archive::{self, Metadata, TensorMap};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

pub const FORMAT_KEY: &str = "format";
pub const FORMAT_VALUE: &str = "gestalt-vit";

/// How a tensor is initialized in an untrained model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    TruncNormal,
    Zeros,
    Ones,
}

/// Every tensor the config requires, in canonical order.
pub fn tensor_specs(cfg: &ViTConfig) -> Vec<(String, Vec<usize>, InitKind)> {
    use InitKind::*;
    let (w, h, p) = (cfg.width, cfg.hidden(), cfg.patch_size);
    let mut out = vec![
        ("patch_embed.proj.weight".to_string(), vec![w, 3, p, p], TruncNormal),
        ("patch_embed.proj.bias".to_string(), vec![w], Zeros),
    ];
    if cfg.uses_cls_token {
        out.push(("cls_token".into(), vec![1, 1, w], TruncNormal));
    }
    out.push(("pos_embed".into(), vec![1, cfg.tokens(), w], TruncNormal));
    for i in 0..cfg.n_layers {
        let b = |s: &str| format!("blocks.{i}.{s}");
        out.push((b("norm1.weight"), vec![w], Ones));
        out.push((b("norm1.bias"), vec![w], Zeros));
        for m in ["q", "k", "v", "proj"] {
            out.push((b(&format!("attn.{m}.weight")), vec![w, w], TruncNormal));
            out.push((b(&format!("attn.{m}.bias")), vec![w], Zeros));
        }
        out.push((b("norm2.weight"), vec![w], Ones));
        out.push((b("norm2.bias"), vec![w], Zeros));
        out.push((b("mlp.fc1.weight"), vec![h, w], TruncNormal));
        out.push((b("mlp.fc1.bias"), vec![h], Zeros));
        out.push((b("mlp.fc2.weight"), vec![w, h], TruncNormal));
        out.push((b("mlp.fc2.bias"), vec![w], Zeros));
    }
    out.push(("norm.weight".into(), vec![w], Ones));
    out.push(("norm.bias".into(), vec![w], Zeros));
    out
}

/// A validated, immutable encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ViTModel {
    config: ViTConfig,
    weights: TensorMap,
}

impl ViTModel {
    /// Validates `weights` against `config`. Unknown extra tensors are ignored
    /// and dropped.
    pub fn from_tensors(config: ViTConfig, mut weights: TensorMap) -> Result<Self> {
        config.validate()?;
        let mut kept = TensorMap::new();
        for (name, shape, _) in tensor_specs(&config) {
            let t = weights.remove(&name).ok_or_else(|| Error::MissingTensor(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    name,
                    expected: shape,
                    found: t.shape().to_vec(),
                });
            }
            if !t.all_finite() {
                return Err(Error::Numeric(format!("tensor `{name}` contains non-finite values")));
            }
            kept.insert(name, t);
        }
        Ok(Self { config, weights: kept })
    }

    pub fn load(path: &Path, config: ViTConfig) -> Result<Self> {
        let (tensors, _) = archive::read(path)?;
        Self::from_tensors(config, tensors)
    }

    /// Loads an archive written by [`ViTModel::save`], reading the config
    /// from its metadata.
    pub fn open(path: &Path) -> Result<Self> {
        let (tensors, meta) = archive::read(path)?;
        if meta.get(FORMAT_KEY).map(String::as_str) != Some(FORMAT_VALUE) {
            return Err(Error::Archive(format!("{} is not a model archive", path.display())));
        }
        let config = meta
            .get("config")
            .ok_or_else(|| Error::Archive("model archive lacks its config".into()))?;
        let config: ViTConfig = serde_json::from_str(config)?;
        Self::from_tensors(config, tensors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        archive::write(path, &self.weights, &self.metadata())
    }

    pub fn metadata(&self) -> Metadata {
        let mut m = Metadata::new();
        m.insert(FORMAT_KEY.into(), FORMAT_VALUE.into());
        m.insert("config".into(), serde_json::to_string(&self.config).expect("config serializes"));
        m
    }

    pub fn config(&self) -> &ViTConfig {
        &self.config
    }

    pub fn tensors(&self) -> &TensorMap {
        &self.weights
    }

    pub fn into_tensors(self) -> TensorMap {
        self.weights
    }

    pub(crate) fn w(&self, name: &str) -> &[f32] {
        self.weights
            .get(name)
            .unwrap_or_else(|| panic!("validated model lacks `{name}`"))
            .data()
    }

    /// SHA-256 over the archive encoding: identifies the exact weights.
    pub fn fingerprint(&self) -> String {
        let bytes = archive::encode(&self.weights, &Metadata::new()).expect("weights encode");
        seed::sha256_hex(&bytes)
    }
}

fn trunc_normal(rng: &mut impl Rng, n: usize, std: f32) -> Vec<f32> {
    let normal = Normal::new(0.0f32, std).expect("positive std");
    let bound = 2.0 * std;
    (0..n)
        .map(|_| loop {
            let v = normal.sample(rng);
            if v.abs() <= bound {
                break v;
            }
        })
        .collect()
}

/// Randomly initialized encoder: weights and embeddings from a normal with
/// std 0.02 truncated at ±2σ, zero biases, unit layer-norm gains. Each
/// tensor draws from its own stream derived from `(seed, name)`.
pub fn init_untrained(seed: u64, config: ViTConfig) -> Result<ViTModel> {
    config.validate()?;
    let specs = tensor_specs(&config);
    let build = |(name, shape, kind): &(String, Vec<usize>, InitKind)| {
        let n: usize = shape.iter().product();
        let data = match kind {
            InitKind::TruncNormal => trunc_normal(&mut seed::child_rng(seed, name), n, 0.02),
            InitKind::Zeros => vec![0.0; n],
            InitKind::Ones => vec![1.0; n],
        };
        (name.clone(), Tensor::new(shape.clone(), data).expect("sized"))
    };
    let weights: TensorMap = crate::par::map(&specs, build).into_iter().collect();
    ViTModel::from_tensors(config, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ViTConfig {
        ViTConfig {
            patch_size: 56,
            n_layers: 2,
            n_heads: 2,
            width: 8,
            mlp_ratio: 2,
            ..ViTConfig::vit_b(56)
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = init_untrained(1, tiny()).unwrap();
        assert_eq!(a, init_untrained(1, tiny()).unwrap());
        assert_ne!(a, init_untrained(2, tiny()).unwrap());
        let w = a.tensors()["blocks.0.attn.q.weight"].data();
        assert!(w.iter().all(|v| v.abs() <= 0.04));
        assert!(a.tensors()["blocks.1.norm2.weight"].data().iter().all(|v| *v == 1.0));
        assert!(a.tensors()["blocks.1.mlp.fc1.bias"].data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn trunc_normal_std_is_near_target() {
        // A normal truncated at ±2σ has std 0.8796σ (variance ratio 1 - 4φ(2)/(2Φ(2)-1)).
        let v = trunc_normal(&mut seed::rng(3), 50_000, 0.02);
        let var = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>() / v.len() as f64;
        assert!((var.sqrt() - 0.02 * 0.8796).abs() < 5e-4, "std {}", var.sqrt());
    }

    #[test]
    fn missing_and_misshapen_tensors_are_named() {
        let m = init_untrained(1, tiny()).unwrap();
        let mut t = m.clone().into_tensors();
        t.remove("blocks.1.attn.v.bias");
        match ViTModel::from_tensors(tiny(), t) {
            Err(Error::MissingTensor(n)) => assert_eq!(n, "blocks.1.attn.v.bias"),
            other => panic!("{other:?}"),
        }
        let mut t = m.into_tensors();
        t.insert("norm.bias".into(), Tensor::zeros(vec![9]));
        match ViTModel::from_tensors(tiny(), t) {
            Err(Error::ShapeMismatch { name, .. }) => assert_eq!(name, "norm.bias"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn save_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        let m = init_untrained(5, tiny()).unwrap();
        m.save(&path).unwrap();
        let back = ViTModel::load(&path, tiny()).unwrap();
        assert_eq!(back, m);
        let p2 = dir.path().join("m2.safetensors");
        back.save(&p2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(ViTModel::open(&path).unwrap(), m);
        let mut bare = TensorMap::new();
        bare.insert("x".into(), Tensor::zeros(vec![1]));
        archive::write(&p2, &bare, &Metadata::new()).unwrap();
        assert!(ViTModel::open(&p2).is_err());
    }
}
