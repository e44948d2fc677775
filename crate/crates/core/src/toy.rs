//! A hand-weighted two-layer ViT with one engineered aligned-edge head.
//!
//! Patch embedding writes the mean-centered top and bottom pixel rows of
//! each patch (`T`, `B`, 16 dims each). Head `(0, 1)` scores
//! `q_n · k_x = g (B_n · T_x + T_n · B_x)`, so a token attends to tokens
//! whose rows continue its own across a horizontal patch border, and
//! copies their `T` row into a dedicated residual subspace. All other heads,
//! MLPs and the second block are zero. With a large layer-norm epsilon and
//! matching gain, pre-norm is the identity on these zero-mean embeddings.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::ablation::{layer_pairs, run_ablation, select_top_heads, EvalItem, Head, Variant};
use crate::archive::TensorMap;
use crate::continuity::{head_scores, tuning_curve, ContinuityOptions, SensitivityCurve};
use crate::error::Result;
use crate::probe::{eval_probe, sample_pair_indices, train_probe, PairSample, ProbeParams, TrainConfig};
use crate::stimulus::{gen_bars, scramble_orientation, BarsParams, PatchGrid, Stimulus};
use crate::tensor::Tensor;
use crate::vit::{compute_head_means, tensor_specs, InitKind, ViTConfig, ViTModel};

pub const PATCH: usize = 16;
pub const WIDTH: usize = 64;
pub const DETECTOR: Head = (0, 1);
/// Residual dims written by the detector head.
pub const DETECTOR_DIMS: Range<usize> = 32..48;
const EPS: f32 = 1e4;

pub fn toy_config() -> ViTConfig {
    ViTConfig {
        patch_size: PATCH,
        n_layers: 2,
        n_heads: 2,
        width: WIDTH,
        mlp_ratio: 1,
        image_size: 224,
        uses_cls_token: false,
        layer_norm_eps: EPS,
        pixel_mean: [0.5; 3],
        pixel_std: [0.5; 3],
    }
}

/// Builds the detector model; `gain` scales the matched-row score.
pub fn aligned_edge_model(gain: f32) -> Result<ViTModel> {
    let cfg = toy_config();
    let mut t: TensorMap = tensor_specs(&cfg)
        .into_iter()
        .map(|(name, shape, kind)| {
            let v = if kind == InitKind::Ones { 1.0 } else { 0.0 };
            (name, Tensor::filled(shape, v))
        })
        .collect();
    let set = |t: &mut TensorMap, name: &str, idx: usize, v: f32| {
        t.get_mut(name).expect("spec tensor").data_mut()[idx] = v;
    };

    // Rows 0 and P-1, channel-averaged and mean-centered.
    let p = PATCH;
    for (base, row) in [(0, 0), (p, p - 1)] {
        for i in 0..p {
            for j in 0..p {
                let w = ((i == j) as u8 as f32 - 1.0 / p as f32) / 3.0;
                for c in 0..3 {
                    set(&mut t, "patch_embed.proj.weight", (((base + i) * 3 + c) * p + row) * p + j, w);
                }
            }
        }
    }
    for i in 0..WIDTH {
        set(&mut t, "blocks.0.norm1.weight", i, EPS.sqrt());
    }
    // Q and K already carry the 1/sqrt(head_dim) attention scale.
    let dh = cfg.head_dim();
    let q_gain = gain * (dh as f32).sqrt();
    let h0 = DETECTOR.1 * dh;
    for i in 0..p {
        set(&mut t, "blocks.0.attn.q.weight", (h0 + i) * WIDTH + p + i, q_gain);
        set(&mut t, "blocks.0.attn.q.weight", (h0 + p + i) * WIDTH + i, q_gain);
        set(&mut t, "blocks.0.attn.k.weight", (h0 + i) * WIDTH + i, 1.0);
        set(&mut t, "blocks.0.attn.k.weight", (h0 + p + i) * WIDTH + p + i, 1.0);
        set(&mut t, "blocks.0.attn.v.weight", (h0 + i) * WIDTH + i, 1.0);
        let out = DETECTOR_DIMS.start + i;
        set(&mut t, "blocks.0.attn.proj.weight", out * WIDTH + h0 + i, 1.0);
    }
    ViTModel::from_tensors(cfg, t)
}

/// Zeroes every activation dim outside the detector's write subspace, so a
/// probe trained on the result can only use what the detector contributed.
pub fn detector_view(pairs: &mut [PairSample]) {
    for p in pairs {
        for v in [&mut p.x, &mut p.y] {
            for (i, a) in v.iter_mut().enumerate() {
                if !DETECTOR_DIMS.contains(&i) {
                    *a = 0.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyExperiment {
    pub gain: f32,
    pub n_train: usize,
    pub n_test: usize,
    pub n_scoring: usize,
    pub pairs_per_image: usize,
    pub t_values: Vec<i64>,
    pub seed: u64,
    pub bars: BarsParams,
    pub probe: TrainConfig,
}

impl Default for ToyExperiment {
    fn default() -> Self {
        Self {
            gain: 0.35,
            n_train: 200,
            n_test: 100,
            n_scoring: 20,
            pairs_per_image: 32,
            t_values: (-8..=8).collect(),
            seed: 7,
            bars: BarsParams::default(),
            probe: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantOutcome {
    pub variant: Variant,
    pub baseline: f64,
    pub ablated: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyOutcome {
    /// Head chosen as the single top continuity head.
    pub selected: Vec<Head>,
    pub curve: SensitivityCurve,
    pub object: VariantOutcome,
    pub scrambled_orientation: VariantOutcome,
}

impl ToyOutcome {
    pub fn selectivity(&self) -> f64 {
        self.object.delta - self.scrambled_orientation.delta
    }
}

fn items<'a>(stimuli: &'a [Stimulus], seed: u64, per_image: usize) -> Result<Vec<EvalItem<'a>>> {
    stimuli
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let grid = PatchGrid::new(s, PATCH as u32)?;
            let pairs = sample_pair_indices(&grid, crate::seed::derive_seed(seed, &format!("pairs/{i}")), Some(per_image), true)?;
            Ok(EvalItem { stimulus: s, pairs })
        })
        .collect()
}

/// End-to-end run: score heads, pick the top one, train detector-view
/// probes per variant at the last layer and mean-ablate the chosen head.
pub fn run_experiment(exp: &ToyExperiment) -> Result<ToyOutcome> {
    let model = aligned_edge_model(exp.gain)?;
    let layer = model.config().n_layers - 1;
    let gen = |label: &str, n: usize| -> Result<Vec<Stimulus>> {
        (0..n)
            .map(|i| gen_bars(crate::seed::derive_seed(exp.seed, &format!("{label}/{i}")), &exp.bars))
            .collect()
    };
    let scoring = gen("scoring", exp.n_scoring)?;
    let copts = ContinuityOptions { seed: exp.seed, ..ContinuityOptions::default() };
    let scores = head_scores(&model, &scoring, &copts)?;
    let selected = select_top_heads(&scores, 1, layer)?;
    let (sl, sh) = selected[0];
    let curve = tuning_curve(&model, sl, sh, &scoring, &exp.t_values, &copts)?;

    let train_obj = gen("train", exp.n_train)?;
    let test_obj = gen("test", exp.n_test)?;
    let means = compute_head_means(&model, &train_obj, true)?;
    let scramble = |v: &[Stimulus], label: &str| -> Result<Vec<Stimulus>> {
        v.iter()
            .enumerate()
            .map(|(i, s)| {
                let g = PatchGrid::new(s, PATCH as u32)?;
                scramble_orientation(s, &g, crate::seed::derive_seed(exp.seed, &format!("{label}/{i}")))
            })
            .collect()
    };
    let train_scr = scramble(&train_obj, "scramble-train")?;
    let test_scr = scramble(&test_obj, "scramble-test")?;

    let outcome = |variant: Variant, train: &[Stimulus], test: &[Stimulus]| -> Result<VariantOutcome> {
        let train_items = items(train, exp.seed ^ 1, exp.pairs_per_image)?;
        let mut pairs = layer_pairs(&model, &train_items, layer, None)?;
        detector_view(&mut pairs);
        let (probe, _) = train_probe(&pairs, &exp.probe)?;
        let probe = restrict(probe);
        let test_items = items(test, exp.seed ^ 2, exp.pairs_per_image)?;
        let base = eval_probe(&probe, &layer_pairs(&model, &test_items, layer, None)?)?;
        let run = run_ablation(&probe, &model, &selected, &means, &test_items, layer, variant, Some(&base))?;
        Ok(VariantOutcome { variant, baseline: run.baseline, ablated: run.ablated, delta: run.delta })
    };
    Ok(ToyOutcome {
        selected: selected.clone(),
        curve,
        object: outcome(Variant::Object, &train_obj, &test_obj)?,
        scrambled_orientation: outcome(Variant::ScrambledOrientation, &train_scr, &test_scr)?,
    })
}

/// Training on projected pairs leaves `W` zero off the subspace up to
/// rounding; make it exact.
fn restrict(mut p: ProbeParams) -> ProbeParams {
    let d = p.d;
    for i in 0..d {
        for j in 0..d {
            if !(DETECTOR_DIMS.contains(&i) && DETECTOR_DIMS.contains(&j)) {
                p.w[i * d + j] = 0.0;
            }
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stimulus::gen_bars;
    use crate::vit::{forward, Capture, ForwardOptions, HeadAblationSpec};

    #[test]
    fn embedding_writes_centered_edge_rows() {
        let model = aligned_edge_model(0.35).unwrap();
        let stim = gen_bars(3, &BarsParams::default()).unwrap();
        let out = forward(&model, &stim.image, &ForwardOptions::capture(Capture::ACTIVATIONS)).unwrap();
        let grid = PatchGrid::new(&stim, 16).unwrap();
        let crate::stimulus::StimulusParams::Bars(rec) = &stim.params else { panic!() };
        let (col, row, _, off) = rec.bars[0];
        let patch = grid.index(row, col);
        // Hand oracle: ±1 pixels, a 4-wide bar, mean −0.5 → 1.5 on the bar.
        let mut want = [-0.5f32; 16];
        for w in want.iter_mut().skip(off as usize).take(4) {
            *w = 1.5;
        }
        let r = out.residual[0].row(patch);
        for i in 0..16 {
            assert!((r[i] - want[i]).abs() < 1e-5);
            assert!((r[16 + i] - want[i]).abs() < 1e-5);
        }
        let bg = (0..grid.n_patches()).find(|p| !grid.object_union().contains(p)).unwrap();
        assert!(out.residual[0].row(bg)[..32].iter().all(|v| v.abs() < 1e-5));
    }

    #[test]
    fn ablated_residual_equals_brute_force_means() {
        let model = aligned_edge_model(0.35).unwrap();
        let stimuli: Vec<Stimulus> = (0..6).map(|s| gen_bars(s, &BarsParams::default()).unwrap()).collect();
        let means = compute_head_means(&model, &stimuli, true).unwrap();
        let spec = HeadAblationSpec::new([DETECTOR], model.config()).unwrap();
        let opts = ForwardOptions { capture: Capture::ACTIVATIONS, ablate: Some(&spec), means: Some(&means), stop_after_layer: None };
        let out = forward(&model, &stimuli[0].image, &opts).unwrap();
        let plain = forward(&model, &stimuli[0].image, &ForwardOptions::capture(Capture::ACTIVATIONS)).unwrap();
        let h0 = DETECTOR.1 * model.config().head_dim();
        for tok in 0..196 {
            let (a, p) = (out.residual[1].row(tok), plain.residual[1].row(tok));
            // Embedding dims are untouched; detector dims hold the stored mean.
            assert_eq!(&a[..32], &p[..32]);
            let m = means.row(0, tok);
            for i in 0..16 {
                assert!((a[32 + i] - m[h0 + i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn reduced_end_to_end() {
        let exp = ToyExperiment { n_train: 40, n_test: 30, n_scoring: 4, t_values: (-4..=4).collect(), ..Default::default() };
        let o = run_experiment(&exp).unwrap();
        assert_eq!(o.selected, vec![DETECTOR]);
        let s = &o.curve.s;
        let zero = s.len() / 2;
        assert!(s[zero] > 1.0);
        assert!((1..=zero).all(|d| s[zero - d] <= s[zero - d + 1] && s[zero + d] <= s[zero + d - 1]));
        assert!(o.object.baseline > 0.9);
        assert!(o.selectivity() >= 0.2, "{o:?}");
    }
}
