//! Continuity sensitivity: how much more attention neighbouring perimeter
//! patches pay to a target patch when its content continues their edges
//! than when the same content is rotated.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::stats::{self, Correlation};
use crate::stimulus::{control_rotation, make_trajectory, PatchGrid, Stimulus, StimulusKind, TrajectoryOptions, TrajectoryVariant};
use crate::vit::{forward, AttentionRecord, Capture, ForwardOptions, ViTModel};

/// 8-adjacent patches of `target` that are perimeter patches of `object`.
/// An empty result means the target cannot be scored.
pub fn neighbor_set(grid: &PatchGrid, target: usize, object: usize) -> Vec<usize> {
    let Some(perim) = grid.perimeter_patches.get(object) else {
        return Vec::new();
    };
    grid.neighbors8(target).into_iter().filter(|n| perim.contains(n)).collect()
}

/// Largest attention from any neighbour (query) to the target (key).
pub fn max_neighbor_attention(
    attn: &AttentionRecord,
    layer: usize,
    head: usize,
    neighbors: &[usize],
    target: usize,
    patch_offset: usize,
) -> Result<f64> {
    if neighbors.is_empty() {
        return Err(Error::Skipped("target has no neighbouring perimeter patches".into()));
    }
    let key = patch_offset + target;
    Ok(neighbors
        .iter()
        .map(|&n| attn.at(layer, head, patch_offset + n, key) as f64)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// `max(base / control, 1)`. A control of exactly zero is treated as the
/// smallest positive `f32`, the resolution of the attention weights.
pub fn sensitivity_ratio(base: f64, control: f64) -> f64 {
    let c = control.max(f32::MIN_POSITIVE as f64);
    (base / c).max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean over targets within each image, then over images.
    #[default]
    PerImage,
    /// One mean over every scored (image, target).
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinuityOptions {
    pub trajectory: TrajectoryOptions,
    pub seed: u64,
    /// Score at most this many (randomly chosen) targets per image.
    pub max_targets: Option<usize>,
    pub aggregation: Aggregation,
}

impl Default for ContinuityOptions {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryOptions::default(),
            seed: 0,
            max_targets: None,
            aggregation: Aggregation::PerImage,
        }
    }
}

/// Per-image ratios summed over targets, for every `(t, layer, head)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusScores {
    pub stimulus_id: String,
    pub t_values: Vec<i64>,
    pub n_targets: usize,
    /// `(target patch, quarter turns)` of each rotated control; ingested
    /// stimuli record 0 because both rotations are evaluated.
    pub rotations: Vec<(usize, u8)>,
    /// `[t][layer][head]` sums of floored ratios over targets.
    pub sums: Vec<f64>,
    /// Same layout: sums of the unfloored `ln(base / control)`.
    pub log_ratio_sums: Vec<f64>,
}

fn targets(stim: &Stimulus, grid: &PatchGrid, opts: &ContinuityOptions) -> Vec<(usize, Vec<usize>)> {
    let mut out: Vec<(usize, Vec<usize>)> = Vec::new();
    for (k, perim) in grid.perimeter_patches.iter().enumerate() {
        for &p in perim {
            if out.iter().any(|(q, _)| *q == p) {
                continue;
            }
            let n = neighbor_set(grid, p, k);
            if !n.is_empty() {
                out.push((p, n));
            }
        }
    }
    if let Some(cap) = opts.max_targets {
        if out.len() > cap {
            let mut rng = seed::child_rng(opts.seed, &format!("targets/{}", stim.id));
            out.shuffle(&mut rng);
            out.truncate(cap);
            out.sort_by_key(|(p, _)| *p);
        }
    }
    out
}

fn attention(model: &ViTModel, image: &image::RgbImage) -> Result<AttentionRecord> {
    Ok(forward(model, image, &ForwardOptions::capture(Capture::ATTENTION))?
        .attention
        .expect("attention captured"))
}

/// Scores every head of `model` on one stimulus at each displacement.
/// Ingested stimuli are scored at `t = 0` only, against the rotation that
/// draws more neighbour attention.
pub fn stimulus_scores(model: &ViTModel, stim: &Stimulus, t_values: &[i64], opts: &ContinuityOptions) -> Result<StimulusScores> {
    let cfg = model.config();
    let ingested = stim.kind == StimulusKind::Ingested;
    let t_values: Vec<i64> = if ingested { vec![0] } else { t_values.to_vec() };
    let grid = PatchGrid::new(stim, cfg.patch_size as u32)?;
    let tgts = targets(stim, &grid, opts);
    if tgts.is_empty() {
        return Err(Error::Skipped(format!("`{}` has no scorable perimeter patch", stim.id)));
    }
    let (nl, nh, off) = (cfg.n_layers, cfg.n_heads, cfg.patch_offset());
    let per_t = nl * nh;
    let mut sums = vec![0.0; t_values.len() * per_t];
    let mut log_ratio_sums = vec![0.0; t_values.len() * per_t];
    let mut rotations = Vec::with_capacity(tgts.len());
    let base_attn = if t_values.contains(&0) { Some(attention(model, &stim.image)?) } else { None };

    for (target, neighbors) in &tgts {
        let turns: Vec<u8> = if ingested {
            vec![1, 3]
        } else {
            vec![control_rotation(opts.seed, &stim.id, *target)]
        };
        rotations.push((*target, if ingested { 0 } else { turns[0] }));
        for (ti, &t) in t_values.iter().enumerate() {
            let aligned = if t == 0 {
                None
            } else {
                let tr = make_trajectory(stim, &grid, *target, t, TrajectoryVariant::Aligned, &opts.trajectory)?;
                Some(attention(model, &tr.image)?)
            };
            let aligned = aligned.as_ref().or(base_attn.as_ref()).expect("base attention computed for t = 0");
            let controls = turns
                .iter()
                .map(|&q| {
                    let tr = make_trajectory(stim, &grid, *target, t, TrajectoryVariant::RotatedControl(q), &opts.trajectory)?;
                    attention(model, &tr.image)
                })
                .collect::<Result<Vec<_>>>()?;
            for l in 0..nl {
                for h in 0..nh {
                    let base = max_neighbor_attention(aligned, l, h, neighbors, *target, off)?;
                    let mut control = f64::NEG_INFINITY;
                    for c in &controls {
                        control = control.max(max_neighbor_attention(c, l, h, neighbors, *target, off)?);
                    }
                    let i = ti * per_t + l * nh + h;
                    sums[i] += sensitivity_ratio(base, control);
                    log_ratio_sums[i] += (base / control.max(f32::MIN_POSITIVE as f64)).ln();
                }
            }
        }
    }
    Ok(StimulusScores {
        stimulus_id: stim.id.clone(),
        t_values,
        n_targets: tgts.len(),
        rotations,
        sums,
        log_ratio_sums,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadScoreMatrix {
    pub layers: usize,
    pub heads: usize,
    /// Row-major `[layer][head]`.
    pub scores: Vec<f64>,
    pub n_stimuli: usize,
    pub n_skipped: usize,
}

impl HeadScoreMatrix {
    pub fn new(layers: usize, heads: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != layers * heads {
            return Err(Error::DimensionMismatch(format!(
                "{} scores for a {layers}x{heads} matrix",
                scores.len()
            )));
        }
        Ok(Self { layers, heads, scores, n_stimuli: 0, n_skipped: 0 })
    }

    pub fn get(&self, layer: usize, head: usize) -> f64 {
        self.scores[layer * self.heads + head]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub layer: usize,
    pub head: usize,
    pub t: Vec<i64>,
    pub s: Vec<f64>,
    pub n: usize,
}

/// Aggregated scores of a dataset at several displacements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScores {
    pub t_values: Vec<i64>,
    pub layers: usize,
    pub heads: usize,
    /// `[t][layer][head]` means.
    pub means: Vec<f64>,
    /// Means of the unfloored log ratios, aggregated the same way.
    pub log_ratio_means: Vec<f64>,
    pub n_stimuli: usize,
    pub n_skipped: usize,
    /// Scored stimuli in content-hash order (the accumulation order).
    pub per_stimulus: Vec<StimulusScores>,
}

impl DatasetScores {
    pub fn matrix_at(&self, t: i64) -> Result<HeadScoreMatrix> {
        let ti = self
            .t_values
            .iter()
            .position(|&v| v == t)
            .ok_or_else(|| Error::InvalidParam(format!("t = {t} was not scored")))?;
        let per = self.layers * self.heads;
        Ok(HeadScoreMatrix {
            layers: self.layers,
            heads: self.heads,
            scores: self.means[ti * per..(ti + 1) * per].to_vec(),
            n_stimuli: self.n_stimuli,
            n_skipped: self.n_skipped,
        })
    }

    pub fn curve(&self, layer: usize, head: usize) -> SensitivityCurve {
        let per = self.layers * self.heads;
        SensitivityCurve {
            layer,
            head,
            t: self.t_values.clone(),
            s: (0..self.t_values.len()).map(|ti| self.means[ti * per + layer * self.heads + head]).collect(),
            n: self.n_stimuli,
        }
    }
}

/// Scores every head over `stimuli` at each `t`. Skipped stimuli are
/// excluded and counted; ingested stimuli contribute to `t = 0` only.
pub fn score_dataset(model: &ViTModel, stimuli: &[Stimulus], t_values: &[i64], opts: &ContinuityOptions) -> Result<DatasetScores> {
    if stimuli.is_empty() {
        return Err(Error::Empty("continuity scoring needs at least one stimulus".into()));
    }
    if t_values.is_empty() {
        return Err(Error::InvalidParam("no displacements requested".into()));
    }
    let cfg = model.config();
    let per = cfg.n_layers * cfg.n_heads;
    let results = crate::par::map(stimuli, |s| match stimulus_scores(model, s, t_values, opts) {
        Ok(r) => Ok(Some(r)),
        Err(Error::Skipped(_)) => Ok(None),
        Err(e) => Err(e),
    });
    let mut scored = Vec::new();
    let mut n_skipped = 0;
    for (r, stim) in results.into_iter().zip(stimuli) {
        match r? {
            Some(s) => scored.push((stim.content_hash(), s)),
            None => n_skipped += 1,
        }
    }
    // Accumulate in content order so permuting the dataset is bit-neutral.
    scored.sort_by(|a, b| a.0.cmp(&b.0));
    let scored: Vec<StimulusScores> = scored.into_iter().map(|(_, s)| s).collect();
    if scored.is_empty() {
        return Err(Error::Skipped("every stimulus was skipped".into()));
    }
    let aggregate = |pick: fn(&StimulusScores) -> &[f64]| {
        let mut means = vec![0.0; t_values.len() * per];
        for (ti, &t) in t_values.iter().enumerate() {
            let mut acc = vec![0.0; per];
            let mut denom = 0.0;
            for s in &scored {
                let Some(si) = s.t_values.iter().position(|&v| v == t) else { continue };
                let block = &pick(s)[si * per..(si + 1) * per];
                let (scale, weight) = match opts.aggregation {
                    Aggregation::PerImage => (1.0 / s.n_targets as f64, 1.0),
                    Aggregation::Pooled => (1.0, s.n_targets as f64),
                };
                for (a, v) in acc.iter_mut().zip(block) {
                    *a += v * scale;
                }
                denom += weight;
            }
            for (m, a) in means[ti * per..(ti + 1) * per].iter_mut().zip(&acc) {
                *m = if denom > 0.0 { a / denom } else { f64::NAN };
            }
        }
        means
    };
    let means = aggregate(|s| &s.sums);
    let log_ratio_means = aggregate(|s| &s.log_ratio_sums);
    Ok(DatasetScores {
        t_values: t_values.to_vec(),
        layers: cfg.n_layers,
        heads: cfg.n_heads,
        means,
        log_ratio_means,
        n_stimuli: scored.len(),
        n_skipped,
        per_stimulus: scored,
    })
}

/// `S(0)` for every head.
pub fn head_scores(model: &ViTModel, stimuli: &[Stimulus], opts: &ContinuityOptions) -> Result<HeadScoreMatrix> {
    score_dataset(model, stimuli, &[0], opts)?.matrix_at(0)
}

/// `S(t)` of one head over `t_values`, which must include 0.
pub fn tuning_curve(
    model: &ViTModel,
    layer: usize,
    head: usize,
    stimuli: &[Stimulus],
    t_values: &[i64],
    opts: &ContinuityOptions,
) -> Result<SensitivityCurve> {
    if !t_values.contains(&0) {
        return Err(Error::InvalidParam("tuning curves must include t = 0".into()));
    }
    let cfg = model.config();
    if layer >= cfg.n_layers || head >= cfg.n_heads {
        return Err(Error::InvalidParam(format!("head ({layer}, {head}) is outside the model")));
    }
    Ok(score_dataset(model, stimuli, t_values, opts)?.curve(layer, head))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pearson: Correlation,
    pub spearman: Correlation,
}

/// Correlates two score matrices over their flattened entries.
pub fn correlate_scores(a: &HeadScoreMatrix, b: &HeadScoreMatrix) -> Result<CorrelationReport> {
    if (a.layers, a.heads) != (b.layers, b.heads) {
        return Err(Error::DimensionMismatch("score matrices differ in shape".into()));
    }
    Ok(CorrelationReport {
        pearson: stats::pearson(&a.scores, &b.scores)?,
        spearman: stats::spearman(&a.scores, &b.scores)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stimulus::{gen_blob, BlobParams, Mask};
    use crate::vit::{init_untrained, ViTConfig};
    use proptest::prelude::*;

    fn grid_of(mask: Mask, patch: u32) -> PatchGrid {
        PatchGrid::from_masks(&[mask], 224, 224, patch).unwrap()
    }

    #[test]
    fn horizontal_edge_middle_patch_has_two_neighbors() {
        // Object fills rows 0..40: its boundary runs through patch row 2
        // (pixels 32..48) at p = 16.
        let g = grid_of(Mask::from_fn(224, 224, |x, y| y < 40 && (16..64).contains(&x)), 16);
        let mid = g.index(2, 2);
        // Oracle: scan the 8 neighbours for mixed pixels directly.
        let mask = Mask::from_fn(224, 224, |x, y| y < 40 && (16..64).contains(&x));
        let mixed = |p: usize| {
            let (x0, y0, s) = g.rect(p);
            let on = (0..s * s).filter(|i| mask.get(x0 + i % s, y0 + i / s)).count() as u32;
            on > 0 && on < s * s
        };
        let oracle: Vec<usize> = g.neighbors8(mid).into_iter().filter(|&n| mixed(n)).collect();
        let n = neighbor_set(&g, mid, 0);
        assert_eq!(n, oracle);
        let same_row: Vec<usize> = n.iter().copied().filter(|&p| g.row_col(p).0 == 2).collect();
        assert_eq!(same_row, vec![g.index(2, 1), g.index(2, 3)]);
    }

    #[test]
    fn corner_and_isolated_targets() {
        let g = grid_of(Mask::from_fn(224, 224, |x, y| x < 40 && y < 40), 32);
        assert!(neighbor_set(&g, 0, 0).len() <= 3);
        let iso = grid_of(Mask::from_fn(224, 224, |x, y| (100..104).contains(&x) && (100..104).contains(&y)), 32);
        assert!(neighbor_set(&iso, iso.perimeter_patches[0][0], 0).is_empty());
    }

    fn record(tokens: usize, rows: Vec<Vec<f32>>) -> AttentionRecord {
        AttentionRecord::from_parts(1, 1, tokens, rows.into_iter().flatten().collect()).unwrap()
    }

    #[test]
    fn max_attention_cases() {
        let uniform = record(4, vec![vec![0.25; 4]; 4]);
        assert_eq!(max_neighbor_attention(&uniform, 0, 0, &[1, 2], 0, 0).unwrap(), 0.25);
        let onehot = record(3, vec![vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]);
        assert_eq!(max_neighbor_attention(&onehot, 0, 0, &[1, 2], 0, 0).unwrap(), 1.0);
        // Hand logits per query row: softmax([2, 1, 0]) and softmax([0, 0, 3]).
        let sm = |l: [f64; 3]| {
            let z: f64 = l.iter().map(|v| v.exp()).sum();
            l.map(|v| (v.exp() / z) as f32)
        };
        let rows = vec![sm([0.0, 0.0, 0.0]).to_vec(), sm([2.0, 1.0, 0.0]).to_vec(), sm([0.0, 0.0, 3.0]).to_vec()];
        let r = record(3, rows);
        let want = (2f64.exp() / (2f64.exp() + 1f64.exp() + 1.0)).max(1.0 / (2.0 + 3f64.exp()));
        assert!((max_neighbor_attention(&r, 0, 0, &[1, 2], 0, 0).unwrap() - want).abs() < 1e-6);
        assert!(max_neighbor_attention(&r, 0, 0, &[], 0, 0).is_err());
    }

    #[test]
    fn ratio_cases() {
        assert_eq!(sensitivity_ratio(0.3, 0.3), 1.0);
        assert!((sensitivity_ratio(0.8, 0.1) - 8.0).abs() < 1e-12);
        assert_eq!(sensitivity_ratio(0.1, 0.8), 1.0);
    }

    proptest! {
        #[test]
        fn floor_law(base in 1e-6f64..1.0, control in 1e-6f64..1.0) {
            let s = sensitivity_ratio(base, control);
            prop_assert!(s >= 1.0);
            if base >= control {
                prop_assert!((s - base / control).abs() <= 1e-9 * (base / control));
            }
        }
    }

    fn tiny_model() -> ViTModel {
        init_untrained(
            3,
            ViTConfig { patch_size: 32, n_layers: 2, n_heads: 2, width: 16, mlp_ratio: 2, ..ViTConfig::vit_b(32) },
        )
        .unwrap()
    }

    #[test]
    fn dataset_scores_are_floored_and_order_free() {
        let m = tiny_model();
        let data: Vec<Stimulus> = (0..3).map(|i| gen_blob(i, &BlobParams::default()).unwrap()).collect();
        let opts = ContinuityOptions { max_targets: Some(3), ..Default::default() };
        let a = score_dataset(&m, &data, &[-8, 0, 8], &opts).unwrap();
        assert!(a.means.iter().all(|v| *v >= 1.0 && v.is_finite()));
        let mut rev = data.clone();
        rev.reverse();
        let b = score_dataset(&m, &rev, &[-8, 0, 8], &opts).unwrap();
        assert_eq!(a.matrix_at(0).unwrap().scores, b.matrix_at(0).unwrap().scores);
        let single = head_scores(&m, &data[..1], &opts).unwrap();
        let direct = stimulus_scores(&m, &data[0], &[0], &opts).unwrap();
        for (s, d) in single.scores.iter().zip(&direct.sums) {
            assert!((s - d / direct.n_targets as f64).abs() < 1e-12);
        }
        assert!(tuning_curve(&m, 0, 0, &data, &[4], &opts).is_err());
    }

    #[test]
    fn shapeless_stimuli_are_skipped() {
        let m = tiny_model();
        let mut s = gen_blob(1, &BlobParams::default()).unwrap();
        s.object_masks = vec![Mask::from_fn(224, 224, |x, y| (100..104).contains(&x) && (100..104).contains(&y))];
        assert!(matches!(score_dataset(&m, &[s.clone()], &[0], &Default::default()), Err(Error::Skipped(_))));
        let ok = gen_blob(2, &BlobParams::default()).unwrap();
        let r = score_dataset(&m, &[s, ok], &[0], &Default::default()).unwrap();
        assert_eq!((r.n_stimuli, r.n_skipped), (1, 1));
    }

    #[test]
    fn self_correlation_is_exact() {
        let v: Vec<f64> = (0..144).map(|i| 1.0 + ((i * 7) % 13) as f64).collect();
        let a = HeadScoreMatrix::new(12, 12, v).unwrap();
        let r = correlate_scores(&a, &a).unwrap();
        assert_eq!(r.pearson.coefficient, 1.0);
        assert_eq!(r.spearman.coefficient, 1.0);
    }
}
