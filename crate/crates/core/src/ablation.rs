//! Mean-ablation of selected heads and its effect on binding-probe accuracy.

use std::collections::BTreeSet;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::continuity::HeadScoreMatrix;
use crate::error::{Error, Result};
use crate::probe::{eval_probe, gather_pairs, EvalReport, PairIndex, PairSample, ProbeParams};
use crate::seed;
use crate::stats;
use crate::stimulus::Stimulus;
use crate::vit::{forward, Capture, ForwardOptions, HeadAblationSpec, HeadMeanStore, ViTModel};

pub type Head = (usize, usize);

/// The `k` highest-scoring heads in layers `0..=up_to_layer`, ties broken
/// by lower `(layer, head)`. `k = 0` selects nothing.
pub fn select_top_heads(scores: &HeadScoreMatrix, k: usize, up_to_layer: usize) -> Result<Vec<Head>> {
    if up_to_layer >= scores.layers {
        return Err(Error::InvalidParam(format!("layer {up_to_layer} is outside a {}-layer matrix", scores.layers)));
    }
    let mut all: Vec<(f64, Head)> = (0..=up_to_layer)
        .flat_map(|l| (0..scores.heads).map(move |h| (l, h)))
        .map(|(l, h)| (scores.get(l, h), (l, h)))
        .collect();
    if k > all.len() {
        return Err(Error::InvalidParam(format!("{k} heads requested but only {} available", all.len())));
    }
    if all.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::Numeric("NaN head score".into()));
    }
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut top: Vec<Head> = all.into_iter().take(k).map(|(_, h)| h).collect();
    top.sort_unstable();
    Ok(top)
}

fn per_layer_counts(set: &[Head], layers: usize) -> Vec<usize> {
    let mut c = vec![0; layers];
    for &(l, _) in set {
        c[l] += 1;
    }
    c
}

/// `n` random head sets with the reference's per-layer head counts, drawn
/// uniformly without replacement within each layer. The reference itself is
/// excluded unless it is the only set with those counts.
pub fn random_control_sets(reference: &[Head], layers: usize, heads: usize, n: usize, seed: u64) -> Result<Vec<Vec<Head>>> {
    if reference.is_empty() {
        return Err(Error::InvalidParam("control sets need a nonempty reference".into()));
    }
    let uniq: BTreeSet<Head> = reference.iter().copied().collect();
    if uniq.len() != reference.len() || uniq.iter().any(|&(l, h)| l >= layers || h >= heads) {
        return Err(Error::InvalidParam("reference heads must be distinct and inside the model".into()));
    }
    let counts = per_layer_counts(reference, layers);
    let forced = counts.iter().all(|&c| c == 0 || c == heads);
    let reference_sorted: Vec<Head> = uniq.into_iter().collect();
    let mut rng = seed::rng(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut set: Vec<Head> = Vec::with_capacity(reference.len());
        for (l, &c) in counts.iter().enumerate() {
            if c > 0 {
                set.extend(index::sample(&mut rng, heads, c).into_iter().map(|h| (l, h)));
            }
        }
        set.sort_unstable();
        if forced || set != reference_sorted {
            out.push(set);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Object,
    ScrambledOrientation,
    ScrambledLocation,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Object, Variant::ScrambledOrientation, Variant::ScrambledLocation];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Object => "object",
            Variant::ScrambledOrientation => "scrambled_orientation",
            Variant::ScrambledLocation => "scrambled_location",
        }
    }
}

/// A stimulus with the patch pairs it contributes to evaluation.
#[derive(Debug, Clone)]
pub struct EvalItem<'a> {
    pub stimulus: &'a Stimulus,
    pub pairs: Vec<PairIndex>,
}

/// Probe pairs at layer `layer`, optionally under a head ablation.
pub fn layer_pairs(
    model: &ViTModel,
    items: &[EvalItem],
    layer: usize,
    ablation: Option<(&HeadAblationSpec, &HeadMeanStore)>,
) -> Result<Vec<PairSample>> {
    let cfg = model.config();
    if layer >= cfg.n_layers {
        return Err(Error::InvalidParam(format!("layer {layer} is outside the model")));
    }
    let per_item = crate::par::try_map(items, |it| -> Result<Vec<PairSample>> {
        if it.pairs.is_empty() {
            return Ok(Vec::new());
        }
        let opts = ForwardOptions {
            capture: Capture::ACTIVATIONS,
            ablate: ablation.map(|a| a.0),
            means: ablation.map(|a| a.1),
            stop_after_layer: Some(layer),
        };
        let out = forward(model, &it.stimulus.image, &opts)?;
        Ok(gather_pairs(&out.residual[layer], cfg.patch_offset(), &it.pairs, &it.stimulus.id, layer))
    })?;
    Ok(per_item.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub layer: usize,
    pub heads: Vec<Head>,
    pub variant: Variant,
    pub baseline: f64,
    pub ablated: f64,
    pub delta: f64,
}

/// Accuracy drop of a fixed probe when `heads` are mean-ablated.
/// `baseline` may carry a precomputed unablated evaluation.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    probe: &ProbeParams,
    model: &ViTModel,
    heads: &[Head],
    means: &HeadMeanStore,
    items: &[EvalItem],
    layer: usize,
    variant: Variant,
    baseline: Option<&EvalReport>,
) -> Result<AblationRun> {
    if let Some(&(l, h)) = heads.iter().find(|(l, _)| *l > layer) {
        return Err(Error::InvalidParam(format!(
            "head ({l}, {h}) lies after the probed layer {layer}"
        )));
    }
    let spec = HeadAblationSpec::new(heads.iter().copied(), model.config())?;
    let base = match baseline {
        Some(b) => *b,
        None => eval_probe(probe, &layer_pairs(model, items, layer, None)?)?,
    };
    let ablated = if spec.is_empty() {
        base
    } else {
        eval_probe(probe, &layer_pairs(model, items, layer, Some((&spec, means)))?)?
    };
    Ok(AblationRun {
        layer,
        heads: spec.heads().collect(),
        variant,
        baseline: base.accuracy,
        ablated: ablated.accuracy,
        delta: base.accuracy - ablated.accuracy,
    })
}

/// `Δ_ablate` of one head set on each dataset variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantDeltas {
    pub object: f64,
    pub scrambled_orientation: f64,
    pub scrambled_location: f64,
}

impl VariantDeltas {
    pub fn selectivity_orientation(&self) -> f64 {
        self.object - self.scrambled_orientation
    }

    pub fn selectivity_location(&self) -> f64 {
        self.object - self.scrambled_location
    }

    /// Selectivity against the stronger of the two scrambles.
    pub fn selectivity(&self) -> f64 {
        self.object - self.scrambled_orientation.max(self.scrambled_location)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDeltas {
    pub layer: usize,
    pub reference: VariantDeltas,
    pub controls: Vec<VariantDeltas>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivityRecord {
    pub layer: usize,
    pub delta_object: f64,
    pub delta_scrambled_orientation: f64,
    pub delta_scrambled_location: f64,
    pub selectivity_orientation: f64,
    pub selectivity_location: f64,
    pub selectivity: f64,
    pub control_selectivities: Vec<f64>,
    pub control_q1: f64,
    pub control_q3: f64,
    /// Continuity-head selectivity above the controls' upper quartile.
    pub exceeds_controls: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivityReport {
    pub records: Vec<SelectivityRecord>,
    /// Layer with the largest selectivity (lowest layer on ties).
    pub best_layer: usize,
}

pub fn selectivity_report(layers: &[LayerDeltas]) -> Result<SelectivityReport> {
    if layers.is_empty() {
        return Err(Error::Empty("no layers to report".into()));
    }
    let mut records = Vec::with_capacity(layers.len());
    for ld in layers {
        let r = &ld.reference;
        let vals = [r.object, r.scrambled_orientation, r.scrambled_location];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite delta at layer {}", ld.layer)));
        }
        let control_selectivities: Vec<f64> = ld.controls.iter().map(|c| c.selectivity()).collect();
        let (control_q1, control_q3) = if control_selectivities.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            stats::iqr_bounds(&control_selectivities)?
        };
        let selectivity = r.selectivity();
        records.push(SelectivityRecord {
            layer: ld.layer,
            delta_object: r.object,
            delta_scrambled_orientation: r.scrambled_orientation,
            delta_scrambled_location: r.scrambled_location,
            selectivity_orientation: r.selectivity_orientation(),
            selectivity_location: r.selectivity_location(),
            selectivity,
            exceeds_controls: !control_selectivities.is_empty() && selectivity > control_q3,
            control_selectivities,
            control_q1,
            control_q3,
        });
    }
    let best_layer = records
        .iter()
        .fold(None::<&SelectivityRecord>, |best, r| match best {
            Some(b) if b.selectivity >= r.selectivity => Some(b),
            _ => Some(r),
        })
        .expect("nonempty")
        .layer;
    Ok(SelectivityReport { records, best_layer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(scores: Vec<f64>, layers: usize, heads: usize) -> HeadScoreMatrix {
        HeadScoreMatrix::new(layers, heads, scores).unwrap()
    }

    #[test]
    fn top_heads_tie_break_and_single_winner() {
        let m = matrix(vec![1.0; 144], 12, 12);
        assert_eq!(select_top_heads(&m, 5, 11).unwrap(), vec![(0, 0), (0, 1), (0, 2), (0, 3), (0, 4)]);
        let mut s = vec![1.0; 144];
        s[7 * 12 + 3] = 10.0;
        assert_eq!(select_top_heads(&matrix(s.clone(), 12, 12), 1, 11).unwrap(), vec![(7, 3)]);
        assert_eq!(select_top_heads(&matrix(s, 12, 12), 1, 6).unwrap(), vec![(0, 0)]);
        assert!(select_top_heads(&m, 13, 0).is_err());
        assert!(select_top_heads(&m, 0, 3).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn top_heads_match_full_sort(scores in proptest::collection::vec(0u8..6, 48), k in 1usize..10, upto in 0usize..4) {
            let m = matrix(scores.iter().map(|v| *v as f64).collect(), 4, 12);
            let got = select_top_heads(&m, k, upto).unwrap();
            // Oracle: sort keys (−score, layer, head) and take k.
            let mut keys: Vec<(i64, usize, usize)> = (0..=upto)
                .flat_map(|l| (0..12).map(move |h| (l, h)))
                .map(|(l, h)| (-(scores[l * 12 + h] as i64), l, h))
                .collect();
            keys.sort();
            let mut want: Vec<Head> = keys.into_iter().take(k).map(|(_, l, h)| (l, h)).collect();
            want.sort();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn control_sets_match_counts(picks in proptest::collection::btree_set((0usize..6, 0usize..12), 1..8), seed in any::<u64>()) {
            let reference: Vec<Head> = picks.into_iter().collect();
            let sets = random_control_sets(&reference, 6, 12, 20, seed).unwrap();
            prop_assert_eq!(sets.len(), 20);
            for s in &sets {
                prop_assert_eq!(per_layer_counts(s, 6), per_layer_counts(&reference, 6));
                prop_assert_ne!(s, &reference);
                let u: BTreeSet<_> = s.iter().collect();
                prop_assert_eq!(u.len(), s.len());
            }
            prop_assert_eq!(random_control_sets(&reference, 6, 12, 20, seed).unwrap(), sets);
        }
    }

    #[test]
    fn full_layer_reference_is_forced() {
        let reference: Vec<Head> = (0..4).map(|h| (2, h)).collect();
        let sets = random_control_sets(&reference, 3, 4, 20, 1).unwrap();
        assert!(sets.iter().all(|s| *s == reference));
        assert!(random_control_sets(&[], 3, 4, 20, 1).is_err());
    }

    fn deltas(o: f64, so: f64, sl: f64) -> VariantDeltas {
        VariantDeltas { object: o, scrambled_orientation: so, scrambled_location: sl }
    }

    #[test]
    fn selectivity_cases() {
        assert_eq!(deltas(0.2, 0.2, 0.1).selectivity_orientation(), 0.0);
        let d = deltas(0.3, 0.1, 0.05);
        let swapped = deltas(0.1, 0.3, 0.05);
        assert_eq!(d.selectivity_orientation(), -swapped.selectivity_orientation());

        let c = 0.05;
        let layers = vec![
            LayerDeltas { layer: 0, reference: deltas(c + 1e-3, 0.0, 0.0), controls: vec![deltas(c, 0.0, 0.0); 20] },
            LayerDeltas { layer: 1, reference: deltas(0.3, 0.1, 0.0), controls: vec![deltas(0.5, 0.0, 0.0); 20] },
        ];
        let r = selectivity_report(&layers).unwrap();
        assert!(r.records[0].exceeds_controls);
        assert!(!r.records[1].exceeds_controls);
        assert_eq!(r.records[0].control_selectivities.len(), 20);
        assert_eq!(r.best_layer, 1);
    }

    #[test]
    fn iqr_of_twenty_controls() {
        // Hand type-7: sorted 0.01..0.20, Q1 at h = 4.75 → 0.0575, Q3 at
        // h = 14.25 → 0.1525.
        let controls: Vec<VariantDeltas> = (1..=20).map(|i| deltas(i as f64 / 100.0, 0.0, 0.0)).collect();
        let r = selectivity_report(&[LayerDeltas { layer: 3, reference: deltas(0.0, 0.0, 0.0), controls }]).unwrap();
        assert!((r.records[0].control_q1 - 0.0575).abs() < 1e-12);
        assert!((r.records[0].control_q3 - 0.1525).abs() < 1e-12);
    }
}
