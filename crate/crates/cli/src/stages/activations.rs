//! Residual activations of the patches used by probe pairs.
//!
//! Per variant and split: `{variant}_{split}.safetensors` holds one
//! `layer{l}` tensor of shape `[rows, width]`, and `{variant}_{split}_pairs.csv`
//! maps each pair to its two rows.

use std::collections::BTreeMap;

use gestalt_core::archive::{self, Metadata, TensorMap};
use gestalt_core::probe::{sample_pair_indices, PairIndex, PairSample};
use gestalt_core::stimulus::PatchGrid;
use gestalt_core::tensor::Tensor;
use gestalt_core::vit::{forward, Capture, ForwardOptions};
use gestalt_core::Error;
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate;
use crate::error::Result;
use crate::{table, Run, SPLITS, VARIANTS};

pub const DIR: &str = "activations";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub stimulus_id: String,
    pub patch_a: usize,
    pub patch_b: usize,
    pub same: bool,
    pub row_a: usize,
    pub row_b: usize,
}

struct StimulusActs {
    id: String,
    pairs: Vec<PairIndex>,
    patches: Vec<usize>,
    /// `[layer][patch] → vector`, in `patches` order.
    vectors: Vec<Vec<Vec<f32>>>,
}

pub fn run(run: &mut Run) -> Result<()> {
    let layers = run.probe_layers()?;
    let inputs = (
        run.digest("generate")?,
        run.model_identity()?,
        run.cfg.probe.pairs_per_image,
        run.cfg.probe.balance,
        &layers,
        run.seed,
    );
    run.stage("activations", DIR, &inputs, |run| {
        let model = run.model()?.clone();
        let cfg = model.config().clone();
        let last = *layers.last().expect("nonempty");
        for variant in VARIANTS {
            for split in SPLITS {
                let stimuli = generate::load(run, &format!("{variant}_{split}"))?;
                info!("activations: {variant}/{split} ({} stimuli)", stimuli.len());
                let (ppi, balance) = (run.cfg.probe.pairs_per_image, run.cfg.probe.balance);
                let per: Vec<Option<StimulusActs>> = stimuli
                    .par_iter()
                    .enumerate()
                    .map(|(i, s)| -> Result<Option<StimulusActs>> {
                        let grid = PatchGrid::new(s, cfg.patch_size as u32)?;
                        let seed = run.derive(&format!("pairs/{variant}/{split}/{i}"));
                        let pairs = match sample_pair_indices(&grid, seed, Some(ppi), balance) {
                            Ok(p) => p,
                            Err(Error::Skipped(why)) => {
                                warn!("skipping {}: {why}", s.id);
                                return Ok(None);
                            }
                            Err(e) => return Err(e.into()),
                        };
                        let mut patches: Vec<usize> = pairs.iter().flat_map(|p| [p.a, p.b]).collect();
                        patches.sort_unstable();
                        patches.dedup();
                        let opts = ForwardOptions { stop_after_layer: Some(last), ..ForwardOptions::capture(Capture::ACTIVATIONS) };
                        let out = forward(&model, &s.image, &opts)?;
                        let vectors = layers
                            .iter()
                            .map(|&l| patches.iter().map(|&p| out.residual[l].row(cfg.patch_offset() + p).to_vec()).collect())
                            .collect();
                        Ok(Some(StimulusActs { id: s.id.clone(), pairs, patches, vectors }))
                    })
                    .collect::<Result<Vec<_>>>()?;

                let mut rows: Vec<PairRow> = Vec::new();
                let mut data: Vec<Vec<f32>> = vec![Vec::new(); layers.len()];
                let mut next = 0usize;
                for a in per.into_iter().flatten() {
                    let index: BTreeMap<usize, usize> = a.patches.iter().enumerate().map(|(k, &p)| (p, next + k)).collect();
                    for p in &a.pairs {
                        rows.push(PairRow {
                            stimulus_id: a.id.clone(),
                            patch_a: p.a,
                            patch_b: p.b,
                            same: p.same,
                            row_a: index[&p.a],
                            row_b: index[&p.b],
                        });
                    }
                    for (li, vs) in a.vectors.into_iter().enumerate() {
                        for v in vs {
                            data[li].extend(v);
                        }
                    }
                    next += a.patches.len();
                }
                let mut tensors = TensorMap::new();
                for (li, &l) in layers.iter().enumerate() {
                    let d = std::mem::take(&mut data[li]);
                    tensors.insert(format!("layer{l}"), Tensor::new(vec![next, cfg.width], d)?);
                }
                let mut meta = Metadata::new();
                meta.insert("variant".into(), variant.into());
                meta.insert("split".into(), split.into());
                archive::write(&run.path(&format!("{DIR}/{variant}_{split}.safetensors")), &tensors, &meta)?;
                table::write(&run.path(&format!("{DIR}/{variant}_{split}_pairs.csv")), &rows)?;
            }
        }
        Ok(())
    })
}

pub fn load_pair_rows(run: &Run, variant: &str, split: &str) -> Result<Vec<PairRow>> {
    table::read(&run.path(&format!("{DIR}/{variant}_{split}_pairs.csv")))
}

/// Pair samples for one layer, in pair-table order.
pub fn load_pairs(run: &Run, variant: &str, split: &str, layer: usize) -> Result<Vec<PairSample>> {
    let rows = load_pair_rows(run, variant, split)?;
    let (tensors, _) = archive::read(&run.path(&format!("{DIR}/{variant}_{split}.safetensors")))?;
    let t = tensors
        .get(&format!("layer{layer}"))
        .ok_or_else(|| Error::MissingTensor(format!("layer{layer}")))?;
    Ok(rows
        .iter()
        .map(|r| PairSample {
            x: t.row(r.row_a).to_vec(),
            y: t.row(r.row_b).to_vec(),
            same: r.same,
            stimulus_id: r.stimulus_id.clone(),
            layer,
        })
        .collect())
}
