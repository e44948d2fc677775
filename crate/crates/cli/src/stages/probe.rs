//! Bilinear binding probes, one per (variant, layer).
//!
//! Probes are evaluated after rounding to `f32`, i.e. exactly as stored.

use gestalt_core::archive::Metadata;
use gestalt_core::plot::{self, Series};
use gestalt_core::probe::{eval_probe, train_probe, EpochLog, EvalReport, ProbeParams};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::activations;
use crate::error::Result;
use crate::{table, Run, VARIANTS};

pub const DIR: &str = "probe";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub variant: String,
    /// A layer index, or `majority` for the majority-class baseline.
    pub layer: String,
    pub n: usize,
    pub n_same: usize,
    pub accuracy: f64,
    pub same_accuracy: f64,
    pub different_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LogRow {
    variant: String,
    layer: usize,
    epoch: usize,
    lr: f64,
    loss: f64,
    accuracy: f64,
}

pub fn probe_path(variant: &str, layer: usize) -> String {
    format!("{DIR}/{variant}_layer{layer:02}.safetensors")
}

pub fn load_probe(run: &Run, variant: &str, layer: usize) -> Result<ProbeParams> {
    Ok(ProbeParams::load(&run.path(&probe_path(variant, layer)))?.0)
}

struct Trained {
    variant: &'static str,
    layer: usize,
    report: EvalReport,
    log: Vec<EpochLog>,
}

pub fn run(run: &mut Run) -> Result<()> {
    let layers = run.probe_layers()?;
    let inputs = (run.digest("activations")?, run.cfg.probe.train.clone(), &layers, run.seed);
    run.stage("probe", DIR, &inputs, |run| {
        let jobs: Vec<(&'static str, usize)> =
            VARIANTS.iter().flat_map(|v| layers.iter().map(move |&l| (*v, l))).collect();
        let run_ref: &Run = run;
        let trained = jobs
            .par_iter()
            .map(|&(variant, layer)| -> Result<Trained> {
                let train = activations::load_pairs(run_ref, variant, "train", layer)?;
                let test = activations::load_pairs(run_ref, variant, "test", layer)?;
                let mut cfg = run_ref.cfg.probe.train.clone();
                cfg.seed = run_ref.derive(&format!("probe/{variant}/{layer}"));
                let (params, log) = train_probe(&train, &cfg)?;
                let params = params.quantized();
                let report = eval_probe(&params, &test)?;
                info!("probe {variant} layer {layer}: test accuracy {:.4}", report.accuracy);
                let mut meta = Metadata::new();
                meta.insert("variant".into(), variant.into());
                meta.insert("layer".into(), layer.to_string());
                params.save(&run_ref.path(&probe_path(variant, layer)), &meta)?;
                Ok(Trained { variant, layer, report, log })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut acc = Vec::new();
        let mut logs = Vec::new();
        let mut series = Vec::new();
        for variant in VARIANTS {
            let mine: Vec<&Trained> = trained.iter().filter(|t| t.variant == variant).collect();
            for t in &mine {
                let r = &t.report;
                acc.push(AccuracyRow {
                    variant: variant.into(),
                    layer: t.layer.to_string(),
                    n: r.n,
                    n_same: r.n_same,
                    accuracy: r.accuracy,
                    same_accuracy: r.same_accuracy,
                    different_accuracy: r.different_accuracy,
                });
                logs.extend(t.log.iter().map(|e| LogRow {
                    variant: variant.into(),
                    layer: t.layer,
                    epoch: e.epoch,
                    lr: e.lr,
                    loss: e.loss,
                    accuracy: e.accuracy,
                }));
            }
            let r = &mine[0].report;
            acc.push(AccuracyRow {
                variant: variant.into(),
                layer: "majority".into(),
                n: r.n,
                n_same: r.n_same,
                accuracy: r.majority_baseline,
                same_accuracy: f64::NAN,
                different_accuracy: f64::NAN,
            });
            series.push(Series {
                label: variant.into(),
                points: mine.iter().map(|t| (t.layer as f64, t.report.accuracy)).collect(),
            });
        }
        table::write(&run.path(&format!("{DIR}/probe_accuracy.csv")), &acc)?;
        table::write(&run.path(&format!("{DIR}/training_log.csv")), &logs)?;
        let svg = plot::line_plot("Binding probe test accuracy", &series, "layer", "accuracy")?;
        std::fs::write(run.path(&format!("{DIR}/probe_accuracy.svg")), svg)?;
        Ok(())
    })
}
