//! Mean-ablation of the highest-`S(0)` heads against random control sets.
//!
//! At each ablation layer `L` the reference set is the top-`k` heads of
//! layers `0..=L`; each control set draws the same number of heads per
//! layer. The probes trained at `L` are held fixed; only the forward pass
//! changes.

use std::collections::BTreeMap;

use gestalt_core::ablation::{
    layer_pairs, random_control_sets, run_ablation, select_top_heads, selectivity_report, EvalItem, Head, LayerDeltas, Variant,
    VariantDeltas,
};
use gestalt_core::plot::{self, BarGroup};
use gestalt_core::probe::{eval_probe, PairIndex};
use gestalt_core::stimulus::Stimulus;
use gestalt_core::vit::compute_head_means;
use log::info;
use serde::{Deserialize, Serialize};

use super::{activations, continuity, generate, probe};
use crate::error::{CliError, Result};
use crate::table::{self, heads_field};
use crate::Run;

pub const DIR: &str = "ablation";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub layer: usize,
    /// `reference` or `control{i}`.
    pub set: String,
    pub variant: String,
    pub heads: String,
    pub baseline: f64,
    pub ablated: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivityRow {
    pub layer: usize,
    pub delta_object: f64,
    pub delta_scrambled_orientation: f64,
    pub delta_scrambled_location: f64,
    pub selectivity_orientation: f64,
    pub selectivity_location: f64,
    pub selectivity: f64,
    pub n_controls: usize,
    pub control_q1: f64,
    pub control_q3: f64,
    pub exceeds_controls: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRow {
    pub layer: usize,
    pub control: usize,
    pub heads: String,
    pub selectivity: f64,
}

/// Test stimuli of one variant with the pairs the probe stage scored.
fn eval_set(run: &Run, variant: &str) -> Result<Vec<(Stimulus, Vec<PairIndex>)>> {
    let mut stimuli = generate::load(run, &format!("{variant}_test"))?;
    if let Some(n) = run.cfg.ablation.test_images {
        stimuli.truncate(n);
    }
    let mut by_id: BTreeMap<String, Vec<PairIndex>> = BTreeMap::new();
    for r in activations::load_pair_rows(run, variant, "test")? {
        by_id.entry(r.stimulus_id).or_default().push(PairIndex { a: r.patch_a, b: r.patch_b, same: r.same });
    }
    let out: Vec<_> = stimuli
        .into_iter()
        .filter_map(|s| by_id.remove(&s.id).map(|p| (s, p)))
        .collect();
    if out.is_empty() {
        return Err(CliError::Data(format!("no scorable {variant} test stimuli for ablation")));
    }
    Ok(out)
}

fn deltas(by_variant: &BTreeMap<Variant, f64>) -> VariantDeltas {
    VariantDeltas {
        object: by_variant[&Variant::Object],
        scrambled_orientation: by_variant[&Variant::ScrambledOrientation],
        scrambled_location: by_variant[&Variant::ScrambledLocation],
    }
}

pub fn run(run: &mut Run) -> Result<()> {
    let layers = run.ablation_layers()?;
    let inputs = (
        run.digest("generate")?,
        run.digest("activations")?,
        run.digest("probe")?,
        run.digest("continuity")?,
        run.model_identity()?,
        run.cfg.ablation.clone(),
        &layers,
        run.seed,
    );
    run.stage("ablate", DIR, &inputs, |run| {
        let model = run.model()?.clone();
        let cfg = model.config().clone();
        let k = run.cfg.ablation.k;
        let n_controls = run.cfg.ablation.n_controls;
        if let Some(&l) = layers.iter().find(|&&l| k > (l + 1) * cfg.n_heads) {
            return Err(CliError::Config(format!(
                "ablation.k = {k} exceeds the {} heads available up to layer {l}",
                (l + 1) * cfg.n_heads
            )));
        }

        let train = generate::load(run, "object_train")?;
        info!("ablate: head means over {} object training images", train.len());
        let means = compute_head_means(&model, &train, run.cfg.ablation.positional_means)?;
        means.save(&run.path(&format!("{DIR}/head_means.safetensors")))?;
        drop(train);

        let scores = continuity::load_s0(run, run.cfg.score_dataset())?;
        let sets: BTreeMap<Variant, Vec<(Stimulus, Vec<PairIndex>)>> =
            Variant::ALL.iter().map(|&v| Ok((v, eval_set(run, v.name())?))).collect::<Result<_>>()?;

        let mut rows = Vec::new();
        let mut head_rows = Vec::new();
        let mut layer_deltas = Vec::new();
        for &layer in &layers {
            let reference: Vec<Head> = select_top_heads(&scores, k, layer)?;
            let controls: Vec<Vec<Head>> = if reference.is_empty() {
                vec![Vec::new(); n_controls]
            } else {
                random_control_sets(&reference, cfg.n_layers, cfg.n_heads, n_controls, run.derive(&format!("ablate/controls/{layer}")))?
            };
            info!("ablate: layer {layer}, reference {}", heads_field(&reference));
            let named: Vec<(String, &Vec<Head>)> = std::iter::once(("reference".to_string(), &reference))
                .chain(controls.iter().enumerate().map(|(i, c)| (format!("control{i}"), c)))
                .collect();
            let mut per_set: Vec<BTreeMap<Variant, f64>> = vec![BTreeMap::new(); named.len()];
            for (&variant, items) in &sets {
                let probe = probe::load_probe(run, variant.name(), layer)?;
                let items: Vec<EvalItem> =
                    items.iter().map(|(s, p)| EvalItem { stimulus: s, pairs: p.clone() }).collect();
                let baseline = eval_probe(&probe, &layer_pairs(&model, &items, layer, None)?)?;
                for (si, (name, heads)) in named.iter().enumerate() {
                    let r = run_ablation(&probe, &model, heads, &means, &items, layer, variant, Some(&baseline))?;
                    per_set[si].insert(variant, r.delta);
                    rows.push(RunRow {
                        layer,
                        set: name.clone(),
                        variant: variant.name().into(),
                        heads: heads_field(&r.heads),
                        baseline: r.baseline,
                        ablated: r.ablated,
                        delta: r.delta,
                    });
                }
            }
            for (name, heads) in &named {
                head_rows.push(HeadsRow { layer, set: name.clone(), heads: heads_field(heads) });
            }
            layer_deltas.push(LayerDeltas {
                layer,
                reference: deltas(&per_set[0]),
                controls: per_set[1..].iter().map(deltas).collect(),
            });
        }

        let report = selectivity_report(&layer_deltas)?;
        let sel_rows: Vec<SelectivityRow> = report
            .records
            .iter()
            .map(|r| SelectivityRow {
                layer: r.layer,
                delta_object: r.delta_object,
                delta_scrambled_orientation: r.delta_scrambled_orientation,
                delta_scrambled_location: r.delta_scrambled_location,
                selectivity_orientation: r.selectivity_orientation,
                selectivity_location: r.selectivity_location,
                selectivity: r.selectivity,
                n_controls: r.control_selectivities.len(),
                control_q1: r.control_q1,
                control_q3: r.control_q3,
                exceeds_controls: r.exceeds_controls,
            })
            .collect();
        let control_rows: Vec<ControlRow> = report
            .records
            .iter()
            .flat_map(|r| {
                let heads: Vec<String> = head_rows
                    .iter()
                    .filter(|h| h.layer == r.layer && h.set != "reference")
                    .map(|h| h.heads.clone())
                    .collect();
                r.control_selectivities.iter().enumerate().map(move |(i, s)| ControlRow {
                    layer: r.layer,
                    control: i,
                    heads: heads[i].clone(),
                    selectivity: *s,
                })
            })
            .collect();

        table::write(&run.path(&format!("{DIR}/runs.csv")), &rows)?;
        table::write(&run.path(&format!("{DIR}/selectivity.csv")), &sel_rows)?;
        table::write(&run.path(&format!("{DIR}/controls.csv")), &control_rows)?;
        table::write(&run.path(&format!("{DIR}/heads.csv")), &head_rows)?;
        std::fs::write(
            run.path(&format!("{DIR}/selectivity.txt")),
            format!("best_layer = {}\nk = {k}\nn_controls = {n_controls}\n", report.best_layer),
        )?;
        let groups: Vec<BarGroup> = report
            .records
            .iter()
            .map(|r| BarGroup {
                label: format!("L{}", r.layer),
                values: vec![r.delta_object, r.delta_scrambled_orientation, r.delta_scrambled_location, r.selectivity],
                band: r.control_q1.is_finite().then_some((r.control_q1, r.control_q3)),
            })
            .collect();
        let svg = plot::bar_chart(
            "Ablation effect per layer (band: control selectivity IQR)",
            &["Δ object", "Δ scrambled orientation", "Δ scrambled location", "selectivity"],
            &groups,
            "accuracy drop",
        )?;
        std::fs::write(run.path(&format!("{DIR}/selectivity.svg")), svg)?;
        Ok(())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadsRow {
    pub layer: usize,
    pub set: String,
    pub heads: String,
}
