//! Plain-text and JSON digest of the probe, continuity and ablation outputs.

use std::fmt::Write as _;

use serde::Serialize;

use super::ablate::SelectivityRow;
use super::continuity::SummaryRow;
use super::probe::AccuracyRow;
use crate::error::Result;
use crate::{table, Run};

pub const DIR: &str = "report";

#[derive(Debug, Serialize)]
struct Report {
    model: String,
    seed: u64,
    probe: Vec<AccuracyRow>,
    continuity: Vec<SummaryRow>,
    ablation: Vec<SelectivityRow>,
    best_layer: Option<usize>,
}

fn best_layer(rows: &[SelectivityRow]) -> Option<usize> {
    // Same rule as the ablation stage: largest selectivity, lowest layer on ties.
    rows.iter()
        .fold(None::<&SelectivityRow>, |best, r| match best {
            Some(b) if b.selectivity >= r.selectivity => Some(b),
            _ => Some(r),
        })
        .map(|r| r.layer)
}

pub fn run(run: &mut Run) -> Result<()> {
    let inputs = (
        run.digest("probe")?,
        run.digest("continuity")?,
        run.digest("ablate")?,
        run.cfg.model.name.clone(),
        run.seed,
    );
    run.stage("report", DIR, &inputs, |run| {
        let probe: Vec<AccuracyRow> = table::read(&run.path("probe/probe_accuracy.csv"))?;
        let continuity: Vec<SummaryRow> = table::read(&run.path("continuity/summary.csv"))?;
        let ablation: Vec<SelectivityRow> = table::read(&run.path("ablation/selectivity.csv"))?;
        let report = Report {
            model: run.cfg.model.name.clone(),
            seed: run.seed,
            best_layer: best_layer(&ablation),
            probe,
            continuity,
            ablation,
        };

        let mut t = String::new();
        writeln!(t, "model: {}  seed: {}", report.model, report.seed).unwrap();
        writeln!(t, "\nbinding probe test accuracy").unwrap();
        for r in &report.probe {
            writeln!(t, "  {:<22} layer {:>8}  {:.4}  (n = {})", r.variant, r.layer, r.accuracy, r.n).unwrap();
        }
        writeln!(t, "\ncontinuity S(0)").unwrap();
        for r in &report.continuity {
            writeln!(
                t,
                "  {:<9} n = {:<4} skipped = {:<3} flatness = {:.4}  mean ln ratio = {:+.4}  max S(0) = {:.4} at layer {} head {}",
                r.dataset, r.n_stimuli, r.n_skipped, r.flatness, r.mean_log_ratio, r.max_s0, r.max_layer, r.max_head
            )
            .unwrap();
        }
        writeln!(t, "\nablation (accuracy drop; selectivity = object − max scrambled)").unwrap();
        for r in &report.ablation {
            writeln!(
                t,
                "  layer {:>2}  Δobj {:+.4}  Δori {:+.4}  Δloc {:+.4}  sel {:+.4}  controls IQR [{:+.4}, {:+.4}]{}",
                r.layer,
                r.delta_object,
                r.delta_scrambled_orientation,
                r.delta_scrambled_location,
                r.selectivity,
                r.control_q1,
                r.control_q3,
                if r.exceeds_controls { "  *" } else { "" }
            )
            .unwrap();
        }
        if let Some(l) = report.best_layer {
            writeln!(t, "\nmost selective layer: {l}").unwrap();
        }
        std::fs::write(run.path(&format!("{DIR}/summary.txt")), t)?;
        // NaN is not JSON; serde_json writes it as null.
        std::fs::write(run.path(&format!("{DIR}/summary.json")), serde_json::to_string_pretty(&report)?)?;
        Ok(())
    })
}
