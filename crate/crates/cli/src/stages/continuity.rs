//! Continuity sensitivity of every head on each configured dataset.

use gestalt_core::continuity::{correlate_scores, score_dataset, DatasetScores, HeadScoreMatrix};
use gestalt_core::plot::{self, Series};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::generate;
use crate::error::{CliError, Result};
use crate::{table, Run};

pub const DIR: &str = "continuity";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct S0Row {
    pub layer: usize,
    pub head: usize,
    pub s0: f64,
    pub mean_log_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CurveRow {
    layer: usize,
    head: usize,
    t: i64,
    s: f64,
    mean_log_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CorrelationRow {
    a: String,
    b: String,
    n: usize,
    pearson_r: f64,
    pearson_p: f64,
    spearman_rho: f64,
    spearman_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub n_stimuli: usize,
    pub n_skipped: usize,
    /// Mean `|S(0) − 1|` over heads outside layer 0.
    pub flatness: f64,
    /// Mean unfloored `ln(base / control)` at `t = 0` over heads outside layer 0.
    pub mean_log_ratio: f64,
    pub max_s0: f64,
    pub max_layer: usize,
    pub max_head: usize,
}

pub fn s0_path(dataset: &str) -> String {
    format!("{DIR}/{dataset}_s0.csv")
}

/// Reads a stored `S(0)` table back into a matrix.
pub fn load_s0(run: &Run, dataset: &str) -> Result<HeadScoreMatrix> {
    let rows: Vec<S0Row> = table::read(&run.path(&s0_path(dataset)))?;
    let layers = rows.iter().map(|r| r.layer + 1).max().unwrap_or(0);
    let heads = rows.iter().map(|r| r.head + 1).max().unwrap_or(0);
    if rows.len() != layers * heads {
        return Err(CliError::Data(format!("{} is not a full layer × head table", s0_path(dataset))));
    }
    let mut scores = vec![f64::NAN; rows.len()];
    for r in &rows {
        scores[r.layer * heads + r.head] = r.s0;
    }
    Ok(HeadScoreMatrix::new(layers, heads, scores)?)
}

fn off_first_layer(m: &[f64], heads: usize) -> &[f64] {
    if m.len() > heads {
        &m[heads..]
    } else {
        m
    }
}

fn summarize(name: &str, ds: &DatasetScores) -> Result<SummaryRow> {
    let s0 = ds.matrix_at(0)?;
    let ti = ds.t_values.iter().position(|&t| t == 0).expect("scored at 0");
    let per = ds.layers * ds.heads;
    let logs = &ds.log_ratio_means[ti * per..(ti + 1) * per];
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let dev: Vec<f64> = off_first_layer(&s0.scores, ds.heads).iter().map(|s| (s - 1.0).abs()).collect();
    let (imax, max_s0) = s0
        .scores
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    Ok(SummaryRow {
        dataset: name.into(),
        n_stimuli: ds.n_stimuli,
        n_skipped: ds.n_skipped,
        flatness: mean(&dev),
        mean_log_ratio: mean(off_first_layer(logs, ds.heads)),
        max_s0,
        max_layer: imax / ds.heads,
        max_head: imax % ds.heads,
    })
}

fn write_dataset(run: &Run, name: &str, ds: &DatasetScores, n_curves: usize) -> Result<()> {
    let s0 = ds.matrix_at(0)?;
    let ti0 = ds.t_values.iter().position(|&t| t == 0).expect("scored at 0");
    let per = ds.layers * ds.heads;
    let rows: Vec<S0Row> = (0..per)
        .map(|i| S0Row {
            layer: i / ds.heads,
            head: i % ds.heads,
            s0: s0.scores[i],
            mean_log_ratio: ds.log_ratio_means[ti0 * per + i],
        })
        .collect();
    table::write(&run.path(&s0_path(name)), &rows)?;
    let svg = plot::heatmap(&format!("S(0) on {name}"), ds.layers, ds.heads, &s0.scores, "layer", "head")?;
    std::fs::write(run.path(&format!("{DIR}/{name}_s0.svg")), svg)?;

    if ds.t_values.len() < 2 {
        return Ok(());
    }
    let mut curves = Vec::with_capacity(per * ds.t_values.len());
    for i in 0..per {
        for (ti, &t) in ds.t_values.iter().enumerate() {
            curves.push(CurveRow {
                layer: i / ds.heads,
                head: i % ds.heads,
                t,
                s: ds.means[ti * per + i],
                mean_log_ratio: ds.log_ratio_means[ti * per + i],
            });
        }
    }
    table::write(&run.path(&format!("{DIR}/{name}_curves.csv")), &curves)?;

    // Highest and lowest S(0), ties broken by (layer, head).
    let mut order: Vec<usize> = (0..per).collect();
    order.sort_by(|&a, &b| s0.scores[b].total_cmp(&s0.scores[a]).then(a.cmp(&b)));
    let n = n_curves.min(per);
    let picks = order[..n]
        .iter()
        .enumerate()
        .map(|(r, &i)| (format!("top{}", r + 1), i))
        .chain(order[per - n..].iter().rev().enumerate().map(|(r, &i)| (format!("bottom{}", r + 1), i)));
    let dir = run.path(&format!("{DIR}/tuning/{name}"));
    std::fs::create_dir_all(&dir)?;
    for (tag, i) in picks {
        let (l, h) = (i / ds.heads, i % ds.heads);
        let c = ds.curve(l, h);
        let series = Series { label: format!("layer {l} head {h}"), points: c.t.iter().zip(&c.s).map(|(t, s)| (*t as f64, *s)).collect() };
        let svg = plot::line_plot(&format!("S(t), {name}, layer {l} head {h}"), &[series], "t (px)", "S")?;
        std::fs::write(dir.join(format!("{tag}_l{l:02}h{h:02}.svg")), svg)?;
    }
    Ok(())
}

pub fn run(run: &mut Run) -> Result<()> {
    let inputs = (run.digest("generate")?, run.model_identity()?, run.cfg.continuity.clone(), run.seed);
    run.stage("continuity", DIR, &inputs, |run| {
        let model = run.model()?.clone();
        let opts = run.cfg.continuity.options(run.derive("continuity"));
        let names = run.cfg.continuity_datasets();
        let mut scored: Vec<(&str, DatasetScores)> = Vec::new();
        let mut summary = Vec::new();
        for name in names {
            let stimuli = generate::load(run, name)?;
            info!("continuity: scoring {name} ({} stimuli)", stimuli.len());
            let ds = score_dataset(&model, &stimuli, &run.cfg.continuity.t_values, &opts)?;
            if ds.n_skipped > 0 {
                warn!("continuity: {} of {} {name} stimuli had no scorable target", ds.n_skipped, stimuli.len());
            }
            write_dataset(run, name, &ds, run.cfg.continuity.n_curves)?;
            summary.push(summarize(name, &ds)?);
            scored.push((name, ds));
        }
        let mut corr = Vec::new();
        for i in 0..scored.len() {
            for j in i + 1..scored.len() {
                let (a, b) = (scored[i].1.matrix_at(0)?, scored[j].1.matrix_at(0)?);
                match correlate_scores(&a, &b) {
                    Ok(c) => corr.push(CorrelationRow {
                        a: scored[i].0.into(),
                        b: scored[j].0.into(),
                        n: c.pearson.n,
                        pearson_r: c.pearson.coefficient,
                        pearson_p: c.pearson.p_value,
                        spearman_rho: c.spearman.coefficient,
                        spearman_p: c.spearman.p_value,
                    }),
                    // Constant score maps (e.g. all heads floored at 1) have no correlation.
                    Err(gestalt_core::Error::Numeric(why)) => warn!("no correlation for {} vs {}: {why}", scored[i].0, scored[j].0),
                    Err(e) => return Err(e.into()),
                }
            }
        }
        table::write(&run.path(&format!("{DIR}/correlations.csv")), &corr)?;
        table::write(&run.path(&format!("{DIR}/summary.csv")), &summary)?;
        Ok(())
    })
}
