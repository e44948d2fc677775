use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::blob::blob_shape;
use super::curve::curve_shape;
use super::{paint, solid, BlobParams, BlobRecord, Color, CurveParams, CurveRecord, Mask, Stimulus, StimulusKind, StimulusParams, CANVAS};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BindingShape {
    Blob(BlobParams),
    Curve(CurveParams),
}

impl BindingShape {
    pub fn blob() -> Self {
        BindingShape::Blob(BlobParams {
            size: 28.0,
            complexity: 6,
            ..BlobParams::default()
        })
    }

    pub fn curve() -> Self {
        BindingShape::Curve(CurveParams {
            n_points: 4,
            step_min: 16.0,
            step_max: 26.0,
            min_separation: 14.0,
            margin: 40.0,
            ..CurveParams::default()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindingParams {
    pub shape: BindingShape,
    /// Bounds on the minimum boundary-to-boundary distance, pixels.
    pub gap_min: f64,
    pub gap_max: f64,
    pub placement_retries: usize,
}

impl BindingParams {
    pub fn blob() -> Self {
        Self {
            shape: BindingShape::blob(),
            gap_min: 5.0,
            gap_max: 12.0,
            placement_retries: 64,
        }
    }

    pub fn curve() -> Self {
        Self {
            shape: BindingShape::curve(),
            ..Self::blob()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeRecord {
    Blob(BlobRecord),
    Curve(CurveRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindingRecord {
    pub params: BindingParams,
    pub shape: ShapeRecord,
    pub color: Color,
    pub background: Color,
    /// Translation taking the first object's mask onto the second's.
    pub offset: (i64, i64),
    /// Minimum distance between pixel centers of the two objects.
    pub gap: f64,
}

/// Minimum Euclidean distance between pixel centers of `a` and `b + offset`,
/// given the boundary pixels of `a` (the closest pair always lies on the
/// boundaries).
fn translated_gap(boundary: &[(u32, u32)], offset: (i64, i64)) -> f64 {
    let mut best = f64::INFINITY;
    for &(ax, ay) in boundary {
        for &(bx, by) in boundary {
            let dx = (bx as i64 + offset.0 - ax as i64) as f64;
            let dy = (by as i64 + offset.1 - ay as i64) as f64;
            let d2 = dx * dx + dy * dy;
            if d2 < best {
                best = d2;
            }
        }
    }
    best.sqrt()
}

fn overlaps(sprite: &Mask, offset: (i64, i64)) -> bool {
    sprite
        .iter_set()
        .any(|(x, y)| sprite.get_signed(x as i64 - offset.0, y as i64 - offset.1))
}

/// Generates two pixel-identical copies of one blob or curve placed close
/// together without overlapping.
pub fn gen_binding_pair(seed: u64, params: &BindingParams) -> Result<Stimulus> {
    if !(params.gap_min > 0.0 && params.gap_min <= params.gap_max) {
        return Err(Error::InvalidParam("binding gap bounds need 0 < min <= max".into()));
    }
    let mut rng = seed::rng(seed);
    let (full, shape, color, background) = match &params.shape {
        BindingShape::Blob(p) => {
            let (m, r) = blob_shape(p, &mut rng)?;
            let (c, b) = (r.color, r.background);
            (m, ShapeRecord::Blob(r), c, b)
        }
        BindingShape::Curve(p) => {
            let (m, r) = curve_shape(p, &mut rng)?;
            let (c, b) = (r.color, r.background);
            (m, ShapeRecord::Curve(r), c, b)
        }
    };
    let (x0, y0, x1, y1) = full
        .bbox()
        .ok_or_else(|| Error::GenerationFailed { attempts: 1, reason: "empty shape".into() })?;
    let (sw, sh) = (x1 - x0 + 1, y1 - y0 + 1);
    let sprite = Mask::from_fn(sw, sh, |x, y| full.get(x + x0, y + y0));
    let boundary = sprite.boundary();

    let max_reach = sw.max(sh) as i64 + params.gap_max.ceil() as i64 + 2;
    for _ in 0..params.placement_retries.max(1) {
        let theta = rng.random_range(0.0..TAU);
        let mut found = None;
        let mut last = None;
        for d in 1..=max_reach {
            let off = (
                (d as f64 * theta.cos()).round() as i64,
                (d as f64 * theta.sin()).round() as i64,
            );
            if Some(off) == last {
                continue;
            }
            last = Some(off);
            if overlaps(&sprite, off) {
                continue;
            }
            let gap = translated_gap(&boundary, off);
            if gap < params.gap_min {
                continue;
            }
            if gap <= params.gap_max {
                found = Some((off, gap));
            }
            break;
        }
        let Some((off, gap)) = found else { continue };
        let uw = sw as i64 + off.0.abs();
        let uh = sh as i64 + off.1.abs();
        if uw > CANVAS as i64 || uh > CANVAS as i64 {
            continue;
        }
        let ux = rng.random_range(0..=(CANVAS as i64 - uw));
        let uy = rng.random_range(0..=(CANVAS as i64 - uh));
        let ox = ux - off.0.min(0);
        let oy = uy - off.1.min(0);
        let first = Mask::from_fn(CANVAS, CANVAS, |x, y| sprite.get_signed(x as i64 - ox, y as i64 - oy));
        let second = first.translated(off.0, off.1);
        let mut image = solid(CANVAS, CANVAS, background.rgb());
        paint(&mut image, &first, color.rgb());
        paint(&mut image, &second, color.rgb());
        let record = BindingRecord {
            params: params.clone(),
            shape,
            color,
            background,
            offset: off,
            gap,
        };
        return Ok(Stimulus {
            id: format!("pair-{seed:016x}"),
            image,
            object_masks: vec![first, second],
            kind: StimulusKind::BindingPair,
            seed,
            background: Some(background.rgb()),
            params: StimulusParams::BindingPair(record),
            scramble: None,
        });
    }
    Err(Error::GenerationFailed {
        attempts: params.placement_retries.max(1),
        reason: "could not place two copies within the gap bounds".into(),
    })
}

/// Brute-force minimum distance between pixel centers of two masks.
pub fn mask_distance(a: &Mask, b: &Mask) -> f64 {
    let ba = a.boundary();
    let bb = b.boundary();
    let mut best = f64::INFINITY;
    for &(ax, ay) in &ba {
        for &(bx, by) in &bb {
            let d = ((ax as f64 - bx as f64).powi(2) + (ay as f64 - by as f64).powi(2)).sqrt();
            best = best.min(d);
        }
    }
    best
}
