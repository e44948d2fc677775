use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{paint, pick_colors, solid, Color, Mask, Stimulus, StimulusKind, StimulusParams, CANVAS};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveParams {
    /// Number of control points (at least 2).
    pub n_points: usize,
    pub step_min: f64,
    pub step_max: f64,
    /// Largest allowed heading change between consecutive segments, radians.
    pub turn_bound: f64,
    pub thickness: f64,
    /// Control points stay inside `[margin, CANVAS - margin]²`.
    pub margin: f64,
    /// Minimum distance between a candidate and any non-adjacent control point.
    pub min_separation: f64,
    /// Candidate draws per control point before the path is restarted.
    pub retry_budget: usize,
    /// Full-path restarts before giving up.
    pub restarts: usize,
    pub palette: Vec<Color>,
}

impl Default for CurveParams {
    fn default() -> Self {
        Self {
            n_points: 6,
            step_min: 22.0,
            step_max: 38.0,
            turn_bound: PI / 3.0,
            thickness: 6.0,
            margin: 16.0,
            min_separation: 18.0,
            retry_budget: 64,
            restarts: 32,
            palette: Color::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub params: CurveParams,
    pub color: Color,
    pub background: Color,
    pub control_points: Vec<(f64, f64)>,
    /// Heading change at each interior control point, radians.
    pub turn_angles: Vec<f64>,
    /// True when the spline was replaced by the straight control polyline.
    pub straight_fallback: bool,
}

impl CurveParams {
    fn validate(&self) -> Result<()> {
        if self.n_points < 2 {
            return Err(Error::InvalidParam("a curve needs at least 2 control points".into()));
        }
        if !(self.step_min > 0.0 && self.step_min <= self.step_max) {
            return Err(Error::InvalidParam("curve steps need 0 < step_min <= step_max".into()));
        }
        if !(self.turn_bound >= 0.0 && self.turn_bound <= PI) {
            return Err(Error::InvalidParam("turn_bound must lie in [0, π]".into()));
        }
        if !(self.thickness > 0.0) {
            return Err(Error::InvalidParam("curve thickness must be positive".into()));
        }
        if !(self.margin >= self.thickness / 2.0 && 2.0 * self.margin < CANVAS as f64) {
            return Err(Error::InvalidParam("curve margin must contain the stroke and leave a window".into()));
        }
        Ok(())
    }
}

type Pt = (f64, f64);

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Proper or touching intersection of closed segments `p1p2` and `q1q2`.
pub(crate) fn segments_intersect(p1: Pt, p2: Pt, q1: Pt, q2: Pt) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |a: Pt, b: Pt, p: Pt, d: f64| {
        d == 0.0 && p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

/// True when any two non-adjacent segments of the polyline intersect.
pub(crate) fn polyline_self_intersects(pts: &[Pt]) -> bool {
    let n = pts.len();
    for i in 0..n.saturating_sub(1) {
        for j in (i + 2)..n.saturating_sub(1) {
            if segments_intersect(pts[i], pts[i + 1], pts[j], pts[j + 1]) {
                return true;
            }
        }
    }
    false
}

fn polyline_length(pts: &[Pt]) -> f64 {
    pts.windows(2).map(|w| dist(w[0], w[1])).sum()
}

fn dist(a: Pt, b: Pt) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn sample_control_points(params: &CurveParams, rng: &mut impl Rng) -> Option<Vec<Pt>> {
    let lo = params.margin;
    let hi = CANVAS as f64 - params.margin;
    let inside = |p: Pt| p.0 >= lo && p.0 <= hi && p.1 >= lo && p.1 <= hi;
    let mut pts = vec![(rng.random_range(lo..=hi), rng.random_range(lo..=hi))];
    let mut heading = rng.random_range(0.0..TAU);
    while pts.len() < params.n_points {
        let last = *pts.last().unwrap();
        let mut accepted = None;
        for _ in 0..params.retry_budget {
            let turn = if pts.len() == 1 {
                0.0
            } else if params.turn_bound > 0.0 {
                rng.random_range(-params.turn_bound..=params.turn_bound)
            } else {
                0.0
            };
            let h = heading + turn;
            let step = rng.random_range(params.step_min..=params.step_max);
            let cand = (last.0 + step * h.cos(), last.1 + step * h.sin());
            if !inside(cand) {
                continue;
            }
            let crowded = pts[..pts.len() - 1].iter().any(|p| dist(*p, cand) < params.min_separation);
            if crowded {
                continue;
            }
            let crosses = pts
                .windows(2)
                .take(pts.len().saturating_sub(2))
                .any(|w| segments_intersect(w[0], w[1], last, cand));
            if crosses {
                continue;
            }
            accepted = Some((cand, h));
            break;
        }
        let (cand, h) = accepted?;
        pts.push(cand);
        heading = h;
    }
    Some(pts)
}

/// Centripetal Catmull-Rom through the control points, `per_segment`
/// samples per span, endpoints included.
fn catmull_rom(ctrl: &[Pt], per_segment: usize) -> Vec<Pt> {
    if ctrl.len() < 3 {
        return ctrl.to_vec();
    }
    let n = ctrl.len();
    let get = |i: isize| -> Pt {
        if i < 0 {
            // Reflect the first point to extend the path.
            (2.0 * ctrl[0].0 - ctrl[1].0, 2.0 * ctrl[0].1 - ctrl[1].1)
        } else if i as usize >= n {
            (2.0 * ctrl[n - 1].0 - ctrl[n - 2].0, 2.0 * ctrl[n - 1].1 - ctrl[n - 2].1)
        } else {
            ctrl[i as usize]
        }
    };
    let mut out = Vec::with_capacity((n - 1) * per_segment + 1);
    for seg in 0..n - 1 {
        let (p0, p1, p2, p3) = (
            get(seg as isize - 1),
            get(seg as isize),
            get(seg as isize + 1),
            get(seg as isize + 2),
        );
        let knot = |a: Pt, b: Pt| dist(a, b).sqrt().max(1e-9);
        let t0 = 0.0;
        let t1 = t0 + knot(p0, p1);
        let t2 = t1 + knot(p1, p2);
        let t3 = t2 + knot(p2, p3);
        for s in 0..per_segment {
            let t = t1 + (t2 - t1) * s as f64 / per_segment as f64;
            let lerp = |a: Pt, b: Pt, ta: f64, tb: f64| {
                let w = (t - ta) / (tb - ta);
                (a.0 + (b.0 - a.0) * w, a.1 + (b.1 - a.1) * w)
            };
            let a1 = lerp(p0, p1, t0, t1);
            let a2 = lerp(p1, p2, t1, t2);
            let a3 = lerp(p2, p3, t2, t3);
            let b1 = lerp(a1, a2, t0, t2);
            let b2 = lerp(a2, a3, t1, t3);
            out.push(lerp(b1, b2, t1, t2));
        }
    }
    out.push(ctrl[n - 1]);
    out
}

fn turn_angles(pts: &[Pt]) -> Vec<f64> {
    pts.windows(3)
        .map(|w| {
            let a = (w[1].1 - w[0].1).atan2(w[1].0 - w[0].0);
            let b = (w[2].1 - w[1].1).atan2(w[2].0 - w[1].0);
            let mut d = b - a;
            while d > PI {
                d -= TAU;
            }
            while d < -PI {
                d += TAU;
            }
            d.abs()
        })
        .collect()
}

/// Pixels whose centers lie within `thickness / 2` of the polyline.
pub(crate) fn stroke_mask(path: &[Pt], thickness: f64, width: u32, height: u32) -> Mask {
    let mut mask = Mask::new(width, height);
    let r = thickness / 2.0;
    let mut mark = |x: i64, y: i64| {
        if x >= 0 && y >= 0 && (x as u32) < width && (y as u32) < height {
            mask.set(x as u32, y as u32, true);
        }
    };
    let segs: Vec<(Pt, Pt)> = if path.len() == 1 {
        vec![(path[0], path[0])]
    } else {
        path.windows(2).map(|w| (w[0], w[1])).collect()
    };
    for (a, b) in segs {
        let x0 = (a.0.min(b.0) - r - 1.0).floor() as i64;
        let x1 = (a.0.max(b.0) + r + 1.0).ceil() as i64;
        let y0 = (a.1.min(b.1) - r - 1.0).floor() as i64;
        let y1 = (a.1.max(b.1) + r + 1.0).ceil() as i64;
        let (vx, vy) = (b.0 - a.0, b.1 - a.1);
        let len2 = vx * vx + vy * vy;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let t = if len2 > 0.0 {
                    (((px - a.0) * vx + (py - a.1) * vy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (cx, cy) = (a.0 + t * vx, a.1 + t * vy);
                if (px - cx).powi(2) + (py - cy).powi(2) <= r * r {
                    mark(x, y);
                }
            }
        }
    }
    mask
}

pub(crate) fn curve_shape(params: &CurveParams, rng: &mut impl Rng) -> Result<(Mask, CurveRecord)> {
    params.validate()?;
    let (color, background) = pick_colors(&params.palette, rng)?;
    let mut ctrl = None;
    for _ in 0..params.restarts.max(1) {
        if let Some(p) = sample_control_points(params, rng) {
            ctrl = Some(p);
            break;
        }
    }
    let ctrl = ctrl.ok_or_else(|| Error::GenerationFailed {
        attempts: params.restarts.max(1),
        reason: "no admissible control polyline; parameters may be infeasible".into(),
    })?;

    let smooth = catmull_rom(&ctrl, 16);
    let lo = params.thickness / 2.0;
    let hi = CANVAS as f64 - params.thickness / 2.0;
    let collapsed = ctrl.len() < 3
        || polyline_length(&smooth) < 0.5 * polyline_length(&ctrl)
        || polyline_self_intersects(&smooth)
        || smooth.iter().any(|p| p.0 < lo || p.0 > hi || p.1 < lo || p.1 > hi);
    let path = if collapsed { ctrl.clone() } else { smooth };
    let mask = stroke_mask(&path, params.thickness, CANVAS, CANVAS);
    let record = CurveRecord {
        params: params.clone(),
        color,
        background,
        turn_angles: turn_angles(&ctrl),
        control_points: ctrl,
        straight_fallback: collapsed,
    };
    Ok((mask, record))
}

/// Generates a single open curve stroke on a solid background.
pub fn gen_curve(seed: u64, params: &CurveParams) -> Result<Stimulus> {
    let mut rng = seed::rng(seed);
    let (mask, record) = curve_shape(params, &mut rng)?;
    let mut image = solid(CANVAS, CANVAS, record.background.rgb());
    paint(&mut image, &mask, record.color.rgb());
    Ok(Stimulus {
        id: format!("curve-{seed:016x}"),
        image,
        object_masks: vec![mask],
        kind: StimulusKind::Curve,
        seed,
        background: Some(record.background.rgb()),
        params: StimulusParams::Curve(record),
        scramble: None,
    })
}
