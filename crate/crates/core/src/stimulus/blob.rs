use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{paint, pick_colors, solid, Color, Mask, Stimulus, StimulusKind, StimulusParams, CANVAS};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobParams {
    /// Maximum contour radius in pixels.
    pub size: f64,
    /// Number of radial control points (at least 3).
    pub complexity: usize,
    /// Control radii are drawn from `[min_radius_frac · size, size]`.
    pub min_radius_frac: f64,
    /// Angular jitter as a fraction of the nominal spacing `2π / complexity`.
    pub angle_jitter: f64,
    pub palette: Vec<Color>,
}

impl Default for BlobParams {
    fn default() -> Self {
        Self {
            size: 60.0,
            complexity: 7,
            min_radius_frac: 0.55,
            angle_jitter: 0.35,
            palette: Color::ALL.to_vec(),
        }
    }
}

/// A generated blob: parameters and sampled geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobRecord {
    pub params: BlobParams,
    pub color: Color,
    pub background: Color,
    pub center: (f64, f64),
    pub angles: Vec<f64>,
    pub radii: Vec<f64>,
}

impl BlobParams {
    fn validate(&self) -> Result<()> {
        if self.complexity < 3 {
            return Err(Error::InvalidParam(format!(
                "blob complexity must be >= 3 radial points, got {}",
                self.complexity
            )));
        }
        if !(self.size >= 2.0) || 2.0 * self.size + 2.0 > CANVAS as f64 {
            return Err(Error::InvalidParam(format!(
                "blob size {} does not fit a {CANVAS}px canvas",
                self.size
            )));
        }
        if !(0.0..=1.0).contains(&self.min_radius_frac) || self.min_radius_frac <= 0.0 {
            return Err(Error::InvalidParam("min_radius_frac must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.angle_jitter) {
            return Err(Error::InvalidParam("angle_jitter must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Periodic radius profile `r(θ)`: cubic Hermite interpolation through the
/// control points with finite-difference tangents, clamped to `[1, max]`.
pub(crate) struct RadialProfile {
    angles: Vec<f64>,
    radii: Vec<f64>,
    tangents: Vec<f64>,
    max: f64,
}

impl RadialProfile {
    pub(crate) fn new(angles: &[f64], radii: &[f64], max: f64) -> Self {
        let n = angles.len();
        let mut tangents = vec![0.0; n];
        for i in 0..n {
            let (prev, next) = ((i + n - 1) % n, (i + 1) % n);
            let mut span = angles[next] - angles[prev];
            if span <= 0.0 {
                span += TAU;
            }
            tangents[i] = (radii[next] - radii[prev]) / span;
        }
        Self {
            angles: angles.to_vec(),
            radii: radii.to_vec(),
            tangents,
            max,
        }
    }

    pub(crate) fn radius(&self, theta: f64) -> f64 {
        let n = self.angles.len();
        let first = self.angles[0];
        // Map theta into [first, first + 2π).
        let theta = first + (theta - first).rem_euclid(TAU);
        let i = match self.angles.iter().rposition(|&a| a <= theta) {
            Some(i) => i,
            None => n - 1,
        };
        let j = (i + 1) % n;
        let mut h = self.angles[j] - self.angles[i];
        if h <= 0.0 {
            h += TAU;
        }
        let s = (theta - self.angles[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let r = h00 * self.radii[i] + h10 * h * self.tangents[i] + h01 * self.radii[j] + h11 * h * self.tangents[j];
        r.clamp(1.0, self.max)
    }
}

pub(crate) fn blob_shape(params: &BlobParams, rng: &mut impl Rng) -> Result<(Mask, BlobRecord)> {
    params.validate()?;
    let (color, background) = pick_colors(&params.palette, rng)?;
    let lo = params.size + 1.0;
    let hi = CANVAS as f64 - params.size - 1.0;
    let center = (rng.random_range(lo..=hi), rng.random_range(lo..=hi));

    let n = params.complexity;
    let spacing = TAU / n as f64;
    let phase = rng.random_range(0.0..TAU);
    let mut angles = Vec::with_capacity(n);
    for k in 0..n {
        let jitter = if params.angle_jitter > 0.0 {
            rng.random_range(-0.5..0.5) * params.angle_jitter * spacing
        } else {
            0.0
        };
        angles.push(phase + k as f64 * spacing + jitter);
    }
    let min_r = params.min_radius_frac * params.size;
    let radii: Vec<f64> = (0..n)
        .map(|_| {
            if min_r >= params.size {
                params.size
            } else {
                rng.random_range(min_r..=params.size)
            }
        })
        .collect();

    let profile = RadialProfile::new(&angles, &radii, params.size);
    let mask = Mask::from_fn(CANVAS, CANVAS, |x, y| {
        let dx = x as f64 + 0.5 - center.0;
        let dy = y as f64 + 0.5 - center.1;
        let d = (dx * dx + dy * dy).sqrt();
        d <= params.size && d <= profile.radius(dy.atan2(dx))
    });
    let record = BlobRecord {
        params: params.clone(),
        color,
        background,
        center,
        angles,
        radii,
    };
    Ok((mask, record))
}

/// Generates a single filled blob on a solid background.
pub fn gen_blob(seed: u64, params: &BlobParams) -> Result<Stimulus> {
    let mut rng = seed::rng(seed);
    let (mask, record) = blob_shape(params, &mut rng)?;
    let mut image = solid(CANVAS, CANVAS, record.background.rgb());
    paint(&mut image, &mask, record.color.rgb());
    Ok(Stimulus {
        id: format!("blob-{seed:016x}"),
        image,
        object_masks: vec![mask],
        kind: StimulusKind::Blob,
        seed,
        background: Some(record.background.rgb()),
        params: StimulusParams::Blob(record),
        scramble: None,
    })
}
