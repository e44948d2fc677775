//! Continuity trajectories: the target patch is refilled from a window
//! displaced along one axis, optionally rotated by a quarter turn to break
//! edge alignment while keeping the same pixel content.

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scramble::rotate_block;
use super::{PatchGrid, QuarterTurns, Stimulus};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    #[default]
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryOptions {
    pub axis: Axis,
    /// Largest permitted |t| in pixels.
    pub t_max: i64,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self { axis: Axis::X, t_max: 16 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", content = "quarter_turns", rename_all = "snake_case")]
pub enum TrajectoryVariant {
    Aligned,
    /// Window content rotated clockwise by 1 (90°) or 3 (270°) quarter turns.
    RotatedControl(QuarterTurns),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStimulus {
    pub base_id: String,
    pub image: RgbImage,
    pub target_patch: usize,
    pub t: i64,
    pub variant: TrajectoryVariant,
}

impl TrajectoryStimulus {
    /// Rotation in degrees for controls.
    pub fn rotation_degrees(&self) -> Option<u32> {
        match self.variant {
            TrajectoryVariant::Aligned => None,
            TrajectoryVariant::RotatedControl(q) => Some(90 * q as u32),
        }
    }
}

/// 90° or 270° (as quarter turns 1 or 3), drawn uniformly per
/// `(seed, stimulus, target)`.
pub fn control_rotation(seed: u64, stimulus_id: &str, target: usize) -> QuarterTurns {
    let mut rng = seed::child_rng(seed, &format!("control/{stimulus_id}/{target}"));
    if rng.random_bool(0.5) {
        1
    } else {
        3
    }
}

/// Builds one trajectory frame for `target` at displacement `t`.
pub fn make_trajectory(
    stim: &Stimulus,
    grid: &PatchGrid,
    target: usize,
    t: i64,
    variant: TrajectoryVariant,
    opts: &TrajectoryOptions,
) -> Result<TrajectoryStimulus> {
    if target >= grid.n_patches() {
        return Err(Error::InvalidParam(format!("patch {target} is outside the grid")));
    }
    if !grid.perimeter_patches.iter().any(|p| p.contains(&target)) {
        return Err(Error::InvalidParam(format!("patch {target} is not a perimeter patch")));
    }
    if t.abs() > opts.t_max {
        return Err(Error::InvalidParam(format!("|t| = {} exceeds t_max = {}", t.abs(), opts.t_max)));
    }
    if let TrajectoryVariant::RotatedControl(q) = variant {
        if q != 1 && q != 3 {
            return Err(Error::InvalidParam("control rotation must be 90 or 270 degrees".into()));
        }
    }
    let (x0, y0, s) = grid.rect(target);
    let (dx, dy) = match opts.axis {
        Axis::X => (t, 0),
        Axis::Y => (0, t),
    };
    let (wx, wy) = (x0 as i64 + dx, y0 as i64 + dy);
    let (w, h) = (stim.width() as i64, stim.height() as i64);
    let s_i = s as i64;
    if wx + s_i <= 0 || wy + s_i <= 0 || wx >= w || wy >= h {
        return Err(Error::InvalidParam(format!("window displaced by {t}px lies outside the canvas")));
    }

    let fill = Rgb(stim.fill_color());
    let mut window = RgbImage::from_pixel(s, s, fill);
    for y in 0..s {
        for x in 0..s {
            let (sx, sy) = (wx + x as i64, wy + y as i64);
            if sx >= 0 && sy >= 0 && sx < w && sy < h {
                window.put_pixel(x, y, *stim.image.get_pixel(sx as u32, sy as u32));
            }
        }
    }
    if let TrajectoryVariant::RotatedControl(q) = variant {
        rotate_block(&mut window, 0, 0, s, q);
    }
    let mut image = stim.image.clone();
    for y in 0..s {
        for x in 0..s {
            image.put_pixel(x0 + x, y0 + y, *window.get_pixel(x, y));
        }
    }
    Ok(TrajectoryStimulus {
        base_id: stim.id.clone(),
        image,
        target_patch: target,
        t,
        variant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stimulus::{gen_blob, gen_curve, BlobParams, CurveParams, Mask};

    fn patch_multiset(img: &RgbImage, grid: &PatchGrid, p: usize) -> Vec<[u8; 3]> {
        let (x0, y0, s) = grid.rect(p);
        let mut v: Vec<[u8; 3]> = (0..s * s).map(|i| img.get_pixel(x0 + i % s, y0 + i / s).0).collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn zero_aligned_is_identity() {
        let stim = gen_curve(3, &CurveParams::default()).unwrap();
        let grid = PatchGrid::new(&stim, 16).unwrap();
        for &p in &grid.perimeter_patches[0] {
            let tr = make_trajectory(&stim, &grid, p, 0, TrajectoryVariant::Aligned, &Default::default()).unwrap();
            assert_eq!(tr.image, stim.image);
        }
    }

    #[test]
    fn control_keeps_pixel_content_at_every_t() {
        let stim = gen_blob(5, &BlobParams::default()).unwrap();
        let grid = PatchGrid::new(&stim, 16).unwrap();
        let p = grid.perimeter_patches[0][0];
        for t in (-16..=16).step_by(2) {
            let a = make_trajectory(&stim, &grid, p, t, TrajectoryVariant::Aligned, &Default::default()).unwrap();
            for q in [1, 3] {
                let c = make_trajectory(&stim, &grid, p, t, TrajectoryVariant::RotatedControl(q), &Default::default())
                    .unwrap();
                assert_eq!(patch_multiset(&a.image, &grid, p), patch_multiset(&c.image, &grid, p));
                if t == 0 {
                    assert_eq!(patch_multiset(&c.image, &grid, p), patch_multiset(&stim.image, &grid, p));
                }
            }
        }
    }

    #[test]
    fn constant_neighborhood_is_unchanged() {
        // A wide horizontal band: every window along x stays inside it.
        let mut stim = gen_blob(1, &BlobParams::default()).unwrap();
        let band = Mask::from_fn(224, 224, |_, y| (40..72).contains(&y) || y == 100);
        stim.image = RgbImage::from_fn(224, 224, |x, y| if band.get(x, y) { Rgb([255, 0, 0]) } else { Rgb([0, 0, 255]) });
        stim.background = Some([0, 0, 255]);
        stim.object_masks = vec![band];
        let grid = PatchGrid::new(&stim, 16).unwrap();
        let p = grid.index(6, 6); // rows 96..112 contain the 1px line: a perimeter patch
        for t in [-16, -4, 2, 16] {
            let tr = make_trajectory(&stim, &grid, p, t, TrajectoryVariant::Aligned, &Default::default()).unwrap();
            assert_eq!(tr.image, stim.image);
        }
    }

    #[test]
    fn overhang_uses_background_and_far_windows_fail() {
        let mut stim = gen_blob(2, &BlobParams::default()).unwrap();
        let edge = Mask::from_fn(224, 224, |x, y| x < 8 && y < 8);
        stim.object_masks = vec![edge];
        let grid = PatchGrid::new(&stim, 16).unwrap();
        let tr = make_trajectory(&stim, &grid, 0, -4, TrajectoryVariant::Aligned, &Default::default()).unwrap();
        let bg = stim.background.unwrap();
        for y in 0..16 {
            for x in 0..4 {
                assert_eq!(tr.image.get_pixel(x, y).0, bg);
            }
        }
        let far = TrajectoryOptions { axis: Axis::X, t_max: 64 };
        assert!(make_trajectory(&stim, &grid, 0, -16, TrajectoryVariant::Aligned, &far).is_err());
        assert!(make_trajectory(&stim, &grid, 0, 20, TrajectoryVariant::Aligned, &Default::default()).is_err());
    }

    #[test]
    fn rejects_non_perimeter_targets() {
        let stim = gen_blob(4, &BlobParams::default()).unwrap();
        let grid = PatchGrid::new(&stim, 16).unwrap();
        let outside = (0..grid.n_patches()).find(|p| !grid.object_patches[0].contains(p)).unwrap();
        assert!(make_trajectory(&stim, &grid, outside, 0, TrajectoryVariant::Aligned, &Default::default()).is_err());
    }

    #[test]
    fn control_rotation_is_deterministic_and_balanced() {
        let picks: Vec<u8> = (0..200).map(|i| control_rotation(7, "s", i)).collect();
        assert!(picks.iter().all(|q| *q == 1 || *q == 3));
        let ones = picks.iter().filter(|q| **q == 1).count();
        assert!((60..140).contains(&ones));
        assert_eq!(control_rotation(7, "s", 3), control_rotation(7, "s", 3));
    }
}
