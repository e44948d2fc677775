//! Continuity-breaking controls: per-patch rotation and patch shuffling,
//! both restricted to object-containing patches.

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Mask, PatchGrid, Stimulus};
use crate::error::{Error, Result};
use crate::seed;

/// Number of clockwise quarter turns, `0..=3`.
pub type QuarterTurns = u8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScrambleRecord {
    /// `(patch index, clockwise quarter turns)` for every rotated patch.
    Orientation { patch_size: u32, rotations: Vec<(usize, QuarterTurns)> },
    /// Content now at `positions[i]` was taken from `sources[i]`.
    Location { patch_size: u32, positions: Vec<usize>, sources: Vec<usize> },
}

/// Source coordinate for destination `(x, y)` of a block rotated clockwise
/// by `q` quarter turns.
#[inline]
fn rotated_source(x: u32, y: u32, size: u32, q: QuarterTurns) -> (u32, u32) {
    match q % 4 {
        0 => (x, y),
        1 => (y, size - 1 - x),
        2 => (size - 1 - x, size - 1 - y),
        _ => (size - 1 - y, x),
    }
}

/// Rotates the square block at `(x0, y0)` of side `size` clockwise in place.
pub fn rotate_block(img: &mut RgbImage, x0: u32, y0: u32, size: u32, q: QuarterTurns) {
    if q % 4 == 0 {
        return;
    }
    let mut block = Vec::with_capacity((size * size) as usize);
    for y in 0..size {
        for x in 0..size {
            block.push(*img.get_pixel(x0 + x, y0 + y));
        }
    }
    for y in 0..size {
        for x in 0..size {
            let (sx, sy) = rotated_source(x, y, size, q);
            img.put_pixel(x0 + x, y0 + y, block[(sy * size + sx) as usize]);
        }
    }
}

fn rotate_mask_block(mask: &mut Mask, x0: u32, y0: u32, size: u32, q: QuarterTurns) {
    if q % 4 == 0 {
        return;
    }
    let mut block = Vec::with_capacity((size * size) as usize);
    for y in 0..size {
        for x in 0..size {
            block.push(mask.get(x0 + x, y0 + y));
        }
    }
    for y in 0..size {
        for x in 0..size {
            let (sx, sy) = rotated_source(x, y, size, q);
            mask.set(x0 + x, y0 + y, block[(sy * size + sx) as usize]);
        }
    }
}

fn check_grid(stim: &Stimulus, grid: &PatchGrid) -> Result<()> {
    if stim.object_masks.is_empty() {
        return Err(Error::Empty("scrambling needs at least one object".into()));
    }
    if grid.cols * grid.patch_size != stim.width() || grid.rows * grid.patch_size != stim.height() {
        return Err(Error::DimensionMismatch("patch grid does not tile the stimulus".into()));
    }
    Ok(())
}

fn apply_rotations(stim: &Stimulus, grid: &PatchGrid, rotations: &[(usize, QuarterTurns)]) -> (RgbImage, Vec<Mask>) {
    let mut image = stim.image.clone();
    let mut masks = stim.object_masks.clone();
    for &(p, q) in rotations {
        let (x0, y0, s) = grid.rect(p);
        rotate_block(&mut image, x0, y0, s, q);
        for m in &mut masks {
            rotate_mask_block(m, x0, y0, s, q);
        }
    }
    (image, masks)
}

/// Rotates every object-containing patch independently by 90°, 180° or 270°.
pub fn scramble_orientation(stim: &Stimulus, grid: &PatchGrid, seed: u64) -> Result<Stimulus> {
    check_grid(stim, grid)?;
    let mut rng = seed::rng(seed);
    let rotations: Vec<(usize, QuarterTurns)> = grid
        .object_union()
        .into_iter()
        .map(|p| (p, rng.random_range(1..=3u8)))
        .collect();
    let (image, masks) = apply_rotations(stim, grid, &rotations);
    Ok(Stimulus {
        id: format!("{}-orient", stim.id),
        image,
        object_masks: masks,
        scramble: Some(ScrambleRecord::Orientation {
            patch_size: grid.patch_size,
            rotations,
        }),
        ..stim.clone()
    })
}

fn apply_location(stim: &Stimulus, grid: &PatchGrid, positions: &[usize], sources: &[usize]) -> (RgbImage, Vec<Mask>) {
    let mut image = stim.image.clone();
    let mut masks = stim.object_masks.clone();
    for (&dst, &src) in positions.iter().zip(sources) {
        let (dx, dy, s) = grid.rect(dst);
        let (sx, sy, _) = grid.rect(src);
        for y in 0..s {
            for x in 0..s {
                image.put_pixel(dx + x, dy + y, *stim.image.get_pixel(sx + x, sy + y));
                for (m, orig) in masks.iter_mut().zip(&stim.object_masks) {
                    m.set(dx + x, dy + y, orig.get(sx + x, sy + y));
                }
            }
        }
    }
    (image, masks)
}

/// Shuffles object-containing patches among the positions they occupy.
pub fn scramble_location(stim: &Stimulus, grid: &PatchGrid, seed: u64) -> Result<Stimulus> {
    check_grid(stim, grid)?;
    let mut rng = seed::rng(seed);
    let positions = grid.object_union();
    let mut sources = positions.clone();
    sources.shuffle(&mut rng);
    let (image, masks) = apply_location(stim, grid, &positions, &sources);
    Ok(Stimulus {
        id: format!("{}-loc", stim.id),
        image,
        object_masks: masks,
        scramble: Some(ScrambleRecord::Location {
            patch_size: grid.patch_size,
            positions,
            sources,
        }),
        ..stim.clone()
    })
}

/// Inverts a recorded scramble.
pub fn unscramble(stim: &Stimulus) -> Result<Stimulus> {
    let record = stim
        .scramble
        .as_ref()
        .ok_or_else(|| Error::InvalidParam("stimulus carries no scramble record".into()))?;
    let patch_size = match record {
        ScrambleRecord::Orientation { patch_size, .. } | ScrambleRecord::Location { patch_size, .. } => *patch_size,
    };
    let grid = PatchGrid::from_masks(&[], stim.width(), stim.height(), patch_size)?;
    let (image, masks) = match record {
        ScrambleRecord::Orientation { rotations, .. } => {
            let inverse: Vec<(usize, QuarterTurns)> = rotations.iter().map(|&(p, q)| (p, (4 - q % 4) % 4)).collect();
            apply_rotations(stim, &grid, &inverse)
        }
        ScrambleRecord::Location { positions, sources, .. } => apply_location(stim, &grid, sources, positions),
    };
    Ok(Stimulus {
        image,
        object_masks: masks,
        scramble: None,
        ..stim.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stimulus::{gen_binding_pair, gen_blob, BindingParams, BlobParams};
    use image::Rgb;

    fn patch_pixels(img: &RgbImage, grid: &PatchGrid, p: usize) -> Vec<[u8; 3]> {
        let (x0, y0, s) = grid.rect(p);
        let mut v: Vec<[u8; 3]> = (0..s)
            .flat_map(|y| (0..s).map(move |x| (x, y)))
            .map(|(x, y)| img.get_pixel(x0 + x, y0 + y).0)
            .collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn rotation_of_block_is_clockwise() {
        let mut img = RgbImage::new(2, 2);
        img.put_pixel(0, 0, Rgb([1, 0, 0]));
        rotate_block(&mut img, 0, 0, 2, 1);
        assert_eq!(img.get_pixel(1, 0).0, [1, 0, 0]);
        rotate_block(&mut img, 0, 0, 2, 3);
        assert_eq!(img.get_pixel(0, 0).0, [1, 0, 0]);
    }

    #[test]
    fn orientation_preserves_patch_multisets_and_inverts() {
        let stim = gen_binding_pair(3, &BindingParams::blob()).unwrap();
        let grid = PatchGrid::new(&stim, 16).unwrap();
        let s = scramble_orientation(&stim, &grid, 11).unwrap();
        let union = grid.object_union();
        for p in 0..grid.n_patches() {
            if union.contains(&p) {
                assert_eq!(patch_pixels(&s.image, &grid, p), patch_pixels(&stim.image, &grid, p));
            } else {
                let (x0, y0, sz) = grid.rect(p);
                for y in 0..sz {
                    for x in 0..sz {
                        assert_eq!(s.image.get_pixel(x0 + x, y0 + y), stim.image.get_pixel(x0 + x, y0 + y));
                    }
                }
            }
        }
        let ScrambleRecord::Orientation { rotations, .. } = s.scramble.as_ref().unwrap() else { panic!() };
        assert!(rotations.iter().all(|(_, q)| (1..=3).contains(q)));
        assert_eq!(unscramble(&s).unwrap().image, stim.image);
        assert_eq!(unscramble(&s).unwrap().object_masks, stim.object_masks);
    }

    #[test]
    fn constant_patch_is_rotation_invariant() {
        let stim = gen_blob(4, &BlobParams { size: 90.0, ..BlobParams::default() }).unwrap();
        let grid = PatchGrid::new(&stim, 16).unwrap();
        let s = scramble_orientation(&stim, &grid, 2).unwrap();
        let interior: Vec<usize> = grid.object_patches[0]
            .iter()
            .copied()
            .filter(|p| !grid.perimeter_patches[0].contains(p))
            .collect();
        assert!(!interior.is_empty());
        for p in interior {
            let (x0, y0, sz) = grid.rect(p);
            for y in 0..sz {
                for x in 0..sz {
                    assert_eq!(s.image.get_pixel(x0 + x, y0 + y), stim.image.get_pixel(x0 + x, y0 + y));
                }
            }
        }
    }

    #[test]
    fn location_preserves_content_multiset_and_positions() {
        let stim = gen_binding_pair(5, &BindingParams::curve()).unwrap();
        let grid = PatchGrid::new(&stim, 16).unwrap();
        let s = scramble_location(&stim, &grid, 8).unwrap();
        let union = grid.object_union();
        let mut before: Vec<Vec<[u8; 3]>> = union.iter().map(|&p| patch_pixels(&stim.image, &grid, p)).collect();
        let mut after: Vec<Vec<[u8; 3]>> = union.iter().map(|&p| patch_pixels(&s.image, &grid, p)).collect();
        before.sort();
        after.sort();
        assert_eq!(before, after);
        let regrid = PatchGrid::new(&s, 16).unwrap();
        assert_eq!(regrid.object_union(), union);
        assert_eq!(unscramble(&s).unwrap().image, stim.image);
    }

    #[test]
    fn identity_and_singleton_permutations_leave_image_unchanged() {
        let stim = gen_blob(6, &BlobParams::default()).unwrap();
        let grid = PatchGrid::new(&stim, 16).unwrap();
        let positions = grid.object_union();
        let (img, masks) = apply_location(&stim, &grid, &positions, &positions);
        assert_eq!(img, stim.image);
        assert_eq!(masks, stim.object_masks);

        // An object inside a single patch can only map to itself.
        let tiny = Mask::from_fn(224, 224, |x, y| (40..44).contains(&x) && (40..44).contains(&y));
        let mut one = stim.clone();
        one.object_masks = vec![tiny];
        let g1 = PatchGrid::new(&one, 16).unwrap();
        let s = scramble_location(&one, &g1, 1).unwrap();
        assert_eq!(s.image, one.image);
    }
}
